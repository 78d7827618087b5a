use super::color::rgb_to_yuv;
use super::Image;
use crate::error::{Error, Result};

/// Value reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Mean squared error over all samples, accumulated in `f64`.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "psnr operands {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(mse_slices(&a.data, &b.data))
}

pub(crate) fn mse_slices(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

pub(crate) fn psnr_from_mse(mse: f64, cap_db: f64) -> f64 {
    if mse <= 0.0 {
        return cap_db;
    }
    (10.0 * (1.0 / mse).log10()).min(cap_db)
}

/// PSNR for unit peak signal, clamped to `cap_db`.
pub fn psnr(a: &Image, b: &Image, cap_db: f64) -> Result<f64> {
    if !(cap_db > 0.0) {
        return Err(Error::InvalidParam(format!("psnr cap must be positive, got {cap_db}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, cap_db))
}

/// PSNR of the luminance plane and of the stacked chrominance planes.
pub fn psnr_yuv(a: &Image, b: &Image, cap_db: f64) -> Result<(f64, f64)> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!("psnr_yuv operands {:?} vs {:?}", a.shape(), b.shape())));
    }
    let ya = rgb_to_yuv(a)?.0;
    let yb = rgb_to_yuv(b)?.0;
    let mut y_err = 0.0;
    let mut uv_err = 0.0;
    for (pa, pb) in ya.data.chunks_exact(3).zip(yb.data.chunks_exact(3)) {
        y_err += (pa[0] - pb[0]).powi(2);
        uv_err += (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2);
    }
    let n = a.pixels() as f64;
    Ok((psnr_from_mse(y_err / n, cap_db), psnr_from_mse(uv_err / (2.0 * n), cap_db)))
}
