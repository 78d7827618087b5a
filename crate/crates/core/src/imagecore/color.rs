use std::sync::OnceLock;

use super::Image;
use crate::error::Result;
use crate::stages::linalg::inverse3;

/// BT.601 full-range RGB -> YUV, applied to column vectors `[R, G, B]`.
pub const RGB_TO_YUV: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168_736, -0.331_264, 0.5],
    [0.5, -0.418_688, -0.081_312],
];

pub fn yuv_from_rgb_matrix() -> [[f64; 3]; 3] {
    RGB_TO_YUV
}

fn yuv_to_rgb_matrix() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| inverse3(&RGB_TO_YUV).expect("BT.601 matrix is invertible"))
}

/// Three planes `Y, U, V` stored interleaved like an RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct YuvImage(pub Image);

fn transform(image: &Image, m: &[[f64; 3]; 3]) -> Image {
    let mut data = Vec::with_capacity(image.data.len());
    for px in image.data.chunks_exact(3) {
        for row in m {
            data.push(row[0] * px[0] + row[1] * px[1] + row[2] * px[2]);
        }
    }
    Image { height: image.height, width: image.width, channels: 3, data }
}

pub fn rgb_to_yuv(image: &Image) -> Result<YuvImage> {
    image.require_channels(3)?;
    Ok(YuvImage(transform(image, &RGB_TO_YUV)))
}

pub fn yuv_to_rgb(yuv: &YuvImage) -> Result<Image> {
    yuv.0.require_channels(3)?;
    Ok(transform(&yuv.0, yuv_to_rgb_matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_times_inverse_is_identity() {
        let inv = yuv_to_rgb_matrix();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| RGB_TO_YUV[i][k] * inv[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-12, "({i},{j}) = {v}");
            }
        }
    }

    #[test]
    fn round_trip_within_tolerance() {
        let img = Image::from_fn(4, 6, 3, |y, x, c| ((y * 7 + x * 3 + c * 5) % 11) as f64 / 10.0);
        let back = yuv_to_rgb(&rgb_to_yuv(&img).unwrap()).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gray_has_zero_chroma() {
        let img = Image::filled(2, 2, 3, 0.4);
        let yuv = rgb_to_yuv(&img).unwrap();
        for px in yuv.0.data.chunks_exact(3) {
            assert!((px[0] - 0.4).abs() < 1e-12);
            assert!(px[1].abs() < 1e-12 && px[2].abs() < 1e-12);
        }
    }
}
