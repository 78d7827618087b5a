use crate::error::{Error, Result};
use crate::imagecore::Image;

/// Per-pixel multiplicative lens-shading gains in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LensShadingMask {
    pub height: usize,
    pub width: usize,
    pub gains: Vec<f64>,
}

impl LensShadingMask {
    pub fn new(height: usize, width: usize, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != height * width {
            return Err(Error::Dimension(format!("mask of {} gains for {height}x{width}", gains.len())));
        }
        Ok(LensShadingMask { height, width, gains })
    }

    pub fn flat(height: usize, width: usize) -> Self {
        LensShadingMask { height, width, gains: vec![1.0; height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.gains[y * self.width + x]
    }

    fn check(&self, x: &Image) -> Result<()> {
        if self.height != x.height || self.width != x.width {
            return Err(Error::Dimension(format!(
                "mask {}x{} vs image {}x{}",
                self.height, self.width, x.height, x.width
            )));
        }
        Ok(())
    }
}

/// Gaussian fall-off in normalised coordinates: `mu = [x, y]`, `chol = [l11, l21, l22]`
/// with `Σ = L·Lᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMaskParams {
    pub mu: [f64; 2],
    pub chol: [f64; 3],
    pub floor: f64,
}

impl GaussianMaskParams {
    /// Centred isotropic mask with standard deviation `sigma`.
    pub fn centered(sigma: f64, floor: f64) -> Self {
        GaussianMaskParams { mu: [0.5, 0.5], chol: [sigma, 0.0, sigma], floor }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chol[0] > 0.0 && self.chol[2] > 0.0) {
            return Err(Error::InvalidParam(format!("Cholesky diagonal must be positive: {:?}", self.chol)));
        }
        if !(self.floor > 0.0 && self.floor <= 1.0) {
            return Err(Error::InvalidParam(format!("mask floor {} outside (0, 1]", self.floor)));
        }
        if !self.mu.iter().chain(&self.chol).all(|v| v.is_finite()) {
            return Err(Error::InvalidParam("non-finite Gaussian mask parameters".into()));
        }
        Ok(())
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let [a, b, c] = self.chol;
        [[a * a, a * b], [a * b, b * b + c * c]]
    }
}

/// Unnormalised Gaussian `exp(-q/2)` over the pixel-centre grid, plus the index
/// of its first maximum.
pub(crate) fn gaussian_field(p: &GaussianMaskParams, h: usize, w: usize) -> (Vec<f64>, usize) {
    let [l11, l21, l22] = p.chol;
    let mut g = Vec::with_capacity(h * w);
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for y in 0..h {
        let py = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let px = (x as f64 + 0.5) / w as f64;
            let z1 = (px - p.mu[0]) / l11;
            let z2 = (py - p.mu[1] - l21 * z1) / l22;
            let v = (-0.5 * (z1 * z1 + z2 * z2)).exp();
            if v > best_v {
                best_v = v;
                best = g.len();
            }
            g.push(v);
        }
    }
    (g, best)
}

/// Renders the Gaussian mask, rescaled so its grid maximum is 1 and its minimum
/// stays at or above `floor`.
pub fn render_gaussian_mask(p: &GaussianMaskParams, h: usize, w: usize) -> Result<LensShadingMask> {
    p.validate()?;
    let (g, best) = gaussian_field(p, h, w);
    let peak = g[best];
    if !(peak > 0.0) {
        return Err(Error::InvalidParam("Gaussian mask underflows on this grid".into()));
    }
    let gains = g.iter().map(|v| p.floor + (1.0 - p.floor) * (v / peak)).collect();
    Ok(LensShadingMask { height: h, width: w, gains })
}

pub(crate) fn mask_mul(data: &[f64], channels: usize, mask: &[f64]) -> Vec<f64> {
    data.chunks_exact(channels)
        .zip(mask)
        .flat_map(|(px, m)| px.iter().map(move |v| v * m))
        .collect()
}

pub(crate) fn mask_div(data: &[f64], channels: usize, mask: &[f64], clamp_max: f64) -> Vec<f64> {
    data.chunks_exact(channels)
        .zip(mask)
        .flat_map(|(px, m)| px.iter().map(move |v| (v / m).clamp(0.0, clamp_max)))
        .collect()
}

/// Recreate the lens-shading fall-off (`x ⊙ M`), broadcasting over channels.
pub fn apply_lens_shading(x: &Image, mask: &LensShadingMask) -> Result<Image> {
    mask.check(x)?;
    Ok(Image { data: mask_mul(&x.data, x.channels, &mask.gains), ..x.clone_header() })
}

/// Divide by the mask and clamp to `[0, clamp_max]`.
pub fn correct_lens_shading(x: &Image, mask: &LensShadingMask, clamp_max: f64) -> Result<Image> {
    mask.check(x)?;
    if let Some(g) = mask.gains.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::InvalidParam(format!("lens-shading gain {g} is not positive")));
    }
    Ok(Image { data: mask_div(&x.data, x.channels, &mask.gains, clamp_max), ..x.clone_header() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_mask_is_identity() {
        let img = Image::from_fn(2, 4, 3, |y, x, c| 0.1 * (y + x) as f64 + 0.01 * c as f64);
        let m = LensShadingMask::flat(2, 4);
        assert_eq!(apply_lens_shading(&img, &m).unwrap(), img);
        assert_eq!(correct_lens_shading(&img, &m, 1.0).unwrap(), img);
    }

    #[test]
    fn half_gain() {
        let img = Image::filled(2, 2, 1, 0.8);
        let m = LensShadingMask::new(2, 2, vec![0.5; 4]).unwrap();
        assert!(apply_lens_shading(&img, &m).unwrap().data.iter().all(|&v| (v - 0.4).abs() < 1e-15));
        let dark = Image::filled(2, 2, 1, 0.4);
        assert!(correct_lens_shading(&dark, &m, 1.0).unwrap().data.iter().all(|&v| (v - 0.8).abs() < 1e-15));
    }

    #[test]
    fn shading_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Image::from_fn(4, 4, 3, |_, _, _| rng.random_range(0.02..0.85));
        let m = render_gaussian_mask(&GaussianMaskParams::centered(0.3, 0.4), 4, 4).unwrap();
        let back = correct_lens_shading(&apply_lens_shading(&img, &m).unwrap(), &m, 1.0).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn correction_clamps() {
        let img = Image::filled(2, 2, 1, 0.9);
        let m = LensShadingMask::new(2, 2, vec![0.5; 4]).unwrap();
        assert!(correct_lens_shading(&img, &m, 1.0).unwrap().data.iter().all(|&v| v == 1.0));
        let bad = LensShadingMask::new(2, 2, vec![0.5, 0.0, 1.0, 1.0]).unwrap();
        assert!(correct_lens_shading(&img, &bad, 1.0).is_err());
        let wrong = LensShadingMask::flat(4, 2);
        assert!(apply_lens_shading(&img, &wrong).is_err());
    }

    #[test]
    fn peak_is_one_near_mu() {
        let p = GaussianMaskParams { mu: [0.32, 0.58], chol: [0.2, 0.0, 0.2], floor: 0.5 };
        let m = render_gaussian_mask(&p, 10, 10).unwrap();
        // pixel centres are (i + 0.5) / 10; nearest to (0.32, 0.58) is x = 3, y = 5
        let (y, x) = (5, 3);
        assert_eq!(m.get(y, x), 1.0);
        assert!(m.gains.iter().all(|&g| (0.5..=1.0).contains(&g)));
    }

    #[test]
    fn isotropic_centred_mask_is_symmetric() {
        let m = render_gaussian_mask(&GaussianMaskParams::centered(0.35, 0.3), 8, 12).unwrap();
        for y in 0..8 {
            for x in 0..12 {
                assert!((m.get(y, x) - m.get(7 - y, x)).abs() < 1e-6);
                assert!((m.get(y, x) - m.get(y, 11 - x)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matches_direct_quadratic_form() {
        let p = GaussianMaskParams { mu: [0.45, 0.55], chol: [0.4, 0.1, 0.3], floor: 0.35 };
        let (h, w) = (6, 10);
        let m = render_gaussian_mask(&p, h, w).unwrap();
        // Σ⁻¹ from the explicit 2x2 covariance.
        let s = p.covariance();
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
        let mut raw = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let d = [(x as f64 + 0.5) / w as f64 - p.mu[0], (y as f64 + 0.5) / h as f64 - p.mu[1]];
                let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
                raw[y * w + x] = (-0.5 * q).exp();
            }
        }
        let peak = raw.iter().cloned().fold(f64::MIN, f64::max);
        for (got, r) in m.gains.iter().zip(&raw) {
            assert!((got - (p.floor + (1.0 - p.floor) * r / peak)).abs() < 1e-12);
        }
    }
}
