//! Hidden ground-truth camera used to generate paired training data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imagecore::{Image, MosaicPattern, RawImage, RgbImage, DEFAULT_BIT_DEPTH};
use crate::stages::{
    apply_ccm, apply_gains, apply_lens_shading, correct_lens_shading, demosaic_bilinear, gamma_forward,
    gamma_reverse, invert_ccm, mosaic, render_gaussian_mask, safe_invert_gains, Ccm, GammaParam,
    GaussianMaskParams, WbGains, DEFAULT_HIGHLIGHT_THRESHOLD,
};

/// Paired sRGB observation and RAW ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub rgb: RgbImage,
    pub raw: RawImage,
}

impl ImagePair {
    /// Same even-aligned window of both images.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImagePair> {
        let rgb = self.rgb.crop(y0, x0, h, w)?;
        let raw = self.raw.with_plane(self.raw.plane.crop(y0, x0, h, w)?)?;
        Ok(ImagePair { rgb, raw })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToneCurve {
    Identity,
    /// `3x² − 2x³`
    Smoothstep,
}

impl ToneCurve {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ToneCurve::Identity => x,
            ToneCurve::Smoothstep => {
                let x = x.clamp(0.0, 1.0);
                x * x * (3.0 - 2.0 * x)
            }
        }
    }

    pub fn invert(self, y: f64) -> f64 {
        match self {
            ToneCurve::Identity => y,
            ToneCurve::Smoothstep => {
                let y = y.clamp(0.0, 1.0);
                0.5 - ((1.0 - 2.0 * y).asin() / 3.0).sin()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCamera {
    pub ccm: Ccm,
    pub gains: WbGains,
    pub gamma: GammaParam,
    pub mask: GaussianMaskParams,
    pub tone: ToneCurve,
    pub pattern: MosaicPattern,
    pub black_level: u16,
    pub white_level: u16,
    pub seed: u64,
}

impl SyntheticCamera {
    /// Random camera with realistic parameters: a column-normalised CCM with
    /// dominant diagonal, gains in `[1, 2]`, γ in `[2.0, 2.4]`, an off-centre
    /// Gaussian fall-off with floor 0.5 and the smoothstep tone curve.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = [[0.0; 3]; 3];
        for j in 0..3 {
            let diag = rng.random_range(0.65..0.85);
            let split = rng.random_range(0.3..0.7);
            let rest = 1.0 - diag;
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            m[j][j] = diag;
            m[a][j] = rest * split;
            m[b][j] = rest * (1.0 - split);
        }
        let gains = WbGains::from_triplet([rng.random_range(1.0..1.3), rng.random_range(1.4..2.0), rng.random_range(1.2..1.8)]);
        let gamma = GammaParam::new(rng.random_range(2.0..2.4)).expect("valid gamma");
        let mask = GaussianMaskParams {
            mu: [rng.random_range(0.4..0.6), rng.random_range(0.4..0.6)],
            chol: [rng.random_range(0.45..0.6), rng.random_range(-0.05..0.05), rng.random_range(0.45..0.6)],
            floor: 0.5,
        };
        SyntheticCamera {
            ccm: Ccm::new(m),
            gains,
            gamma,
            mask,
            tone: ToneCurve::Smoothstep,
            pattern: MosaicPattern::RGGB,
            black_level: 512,
            white_level: 16383,
            seed,
        }
    }

    /// All-identity camera.
    pub fn identity() -> Self {
        SyntheticCamera {
            ccm: Ccm::IDENTITY,
            gains: WbGains::IDENTITY,
            gamma: GammaParam::new(1.0).expect("valid gamma"),
            mask: GaussianMaskParams { floor: 1.0, ..GaussianMaskParams::centered(0.5, 1.0) },
            tone: ToneCurve::Identity,
            pattern: MosaicPattern::RGGB,
            black_level: 512,
            white_level: 16383,
            seed: 0,
        }
    }

    /// Unquantised RAW from an sRGB-domain scene.
    pub fn reverse_chain(&self, base: &RgbImage) -> Result<RawImage> {
        let x = base.map(|v| self.tone.invert(v));
        let x = gamma_reverse(&x, &self.gamma)?;
        let x = invert_ccm(&x, &self.ccm)?;
        let x = safe_invert_gains(&x, &self.gains, DEFAULT_HIGHLIGHT_THRESHOLD)?;
        let mask = render_gaussian_mask(&self.mask, x.height, x.width)?;
        let x = apply_lens_shading(&x, &mask)?;
        let raw = mosaic(&x.clamp01(), self.pattern)?;
        RawImage::with_levels(raw.plane, self.pattern, self.black_level, self.white_level, DEFAULT_BIT_DEPTH)
    }

    /// Unquantised sRGB from a RAW mosaic.
    pub fn forward_chain(&self, raw: &RawImage) -> Result<RgbImage> {
        let x = demosaic_bilinear(raw)?.into_image();
        let mask = render_gaussian_mask(&self.mask, x.height, x.width)?;
        let x = correct_lens_shading(&x, &mask, 1.0)?;
        let x = apply_gains(&x, &self.gains)?;
        let x = apply_ccm(&x, &self.ccm)?;
        let x = gamma_forward(&x, &self.gamma)?;
        let x = x.map(|v| self.tone.apply(v));
        RgbImage::from_image(x.clamp01())
    }

    /// RAW quantised to the sensor bit depth and sRGB to 8 bits.
    pub fn render_pair(&self, base: &RgbImage) -> Result<ImagePair> {
        let raw = self.reverse_chain(base)?.quantized();
        let rgb = self.forward_chain(&raw)?;
        Ok(ImagePair { rgb: quantize8(&rgb)?, raw })
    }

    pub fn dataset(&self, count: usize, h: usize, w: usize, seed: u64) -> Result<Vec<ImagePair>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.render_pair(&synthetic_scene(h, w, &mut rng)?)).collect()
    }
}

pub fn quantize8(x: &RgbImage) -> Result<RgbImage> {
    RgbImage::from_image(x.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0))
}

/// Smooth scene: a few soft colour blobs over a gradient, with limited
/// saturation, spanning roughly `[0.05, 0.85]`.
pub fn synthetic_scene(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<RgbImage> {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.5));
    let grad: [f64; 2] = [rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)];
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..4)
        .map(|_| {
            let c = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let s = rng.random_range(0.1..0.3);
            let col = std::array::from_fn(|_| rng.random_range(-0.35..0.45));
            (c, s, col)
        })
        .collect();
    let sat = rng.random_range(0.3..0.6);
    let mut img = Image::filled(h, w, 3, 0.0);
    for y in 0..h {
        let py = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let px = (x as f64 + 0.5) / w as f64;
            let mut v = base;
            let g = grad[0] * (px - 0.5) + grad[1] * (py - 0.5);
            for (c, s, col) in &blobs {
                let d2 = (px - c[0]).powi(2) + (py - c[1]).powi(2);
                let k = (-0.5 * d2 / (s * s)).exp();
                for ch in 0..3 {
                    v[ch] += k * col[ch];
                }
            }
            let gray = (v[0] + v[1] + v[2]) / 3.0;
            for ch in 0..3 {
                let val = gray + sat * (v[ch] - gray) + g;
                img.set(y, x, ch, val.clamp(0.05, 0.85));
            }
        }
    }
    RgbImage::from_image(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::mse;

    #[test]
    fn smoothstep_inverse() {
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let y = ToneCurve::Smoothstep.apply(x);
            assert!((ToneCurve::Smoothstep.invert(y) - x).abs() < 1e-9, "{x}");
        }
    }

    #[test]
    fn camera_parameters_are_realistic() {
        for s in 0..20 {
            let c = SyntheticCamera::new(s);
            for j in 0..3 {
                let col: f64 = (0..3).map(|i| c.ccm.m[i][j]).sum();
                assert!((col - 1.0).abs() < 1e-12);
            }
            assert!(c.gains.triplet().iter().all(|g| (1.0..=2.0).contains(g)));
            c.mask.validate().unwrap();
        }
    }

    #[test]
    fn identity_camera_pair() {
        // bilinear-consistent base: demosaic of a mosaic
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = synthetic_scene(8, 8, &mut rng).unwrap();
        let base = demosaic_bilinear(&mosaic(&r, MosaicPattern::RGGB).unwrap()).unwrap();
        let cam = SyntheticCamera::identity();
        let pair = cam.render_pair(&base).unwrap();
        assert_eq!(pair.rgb, quantize8(&base).unwrap());
        let expect = mosaic(&base, MosaicPattern::RGGB).unwrap();
        let step = pair.raw.quantization_step();
        for (a, b) in pair.raw.plane.data.iter().zip(&expect.plane.data) {
            assert!((a - b).abs() <= 0.5 * step + 1e-12);
        }
    }

    #[test]
    fn eight_bit_quantisation_rmse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = RgbImage::from_fn(64, 64, |_, _, _| rng.random_range(0.0..1.0)).unwrap();
        let rmse = mse(&quantize8(&x).unwrap(), &x).unwrap().sqrt();
        let oracle = 1.0 / 255.0 / 12f64.sqrt();
        assert!((rmse - oracle).abs() / oracle < 0.05, "{rmse}");
    }

    #[test]
    fn deterministic() {
        let cam = SyntheticCamera::new(5);
        assert_eq!(cam.dataset(2, 8, 8, 3).unwrap(), cam.dataset(2, 8, 8, 3).unwrap());
    }
}
