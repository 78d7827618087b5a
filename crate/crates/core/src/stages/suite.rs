//! Randomised forward/reverse round-trip checks for every stage pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;
use crate::imagecore::{Image, MosaicPattern, RgbImage};
use crate::nets::{tone_map, ToneMapNet, DEFAULT_TONE_WIDTHS};

/// Worst absolute round-trip error observed for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrip {
    pub stage: StageKind,
    pub max_err: f64,
}

fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_ccm(rng: &mut ChaCha8Rng) -> Ccm {
    let mut m = [[0.0; 3]; 3];
    for j in 0..3 {
        for (i, row) in m.iter_mut().enumerate() {
            row[j] = if i == j { rng.random_range(0.5..0.9) } else { rng.random_range(0.0..0.25) };
        }
        let s: f64 = (0..3).map(|i| m[i][j]).sum();
        (0..3).for_each(|i| m[i][j] /= s);
    }
    Ccm::new(m)
}

/// Runs each stage pair on `count` random `h × w` images with samples in
/// `[lo, hi]` and reports the worst error per stage.
///
/// Tone, gamma, CCM and gains are checked as forward ∘ reverse on sRGB-side
/// data; the lens stage as correct ∘ apply; mosaic as
/// mosaic ∘ demosaic ∘ mosaic against the mosaic.
pub fn round_trip_suite(count: usize, h: usize, w: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<RoundTrip>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 6];
    for _ in 0..count {
        let x = RgbImage::from_fn(h, w, |_, _, _| rng.random_range(lo..=hi))?;

        let net_rev = ToneMapNet::init_identity(&DEFAULT_TONE_WIDTHS, Direction::Reverse, &mut rng)?;
        let net_fwd = ToneMapNet::init_identity(&DEFAULT_TONE_WIDTHS, Direction::Forward, &mut rng)?;
        let back = tone_map(&tone_map(&x, &net_rev)?, &net_fwd)?;
        worst[0] = worst[0].max(max_abs_diff(&back, &x));

        let g = GammaParam::new(rng.random_range(1.8..2.6))?;
        let back = gamma_forward(&gamma_reverse(&x, &g)?, &g)?;
        worst[1] = worst[1].max(max_abs_diff(&back, &x));

        let c = random_ccm(&mut rng);
        let back = apply_ccm(&invert_ccm(&x, &c)?, &c)?;
        worst[2] = worst[2].max(max_abs_diff(&back, &x));

        let gains = WbGains::new(rng.random_range(1.0..1.5), rng.random_range(1.0..2.0), rng.random_range(1.0..2.0))?;
        let back = apply_gains(&safe_invert_gains(&x, &gains, DEFAULT_HIGHLIGHT_THRESHOLD)?, &gains)?;
        worst[3] = worst[3].max(max_abs_diff(&back, &x));

        let p = GaussianMaskParams {
            mu: [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)],
            chol: [rng.random_range(0.3..0.8), rng.random_range(-0.1..0.1), rng.random_range(0.3..0.8)],
            floor: rng.random_range(0.3..0.8),
        };
        let mask = render_gaussian_mask(&p, h, w)?;
        let back = correct_lens_shading(&apply_lens_shading(&x, &mask)?, &mask, 1.0)?;
        worst[4] = worst[4].max(max_abs_diff(&back, &x));

        let m = mosaic(&x, MosaicPattern::RGGB)?;
        let again = mosaic(&demosaic_bilinear(&m)?.into_image(), MosaicPattern::RGGB)?;
        worst[5] = worst[5].max(max_abs_diff(&again.plane, &m.plane));
    }
    Ok(StageKind::REVERSE_ORDER.iter().zip(worst).map(|(s, e)| RoundTrip { stage: *s, max_err: e }).collect())
}
