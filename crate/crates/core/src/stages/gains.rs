use crate::error::{Error, Result};
use crate::imagecore::Image;

/// Default highlight threshold of the safe gain inversion.
pub const DEFAULT_HIGHLIGHT_THRESHOLD: f64 = 0.9;

/// Digital gain plus red/blue white-balance gains (green fixed to 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WbGains {
    pub g_d: f64,
    pub g_r: f64,
    pub g_b: f64,
}

impl WbGains {
    pub const IDENTITY: WbGains = WbGains { g_d: 1.0, g_r: 1.0, g_b: 1.0 };

    pub fn new(g_d: f64, g_r: f64, g_b: f64) -> Result<Self> {
        let g = WbGains { g_d, g_r, g_b };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.g_d, self.g_r, self.g_b].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("gains must be positive: {self:?}")))
        }
    }

    /// Per-channel multiplier `(g_d·g_r, g_d, g_d·g_b)`.
    pub fn effective(&self) -> [f64; 3] {
        [self.g_d * self.g_r, self.g_d, self.g_d * self.g_b]
    }

    pub fn from_triplet(t: [f64; 3]) -> Self {
        WbGains { g_d: t[0], g_r: t[1], g_b: t[2] }
    }

    pub fn triplet(&self) -> [f64; 3] {
        [self.g_d, self.g_r, self.g_b]
    }
}

pub(crate) fn scale_channels(data: &[f64], channels: usize, g: &[f64]) -> Vec<f64> {
    data.chunks_exact(channels)
        .flat_map(|px| px.iter().zip(g).map(|(v, k)| v * k))
        .collect()
}

/// Forward white balance and digital gain.
pub fn apply_gains(x: &Image, g: &WbGains) -> Result<Image> {
    x.require_channels(3)?;
    g.validate()?;
    let data = scale_channels(&x.data, 3, &g.effective());
    Ok(Image { data, ..x.clone_header() })
}

/// Blend weight toward unit gain for a sample `x` above the threshold.
#[inline]
pub(crate) fn highlight_alpha(x: f64, t: f64) -> f64 {
    let r = ((x - t).max(0.0) / (1.0 - t)).min(1.0);
    r * r
}

/// Safe inverse for one sample given effective forward gain `gain`.
#[inline]
pub(crate) fn safe_invert_sample(x: f64, gain: f64, t: f64) -> f64 {
    let v = 1.0 / gain;
    let a = highlight_alpha(x, t);
    x * ((1.0 - a) * v + a * v.max(1.0))
}

pub(crate) fn safe_invert_kernel(data: &[f64], geff: &[f64], t: f64) -> Vec<f64> {
    data.chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| safe_invert_sample(px[c], geff[c], t)))
        .collect()
}

/// Highlight-preserving inverse of [`apply_gains`]: exact division below the
/// threshold `t`, blending toward unit gain as samples approach saturation.
pub fn safe_invert_gains(x: &Image, g: &WbGains, threshold: f64) -> Result<Image> {
    x.require_channels(3)?;
    g.validate()?;
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidParam(format!("highlight threshold {threshold} outside [0, 1)")));
    }
    let data = safe_invert_kernel(&x.data, &g.effective(), threshold);
    Ok(Image { data, ..x.clone_header() })
}
