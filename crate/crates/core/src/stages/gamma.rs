use crate::error::{Error, Result};
use crate::imagecore::Image;

/// Clamp floor below one 16-bit quantisation step.
pub const DEFAULT_GAMMA_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParam {
    pub gamma: f64,
    pub eps: f64,
}

impl GammaParam {
    pub fn new(gamma: f64) -> Result<Self> {
        let g = GammaParam { gamma, eps: DEFAULT_GAMMA_EPS };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParam(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.eps > 0.0 && self.eps < 1e-3) {
            return Err(Error::InvalidParam(format!("gamma eps {} outside (0, 1e-3)", self.eps)));
        }
        Ok(())
    }
}

impl Default for GammaParam {
    fn default() -> Self {
        GammaParam { gamma: 2.2, eps: DEFAULT_GAMMA_EPS }
    }
}

pub(crate) fn gamma_kernel(data: &[f64], exponent: f64, eps: f64) -> Vec<f64> {
    data.iter().map(|&v| v.max(eps).powf(exponent)).collect()
}

/// `max(x, ε)^(1/γ)`.
pub fn gamma_forward(x: &Image, g: &GammaParam) -> Result<Image> {
    g.validate()?;
    Ok(Image { data: gamma_kernel(&x.data, 1.0 / g.gamma, g.eps), ..x.clone_header() })
}

/// `max(x, ε)^γ`.
pub fn gamma_reverse(x: &Image, g: &GammaParam) -> Result<Image> {
    g.validate()?;
    Ok(Image { data: gamma_kernel(&x.data, g.gamma, g.eps), ..x.clone_header() })
}
