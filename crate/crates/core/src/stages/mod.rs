//! The six canonical ISP stages as explicit forward/reverse pairs.
//!
//! Forward functions move toward sRGB, reverse functions toward RAW. Every
//! function is pure and operates on plain buffers; the differentiable graph in
//! [`crate::train::tape`] reuses the same kernels for its forward values.

mod ccm;
mod gains;
mod gamma;
mod lens;
pub mod linalg;
mod mosaic;
mod suite;

pub use ccm::{apply_ccm, invert_ccm, Ccm};
pub use gains::{apply_gains, safe_invert_gains, WbGains, DEFAULT_HIGHLIGHT_THRESHOLD};
pub use gamma::{gamma_forward, gamma_reverse, GammaParam, DEFAULT_GAMMA_EPS};
pub use lens::{
    apply_lens_shading, correct_lens_shading, render_gaussian_mask, GaussianMaskParams,
    LensShadingMask,
};
pub use mosaic::{demosaic_bilinear, mosaic};
pub use suite::{round_trip_suite, RoundTrip};

pub(crate) use ccm::pixel_matmul;
pub(crate) use gains::{safe_invert_kernel, scale_channels};
pub(crate) use gamma::gamma_kernel;
pub(crate) use lens::{gaussian_field, mask_div, mask_mul};
pub(crate) use mosaic::{demosaic_adjoint, demosaic_kernel, mosaic_kernel};

/// Identifies one stage in a pipeline layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StageKind {
    ToneMap,
    Gamma,
    Ccm,
    Gains,
    LensShading,
    Mosaic,
}

impl StageKind {
    /// Canonical reverse-pass order, sRGB side first.
    pub const REVERSE_ORDER: [StageKind; 6] = [
        StageKind::ToneMap,
        StageKind::Gamma,
        StageKind::Ccm,
        StageKind::Gains,
        StageKind::LensShading,
        StageKind::Mosaic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageKind::ToneMap => "tone",
            StageKind::Gamma => "gamma",
            StageKind::Ccm => "ccm",
            StageKind::Gains => "gains",
            StageKind::LensShading => "lse",
            StageKind::Mosaic => "mosaic",
        }
    }

    pub fn from_name(name: &str) -> Option<StageKind> {
        StageKind::REVERSE_ORDER.into_iter().find(|s| s.name() == name.trim())
    }
}

/// Pass direction: forward maps RAW toward sRGB, reverse maps sRGB toward RAW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        }
    }
}
