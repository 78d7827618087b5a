use super::model::PipelineModel;
use crate::dict::WeightVector;
use crate::error::{Error, Result};
use crate::imagecore::{psnr, Image, MosaicPattern, RawImage, RgbImage, DEFAULT_BIT_DEPTH, PSNR_CAP_DB};
use crate::nets::{image_tensor, tensor_image};
use crate::stages::StageKind;
use crate::tensor::Tensor;
use crate::train::tape::{Tape, Var};

/// Fixed decomposition weights replacing encoder outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightOverride {
    pub ccm: Option<WeightVector>,
    pub wb: Option<WeightVector>,
}

/// `(stage name, image)` pairs captured along a pass, starting with `"input"`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateTrace {
    pub entries: Vec<(String, Image)>,
}

/// Recorded pass: output node, stage taps and the weight nodes.
pub(crate) struct GraphPass {
    pub output: Var,
    pub taps: Vec<(String, Var)>,
    pub w_ccm: Option<Var>,
    pub w_wb: Option<Var>,
}

fn weights_const(tape: &mut Tape, w: &WeightVector) -> Var {
    tape.constant(Tensor { shape: vec![w.len()], data: w.w.clone() })
}

/// Gaussian × attention mask for the current image node.
fn lse_mask(tape: &mut Tape, m: &PipelineModel, x: Var) -> Var {
    let (h, w) = (tape.value(x).shape[0], tape.value(x).shape[1]);
    let mu = tape.param("lse.mu", &Tensor { shape: vec![2], data: m.gauss.mu.to_vec() });
    let chol = tape.param("lse.chol", &Tensor { shape: vec![3], data: m.gauss.chol.to_vec() });
    let g = tape.gaussian_mask(mu, chol, m.config.mask_floor, h, w);
    let a = m.attention.build(tape, "att", x);
    tape.mul(a, g)
}

fn gamma_var(tape: &mut Tape, m: &PipelineModel) -> Var {
    tape.param("gamma", &Tensor::scalar(m.gamma))
}

pub(crate) fn build_reverse(tape: &mut Tape, m: &PipelineModel, x: Var, ov: &WeightOverride) -> GraphPass {
    let cfg = &m.config;
    let n = cfg.n_atoms;
    let mut taps = vec![("input".to_string(), x)];
    let (mut w_ccm, mut w_wb) = (None, None);
    let mut cur = x;
    for s in cfg.active_reverse() {
        cur = match s {
            StageKind::ToneMap => m.tone_rev.build(tape, "tone.rev", cur),
            StageKind::Gamma => {
                let g = gamma_var(tape, m);
                tape.gamma(cur, g, cfg.gamma_eps, true)
            }
            StageKind::Ccm => {
                let atoms = tape.param("ccm_dict", &m.ccm_dict.tensor());
                let w = match &ov.ccm {
                    Some(w) => weights_const(tape, w),
                    None => {
                        let cands = (0..n)
                            .map(|i| {
                                let a = tape.select(atoms, i);
                                let p = tape.pinv3(a);
                                tape.pixel_matmul(cur, p)
                            })
                            .collect();
                        let stack = tape.concat_channels(cands);
                        m.enc_ccm_rev.build(tape, "enc.ccm.rev", stack)
                    }
                };
                w_ccm = Some(w);
                let c = tape.matvec(w, atoms);
                let p = tape.pinv3(c);
                tape.pixel_matmul(cur, p)
            }
            StageKind::Gains => {
                let t = cfg.highlight_threshold;
                let atoms = tape.param("wb_dict", &m.wb_dict.tensor());
                let w = match &ov.wb {
                    Some(w) => weights_const(tape, w),
                    None => {
                        let cands = (0..n)
                            .map(|i| {
                                let a = tape.select(atoms, i);
                                let g = tape.wb_effective(a);
                                tape.safe_invert(cur, g, t)
                            })
                            .collect();
                        let stack = tape.concat_channels(cands);
                        m.enc_wb_rev.build(tape, "enc.wb.rev", stack)
                    }
                };
                w_wb = Some(w);
                let c = tape.matvec(w, atoms);
                let g = tape.wb_effective(c);
                tape.safe_invert(cur, g, t)
            }
            StageKind::LensShading => {
                let mask = lse_mask(tape, m, cur);
                tape.mask_mul(cur, mask)
            }
            StageKind::Mosaic => tape.mosaic(cur, cfg.pattern),
        };
        taps.push((s.name().to_string(), cur));
    }
    GraphPass { output: cur, taps, w_ccm, w_wb }
}

/// `y` is `[h, w, 1]` (mosaic, demosaiced with `pattern`) or `[h, w, 3]`.
pub(crate) fn build_forward(tape: &mut Tape, m: &PipelineModel, y: Var, pattern: MosaicPattern, ov: &WeightOverride) -> GraphPass {
    let cfg = &m.config;
    let n = cfg.n_atoms;
    let mut taps = vec![("input".to_string(), y)];
    let (mut w_ccm, mut w_wb) = (None, None);
    let mut cur = y;
    for s in cfg.active_reverse().into_iter().rev() {
        cur = match s {
            StageKind::Mosaic => {
                if tape.value(cur).shape[2] == 1 {
                    tape.demosaic(cur, pattern)
                } else {
                    cur
                }
            }
            StageKind::LensShading => {
                let mask = lse_mask(tape, m, cur);
                tape.mask_div(cur, mask, cfg.lsc_clamp_max)
            }
            StageKind::Gains => {
                let atoms = tape.param("wb_dict", &m.wb_dict.tensor());
                let w = match &ov.wb {
                    Some(w) => weights_const(tape, w),
                    None => {
                        let cands = (0..n)
                            .map(|i| {
                                let a = tape.select(atoms, i);
                                let g = tape.wb_effective(a);
                                tape.channel_scale(cur, g)
                            })
                            .collect();
                        let stack = tape.concat_channels(cands);
                        m.enc_wb_fwd.build(tape, "enc.wb.fwd", stack)
                    }
                };
                w_wb = Some(w);
                let c = tape.matvec(w, atoms);
                let g = tape.wb_effective(c);
                tape.channel_scale(cur, g)
            }
            StageKind::Ccm => {
                let atoms = tape.param("ccm_dict", &m.ccm_dict.tensor());
                let w = match &ov.ccm {
                    Some(w) => weights_const(tape, w),
                    None => {
                        let cands = (0..n)
                            .map(|i| {
                                let a = tape.select(atoms, i);
                                tape.pixel_matmul(cur, a)
                            })
                            .collect();
                        let stack = tape.concat_channels(cands);
                        m.enc_ccm_fwd.build(tape, "enc.ccm.fwd", stack)
                    }
                };
                w_ccm = Some(w);
                let c = tape.matvec(w, atoms);
                tape.pixel_matmul(cur, c)
            }
            StageKind::Gamma => {
                let g = gamma_var(tape, m);
                tape.gamma(cur, g, cfg.gamma_eps, false)
            }
            StageKind::ToneMap => m.tone_fwd.build(tape, "tone.fwd", cur),
        };
        taps.push((s.name().to_string(), cur));
    }
    GraphPass { output: cur, taps, w_ccm, w_wb }
}

fn check_override(m: &PipelineModel, ov: &WeightOverride) -> Result<()> {
    for w in [&ov.ccm, &ov.wb].into_iter().flatten() {
        if w.len() != m.config.n_atoms {
            return Err(Error::Dimension(format!("{} override weights for {} atoms", w.len(), m.config.n_atoms)));
        }
        w.validate()?;
    }
    Ok(())
}

fn read_weights(tape: &Tape, v: Option<Var>) -> Option<WeightVector> {
    v.map(|v| WeightVector { w: tape.value(v).data.clone() })
}

fn collect_trace(tape: &Tape, taps: &[(String, Var)]) -> IntermediateTrace {
    IntermediateTrace { entries: taps.iter().map(|(n, v)| (n.clone(), tensor_image(tape.value(*v)))).collect() }
}

#[derive(Debug, Clone)]
pub struct ReverseOutput {
    pub raw: RawImage,
    pub trace: Option<IntermediateTrace>,
    pub w_ccm: Option<WeightVector>,
    pub w_wb: Option<WeightVector>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub rgb: RgbImage,
    pub trace: Option<IntermediateTrace>,
    pub w_ccm: Option<WeightVector>,
    pub w_wb: Option<WeightVector>,
}

/// sRGB → RAW. The output is clamped to `[0, 1]`; with mosaic disabled it is
/// a 3-channel RAW-RGB plane.
pub fn reverse_pass(x: &RgbImage, m: &PipelineModel, trace: bool) -> Result<ReverseOutput> {
    reverse_pass_with(x, m, &WeightOverride::default(), trace)
}

pub fn reverse_pass_with(x: &RgbImage, m: &PipelineModel, ov: &WeightOverride, trace: bool) -> Result<ReverseOutput> {
    m.config.validate()?;
    check_override(m, ov)?;
    let mut tape = Tape::inference();
    let xv = tape.constant(image_tensor(x));
    let g = build_reverse(&mut tape, m, xv, ov);
    let plane = tensor_image(tape.value(g.output)).clamp01();
    let raw = RawImage::with_levels(plane, m.config.pattern, m.config.black_level, m.config.white_level, DEFAULT_BIT_DEPTH)?;
    Ok(ReverseOutput {
        raw,
        trace: trace.then(|| collect_trace(&tape, &g.taps)),
        w_ccm: read_weights(&tape, g.w_ccm),
        w_wb: read_weights(&tape, g.w_wb),
    })
}

/// RAW → sRGB, clamped to `[0, 1]`.
pub fn forward_pass(y: &RawImage, m: &PipelineModel, trace: bool) -> Result<ForwardOutput> {
    forward_pass_with(y, m, &WeightOverride::default(), trace)
}

pub fn forward_pass_with(y: &RawImage, m: &PipelineModel, ov: &WeightOverride, trace: bool) -> Result<ForwardOutput> {
    m.config.validate()?;
    check_override(m, ov)?;
    if y.is_mosaic() && !m.config.is_enabled(StageKind::Mosaic) {
        return Err(Error::Dimension("mosaic stage disabled but input is a single-channel mosaic".into()));
    }
    crate::imagecore::require_even(y.height(), y.width())?;
    let mut tape = Tape::inference();
    let yv = tape.constant(image_tensor(&y.plane));
    let g = build_forward(&mut tape, m, yv, y.pattern, ov);
    let out = tensor_image(tape.value(g.output));
    if out.channels != 3 {
        return Err(Error::Dimension("forward pass did not produce RGB".into()));
    }
    Ok(ForwardOutput {
        rgb: RgbImage::from_image(out.clamp01())?,
        trace: trace.then(|| collect_trace(&tape, &g.taps)),
        w_ccm: read_weights(&tape, g.w_ccm),
        w_wb: read_weights(&tape, g.w_wb),
    })
}

/// sRGB → RAW → sRGB, with the PSNR of the round trip against `x`.
pub fn cycle(x: &RgbImage, m: &PipelineModel) -> Result<(RgbImage, f64)> {
    let raw = reverse_pass(x, m, false)?.raw;
    let back = forward_pass(&raw, m, false)?.rgb;
    let p = psnr(&back, x, PSNR_CAP_DB)?;
    Ok((back, p))
}
