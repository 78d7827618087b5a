use crate::dict::WeightVector;
use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::nets::image_tensor;
use crate::pipeline::GraphPass;
use crate::tensor::Tensor;
use crate::train::tape::{Tape, Var};

/// Mixing coefficients of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Applied to every intermediate term.
    pub intermediate: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { intermediate: 0.1, consistency: 0.01 }
    }
}

/// Decomposed loss value.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub raw_l2: f64,
    pub intermediate_l2: Vec<f64>,
    pub weight_consistency: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossReport {
    /// `raw + λ·Σ intermediate + λ_w·consistency` recomputed from the parts.
    pub fn recomputed_total(&self) -> f64 {
        self.raw_l2
            + self.weights.intermediate * self.intermediate_l2.iter().sum::<f64>()
            + self.weights.consistency * self.weight_consistency
    }
}

pub(crate) struct LossGraph {
    pub total: Var,
    pub raw: Var,
    pub intermediate: Vec<Var>,
    pub consistency: Option<Var>,
}

impl LossGraph {
    pub fn report(&self, tape: &Tape, weights: LossWeights) -> LossReport {
        LossReport {
            raw_l2: tape.scalar(self.raw),
            intermediate_l2: self.intermediate.iter().map(|v| tape.scalar(*v)).collect(),
            weight_consistency: self.consistency.map_or(0.0, |v| tape.scalar(v)),
            total: tape.scalar(self.total),
            weights,
        }
    }
}

fn assemble(
    tape: &mut Tape,
    raw: (Var, Var),
    pairs: &[(Var, Var)],
    wpairs: &[(Var, Var)],
    lw: LossWeights,
) -> LossGraph {
    let raw = tape.mse(raw.0, raw.1);
    let intermediate: Vec<Var> = pairs.iter().map(|(a, b)| tape.mse(*a, *b)).collect();
    let consistency = (!wpairs.is_empty()).then(|| {
        let terms: Vec<(Var, f64)> = wpairs
            .iter()
            .map(|(f, r)| {
                let d = tape.sub(*f, *r);
                (tape.squared_norm(d), 1.0)
            })
            .collect();
        tape.weighted_sum(terms)
    });
    let mut terms = vec![(raw, 1.0)];
    terms.extend(intermediate.iter().map(|v| (*v, lw.intermediate)));
    if let Some(c) = consistency {
        terms.push((c, lw.consistency));
    }
    let total = tape.weighted_sum(terms);
    LossGraph { total, raw, intermediate, consistency }
}

/// Pairs reverse-pass boundaries with the matching forward-pass boundaries
/// of the ground-truth RAW: the sRGB input against the forward output, and
/// so on inward. The RAW-side boundary forms the raw term against `y`.
pub(crate) fn build_loss(tape: &mut Tape, rev: &GraphPass, fwd: &GraphPass, y: Var, lw: LossWeights) -> LossGraph {
    let l = rev.taps.len() - 1;
    debug_assert_eq!(fwd.taps.len(), rev.taps.len());
    let pairs: Vec<(Var, Var)> = (0..l).map(|i| (rev.taps[i].1, fwd.taps[l - i].1)).collect();
    let mut wpairs = Vec::new();
    if let (Some(f), Some(r)) = (fwd.w_ccm, rev.w_ccm) {
        wpairs.push((f, r));
    }
    if let (Some(f), Some(r)) = (fwd.w_wb, rev.w_wb) {
        wpairs.push((f, r));
    }
    assemble(tape, (rev.output, y), &pairs, &wpairs, lw)
}

/// Loss from already computed images. `pred_inter[i]` is compared with
/// `reference[i]`, and `w_fwd[k]` with `w_rev[k]`.
pub fn compute_loss(
    pred_raw: &Image,
    pred_inter: &[Image],
    target_raw: &Image,
    reference: &[Image],
    w_fwd: &[WeightVector],
    w_rev: &[WeightVector],
    lw: LossWeights,
) -> Result<LossReport> {
    let shape_err = |what: &str| Error::Dimension(format!("loss operands differ in shape: {what}"));
    if !pred_raw.same_shape(target_raw) {
        return Err(shape_err("raw"));
    }
    if pred_inter.len() != reference.len() || w_fwd.len() != w_rev.len() {
        return Err(shape_err("term counts"));
    }
    if let Some(i) = (0..pred_inter.len()).find(|&i| !pred_inter[i].same_shape(&reference[i])) {
        return Err(shape_err(&format!("intermediate {i}")));
    }
    if let Some(k) = (0..w_fwd.len()).find(|&k| w_fwd[k].len() != w_rev[k].len()) {
        return Err(shape_err(&format!("weights {k}")));
    }
    let mut tape = Tape::inference();
    let raw = (tape.constant(image_tensor(pred_raw)), tape.constant(image_tensor(target_raw)));
    let pairs: Vec<(Var, Var)> = pred_inter
        .iter()
        .zip(reference)
        .map(|(a, b)| (tape.constant(image_tensor(a)), tape.constant(image_tensor(b))))
        .collect();
    let wv = |w: &WeightVector| Tensor { shape: vec![w.len()], data: w.w.clone() };
    let wpairs: Vec<(Var, Var)> = w_fwd.iter().zip(w_rev).map(|(f, r)| (tape.constant(wv(f)), tape.constant(wv(r)))).collect();
    let g = assemble(&mut tape, raw, &pairs, &wpairs, lw);
    Ok(g.report(&tape, lw))
}
