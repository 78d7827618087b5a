//! Central finite-difference verification of tape gradients.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::nets::image_tensor;
use crate::pipeline::{build_forward, build_reverse, ImagePair, PipelineModel, WeightOverride};
use crate::tensor::Tensor;
use crate::train::loss::{build_loss, LossWeights};
use crate::train::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Lower bound of the relative-error denominator, so that entries whose
    /// true gradient is essentially zero are judged on absolute error.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per parameter group.
    pub max_per_group: Option<usize>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { h: 1e-3, tol: 1e-4, floor: 1e-6, max_per_group: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    /// Entries whose ±h evaluations crossed a kink or clamp boundary.
    pub excluded: Vec<usize>,
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    /// Parameters that received no gradient from the loss.
    pub detached: Vec<String>,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_err < self.tol)
    }

    pub fn excluded_count(&self) -> usize {
        self.groups.iter().map(|g| g.excluded.len()).sum()
    }
}

/// Relative error with the denominator floored at `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn sample_indices(n: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(k) if k < n => {
            let k = k.max(1);
            (0..k).map(|i| i * n / k).collect()
        }
        _ => (0..n).collect(),
    }
}

/// Checks the gradient of an arbitrary scalar graph. `loss_fn` must build the
/// graph from the given parameter values, registering each one with
/// [`Tape::param`] under its map key.
pub fn gradcheck_fn<F>(params: &BTreeMap<String, Tensor>, loss_fn: F, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &BTreeMap<String, Tensor>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    let grads = tape.backward(loss)?;
    let base_sig = tape.branch_signature();
    drop(tape);
    let eval = |p: &BTreeMap<String, Tensor>| -> Result<(f64, u64)> {
        let mut t = Tape::inference();
        let l = loss_fn(&mut t, p)?;
        Ok((t.scalar(l), t.branch_signature()))
    };
    let mut work = params.clone();
    let mut groups = Vec::new();
    let mut detached = Vec::new();
    for (name, value) in params {
        let analytic = match grads.get(name) {
            Some(g) => g.data.clone(),
            None => {
                detached.push(name.clone());
                vec![0.0; value.numel()]
            }
        };
        let mut rep = GroupReport {
            name: name.clone(),
            checked: 0,
            excluded: Vec::new(),
            max_rel_err: 0.0,
            worst_index: None,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for i in sample_indices(value.numel(), opts.max_per_group) {
            let orig = value.data[i];
            work.get_mut(name).expect("same keys").data[i] = orig + opts.h;
            let (lp, sp) = eval(&work)?;
            work.get_mut(name).expect("same keys").data[i] = orig - opts.h;
            let (lm, sm) = eval(&work)?;
            work.get_mut(name).expect("same keys").data[i] = orig;
            if sp != base_sig || sm != base_sig {
                rep.excluded.push(i);
                continue;
            }
            let numeric = (lp - lm) / (2.0 * opts.h);
            let err = relative_error(analytic[i], numeric, opts.floor);
            rep.checked += 1;
            if err > rep.max_rel_err || rep.worst_index.is_none() {
                rep.max_rel_err = err.max(rep.max_rel_err);
                rep.worst_index = Some(i);
                rep.worst_analytic = analytic[i];
                rep.worst_numeric = numeric;
            }
        }
        groups.push(rep);
    }
    Ok(GradcheckReport { groups, detached, tol: opts.tol })
}

/// Training-loss graph for one pair, with the model's tensors replaced by `p`.
pub(crate) fn pair_loss(
    tape: &mut Tape,
    model: &PipelineModel,
    pair: &ImagePair,
    lw: LossWeights,
) -> Var {
    let x = tape.constant(image_tensor(&pair.rgb));
    let y = tape.constant(image_tensor(&pair.raw.plane));
    let ov = WeightOverride::default();
    let rev = build_reverse(tape, model, x, &ov);
    let fwd = build_forward(tape, model, y, pair.raw.pattern, &ov);
    build_loss(tape, &rev, &fwd, y, lw).total
}

/// Gradient check of the full training loss of `model` on `pair`.
pub fn gradcheck(model: &PipelineModel, pair: &ImagePair, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let lw = LossWeights::default();
    gradcheck_fn(
        &model.to_params(),
        |tape, p| {
            let mut m = model.clone();
            m.set_params(p)?;
            Ok(pair_loss(tape, &m, pair, lw))
        },
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{IspConfig, SyntheticCamera};

    #[test]
    fn quadratic_is_exact() {
        let p = BTreeMap::from([("p".to_string(), Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap())]);
        let r = gradcheck_fn(
            &p,
            |t, p| {
                let v = t.param("p", &p["p"]);
                Ok(t.squared_norm(v))
            },
            &GradcheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_err() < 1e-9, "{r:?}");
        assert_eq!(r.groups[0].checked, 3);
    }

    #[test]
    fn relu_kink_is_excluded() {
        let p = BTreeMap::from([("b".to_string(), Tensor::new(vec![2], vec![0.0, 0.5]).unwrap())]);
        let r = gradcheck_fn(
            &p,
            |t, p| {
                let v = t.param("b", &p["b"]);
                let a = t.relu(v);
                Ok(t.sum(a))
            },
            &GradcheckOptions::default(),
        )
        .unwrap();
        assert_eq!(r.groups[0].excluded, vec![0]);
        assert!(r.passed());
    }

    #[test]
    fn full_model_sampled() {
        let cam = SyntheticCamera::new(3);
        let pair = cam.dataset(1, 8, 8, 4).unwrap().remove(0);
        let mut cfg = IspConfig::default();
        cfg.n_atoms = 3;
        cfg.encoder_widths = vec![4];
        cfg.tone_widths = vec![3, 4, 3];
        cfg.attention_hidden = 2;
        let mut m = PipelineModel::init(cfg, 1).unwrap();
        m.perturb(2, 0.5);
        let opts = GradcheckOptions { max_per_group: Some(3), ..Default::default() };
        let r = gradcheck(&m, &pair, &opts).unwrap();
        assert!(r.detached.is_empty(), "{:?}", r.detached);
        assert!(r.passed(), "{r:#?}");
    }
}
