use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::pipeline::PipelineModel;
use crate::tensor::Tensor;
use crate::train::tape::Gradients;

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(lr: f64) -> Self {
        OptimState { m: BTreeMap::new(), v: BTreeMap::new(), step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Default for OptimState {
    fn default() -> Self {
        OptimState::new(1e-3)
    }
}

/// One bias-corrected Adam update of `params`. Parameters without a gradient
/// entry are left alone. Every gradient is checked for non-finite values
/// before anything is modified.
pub fn adam_step(params: &mut BTreeMap<String, Tensor>, grads: &Gradients, state: &mut OptimState) -> Result<()> {
    for (name, g) in &grads.by_name {
        let p = params
            .get(name)
            .ok_or_else(|| Error::InvalidParam(format!("gradient for unknown parameter {name}")))?;
        if p.shape != g.shape {
            return Err(Error::Dimension(format!("gradient {name}: shape {:?} vs {:?}", g.shape, p.shape)));
        }
        if let Some(i) = g.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                name: name.clone(),
                step: state.step,
                detail: format!("element {i} = {}", g.data[i]),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in &grads.by_name {
        let p = params.get_mut(name).expect("checked above");
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(&g.shape));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(&g.shape));
        for i in 0..g.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            let mh = m.data[i] / c1;
            let vh = v.data[i] / c2;
            p.data[i] -= state.lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Adam on the model parameters followed by the constraint projections.
pub fn optimizer_step(model: &mut PipelineModel, grads: &Gradients, state: &mut OptimState) -> Result<()> {
    let mut p = model.to_params();
    adam_step(&mut p, grads, state)?;
    let mut next = model.clone();
    next.set_params(&p)?;
    next.project()?;
    next.step += 1;
    *model = next;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(pairs: &[(&str, Tensor)]) -> Gradients {
        Gradients { by_name: pairs.iter().map(|(k, t)| (k.to_string(), t.clone())).collect() }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = BTreeMap::from([("a".to_string(), Tensor::full(&[3], 0.7))]);
        let before = p.clone();
        let mut s = OptimState::default();
        adam_step(&mut p, &grads(&[("a", Tensor::zeros(&[3]))]), &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn single_step_closed_form() {
        let mut p = BTreeMap::from([("a".to_string(), Tensor::scalar(2.0))]);
        let mut s = OptimState::new(0.1);
        adam_step(&mut p, &grads(&[("a", Tensor::scalar(1.0))]), &mut s).unwrap();
        // m̂ = 1, v̂ = 1
        let expect = 2.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p["a"].data[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_aborts_without_mutation() {
        let mut p = BTreeMap::from([("a".to_string(), Tensor::scalar(1.0)), ("b".to_string(), Tensor::scalar(1.0))]);
        let before = p.clone();
        let mut s = OptimState::default();
        let g = grads(&[("a", Tensor::scalar(0.5)), ("b", Tensor::scalar(f64::NAN))]);
        let e = adam_step(&mut p, &g, &mut s).unwrap_err();
        assert!(matches!(e, Error::NonFiniteGradient { ref name, .. } if name == "b"));
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }
}
