use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::IspConfig;
use crate::dict::{project_ccm_dictionary, CcmDictionary, WbDictionary, WB_MIN_GAIN};
use crate::error::{Error, Result};
use crate::nets::{AttentionMaskNet, Dense, DictEncoder, ParamSet, ToneMapNet};
use crate::stages::{Ccm, Direction, GaussianMaskParams, WbGains};
use crate::tensor::Tensor;

/// Bias of the attention output layer at initialisation (sigmoid ≈ 0.98).
pub const ATTENTION_INIT_BIAS: f64 = 4.0;
/// Initial Gaussian mask standard deviation in normalised coordinates.
pub const GAUSS_INIT_SIGMA: f64 = 1.0;
pub const GAMMA_MIN: f64 = 0.1;
pub const CHOL_MIN: f64 = 1e-3;

/// Every learnable component of the invertible pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub config: IspConfig,
    pub ccm_dict: CcmDictionary,
    pub wb_dict: WbDictionary,
    pub enc_ccm_fwd: DictEncoder,
    pub enc_ccm_rev: DictEncoder,
    pub enc_wb_fwd: DictEncoder,
    pub enc_wb_rev: DictEncoder,
    pub tone_fwd: ToneMapNet,
    pub tone_rev: ToneMapNet,
    pub attention: AttentionMaskNet,
    pub gauss: GaussianMaskParams,
    pub gamma: f64,
    pub seed: u64,
    pub step: u64,
}

impl PipelineModel {
    /// Fresh model: identity-initialised tone nets, uniform-output encoders,
    /// near-identity CCM atoms and `U(1, 2)` gain atoms.
    pub fn init(config: IspConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.n_atoms;
        let ew = &config.encoder_widths;
        Ok(PipelineModel {
            ccm_dict: CcmDictionary::init(n, 0.05, &mut rng)?,
            wb_dict: WbDictionary::init(n, &mut rng)?,
            enc_ccm_fwd: DictEncoder::new(n, ew, Direction::Forward, &mut rng)?,
            enc_ccm_rev: DictEncoder::new(n, ew, Direction::Reverse, &mut rng)?,
            enc_wb_fwd: DictEncoder::new(n, ew, Direction::Forward, &mut rng)?,
            enc_wb_rev: DictEncoder::new(n, ew, Direction::Reverse, &mut rng)?,
            tone_fwd: ToneMapNet::init_identity(&config.tone_widths, Direction::Forward, &mut rng)?,
            tone_rev: ToneMapNet::init_identity(&config.tone_widths, Direction::Reverse, &mut rng)?,
            attention: AttentionMaskNet::new(config.attention_hidden, config.attention_floor, ATTENTION_INIT_BIAS, &mut rng)?,
            gauss: GaussianMaskParams::centered(GAUSS_INIT_SIGMA, config.mask_floor),
            gamma: 2.2,
            seed,
            step: 0,
            config,
        })
    }

    /// Model whose every stage is the identity: identity atoms, unit gains,
    /// γ = 1, unit masks, identity tone curves.
    pub fn identity(mut config: IspConfig) -> Result<Self> {
        config.mask_floor = 1.0;
        config.attention_floor = 1.0;
        let mut m = PipelineModel::init(config, 0)?;
        m.ccm_dict.atoms.iter_mut().for_each(|a| *a = Ccm::IDENTITY);
        m.wb_dict.atoms.iter_mut().for_each(|a| *a = WbGains::IDENTITY);
        m.gamma = 1.0;
        Ok(m)
    }

    /// Randomises encoder heads and the attention output layer so that every
    /// parameter influences the loss. Used for gradient checks.
    pub fn perturb(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for enc in [&mut self.enc_ccm_fwd, &mut self.enc_ccm_rev, &mut self.enc_wb_fwd, &mut self.enc_wb_rev] {
            let (cin, n) = (enc.head.cin(), enc.head.cout());
            enc.head = Dense::random(cin, n, &mut rng);
            enc.head.w.data.iter_mut().for_each(|v| *v *= scale);
            enc.head.b.data.iter_mut().for_each(|v| *v = scale * rng.random_range(-1.0..1.0));
        }
        for tone in [&mut self.tone_fwd, &mut self.tone_rev] {
            for l in &mut tone.layers {
                l.w.data.iter_mut().for_each(|v| *v += scale * 0.1 * rng.random_range(-1.0..1.0));
                l.b.data.iter_mut().for_each(|v| *v += scale * 0.01 * rng.random_range(-1.0..1.0));
            }
        }
        self.attention.conv2.w.data.iter_mut().for_each(|v| *v = scale * rng.random_range(-1.0..1.0));
        self.gauss.mu = [0.5 + 0.1 * rng.random_range(-1.0..1.0), 0.5 + 0.1 * rng.random_range(-1.0..1.0)];
        self.gauss.chol = [0.6, 0.1 * rng.random_range(-1.0..1.0), 0.7];
    }

    pub fn encoders(&self) -> [(&'static str, &DictEncoder); 4] {
        [
            ("enc.ccm.fwd", &self.enc_ccm_fwd),
            ("enc.ccm.rev", &self.enc_ccm_rev),
            ("enc.wb.fwd", &self.enc_wb_fwd),
            ("enc.wb.rev", &self.enc_wb_rev),
        ]
    }

    /// All learnable tensors by name.
    pub fn to_params(&self) -> BTreeMap<String, Tensor> {
        let mut p = BTreeMap::new();
        p.insert("ccm_dict".to_string(), self.ccm_dict.tensor());
        p.insert("wb_dict".to_string(), self.wb_dict.tensor());
        p.insert("lse.mu".to_string(), Tensor { shape: vec![2], data: self.gauss.mu.to_vec() });
        p.insert("lse.chol".to_string(), Tensor { shape: vec![3], data: self.gauss.chol.to_vec() });
        p.insert("gamma".to_string(), Tensor::scalar(self.gamma));
        let mut add = |prefix: &str, set: &dyn ParamSet| {
            for (k, t) in set.params() {
                p.insert(format!("{prefix}{k}"), t.clone());
            }
        };
        for (name, enc) in self.encoders() {
            add(name, enc);
        }
        add("tone.fwd", &self.tone_fwd);
        add("tone.rev", &self.tone_rev);
        add("att", &self.attention);
        p
    }

    /// Loads tensors produced by [`to_params`](Self::to_params); names and
    /// shapes must match exactly.
    pub fn set_params(&mut self, p: &BTreeMap<String, Tensor>) -> Result<()> {
        let expected = self.to_params();
        if expected.len() != p.len() {
            return Err(Error::Format(format!("expected {} parameter blocks, got {}", expected.len(), p.len())));
        }
        for (k, t) in &expected {
            match p.get(k) {
                Some(v) if v.shape == t.shape => {}
                Some(v) => return Err(Error::Format(format!("block {k}: shape {:?}, expected {:?}", v.shape, t.shape))),
                None => return Err(Error::Format(format!("missing parameter block {k}"))),
            }
        }
        self.ccm_dict = CcmDictionary::from_tensor(&p["ccm_dict"])?;
        self.wb_dict = WbDictionary::from_tensor(&p["wb_dict"])?;
        let mu = &p["lse.mu"].data;
        let chol = &p["lse.chol"].data;
        self.gauss.mu = [mu[0], mu[1]];
        self.gauss.chol = [chol[0], chol[1], chol[2]];
        self.gamma = p["gamma"].data[0];
        let load = |prefix: &str, set: &mut dyn ParamSet| {
            for (k, t) in set.params_mut() {
                *t = p[&format!("{prefix}{k}")].clone();
            }
        };
        load("enc.ccm.fwd", &mut self.enc_ccm_fwd);
        load("enc.ccm.rev", &mut self.enc_ccm_rev);
        load("enc.wb.fwd", &mut self.enc_wb_fwd);
        load("enc.wb.rev", &mut self.enc_wb_rev);
        load("tone.fwd", &mut self.tone_fwd);
        load("tone.rev", &mut self.tone_rev);
        load("att", &mut self.attention);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.to_params().values().map(Tensor::numel).sum()
    }

    /// Restores parameter constraints after an unconstrained update.
    pub fn project(&mut self) -> Result<()> {
        self.ccm_dict = project_ccm_dictionary(&self.ccm_dict)?;
        for g in &mut self.wb_dict.atoms {
            g.g_d = g.g_d.max(WB_MIN_GAIN);
            g.g_r = g.g_r.max(WB_MIN_GAIN);
            g.g_b = g.g_b.max(WB_MIN_GAIN);
        }
        self.gauss.chol[0] = self.gauss.chol[0].max(CHOL_MIN);
        self.gauss.chol[2] = self.gauss.chol[2].max(CHOL_MIN);
        self.gamma = self.gamma.max(GAMMA_MIN);
        Ok(())
    }

    /// Every type invariant the optimiser must preserve.
    pub fn check_invariants(&self) -> Result<()> {
        self.config.validate()?;
        self.ccm_dict.check_invariants(1e-6)?;
        self.wb_dict.check_invariants()?;
        self.gauss.validate()?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParam(format!("gamma {}", self.gamma)));
        }
        if let Some((k, _)) = self.to_params().iter().find(|(_, t)| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParam(format!("non-finite values in {k}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip() {
        let mut a = PipelineModel::init(IspConfig::default(), 3).unwrap();
        a.perturb(4, 0.5);
        let mut b = PipelineModel::init(IspConfig::default(), 99).unwrap();
        b.set_params(&a.to_params()).unwrap();
        assert_eq!(a.to_params(), b.to_params());
    }

    #[test]
    fn init_satisfies_invariants() {
        let m = PipelineModel::init(IspConfig::default(), 1).unwrap();
        m.check_invariants().unwrap();
        assert!(m.param_count() < 600_000);
    }

    #[test]
    fn projection_restores_constraints() {
        let mut m = PipelineModel::init(IspConfig::default(), 2).unwrap();
        m.ccm_dict.atoms[0].m[1][0] = -0.4;
        m.wb_dict.atoms[2].g_r = -1.0;
        m.gauss.chol[0] = -0.1;
        m.gamma = -3.0;
        assert!(m.check_invariants().is_err());
        m.project().unwrap();
        m.check_invariants().unwrap();
    }
}
