use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::IspConfig;
use crate::stages::StageKind;
use crate::train::{LossWeights, TrainConfig};

/// Flat TOML run configuration. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub lr: f64,
    pub epochs: usize,
    pub steps_per_epoch: Option<usize>,
    pub crop: usize,
    pub batch: usize,
    pub eval_every: usize,
    pub lambda_intermediate: f64,
    pub lambda_consistency: f64,
    pub check_invariants: bool,
    pub n_atoms: usize,
    /// Stage names to switch off: tone, gamma, ccm, gains, lse, mosaic.
    pub disabled_stages: Vec<String>,
    pub pattern: String,
    pub mask_floor: f64,
    pub attention_floor: f64,
    pub highlight_threshold: f64,
    pub tone_widths: Vec<usize>,
    pub encoder_widths: Vec<usize>,
    pub attention_hidden: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let i = IspConfig::default();
        RunConfig {
            seed: t.seed,
            lr: t.lr,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            crop: t.crop,
            batch: t.batch,
            eval_every: t.eval_every,
            lambda_intermediate: t.loss.intermediate,
            lambda_consistency: t.loss.consistency,
            check_invariants: false,
            n_atoms: i.n_atoms,
            disabled_stages: Vec::new(),
            pattern: i.pattern.to_string(),
            mask_floor: i.mask_floor,
            attention_floor: i.attention_floor,
            highlight_threshold: i.highlight_threshold,
            tone_widths: i.tone_widths,
            encoder_widths: i.encoder_widths,
            attention_hidden: i.attention_hidden,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.isp()?;
        c.train().validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serialises")
    }

    pub fn isp(&self) -> Result<IspConfig> {
        let mut c = IspConfig {
            n_atoms: self.n_atoms,
            pattern: self.pattern.parse()?,
            mask_floor: self.mask_floor,
            attention_floor: self.attention_floor,
            highlight_threshold: self.highlight_threshold,
            tone_widths: self.tone_widths.clone(),
            encoder_widths: self.encoder_widths.clone(),
            attention_hidden: self.attention_hidden,
            ..IspConfig::default()
        };
        for name in &self.disabled_stages {
            let s = StageKind::from_name(name).ok_or_else(|| Error::Config(format!("unknown stage {name:?}")))?;
            c.set_enabled(s, false);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            lr: self.lr,
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            crop: self.crop,
            batch: self.batch,
            loss: LossWeights { intermediate: self.lambda_intermediate, consistency: self.lambda_consistency },
            eval_every: self.eval_every,
            check_invariants: self.check_invariants,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::parse("seed = 3\nlr = 0.005\ndisabled_stages = [\"lse\"]\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.crop, 128);
        assert!(!c.isp().unwrap().is_enabled(StageKind::LensShading));
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig { steps_per_epoch: Some(7), ..Default::default() };
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("lr = -1.0").is_err());
        assert!(RunConfig::parse("disabled_stages = [\"blur\"]").is_err());
        assert!(RunConfig::parse("pattern = \"RGBX\"").is_err());
    }
}
