use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::imagecore::MosaicPattern;
use crate::nets::{DEFAULT_ATTENTION_HIDDEN, DEFAULT_ENCODER_WIDTHS, DEFAULT_TONE_WIDTHS};
use crate::stages::{StageKind, DEFAULT_GAMMA_EPS, DEFAULT_HIGHLIGHT_THRESHOLD};

/// Layout and hyper-parameters of a pipeline model.
#[derive(Debug, Clone, PartialEq)]
pub struct IspConfig {
    /// Reverse-pass order (sRGB side first); mosaic must come last.
    pub order: Vec<StageKind>,
    pub enabled: BTreeMap<StageKind, bool>,
    pub n_atoms: usize,
    pub mask_floor: f64,
    pub attention_floor: f64,
    pub highlight_threshold: f64,
    pub lsc_clamp_max: f64,
    pub gamma_eps: f64,
    pub pattern: MosaicPattern,
    pub black_level: u16,
    pub white_level: u16,
    pub tone_widths: Vec<usize>,
    pub encoder_widths: Vec<usize>,
    pub attention_hidden: usize,
}

impl Default for IspConfig {
    fn default() -> Self {
        IspConfig {
            order: StageKind::REVERSE_ORDER.to_vec(),
            enabled: StageKind::REVERSE_ORDER.iter().map(|s| (*s, true)).collect(),
            n_atoms: 8,
            mask_floor: 0.3,
            attention_floor: 0.5,
            highlight_threshold: DEFAULT_HIGHLIGHT_THRESHOLD,
            lsc_clamp_max: 1.0,
            gamma_eps: DEFAULT_GAMMA_EPS,
            pattern: MosaicPattern::RGGB,
            black_level: 512,
            white_level: 16383,
            tone_widths: DEFAULT_TONE_WIDTHS.to_vec(),
            encoder_widths: DEFAULT_ENCODER_WIDTHS.to_vec(),
            attention_hidden: DEFAULT_ATTENTION_HIDDEN,
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| Error::Config(format!("{key}: bad entry {t:?}"))))
        .collect()
}

impl IspConfig {
    pub fn is_enabled(&self, s: StageKind) -> bool {
        self.enabled.get(&s).copied().unwrap_or(true)
    }

    pub fn set_enabled(&mut self, s: StageKind, on: bool) {
        self.enabled.insert(s, on);
    }

    /// Enabled stages in reverse-pass order.
    pub fn active_reverse(&self) -> Vec<StageKind> {
        self.order.iter().copied().filter(|s| self.is_enabled(*s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.order.clone();
        sorted.sort();
        let mut canon = StageKind::REVERSE_ORDER.to_vec();
        canon.sort();
        if sorted != canon {
            return Err(Error::Config(format!("stage order {:?} is not a permutation of the six stages", self.order)));
        }
        if self.order.last() != Some(&StageKind::Mosaic) {
            return Err(Error::Config("mosaic must be the RAW-side terminal stage".into()));
        }
        if self.n_atoms == 0 {
            return Err(Error::Config("n_atoms must be positive".into()));
        }
        for (name, v) in [("mask_floor", self.mask_floor), ("attention_floor", self.attention_floor)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} {v} outside (0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.highlight_threshold) {
            return Err(Error::Config(format!("highlight_threshold {} outside [0, 1)", self.highlight_threshold)));
        }
        if !(self.lsc_clamp_max >= 1.0) {
            return Err(Error::Config(format!("lsc_clamp_max {} below 1", self.lsc_clamp_max)));
        }
        if !(self.gamma_eps > 0.0 && self.gamma_eps < 1e-3) {
            return Err(Error::Config(format!("gamma_eps {} outside (0, 1e-3)", self.gamma_eps)));
        }
        if self.white_level <= self.black_level {
            return Err(Error::Config("white_level must exceed black_level".into()));
        }
        let t = &self.tone_widths;
        if t.len() < 2 || t[0] != 3 || t[t.len() - 1] != 3 || t.iter().any(|&w| w < 3) {
            return Err(Error::Config(format!("tone_widths {t:?}")));
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) || self.attention_hidden == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        Ok(())
    }

    /// Flat `key=value` form used by the checkpoint manifest.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let order: Vec<&str> = self.order.iter().map(|s| s.name()).collect();
        let disabled: Vec<&str> = self.order.iter().filter(|s| !self.is_enabled(**s)).map(|s| s.name()).collect();
        vec![
            ("order".into(), order.join(",")),
            ("disabled".into(), disabled.join(",")),
            ("n_atoms".into(), self.n_atoms.to_string()),
            ("mask_floor".into(), format!("{:?}", self.mask_floor)),
            ("attention_floor".into(), format!("{:?}", self.attention_floor)),
            ("highlight_threshold".into(), format!("{:?}", self.highlight_threshold)),
            ("lsc_clamp_max".into(), format!("{:?}", self.lsc_clamp_max)),
            ("gamma_eps".into(), format!("{:?}", self.gamma_eps)),
            ("pattern".into(), self.pattern.to_string()),
            ("black_level".into(), self.black_level.to_string()),
            ("white_level".into(), self.white_level.to_string()),
            ("tone_widths".into(), join(&self.tone_widths)),
            ("encoder_widths".into(), join(&self.encoder_widths)),
            ("attention_hidden".into(), self.attention_hidden.to_string()),
        ]
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| Error::Config(format!("missing key {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Config(format!("{k}: not a number"))) };
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Config(format!("{k}: not an integer"))) };
        let stage = |n: &str| StageKind::from_name(n).ok_or_else(|| Error::Config(format!("unknown stage {n:?}")));
        let order = get("order")?.split(',').map(stage).collect::<Result<Vec<_>>>()?;
        let mut enabled: BTreeMap<StageKind, bool> = order.iter().map(|s| (*s, true)).collect();
        for n in get("disabled")?.split(',').filter(|s| !s.is_empty()) {
            enabled.insert(stage(n)?, false);
        }
        let c = IspConfig {
            order,
            enabled,
            n_atoms: int("n_atoms")?,
            mask_floor: num("mask_floor")?,
            attention_floor: num("attention_floor")?,
            highlight_threshold: num("highlight_threshold")?,
            lsc_clamp_max: num("lsc_clamp_max")?,
            gamma_eps: num("gamma_eps")?,
            pattern: get("pattern")?.parse()?,
            black_level: int("black_level")? as u16,
            white_level: int("white_level")? as u16,
            tone_widths: parse_list("tone_widths", get("tone_widths")?)?,
            encoder_widths: parse_list("encoder_widths", get("encoder_widths")?)?,
            attention_hidden: int("attention_hidden")?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let mut c = IspConfig::default();
        c.validate().unwrap();
        c.set_enabled(StageKind::LensShading, false);
        let kv: BTreeMap<String, String> = c.to_kv().into_iter().collect();
        assert_eq!(IspConfig::from_kv(&kv).unwrap(), c);
    }

    #[test]
    fn mosaic_must_be_terminal() {
        let mut c = IspConfig::default();
        c.order.swap(4, 5);
        assert!(c.validate().is_err());
        let mut c = IspConfig::default();
        c.order[0] = StageKind::Gamma;
        assert!(c.validate().is_err());
    }

    #[test]
    fn custom_order_accepted() {
        let mut c = IspConfig::default();
        c.order.swap(2, 3);
        c.validate().unwrap();
        assert_eq!(c.active_reverse()[2], StageKind::Gains);
    }
}
