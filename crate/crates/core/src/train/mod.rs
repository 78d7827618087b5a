//! Differentiation tape, loss, optimiser and training loop.

pub mod adam;
pub mod gradcheck;
pub mod loss;
pub mod tape;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, optimizer_step, OptimState};
pub use gradcheck::{gradcheck, gradcheck_fn, relative_error, GradcheckOptions, GradcheckReport, GroupReport};
pub use loss::{compute_loss, LossReport, LossWeights};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};
use crate::imagecore::{psnr, PSNR_CAP_DB};
use crate::nets::image_tensor;
use crate::pipeline::{build_forward, build_reverse, reverse_pass, ImagePair, PipelineModel, WeightOverride};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub epochs: usize,
    /// Optimiser steps per epoch; `None` means one pass over the training set.
    pub steps_per_epoch: Option<usize>,
    /// Side of the square training crop; larger than the image means whole image.
    pub crop: usize,
    pub batch: usize,
    pub loss: LossWeights,
    /// Validation PSNR is computed every this many epochs (and after the last).
    pub eval_every: usize,
    /// Verify every model invariant after each step.
    pub check_invariants: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lr: 1e-3,
            epochs: 10,
            steps_per_epoch: None,
            crop: 128,
            batch: 1,
            loss: LossWeights::default(),
            eval_every: 1,
            check_invariants: cfg!(debug_assertions),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 || self.batch == 0 || self.eval_every == 0 {
            return bad("epochs, batch and eval_every must be at least 1");
        }
        if self.crop < 2 {
            return bad("crop must be at least 2");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be at least 1");
        }
        if self.loss.intermediate < 0.0 || self.loss.consistency < 0.0 {
            return bad("loss weights must be non-negative");
        }
        Ok(())
    }
}

/// One epoch of the loss history. Component losses are means over the epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub step: u64,
    pub total: f64,
    pub raw_l2: f64,
    pub intermediate_l2: f64,
    pub consistency: f64,
    pub val_psnr_r: Option<f64>,
}

pub const HISTORY_HEADER: &str = "epoch,step,total,raw_l2,intermediate_l2,consistency,val_psnr_r";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        let val = r.val_psnr_r.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{}",
            r.epoch, r.step, r.total, r.raw_l2, r.intermediate_l2, r.consistency, val
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PipelineModel,
    pub history: Vec<HistoryRow>,
    /// Total loss of every step, in order.
    pub step_losses: Vec<f64>,
}

/// Failure during training, carrying the last model that passed all checks.
#[derive(Debug)]
pub struct TrainError {
    pub error: Error,
    pub last_good: PipelineModel,
    pub history: Vec<HistoryRow>,
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (last good model at step {})", self.error, self.last_good.step)
    }
}

impl std::error::Error for TrainError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Mean RAW-domain PSNR of the model's reverse pass over `pairs`.
pub fn mean_psnr_r(model: &PipelineModel, pairs: &[ImagePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidParam("no pairs to evaluate".into()));
    }
    let mut s = 0.0;
    for p in pairs {
        let raw = reverse_pass(&p.rgb, model, false)?.raw;
        s += psnr(&raw.plane, &p.raw.plane, PSNR_CAP_DB)?;
    }
    Ok(s / pairs.len() as f64)
}

fn random_crop(pair: &ImagePair, crop: usize, rng: &mut ChaCha8Rng) -> Result<ImagePair> {
    let (h, w) = (pair.rgb.height, pair.rgb.width);
    let c = crop & !1;
    let (ch, cw) = (c.min(h), c.min(w));
    if ch == h && cw == w {
        return Ok(pair.clone());
    }
    let y0 = 2 * rng.random_range(0..=(h - ch) / 2);
    let x0 = 2 * rng.random_range(0..=(w - cw) / 2);
    pair.crop(y0, x0, ch, cw)
}

/// Loss, report and gradients of one batch.
pub fn batch_gradients(model: &PipelineModel, batch: &[ImagePair], lw: LossWeights) -> Result<(LossReport, Gradients)> {
    let mut tape = Tape::new();
    let ov = WeightOverride::default();
    let inv = 1.0 / batch.len() as f64;
    let mut graphs = Vec::with_capacity(batch.len());
    for p in batch {
        let x = tape.constant(image_tensor(&p.rgb));
        let y = tape.constant(image_tensor(&p.raw.plane));
        let rev = build_reverse(&mut tape, model, x, &ov);
        let fwd = build_forward(&mut tape, model, y, p.raw.pattern, &ov);
        graphs.push(loss::build_loss(&mut tape, &rev, &fwd, y, lw));
    }
    let total = tape.weighted_sum(graphs.iter().map(|g| (g.total, inv)).collect());
    let grads = tape.backward(total)?;
    let mut report = graphs[0].report(&tape, lw);
    for g in &graphs[1..] {
        let r = g.report(&tape, lw);
        report.raw_l2 += r.raw_l2;
        report.weight_consistency += r.weight_consistency;
        for (a, b) in report.intermediate_l2.iter_mut().zip(&r.intermediate_l2) {
            *a += b;
        }
    }
    report.raw_l2 *= inv;
    report.weight_consistency *= inv;
    report.intermediate_l2.iter_mut().for_each(|v| *v *= inv);
    report.total = tape.scalar(total);
    Ok((report, grads))
}

fn check_pairs(pairs: &[ImagePair]) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        crate::imagecore::require_even(p.rgb.height, p.rgb.width)?;
        if p.rgb.height != p.raw.height() || p.rgb.width != p.raw.width() {
            return Err(Error::Dimension(format!(
                "pair {i}: sRGB {}x{} vs RAW {}x{}",
                p.rgb.height,
                p.rgb.width,
                p.raw.height(),
                p.raw.width()
            )));
        }
    }
    Ok(())
}

/// Trains `model` on `train`, reporting validation PSNR on `val` (may be empty).
pub fn train_model(
    model: PipelineModel,
    train: &[ImagePair],
    val: &[ImagePair],
    cfg: &TrainConfig,
) -> std::result::Result<TrainOutcome, TrainError> {
    let mut model = model;
    let mut history = Vec::new();
    let fail = |error: Error, model: &PipelineModel, history: &[HistoryRow]| TrainError {
        error,
        last_good: model.clone(),
        history: history.to_vec(),
    };
    let setup = (|| {
        cfg.validate()?;
        model.check_invariants()?;
        if train.is_empty() {
            return Err(Error::InvalidParam("training set is empty".into()));
        }
        check_pairs(train)?;
        check_pairs(val)
    })();
    if let Err(e) = setup {
        return Err(fail(e, &model, &history));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimState::new(cfg.lr);
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| train.len().div_ceil(cfg.batch));
    let mut order: Vec<usize> = Vec::new();
    let mut step_losses = Vec::with_capacity(steps * cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (mut tot, mut raw, mut inter, mut cons) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..steps {
            let mut batch = Vec::with_capacity(cfg.batch);
            for _ in 0..cfg.batch {
                if order.is_empty() {
                    order = (0..train.len()).collect();
                    order.shuffle(&mut rng);
                }
                let idx = order.pop().expect("refilled");
                match random_crop(&train[idx], cfg.crop, &mut rng) {
                    Ok(p) => batch.push(p),
                    Err(e) => return Err(fail(e, &model, &history)),
                }
            }
            let (report, grads) = match batch_gradients(&model, &batch, cfg.loss) {
                Ok(v) => v,
                Err(e) => return Err(fail(e, &model, &history)),
            };
            if !report.total.is_finite() {
                return Err(fail(Error::Diverged { step: model.step, loss: report.total }, &model, &history));
            }
            let mut next = model.clone();
            if let Err(e) = optimizer_step(&mut next, &grads, &mut state) {
                return Err(fail(e, &model, &history));
            }
            if cfg.check_invariants {
                if let Err(e) = next.check_invariants() {
                    return Err(fail(e, &model, &history));
                }
            }
            model = next;
            step_losses.push(report.total);
            tot += report.total;
            raw += report.raw_l2;
            inter += report.intermediate_l2.iter().sum::<f64>();
            cons += report.weight_consistency;
        }
        let n = steps as f64;
        let val_psnr_r = if !val.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            match mean_psnr_r(&model, val) {
                Ok(v) => Some(v),
                Err(e) => return Err(fail(e, &model, &history)),
            }
        } else {
            None
        };
        history.push(HistoryRow {
            epoch,
            step: model.step,
            total: tot / n,
            raw_l2: raw / n,
            intermediate_l2: inter / n,
            consistency: cons / n,
            val_psnr_r,
        });
    }
    Ok(TrainOutcome { model, history, step_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{IspConfig, SyntheticCamera};

    fn small_config() -> IspConfig {
        let mut c = IspConfig::default();
        c.n_atoms = 3;
        c.encoder_widths = vec![8];
        c.tone_widths = vec![3, 6, 3];
        c.attention_hidden = 2;
        c
    }

    #[test]
    fn deterministic_history() {
        let data = SyntheticCamera::new(1).dataset(2, 8, 8, 2).unwrap();
        let m = PipelineModel::init(small_config(), 4).unwrap();
        let cfg = TrainConfig { epochs: 3, crop: 4, ..Default::default() };
        let a = train_model(m.clone(), &data, &data[..1], &cfg).unwrap();
        let b = train_model(m, &data, &data[..1], &cfg).unwrap();
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        assert_eq!(a.model, b.model);
        assert_eq!(a.model.step, 6);
    }

    #[test]
    fn empty_dataset_rejected() {
        let m = PipelineModel::init(small_config(), 4).unwrap();
        let e = train_model(m, &[], &[], &TrainConfig::default()).unwrap_err();
        assert!(matches!(e.error, Error::InvalidParam(_)));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = vec![HistoryRow {
            epoch: 1,
            step: 4,
            total: 0.5,
            raw_l2: 0.25,
            intermediate_l2: 0.1,
            consistency: 0.0,
            val_psnr_r: Some(30.0),
        }];
        let s = history_csv(&rows);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], HISTORY_HEADER);
        assert_eq!(lines[1].split(',').count(), 7);
    }
}
