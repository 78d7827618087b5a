//! Command-line verbs: train, reconstruct, augment, eval, selfcheck, synth.

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::RunConfig;
pub use manifest::{DatasetManifest, ManifestEntry, Split};

use crate::dict::{
    project_ccm_dictionary, sample_augmented_weights_with, AugmentationMode, AugmentationPolicy, WeightVector,
};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::imagecore::{psnr, read_raw, read_rgb_png, write_raw, write_rgb_png, PSNR_CAP_DB};
use crate::pipeline::{
    ablation_csv, ablation_trace, load_checkpoint, reverse_pass, reverse_pass_with, save_checkpoint, ImagePair,
    IntermediateTrace, PipelineModel, SyntheticCamera, WeightOverride,
};
use crate::stages::round_trip_suite;
use crate::train::{gradcheck, history_csv, train_model, GradcheckOptions, HistoryRow};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const RUN_RECORD_FILE: &str = "run.json";

/// Process exit status for an error: 1 for invalid input, 2 for failures
/// while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Diverged { .. } | Error::NonFiniteGradient { .. } | Error::Detached(_) => 2,
        _ => 1,
    }
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub config: RunConfig,
    /// SHA-256 over the manifest, every referenced file and the config.
    pub input_hash: String,
    pub metrics: BTreeMap<String, f64>,
    pub wall_time_s: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn input_hash(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(manifest.to_text().as_bytes());
    for e in &manifest.entries {
        h.update(read_bytes(&e.rgb)?);
        h.update(read_bytes(&e.raw)?);
    }
    h.update(cfg.to_toml().as_bytes());
    Ok(hex(&h.finalize()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    write_atomic(path, s.as_bytes())
}

fn split_pairs(pairs: Vec<(ManifestEntry, ImagePair)>) -> (Vec<ImagePair>, Vec<(ManifestEntry, ImagePair)>) {
    let (train, val): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(e, _)| e.split == Split::Train);
    (train.into_iter().map(|(_, p)| p).collect(), val)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: Vec<HistoryRow>,
    pub record: RunRecord,
    pub model: PipelineModel,
}

/// Trains on the manifest's train split and writes the checkpoint, history and
/// run record into `out_dir`. On divergence the last good model and the
/// history so far are still written before the error is returned.
pub fn cmd_train(manifest_path: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<TrainSummary> {
    let start = Instant::now();
    let manifest = DatasetManifest::load(manifest_path)?;
    let (train, val) = split_pairs(manifest.load_pairs()?);
    if train.is_empty() {
        return Err(Error::Manifest { path: manifest_path.to_path_buf(), problems: vec!["no train pairs".into()] });
    }
    let val: Vec<ImagePair> = val.into_iter().map(|(_, p)| p).collect();
    let model = PipelineModel::init(cfg.isp()?, cfg.seed)?;
    create_dir(out_dir)?;
    let hash = input_hash(&manifest, cfg)?;
    let (model, history) = match train_model(model, &train, &val, &cfg.train()) {
        Ok(o) => (o.model, o.history),
        Err(e) => {
            save_checkpoint(&e.last_good, &out_dir.join(CHECKPOINT_FILE))?;
            write_text(&out_dir.join(HISTORY_FILE), &history_csv(&e.history))?;
            return Err(e.error);
        }
    };
    save_checkpoint(&model, &out_dir.join(CHECKPOINT_FILE))?;
    write_text(&out_dir.join(HISTORY_FILE), &history_csv(&history))?;
    let mut metrics = BTreeMap::new();
    metrics.insert("steps".to_string(), model.step as f64);
    if let Some(last) = history.last() {
        metrics.insert("final_loss".to_string(), last.total);
        if let Some(v) = last.val_psnr_r {
            metrics.insert("val_psnr_r".to_string(), v);
        }
    }
    let record = RunRecord {
        command: "train".into(),
        config: cfg.clone(),
        input_hash: hash,
        metrics,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&record).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&out_dir.join(RUN_RECORD_FILE), &json)?;
    Ok(TrainSummary { history, record, model })
}

fn trace_stats_csv(trace: &IntermediateTrace) -> String {
    let mut s = String::from("stage,channels,min,max,mean\n");
    for (name, img) in &trace.entries {
        let min = img.data.iter().copied().fold(f64::INFINITY, f64::min);
        let max = img.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = img.data.iter().sum::<f64>() / img.data.len() as f64;
        let _ = writeln!(s, "{name},{},{min:.9},{max:.9},{mean:.9}", img.channels);
    }
    s
}

fn read_even_rgb(path: &Path) -> Result<crate::imagecore::RgbImage> {
    let x = read_rgb_png(path)?;
    crate::imagecore::require_even(x.height, x.width)?;
    Ok(x)
}

/// Path of the trace table written next to a RAW output.
pub fn trace_path(raw_out: &Path) -> PathBuf {
    raw_out.with_extension("trace.csv")
}

/// Reverse pass of one image into the RAW container. With `trace`, a table is
/// written next to the output: per-stage PSNR against `reference` when one is
/// given, otherwise per-stage sample statistics.
pub fn cmd_reconstruct(
    checkpoint: &Path,
    rgb_in: &Path,
    raw_out: &Path,
    trace: bool,
    reference: Option<&Path>,
) -> Result<crate::imagecore::RawImage> {
    let model = load_checkpoint(checkpoint)?;
    let x = read_even_rgb(rgb_in)?;
    let out = reverse_pass(&x, &model, trace)?;
    write_raw(&out.raw, raw_out)?;
    if trace {
        let table = match reference {
            Some(r) => ablation_csv(&ablation_trace(&x, &read_raw(r)?, &model)?),
            None => trace_stats_csv(out.trace.as_ref().expect("trace requested")),
        };
        write_text(&trace_path(raw_out), &table)?;
    }
    Ok(out.raw)
}

/// File name of augmented sample `idx`.
pub fn augment_file_name(seed: u64, idx: usize) -> String {
    format!("aug_s{seed}_{idx:03}.raw")
}

/// `k` reverse passes with sampled decomposition weights around the encoder
/// output. CCM weights are drawn first, then white-balance weights, from one
/// generator seeded with `policy.seed`.
pub fn cmd_augment(checkpoint: &Path, rgb_in: &Path, policy: &AugmentationPolicy, out_dir: &Path) -> Result<Vec<PathBuf>> {
    policy.validate()?;
    let model = load_checkpoint(checkpoint)?;
    let x = read_even_rgb(rgb_in)?;
    let opt = reverse_pass(&x, &model, false)?;
    let n = model.config.n_atoms;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut draw = |w: &Option<WeightVector>| -> Result<Option<Vec<WeightVector>>> {
        w.as_ref().map(|w| sample_augmented_weights_with(Some(w), n, policy, &mut rng)).transpose()
    };
    let ccm = draw(&opt.w_ccm)?;
    let wb = draw(&opt.w_wb)?;
    create_dir(out_dir)?;
    let mut paths = Vec::with_capacity(policy.k);
    for i in 0..policy.k {
        let ov = WeightOverride {
            ccm: ccm.as_ref().map(|v| v[i].clone()),
            wb: wb.as_ref().map(|v| v[i].clone()),
        };
        let raw = reverse_pass_with(&x, &model, &ov, false)?.raw;
        let p = out_dir.join(augment_file_name(policy.seed, i));
        write_raw(&raw, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_image: Vec<(String, f64)>,
    pub mean: f64,
    pub worst25: f64,
    pub best25: f64,
}

pub const EVAL_HEADER: &str = "image,psnr_r";
pub const EVAL_SUMMARY_HEADER: &str = "count,mean,worst25,best25";

/// Mean of the lowest and highest quarter (at least one value each).
pub fn quartile_means(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = v.len().div_ceil(4).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&v[..q]), mean(&v[v.len() - q..]))
}

impl EvalReport {
    pub fn per_image_csv(&self) -> String {
        let mut s = format!("{EVAL_HEADER}\n");
        for (name, p) in &self.per_image {
            let _ = writeln!(s, "{name},{p:.6}");
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        format!("{EVAL_SUMMARY_HEADER}\n{},{:.6},{:.6},{:.6}\n", self.per_image.len(), self.mean, self.worst25, self.best25)
    }
}

/// PSNR_r of every val pair in the manifest, written as `eval.csv` and
/// `eval_summary.csv` when `out_dir` is given.
pub fn cmd_eval(checkpoint: &Path, manifest_path: &Path, out_dir: Option<&Path>) -> Result<EvalReport> {
    let model = load_checkpoint(checkpoint)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let (_, val) = split_pairs(manifest.load_pairs()?);
    if val.is_empty() {
        return Err(Error::Manifest { path: manifest_path.to_path_buf(), problems: vec!["no val pairs".into()] });
    }
    let mut per_image = Vec::with_capacity(val.len());
    for (e, p) in &val {
        let raw = reverse_pass(&p.rgb, &model, false)?.raw;
        let name = e.rgb.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        per_image.push((name, psnr(&raw.plane, &p.raw.plane, PSNR_CAP_DB)?));
    }
    let values: Vec<f64> = per_image.iter().map(|(_, v)| *v).collect();
    let (worst25, best25) = quartile_means(&values);
    let report = EvalReport { mean: values.iter().sum::<f64>() / values.len() as f64, worst25, best25, per_image };
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_text(&dir.join("eval.csv"), &report.per_image_csv())?;
        write_text(&dir.join("eval_summary.csv"), &report.summary_csv())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: measured {:.3e}, tolerance {:.1e}", self.name, self.measured, self.tolerance)
    }
}

/// Test hooks for [`cmd_selfcheck`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SelfcheckHooks {
    /// Skip the column normalisation of the projected dictionary.
    pub corrupt_projection: bool,
}

pub fn cmd_selfcheck(hooks: SelfcheckHooks) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut check = |name: String, measured: f64, tolerance: f64| {
        out.push(CheckResult { passed: measured < tolerance, name, measured, tolerance });
    };
    for r in round_trip_suite(20, 16, 16, 0.02, 0.85, 0)? {
        check(format!("round-trip {}", r.stage.name()), r.max_err, 1e-5);
    }

    let cfg = crate::pipeline::IspConfig { n_atoms: 3, encoder_widths: vec![4], tone_widths: vec![3, 4, 3], attention_hidden: 2, ..Default::default() };
    cfg.validate()?;
    let mut model = PipelineModel::init(cfg, 1)?;
    model.perturb(2, 0.5);
    let pair = SyntheticCamera::new(3).dataset(1, 8, 8, 4)?.remove(0);
    let report = gradcheck(&model, &pair, &GradcheckOptions { max_per_group: Some(4), ..Default::default() })?;
    check("gradcheck tiny model".into(), report.max_rel_err(), report.tol);
    check("gradcheck detached parameters".into(), report.detached.len() as f64, 0.5);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut dict = crate::dict::CcmDictionary::init(4, 0.5, &mut rng)?;
    for a in &mut dict.atoms {
        a.m[0][1] -= 0.3;
        a.m[2][2] += 0.4;
    }
    let projected = if hooks.corrupt_projection { dict } else { project_ccm_dictionary(&dict)? };
    let mut worst = 0.0f64;
    for a in &projected.atoms {
        for j in 0..3 {
            worst = worst.max((a.column_l1(j) - 1.0).abs());
            for i in 0..3 {
                worst = worst.max((-a.m[i][j]).max(0.0));
            }
        }
    }
    check("ccm projection".into(), worst, 1e-6);
    Ok(out)
}

/// Renders `train + val` synthetic pairs of size `size × size` and a
/// manifest into `out_dir`; returns the manifest path.
pub fn cmd_synth(out_dir: &Path, train: usize, val: usize, size: usize, seed: u64) -> Result<PathBuf> {
    if size == 0 || size % 2 != 0 {
        return Err(Error::InvalidParam(format!("size {size} must be even and positive")));
    }
    let cam = SyntheticCamera::new(seed);
    let pairs = cam.dataset(train + val, size, size, seed.wrapping_add(1))?;
    create_dir(out_dir)?;
    let manifest_path = out_dir.join("manifest.tsv");
    let mut entries = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let rgb = out_dir.join(format!("pair_{i:03}.png"));
        let raw = out_dir.join(format!("pair_{i:03}.raw"));
        write_rgb_png(&p.rgb, &rgb, 8)?;
        write_raw(&p.raw, &raw)?;
        entries.push(ManifestEntry { rgb, raw, split: if i < train { Split::Train } else { Split::Val } });
    }
    let m = DatasetManifest { path: manifest_path.clone(), entries, seed: Some(seed) };
    write_text(&manifest_path, &m.to_text())?;
    Ok(manifest_path)
}

#[derive(Parser, Debug)]
#[command(name = "ispctl", version, about = "Train and run an invertible sRGB/RAW camera pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Overrides the seed of the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write per-stage trace tables.
    #[arg(long)]
    trace: bool,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// sRGB PNG to RAW with a trained model.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output file; defaults to `<out>/<input stem>.raw`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Ground-truth RAW for the trace table.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample RAW variants by perturbing decomposition weights.
    Augment {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value = "perturb")]
        mode: AugmentationMode,
        #[command(flatten)]
        common: Common,
    },
    /// PSNR_r over the val split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Built-in consistency checks.
    Selfcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic-camera dataset and manifest.
    Synth {
        #[arg(long, default_value_t = 4)]
        train: usize,
        #[arg(long, default_value_t = 2)]
        val: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train { manifest, common } => {
            let cfg = common.run_config()?;
            let s = cmd_train(&manifest, &cfg, &common.out)?;
            let val = s.record.metrics.get("val_psnr_r").map(|v| format!(", val PSNR_r {v:.2} dB")).unwrap_or_default();
            println!("trained {} steps{val}; wrote {}", s.model.step, common.out.display());
        }
        Command::Reconstruct { checkpoint, input, output, reference, common } => {
            let out = match output {
                Some(p) => p,
                None => {
                    create_dir(&common.out)?;
                    let stem = input.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "out".into());
                    common.out.join(stem).with_extension("raw")
                }
            };
            cmd_reconstruct(&checkpoint, &input, &out, common.trace, reference.as_deref())?;
            println!("wrote {}", out.display());
        }
        Command::Augment { checkpoint, input, k, sigma, mode, common } => {
            let seed = common.run_config()?.seed;
            let policy = AugmentationPolicy { noise_std: sigma, mode, k, seed };
            let paths = cmd_augment(&checkpoint, &input, &policy, &common.out)?;
            println!("wrote {} files to {}", paths.len(), common.out.display());
        }
        Command::Eval { checkpoint, manifest, common } => {
            let r = cmd_eval(&checkpoint, &manifest, Some(&common.out))?;
            print!("{}", r.summary_csv());
        }
        Command::Selfcheck { .. } => {
            let checks = cmd_selfcheck(SelfcheckHooks::default())?;
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().any(|c| !c.passed) {
                return Ok(2);
            }
        }
        Command::Synth { train, val, size, common } => {
            let seed = common.run_config()?.seed;
            let p = cmd_synth(&common.out, train, val, size, seed)?;
            println!("wrote {}", p.display());
        }
    }
    Ok(0)
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Manifest { problems, .. } = &e {
                for p in problems {
                    eprintln!("  - {p}");
                }
            }
            exit_code(&e)
        }
    }
}
