use isp_core::dict::{combine_ccm, combine_wb, expand_candidates, DictRef, WeightVector};
use isp_core::imagecore::{psnr, Image, MosaicPattern, RawImage, RgbImage, PSNR_CAP_DB};
use isp_core::nets::{attention_mask, encode_weights, tone_map};
use isp_core::pipeline::*;
use isp_core::stages::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_rgb(seed: u64, h: usize, w: usize) -> RgbImage {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::from_fn(h, w, |_, _, _| r.random_range(0.05..0.8)).unwrap()
}

fn perturbed_model() -> PipelineModel {
    let mut m = PipelineModel::init(IspConfig::default(), 11).unwrap();
    m.perturb(12, 0.4);
    m
}

fn max_diff(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn manual_reverse(x: &RgbImage, m: &PipelineModel) -> RawImage {
    let t = m.config.highlight_threshold;
    let x = RgbImage::from_image(tone_map(x, &m.tone_rev).unwrap()).unwrap();
    let x = gamma_reverse(&x, &GammaParam::new(m.gamma).unwrap()).unwrap();
    let x = RgbImage::from_image(x).unwrap();
    let cands = expand_candidates(&x, DictRef::Ccm(&m.ccm_dict), Direction::Reverse, t).unwrap();
    let w = encode_weights(&cands, &m.enc_ccm_rev).unwrap();
    let x = RgbImage::from_image(invert_ccm(&x, &combine_ccm(&m.ccm_dict, &w).unwrap()).unwrap()).unwrap();
    let cands = expand_candidates(&x, DictRef::Wb(&m.wb_dict), Direction::Reverse, t).unwrap();
    let w = encode_weights(&cands, &m.enc_wb_rev).unwrap();
    let x = safe_invert_gains(&x, &combine_wb(&m.wb_dict, &w).unwrap(), t).unwrap();
    let g = render_gaussian_mask(&m.gauss, x.height, x.width).unwrap();
    let a = attention_mask(&x, &m.attention).unwrap();
    let gains = g.gains.iter().zip(&a.gains).map(|(p, q)| p * q).collect();
    let mask = LensShadingMask::new(x.height, x.width, gains).unwrap();
    let x = apply_lens_shading(&x, &mask).unwrap();
    mosaic(&x, m.config.pattern).unwrap()
}

#[test]
fn reverse_pass_equals_manual_stage_chain() {
    let m = perturbed_model();
    let x = rand_rgb(1, 12, 10);
    let out = reverse_pass(&x, &m, false).unwrap().raw;
    let manual = manual_reverse(&x, &m);
    assert!(max_diff(&out.plane, &manual.plane.clamp01()) < 1e-12);
}

#[test]
fn forward_pass_equals_manual_stage_chain() {
    let m = perturbed_model();
    let y = mosaic(&rand_rgb(2, 10, 12), MosaicPattern::RGGB).unwrap();
    let out = forward_pass(&y, &m, false).unwrap().rgb;
    let t = m.config.highlight_threshold;
    let x = demosaic_bilinear(&y).unwrap();
    let g = render_gaussian_mask(&m.gauss, x.height, x.width).unwrap();
    let a = attention_mask(&x, &m.attention).unwrap();
    let gains = g.gains.iter().zip(&a.gains).map(|(p, q)| p * q).collect();
    let x = correct_lens_shading(&x, &LensShadingMask::new(x.height, x.width, gains).unwrap(), m.config.lsc_clamp_max).unwrap();
    let x = RgbImage::from_image(x).unwrap();
    let w = encode_weights(&expand_candidates(&x, DictRef::Wb(&m.wb_dict), Direction::Forward, t).unwrap(), &m.enc_wb_fwd).unwrap();
    let x = RgbImage::from_image(apply_gains(&x, &combine_wb(&m.wb_dict, &w).unwrap()).unwrap()).unwrap();
    let w = encode_weights(&expand_candidates(&x, DictRef::Ccm(&m.ccm_dict), Direction::Forward, t).unwrap(), &m.enc_ccm_fwd).unwrap();
    let x = apply_ccm(&x, &combine_ccm(&m.ccm_dict, &w).unwrap()).unwrap();
    let x = gamma_forward(&x, &GammaParam::new(m.gamma).unwrap()).unwrap();
    let x = tone_map(&x, &m.tone_fwd).unwrap();
    assert!(max_diff(&out, &x.clamp01()) < 1e-12);
}

#[test]
fn identity_model_without_mosaic_is_identity() {
    let mut cfg = IspConfig::default();
    cfg.set_enabled(isp_core::stages::StageKind::Mosaic, false);
    let m = PipelineModel::identity(cfg).unwrap();
    let x = rand_rgb(3, 8, 8);
    let out = reverse_pass(&x, &m, true).unwrap();
    assert_eq!(out.raw.plane.channels, 3);
    assert!(max_diff(&out.raw.plane, &x) < 1e-12);
    assert_eq!(out.trace.unwrap().entries.len(), 6);
}

#[test]
fn disabled_stage_is_skipped_in_trace() {
    let mut cfg = IspConfig::default();
    cfg.set_enabled(StageKind::LensShading, false);
    let m = PipelineModel::init(cfg, 1).unwrap();
    let tr = reverse_pass(&rand_rgb(4, 8, 8), &m, true).unwrap().trace.unwrap();
    let names: Vec<&str> = tr.entries.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["input", "tone", "gamma", "ccm", "gains", "mosaic"]);
    let ftr = forward_pass(&mosaic(&rand_rgb(5, 8, 8), MosaicPattern::RGGB).unwrap(), &m, true).unwrap().trace.unwrap();
    assert_eq!(ftr.entries.len(), 6);
}

#[test]
fn identity_cycle_on_bilinear_consistent_image_hits_cap() {
    let m = PipelineModel::identity(IspConfig::default()).unwrap();
    let base = demosaic_bilinear(&mosaic(&rand_rgb(6, 16, 16), MosaicPattern::RGGB).unwrap()).unwrap();
    let (_, p) = cycle(&base, &m).unwrap();
    assert_eq!(p, PSNR_CAP_DB);
}

#[test]
fn frozen_weights_equal_single_combined_parameters() {
    let m = perturbed_model();
    let x = rand_rgb(7, 10, 10);
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let logits = |r: &mut ChaCha8Rng| (0..8).map(|_| r.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    let wc = WeightVector::from_logits(&logits(&mut r));
    let ww = WeightVector::from_logits(&logits(&mut r));
    let ov = WeightOverride { ccm: Some(wc.clone()), wb: Some(ww.clone()) };
    let a = reverse_pass_with(&x, &m, &ov, false).unwrap().raw;

    let mut single = m.clone();
    single.config.n_atoms = 1;
    single.ccm_dict.atoms = vec![combine_ccm(&m.ccm_dict, &wc).unwrap()];
    single.wb_dict.atoms = vec![combine_wb(&m.wb_dict, &ww).unwrap()];
    let one = WeightOverride { ccm: Some(WeightVector::uniform(1)), wb: Some(WeightVector::uniform(1)) };
    let b = reverse_pass_with(&x, &single, &one, false).unwrap().raw;
    assert!(max_diff(&a.plane, &b.plane) < 1e-6);
}

#[test]
fn identity_ablation_is_constant() {
    let m = PipelineModel::identity(IspConfig::default()).unwrap();
    let base = demosaic_bilinear(&mosaic(&rand_rgb(9, 16, 16), MosaicPattern::RGGB).unwrap()).unwrap();
    let y = mosaic(&base, MosaicPattern::RGGB).unwrap();
    let rows = ablation_trace(&base, &y, &m).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.psnr_rgb == rows[0].psnr_rgb));
    assert!(ablation_csv(&rows).starts_with("stage,psnr_rgb,psnr_y,psnr_uv\n"));
}

#[test]
fn checkpoint_reload_is_bit_exact_on_probe() {
    let m = perturbed_model();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    save_checkpoint(&m, &p).unwrap();
    let back = load_checkpoint(&p).unwrap();
    let x = rand_rgb(10, 12, 12);
    assert_eq!(reverse_pass(&x, &m, false).unwrap().raw, reverse_pass(&x, &back, false).unwrap().raw);
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(encode_checkpoint(&back), bytes);
}

#[test]
fn synthetic_pair_psnr_against_oracle_inverse() {
    let cam = SyntheticCamera::new(2);
    let pair = &cam.dataset(1, 32, 32, 3).unwrap()[0];
    let rec = cam.reverse_chain(&pair.rgb).unwrap();
    assert!(psnr(&rec.plane, &pair.raw.plane, PSNR_CAP_DB).unwrap() > 50.0);
}

#[test]
fn mosaic_input_with_mosaic_disabled_is_rejected() {
    let mut cfg = IspConfig::default();
    cfg.set_enabled(StageKind::Mosaic, false);
    let m = PipelineModel::init(cfg, 0).unwrap();
    let y = mosaic(&rand_rgb(11, 8, 8), MosaicPattern::RGGB).unwrap();
    assert!(forward_pass(&y, &m, false).is_err());
}
