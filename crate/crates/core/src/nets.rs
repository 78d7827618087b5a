//! Small learnable components: tone-map MLPs, dictionary encoders and the
//! attention lens-shading block.
//!
//! Each network builds its graph on a [`Tape`]; plain evaluation records on an
//! inference tape so both paths share one implementation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dict::WeightVector;
use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::stages::{Direction, LensShadingMask};
use crate::tensor::Tensor;
use crate::train::tape::{Tape, Var};

/// Buffer kernels shared by graph recording and replay.
pub(crate) mod kernels {
    pub(crate) fn relu(x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
    }

    pub(crate) fn sigmoid(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect()
    }

    pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    pub(crate) fn conv1x1(x: &[f64], cin: usize, w: &[f64], cout: usize, b: &[f64]) -> Vec<f64> {
        let pixels = x.len() / cin;
        let mut out = Vec::with_capacity(pixels * cout);
        for px in x.chunks_exact(cin) {
            let start = out.len();
            out.extend_from_slice(b);
            let o = &mut out[start..];
            for (i, &xi) in px.iter().enumerate() {
                if xi != 0.0 {
                    let row = &w[i * cout..(i + 1) * cout];
                    o.iter_mut().zip(row).for_each(|(a, r)| *a += xi * r);
                }
            }
        }
        out
    }

    pub(crate) fn mean_pixels(x: &[f64], c: usize) -> Vec<f64> {
        let n = (x.len() / c) as f64;
        let mut s = vec![0.0; c];
        for px in x.chunks_exact(c) {
            s.iter_mut().zip(px).for_each(|(a, v)| *a += v);
        }
        s.iter().map(|v| v / n).collect()
    }

    pub(crate) fn linear(x: &[f64], w: &[f64], cout: usize, b: &[f64]) -> Vec<f64> {
        conv1x1(x, x.len(), w, cout, b)
    }

    fn mirror(i: isize, n: usize) -> usize {
        if n == 1 {
            0
        } else if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * n - 2 - i as usize
        } else {
            i as usize
        }
    }

    /// Source pixel of tap `(ky, kx)` around `(y, x)` with mirrored borders.
    fn src(y: usize, x: usize, ky: usize, kx: usize, h: usize, w: usize) -> usize {
        let sy = mirror(y as isize + ky as isize - 1, h);
        let sx = mirror(x as isize + kx as isize - 1, w);
        sy * w + sx
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn conv3x3(x: &[f64], h: usize, w: usize, cin: usize, wt: &[f64], cout: usize, b: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(h * w * cout);
        for y in 0..h {
            for xx in 0..w {
                let start = out.len();
                out.extend_from_slice(b);
                let o = &mut out[start..];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let s = src(y, xx, ky, kx, h, w);
                        let px = &x[s * cin..(s + 1) * cin];
                        let base = (ky * 3 + kx) * cin;
                        for (i, &xi) in px.iter().enumerate() {
                            let row = &wt[(base + i) * cout..(base + i + 1) * cout];
                            o.iter_mut().zip(row).for_each(|(a, r)| *a += xi * r);
                        }
                    }
                }
            }
        }
        out
    }

    /// Gradients of [`conv3x3`] with respect to input, weights and bias.
    pub(crate) fn conv3x3_backward(
        x: &[f64],
        h: usize,
        w: usize,
        wt: &[f64],
        cin: usize,
        cout: usize,
        g: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; wt.len()];
        let mut gb = vec![0.0; cout];
        for y in 0..h {
            for xx in 0..w {
                let go = &g[(y * w + xx) * cout..(y * w + xx + 1) * cout];
                gb.iter_mut().zip(go).for_each(|(a, v)| *a += v);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let s = src(y, xx, ky, kx, h, w);
                        let base = (ky * 3 + kx) * cin;
                        for i in 0..cin {
                            let xi = x[s * cin + i];
                            let off = (base + i) * cout;
                            let mut acc = 0.0;
                            for (o, &gv) in go.iter().enumerate() {
                                acc += wt[off + o] * gv;
                                gw[off + o] += xi * gv;
                            }
                            gx[s * cin + i] += acc;
                        }
                    }
                }
            }
        }
        (gx, gw, gb)
    }
}

/// Named access to learnable tensors.
pub trait ParamSet {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Dense layer `w [cin, cout]`, `b [cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Dense { w: Tensor::zeros(&[cin, cout]), b: Tensor::zeros(&[cout]) }
    }

    /// He-uniform weights, zero bias.
    pub fn random(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let lim = (6.0 / cin as f64).sqrt();
        let w = (0..cin * cout).map(|_| rng.random_range(-lim..lim)).collect();
        Dense { w: Tensor { shape: vec![cin, cout], data: w }, b: Tensor::zeros(&[cout]) }
    }

    pub fn cin(&self) -> usize {
        self.w.shape[0]
    }

    pub fn cout(&self) -> usize {
        self.w.shape[1]
    }
}

fn stack_params<'a>(layers: &'a [Dense], prefix: &str) -> Vec<(String, &'a Tensor)> {
    layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| [(format!("{prefix}.l{i}.w"), &l.w), (format!("{prefix}.l{i}.b"), &l.b)])
        .collect()
}

fn stack_params_mut<'a>(layers: &'a mut [Dense], prefix: &str) -> Vec<(String, &'a mut Tensor)> {
    layers
        .iter_mut()
        .enumerate()
        .flat_map(|(i, l)| [(format!("{prefix}.l{i}.w"), &mut l.w), (format!("{prefix}.l{i}.b"), &mut l.b)])
        .collect()
}

/// Pixel-wise ReLU MLP modelling a tone curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneMapNet {
    pub layers: Vec<Dense>,
    pub direction: Direction,
}

pub const DEFAULT_TONE_WIDTHS: [usize; 4] = [3, 16, 16, 3];

impl ToneMapNet {
    /// Widths must start and end at 3 and every hidden width must be at least 3.
    pub fn init_identity(widths: &[usize], direction: Direction, rng: &mut ChaCha8Rng) -> Result<Self> {
        if widths.len() < 2 || widths[0] != 3 || *widths.last().unwrap() != 3 || widths.iter().any(|&w| w < 3) {
            return Err(Error::InvalidParam(format!("tone widths {widths:?} must be 3 -> (>=3)* -> 3")));
        }
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (k, pair) in widths.windows(2).enumerate() {
            let (cin, cout) = (pair[0], pair[1]);
            let mut l = Dense::zeros(cin, cout);
            for c in 0..3 {
                l.w.data[c * cout + c] = 1.0;
            }
            if k + 1 < n {
                // extra hidden units: live inputs, silent outputs (zero rows in the next layer)
                let lim = (6.0 / cin as f64).sqrt();
                for j in 3..cout {
                    for i in 0..cin {
                        l.w.data[i * cout + j] = rng.random_range(-lim..lim);
                    }
                    l.b.data[j] = rng.random_range(0.0..0.1);
                }
            }
            layers.push(l);
        }
        Ok(ToneMapNet { layers, direction })
    }

    /// Fully random network, for tests and perturbation studies.
    pub fn random(widths: &[usize], direction: Direction, rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|p| {
                let mut l = Dense::random(p[0], p[1], rng);
                l.b.data.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
                l
            })
            .collect();
        ToneMapNet { layers, direction }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].cin()];
        w.extend(self.layers.iter().map(Dense::cout));
        w
    }

    pub fn build(&self, tape: &mut Tape, prefix: &str, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let w = tape.param(&format!("{prefix}.l{i}.w"), &l.w);
            let b = tape.param(&format!("{prefix}.l{i}.b"), &l.b);
            h = tape.conv1x1(h, w, b);
            if i < last {
                h = tape.relu(h);
            }
        }
        h
    }
}

impl ParamSet for ToneMapNet {
    fn params(&self) -> Vec<(String, &Tensor)> {
        stack_params(&self.layers, "")
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        stack_params_mut(&mut self.layers, "")
    }
}

pub(crate) fn image_tensor(x: &Image) -> Tensor {
    Tensor { shape: vec![x.height, x.width, x.channels], data: x.data.clone() }
}

pub(crate) fn tensor_image(t: &Tensor) -> Image {
    let c = if t.shape.len() > 2 { t.shape[2] } else { 1 };
    Image { height: t.shape[0], width: t.shape[1], channels: c, data: t.data.clone() }
}

/// Evaluates the tone net on a 3-channel image.
pub fn tone_map(x: &Image, net: &ToneMapNet) -> Result<Image> {
    x.require_channels(3)?;
    let mut tape = Tape::inference();
    let v = tape.constant(image_tensor(x));
    let out = net.build(&mut tape, "tone", v);
    Ok(tensor_image(tape.value(out)))
}

/// Encoder over an N-candidate stack: 1x1 conv trunk, global average pool,
/// fully connected head, softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct DictEncoder {
    pub trunk: Vec<Dense>,
    pub head: Dense,
    pub n: usize,
    pub direction: Direction,
}

pub const DEFAULT_ENCODER_WIDTHS: [usize; 2] = [32, 32];

impl DictEncoder {
    /// Random trunk and a zero head, so initial weights are uniform.
    pub fn new(n: usize, widths: &[usize], direction: Direction, rng: &mut ChaCha8Rng) -> Result<Self> {
        if n == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(Error::InvalidParam(format!("encoder n={n} widths={widths:?}")));
        }
        let mut trunk = Vec::new();
        let mut cin = 3 * n;
        for &w in widths {
            let mut l = Dense::random(cin, w, rng);
            l.b.data.iter_mut().for_each(|v| *v = 0.01);
            trunk.push(l);
            cin = w;
        }
        Ok(DictEncoder { trunk, head: Dense::zeros(cin, n), n, direction })
    }

    pub fn logits(&self, tape: &mut Tape, prefix: &str, stack: Var) -> Var {
        let mut h = stack;
        for (i, l) in self.trunk.iter().enumerate() {
            let w = tape.param(&format!("{prefix}.l{i}.w"), &l.w);
            let b = tape.param(&format!("{prefix}.l{i}.b"), &l.b);
            h = tape.conv1x1(h, w, b);
            h = tape.relu(h);
        }
        let pooled = tape.mean_pixels(h);
        let w = tape.param(&format!("{prefix}.head.w"), &self.head.w);
        let b = tape.param(&format!("{prefix}.head.b"), &self.head.b);
        tape.linear(pooled, w, b)
    }

    /// `stack` is `[h, w, 3N]`; returns the softmax weights `[N]`.
    pub fn build(&self, tape: &mut Tape, prefix: &str, stack: Var) -> Var {
        let z = self.logits(tape, prefix, stack);
        tape.softmax(z)
    }
}

impl ParamSet for DictEncoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = stack_params(&self.trunk, "");
        p.push((".head.w".into(), &self.head.w));
        p.push((".head.b".into(), &self.head.b));
        p
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p = stack_params_mut(&mut self.trunk, "");
        p.push((".head.w".into(), &mut self.head.w));
        p.push((".head.b".into(), &mut self.head.b));
        p
    }
}

/// Weights for a candidate stack given as N separate images.
pub fn encode_weights(candidates: &[Image], enc: &DictEncoder) -> Result<WeightVector> {
    if candidates.len() != enc.n {
        return Err(Error::Dimension(format!("encoder expects {} candidates, got {}", enc.n, candidates.len())));
    }
    let first = &candidates[0];
    for c in candidates {
        c.require_channels(3)?;
        if !c.same_shape(first) {
            return Err(Error::Dimension("candidate images differ in shape".into()));
        }
    }
    let mut tape = Tape::inference();
    let parts = candidates.iter().map(|c| tape.constant(image_tensor(c))).collect();
    let stack = tape.concat_channels(parts);
    let w = enc.build(&mut tape, "enc", stack);
    Ok(WeightVector { w: tape.value(w).data.clone() })
}

/// Two 3x3 mirror-padded convolutions with a sigmoid rescaled to `[floor, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaskNet {
    pub conv1: Dense,
    pub conv2: Dense,
    pub floor: f64,
}

pub const DEFAULT_ATTENTION_HIDDEN: usize = 8;

impl AttentionMaskNet {
    /// Random first layer; zero second layer with bias `bias`, giving a constant mask.
    pub fn new(hidden: usize, floor: f64, bias: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !(floor > 0.0 && floor <= 1.0) || hidden == 0 {
            return Err(Error::InvalidParam(format!("attention floor {floor} / hidden {hidden}")));
        }
        let lim = (6.0 / 27.0f64).sqrt();
        let w1 = (0..27 * hidden).map(|_| rng.random_range(-lim..lim)).collect();
        let conv1 = Dense { w: Tensor { shape: vec![3, 3, 3, hidden], data: w1 }, b: Tensor::zeros(&[hidden]) };
        let conv2 = Dense { w: Tensor::zeros(&[3, 3, hidden, 1]), b: Tensor::full(&[1], bias) };
        Ok(AttentionMaskNet { conv1, conv2, floor })
    }

    /// Returns the mask as `[h, w, 1]`.
    pub fn build(&self, tape: &mut Tape, prefix: &str, x: Var) -> Var {
        let w1 = tape.param(&format!("{prefix}.c1.w"), &self.conv1.w);
        let b1 = tape.param(&format!("{prefix}.c1.b"), &self.conv1.b);
        let w2 = tape.param(&format!("{prefix}.c2.w"), &self.conv2.w);
        let b2 = tape.param(&format!("{prefix}.c2.b"), &self.conv2.b);
        let h = tape.conv3x3(x, w1, b1);
        let h = tape.relu(h);
        let z = tape.conv3x3(h, w2, b2);
        let s = tape.sigmoid(z);
        tape.affine(s, 1.0 - self.floor, self.floor)
    }
}

impl ParamSet for AttentionMaskNet {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            (".c1.w".into(), &self.conv1.w),
            (".c1.b".into(), &self.conv1.b),
            (".c2.w".into(), &self.conv2.w),
            (".c2.b".into(), &self.conv2.b),
        ]
    }
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            (".c1.w".into(), &mut self.conv1.w),
            (".c1.b".into(), &mut self.conv1.b),
            (".c2.w".into(), &mut self.conv2.w),
            (".c2.b".into(), &mut self.conv2.b),
        ]
    }
}

pub fn attention_mask(x: &Image, net: &AttentionMaskNet) -> Result<LensShadingMask> {
    x.require_channels(3)?;
    let mut tape = Tape::inference();
    let v = tape.constant(image_tensor(x));
    let m = net.build(&mut tape, "att", v);
    LensShadingMask::new(x.height, x.width, tape.value(m).data.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_image(seed: u64, h: usize, w: usize) -> Image {
        let mut r = rng(seed);
        Image::from_fn(h, w, 3, |_, _, _| r.random_range(0.0..1.0))
    }

    /// Straight-line per-pixel MLP evaluation.
    fn pixel_oracle(net: &ToneMapNet, px: &[f64]) -> Vec<f64> {
        let mut h = px.to_vec();
        for (k, l) in net.layers.iter().enumerate() {
            let (cin, cout) = (l.cin(), l.cout());
            let mut o = vec![0.0; cout];
            for j in 0..cout {
                let mut s = l.b.data[j];
                for i in 0..cin {
                    s += h[i] * l.w.data[i * cout + j];
                }
                o[j] = if k + 1 < net.layers.len() { s.max(0.0) } else { s };
            }
            h = o;
        }
        h
    }

    #[test]
    fn identity_tone_map_on_grid() {
        let net = ToneMapNet::init_identity(&DEFAULT_TONE_WIDTHS, Direction::Forward, &mut rng(1)).unwrap();
        let img = Image::from_fn(8, 8, 3, |y, x, c| ((y * 8 + x) as f64 / 63.0 + 0.1 * c as f64).min(1.0));
        let out = tone_map(&img, &net).unwrap();
        for (a, b) in img.data.iter().zip(&out.data) {
            assert!((a - b).abs() < 1e-6);
        }
        let ends = Image::new(1, 2, 3, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(tone_map(&ends, &net).unwrap().data, ends.data);
    }

    #[test]
    fn tone_map_matches_pixel_oracle() {
        let net = ToneMapNet::random(&DEFAULT_TONE_WIDTHS, Direction::Reverse, &mut rng(2));
        let img = rand_image(3, 4, 6);
        let out = tone_map(&img, &net).unwrap();
        for (px, o) in img.data.chunks(3).zip(out.data.chunks(3)) {
            let e = pixel_oracle(&net, px);
            for k in 0..3 {
                assert!((e[k] - o[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tone_map_commutes_with_pixel_permutation() {
        let net = ToneMapNet::random(&DEFAULT_TONE_WIDTHS, Direction::Forward, &mut rng(4));
        let img = rand_image(5, 2, 4);
        let mut perm = img.clone();
        perm.data = img.data.chunks(3).rev().flatten().copied().collect();
        let a = tone_map(&img, &net).unwrap();
        let b = tone_map(&perm, &net).unwrap();
        let a_rev: Vec<f64> = a.data.chunks(3).rev().flatten().copied().collect();
        assert_eq!(a_rev, b.data);
    }

    #[test]
    fn zero_head_gives_uniform_weights() {
        let enc = DictEncoder::new(4, &[8], Direction::Reverse, &mut rng(6)).unwrap();
        let cands: Vec<Image> = (0..4).map(|s| rand_image(s, 4, 4)).collect();
        let w = encode_weights(&cands, &enc).unwrap();
        assert!(w.w.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(encode_weights(&cands[..3], &enc).is_err());
    }

    #[test]
    fn random_encoder_is_reproducible_and_normalized() {
        let mut enc = DictEncoder::new(3, &[8, 8], Direction::Forward, &mut rng(7)).unwrap();
        enc.head = Dense::random(8, 3, &mut rng(8));
        let cands: Vec<Image> = (0..3).map(|s| rand_image(10 + s, 4, 6)).collect();
        let a = encode_weights(&cands, &enc).unwrap();
        let b = encode_weights(&cands, &enc.clone()).unwrap();
        assert_eq!(a, b);
        assert!((a.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let a = kernels::softmax(&z);
        let b = kernels::softmax(&z.map(|v| v + 17.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn saturated_attention_is_identity() {
        let net = AttentionMaskNet::new(8, 0.5, 40.0, &mut rng(9)).unwrap();
        let m = attention_mask(&rand_image(1, 6, 6), &net).unwrap();
        assert!(m.gains.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn attention_range_and_constant_input() {
        let mut net = AttentionMaskNet::new(8, 0.3, 0.0, &mut rng(11)).unwrap();
        net.conv2 = Dense { w: Tensor { shape: vec![3, 3, 8, 1], data: Dense::random(72, 1, &mut rng(12)).w.data }, b: Tensor::scalar(0.2) };
        for s in 0..50 {
            let m = attention_mask(&rand_image(100 + s, 4, 4), &net).unwrap();
            assert!(m.gains.iter().all(|&g| (0.3..=1.0).contains(&g)));
        }
        let flat = Image::filled(5, 7, 3, 0.4);
        let m = attention_mask(&flat, &net).unwrap();
        assert!(m.gains.iter().all(|&g| (g - m.gains[0]).abs() < 1e-12));
    }

    #[test]
    fn conv3x3_matches_naive() {
        let mut r = rng(13);
        let (h, w, cin, cout) = (4, 5, 2, 3);
        let x: Vec<f64> = (0..h * w * cin).map(|_| r.random_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..9 * cin * cout).map(|_| r.random_range(-1.0..1.0)).collect();
        let b = vec![0.1, -0.2, 0.3];
        let out = kernels::conv3x3(&x, h, w, cin, &wt, cout, &b);
        let refl = |i: isize, n: isize| if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
        for y in 0..h as isize {
            for xx in 0..w as isize {
                for o in 0..cout {
                    let mut s = b[o];
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (sy, sx) = (refl(y + dy, h as isize) as usize, refl(xx + dx, w as isize) as usize);
                            for i in 0..cin {
                                let k = ((((dy + 1) * 3 + dx + 1) as usize) * cin + i) * cout + o;
                                s += x[(sy * w + sx) * cin + i] * wt[k];
                            }
                        }
                    }
                    let got = out[((y as usize) * w + xx as usize) * cout + o];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn default_parameter_budget() {
        let mut r = rng(14);
        let tone = ToneMapNet::init_identity(&DEFAULT_TONE_WIDTHS, Direction::Forward, &mut r).unwrap();
        let enc = DictEncoder::new(8, &DEFAULT_ENCODER_WIDTHS, Direction::Forward, &mut r).unwrap();
        let att = AttentionMaskNet::new(DEFAULT_ATTENTION_HIDDEN, 0.5, 4.0, &mut r).unwrap();
        let total = 2 * tone.param_count() + 4 * enc.param_count() + att.param_count();
        assert!(total < 600_000);
    }
}
