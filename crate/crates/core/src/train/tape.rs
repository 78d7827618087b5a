//! Tensor-level reverse-mode differentiation.
//!
//! Every operation records its inputs and the forward value. Forward values are
//! produced by the same buffer kernels the plain stage and network functions use,
//! so a graph evaluation matches direct evaluation bit for bit.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::imagecore::MosaicPattern;
use crate::nets::kernels;
use crate::stages::{
    self, demosaic_adjoint, demosaic_kernel, gamma_kernel, gaussian_field, mask_div, mask_mul,
    mosaic_kernel, pixel_matmul, safe_invert_kernel, scale_channels,
};
use crate::stages::linalg::{pinv3, Mat3};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64, f64),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mse(Var, Var),
    SquaredNorm(Var),
    WeightedSum(Vec<(Var, f64)>),
    Conv1x1 { x: Var, w: Var, b: Var },
    Conv3x3 { x: Var, w: Var, b: Var },
    MeanPixels(Var),
    Linear { x: Var, w: Var, b: Var },
    Softmax(Var),
    PixelMatmul { x: Var, m: Var },
    Pinv3(Var),
    MatVec { w: Var, atoms: Var },
    Slice { x: Var, start: usize },
    ConcatChannels(Vec<Var>),
    WbEffective(Var),
    ChannelScale { x: Var, g: Var },
    SafeInvert { x: Var, g: Var, threshold: f64 },
    Gamma { x: Var, gamma: Var, eps: f64, inverse: bool },
    MaskMul { x: Var, m: Var },
    MaskDiv { x: Var, m: Var, clamp_max: f64 },
    GaussianMask { mu: Var, chol: Var, floor: f64, h: usize, w: usize },
    Crop { x: Var, y0: usize, x0: usize, h: usize, w: usize },
    Mosaic { x: Var, pattern: MosaicPattern },
    Demosaic { x: Var, pattern: MosaicPattern },
}

#[derive(Debug, Clone)]
pub struct DiffNode {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of differentiable operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<DiffNode>,
    params: BTreeMap<String, Var>,
    grad_enabled: bool,
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    /// Fails with [`Error::Detached`] for the first name without a gradient.
    pub fn require_all<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for n in names {
            if !self.by_name.contains_key(n) {
                return Err(Error::Detached(n.to_string()));
            }
        }
        Ok(())
    }
}

fn mat3(t: &Tensor) -> Mat3 {
    let d = &t.data;
    [[d[0], d[1], d[2]], [d[3], d[4], d[5]], [d[6], d[7], d[8]]]
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape.last().expect("tensor has a shape")
}

fn image_hw(t: &Tensor) -> (usize, usize) {
    (t.shape[0], t.shape[1])
}

impl Tape {
    /// Tape that records parameter gradients.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: BTreeMap::new(), grad_enabled: true }
    }

    /// Tape for evaluation only: parameters are recorded as constants.
    pub fn inference() -> Self {
        Tape { grad_enabled: false, ..Tape::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(DiffNode { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Registers a named learnable leaf; repeated names return the same node.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        self.nodes.push(DiffNode { value: t.clone(), op: Op::Leaf, requires_grad: self.grad_enabled });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    fn push(&mut self, op: Op) -> Var {
        let value = compute(&op, |v| &self.nodes[v.0].value);
        let requires_grad = inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(DiffNode { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }
    /// `scale · x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.push(Op::Affine(x, scale, shift))
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.push(Op::Relu(x))
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.push(Op::Sigmoid(x))
    }
    pub fn sum(&mut self, x: Var) -> Var {
        self.push(Op::Sum(x))
    }
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape, self.value(b).shape, "mse operands differ in shape");
        self.push(Op::Mse(a, b))
    }
    pub fn squared_norm(&mut self, x: Var) -> Var {
        self.push(Op::SquaredNorm(x))
    }
    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        self.push(Op::WeightedSum(terms))
    }
    /// Per-pixel dense layer: `x [.., cin]`, `w [cin, cout]`, `b [cout]`.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Var) -> Var {
        self.push(Op::Conv1x1 { x, w, b })
    }
    /// Mirror-padded 3x3 convolution: `x [h, w, cin]`, `w [3, 3, cin, cout]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Var {
        self.push(Op::Conv3x3 { x, w, b })
    }
    pub fn mean_pixels(&mut self, x: Var) -> Var {
        self.push(Op::MeanPixels(x))
    }
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        self.push(Op::Linear { x, w, b })
    }
    pub fn softmax(&mut self, x: Var) -> Var {
        self.push(Op::Softmax(x))
    }
    pub fn pixel_matmul(&mut self, x: Var, m: Var) -> Var {
        self.push(Op::PixelMatmul { x, m })
    }
    pub fn pinv3(&mut self, m: Var) -> Var {
        self.push(Op::Pinv3(m))
    }
    /// `Σ_i w_i · atoms[i]`, output shaped like one atom.
    pub fn matvec(&mut self, w: Var, atoms: Var) -> Var {
        self.push(Op::MatVec { w, atoms })
    }
    /// Slice along the leading axis: element `index` of a stacked tensor.
    pub fn select(&mut self, x: Var, index: usize) -> Var {
        let per: usize = self.value(x).shape[1..].iter().product();
        self.push(Op::Slice { x, start: index * per })
    }
    pub fn concat_channels(&mut self, parts: Vec<Var>) -> Var {
        self.push(Op::ConcatChannels(parts))
    }
    pub fn wb_effective(&mut self, g: Var) -> Var {
        self.push(Op::WbEffective(g))
    }
    pub fn channel_scale(&mut self, x: Var, g: Var) -> Var {
        self.push(Op::ChannelScale { x, g })
    }
    pub fn safe_invert(&mut self, x: Var, g: Var, threshold: f64) -> Var {
        self.push(Op::SafeInvert { x, g, threshold })
    }
    pub fn gamma(&mut self, x: Var, gamma: Var, eps: f64, inverse: bool) -> Var {
        self.push(Op::Gamma { x, gamma, eps, inverse })
    }
    pub fn mask_mul(&mut self, x: Var, m: Var) -> Var {
        self.push(Op::MaskMul { x, m })
    }
    pub fn mask_div(&mut self, x: Var, m: Var, clamp_max: f64) -> Var {
        self.push(Op::MaskDiv { x, m, clamp_max })
    }
    /// Gaussian lens-shading mask `[h, w]` rendered over the full frame.
    pub fn gaussian_mask(&mut self, mu: Var, chol: Var, floor: f64, h: usize, w: usize) -> Var {
        self.push(Op::GaussianMask { mu, chol, floor, h, w })
    }
    pub fn crop(&mut self, x: Var, y0: usize, x0: usize, h: usize, w: usize) -> Var {
        self.push(Op::Crop { x, y0, x0, h, w })
    }
    pub fn mosaic(&mut self, x: Var, pattern: MosaicPattern) -> Var {
        self.push(Op::Mosaic { x, pattern })
    }
    pub fn demosaic(&mut self, x: Var, pattern: MosaicPattern) -> Var {
        self.push(Op::Demosaic { x, pattern })
    }

    /// Re-evaluates every node from its recorded inputs.
    pub fn replay(&self) -> Vec<Tensor> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                _ => compute(&node.op, |v| &values[v.0]),
            };
            values.push(v);
        }
        values
    }

    /// Hash of every discrete branch taken (ReLU signs, clamps, arg-max).
    /// Two evaluations with equal signatures lie in the same smooth region.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Relu(x) => hash_bits(&mut h, val(*x).data.iter().map(|&v| v > 0.0)),
                Op::Gamma { x, eps, .. } => hash_bits(&mut h, val(*x).data.iter().map(|&v| v > *eps)),
                Op::SafeInvert { x, g, threshold } => {
                    let gv = &val(*g).data;
                    hash_bits(&mut h, gv.iter().map(|&k| 1.0 / k > 1.0));
                    for &v in &val(*x).data {
                        h.write_u8(u8::from(v > *threshold) + u8::from(v >= 1.0));
                    }
                }
                Op::MaskDiv { x, m, clamp_max } => {
                    let (xv, mv) = (&val(*x).data, &val(*m).data);
                    let c = xv.len() / mv.len();
                    hash_bits(&mut h, xv.iter().enumerate().map(|(j, v)| {
                        let r = v / mv[j / c];
                        (0.0..=*clamp_max).contains(&r)
                    }));
                }
                Op::GaussianMask { .. } => {
                    let argmax = node
                        .value
                        .data
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b })
                        .0;
                    h.write_usize(i);
                    h.write_usize(argmax);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = &self.nodes[loss.0].value.shape;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NotScalar(shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        let mut out = Gradients::default();
        for (name, v) in &self.params {
            if v.0 <= loss.0 && self.nodes[v.0].requires_grad {
                if let Some(g) = grads[v.0].take() {
                    let shape = self.nodes[v.0].value.shape.clone();
                    out.by_name.insert(name.clone(), Tensor { shape, data: g });
                }
            }
        }
        Ok(out)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &DiffNode, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&val(*a).data, &val(*b).data);
                if self.needs(*a) {
                    acc(*a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                }
                if self.needs(*b) {
                    acc(*b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
            }
            Op::Affine(x, s, _) => acc(*x, g.iter().map(|v| v * s).collect()),
            Op::Relu(x) => {
                let xv = &val(*x).data;
                acc(*x, g.iter().zip(xv).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Sigmoid(x) => {
                acc(*x, g.iter().zip(&out.data).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Sum(x) => acc(*x, vec![g[0]; val(*x).numel()]),
            Op::Mse(a, b) => {
                let (av, bv) = (&val(*a).data, &val(*b).data);
                let k = 2.0 * g[0] / av.len() as f64;
                let d: Vec<f64> = av.iter().zip(bv).map(|(a, b)| k * (a - b)).collect();
                if self.needs(*b) {
                    acc(*b, d.iter().map(|v| -v).collect());
                }
                acc(*a, d);
            }
            Op::SquaredNorm(x) => acc(*x, val(*x).data.iter().map(|v| 2.0 * v * g[0]).collect()),
            Op::WeightedSum(terms) => {
                for (v, w) in terms {
                    acc(*v, vec![w * g[0]]);
                }
            }
            Op::Conv1x1 { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (cin, cout) = (wv.shape[0], wv.shape[1]);
                let pixels = xv.numel() / cin;
                if self.needs(*x) {
                    let mut gx = vec![0.0; xv.numel()];
                    for p in 0..pixels {
                        let go = &g[p * cout..(p + 1) * cout];
                        let gxp = &mut gx[p * cin..(p + 1) * cin];
                        for i in 0..cin {
                            let wr = &wv.data[i * cout..(i + 1) * cout];
                            gxp[i] = wr.iter().zip(go).map(|(a, b)| a * b).sum();
                        }
                    }
                    acc(*x, gx);
                }
                if self.needs(*w) {
                    let mut gw = vec![0.0; wv.numel()];
                    for p in 0..pixels {
                        let go = &g[p * cout..(p + 1) * cout];
                        for i in 0..cin {
                            let xi = xv.data[p * cin + i];
                            if xi != 0.0 {
                                let row = &mut gw[i * cout..(i + 1) * cout];
                                row.iter_mut().zip(go).for_each(|(r, gg)| *r += xi * gg);
                            }
                        }
                    }
                    acc(*w, gw);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; cout];
                    for p in 0..pixels {
                        gb.iter_mut().zip(&g[p * cout..(p + 1) * cout]).for_each(|(a, b)| *a += b);
                    }
                    acc(*b, gb);
                }
            }
            Op::Conv3x3 { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (h, wd) = image_hw(xv);
                let (gx, gw, gb) = kernels::conv3x3_backward(&xv.data, h, wd, &wv.data, wv.shape[2], wv.shape[3], g);
                if self.needs(*x) {
                    acc(*x, gx);
                }
                if self.needs(*w) {
                    acc(*w, gw);
                }
                acc(*b, gb);
            }
            Op::MeanPixels(x) => {
                let xv = val(*x);
                let c = last_dim(xv);
                let n = (xv.numel() / c) as f64;
                let mut gx = Vec::with_capacity(xv.numel());
                for _ in 0..xv.numel() / c {
                    gx.extend(g.iter().map(|v| v / n));
                }
                acc(*x, gx);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (cin, cout) = (wv.shape[0], wv.shape[1]);
                if self.needs(*x) {
                    acc(*x, (0..cin).map(|i| (0..cout).map(|o| wv.data[i * cout + o] * g[o]).sum()).collect());
                }
                if self.needs(*w) {
                    let mut gw = Vec::with_capacity(cin * cout);
                    for i in 0..cin {
                        gw.extend(g.iter().map(|go| xv.data[i] * go));
                    }
                    acc(*w, gw);
                }
                acc(*b, g.to_vec());
            }
            Op::Softmax(x) => {
                let dot: f64 = g.iter().zip(&out.data).map(|(a, b)| a * b).sum();
                acc(*x, out.data.iter().zip(g).map(|(y, g)| y * (g - dot)).collect());
            }
            Op::PixelMatmul { x, m } => {
                let (xv, mv) = (&val(*x).data, mat3(val(*m)));
                if self.needs(*x) {
                    let mt = stages::linalg::transpose3(&mv);
                    acc(*x, pixel_matmul(g, &mt));
                }
                if self.needs(*m) {
                    let mut gm = vec![0.0; 9];
                    for (px, gp) in xv.chunks_exact(3).zip(g.chunks_exact(3)) {
                        for i in 0..3 {
                            for j in 0..3 {
                                gm[i * 3 + j] += px[i] * gp[j];
                            }
                        }
                    }
                    acc(*m, gm);
                }
            }
            Op::Pinv3(m) => {
                // d(M⁻¹) = -M⁻¹ dM M⁻¹  =>  ∇M = -Pᵀ G Pᵀ
                let p = mat3(out);
                let pt = stages::linalg::transpose3(&p);
                let gm = stages::linalg::matmul3(&stages::linalg::matmul3(&pt, &mat3_slice(g)), &pt);
                acc(*m, gm.iter().flatten().map(|v| -v).collect());
            }
            Op::MatVec { w, atoms } => {
                let (wv, av) = (&val(*w).data, &val(*atoms).data);
                let k = g.len();
                if self.needs(*w) {
                    acc(*w, (0..wv.len()).map(|i| av[i * k..(i + 1) * k].iter().zip(g).map(|(a, b)| a * b).sum()).collect());
                }
                if self.needs(*atoms) {
                    let mut ga = Vec::with_capacity(av.len());
                    for wi in wv {
                        ga.extend(g.iter().map(|gg| wi * gg));
                    }
                    acc(*atoms, ga);
                }
            }
            Op::Slice { x, start } => {
                let mut gx = vec![0.0; val(*x).numel()];
                gx[*start..*start + g.len()].copy_from_slice(g);
                acc(*x, gx);
            }
            Op::ConcatChannels(parts) => {
                let total = last_dim(out);
                let pixels = out.numel() / total;
                let mut offset = 0;
                for p in parts {
                    let c = last_dim(val(*p));
                    if self.needs(*p) {
                        let mut gp = Vec::with_capacity(pixels * c);
                        for q in 0..pixels {
                            gp.extend_from_slice(&g[q * total + offset..q * total + offset + c]);
                        }
                        acc(*p, gp);
                    }
                    offset += c;
                }
            }
            Op::WbEffective(t) => {
                let v = &val(*t).data;
                acc(*t, vec![g[0] * v[1] + g[1] + g[2] * v[2], g[0] * v[0], g[2] * v[0]]);
            }
            Op::ChannelScale { x, g: s } => {
                let (xv, sv) = (val(*x), &val(*s).data);
                let c = sv.len();
                if self.needs(*x) {
                    acc(*x, scale_channels(g, c, sv));
                }
                if self.needs(*s) {
                    let mut gs = vec![0.0; c];
                    for (px, gp) in xv.data.chunks_exact(c).zip(g.chunks_exact(c)) {
                        for k in 0..c {
                            gs[k] += px[k] * gp[k];
                        }
                    }
                    acc(*s, gs);
                }
            }
            Op::SafeInvert { x, g: geff, threshold } => {
                let (xv, gv) = (&val(*x).data, &val(*geff).data);
                let t = *threshold;
                let mut gx = vec![0.0; xv.len()];
                let mut gg = [0.0; 3];
                for (j, (&xj, &go)) in xv.iter().zip(g).enumerate() {
                    let c = j % 3;
                    let v = 1.0 / gv[c];
                    let vmax = v.max(1.0);
                    let r = ((xj - t).max(0.0) / (1.0 - t)).min(1.0);
                    let a = r * r;
                    let k = (1.0 - a) * v + a * vmax;
                    let da = if xj > t && xj < 1.0 { 2.0 * r / (1.0 - t) } else { 0.0 };
                    gx[j] = go * (k + xj * da * (vmax - v));
                    let dk_dv = (1.0 - a) + if v > 1.0 { a } else { 0.0 };
                    gg[c] += go * xj * dk_dv * (-v * v);
                }
                acc(*x, gx);
                acc(*geff, gg.to_vec());
            }
            Op::Gamma { x, gamma, eps, inverse } => {
                let (xv, gam) = (&val(*x).data, val(*gamma).data[0]);
                let e = if *inverse { gam } else { 1.0 / gam };
                let de = if *inverse { 1.0 } else { -1.0 / (gam * gam) };
                if self.needs(*x) {
                    acc(*x, xv.iter().zip(&out.data).zip(g).map(|((&x, &y), &go)| if x > *eps { go * e * y / x } else { 0.0 }).collect());
                }
                if self.needs(*gamma) {
                    let s: f64 = xv.iter().zip(&out.data).zip(g).map(|((&x, &y), &go)| go * y * x.max(*eps).ln()).sum();
                    acc(*gamma, vec![s * de]);
                }
            }
            Op::MaskMul { x, m } => {
                let (xv, mv) = (&val(*x).data, &val(*m).data);
                let c = xv.len() / mv.len();
                if self.needs(*x) {
                    acc(*x, mask_mul(g, c, mv));
                }
                if self.needs(*m) {
                    acc(*m, xv.chunks_exact(c).zip(g.chunks_exact(c)).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum()).collect());
                }
            }
            Op::MaskDiv { x, m, clamp_max } => {
                let (xv, mv) = (&val(*x).data, &val(*m).data);
                let c = xv.len() / mv.len();
                let mut gx = vec![0.0; xv.len()];
                let mut gm = vec![0.0; mv.len()];
                for (j, (&xj, &go)) in xv.iter().zip(g).enumerate() {
                    let mj = mv[j / c];
                    let r = xj / mj;
                    if (0.0..=*clamp_max).contains(&r) {
                        gx[j] = go / mj;
                        gm[j / c] -= go * r / mj;
                    }
                }
                acc(*x, gx);
                acc(*m, gm);
            }
            Op::GaussianMask { mu, chol, floor, h, w } => {
                let (h, w) = (*h, *w);
                let params = stages::GaussianMaskParams {
                    mu: [val(*mu).data[0], val(*mu).data[1]],
                    chol: [val(*chol).data[0], val(*chol).data[1], val(*chol).data[2]],
                    floor: *floor,
                };
                let (gf, best) = gaussian_field(&params, h, w);
                let peak = gf[best];
                let scale = (1.0 - floor) / peak;
                let mut e: Vec<f64> = g.iter().map(|u| u * scale).collect();
                let s: f64 = g.iter().zip(&gf).map(|(u, v)| u * v).sum();
                e[best] -= (1.0 - floor) * s / (peak * peak);
                let [l11, l21, l22] = params.chol;
                let mut gmu = [0.0; 2];
                let mut gl = [0.0; 3];
                for y in 0..h {
                    let py = (y as f64 + 0.5) / h as f64;
                    for x in 0..w {
                        let px = (x as f64 + 0.5) / w as f64;
                        let idx = y * w + x;
                        let z1 = (px - params.mu[0]) / l11;
                        let z2 = (py - params.mu[1] - l21 * z1) / l22;
                        let k = -e[idx] * gf[idx];
                        gmu[0] += k * (-z1 / l11 + z2 * l21 / (l11 * l22));
                        gmu[1] += k * (-z2 / l22);
                        gl[0] += k * (-z1 * z1 / l11 + z2 * l21 * z1 / (l11 * l22));
                        gl[1] += k * (-z2 * z1 / l22);
                        gl[2] += k * (-z2 * z2 / l22);
                    }
                }
                acc(*mu, gmu.to_vec());
                acc(*chol, gl.to_vec());
            }
            Op::Crop { x, y0, x0, h, w } => {
                let xv = val(*x);
                let (h, w) = (*h, *w);
                let fw = xv.shape[1];
                let c: usize = xv.shape[2..].iter().product();
                let mut gx = vec![0.0; xv.numel()];
                for y in 0..h {
                    let src = ((y0 + y) * fw + x0) * c;
                    gx[src..src + w * c].copy_from_slice(&g[y * w * c..(y + 1) * w * c]);
                }
                acc(*x, gx);
            }
            Op::Mosaic { x, pattern } => {
                let (h, w) = image_hw(out);
                let mut gx = vec![0.0; h * w * 3];
                for y in 0..h {
                    for xx in 0..w {
                        gx[(y * w + xx) * 3 + pattern.channel_at(y, xx).index()] = g[y * w + xx];
                    }
                }
                acc(*x, gx);
            }
            Op::Demosaic { x, pattern } => {
                let (h, w) = image_hw(out);
                acc(*x, demosaic_adjoint(g, h, w, *pattern));
            }
        }
    }
}

fn mat3_slice(d: &[f64]) -> Mat3 {
    [[d[0], d[1], d[2]], [d[3], d[4], d[5]], [d[6], d[7], d[8]]]
}

fn hash_bits(h: &mut DefaultHasher, bits: impl Iterator<Item = bool>) {
    let mut word = 0u64;
    let mut n = 0;
    for b in bits {
        word = (word << 1) | u64::from(b);
        n += 1;
        if n == 64 {
            h.write_u64(word);
            word = 0;
            n = 0;
        }
    }
    h.write_u64(word);
    h.write_usize(n);
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => vec![*a, *b],
        Op::Affine(x, ..)
        | Op::Relu(x)
        | Op::Sigmoid(x)
        | Op::Sum(x)
        | Op::SquaredNorm(x)
        | Op::MeanPixels(x)
        | Op::Softmax(x)
        | Op::Pinv3(x)
        | Op::WbEffective(x)
        | Op::Slice { x, .. }
        | Op::Crop { x, .. }
        | Op::Mosaic { x, .. }
        | Op::Demosaic { x, .. } => vec![*x],
        Op::WeightedSum(t) => t.iter().map(|(v, _)| *v).collect(),
        Op::ConcatChannels(p) => p.clone(),
        Op::Conv1x1 { x, w, b } | Op::Conv3x3 { x, w, b } | Op::Linear { x, w, b } => vec![*x, *w, *b],
        Op::PixelMatmul { x, m } | Op::MaskMul { x, m } | Op::MaskDiv { x, m, .. } => vec![*x, *m],
        Op::MatVec { w, atoms } => vec![*w, *atoms],
        Op::ChannelScale { x, g } | Op::SafeInvert { x, g, .. } => vec![*x, *g],
        Op::Gamma { x, gamma, .. } => vec![*x, *gamma],
        Op::GaussianMask { mu, chol, .. } => vec![*mu, *chol],
    }
}

/// Forward evaluation given a lookup for input values.
fn compute<'a>(op: &Op, get: impl Fn(Var) -> &'a Tensor) -> Tensor {
    let t = |shape: Vec<usize>, data: Vec<f64>| Tensor { shape, data };
    let same = |x: Var, data: Vec<f64>| Tensor { shape: get(x).shape.clone(), data };
    match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::Add(a, b) => same(*a, get(*a).data.iter().zip(&get(*b).data).map(|(x, y)| x + y).collect()),
        Op::Sub(a, b) => same(*a, get(*a).data.iter().zip(&get(*b).data).map(|(x, y)| x - y).collect()),
        Op::Mul(a, b) => same(*a, get(*a).data.iter().zip(&get(*b).data).map(|(x, y)| x * y).collect()),
        Op::Affine(x, s, c) => same(*x, get(*x).data.iter().map(|v| s * v + c).collect()),
        Op::Relu(x) => same(*x, kernels::relu(&get(*x).data)),
        Op::Sigmoid(x) => same(*x, kernels::sigmoid(&get(*x).data)),
        Op::Sum(x) => Tensor::scalar(get(*x).data.iter().sum()),
        Op::Mse(a, b) => Tensor::scalar(crate::imagecore::mse_slices(&get(*a).data, &get(*b).data)),
        Op::SquaredNorm(x) => Tensor::scalar(get(*x).data.iter().map(|v| v * v).sum()),
        Op::WeightedSum(terms) => Tensor::scalar(terms.iter().map(|(v, w)| w * get(*v).data[0]).sum()),
        Op::Conv1x1 { x, w, b } => {
            let (xv, wv) = (get(*x), get(*w));
            let (cin, cout) = (wv.shape[0], wv.shape[1]);
            let mut shape = xv.shape.clone();
            *shape.last_mut().unwrap() = cout;
            t(shape, kernels::conv1x1(&xv.data, cin, &wv.data, cout, &get(*b).data))
        }
        Op::Conv3x3 { x, w, b } => {
            let (xv, wv) = (get(*x), get(*w));
            let (h, wd) = image_hw(xv);
            let (cin, cout) = (wv.shape[2], wv.shape[3]);
            t(vec![h, wd, cout], kernels::conv3x3(&xv.data, h, wd, cin, &wv.data, cout, &get(*b).data))
        }
        Op::MeanPixels(x) => {
            let xv = get(*x);
            let c = last_dim(xv);
            t(vec![c], kernels::mean_pixels(&xv.data, c))
        }
        Op::Linear { x, w, b } => {
            let wv = get(*w);
            t(vec![wv.shape[1]], kernels::linear(&get(*x).data, &wv.data, wv.shape[1], &get(*b).data))
        }
        Op::Softmax(x) => same(*x, kernels::softmax(&get(*x).data)),
        Op::PixelMatmul { x, m } => same(*x, pixel_matmul(&get(*x).data, &mat3(get(*m)))),
        Op::Pinv3(m) => t(vec![3, 3], pinv3(&mat3(get(*m))).iter().flatten().copied().collect()),
        Op::MatVec { w, atoms } => {
            let (wv, av) = (get(*w), get(*atoms));
            let k: usize = av.shape[1..].iter().product();
            let mut out = vec![0.0; k];
            for (i, wi) in wv.data.iter().enumerate() {
                out.iter_mut().zip(&av.data[i * k..(i + 1) * k]).for_each(|(o, a)| *o += wi * a);
            }
            t(av.shape[1..].to_vec(), out)
        }
        Op::Slice { x, start } => {
            let xv = get(*x);
            let per: usize = xv.shape[1..].iter().product();
            t(xv.shape[1..].to_vec(), xv.data[*start..start + per].to_vec())
        }
        Op::ConcatChannels(parts) => {
            let first = get(parts[0]);
            let pixels = first.numel() / last_dim(first);
            let total: usize = parts.iter().map(|p| last_dim(get(*p))).sum();
            let mut data = Vec::with_capacity(pixels * total);
            for q in 0..pixels {
                for p in parts {
                    let pv = get(*p);
                    let c = last_dim(pv);
                    data.extend_from_slice(&pv.data[q * c..(q + 1) * c]);
                }
            }
            let mut shape = first.shape.clone();
            *shape.last_mut().unwrap() = total;
            t(shape, data)
        }
        Op::WbEffective(g) => {
            let v = &get(*g).data;
            t(vec![3], vec![v[0] * v[1], v[0], v[0] * v[2]])
        }
        Op::ChannelScale { x, g } => {
            let gv = &get(*g).data;
            same(*x, scale_channels(&get(*x).data, gv.len(), gv))
        }
        Op::SafeInvert { x, g, threshold } => same(*x, safe_invert_kernel(&get(*x).data, &get(*g).data, *threshold)),
        Op::Gamma { x, gamma, eps, inverse } => {
            let gam = get(*gamma).data[0];
            let e = if *inverse { gam } else { 1.0 / gam };
            same(*x, gamma_kernel(&get(*x).data, e, *eps))
        }
        Op::MaskMul { x, m } => {
            let xv = get(*x);
            let mv = &get(*m).data;
            same(*x, mask_mul(&xv.data, xv.numel() / mv.len(), mv))
        }
        Op::MaskDiv { x, m, clamp_max } => {
            let xv = get(*x);
            let mv = &get(*m).data;
            same(*x, mask_div(&xv.data, xv.numel() / mv.len(), mv, *clamp_max))
        }
        Op::GaussianMask { mu, chol, floor, h, w } => {
            let (h, w) = (*h, *w);
            let (m, c) = (&get(*mu).data, &get(*chol).data);
            let p = stages::GaussianMaskParams { mu: [m[0], m[1]], chol: [c[0], c[1], c[2]], floor: *floor };
            let (g, best) = gaussian_field(&p, h, w);
            let peak = g[best];
            t(vec![h, w], g.iter().map(|v| floor + (1.0 - floor) * (v / peak)).collect())
        }
        Op::Crop { x, y0, x0, h, w } => {
            let (h, w) = (*h, *w);
            let xv = get(*x);
            let fw = xv.shape[1];
            let c: usize = xv.shape[2..].iter().product();
            let mut data = Vec::with_capacity(h * w * c);
            for y in 0..h {
                let src = ((y0 + y) * fw + x0) * c;
                data.extend_from_slice(&xv.data[src..src + w * c]);
            }
            let mut shape = vec![h, w];
            shape.extend_from_slice(&xv.shape[2..]);
            t(shape, data)
        }
        Op::Mosaic { x, pattern } => {
            let xv = get(*x);
            let (h, w) = image_hw(xv);
            t(vec![h, w, 1], mosaic_kernel(&xv.data, h, w, *pattern))
        }
        Op::Demosaic { x, pattern } => {
            let xv = get(*x);
            let (h, w) = image_hw(xv);
            t(vec![h, w, 3], demosaic_kernel(&xv.data, h, w, *pattern))
        }
    }
}
