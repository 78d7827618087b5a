//! CCM and white-balance dictionaries, decomposition weights and
//! augmentation sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::imagecore::{Image, RgbImage};
use crate::nets::kernels::softmax;
use crate::stages::{
    apply_ccm, apply_gains, invert_ccm, safe_invert_gains, Ccm, Direction, WbGains,
};
use crate::tensor::Tensor;

/// Convex-combination weights over the atoms of a dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub w: Vec<f64>,
}

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        WeightVector { w: vec![1.0 / n as f64; n] }
    }

    pub fn one_hot(n: usize, j: usize) -> Self {
        let mut w = vec![0.0; n];
        w[j] = 1.0;
        WeightVector { w }
    }

    pub fn from_logits(z: &[f64]) -> Self {
        WeightVector { w: softmax(z) }
    }

    /// Checked constructor: entries non-negative, summing to one within 1e-6.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        let v = WeightVector { w };
        v.validate()?;
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.is_empty() {
            return Err(Error::InvalidParam("empty weight vector".into()));
        }
        let s: f64 = self.w.iter().sum();
        if self.w.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParam(format!("weights not on the simplex (sum {s})")));
        }
        Ok(())
    }
}

fn check_len(n: usize, w: &WeightVector) -> Result<()> {
    if w.len() != n {
        return Err(Error::Dimension(format!("{} weights for {n} atoms", w.len())));
    }
    Ok(())
}

/// `N` colour-correction matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CcmDictionary {
    pub atoms: Vec<Ccm>,
}

impl CcmDictionary {
    /// Identity plus uniform noise in `[0, noise)`, then projected.
    pub fn init(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParam("dictionary needs at least one atom".into()));
        }
        let atoms = (0..n)
            .map(|_| {
                let mut m = crate::stages::linalg::IDENTITY3;
                for row in m.iter_mut() {
                    for v in row.iter_mut() {
                        *v += if noise > 0.0 { rng.random_range(0.0..noise) } else { 0.0 };
                    }
                }
                Ccm::new(m)
            })
            .collect();
        project_ccm_dictionary(&CcmDictionary { atoms })
    }

    pub fn n(&self) -> usize {
        self.atoms.len()
    }

    /// Atoms as an `[N, 3, 3]` tensor.
    pub fn tensor(&self) -> Tensor {
        let data = self.atoms.iter().flat_map(|a| a.flat()).collect();
        Tensor { shape: vec![self.n(), 3, 3], data }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape.len() != 3 || t.shape[1..] != [3, 3] {
            return Err(Error::Dimension(format!("CCM dictionary tensor shape {:?}", t.shape)));
        }
        Ok(CcmDictionary { atoms: t.data.chunks_exact(9).map(Ccm::from_flat).collect() })
    }

    /// Columns non-negative with unit ℓ1 norm, within `tol`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        for (a, atom) in self.atoms.iter().enumerate() {
            for j in 0..3 {
                let col: Vec<f64> = (0..3).map(|i| atom.m[i][j]).collect();
                if col.iter().any(|v| *v < 0.0) || (col.iter().sum::<f64>() - 1.0).abs() > tol {
                    return Err(Error::InvalidParam(format!("CCM atom {a} column {j} = {col:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Clamp entries to be non-negative, then ℓ1-normalise each column.
pub fn project_ccm_dictionary(d: &CcmDictionary) -> Result<CcmDictionary> {
    let mut atoms = d.atoms.clone();
    for (a, atom) in atoms.iter_mut().enumerate() {
        for j in 0..3 {
            let mut s = 0.0;
            for i in 0..3 {
                atom.m[i][j] = atom.m[i][j].max(0.0);
                s += atom.m[i][j];
            }
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::DegenerateAtom { atom: a, column: j });
            }
            for i in 0..3 {
                atom.m[i][j] /= s;
            }
        }
    }
    Ok(CcmDictionary { atoms })
}

pub fn combine_ccm(d: &CcmDictionary, w: &WeightVector) -> Result<Ccm> {
    check_len(d.n(), w)?;
    let mut m = [[0.0; 3]; 3];
    for (atom, &wi) in d.atoms.iter().zip(&w.w) {
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += wi * atom.m[i][j];
            }
        }
    }
    Ok(Ccm::new(m))
}

/// `N` gain triplets `(g_d, g_r, g_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WbDictionary {
    pub atoms: Vec<WbGains>,
}

/// Lower bound applied to WB atoms after each optimiser step.
pub const WB_MIN_GAIN: f64 = 1e-3;

impl WbDictionary {
    /// Entries drawn from `U(1, 2)`.
    pub fn init(n: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParam("dictionary needs at least one atom".into()));
        }
        let atoms = (0..n)
            .map(|_| WbGains::from_triplet([rng.random_range(1.0..2.0), rng.random_range(1.0..2.0), rng.random_range(1.0..2.0)]))
            .collect();
        Ok(WbDictionary { atoms })
    }

    pub fn n(&self) -> usize {
        self.atoms.len()
    }

    pub fn tensor(&self) -> Tensor {
        let data = self.atoms.iter().flat_map(|a| a.triplet()).collect();
        Tensor { shape: vec![self.n(), 3], data }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape.len() != 2 || t.shape[1] != 3 {
            return Err(Error::Dimension(format!("WB dictionary tensor shape {:?}", t.shape)));
        }
        Ok(WbDictionary { atoms: t.data.chunks_exact(3).map(|c| WbGains::from_triplet([c[0], c[1], c[2]])).collect() })
    }

    pub fn check_invariants(&self) -> Result<()> {
        for (a, g) in self.atoms.iter().enumerate() {
            if !g.triplet().iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("WB atom {a} = {:?}", g.triplet())));
            }
        }
        Ok(())
    }
}

pub fn combine_wb(d: &WbDictionary, w: &WeightVector) -> Result<WbGains> {
    check_len(d.n(), w)?;
    let mut t = [0.0; 3];
    for (atom, &wi) in d.atoms.iter().zip(&w.w) {
        for (acc, v) in t.iter_mut().zip(atom.triplet()) {
            *acc += wi * v;
        }
    }
    Ok(WbGains::from_triplet(t))
}

/// Either dictionary, for candidate expansion.
#[derive(Debug, Clone, Copy)]
pub enum DictRef<'a> {
    Ccm(&'a CcmDictionary),
    Wb(&'a WbDictionary),
}

/// One image per atom: the stage applied with that atom alone. Reverse CCM
/// candidates use the pseudo-inverse, reverse WB candidates the safe inversion
/// with highlight threshold `threshold`.
pub fn expand_candidates(x: &RgbImage, d: DictRef<'_>, direction: Direction, threshold: f64) -> Result<Vec<Image>> {
    match d {
        DictRef::Ccm(d) => d
            .atoms
            .iter()
            .map(|a| match direction {
                Direction::Forward => apply_ccm(x, a),
                Direction::Reverse => invert_ccm(x, a),
            })
            .collect(),
        DictRef::Wb(d) => d
            .atoms
            .iter()
            .map(|g| match direction {
                Direction::Forward => apply_gains(x, g),
                Direction::Reverse => safe_invert_gains(x, g, threshold),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentationMode {
    PerturbOptimal,
    SampleConvex,
}

impl std::str::FromStr for AugmentationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perturb" | "perturb-optimal" => Ok(AugmentationMode::PerturbOptimal),
            "convex" | "sample-convex" => Ok(AugmentationMode::SampleConvex),
            other => Err(Error::InvalidPolicy(format!("unknown augmentation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    pub noise_std: f64,
    pub mode: AugmentationMode,
    pub k: usize,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy { noise_std: 0.1, mode: AugmentationMode::PerturbOptimal, k: 1, seed: 0 }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidPolicy(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        if self.k == 0 {
            return Err(Error::InvalidPolicy("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws `policy.k` weight vectors. Perturb mode adds Gaussian noise to the
/// log-weights and renormalises with a softmax; convex mode samples a flat
/// Dirichlet over `n` atoms.
pub fn sample_augmented_weights(w_opt: Option<&WeightVector>, n: usize, policy: &AugmentationPolicy) -> Result<Vec<WeightVector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    sample_augmented_weights_with(w_opt, n, policy, &mut rng)
}

pub fn sample_augmented_weights_with(
    w_opt: Option<&WeightVector>,
    n: usize,
    policy: &AugmentationPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<WeightVector>> {
    policy.validate()?;
    if n == 0 {
        return Err(Error::InvalidPolicy("no atoms to weight".into()));
    }
    match policy.mode {
        AugmentationMode::PerturbOptimal => {
            let w = w_opt.ok_or_else(|| Error::InvalidPolicy("perturb mode needs optimal weights".into()))?;
            check_len(n, w)?;
            w.validate()?;
            if policy.noise_std == 0.0 {
                return Ok(vec![w.clone(); policy.k]);
            }
            let logw: Vec<f64> = w.w.iter().map(|v| v.ln()).collect();
            Ok((0..policy.k)
                .map(|_| {
                    let z: Vec<f64> = logw
                        .iter()
                        .map(|l| {
                            let e: f64 = StandardNormal.sample(rng);
                            l + policy.noise_std * e
                        })
                        .collect();
                    WeightVector::from_logits(&z)
                })
                .collect())
        }
        AugmentationMode::SampleConvex => Ok((0..policy.k)
            .map(|_| {
                let g: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
                let s: f64 = g.iter().sum();
                WeightVector { w: g.iter().map(|v| v / s).collect() }
            })
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn projection_example_and_idempotence() {
        let m = [[2.0, 0.2, 0.0], [1.0, 0.6, 0.1], [1.0, 0.2, 0.9]];
        let d = CcmDictionary { atoms: vec![Ccm::new(m)] };
        let p = project_ccm_dictionary(&d).unwrap();
        assert_eq!([p.atoms[0].m[0][0], p.atoms[0].m[1][0], p.atoms[0].m[2][0]], [0.5, 0.25, 0.25]);
        let pp = project_ccm_dictionary(&p).unwrap();
        for (a, b) in p.atoms[0].flat().iter().zip(pp.atoms[0].flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_column_after_clamp_is_degenerate() {
        let m = [[-1.0, 1.0, 1.0], [-0.5, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let d = CcmDictionary { atoms: vec![Ccm::IDENTITY, Ccm::new(m)] };
        assert!(matches!(project_ccm_dictionary(&d), Err(Error::DegenerateAtom { atom: 1, column: 0 })));
    }

    #[test]
    fn random_projection_column_sums() {
        let mut r = rng(1);
        let atoms = (0..6)
            .map(|_| {
                let mut m = [[0.0f64; 3]; 3];
                m.iter_mut().flatten().for_each(|v| *v = r.random_range(-0.2..1.5));
                for j in 0..3 {
                    m[j][j] = m[j][j].abs() + 0.1;
                }
                Ccm::new(m)
            })
            .collect();
        let p = project_ccm_dictionary(&CcmDictionary { atoms }).unwrap();
        for a in &p.atoms {
            for j in 0..3 {
                let s = a.m[0][j] + a.m[1][j] + a.m[2][j];
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn combine_ccm_cases() {
        let d = CcmDictionary::init(4, 0.3, &mut rng(2)).unwrap();
        for j in 0..4 {
            assert_eq!(combine_ccm(&d, &WeightVector::one_hot(4, j)).unwrap(), d.atoms[j]);
        }
        let same = CcmDictionary { atoms: vec![d.atoms[1]; 3] };
        let c = combine_ccm(&same, &WeightVector::new(vec![0.2, 0.5, 0.3]).unwrap()).unwrap();
        for (a, b) in c.flat().iter().zip(d.atoms[1].flat()) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = WeightVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let c = combine_ccm(&d, &w).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += w.w[k] * d.atoms[k].m[i][j];
                }
                assert!((c.m[i][j] - s).abs() < 1e-15);
            }
        }
        assert!(combine_ccm(&d, &WeightVector::uniform(3)).is_err());
    }

    #[test]
    fn combine_wb_cases() {
        let d = WbDictionary {
            atoms: vec![WbGains::new(1.0, 1.0, 1.0).unwrap(), WbGains::new(1.0, 3.0, 1.0).unwrap()],
        };
        assert_eq!(combine_wb(&d, &WeightVector::uniform(2)).unwrap().triplet(), [1.0, 2.0, 1.0]);
        assert_eq!(combine_wb(&d, &WeightVector::one_hot(2, 1)).unwrap(), d.atoms[1]);
        let init = WbDictionary::init(8, &mut rng(3)).unwrap();
        assert!(init.atoms.iter().flat_map(|g| g.triplet()).all(|v| (1.0..2.0).contains(&v)));
    }

    #[test]
    fn candidates_match_stage_calls() {
        let mut r = rng(4);
        let x = RgbImage::from_fn(4, 4, |_, _, _| r.random_range(0.05..0.8)).unwrap();
        let mut d = CcmDictionary::init(3, 0.4, &mut rng(5)).unwrap();
        let c = expand_candidates(&x, DictRef::Ccm(&d), Direction::Reverse, 0.9).unwrap();
        for (img, a) in c.iter().zip(&d.atoms) {
            assert_eq!(*img, invert_ccm(&x, a).unwrap());
        }
        d.atoms[0] = Ccm::IDENTITY;
        let c = expand_candidates(&x, DictRef::Ccm(&d), Direction::Forward, 0.9).unwrap();
        assert_eq!(c[0], *x);
        let wb = WbDictionary::init(1, &mut rng(6)).unwrap();
        let c = expand_candidates(&x, DictRef::Wb(&wb), Direction::Forward, 0.9).unwrap();
        assert_eq!(c, vec![apply_gains(&x, &wb.atoms[0]).unwrap()]);
    }

    #[test]
    fn zero_noise_copies_optimum() {
        let w = WeightVector::new(vec![0.7, 0.2, 0.1]).unwrap();
        let p = AugmentationPolicy { noise_std: 0.0, k: 3, ..Default::default() };
        assert_eq!(sample_augmented_weights(Some(&w), 3, &p).unwrap(), vec![w.clone(); 3]);
    }

    #[test]
    fn convex_single_atom() {
        let p = AugmentationPolicy { mode: AugmentationMode::SampleConvex, k: 5, ..Default::default() };
        for w in sample_augmented_weights(None, 1, &p).unwrap() {
            assert_eq!(w.w, vec![1.0]);
        }
    }

    #[test]
    fn samples_on_simplex_and_deterministic() {
        for mode in [AugmentationMode::PerturbOptimal, AugmentationMode::SampleConvex] {
            let p = AugmentationPolicy { noise_std: 0.5, mode, k: 10_000, seed: 9 };
            let w = WeightVector::from_logits(&[0.1, 1.0, -0.5, 0.3]);
            let a = sample_augmented_weights(Some(&w), 4, &p).unwrap();
            for s in &a {
                assert!(s.w.iter().all(|v| *v >= 0.0));
                assert!((s.w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
            assert_eq!(a, sample_augmented_weights(Some(&w), 4, &p).unwrap());
        }
    }

    #[test]
    fn invalid_policies() {
        let w = WeightVector::uniform(2);
        let bad_k = AugmentationPolicy { k: 0, ..Default::default() };
        assert!(matches!(sample_augmented_weights(Some(&w), 2, &bad_k), Err(Error::InvalidPolicy(_))));
        let bad_s = AugmentationPolicy { noise_std: -1.0, ..Default::default() };
        assert!(sample_augmented_weights(Some(&w), 2, &bad_s).is_err());
        assert!(sample_augmented_weights(None, 2, &AugmentationPolicy::default()).is_err());
    }
}
