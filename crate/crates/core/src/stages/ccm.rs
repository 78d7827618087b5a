use super::linalg::{pinv3, Mat3, IDENTITY3};
use crate::error::Result;
use crate::imagecore::Image;

/// Colour correction matrix applied as `row_pixel × m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ccm {
    pub m: Mat3,
}

impl Ccm {
    pub const IDENTITY: Ccm = Ccm { m: IDENTITY3 };

    pub fn new(m: Mat3) -> Self {
        Ccm { m }
    }

    /// ℓ1 norm of column `j`.
    pub fn column_l1(&self, j: usize) -> f64 {
        (0..3).map(|i| self.m[i][j].abs()).sum()
    }

    pub fn pinv(&self) -> Ccm {
        Ccm { m: pinv3(&self.m) }
    }

    pub fn flat(&self) -> [f64; 9] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn from_flat(v: &[f64]) -> Ccm {
        Ccm { m: [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]] }
    }
}

pub(crate) fn pixel_matmul(data: &[f64], m: &Mat3) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for px in data.chunks_exact(3) {
        for j in 0..3 {
            out.push(px[0] * m[0][j] + px[1] * m[1][j] + px[2] * m[2][j]);
        }
    }
    out
}

pub fn apply_ccm(x: &Image, c: &Ccm) -> Result<Image> {
    x.require_channels(3)?;
    Ok(Image { data: pixel_matmul(&x.data, &c.m), ..x.clone_header() })
}

/// Reverse colour correction through the pseudo-inverse of `c`.
pub fn invert_ccm(x: &Image, c: &Ccm) -> Result<Image> {
    x.require_channels(3)?;
    Ok(Image { data: pixel_matmul(&x.data, &pinv3(&c.m)), ..x.clone_header() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Gauss-Jordan elimination with partial pivoting, independent of linalg.
    fn gauss_inverse(a: &Mat3) -> Mat3 {
        let mut aug = [[0.0; 6]; 3];
        for i in 0..3 {
            aug[i][..3].copy_from_slice(&a[i]);
            aug[i][3 + i] = 1.0;
        }
        for col in 0..3 {
            let piv = (col..3).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs())).unwrap();
            aug.swap(col, piv);
            let d = aug[col][col];
            for v in aug[col].iter_mut() {
                *v /= d;
            }
            for r in 0..3 {
                if r != col {
                    let f = aug[r][col];
                    for k in 0..6 {
                        aug[r][k] -= f * aug[col][k];
                    }
                }
            }
        }
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            out[i].copy_from_slice(&aug[i][3..]);
        }
        out
    }

    #[test]
    fn identity_matrix_is_identity_map() {
        let img = Image::from_fn(2, 2, 3, |y, x, c| 0.1 + 0.2 * y as f64 + 0.05 * x as f64 + 0.01 * c as f64);
        assert_eq!(apply_ccm(&img, &Ccm::IDENTITY).unwrap(), img);
        assert_eq!(invert_ccm(&img, &Ccm::IDENTITY).unwrap(), img);
    }

    #[test]
    fn normalized_ccm_preserves_white() {
        let c = Ccm::new([[0.7, 0.1, 0.2], [0.2, 0.8, 0.1], [0.1, 0.1, 0.7]]);
        let white = Image::filled(1, 1, 3, 1.0);
        for v in apply_ccm(&white, &c).unwrap().data {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn random_round_trip_matches_gauss_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut m = [[0.0; 3]; 3];
            for (i, row) in m.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = rng.random_range(-0.3..0.3) + if i == j { 1.0 } else { 0.0 };
                }
            }
            let c = Ccm::new(m);
            let inv = gauss_inverse(&m);
            let p = c.pinv();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((p.m[i][j] - inv[i][j]).abs() < 1e-9);
                }
            }
            let img = Image::from_fn(4, 4, 3, |_, _, _| rng.random());
            let back = invert_ccm(&apply_ccm(&img, &c).unwrap(), &c).unwrap();
            for (a, b) in img.data.iter().zip(&back.data) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }
}
