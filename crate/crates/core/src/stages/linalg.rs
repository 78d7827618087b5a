//! Fixed-size 3x3 helpers for colour matrices.

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose3(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn det3(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Cofactor inverse; `None` when the matrix is numerically singular.
pub fn inverse3(a: &Mat3) -> Option<Mat3> {
    let det = det3(a);
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || det.abs() <= 1e-14 * scale.powi(3) {
        return None;
    }
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    let adj = [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = adj[i][j] / det;
        }
    }
    Some(out)
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, V)` with eigenvectors in the columns of `V`.
fn symmetric_eigen(s: &Mat3) -> ([f64; 3], Mat3) {
    let mut a = *s;
    let mut v = IDENTITY3;
    for _ in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off < 1e-300 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s_ = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s_ * akq;
                a[k][q] = s_ * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s_ * aqk;
                a[q][k] = s_ * apk + c * aqk;
            }
            for k in 0..3 {
                let (vkp, vkq) = (v[k][p], v[k][q]);
                v[k][p] = c * vkp - s_ * vkq;
                v[k][q] = s_ * vkp + c * vkq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// Moore-Penrose pseudo-inverse through the normal equations `(AᵀA)⁺ Aᵀ`.
///
/// The Gram matrix is inverted directly when well conditioned and through its
/// eigen-decomposition otherwise, so the result is defined for every input.
pub fn pinv3(a: &Mat3) -> Mat3 {
    let at = transpose3(a);
    let gram = matmul3(&at, a);
    if let Some(inv) = inverse3(&gram) {
        return matmul3(&inv, &at);
    }
    let (vals, v) = symmetric_eigen(&gram);
    let top = vals.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = top * 1e-12;
    let mut gram_pinv = [[0.0; 3]; 3];
    for k in 0..3 {
        if vals[k] > tol {
            for i in 0..3 {
                for j in 0..3 {
                    gram_pinv[i][j] += v[i][k] * v[j][k] / vals[k];
                }
            }
        }
    }
    matmul3(&gram_pinv, &at)
}
