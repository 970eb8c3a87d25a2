//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use super::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;
const OFFDIAG_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues in descending order with matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::Dimension("matrix has non-finite entries".into()));
    }
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_TOL * a.max_abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Eigendecomposition of a real symmetric matrix.
///
/// Each eigenvector column is sign-normalized so that its entry of largest
/// magnitude is positive (first such entry on exact magnitude ties).
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    check_symmetric(a)?;
    let n = a.rows();
    let mut m = a.clone();
    // symmetrize exactly so the rotations can update both triangles
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    let mut v = Matrix::identity(n);
    let threshold = OFFDIAG_TOL * a.frobenius_norm();

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[(p, q)].abs());
            }
        }
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m[(r, p)];
                    let arq = m[(r, q)];
                    let np = c * arp - s * arq;
                    let nq = s * arp + c * arq;
                    m[(r, p)] = np;
                    m[(p, r)] = np;
                    m[(r, q)] = nq;
                    m[(q, r)] = nq;
                }
                m[(p, p)] -= t * apq;
                m[(q, q)] += t * apq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut lead = 0usize;
        for r in 0..n {
            if v[(r, src)].abs() > v[(lead, src)].abs() {
                lead = r;
            }
        }
        let sign = if v[(lead, src)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, dst)] = sign * v[(r, src)];
        }
    }
    Ok(SymEig { values, vectors })
}

/// Inverse square root of a symmetric PSD matrix together with its numerical rank.
#[derive(Debug, Clone)]
pub struct InvSqrt {
    pub matrix: Matrix,
    pub rank: usize,
}

/// `B = V diag(λ^{-1/2}) Vᵀ`, treating eigenvalues at or below `rcond·λ_max` as zero.
pub fn inv_sqrt_psd(a: &Matrix, rcond: f64) -> Result<Matrix> {
    inv_sqrt_psd_ranked(a, rcond).map(|r| r.matrix)
}

pub fn inv_sqrt_psd_ranked(a: &Matrix, rcond: f64) -> Result<InvSqrt> {
    let eig = sym_eig(a)?;
    let n = a.rows();
    let lambda_max = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let cutoff = rcond * lambda_max;
    let mut scales = vec![0.0; n];
    let mut rank = 0;
    for (s, &l) in scales.iter_mut().zip(&eig.values) {
        if l < -cutoff {
            return Err(Error::NotPsd(l));
        }
        if l > cutoff && l > 0.0 {
            *s = 1.0 / l.sqrt();
            rank += 1;
        }
    }
    let mut b = Matrix::zeros(n, n);
    for (k, &s) in scales.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let col = eig.vectors.column(k);
        b.add_outer(&col, s);
    }
    // enforce exact symmetry of the accumulated sum
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = s;
            b[(j, i)] = s;
        }
    }
    Ok(InvSqrt { matrix: b, rank })
}
