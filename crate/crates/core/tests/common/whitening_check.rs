//! Identities a learned whitening must satisfy on its own training pairs.

use macforge::descriptor::Descriptor;
use macforge::numeric::{Matrix, SeededStream};
use macforge::whitening::{fit_lw, pair_covariance};

#[derive(Debug, Clone)]
pub struct Identities {
    pub dim: usize,
    pub pairs: usize,
    /// `max|PᵀC_SP − I| / max|PᵀC_SP|`.
    pub whitened_dev: f64,
    /// Largest off-diagonal of `PᵀC_DP` over its largest entry.
    pub off_diag: f64,
    /// Largest increase along the diagonal of `PᵀC_DP`, relative.
    pub order_violation: f64,
}

impl Identities {
    pub fn passed(&self) -> bool {
        self.whitened_dev < 1e-8 && self.off_diag < 1e-8 && self.order_violation < 1e-8
    }
}

fn sandwich(p: &Matrix, c: &Matrix) -> Matrix {
    p.transpose().matmul(c).unwrap().matmul(p).unwrap()
}

/// Matching pairs are small anisotropic perturbations, non-matching pairs independent draws.
pub fn random_pairs(s: &mut SeededStream, k: usize, n: usize) -> (Vec<(Descriptor, Descriptor)>, Vec<(Descriptor, Descriptor)>) {
    let scales: Vec<f64> = (0..k).map(|_| s.uniform(0.05, 0.5)).collect();
    let draw = |s: &mut SeededStream| -> Vec<f64> { (0..k).map(|_| s.normal()).collect() };
    let mut matching = Vec::with_capacity(n);
    let mut non = Vec::with_capacity(n);
    for _ in 0..n {
        let a = draw(s);
        let b: Vec<f64> = a.iter().zip(&scales).map(|(x, sc)| x + sc * s.normal()).collect();
        matching.push((Descriptor::raw(a), Descriptor::raw(b)));
        let (c, d) = (draw(s), draw(s));
        non.push((Descriptor::raw(c), Descriptor::raw(d)));
    }
    (matching, non)
}

pub fn identities(seed: u64, k: usize) -> Identities {
    let mut s = SeededStream::new(seed, 0).derive_named("whitening-identities").derive(k as u64);
    let n = 10 * k;
    let (matching, non) = random_pairs(&mut s, k, n);
    let means: Vec<Descriptor> = matching.iter().map(|p| p.0.clone()).collect();
    let model = fit_lw(&matching, &non, &means).unwrap();
    let p = &model.projection;
    let ws = sandwich(p, &pair_covariance(&matching, k));
    let wd = sandwich(p, &pair_covariance(&non, k));
    let dev = ws.sub(&Matrix::identity(k)).unwrap().max_abs() / ws.max_abs();
    let scale = wd.max_abs();
    let mut off = 0.0f64;
    let mut order = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                off = off.max(wd[(i, j)].abs());
            }
        }
        if i > 0 {
            order = order.max(wd[(i, i)] - wd[(i - 1, i - 1)]);
        }
    }
    Identities {
        dim: k,
        pairs: n,
        whitened_dev: dev,
        off_diag: off / scale,
        order_violation: order / scale,
    }
}

/// The 2-D example: matching differences (2,0) and (0,1), non-matching (0,3).
/// Returns the fitted projection with each column's sign fixed so its
/// largest-magnitude entry is positive.
pub fn hand_example() -> Matrix {
    let pair = |x: f64, y: f64| (Descriptor::raw(vec![x, y]), Descriptor::raw(vec![0.0, 0.0]));
    let matching = vec![pair(2.0, 0.0), pair(0.0, 1.0)];
    let non = vec![pair(0.0, 3.0)];
    let means = vec![Descriptor::raw(vec![0.0, 0.0])];
    let mut p = fit_lw(&matching, &non, &means).unwrap().projection;
    for j in 0..p.cols() {
        let lead = (0..p.rows()).max_by(|&a, &b| p[(a, j)].abs().total_cmp(&p[(b, j)].abs())).unwrap();
        if p[(lead, j)] < 0.0 {
            for i in 0..p.rows() {
                p[(i, j)] = -p[(i, j)];
            }
        }
    }
    p
}

pub fn hand_example_exact() -> bool {
    let p = hand_example();
    let want = [[0.0, 0.5], [1.0, 0.0]];
    (0..2).all(|i| (0..2).all(|j| p[(i, j)] == want[i][j]))
}
