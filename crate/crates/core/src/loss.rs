//! Siamese losses on normalized descriptors and the normalization backward pass.

use crate::descriptor::{Descriptor, ZERO_NORM};
use crate::error::{Error, Result};
use crate::numeric::{dot, norm2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairLabel {
    NonMatching = 0,
    Matching = 1,
}

impl PairLabel {
    pub fn value(self) -> f64 {
        self as u8 as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Contrastive,
    Triplet,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(LossKind::Contrastive),
            "triplet" => Ok(LossKind::Triplet),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Contrastive margin on the descriptor distance.
    pub tau: f64,
    pub triplet_margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.7,
            triplet_margin: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.triplet_margin > 0.0) {
            return Err(Error::Config("loss margins must be positive".into()));
        }
        Ok(())
    }
}

fn same_dims(ds: &[&Descriptor]) -> Result<()> {
    let k = ds[0].dim();
    if ds.iter().any(|d| d.dim() != k) {
        return Err(Error::Dimension("descriptor dims differ".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// `½·y·d² + ½·(1−y)·max(0, τ−d)²` with `d = ‖a−b‖`.
pub fn contrastive_loss(a: &Descriptor, b: &Descriptor, y: PairLabel, tau: f64) -> Result<PairLoss> {
    same_dims(&[a, b])?;
    let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    let d = norm2(&diff);
    let (loss, scale) = match y {
        PairLabel::Matching => (0.5 * d * d, 1.0),
        PairLabel::NonMatching => {
            if d >= tau {
                (0.0, 0.0)
            } else if d == 0.0 {
                (0.5 * tau * tau, 0.0)
            } else {
                (0.5 * (tau - d).powi(2), -(tau - d) / d)
            }
        }
    };
    let grad_a: Vec<f64> = diff.iter().map(|v| scale * v).collect();
    let grad_b = grad_a.iter().map(|v| -v).collect();
    Ok(PairLoss { loss, grad_a, grad_b })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    pub grad_q: Vec<f64>,
    pub grad_p: Vec<f64>,
    pub grad_n: Vec<f64>,
}

/// `max(0, margin + ‖q−p‖² − ‖q−n‖²)`.
pub fn triplet_loss(q: &Descriptor, p: &Descriptor, n: &Descriptor, margin: f64) -> Result<TripletLoss> {
    same_dims(&[q, p, n])?;
    let qp: Vec<f64> = q.values().iter().zip(p.values()).map(|(a, b)| a - b).collect();
    let qn: Vec<f64> = q.values().iter().zip(n.values()).map(|(a, b)| a - b).collect();
    let raw = margin + dot(&qp, &qp) - dot(&qn, &qn);
    let k = q.dim();
    if raw <= 0.0 {
        return Ok(TripletLoss {
            loss: 0.0,
            grad_q: vec![0.0; k],
            grad_p: vec![0.0; k],
            grad_n: vec![0.0; k],
        });
    }
    Ok(TripletLoss {
        loss: raw,
        grad_q: qp.iter().zip(&qn).map(|(a, b)| 2.0 * (a - b)).collect(),
        grad_p: qp.iter().map(|a| -2.0 * a).collect(),
        grad_n: qn.iter().map(|b| 2.0 * b).collect(),
    })
}

/// Jacobian-vector product of `f ↦ f/‖f‖`: `(g − f̄⟨f̄, g⟩)/‖f‖`.
pub fn l2n_backward(f: &[f64], upstream: &[f64]) -> Vec<f64> {
    let n = norm2(f);
    if n < ZERO_NORM {
        return vec![0.0; f.len()];
    }
    let unit: Vec<f64> = f.iter().map(|v| v / n).collect();
    let radial = dot(&unit, upstream);
    upstream
        .iter()
        .zip(&unit)
        .map(|(g, u)| (g - u * radial) / n)
        .collect()
}
