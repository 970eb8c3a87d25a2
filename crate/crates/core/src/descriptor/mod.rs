//! MAC and R-MAC descriptors, query cropping in activation space and the
//! similarity-contribution diagnostics.

mod database;
mod geometry;
mod rmac;

pub use database::{DescriptorDb, DB_MAGIC, DB_VERSION};
pub use geometry::{contribution_patches, crop_activations, receptive_geometry, BBox, NetGeometry, Patch};
pub use rmac::{rmac, rmac_regions, Region, RegionGrid};

use crate::backbone::ActivationTensor;
use crate::error::{Error, Result};
use crate::numeric::{dot, Real};

/// Norms below this are treated as zero by [`l2n`].
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Vec<f64>,
    normalized: bool,
}

impl Descriptor {
    pub fn raw(values: Vec<f64>) -> Self {
        Descriptor {
            values,
            normalized: false,
        }
    }

    /// Wraps values that are already unit-norm (or all zero).
    pub fn normalized(values: Vec<f64>) -> Self {
        Descriptor {
            values,
            normalized: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

/// `f_k = max over the map of x·1(x>0)`.
pub fn mac<T: Real>(x: &ActivationTensor<T>) -> Descriptor {
    Descriptor::raw(
        (0..x.maps())
            .map(|k| {
                x.map(k)
                    .iter()
                    .fold(0.0f64, |m, &v| if v.f64() > m { v.f64() } else { m })
            })
            .collect(),
    )
}

/// Per map, the linear tensor index of the cell carrying `f_k`, or `None`
/// when `f_k = 0`. Ties resolve to the lowest linear index.
pub fn mac_argmax<T: Real>(x: &ActivationTensor<T>) -> Vec<Option<usize>> {
    let n = x.width() * x.height();
    (0..x.maps())
        .map(|k| {
            let mut best: Option<(usize, T)> = None;
            for (i, &v) in x.map(k).iter().enumerate() {
                if v > T::zero() && best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            best.map(|(i, _)| k * n + i)
        })
        .collect()
}

/// Routes `grad_f` back onto the activation tensor.
pub fn mac_backward<T: Real>(x: &ActivationTensor<T>, grad_f: &[f64]) -> ActivationTensor<T> {
    let mut g = ActivationTensor::zeros(x.width(), x.height(), x.maps());
    for (arg, &gk) in mac_argmax(x).into_iter().zip(grad_f) {
        if let Some(i) = arg {
            g.data_mut()[i] = T::of(gk);
        }
    }
    g
}

pub fn l2n(f: &Descriptor) -> Descriptor {
    let n = f.norm();
    if n < ZERO_NORM {
        return Descriptor::normalized(vec![0.0; f.dim()]);
    }
    Descriptor::normalized(f.values.iter().map(|v| v / n).collect())
}

pub fn similarity(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "descriptor dims {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(dot(&a.values, &b.values))
}

/// The `n` largest per-map products `a_k·b_k`, descending, ties by lower map index.
pub fn top_contributions(a: &Descriptor, b: &Descriptor, n: usize) -> Result<Vec<(usize, f64)>> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "descriptor dims {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let mut c: Vec<(usize, f64)> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .enumerate()
        .collect();
    c.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    c.truncate(n);
    Ok(c)
}
