use super::{mac_argmax, top_contributions, Descriptor};
use crate::backbone::{ActivationTensor, LayerSpec, NetSpec};
use crate::error::{Error, Result};
use crate::numeric::Real;
use serde::{Deserialize, Serialize};

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BBox::new(0, 0, width, height)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height {
            Ok(())
        } else {
            Err(Error::Protocol(format!(
                "bbox {self:?} invalid for a {width}x{height} image"
            )))
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Mapping from final activation cells to input pixels: cell `u` is centred
/// at `offset + u·stride` and sees `receptive_field` pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetGeometry {
    pub stride: usize,
    pub receptive_field: usize,
    pub offset: f64,
}

pub fn receptive_geometry(spec: &NetSpec) -> NetGeometry {
    let (mut r, mut j, mut o) = (1usize, 1usize, 0.0f64);
    for layer in spec.layers() {
        let (k, s, p) = match *layer {
            LayerSpec::Conv {
                kernel, stride, pad, ..
            } => (kernel, stride, pad),
            LayerSpec::MaxPool { window, stride } => (window, stride, 0),
            LayerSpec::Relu => continue,
        };
        r += (k - 1) * j;
        o += ((k as f64 - 1.0) / 2.0 - p as f64) * j as f64;
        j *= s;
    }
    NetGeometry {
        stride: j,
        receptive_field: r,
        offset: o,
    }
}

/// Cells along one axis whose centres fall in `[lo, hi)`, as a half-open range.
fn axis_cells(cells: usize, lo: usize, hi: usize, stride: usize, offset: f64) -> (usize, usize) {
    let centre = |u: usize| offset + (u * stride) as f64;
    let inside: Vec<usize> = (0..cells)
        .filter(|&u| centre(u) >= lo as f64 && centre(u) < hi as f64)
        .collect();
    match (inside.first(), inside.last()) {
        (Some(&a), Some(&b)) => (a, b + 1),
        _ => {
            let mid = 0.5 * (lo as f64 + hi as f64);
            let mut best = 0;
            for u in 1..cells {
                if (centre(u) - mid).abs() < (centre(best) - mid).abs() {
                    best = u;
                }
            }
            (best, best + 1)
        }
    }
}

/// Keeps the activation cells whose centres lie inside `bbox` (input pixel
/// coordinates); at least one cell per axis survives.
pub fn crop_activations<T: Real>(
    x: &ActivationTensor<T>,
    bbox: &BBox,
    geometry: &NetGeometry,
) -> Result<ActivationTensor<T>> {
    let (u0, u1) = axis_cells(x.width(), bbox.x0, bbox.x1, geometry.stride, geometry.offset);
    let (v0, v1) = axis_cells(x.height(), bbox.y0, bbox.y1, geometry.stride, geometry.offset);
    x.window(u0, v0, u1, v1)
}

/// Pixel-space square of one receptive field for a contributing map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    pub map: usize,
    pub contribution: f64,
    /// Centre pixel `(x, y)` of the argmax cell in each image.
    pub centre_a: (f64, f64),
    pub centre_b: (f64, f64),
    pub side: usize,
}

/// For the `n` maps contributing most to `⟨a, b⟩`, the receptive-field
/// patches around each image's maximum activation.
pub fn contribution_patches<T: Real>(
    xa: &ActivationTensor<T>,
    xb: &ActivationTensor<T>,
    a: &Descriptor,
    b: &Descriptor,
    n: usize,
    geometry: &NetGeometry,
) -> Result<Vec<Patch>> {
    let arg_a = mac_argmax(xa);
    let arg_b = mac_argmax(xb);
    let centre = |x: &ActivationTensor<T>, idx: usize| {
        let cell = idx % (x.width() * x.height());
        let (u, v) = (cell % x.width(), cell / x.width());
        (
            geometry.offset + (u * geometry.stride) as f64,
            geometry.offset + (v * geometry.stride) as f64,
        )
    };
    let mut out = Vec::new();
    for (k, c) in top_contributions(a, b, n)? {
        if let (Some(Some(ia)), Some(Some(ib))) = (arg_a.get(k), arg_b.get(k)) {
            out.push(Patch {
                map: k,
                contribution: c,
                centre_a: centre(xa, *ia),
                centre_b: centre(xb, *ib),
                side: geometry.receptive_field,
            });
        }
    }
    Ok(out)
}
