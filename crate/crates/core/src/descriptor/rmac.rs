use super::{l2n, mac, Descriptor};
use crate::backbone::ActivationTensor;
use crate::error::{Error, Result};
use crate::numeric::Real;
use crate::whitening::{apply_projection, ProjectionModel};

/// Square region in activation coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionGrid {
    pub scales: usize,
    pub width: usize,
    pub height: usize,
    pub regions: Vec<Region>,
}

fn axis_starts(dim: usize, side: usize) -> Vec<usize> {
    // count = max(1, ceil((dim - side) / (0.6 side)) + 1), with 0.6 = 3/5 kept exact
    let gap = dim - side;
    let count = (5 * gap).div_ceil(3 * side) + 1;
    if count == 1 {
        return vec![0];
    }
    (0..count).map(|i| i * gap / (count - 1)).collect()
}

/// Multi-scale square grid: at scale `l` the side is `max(1, ⌊2·min(w,h)/(l+1)⌋)`
/// and neighbouring regions overlap by at least 40%.
pub fn rmac_regions(width: usize, height: usize, scales: usize) -> RegionGrid {
    let mut regions = Vec::new();
    let short = width.min(height);
    for l in 1..=scales {
        let side = (2 * short / (l + 1)).max(1);
        let xs = axis_starts(width, side);
        let ys = axis_starts(height, side);
        for &y in &ys {
            for &x in &xs {
                regions.push(Region { x, y, side });
            }
        }
    }
    RegionGrid {
        scales,
        width,
        height,
        regions,
    }
}

/// Sum of per-region normalized MACs, optionally projected per region, then
/// normalized. `region_transform` carries a model and its output dimension.
pub fn rmac<T: Real>(
    x: &ActivationTensor<T>,
    grid: &RegionGrid,
    region_transform: Option<(&ProjectionModel, usize)>,
) -> Result<Descriptor> {
    if grid.regions.is_empty() {
        return Err(Error::Grid("empty region grid".into()));
    }
    let mut sum: Option<Vec<f64>> = None;
    for r in &grid.regions {
        if r.side == 0 || r.x + r.side > x.width() || r.y + r.side > x.height() {
            return Err(Error::Grid(format!(
                "region {r:?} outside {}x{} activations",
                x.width(),
                x.height()
            )));
        }
        let window = x.window(r.x, r.y, r.x + r.side, r.y + r.side)?;
        let mut v = l2n(&mac(&window));
        if let Some((model, d)) = region_transform {
            v = apply_projection(model, &v, d)?;
        }
        match &mut sum {
            None => sum = Some(v.into_values()),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(v.values()) {
                    *a += b;
                }
            }
        }
    }
    Ok(l2n(&Descriptor::raw(sum.unwrap_or_default())))
}
