use crate::error::{Error, Result};
use crate::numeric::Real;

/// `W×H×K` activations stored map-major: index `(k·H + y)·W + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor<T> {
    width: usize,
    height: usize,
    maps: usize,
    data: Vec<T>,
}

impl<T: Real> ActivationTensor<T> {
    pub fn zeros(width: usize, height: usize, maps: usize) -> Self {
        ActivationTensor {
            width,
            height,
            maps,
            data: vec![T::zero(); width * height * maps],
        }
    }

    pub fn from_vec(width: usize, height: usize, maps: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * maps {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height}x{maps} tensor",
                data.len()
            )));
        }
        Ok(ActivationTensor {
            width,
            height,
            maps,
            data,
        })
    }

    /// Builds a tensor from per-map row-major grids (`maps[k][y][x]`).
    pub fn from_maps(maps: &[Vec<Vec<T>>]) -> Result<Self> {
        let k = maps.len();
        let h = maps.first().map_or(0, |m| m.len());
        let w = maps.first().and_then(|m| m.first()).map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(w * h * k);
        for m in maps {
            if m.len() != h || m.iter().any(|r| r.len() != w) {
                return Err(Error::Dimension("ragged feature maps".into()));
            }
            for row in m {
                data.extend_from_slice(row);
            }
        }
        Self::from_vec(w, h, k, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn maps(&self) -> usize {
        self.maps
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.maps)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index_of(&self, x: usize, y: usize, k: usize) -> usize {
        (k * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, k: usize) -> T {
        self.data[self.index_of(x, y, k)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, k: usize, v: T) {
        let i = self.index_of(x, y, k);
        self.data[i] = v;
    }

    pub fn map(&self, k: usize) -> &[T] {
        let n = self.width * self.height;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ActivationTensor<U> {
        ActivationTensor {
            width: self.width,
            height: self.height,
            maps: self.maps,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Sub-window `[x0, x1) × [y0, y1)` over all maps.
    pub fn window(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(Error::Dimension(format!(
                "window [{x0},{x1})x[{y0},{y1}) outside {}x{}",
                self.width, self.height
            )));
        }
        let (w, h) = (x1 - x0, y1 - y0);
        let mut data = Vec::with_capacity(w * h * self.maps);
        for k in 0..self.maps {
            for y in y0..y1 {
                let start = self.index_of(x0, y, k);
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Ok(ActivationTensor {
            width: w,
            height: h,
            maps: self.maps,
            data,
        })
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.f64() * b.f64())
            .sum()
    }
}
