//! Image → descriptor extraction: resizing, the backbone, MAC or R-MAC
//! pooling, optional projection and the query cropping modes.

use crate::backbone::{ActivationTensor, Image, Network};
use crate::descriptor::{crop_activations, l2n, mac, receptive_geometry, rmac, rmac_regions, BBox, Descriptor, NetGeometry};
use crate::error::{Error, Result};
use crate::image::{crop_pixels, prepare};
use crate::whitening::{apply_projection, ProjectionKind, ProjectionModel};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Mac,
    Rmac { scales: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    /// Whole image, bbox ignored.
    Full,
    /// Crop pixels, then extract.
    CropI,
    /// Extract on the whole image, then keep activations inside the bbox.
    CropX,
}

impl std::str::FromStr for CropMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(CropMode::Full),
            "crop_i" | "cropi" => Ok(CropMode::CropI),
            "crop_x" | "cropx" => Ok(CropMode::CropX),
            other => Err(Error::Config(format!("unknown crop mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Extractor<'a> {
    pub net: &'a Network<f32>,
    pub pooling: Pooling,
    /// Model and output dimension. PCAw is applied per region under R-MAC,
    /// Lw after aggregation.
    pub projection: Option<(&'a ProjectionModel, usize)>,
    pub max_side: usize,
    geometry: NetGeometry,
}

impl<'a> Extractor<'a> {
    pub fn new(net: &'a Network<f32>, max_side: usize) -> Self {
        Extractor {
            net,
            pooling: Pooling::Mac,
            projection: None,
            max_side,
            geometry: receptive_geometry(&net.spec),
        }
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn with_projection(mut self, model: &'a ProjectionModel, dim: usize) -> Result<Self> {
        if model.dim() != self.net.output_dim() {
            return Err(Error::Dimension(format!(
                "projection of dim {} for a network with {} output maps",
                model.dim(),
                self.net.output_dim()
            )));
        }
        if dim == 0 || dim > model.dim() {
            return Err(Error::Dimension(format!("output dim {dim} outside 1..={}", model.dim())));
        }
        self.projection = Some((model, dim));
        Ok(self)
    }

    pub fn geometry(&self) -> &NetGeometry {
        &self.geometry
    }

    pub fn output_dim(&self) -> usize {
        self.projection.map_or(self.net.output_dim(), |(_, d)| d)
    }

    pub fn activations(&self, image: &Image) -> Result<ActivationTensor<f32>> {
        self.net.infer(&prepare(image, self.max_side))
    }

    pub fn pool(&self, x: &ActivationTensor<f32>) -> Result<Descriptor> {
        match (self.pooling, self.projection) {
            (Pooling::Mac, None) => Ok(l2n(&mac(x))),
            (Pooling::Mac, Some((m, d))) => apply_projection(m, &l2n(&mac(x)), d),
            (Pooling::Rmac { scales }, proj) => {
                let grid = rmac_regions(x.width(), x.height(), scales);
                match proj {
                    None => rmac(x, &grid, None),
                    Some((m, d)) if m.kind == ProjectionKind::PcaW => rmac(x, &grid, Some((m, d))),
                    Some((m, d)) => apply_projection(m, &rmac(x, &grid, None)?, d),
                }
            }
        }
    }

    pub fn describe(&self, image: &Image) -> Result<Descriptor> {
        self.pool(&self.activations(image)?)
    }

    /// Descriptor of an input already passed through [`prepare`].
    pub fn describe_prepared(&self, input: &Image) -> Result<Descriptor> {
        self.pool(&self.net.infer(input)?)
    }

    /// Descriptor for a query under the given cropping mode. `bbox` is in the
    /// original image's pixel coordinates.
    pub fn describe_query(&self, image: &Image, bbox: Option<&BBox>, mode: CropMode) -> Result<Descriptor> {
        let bbox = match (mode, bbox) {
            (CropMode::Full, _) => return self.describe(image),
            (_, None) => return Err(Error::Protocol("crop mode requires a bounding box".into())),
            (_, Some(b)) => {
                b.validate(image.width(), image.height())?;
                b
            }
        };
        match mode {
            CropMode::CropI => self.describe(&crop_pixels(image, bbox)?),
            CropMode::CropX => {
                let x = self.activations(image)?;
                let long = image.width().max(image.height());
                let scaled = if long > self.max_side && self.max_side > 0 {
                    let s = self.max_side as f64 / long as f64;
                    let f = |v: usize| (v as f64 * s).round() as usize;
                    BBox::new(f(bbox.x0), f(bbox.y0), f(bbox.x1).max(f(bbox.x0) + 1), f(bbox.y1).max(f(bbox.y0) + 1))
                } else {
                    *bbox
                };
                self.pool(&crop_activations(&x, &scaled, &self.geometry)?)
            }
            CropMode::Full => unreachable!(),
        }
    }

    /// Descriptors for many images, in input order.
    pub fn describe_all(&self, images: &[&Image]) -> Result<Vec<Descriptor>> {
        images.par_iter().map(|img| self.describe(img)).collect()
    }
}
