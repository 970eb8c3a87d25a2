//! Descriptor post-processing: learned discriminative whitening (`Lw`), the
//! PCA-whitening baseline (`PCAw`), projection and dimensionality reduction.
//!
//! `Lw` whitens with the inverse square root of the matching-pair difference
//! covariance `C_S`, then rotates onto the eigenvectors of the whitened
//! non-matching covariance `C_S^{-1/2} C_D C_S^{-1/2}`. The projection is
//! `P = C_S^{-1/2} · eigvecs`, applied as `Pᵀ(f̄ − μ)` and re-normalized.
//! Both covariances are unnormalized sums; the overall scale cancels in the
//! final normalization.

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::descriptor::{l2n, Descriptor};
use crate::error::{Error, Result};
use crate::numeric::{inv_sqrt_psd_ranked, sym_eig, Matrix};
use std::path::Path;

pub const PROJECTION_MAGIC: &[u8; 4] = b"MFPW";
pub const PROJECTION_VERSION: u32 = 1;

/// Relative eigenvalue cutoff for the pseudo-inverse square roots.
pub const RCOND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    Lw,
    PcaW,
}

impl ProjectionKind {
    fn code(self) -> u8 {
        match self {
            ProjectionKind::Lw => 0,
            ProjectionKind::PcaW => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub kind: ProjectionKind,
    pub mean: Vec<f64>,
    /// `K×K`, columns ordered by descending `spectrum`.
    pub projection: Matrix,
    pub spectrum: Vec<f64>,
}

impl ProjectionModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(dim: usize, kind: ProjectionKind) -> Self {
        ProjectionModel {
            kind,
            mean: vec![0.0; dim],
            projection: Matrix::identity(dim),
            spectrum: vec![1.0; dim],
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let k = self.dim();
        let mut w = Writer::default();
        w.bytes(PROJECTION_MAGIC);
        w.u32(PROJECTION_VERSION);
        w.u8(self.kind.code());
        w.u32(k as u32);
        for &m in &self.mean {
            w.f64(m);
        }
        for j in 0..k {
            for i in 0..k {
                w.f64(self.projection[(i, j)]);
            }
        }
        for &s in &self.spectrum {
            w.f64(s);
        }
        w.buf
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(PROJECTION_MAGIC)?;
        let version = r.u32()?;
        if version != PROJECTION_VERSION {
            return Err(r.err(format!("unsupported projection version {version}")));
        }
        let kind = match r.u8()? {
            0 => ProjectionKind::Lw,
            1 => ProjectionKind::PcaW,
            other => return Err(r.err(format!("unknown projection kind {other}"))),
        };
        let k = r.u32()? as usize;
        if k > 1 << 14 {
            return Err(r.err(format!("implausible dimension {k}")));
        }
        let mean = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mut projection = Matrix::zeros(k, k);
        for j in 0..k {
            for i in 0..k {
                projection[(i, j)] = r.f64()?;
            }
        }
        let spectrum = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        if !projection.is_finite() || mean.iter().chain(&spectrum).any(|v| !v.is_finite()) {
            return Err(Error::format(path, "non-finite projection values"));
        }
        Ok(ProjectionModel {
            kind,
            mean,
            projection,
            spectrum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?, path)
    }
}

fn check_dims<'a>(vectors: impl Iterator<Item = &'a [f64]>, dim: usize) -> Result<()> {
    for v in vectors {
        if v.len() != dim {
            return Err(Error::Dimension(format!("vector of dim {} among dim {dim}", v.len())));
        }
    }
    Ok(())
}

/// `Σ (a − b)(a − b)ᵀ` over the pairs.
pub fn pair_covariance(pairs: &[(Descriptor, Descriptor)], dim: usize) -> Matrix {
    let mut c = Matrix::zeros(dim, dim);
    let mut diff = vec![0.0; dim];
    for (a, b) in pairs {
        for ((d, x), y) in diff.iter_mut().zip(a.values()).zip(b.values()) {
            *d = x - y;
        }
        c.add_outer(&diff, 1.0);
    }
    c
}

pub fn fit_lw(
    matching: &[(Descriptor, Descriptor)],
    non_matching: &[(Descriptor, Descriptor)],
    mean_source: &[Descriptor],
) -> Result<ProjectionModel> {
    let first = matching
        .first()
        .ok_or_else(|| Error::Dimension("at least one matching pair required".into()))?;
    if non_matching.is_empty() {
        return Err(Error::Dimension("at least one non-matching pair required".into()));
    }
    if mean_source.is_empty() {
        return Err(Error::Dimension("empty mean source".into()));
    }
    let k = first.0.dim();
    check_dims(
        matching
            .iter()
            .chain(non_matching)
            .flat_map(|(a, b)| [a.values(), b.values()])
            .chain(mean_source.iter().map(|d| d.values())),
        k,
    )?;

    let cs = pair_covariance(matching, k);
    let whitening = inv_sqrt_psd_ranked(&cs, RCOND)?;
    if whitening.rank < k {
        log::warn!(
            "matching-pair covariance has rank {} < {k}; using pseudo-inverse square root",
            whitening.rank
        );
    }
    let cd = pair_covariance(non_matching, k);
    let w = &whitening.matrix;
    let whitened = w.matmul(&cd)?.matmul(w)?;
    let rotation = sym_eig(&whitened)?;
    let projection = w.matmul(&rotation.vectors)?;
    Ok(ProjectionModel {
        kind: ProjectionKind::Lw,
        mean: mean_vector(mean_source, k),
        projection,
        spectrum: rotation.values,
    })
}

fn mean_vector(vs: &[Descriptor], k: usize) -> Vec<f64> {
    let mut mu = vec![0.0; k];
    for v in vs {
        for (m, x) in mu.iter_mut().zip(v.values()) {
            *m += x;
        }
    }
    let n = vs.len() as f64;
    mu.iter_mut().for_each(|m| *m /= n);
    mu
}

/// Whitening from the covariance `(1/n)·Σ (v−μ)(v−μ)ᵀ` of all vectors.
pub fn fit_pcaw(vectors: &[Descriptor]) -> Result<ProjectionModel> {
    if vectors.len() < 2 {
        return Err(Error::Dimension("PCA whitening needs at least two vectors".into()));
    }
    let k = vectors[0].dim();
    check_dims(vectors.iter().map(|d| d.values()), k)?;
    let mean = mean_vector(vectors, k);
    let mut c = Matrix::zeros(k, k);
    let mut centred = vec![0.0; k];
    for v in vectors {
        for ((d, x), m) in centred.iter_mut().zip(v.values()).zip(&mean) {
            *d = x - m;
        }
        c.add_outer(&centred, 1.0 / vectors.len() as f64);
    }
    let eig = sym_eig(&c)?;
    let lambda_max = eig.values[0].max(0.0);
    let mut projection = Matrix::zeros(k, k);
    let mut rank = 0;
    for (j, &l) in eig.values.iter().enumerate() {
        if l > RCOND * lambda_max && l > 0.0 {
            rank += 1;
            let s = 1.0 / l.sqrt();
            for i in 0..k {
                projection[(i, j)] = eig.vectors[(i, j)] * s;
            }
        }
    }
    if rank == 0 {
        log::warn!("descriptor covariance has rank 0; projection is zero");
    } else if rank < k {
        log::warn!("descriptor covariance has rank {rank} < {k}");
    }
    Ok(ProjectionModel {
        kind: ProjectionKind::PcaW,
        mean,
        projection,
        spectrum: eig.values,
    })
}

/// `P_{:,1..d}ᵀ (v − μ)` before normalization.
pub fn project_raw(model: &ProjectionModel, v: &Descriptor, d: usize) -> Result<Vec<f64>> {
    let k = model.dim();
    if d == 0 || d > k {
        return Err(Error::Dimension(format!("output dim {d} outside 1..={k}")));
    }
    if v.dim() != k {
        return Err(Error::Dimension(format!(
            "descriptor of dim {} against a dim {k} projection",
            v.dim()
        )));
    }
    let centred: Vec<f64> = v.values().iter().zip(&model.mean).map(|(x, m)| x - m).collect();
    Ok((0..d)
        .map(|j| (0..k).map(|i| model.projection[(i, j)] * centred[i]).sum())
        .collect())
}

pub fn apply_projection(model: &ProjectionModel, v: &Descriptor, d: usize) -> Result<Descriptor> {
    Ok(l2n(&Descriptor::raw(project_raw(model, v, d)?)))
}
