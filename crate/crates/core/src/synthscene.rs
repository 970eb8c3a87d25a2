//! Synthetic landmark clusters: point clouds, orbiting pinhole cameras,
//! visibility graphs and blob-splat renderings.
//!
//! Rendering is a pure function of the graph and the image id. Per-cluster
//! appearance (point palette, background texture) is keyed on the cluster id
//! and point ids; per-image nuisance (illumination, gradient wash, transient
//! distractor blobs) is keyed on the image id.

use crate::backbone::{ActivationTensor, Image};
use crate::error::{Error, Result};
use crate::image::save_ppm;
use crate::mining::{Camera, ClusterId, GraphImage, ImageId, PointId, ScenePoint, VisibilityGraph};
use crate::numeric::{splitmix64, SeededStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub clusters: usize,
    pub images_per_cluster: (usize, usize),
    pub points_per_cluster: (usize, usize),
    pub image_size: usize,
    pub camera_orbit_radius: (f64, f64),
    pub zoom_range: (f64, f64),
    pub occlusion_rate: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            clusters: 20,
            images_per_cluster: (25, 40),
            points_per_cluster: (150, 300),
            image_size: 96,
            camera_orbit_radius: (3.0, 6.0),
            zoom_range: (0.7, 1.5),
            occlusion_rate: 0.2,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.clusters == 0 {
            return bad("clusters must be at least 1".into());
        }
        let (ilo, ihi) = self.images_per_cluster;
        if ilo < 2 || ihi < ilo {
            return bad(format!("images_per_cluster {ilo}..{ihi} must satisfy 2 <= lo <= hi"));
        }
        let (plo, phi) = self.points_per_cluster;
        if plo < 1 || phi < plo {
            return bad(format!("points_per_cluster {plo}..{phi} must satisfy 1 <= lo <= hi"));
        }
        if self.image_size < 8 {
            return bad(format!("image_size {} below 8", self.image_size));
        }
        let (rlo, rhi) = self.camera_orbit_radius;
        if !(rlo > CLOUD_EXTENT && rhi >= rlo && rhi.is_finite()) {
            return bad(format!("camera_orbit_radius {rlo}..{rhi} must exceed {CLOUD_EXTENT}"));
        }
        let (zlo, zhi) = self.zoom_range;
        if !(zlo > 0.0 && zhi >= zlo && zhi.is_finite()) {
            return bad(format!("zoom_range {zlo}..{zhi} must be positive"));
        }
        if !(0.0..1.0).contains(&self.occlusion_rate) {
            return bad(format!("occlusion_rate {} outside [0, 1)", self.occlusion_rate));
        }
        Ok(())
    }
}

/// Points are kept inside a ball of this radius around the cluster origin.
const CLOUD_EXTENT: f64 = 2.0;
/// Base focal length in units of the image side, before zoom.
const FOCAL_PER_PIXEL: f64 = 1.6;
const SPLAT_SIGMA: f64 = 1.1;
const SPLAT_RADIUS: isize = 4;

fn sample_cloud(n: usize, s: &mut SeededStream) -> Vec<[f64; 3]> {
    // A few anisotropic parts, like the masses of a building.
    let parts = 2 + s.index(3);
    let centers: Vec<([f64; 3], [f64; 3])> = (0..parts)
        .map(|_| {
            let c = [s.uniform(-0.8, 0.8), s.uniform(-0.5, 0.5), s.uniform(-0.8, 0.8)];
            let e = [s.uniform(0.2, 0.7), s.uniform(0.2, 0.9), s.uniform(0.2, 0.7)];
            (c, e)
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (c, e) = centers[s.index(parts)];
        let p = [c[0] + e[0] * s.normal(), c[1] + e[1] * s.normal(), c[2] + e[2] * s.normal()];
        if p.iter().map(|v| v * v).sum::<f64>() < CLOUD_EXTENT * CLOUD_EXTENT {
            out.push(p);
        }
    }
    out
}

fn sample_camera(cfg: &SceneConfig, s: &mut SeededStream) -> Camera {
    let radius = s.uniform(cfg.camera_orbit_radius.0, cfg.camera_orbit_radius.1);
    let azimuth = s.uniform(0.0, std::f64::consts::TAU);
    let elevation = s.uniform(-0.15, 0.6);
    let center = [
        radius * elevation.cos() * azimuth.cos(),
        -radius * elevation.sin(),
        radius * elevation.cos() * azimuth.sin(),
    ];
    let target = [0.7 * s.normal(), 0.4 * s.normal(), 0.7 * s.normal()];
    let focal = FOCAL_PER_PIXEL * cfg.image_size as f64 * s.uniform(cfg.zoom_range.0, cfg.zoom_range.1);
    Camera::look_at(center, target, [0.0, -1.0, 0.0], focal)
}

/// True when `p` projects strictly inside a `size × size` frame in front of the camera.
pub fn in_frame(camera: &Camera, p: &[f64; 3], size: usize) -> bool {
    let c = size as f64 / 2.0;
    match camera.project(p, c, c) {
        Some((u, v)) => u >= 0.0 && v >= 0.0 && u < size as f64 && v < size as f64,
        None => false,
    }
}

/// Generates `cfg.clusters` disjoint clusters. Image and point ids are
/// globally unique and assigned in cluster order.
pub fn generate(cfg: &SceneConfig) -> Result<Vec<VisibilityGraph>> {
    cfg.validate()?;
    let root = SeededStream::new(cfg.seed, 0).derive_named("synthscene");
    let sizes: Vec<(usize, usize)> = (0..cfg.clusters)
        .map(|c| {
            let mut s = root.derive_named("sizes").derive(c as u64);
            let ni = s.range_inclusive(cfg.images_per_cluster.0, cfg.images_per_cluster.1);
            let np = s.range_inclusive(cfg.points_per_cluster.0, cfg.points_per_cluster.1);
            (ni, np)
        })
        .collect();
    let mut offsets = Vec::with_capacity(cfg.clusters);
    let (mut io, mut po) = (0u32, 0u32);
    for &(ni, np) in &sizes {
        offsets.push((io, po));
        io += ni as u32;
        po += np as u32;
    }
    (0..cfg.clusters)
        .into_par_iter()
        .map(|c| {
            let cs = root.derive_named("cluster").derive(c as u64);
            let (ni, np) = sizes[c];
            let (io, po) = offsets[c];
            let xyz = sample_cloud(np, &mut cs.derive_named("points"));
            let images: Vec<GraphImage> = (0..ni)
                .map(|j| GraphImage {
                    id: io + j as u32,
                    camera: sample_camera(cfg, &mut cs.derive_named("camera").derive(j as u64)),
                })
                .collect();
            let mut edges = Vec::new();
            for (j, im) in images.iter().enumerate() {
                let mut occ = cs.derive_named("occlusion").derive(j as u64);
                for (k, p) in xyz.iter().enumerate() {
                    // One draw per candidate so the stream does not depend on geometry.
                    let occluded = occ.bernoulli(cfg.occlusion_rate);
                    if in_frame(&im.camera, p, cfg.image_size) && !occluded {
                        edges.push((im.id, po + k as u32));
                    }
                }
            }
            let mut observers = vec![0usize; np];
            for &(_, p) in &edges {
                observers[(p - po) as usize] += 1;
            }
            edges.retain(|&(_, p)| observers[(p - po) as usize] >= 2);
            let points: Vec<ScenePoint> = xyz
                .iter()
                .enumerate()
                .filter(|(k, _)| observers[*k] >= 2)
                .map(|(k, &xyz)| ScenePoint { id: po + k as u32, xyz })
                .collect();
            if points.is_empty() {
                return Err(Error::Config(format!(
                    "cluster {c} has no point seen by two cameras; widen the zoom or orbit ranges"
                )));
            }
            VisibilityGraph::new(c as ClusterId, images, points, edges)
        })
        .collect()
}

/// Deterministic hash stream for render-time appearance.
struct Hash(u64);

impl Hash {
    fn new(a: u64, b: u64) -> Self {
        Hash(splitmix64(a ^ splitmix64(b.wrapping_add(0x5eed))))
    }

    fn next(&mut self) -> f64 {
        self.0 = splitmix64(self.0);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

const CLUSTER_TAG: u64 = 0xC1;
const POINT_TAG: u64 = 0xB0;
const IMAGE_TAG: u64 = 0x1A;

fn cluster_palette(cluster: ClusterId) -> [[f64; 3]; 3] {
    let mut h = Hash::new(CLUSTER_TAG, cluster as u64);
    let hue = h.next();
    let spread = h.range(0.05, 0.2);
    [
        hsv(hue, h.range(0.6, 1.0), h.range(0.6, 1.0)),
        hsv(hue + spread, h.range(0.5, 1.0), h.range(0.5, 1.0)),
        hsv(hue - spread, h.range(0.4, 0.9), h.range(0.7, 1.0)),
    ]
}

/// Color of a scene point, drawn around its cluster's palette.
pub fn point_color(cluster: ClusterId, point: PointId) -> [f64; 3] {
    let palette = cluster_palette(cluster);
    let mut h = Hash::new(POINT_TAG, ((cluster as u64) << 32) | point as u64);
    let base = palette[(h.next() * 3.0) as usize % 3];
    let j = 0.08;
    [0, 1, 2].map(|k| (base[k] + h.range(-j, j)).clamp(0.0, 1.0))
}

/// Cluster texture: an oriented two-color grating whose phase follows the
/// camera heading, so it shifts coherently across the cluster's views.
struct ClusterTexture {
    colors: [[f64; 3]; 2],
    dir: (f64, f64),
    freq: f64,
}

impl ClusterTexture {
    fn new(cluster: ClusterId) -> Self {
        let mut h = Hash::new(CLUSTER_TAG ^ 0xFF, cluster as u64);
        let hue = h.next();
        let angle = h.range(0.0, std::f64::consts::PI);
        ClusterTexture {
            colors: [hsv(hue, h.range(0.2, 0.6), h.range(0.2, 0.5)), hsv(hue + 0.5, h.range(0.2, 0.6), h.range(0.4, 0.7))],
            dir: (angle.cos(), angle.sin()),
            freq: h.range(0.08, 0.3),
        }
    }

    fn at(&self, x: f64, y: f64, phase: f64) -> [f64; 3] {
        let t = 0.5 + 0.5 * ((x * self.dir.0 + y * self.dir.1) * self.freq + phase).sin();
        [0, 1, 2].map(|k| self.colors[0][k] * (1.0 - t) + self.colors[1][k] * t)
    }
}

/// Strength of the per-image nuisance and of the cluster signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub gain: (f64, f64),
    pub wash_mix: (f64, f64),
    pub max_distractors: usize,
    pub texture: f64,
    pub splat_opacity: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            gain: (0.7, 1.15),
            wash_mix: (0.1, 0.3),
            max_distractors: 2,
            texture: 1.0,
            splat_opacity: 0.95,
        }
    }
}

/// Per-image nuisance: illumination gain, a global color wash and a few
/// transient distractor blobs with colors unrelated to the cluster.
struct Nuisance {
    gain: f64,
    wash: [[f64; 3]; 2],
    wash_dir: (f64, f64),
    wash_mix: f64,
    distractors: Vec<(f64, f64, f64, [f64; 3])>,
}

impl Nuisance {
    fn new(image: ImageId, size: usize, style: &RenderStyle) -> Self {
        let mut h = Hash::new(IMAGE_TAG, image as u64);
        let angle = h.range(0.0, std::f64::consts::TAU);
        let wash = [
            hsv(h.next(), h.range(0.0, 0.8), h.range(0.1, 0.9)),
            hsv(h.next(), h.range(0.0, 0.8), h.range(0.1, 0.9)),
        ];
        let count = (h.next() * (style.max_distractors + 1) as f64) as usize;
        let s = size as f64;
        let distractors = (0..count)
            .map(|_| {
                let c = hsv(h.next(), h.range(0.3, 1.0), h.range(0.5, 1.0));
                (h.range(0.0, s), h.range(0.0, s), h.range(2.0, 5.0), c)
            })
            .collect();
        Nuisance {
            gain: h.range(style.gain.0, style.gain.1),
            wash,
            wash_dir: (angle.cos(), angle.sin()),
            wash_mix: h.range(style.wash_mix.0, style.wash_mix.1),
            distractors,
        }
    }
}

fn blend(img: &mut [[f64; 3]], size: usize, cx: f64, cy: f64, sigma: f64, reach: isize, color: &[f64; 3], opacity: f64) {
    let (ix, iy) = (cx.floor() as isize, cy.floor() as isize);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for y in (iy - reach).max(0)..=(iy + reach).min(size as isize - 1) {
        for x in (ix - reach).max(0)..=(ix + reach).min(size as isize - 1) {
            // Pixel centers sit at half-integer coordinates.
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let a = opacity * (-(dx * dx + dy * dy) * inv).exp();
            let px = &mut img[y as usize * size + x as usize];
            for k in 0..3 {
                px[k] = px[k] * (1.0 - a) + color[k] * a;
            }
        }
    }
}

/// Splat center of `p` in image `id`, or `None` when it is not drawn.
pub fn splat_center(graph: &VisibilityGraph, id: ImageId, p: &[f64; 3], size: usize) -> Result<Option<(f64, f64)>> {
    let cam = graph.camera(id)?;
    let c = size as f64 / 2.0;
    Ok(cam.project(p, c, c))
}

/// Renders image `id` of `graph` at `size × size` pixels, values in `[0, 1]`.
pub fn render(graph: &VisibilityGraph, id: ImageId, size: usize) -> Result<Image> {
    render_styled(graph, id, size, &RenderStyle::default())
}

pub fn render_styled(graph: &VisibilityGraph, id: ImageId, size: usize, style: &RenderStyle) -> Result<Image> {
    let cam = graph.camera(id)?;
    let observed = graph.observed(id)?;
    let cluster = graph.cluster_id();
    let tex = ClusterTexture::new(cluster);
    let nz = Nuisance::new(id, size, style);
    let c = size as f64 / 2.0;

    // The grating phase follows the camera heading (third rotation row).
    let r = &cam.rotation;
    let heading = r[8].atan2(r[6]);
    let phase = heading * 4.0;
    let mut px = vec![[0.0f64; 3]; size * size];
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = tex.at(xf - c, yf - c, phase).map(|v| v * style.texture + 0.5 * (1.0 - style.texture));
            let w = ((xf - c) * nz.wash_dir.0 + (yf - c) * nz.wash_dir.1) / size as f64 + 0.5;
            let w = w.clamp(0.0, 1.0);
            let m = nz.wash_mix;
            px[y * size + x] = [0, 1, 2].map(|k| t[k] * (1.0 - m) + (nz.wash[0][k] * (1.0 - w) + nz.wash[1][k] * w) * m);
        }
    }

    // Far-to-near so nearer points cover farther ones; ties by point id.
    let mut splats: Vec<(f64, PointId, f64, f64)> = observed
        .iter()
        .filter_map(|&p| {
            let xyz = graph.point(p)?;
            let depth = cam.depth(xyz);
            cam.project(xyz, c, c).map(|(u, v)| (depth, p, u, v))
        })
        .collect();
    splats.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, p, u, v) in &splats {
        blend(&mut px, size, u, v, SPLAT_SIGMA, SPLAT_RADIUS, &point_color(cluster, p), style.splat_opacity);
    }
    for &(x, y, sigma, color) in &nz.distractors {
        blend(&mut px, size, x, y, sigma, (3.0 * sigma) as isize, &color, 0.9);
    }

    let mut img = ActivationTensor::zeros(size, size, 3);
    for y in 0..size {
        for x in 0..size {
            for k in 0..3 {
                img.set(x, y, k, (px[y * size + x][k] * nz.gain).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(img)
}

pub fn scene_path(root: &Path, cluster: ClusterId) -> PathBuf {
    root.join("scenes").join(format!("{cluster}.json"))
}

pub fn image_path(root: &Path, cluster: ClusterId, id: ImageId) -> PathBuf {
    root.join("images").join(cluster.to_string()).join(format!("{id}.ppm"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSummary {
    pub clusters: usize,
    pub images: usize,
    pub points: usize,
    pub edges: usize,
}

/// Writes `scenes/<cluster>.json` and `images/<cluster>/<image-id>.ppm` under `root`.
pub fn write_scene(root: &Path, graphs: &[VisibilityGraph], size: usize) -> Result<SynthSummary> {
    for g in graphs {
        g.save(&scene_path(root, g.cluster_id()))?;
    }
    let jobs: Vec<(&VisibilityGraph, ImageId)> = graphs
        .iter()
        .flat_map(|g| g.image_ids().into_iter().map(move |id| (g, id)))
        .collect();
    jobs.par_iter()
        .map(|&(g, id)| save_ppm(&image_path(root, g.cluster_id(), id), &render(g, id, size)?))
        .collect::<Result<Vec<()>>>()?;
    Ok(SynthSummary {
        clusters: graphs.len(),
        images: jobs.len(),
        points: graphs.iter().map(|g| g.points().len()).sum(),
        edges: graphs.iter().map(|g| g.edges().len()).sum(),
    })
}

/// Loads every `scenes/*.json` under `root`, sorted by cluster id.
pub fn load_scenes(root: &Path) -> Result<Vec<VisibilityGraph>> {
    let dir = root.join("scenes");
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut graphs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            graphs.push(VisibilityGraph::load(&path)?);
        }
    }
    graphs.sort_by_key(|g| g.cluster_id());
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig {
            clusters: 3,
            images_per_cluster: (6, 9),
            points_per_cluster: (40, 60),
            image_size: 32,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SceneConfig::default().validate().is_ok());
        for bad in [
            SceneConfig { clusters: 0, ..small() },
            SceneConfig { images_per_cluster: (1, 4), ..small() },
            SceneConfig { occlusion_rate: 1.0, ..small() },
            SceneConfig { zoom_range: (0.0, 1.0), ..small() },
        ] {
            assert!(matches!(generate(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn ids_disjoint_and_edges_consistent() {
        let cfg = small();
        let graphs = generate(&cfg).unwrap();
        let mut images = std::collections::BTreeSet::new();
        let mut points = std::collections::BTreeSet::new();
        for g in &graphs {
            for im in g.images() {
                assert!(images.insert(im.id));
            }
            for p in g.points() {
                assert!(points.insert(p.id));
            }
            for &(i, p) in g.edges() {
                assert!(in_frame(g.camera(i).unwrap(), g.point(p).unwrap(), cfg.image_size));
            }
        }
    }

    #[test]
    fn no_occlusion_means_every_in_frame_point_is_seen() {
        let cfg = SceneConfig { occlusion_rate: 0.0, ..small() };
        for g in generate(&cfg).unwrap() {
            for p in g.points() {
                for im in g.images() {
                    let seen = g.observed(im.id).unwrap().binary_search(&p.id).is_ok();
                    assert_eq!(seen, in_frame(&im.camera, &p.xyz, cfg.image_size));
                }
            }
        }
    }

    #[test]
    fn render_is_pure_and_bounded() {
        let g = &generate(&small()).unwrap()[1];
        let id = g.images()[2].id;
        let a = render(g, id, 32).unwrap();
        assert_eq!(a, render(g, id, 32).unwrap());
        assert_eq!(a.shape(), (32, 32, 3));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(render(g, 999_999, 32).is_err());
    }

    #[test]
    fn optical_axis_projects_to_center() {
        let cam = Camera::look_at([0.0, 0.0, -4.0], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0], 50.0);
        assert_eq!(cam.project(&[0.0, 0.0, 1.0], 16.0, 16.0), Some((16.0, 16.0)));
        assert_eq!(cam.project(&[0.0, 0.0, -5.0], 16.0, 16.0), None);
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv(1.0 / 3.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hsv(0.5, 0.0, 0.5), [0.5, 0.5, 0.5]);
    }
}
