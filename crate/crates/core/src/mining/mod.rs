//! Training-tuple selection from visibility graphs: candidate pools, hard
//! positives (`m1` descriptor distance, `m2` co-observation, `m3` relaxed
//! geometric constraints with a random pick) and hard negatives (`N1`
//! k-nearest non-matching, `N2` at most one per cluster).
//!
//! Every argmin/argmax resolves ties toward the lower image id.

mod graph;
mod tuples;

pub use graph::{cluster_index, Camera, ClusterId, GraphImage, ImageId, PointId, ScenePoint, VisibilityGraph};
pub use tuples::{build_tuples, read_tuples, write_tuples, SkipReason, TrainingTuple, TupleSet};

use crate::descriptor::Descriptor;
use crate::error::{Error, Result};
use crate::numeric::{dot, SeededStream};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub type DescriptorMap = HashMap<ImageId, Descriptor>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Size `k` of the camera-distance candidate pool.
    pub pool_size: usize,
    /// Minimum fraction of the query's points a positive must co-observe.
    pub inlier_overlap: f64,
    /// Maximum allowed scale change for `m3`.
    pub scale_threshold: f64,
    pub negatives: usize,
    pub candidate_negatives_per_cluster: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            pool_size: 100,
            inlier_overlap: 0.2,
            scale_threshold: 1.5,
            negatives: 5,
            candidate_negatives_per_cluster: 20,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 {
            return Err(Error::Config("pool_size must be at least 1".into()));
        }
        if !(self.inlier_overlap > 0.0 && self.inlier_overlap <= 1.0) {
            return Err(Error::Config("inlier_overlap must lie in (0, 1]".into()));
        }
        if !(self.scale_threshold >= 1.0) {
            return Err(Error::Config("scale_threshold must be at least 1".into()));
        }
        if self.negatives == 0 {
            return Err(Error::Config("negatives must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PositiveMethod {
    M1,
    M2,
    M3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NegativeVariant {
    N1,
    N2,
}

impl std::str::FromStr for PositiveMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(PositiveMethod::M1),
            "m2" => Ok(PositiveMethod::M2),
            "m3" => Ok(PositiveMethod::M3),
            other => Err(Error::Config(format!("unknown positive method {other:?}"))),
        }
    }
}

impl std::str::FromStr for NegativeVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n1" => Ok(NegativeVariant::N1),
            "n2" => Ok(NegativeVariant::N2),
            other => Err(Error::Config(format!("unknown negative variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for PositiveMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PositiveMethod::M1 => "m1",
            PositiveMethod::M2 => "m2",
            PositiveMethod::M3 => "m3",
        })
    }
}

impl std::fmt::Display for NegativeVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NegativeVariant::N1 => "n1",
            NegativeVariant::N2 => "n2",
        })
    }
}

pub fn observed_points(g: &VisibilityGraph, i: ImageId) -> Result<&[PointId]> {
    g.observed(i)
}

/// `|P(a) ∩ P(b)|` by merging the sorted observation lists.
pub fn shared_points(g: &VisibilityGraph, a: ImageId, b: ImageId) -> Result<Vec<PointId>> {
    let (pa, pb) = (g.observed(a)?, g.observed(b)?);
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < pa.len() && j < pb.len() {
        match pa[i].cmp(&pb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(pa[i]);
                i += 1;
                j += 1;
            }
        }
    }
    Ok(out)
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// The `k` images of the query's cluster with the closest camera centres.
pub fn candidate_pool(g: &VisibilityGraph, q: ImageId, k: usize) -> Result<Vec<ImageId>> {
    let qc = g.camera(q)?.center;
    let mut others: Vec<(f64, ImageId)> = g
        .images()
        .iter()
        .filter(|im| im.id != q)
        .map(|im| (dist2(&im.camera.center, &qc), im.id))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(others.into_iter().take(k).map(|(_, id)| id).collect())
}

fn lookup<'a>(d: &'a DescriptorMap, id: ImageId) -> Result<&'a Descriptor> {
    d.get(&id).ok_or(Error::UnknownImage(id))
}

/// Pool member with the smallest descriptor distance to the query.
pub fn positive_m1(q: ImageId, pool: &[ImageId], descriptors: &DescriptorMap) -> Result<ImageId> {
    let fq = lookup(descriptors, q)?;
    let mut best: Option<(f64, ImageId)> = None;
    for &i in pool {
        let fi = lookup(descriptors, i)?;
        let d: f64 = fq
            .values()
            .iter()
            .zip(fi.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i).ok_or(Error::NoPositive(q))
}

/// Pool member co-observing the most 3D points with the query.
pub fn positive_m2(q: ImageId, pool: &[ImageId], g: &VisibilityGraph) -> Result<ImageId> {
    let mut best: Option<(usize, ImageId)> = None;
    for &i in pool {
        let n = shared_points(g, q, i)?.len();
        if best.is_none_or(|(bn, bi)| n > bn || (n == bn && i < bi)) {
            best = Some((n, i));
        }
    }
    best.map(|(_, i)| i).ok_or(Error::NoPositive(q))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `max(r, 1/r)` with `r = (focal_i/d_i)/(focal_q/d_q)`, where `d_x` is the
/// median depth of the co-observed points in camera `x`.
pub fn scale_change(g: &VisibilityGraph, i: ImageId, q: ImageId) -> Result<f64> {
    let shared = shared_points(g, i, q)?;
    if shared.is_empty() {
        return Err(Error::UndefinedScale(i, q));
    }
    let (ci, cq) = (g.camera(i)?, g.camera(q)?);
    let mut di = Vec::with_capacity(shared.len());
    let mut dq = Vec::with_capacity(shared.len());
    for p in &shared {
        let xyz = g
            .point(*p)
            .ok_or_else(|| Error::Graph(format!("missing point {p}")))?;
        let (a, b) = (ci.depth(xyz), cq.depth(xyz));
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Geometry(format!("point {p} has non-positive depth")));
        }
        di.push(a);
        dq.push(b);
    }
    let r = (ci.focal / median(&mut di)) / (cq.focal / median(&mut dq));
    Ok(r.max(1.0 / r))
}

/// Pool members satisfying both the co-observation and scale constraints, in pool order.
pub fn m3_feasible(q: ImageId, pool: &[ImageId], g: &VisibilityGraph, cfg: &MiningConfig) -> Result<Vec<ImageId>> {
    let nq = g.observed(q)?.len();
    let mut out = Vec::new();
    if nq == 0 {
        return Ok(out);
    }
    for &i in pool {
        let shared = shared_points(g, i, q)?.len();
        if shared == 0 || (shared as f64) / (nq as f64) < cfg.inlier_overlap {
            continue;
        }
        if scale_change(g, i, q)? <= cfg.scale_threshold {
            out.push(i);
        }
    }
    Ok(out)
}

/// Uniform random pick among [`m3_feasible`] members.
pub fn positive_m3(
    q: ImageId,
    pool: &[ImageId],
    g: &VisibilityGraph,
    cfg: &MiningConfig,
    stream: &mut SeededStream,
) -> Result<ImageId> {
    if pool.is_empty() {
        return Err(Error::NoPositive(q));
    }
    let feasible = m3_feasible(q, pool, g, cfg)?;
    if feasible.is_empty() {
        return Err(Error::NoPositive(q));
    }
    Ok(feasible[stream.index(feasible.len())])
}

/// Hardest non-matching images from `universe`, most similar first.
pub fn mine_negatives(
    q: ImageId,
    universe: &[ImageId],
    descriptors: &DescriptorMap,
    cluster_of: &BTreeMap<ImageId, ClusterId>,
    n: usize,
    variant: NegativeVariant,
) -> Result<Vec<ImageId>> {
    let fq = lookup(descriptors, q)?;
    let qc = *cluster_of.get(&q).ok_or(Error::UnknownImage(q))?;
    let mut scored = Vec::new();
    for &i in universe {
        let c = *cluster_of.get(&i).ok_or(Error::UnknownImage(i))?;
        if c == qc {
            continue;
        }
        scored.push((dot(fq.values(), lookup(descriptors, i)?.values()), i, c));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.dedup_by_key(|s| s.1);
    let picked: Vec<ImageId> = match variant {
        NegativeVariant::N1 => scored.iter().take(n).map(|s| s.1).collect(),
        NegativeVariant::N2 => {
            let mut seen = std::collections::BTreeSet::new();
            scored
                .iter()
                .filter(|s| seen.insert(s.2))
                .take(n)
                .map(|s| s.1)
                .collect()
        }
    };
    if picked.len() < n {
        return Err(Error::ShortList {
            query: q,
            requested: n,
            available: picked.len(),
        });
    }
    Ok(picked)
}

/// Number of training queries for a cluster: 10% (rounded up) for clusters
/// of at most 300 images, 30 otherwise.
pub fn query_count(cluster_size: usize) -> usize {
    if cluster_size <= 300 {
        cluster_size.div_ceil(10)
    } else {
        30
    }
}

/// Queries sampled without replacement, returned in ascending id order.
pub fn choose_queries(g: &VisibilityGraph, stream: &mut SeededStream) -> Vec<ImageId> {
    let ids = g.image_ids();
    let mut picked: Vec<ImageId> = stream
        .sample_indices(ids.len(), query_count(ids.len()))
        .into_iter()
        .map(|i| ids[i])
        .collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam_at(x: f64, focal: f64) -> Camera {
        Camera::look_at([x, 0.0, -5.0], [x, 0.0, 0.0], [0.0, 1.0, 0.0], focal)
    }

    fn graph(cams: &[(ImageId, Camera)], points: &[(PointId, [f64; 3])], edges: &[(ImageId, PointId)]) -> VisibilityGraph {
        VisibilityGraph::new(
            0,
            cams.iter().map(|&(id, camera)| GraphImage { id, camera }).collect(),
            points.iter().map(|&(id, xyz)| ScenePoint { id, xyz }).collect(),
            edges.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn observed_cases() {
        let g = graph(
            &[(1, cam_at(0.0, 100.0)), (2, cam_at(1.0, 100.0)), (3, cam_at(2.0, 100.0))],
            &[(1, [0.0; 3]), (2, [0.1, 0.0, 0.0])],
            &[(1, 1), (1, 2), (2, 2), (2, 1)],
        );
        assert_eq!(observed_points(&g, 1).unwrap(), &[1, 2]);
        assert!(observed_points(&g, 3).unwrap().is_empty());
        assert!(matches!(observed_points(&g, 9), Err(Error::UnknownImage(9))));
    }

    #[test]
    fn pool_order() {
        let g = graph(
            &[(5, cam_at(0.0, 1.0)), (7, cam_at(3.0, 1.0)), (8, cam_at(1.0, 1.0)), (9, cam_at(2.0, 1.0))],
            &[],
            &[],
        );
        assert_eq!(candidate_pool(&g, 5, 2).unwrap(), vec![8, 9]);
        assert_eq!(candidate_pool(&g, 5, 10).unwrap(), vec![8, 9, 7]);
        let g2 = graph(&[(1, cam_at(0.0, 1.0)), (2, cam_at(1.0, 1.0))], &[], &[]);
        assert_eq!(candidate_pool(&g2, 1, 100).unwrap(), vec![2]);
    }

    #[test]
    fn m2_cases() {
        let pts: Vec<(PointId, [f64; 3])> = (1..=3).map(|i| (i, [0.0, 0.0, i as f64 * 0.1])).collect();
        let g = graph(
            &[(1, cam_at(0.0, 1.0)), (2, cam_at(0.1, 1.0)), (3, cam_at(0.2, 1.0)), (4, cam_at(0.3, 1.0))],
            &pts,
            &[(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (3, 1), (4, 3)],
        );
        assert_eq!(positive_m2(1, &[3, 2], &g).unwrap(), 2);
        assert_eq!(positive_m2(4, &[3, 2], &g).unwrap(), 2);
        assert!(matches!(positive_m2(1, &[], &g), Err(Error::NoPositive(1))));
    }

    #[test]
    fn m1_cases() {
        let mut d = DescriptorMap::new();
        d.insert(1, Descriptor::normalized(vec![1.0, 0.0]));
        d.insert(2, Descriptor::normalized(vec![0.0, 1.0]));
        d.insert(3, Descriptor::normalized(vec![1.0, 0.0]));
        assert_eq!(positive_m1(1, &[2], &d).unwrap(), 2);
        assert_eq!(positive_m1(1, &[2, 3], &d).unwrap(), 3);
        assert!(positive_m1(1, &[], &d).is_err());
    }

    #[test]
    fn scale_change_cases() {
        let pts = [(1, [0.0, 0.0, 0.0]), (2, [0.1, 0.0, 0.0])];
        // q at depth 2, i at depth 4, equal focals
        let q = Camera::look_at([0.0, 0.0, -2.0], [0.0; 3], [0.0, 1.0, 0.0], 100.0);
        let i = Camera::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, 1.0, 0.0], 100.0);
        let g = graph(&[(1, q), (2, i), (3, q)], &pts, &[(1, 1), (1, 2), (2, 1), (2, 2), (3, 1)]);
        assert!((scale_change(&g, 1, 3).unwrap() - 1.0).abs() < 1e-12);
        let s = scale_change(&g, 2, 1).unwrap();
        assert!((s - 2.0).abs() < 1e-9, "{s}");
        assert_eq!(s, scale_change(&g, 1, 2).unwrap());
    }

    #[test]
    fn scale_change_errors() {
        let g = graph(
            &[(1, cam_at(0.0, 1.0)), (2, cam_at(0.0, 1.0)), (3, cam_at(5.0, 1.0))],
            &[(1, [0.0; 3])],
            &[(1, 1), (2, 1)],
        );
        assert!(matches!(scale_change(&g, 1, 3), Err(Error::UndefinedScale(1, 3))));
        let behind = graph(
            &[(1, cam_at(0.0, 1.0)), (2, cam_at(0.0, 1.0))],
            &[(1, [0.0, 0.0, -10.0])],
            &[(1, 1), (2, 1)],
        );
        assert!(matches!(scale_change(&behind, 1, 2), Err(Error::Geometry(_))));
    }

    #[test]
    fn m3_threshold_arithmetic() {
        let pts: Vec<(PointId, [f64; 3])> = (1..=10).map(|i| (i, [i as f64 * 0.01, 0.0, 0.0])).collect();
        let mut edges: Vec<(ImageId, PointId)> = (1..=10).map(|p| (1, p)).collect();
        edges.push((2, 1));
        edges.extend((1..=10).map(|p| (3, p)));
        let g = graph(&[(1, cam_at(0.0, 1.0)), (2, cam_at(0.0, 1.0)), (3, cam_at(0.0, 1.0))], &pts, &edges);
        let cfg = MiningConfig::default();
        assert_eq!(m3_feasible(1, &[2, 3], &g, &cfg).unwrap(), vec![3]);
        for seed in 0..5 {
            let mut s = SeededStream::new(seed, 0);
            assert_eq!(positive_m3(1, &[2, 3], &g, &cfg, &mut s).unwrap(), 3);
        }
        let mut s = SeededStream::new(0, 0);
        assert!(matches!(positive_m3(1, &[2], &g, &cfg, &mut s), Err(Error::NoPositive(1))));
    }

    #[test]
    fn negatives_variants() {
        let mut d = DescriptorMap::new();
        let mut cl = BTreeMap::new();
        let v = |a: f64| Descriptor::normalized(vec![a, (1.0 - a * a).sqrt()]);
        d.insert(0, v(1.0));
        cl.insert(0, 0);
        // two near duplicates from cluster 1 top the ranking
        for (id, a, c) in [(1, 0.99, 1), (2, 0.98, 1), (3, 0.5, 2), (4, 0.4, 3), (5, 0.95, 0)] {
            d.insert(id, v(a));
            cl.insert(id, c);
        }
        let uni = [1, 2, 3, 4, 5];
        assert_eq!(mine_negatives(0, &uni, &d, &cl, 2, NegativeVariant::N1).unwrap(), vec![1, 2]);
        assert_eq!(mine_negatives(0, &uni, &d, &cl, 2, NegativeVariant::N2).unwrap(), vec![1, 3]);
        let err = mine_negatives(0, &uni, &d, &cl, 4, NegativeVariant::N2).unwrap_err();
        assert!(matches!(err, Error::ShortList { requested: 4, available: 3, .. }));
        let distinct = [1, 3, 4];
        assert_eq!(
            mine_negatives(0, &distinct, &d, &cl, 3, NegativeVariant::N1).unwrap(),
            mine_negatives(0, &distinct, &d, &cl, 3, NegativeVariant::N2).unwrap()
        );
    }

    #[test]
    fn query_counts() {
        assert_eq!(query_count(100), 10);
        assert_eq!(query_count(300), 30);
        assert_eq!(query_count(1000), 30);
        assert_eq!(query_count(25), 3);
    }
}
