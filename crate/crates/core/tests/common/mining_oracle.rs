//! Random visibility graphs and brute-force reimplementations of the mining rules.

use macforge::descriptor::{l2n, Descriptor};
use macforge::mining::{
    candidate_pool, choose_queries, m3_feasible, mine_negatives, positive_m1, positive_m2, positive_m3, Camera,
    ClusterId, DescriptorMap, GraphImage, ImageId, MiningConfig, NegativeVariant, PointId, ScenePoint,
    VisibilityGraph,
};
use macforge::numeric::SeededStream;
use std::collections::{BTreeMap, BTreeSet, HashSet};

/// Cameras on a sphere shell looking near the origin, points inside the unit
/// ball (so every depth is positive), random edges, each point seen twice or more.
pub fn random_graph(s: &mut SeededStream, cluster: ClusterId, first_image: ImageId, max_images: usize, max_points: usize) -> VisibilityGraph {
    let n_img = s.range_inclusive(2, max_images);
    let n_pts = s.range_inclusive(1, max_points);
    let images: Vec<GraphImage> = (0..n_img)
        .map(|i| {
            let az = s.uniform(0.0, std::f64::consts::TAU);
            let el = s.uniform(-0.5, 0.5);
            let r = s.uniform(3.0, 6.0);
            let center = [r * el.cos() * az.cos(), r * el.sin(), r * el.cos() * az.sin()];
            let target = [s.uniform(-0.3, 0.3), s.uniform(-0.3, 0.3), s.uniform(-0.3, 0.3)];
            // Quantized focals make equal-scale ties possible.
            let focal = [60.0, 80.0, 100.0, 120.0][s.index(4)];
            GraphImage {
                id: first_image + i as ImageId,
                camera: Camera::look_at(center, target, [0.0, 1.0, 0.0], focal),
            }
        })
        .collect();
    let points: Vec<ScenePoint> = (0..n_pts)
        .map(|p| {
            let v = [s.uniform(-0.55, 0.55), s.uniform(-0.55, 0.55), s.uniform(-0.55, 0.55)];
            ScenePoint {
                id: cluster * 10_000 + p as PointId,
                xyz: v,
            }
        })
        .collect();
    let density = s.uniform(0.05, 0.6);
    let mut edges = Vec::new();
    for p in &points {
        let mut seen: BTreeSet<ImageId> = images.iter().filter(|_| s.bernoulli(density)).map(|im| im.id).collect();
        while seen.len() < 2 {
            seen.insert(images[s.index(n_img)].id);
        }
        edges.extend(seen.into_iter().map(|i| (i, p.id)));
    }
    VisibilityGraph::new(cluster, images, points, edges).unwrap()
}

pub fn random_descriptors(s: &mut SeededStream, ids: &[ImageId], dim: usize) -> DescriptorMap {
    ids.iter()
        .map(|&i| (i, l2n(&Descriptor::raw((0..dim).map(|_| s.next_f64()).collect()))))
        .collect()
}

/// Observations straight from the edge list.
fn edge_set(g: &VisibilityGraph, i: ImageId) -> HashSet<PointId> {
    g.edges().iter().filter(|e| e.0 == i).map(|e| e.1).collect()
}

fn center(g: &VisibilityGraph, i: ImageId) -> [f64; 3] {
    g.images().iter().find(|im| im.id == i).unwrap().camera.center
}

fn camera(g: &VisibilityGraph, i: ImageId) -> Camera {
    g.images().iter().find(|im| im.id == i).unwrap().camera
}

pub fn oracle_pool(g: &VisibilityGraph, q: ImageId, k: usize) -> Vec<ImageId> {
    let qc = center(g, q);
    let mut all: Vec<(f64, ImageId)> = g
        .images()
        .iter()
        .filter(|im| im.id != q)
        .map(|im| {
            let c = im.camera.center;
            ((c[0] - qc[0]).powi(2) + (c[1] - qc[1]).powi(2) + (c[2] - qc[2]).powi(2), im.id)
        })
        .collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.into_iter().take(k).map(|x| x.1).collect()
}

pub fn oracle_m1(q: ImageId, pool: &[ImageId], d: &DescriptorMap) -> Option<ImageId> {
    pool.iter()
        .map(|&i| {
            let dist: f64 = d[&q].values().iter().zip(d[&i].values()).map(|(a, b)| (a - b) * (a - b)).sum();
            (dist, i)
        })
        .min_by(|a, b| a.partial_cmp(b).unwrap())
        .map(|x| x.1)
}

pub fn oracle_m2(g: &VisibilityGraph, q: ImageId, pool: &[ImageId]) -> Option<ImageId> {
    let pq = edge_set(g, q);
    pool.iter()
        .map(|&i| (std::cmp::Reverse(edge_set(g, i).intersection(&pq).count()), i))
        .min()
        .map(|x| x.1)
}

fn median_depth(cam: &Camera, pts: &[[f64; 3]]) -> f64 {
    let mut z: Vec<f64> = pts
        .iter()
        .map(|p| {
            let d = [p[0] - cam.center[0], p[1] - cam.center[1], p[2] - cam.center[2]];
            cam.rotation[6] * d[0] + cam.rotation[7] * d[1] + cam.rotation[8] * d[2]
        })
        .collect();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = z.len();
    if n % 2 == 1 { z[n / 2] } else { (z[n / 2 - 1] + z[n / 2]) / 2.0 }
}

pub fn oracle_m3_feasible(g: &VisibilityGraph, q: ImageId, pool: &[ImageId], cfg: &MiningConfig) -> Vec<ImageId> {
    let pq = edge_set(g, q);
    let xyz: BTreeMap<PointId, [f64; 3]> = g.points().iter().map(|p| (p.id, p.xyz)).collect();
    pool.iter()
        .copied()
        .filter(|&i| {
            let shared: Vec<PointId> = edge_set(g, i).intersection(&pq).copied().collect();
            if pq.is_empty() || shared.is_empty() || (shared.len() as f64) / (pq.len() as f64) < cfg.inlier_overlap {
                return false;
            }
            let pts: Vec<[f64; 3]> = shared.iter().map(|p| xyz[p]).collect();
            let (ci, cq) = (camera(g, i), camera(g, q));
            let r = (ci.focal / median_depth(&ci, &pts)) / (cq.focal / median_depth(&cq, &pts));
            r.max(1.0 / r) <= cfg.scale_threshold
        })
        .collect()
}

pub fn oracle_negatives(
    q: ImageId,
    universe: &[ImageId],
    d: &DescriptorMap,
    cluster_of: &BTreeMap<ImageId, ClusterId>,
    n: usize,
    variant: NegativeVariant,
) -> Option<Vec<ImageId>> {
    let uniq: BTreeSet<ImageId> = universe.iter().copied().collect();
    let mut cands: Vec<(f64, ImageId)> = uniq
        .into_iter()
        .filter(|i| cluster_of[i] != cluster_of[&q])
        .map(|i| (-d[&q].values().iter().zip(d[&i].values()).map(|(a, b)| a * b).sum::<f64>(), i))
        .collect();
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::new();
    let mut used = BTreeSet::new();
    for (_, i) in cands {
        if out.len() == n {
            break;
        }
        if variant == NegativeVariant::N2 && !used.insert(cluster_of[&i]) {
            continue;
        }
        out.push(i);
    }
    (out.len() == n).then_some(out)
}

/// `ceil(10%)` up to 300 images, 30 beyond; picks by a partial Fisher–Yates
/// driven by `stream.index`, returned sorted.
pub fn oracle_queries(g: &VisibilityGraph, stream: &mut SeededStream) -> Vec<ImageId> {
    let ids: Vec<ImageId> = g.images().iter().map(|im| im.id).collect();
    let n = ids.len();
    let count = if n <= 300 { (n + 9) / 10 } else { 30 };
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = i + stream.index(n - i);
        idx.swap(i, j);
    }
    let mut out: Vec<ImageId> = idx[..count].iter().map(|&i| ids[i]).collect();
    out.sort();
    out
}

/// Mismatch counts per rule over `trials` random graphs.
#[derive(Debug, Default, Clone)]
pub struct OracleReport {
    pub trials: usize,
    pub comparisons: usize,
    pub mismatches: BTreeMap<&'static str, usize>,
    pub m3_outside_feasible: usize,
}

impl OracleReport {
    pub fn total_mismatches(&self) -> usize {
        self.mismatches.values().sum::<usize>() + self.m3_outside_feasible
    }
}

pub fn run_oracles(seed: u64, trials: usize) -> OracleReport {
    let root = SeededStream::new(seed, 0).derive_named("mining-oracle");
    let mut rep = OracleReport {
        trials,
        ..Default::default()
    };
    for name in ["pool", "m1", "m2", "m3_feasible", "n1", "n2", "queries"] {
        rep.mismatches.insert(name, 0);
    }
    for t in 0..trials {
        let mut s = root.derive(t as u64);
        let g = random_graph(&mut s, 0, 0, 40, 500);
        let ids = g.image_ids();
        let d = random_descriptors(&mut s, &ids, 8);
        let cfg = MiningConfig {
            pool_size: s.range_inclusive(1, 40),
            inlier_overlap: [0.05, 0.1, 0.2, 0.4][s.index(4)],
            scale_threshold: [1.1, 1.5, 2.0][s.index(3)],
            ..MiningConfig::default()
        };
        let bump = |rep: &mut OracleReport, name: &'static str, ok: bool| {
            rep.comparisons += 1;
            if !ok {
                *rep.mismatches.get_mut(name).unwrap() += 1;
            }
        };
        for &q in &ids {
            let pool = candidate_pool(&g, q, cfg.pool_size).unwrap();
            bump(&mut rep, "pool", pool == oracle_pool(&g, q, cfg.pool_size));
            bump(&mut rep, "m1", positive_m1(q, &pool, &d).ok() == oracle_m1(q, &pool, &d));
            bump(&mut rep, "m2", positive_m2(q, &pool, &g).ok() == oracle_m2(&g, q, &pool));
            let feasible = m3_feasible(q, &pool, &g, &cfg).unwrap();
            bump(&mut rep, "m3_feasible", feasible == oracle_m3_feasible(&g, q, &pool, &cfg));
            let mut ms = s.derive_named("m3").derive(q as u64);
            if let Ok(m) = positive_m3(q, &pool, &g, &cfg, &mut ms) {
                if !feasible.contains(&m) {
                    rep.m3_outside_feasible += 1;
                }
            }
        }
        let qs = s.derive_named("queries");
        bump(&mut rep, "queries", choose_queries(&g, &mut qs.clone()) == oracle_queries(&g, &mut qs.clone()));

        // Negatives over a multi-cluster universe with repeated entries.
        let clusters = s.range_inclusive(2, 8) as ClusterId;
        let n_ids = s.range_inclusive(4, 80) as ImageId;
        let cluster_of: BTreeMap<ImageId, ClusterId> = (0..n_ids).map(|i| (i, s.index(clusters as usize) as ClusterId)).collect();
        let all: Vec<ImageId> = cluster_of.keys().copied().collect();
        let dn = random_descriptors(&mut s, &all, 6);
        let mut universe: Vec<ImageId> = all.iter().copied().filter(|_| s.bernoulli(0.8)).collect();
        universe.extend(all.iter().copied().filter(|_| s.bernoulli(0.1)));
        let n = s.range_inclusive(1, 6);
        for &q in all.iter().take(10) {
            for (name, v) in [("n1", NegativeVariant::N1), ("n2", NegativeVariant::N2)] {
                let got = mine_negatives(q, &universe, &dn, &cluster_of, n, v).ok();
                bump(&mut rep, name, got == oracle_negatives(q, &universe, &dn, &cluster_of, n, v));
            }
        }
    }
    rep
}

/// Chi-square statistic of `positive_m3` picks over `draws` independent
/// streams, with degrees of freedom; `None` if no query has ≥ 3 feasible members.
pub fn m3_uniformity(seed: u64, draws: usize) -> Option<(f64, usize, usize)> {
    let mut s = SeededStream::new(seed, 0).derive_named("m3-uniformity");
    let cfg = MiningConfig {
        inlier_overlap: 0.05,
        scale_threshold: 2.0,
        ..MiningConfig::default()
    };
    for _ in 0..100 {
        let g = random_graph(&mut s, 0, 0, 40, 300);
        for q in g.image_ids() {
            let pool = candidate_pool(&g, q, cfg.pool_size).unwrap();
            let feasible = oracle_m3_feasible(&g, q, &pool, &cfg);
            if feasible.len() < 3 {
                continue;
            }
            let root = s.derive_named("draws");
            let mut counts: BTreeMap<ImageId, usize> = feasible.iter().map(|&i| (i, 0)).collect();
            let mut outside = 0;
            for t in 0..draws {
                let m = positive_m3(q, &pool, &g, &cfg, &mut root.derive(t as u64)).unwrap();
                match counts.get_mut(&m) {
                    Some(c) => *c += 1,
                    None => outside += 1,
                }
            }
            let expected = draws as f64 / feasible.len() as f64;
            let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
            return Some((chi2, feasible.len() - 1, outside));
        }
    }
    None
}
