use super::{
    candidate_pool, choose_queries, cluster_index, mine_negatives, positive_m1, positive_m2, positive_m3,
    ClusterId, DescriptorMap, ImageId, MiningConfig, NegativeVariant, PositiveMethod, VisibilityGraph,
};
use crate::binio::{read_file, write_file};
use crate::error::{Error, Result};
use crate::numeric::SeededStream;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// One query, its fixed positive and its current hard negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTuple {
    pub q: ImageId,
    pub m: ImageId,
    pub negatives: Vec<ImageId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SkipReason {
    NoPositive,
    ShortNegatives { available: usize },
}

/// Tuples plus the candidate-negative universe they are re-mined against.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleSet {
    pub tuples: Vec<TrainingTuple>,
    pub skipped: Vec<(ImageId, SkipReason)>,
    /// Sorted candidate-negative image ids.
    pub universe: Vec<ImageId>,
    pub cluster_of: BTreeMap<ImageId, ClusterId>,
    pub variant: NegativeVariant,
    pub negatives: usize,
}

impl TupleSet {
    /// Replaces every tuple's negatives using the current descriptors;
    /// queries and positives are never touched.
    pub fn remine(&mut self, descriptors: &DescriptorMap) -> Result<()> {
        let fresh = self
            .tuples
            .iter()
            .map(|t| {
                mine_negatives(
                    t.q,
                    &self.universe,
                    descriptors,
                    &self.cluster_of,
                    self.negatives,
                    self.variant,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        for (t, n) in self.tuples.iter_mut().zip(fresh) {
            t.negatives = n;
        }
        Ok(())
    }

    /// Every image needed to recompute negatives: queries plus the universe.
    pub fn mining_images(&self) -> Vec<ImageId> {
        let mut set: BTreeSet<ImageId> = self.universe.iter().copied().collect();
        set.extend(self.tuples.iter().map(|t| t.q));
        set.into_iter().collect()
    }
}

/// Builds tuples over `graphs`. The candidate-negative universe holds, per
/// cluster, a seeded sample of `candidate_negatives_per_cluster` images plus
/// that cluster's queries and positives. Queries without a feasible positive
/// or without enough legal negatives are skipped and reported.
pub fn build_tuples(
    graphs: &[VisibilityGraph],
    descriptors: &DescriptorMap,
    cfg: &MiningConfig,
    positive: PositiveMethod,
    variant: NegativeVariant,
    stream: &SeededStream,
) -> Result<TupleSet> {
    cfg.validate()?;
    let cluster_of = cluster_index(graphs);
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    let mut universe = BTreeSet::new();
    for g in graphs {
        let cid = g.cluster_id() as u64;
        let queries = choose_queries(g, &mut stream.derive_named("queries").derive(cid));
        for &q in &queries {
            let pool = candidate_pool(g, q, cfg.pool_size)?;
            let picked = match positive {
                PositiveMethod::M1 => positive_m1(q, &pool, descriptors),
                PositiveMethod::M2 => positive_m2(q, &pool, g),
                PositiveMethod::M3 => {
                    let mut s = stream.derive_named("m3").derive(q as u64);
                    positive_m3(q, &pool, g, cfg, &mut s)
                }
            };
            match picked {
                Ok(m) => {
                    universe.insert(q);
                    universe.insert(m);
                    pairs.push((q, m));
                }
                Err(Error::NoPositive(_)) => skipped.push((q, SkipReason::NoPositive)),
                Err(e) => return Err(e),
            }
        }
        let ids = g.image_ids();
        let mut s = stream.derive_named("candidate-negatives").derive(cid);
        for i in s.sample_indices(ids.len(), cfg.candidate_negatives_per_cluster) {
            universe.insert(ids[i]);
        }
    }
    let universe: Vec<ImageId> = universe.into_iter().collect();
    let mut tuples = Vec::with_capacity(pairs.len());
    for (q, m) in pairs {
        match mine_negatives(q, &universe, descriptors, &cluster_of, cfg.negatives, variant) {
            Ok(negatives) => tuples.push(TrainingTuple { q, m, negatives }),
            Err(Error::ShortList { available, .. }) => {
                skipped.push((q, SkipReason::ShortNegatives { available }))
            }
            Err(e) => return Err(e),
        }
    }
    if tuples.is_empty() {
        log::warn!("no training tuples: {} queries skipped", skipped.len());
    }
    Ok(TupleSet {
        tuples,
        skipped,
        universe,
        cluster_of,
        variant,
        negatives: cfg.negatives,
    })
}

/// One JSON object per line.
pub fn write_tuples(path: &Path, tuples: &[TrainingTuple]) -> Result<()> {
    let mut out = String::new();
    for t in tuples {
        out.push_str(&serde_json::to_string(t).expect("tuple serializes"));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn read_tuples(path: &Path) -> Result<Vec<TrainingTuple>> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::format(path, "not UTF-8"))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}
