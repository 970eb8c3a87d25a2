//! End-to-end helpers over a synthetic benchmark: cluster splits, in-memory
//! renders, tuple mining for training and validation, whitening pairs and
//! held-out retrieval evaluation.

use crate::backbone::{NetSpec, Network};
use crate::descriptor::{Descriptor, DescriptorDb};
use crate::error::{Error, Result};
use crate::extract::{Extractor, Pooling};
use crate::image::prepare;
use crate::loss::{LossConfig, LossKind};
use crate::mining::{
    build_tuples, candidate_pool, m3_feasible, ClusterId, DescriptorMap, ImageId, MiningConfig, NegativeVariant, PositiveMethod, TrainingTuple, TupleSet, VisibilityGraph,
};
use crate::numeric::SeededStream;
use crate::retrieval::{evaluate_descriptors, EvalReport, GroundTruth, QueryTruth};
use crate::synthscene::{generate, render_styled, RenderStyle, SceneConfig};
use crate::train::{describe_images, train, ImageSet, MinedTuples, TrainConfig, TrainOutcome};
use crate::whitening::ProjectionModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Disjoint cluster roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<ClusterId>,
    pub val: Vec<ClusterId>,
    pub test: Vec<ClusterId>,
}

/// Cluster counts for validation and test; the rest train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    /// Default for `n` clusters: one tenth validation, four tenths test,
    /// at least one cluster each.
    pub fn for_clusters(n: usize) -> Self {
        SplitSizes {
            val: (n / 10).max(1),
            test: (4 * n / 10).max(1),
        }
    }
}

/// Seeded split of cluster ids into train, validation and test roles.
pub fn split_clusters(ids: &[ClusterId], seed: u64, sizes: SplitSizes) -> Result<Split> {
    if sizes.val == 0 || sizes.test == 0 || ids.len() < sizes.val + sizes.test + 1 {
        return Err(Error::Config(format!(
            "cannot split {} clusters into {} validation, {} test and at least one training cluster",
            ids.len(),
            sizes.val,
            sizes.test
        )));
    }
    let mut order = ids.to_vec();
    order.sort_unstable();
    SeededStream::new(seed, 0).derive_named("split").shuffle(&mut order);
    let mut pick = |k: usize| {
        let mut v: Vec<ClusterId> = order.drain(..k).collect();
        v.sort_unstable();
        v
    };
    let test = pick(sizes.test);
    let val = pick(sizes.val);
    let train = pick(ids.len() - sizes.test - sizes.val);
    Ok(Split { train, val, test })
}

/// Renders every image of `graphs` and prepares it as network input.
pub fn render_all(graphs: &[VisibilityGraph], size: usize, max_side: usize, style: &RenderStyle) -> Result<ImageSet<f32>> {
    let jobs: Vec<(&VisibilityGraph, ImageId)> = graphs
        .iter()
        .flat_map(|g| g.image_ids().into_iter().map(move |id| (g, id)))
        .collect();
    jobs.par_iter()
        .map(|&(g, id)| Ok((id, prepare(&render_styled(g, id, size, style)?, max_side))))
        .collect()
}

/// A generated scene with its split and prepared network inputs.
pub struct Benchmark {
    pub graphs: Vec<VisibilityGraph>,
    pub split: Split,
    pub images: ImageSet<f32>,
}

impl Benchmark {
    pub fn synthetic(cfg: &SceneConfig, max_side: usize) -> Result<Self> {
        Self::styled(cfg, max_side, &RenderStyle::default())
    }

    pub fn styled(cfg: &SceneConfig, max_side: usize, style: &RenderStyle) -> Result<Self> {
        Self::with_split(cfg, max_side, style, SplitSizes::for_clusters(cfg.clusters))
    }

    pub fn with_split(cfg: &SceneConfig, max_side: usize, style: &RenderStyle, sizes: SplitSizes) -> Result<Self> {
        let graphs = generate(cfg)?;
        let ids: Vec<ClusterId> = graphs.iter().map(|g| g.cluster_id()).collect();
        let split = split_clusters(&ids, cfg.seed, sizes)?;
        let images = render_all(&graphs, cfg.image_size, max_side, style)?;
        Ok(Benchmark { graphs, split, images })
    }

    pub fn role(&self, clusters: &[ClusterId]) -> Vec<VisibilityGraph> {
        self.graphs
            .iter()
            .filter(|g| clusters.contains(&g.cluster_id()))
            .cloned()
            .collect()
    }

    pub fn image_ids(&self, clusters: &[ClusterId]) -> Vec<ImageId> {
        self.role(clusters).iter().flat_map(|g| g.image_ids()).collect()
    }
}

fn all_ids(graphs: &[VisibilityGraph]) -> Vec<ImageId> {
    graphs.iter().flat_map(|g| g.image_ids()).collect()
}

/// Training tuples mined over `train` graphs with `net`'s descriptors.
pub fn mine_training(
    net: &Network<f32>,
    images: &ImageSet<f32>,
    train: &[VisibilityGraph],
    cfg: &MiningConfig,
    positive: PositiveMethod,
    variant: NegativeVariant,
    stream: &SeededStream,
) -> Result<TupleSet> {
    let d = describe_images(net, images, &all_ids(train))?;
    build_tuples(train, &d, cfg, positive, variant, stream)
}

/// Validation tuples for queries of `val` graphs. Negatives are mined
/// against the union of training and validation universes so that small
/// validation splits still supply enough distinct clusters.
pub fn mine_validation(
    net: &Network<f32>,
    images: &ImageSet<f32>,
    train: &[VisibilityGraph],
    val: &[VisibilityGraph],
    cfg: &MiningConfig,
    positive: PositiveMethod,
    variant: NegativeVariant,
    stream: &SeededStream,
) -> Result<Vec<TrainingTuple>> {
    let both: Vec<VisibilityGraph> = train.iter().chain(val).cloned().collect();
    let d = describe_images(net, images, &all_ids(&both))?;
    let set = build_tuples(&both, &d, cfg, positive, variant, &stream.derive_named("validation"))?;
    let val_ids: BTreeSet<ImageId> = all_ids(val).into_iter().collect();
    Ok(set.tuples.into_iter().filter(|t| val_ids.contains(&t.q)).collect())
}

/// Held-out protocol: every image of `clusters` is both a database entry
/// and a query; its relevant set is the rest of its cluster and the query
/// itself is ignored.
pub fn held_out_truth(graphs: &[VisibilityGraph]) -> GroundTruth {
    let mut gt = GroundTruth::default();
    for g in graphs {
        let ids = g.image_ids();
        for &q in &ids {
            let relevant = ids.iter().filter(|&&i| i != q).map(|i| i.to_string());
            gt.0.insert(q.to_string(), QueryTruth::new(relevant, std::iter::once(q.to_string())));
        }
    }
    gt
}

pub fn descriptor_db(ids: &[ImageId], descriptors: &[Descriptor]) -> Result<DescriptorDb> {
    let dim = descriptors.first().map_or(0, |d| d.dim());
    let mut db = DescriptorDb::new(dim);
    for (id, d) in ids.iter().zip(descriptors) {
        db.insert_descriptor(id.to_string(), d)?;
    }
    Ok(db)
}

/// mAP of `extractor` on the held-out protocol over `graphs`; `inputs`
/// are already prepared.
pub fn held_out_map(extractor: &Extractor<'_>, inputs: &ImageSet<f32>, graphs: &[VisibilityGraph]) -> Result<EvalReport> {
    let ids = all_ids(graphs);
    let descriptors = ids
        .par_iter()
        .map(|id| extractor.describe_prepared(inputs.get(id).ok_or(Error::UnknownImage(*id))?))
        .collect::<Result<Vec<_>>>()?;
    let db = descriptor_db(&ids, &descriptors)?;
    let queries: Vec<(String, Descriptor)> = ids.iter().map(|i| i.to_string()).zip(descriptors).collect();
    evaluate_descriptors(&db, &queries, &held_out_truth(graphs))
}

/// Random cross-cluster partners drawn per image for the non-matching set.
pub const WHITENING_NEGATIVES_PER_IMAGE: usize = 20;

/// Pairs for fitting a whitening. Matching: every unordered same-cluster
/// pair passing the m3 overlap and scale thresholds. Non-matching: for each
/// image, a seeded sample of images from other clusters.
pub fn whitening_pairs(
    graphs: &[VisibilityGraph],
    descriptors: &DescriptorMap,
    cfg: &MiningConfig,
    stream: &SeededStream,
) -> Result<(Vec<(Descriptor, Descriptor)>, Vec<(Descriptor, Descriptor)>)> {
    let universe = all_ids(graphs);
    let get = |id: ImageId| descriptors.get(&id).cloned().ok_or(Error::UnknownImage(id));
    let mut matching = Vec::new();
    let mut non_matching = Vec::new();
    for g in graphs {
        let own: BTreeSet<ImageId> = g.image_ids().into_iter().collect();
        let others: Vec<ImageId> = universe.iter().copied().filter(|i| !own.contains(i)).collect();
        for &q in &own {
            let pool = candidate_pool(g, q, cfg.pool_size)?;
            let mut feasible: BTreeSet<ImageId> = m3_feasible(q, &pool, g, cfg)?.into_iter().collect();
            // Feasibility is asymmetric; a pair counts once if either side accepts it.
            for &i in &pool {
                if i > q && m3_feasible(i, &[q], g, cfg)?.contains(&q) {
                    feasible.insert(i);
                }
            }
            for &m in feasible.iter().filter(|&&m| m > q) {
                matching.push((get(q)?, get(m)?));
            }
            let mut s = stream.derive(q as u64);
            for k in s.sample_indices(others.len(), WHITENING_NEGATIVES_PER_IMAGE) {
                non_matching.push((get(q)?, get(others[k])?));
            }
        }
    }
    Ok((matching, non_matching))
}

/// Lw and PCAw fitted on MAC descriptors of the training graphs.
pub fn fit_whitenings(
    net: &Network<f32>,
    images: &ImageSet<f32>,
    train: &[VisibilityGraph],
    cfg: &MiningConfig,
    stream: &SeededStream,
) -> Result<(ProjectionModel, ProjectionModel)> {
    let ids = all_ids(train);
    let d = describe_images(net, images, &ids)?;
    let (matching, non_matching) = whitening_pairs(train, &d, cfg, &stream.derive_named("whitening"))?;
    let vectors: Vec<Descriptor> = ids.iter().map(|i| d[i].clone()).collect();
    let lw = crate::whitening::fit_lw(&matching, &non_matching, &vectors)?;
    let pcaw = crate::whitening::fit_pcaw(&vectors)?;
    Ok((lw, pcaw))
}

/// Settings of one fine-tuning run on a benchmark.
#[derive(Debug, Clone)]
pub struct FineTune {
    pub train: TrainConfig,
    pub mining: MiningConfig,
    pub loss: LossConfig,
    pub kind: LossKind,
    pub positive: PositiveMethod,
    pub variant: NegativeVariant,
    pub spec: NetSpec,
}

impl Default for FineTune {
    fn default() -> Self {
        FineTune {
            train: TrainConfig::default(),
            mining: MiningConfig::default(),
            loss: LossConfig::default(),
            kind: LossKind::Contrastive,
            positive: PositiveMethod::M3,
            variant: NegativeVariant::N2,
            spec: NetSpec::tiny(),
        }
    }
}

pub struct FineTuneResult {
    pub initial: Network<f32>,
    pub outcome: TrainOutcome,
    pub initial_test_map: f64,
    pub final_test_map: f64,
    pub tuples: usize,
}

/// Initializes from `train.seed`, fine-tunes on the training clusters with
/// validation-based selection and reports held-out mAP before and after.
pub fn fine_tune(bench: &Benchmark, ft: &FineTune) -> Result<FineTuneResult> {
    let root = SeededStream::new(ft.train.seed, 0);
    let net = Network::<f32>::init(ft.spec.clone(), &root.derive_named("init"))?;
    let train_graphs = bench.role(&bench.split.train);
    let val_graphs = bench.role(&bench.split.val);
    let test_graphs = bench.role(&bench.split.test);
    let mining_stream = root.derive_named("mining");
    let set = mine_training(&net, &bench.images, &train_graphs, &ft.mining, ft.positive, ft.variant, &mining_stream)?;
    let val = mine_validation(
        &net,
        &bench.images,
        &train_graphs,
        &val_graphs,
        &ft.mining,
        ft.positive,
        ft.variant,
        &mining_stream,
    )?;
    let tuples = set.tuples.len();
    let mut source = MinedTuples {
        set,
        images: &bench.images,
    };
    let side = ft.train.max_image_side;
    let initial_test_map = held_out_map(&Extractor::new(&net, side).with_pooling(Pooling::Mac), &bench.images, &test_graphs)?.map;
    let outcome = train(&mut source, &bench.images, &val, net.clone(), &ft.train, ft.kind, &ft.loss)?;
    let final_test_map = held_out_map(&Extractor::new(&outcome.best, side), &bench.images, &test_graphs)?.map;
    Ok(FineTuneResult {
        initial: net,
        outcome,
        initial_test_map,
        final_test_map,
        tuples,
    })
}
