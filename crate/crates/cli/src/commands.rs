use crate::config::RunConfig;
use macforge::backbone::{load_checkpoint, save_checkpoint, CheckpointMeta, Image, NetSpec, Network};
use macforge::error::{Error, Result};
use macforge::extract::Extractor;
use macforge::image::{load_ppm, prepare};
use macforge::mining::{cluster_index, read_tuples, write_tuples, ClusterId, ImageId, TupleSet, VisibilityGraph};
use macforge::numeric::SeededStream;
use macforge::pipeline::{descriptor_db, fit_whitenings, held_out_truth, mine_training, mine_validation, split_clusters, Split};
use macforge::retrieval::{evaluate, EvalQuery, GroundTruth};
use macforge::synthscene::{generate, image_path, load_scenes, write_scene};
use macforge::train::{train, ImageSet, MinedTuples};
use macforge::whitening::ProjectionModel;
use macforge::descriptor::DescriptorDb;
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const SPLIT_FILE: &str = "split.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const DB_FILE: &str = "db.macd";
pub const TUPLES_FILE: &str = "tuples.jsonl";
pub const VAL_TUPLES_FILE: &str = "val_tuples.jsonl";
pub const BEST_CHECKPOINT: &str = "best.mfck";
pub const LAST_CHECKPOINT: &str = "last.mfck";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LW_FILE: &str = "lw.mfpw";
pub const PCAW_FILE: &str = "pcaw.mfpw";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn root_stream(cfg: &RunConfig) -> Result<SeededStream> {
    Ok(SeededStream::new(cfg.seed()?, 0))
}

fn load_graphs(cfg: &RunConfig) -> Result<Vec<VisibilityGraph>> {
    let graphs = load_scenes(&cfg.data_dir())?;
    if graphs.is_empty() {
        let dir = cfg.data_dir().join("scenes");
        return Err(io_err(&dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no scene files")));
    }
    Ok(graphs)
}

fn load_split(cfg: &RunConfig) -> Result<Split> {
    let path = cfg.data_dir().join(SPLIT_FILE);
    let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path,
        detail: e.to_string(),
    })
}

fn role_graphs(graphs: &[VisibilityGraph], clusters: &[ClusterId]) -> Vec<VisibilityGraph> {
    graphs
        .iter()
        .filter(|g| clusters.contains(&g.cluster_id()))
        .cloned()
        .collect()
}

fn role_clusters(split: &Split, role: &str) -> Result<Vec<ClusterId>> {
    Ok(match role {
        "train" => split.train.clone(),
        "val" => split.val.clone(),
        "test" => split.test.clone(),
        "all" => {
            let mut all: Vec<ClusterId> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
            all.sort_unstable();
            all
        }
        other => return Err(Error::Config(format!("unknown role {other:?}"))),
    })
}

fn ids_of(graphs: &[VisibilityGraph]) -> Vec<ImageId> {
    graphs.iter().flat_map(|g| g.image_ids()).collect()
}

/// The configured checkpoint, or the seeded initial network when none is set.
fn load_net(cfg: &RunConfig) -> Result<Network<f32>> {
    match cfg.optional_path("checkpoint") {
        Some(p) => load_checkpoint(&p),
        None => Network::init(NetSpec::tiny(), &root_stream(cfg)?.derive_named("init")),
    }
}

fn load_projection(cfg: &RunConfig) -> Result<Option<(ProjectionModel, usize)>> {
    let Some(path) = cfg.optional_path("projection") else {
        return Ok(None);
    };
    let model = ProjectionModel::load(&path)?;
    let dim = match cfg.get::<usize>("projection_dim")? {
        0 => model.dim(),
        d => d,
    };
    Ok(Some((model, dim)))
}

fn extractor<'a>(
    cfg: &RunConfig,
    net: &'a Network<f32>,
    projection: &'a Option<(ProjectionModel, usize)>,
) -> Result<Extractor<'a>> {
    let ex = Extractor::new(net, cfg.train()?.max_image_side).with_pooling(cfg.pooling()?);
    match projection {
        Some((m, d)) => ex.with_projection(m, *d),
        None => Ok(ex),
    }
}

fn load_images(cfg: &RunConfig, graphs: &[VisibilityGraph], ids: &[ImageId]) -> Result<Vec<Image>> {
    let cluster_of = cluster_index(graphs);
    let root = cfg.data_dir();
    ids.par_iter()
        .map(|&id| {
            let c = *cluster_of.get(&id).ok_or(Error::UnknownImage(id))?;
            load_ppm(&image_path(&root, c, id))
        })
        .collect()
}

fn load_inputs(cfg: &RunConfig, graphs: &[VisibilityGraph]) -> Result<ImageSet<f32>> {
    let ids = ids_of(graphs);
    let side = cfg.train()?.max_image_side;
    let images = load_images(cfg, graphs, &ids)?;
    Ok(ids.into_iter().zip(images.iter().map(|i| prepare(i, side))).collect())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let scene = cfg.scene()?;
    let sizes = cfg.split_sizes(scene.clusters)?;
    let graphs = generate(&scene)?;
    let ids: Vec<ClusterId> = graphs.iter().map(|g| g.cluster_id()).collect();
    let split = split_clusters(&ids, scene.seed, sizes)?;
    let out = cfg.out_dir();
    let summary = write_scene(&out, &graphs, scene.image_size)?;
    write_text(&out.join(SPLIT_FILE), &serde_json::to_string_pretty(&split).expect("split serializes"))?;
    // Held-out queries carry full-image boxes so that every crop mode applies.
    let mut gt = held_out_truth(&role_graphs(&graphs, &split.test));
    for t in gt.0.values_mut() {
        t.bbox = Some([0, 0, scene.image_size, scene.image_size]);
    }
    gt.save(&out.join(GROUND_TRUTH_FILE))?;
    println!(
        "clusters={} images={} points={} edges={} train={} val={} test={}",
        summary.clusters,
        summary.images,
        summary.points,
        summary.edges,
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

pub fn embed(cfg: &RunConfig) -> Result<()> {
    let graphs = load_graphs(cfg)?;
    let split = load_split(cfg)?;
    let role = role_graphs(&graphs, &role_clusters(&split, cfg.raw("role"))?);
    let ids = ids_of(&role);
    let net = load_net(cfg)?;
    let projection = load_projection(cfg)?;
    let ex = extractor(cfg, &net, &projection)?;
    let images = load_images(cfg, &graphs, &ids)?;
    let descriptors = ex.describe_all(&images.iter().collect::<Vec<_>>())?;
    let db = if descriptors.is_empty() {
        DescriptorDb::new(ex.output_dim())
    } else {
        descriptor_db(&ids, &descriptors)?
    };
    db.save(&cfg.out_dir().join(DB_FILE))?;
    println!("records={} dim={}", db.len(), db.dim());
    Ok(())
}

pub fn mine(cfg: &RunConfig) -> Result<()> {
    let mining = cfg.mining()?;
    let (positive, variant) = (cfg.positive()?, cfg.negative_variant()?);
    let graphs = load_graphs(cfg)?;
    let split = load_split(cfg)?;
    let train_g = role_graphs(&graphs, &split.train);
    let val_g = role_graphs(&graphs, &split.val);
    let both: Vec<VisibilityGraph> = train_g.iter().chain(&val_g).cloned().collect();
    let images = load_inputs(cfg, &both)?;
    let net = load_net(cfg)?;
    let stream = root_stream(cfg)?.derive_named("mining");
    let set = mine_training(&net, &images, &train_g, &mining, positive, variant, &stream)?;
    let val = mine_validation(&net, &images, &train_g, &val_g, &mining, positive, variant, &stream)?;
    let out = cfg.out_dir();
    write_tuples(&out.join(TUPLES_FILE), &set.tuples)?;
    write_tuples(&out.join(VAL_TUPLES_FILE), &val)?;
    println!("tuples={} skipped={} val_tuples={}", set.tuples.len(), set.skipped.len(), val.len());
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, config_hash: &str) -> Result<()> {
    let tc = cfg.train()?;
    let mining = cfg.mining()?;
    let (kind, loss) = cfg.loss()?;
    let variant = cfg.negative_variant()?;
    let tuples = read_tuples(&cfg.input_path("tuples", TUPLES_FILE))?;
    let val = read_tuples(&cfg.input_path("val_tuples", VAL_TUPLES_FILE))?;
    let graphs = load_graphs(cfg)?;
    let split = load_split(cfg)?;
    let train_g = role_graphs(&graphs, &split.train);
    let val_g = role_graphs(&graphs, &split.val);
    let both: Vec<VisibilityGraph> = train_g.iter().chain(&val_g).cloned().collect();
    let images = load_inputs(cfg, &both)?;
    let known: BTreeSet<ImageId> = images.keys().copied().collect();
    for t in tuples.iter().chain(&val) {
        if let Some(&bad) = std::iter::once(&t.q).chain([&t.m]).chain(&t.negatives).find(|i| !known.contains(i)) {
            return Err(Error::UnknownImage(bad));
        }
    }
    let set = TupleSet {
        tuples,
        skipped: Vec::new(),
        universe: ids_of(&train_g).into_iter().collect::<BTreeSet<_>>().into_iter().collect(),
        cluster_of: cluster_index(&train_g),
        variant,
        negatives: mining.negatives,
    };
    let mut source = MinedTuples { set, images: &images };
    let net = load_net(cfg)?;
    let outcome = train(&mut source, &images, &val, net, &tc, kind, &loss)?;
    let out = cfg.out_dir();
    let meta = CheckpointMeta {
        epoch: outcome.best_epoch,
        val_map: outcome.best_val_map,
        config_hash: config_hash.to_string(),
    };
    save_checkpoint(&out.join(BEST_CHECKPOINT), &outcome.best, Some(&meta))?;
    save_checkpoint(&out.join(LAST_CHECKPOINT), &outcome.last, None)?;
    write_text(&out.join(METRICS_FILE), &outcome.metrics_csv())?;
    println!(
        "loss={} initial_val_map={:.6} best_epoch={} best_val_map={:.6}",
        outcome.loss, outcome.initial_val_map, outcome.best_epoch, outcome.best_val_map
    );
    Ok(())
}

pub fn whiten(cfg: &RunConfig) -> Result<()> {
    let mining = cfg.mining()?;
    let graphs = load_graphs(cfg)?;
    let split = load_split(cfg)?;
    let train_g = role_graphs(&graphs, &split.train);
    let images = load_inputs(cfg, &train_g)?;
    let net = load_net(cfg)?;
    let (lw, pcaw) = fit_whitenings(&net, &images, &train_g, &mining, &root_stream(cfg)?)?;
    let out = cfg.out_dir();
    lw.save(&out.join(LW_FILE))?;
    pcaw.save(&out.join(PCAW_FILE))?;
    println!("dim={} lw={} pcaw={}", lw.dim(), LW_FILE, PCAW_FILE);
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let mode = cfg.mode()?;
    let db_path = cfg.input_path("db", DB_FILE);
    let gt_path = cfg.input_path("ground_truth", GROUND_TRUTH_FILE);
    let db = DescriptorDb::load(&db_path)?;
    let gt = GroundTruth::load(&gt_path)?;
    let graphs = load_graphs(cfg)?;
    let ids = gt
        .0
        .keys()
        .map(|k| {
            k.parse::<ImageId>().map_err(|_| Error::Format {
                path: gt_path.clone(),
                detail: format!("query id {k:?} is not an image id"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let images = load_images(cfg, &graphs, &ids)?;
    let by_id: BTreeMap<String, &Image> = gt.0.keys().cloned().zip(images.iter()).collect();
    let queries: Vec<EvalQuery<'_>> = by_id
        .iter()
        .map(|(id, img)| EvalQuery {
            id: id.clone(),
            image: img,
            bbox: None,
        })
        .collect();
    let net = load_net(cfg)?;
    let projection = load_projection(cfg)?;
    let ex = extractor(cfg, &net, &projection)?;
    let report = evaluate(&db, &queries, &gt, mode, &ex)?;
    print!("{}", report.to_csv());
    Ok(())
}
