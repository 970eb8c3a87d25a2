//! Siamese fine-tuning: batch gradients through MAC and normalization,
//! momentum SGD with a step schedule, periodic hard-negative re-mining and
//! validation-based model selection.

use crate::backbone::{ActivationTensor, NetParams, Network};
use crate::descriptor::{l2n, mac, mac_backward, Descriptor};
use crate::error::{Error, Result};
use crate::loss::{contrastive_loss, l2n_backward, triplet_loss, LossConfig, LossKind, PairLabel};
use crate::mining::{DescriptorMap, ImageId, TrainingTuple, TupleSet};
use crate::numeric::{Real, SeededStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_divisor: f64,
    pub lr_period: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_tuples: usize,
    pub max_epochs: usize,
    pub negatives_per_tuple: usize,
    pub remine_per_epoch: usize,
    pub max_image_side: usize,
    /// Leading convolutions whose parameters stay fixed.
    pub freeze_layers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.001,
            lr_divisor: 5.0,
            lr_period: 10,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_tuples: 5,
            max_epochs: 30,
            negatives_per_tuple: 5,
            remine_per_epoch: 3,
            max_image_side: 362,
            freeze_layers: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.base_lr, self.lr_divisor]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        let nonneg = [self.momentum, self.weight_decay]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite());
        if !pos || !nonneg {
            return Err(Error::Config("learning rate, divisor, momentum and weight decay must be positive".into()));
        }
        if self.lr_period == 0 || self.batch_tuples == 0 || self.negatives_per_tuple == 0 || self.max_image_side == 0 {
            return Err(Error::Config(
                "lr_period, batch_tuples, negatives_per_tuple and max_image_side must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `base_lr / lr_divisor^floor(epoch / lr_period)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.base_lr / cfg.lr_divisor.powi((epoch / cfg.lr_period) as i32)
}

/// `v ← μ·v − lr·(g + wd·w)`, `w ← w + v`. Decay touches weights, not biases.
pub fn sgd_step<T: Real>(
    params: &mut NetParams<T>,
    grads: &NetParams<T>,
    velocity: &mut NetParams<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(velocity) {
        return Err(Error::Spec("parameter, gradient and velocity shapes differ".into()));
    }
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for ((p, g), v) in params.convs.iter_mut().zip(&grads.convs).zip(velocity.convs.iter_mut()) {
        for ((w, &gw), vw) in p.weight.iter_mut().zip(&g.weight).zip(v.weight.iter_mut()) {
            *vw = mu * *vw - lr * (gw + wd * *w);
            *w += *vw;
        }
        for ((b, &gb), vb) in p.bias.iter_mut().zip(&g.bias).zip(v.bias.iter_mut()) {
            *vb = mu * *vb - lr * gb;
            *b += *vb;
        }
    }
    Ok(())
}

/// Network inputs (see [`crate::image::prepare`]) keyed by id.
pub type ImageSet<T> = HashMap<ImageId, ActivationTensor<T>>;

#[derive(Debug, Clone)]
pub struct BatchGradient<T> {
    /// Mean loss over the batch's pairs (or triplets).
    pub loss: f64,
    pub grads: NetParams<T>,
    pub terms: usize,
}

fn fetch<'a, T>(images: &'a ImageSet<T>, id: ImageId) -> Result<&'a ActivationTensor<T>> {
    images.get(&id).ok_or(Error::UnknownImage(id))
}

/// Loss and parameter gradient of a batch of tuples. Each distinct image is
/// forwarded once; the contrastive loss averages over `1 + |negatives|`
/// pairs per tuple, the triplet loss over `|negatives|` triplets per tuple.
pub fn batch_gradient<T: Real>(
    net: &Network<T>,
    images: &ImageSet<T>,
    tuples: &[TrainingTuple],
    kind: LossKind,
    cfg: &LossConfig,
) -> Result<BatchGradient<T>> {
    let ids: Vec<ImageId> = tuples
        .iter()
        .flat_map(|t| std::iter::once(t.q).chain(std::iter::once(t.m)).chain(t.negatives.iter().copied()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let forwards = ids
        .par_iter()
        .map(|&id| {
            let (x, tape) = net.forward(fetch(images, id)?)?;
            let raw = mac(&x);
            let unit = l2n(&raw);
            Ok((x, tape, raw, unit))
        })
        .collect::<Result<Vec<_>>>()?;
    let slot: BTreeMap<ImageId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let unit = |id: ImageId| &forwards[slot[&id]].3;

    let k = net.output_dim();
    let mut upstream = vec![vec![0.0f64; k]; ids.len()];
    let add = |up: &mut Vec<Vec<f64>>, id: ImageId, g: &[f64]| {
        for (a, b) in up[slot[&id]].iter_mut().zip(g) {
            *a += b;
        }
    };
    let mut total = 0.0;
    let mut terms = 0usize;
    for t in tuples {
        match kind {
            LossKind::Contrastive => {
                let pairs = std::iter::once((t.m, PairLabel::Matching))
                    .chain(t.negatives.iter().map(|&n| (n, PairLabel::NonMatching)));
                for (other, y) in pairs {
                    let l = contrastive_loss(unit(t.q), unit(other), y, cfg.tau)?;
                    total += l.loss;
                    add(&mut upstream, t.q, &l.grad_a);
                    add(&mut upstream, other, &l.grad_b);
                    terms += 1;
                }
            }
            LossKind::Triplet => {
                for &n in &t.negatives {
                    let l = triplet_loss(unit(t.q), unit(t.m), unit(n), cfg.triplet_margin)?;
                    total += l.loss;
                    add(&mut upstream, t.q, &l.grad_q);
                    add(&mut upstream, t.m, &l.grad_p);
                    add(&mut upstream, n, &l.grad_n);
                    terms += 1;
                }
            }
        }
    }
    if terms == 0 {
        return Err(Error::Config("batch has no loss terms".into()));
    }
    let inv = 1.0 / terms as f64;
    let per_image = forwards
        .par_iter()
        .zip(&upstream)
        .map(|((x, tape, raw, _), g)| {
            let g: Vec<f64> = g.iter().map(|v| v * inv).collect();
            let g_raw = l2n_backward(raw.values(), &g);
            net.backward(tape, &mac_backward(x, &g_raw)).map(|(p, _)| p)
        })
        .collect::<Result<Vec<_>>>()?;
    // Fixed reduction order: ascending image id.
    let mut grads = NetParams::zeros_like(&net.spec);
    for p in &per_image {
        grads.accumulate(p);
    }
    Ok(BatchGradient {
        loss: total * inv,
        grads,
        terms,
    })
}

/// MAC descriptors of `ids` under `net`, keyed by id.
pub fn describe_images(net: &Network<f32>, images: &ImageSet<f32>, ids: &[ImageId]) -> Result<DescriptorMap> {
    ids.par_iter()
        .map(|&id| Ok((id, l2n(&mac(&net.infer(fetch(images, id)?)?)))))
        .collect()
}

/// Rank (1-based) of the positive among itself and the negatives. Ties
/// count in the positive's favour.
pub fn positive_rank(pos_score: f64, neg_scores: &[f64]) -> usize {
    1 + neg_scores.iter().filter(|&&s| s > pos_score).count()
}

/// Mean of `1/rank` of the positive over tuples, ranking by similarity to the query.
pub fn validate(net: &Network<f32>, images: &ImageSet<f32>, tuples: &[TrainingTuple]) -> Result<f64> {
    if tuples.is_empty() {
        return Err(Error::Protocol("no validation tuples".into()));
    }
    let ids: Vec<ImageId> = tuples
        .iter()
        .flat_map(|t| std::iter::once(t.q).chain(std::iter::once(t.m)).chain(t.negatives.iter().copied()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let d = describe_images(net, images, &ids)?;
    validate_descriptors(&d, tuples)
}

pub fn validate_descriptors(d: &DescriptorMap, tuples: &[TrainingTuple]) -> Result<f64> {
    if tuples.is_empty() {
        return Err(Error::Protocol("no validation tuples".into()));
    }
    let get = |id: ImageId| d.get(&id).ok_or(Error::UnknownImage(id));
    let sim = |a: &Descriptor, b: &Descriptor| crate::descriptor::similarity(a, b);
    let mut sum = 0.0;
    for t in tuples {
        let q = get(t.q)?;
        let pos = sim(q, get(t.m)?)?;
        let negs = t
            .negatives
            .iter()
            .map(|&n| sim(q, get(n)?))
            .collect::<Result<Vec<_>>>()?;
        sum += 1.0 / positive_rank(pos, &negs) as f64;
    }
    Ok(sum / tuples.len() as f64)
}

/// Supplies training tuples and refreshes their negatives on request.
pub trait TupleSource {
    fn tuples(&self) -> &[TrainingTuple];
    fn remine(&mut self, net: &Network<f32>) -> Result<()>;
}

/// Tuples whose negatives are fixed.
impl TupleSource for Vec<TrainingTuple> {
    fn tuples(&self) -> &[TrainingTuple] {
        self
    }
    fn remine(&mut self, _: &Network<f32>) -> Result<()> {
        Ok(())
    }
}

/// A mined tuple set that re-mines against MAC descriptors of the current network.
pub struct MinedTuples<'a> {
    pub set: TupleSet,
    pub images: &'a ImageSet<f32>,
}

impl TupleSource for MinedTuples<'_> {
    fn tuples(&self) -> &[TrainingTuple] {
        &self.set.tuples
    }
    fn remine(&mut self, net: &Network<f32>) -> Result<()> {
        let d = describe_images(net, self.images, &self.set.mining_images())?;
        self.set.remine(&d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_map: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Network<f32>,
    pub best_epoch: usize,
    pub best_val_map: f64,
    pub initial_val_map: f64,
    pub last: Network<f32>,
    pub metrics: Vec<EpochMetrics>,
    pub loss: LossKind,
}

impl TrainOutcome {
    /// `epoch,lr,train_loss,val_map` rows preceded by a `# loss=...` line.
    pub fn metrics_csv(&self) -> String {
        let mut out = format!("# loss={}\nepoch,lr,train_loss,val_map\n", self.loss);
        for m in &self.metrics {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", m.epoch, m.lr, m.train_loss, m.val_map));
        }
        out
    }
}

/// Trains for `cfg.max_epochs` epochs. Epoch `e` (0-based) runs with
/// `lr_at(e)`. `images` must cover training and validation tuples. Tuple
/// order is reshuffled per epoch, negatives are re-mined
/// `remine_per_epoch` times at evenly spaced batch boundaries, and the
/// network with the highest validation mAP is kept (earliest on ties).
pub fn train<S: TupleSource>(
    source: &mut S,
    images: &ImageSet<f32>,
    val_tuples: &[TrainingTuple],
    mut net: Network<f32>,
    cfg: &TrainConfig,
    kind: LossKind,
    loss_cfg: &LossConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if source.tuples().is_empty() {
        return Err(Error::Config("no training tuples".into()));
    }
    let stream = SeededStream::new(cfg.seed, 0).derive_named("train");
    let initial_val_map = validate(&net, images, val_tuples)?;
    let mut velocity = NetParams::zeros_like(&net.spec);
    let mut best: Option<(usize, f64, Network<f32>)> = None;
    let mut metrics = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg);
        let n = source.tuples().len();
        let mut order: Vec<usize> = (0..n).collect();
        stream.derive_named("shuffle").derive(epoch as u64).shuffle(&mut order);
        let batches = n.div_ceil(cfg.batch_tuples);
        let remine_at: BTreeSet<usize> = (0..cfg.remine_per_epoch)
            .map(|r| r * batches / cfg.remine_per_epoch)
            .collect();
        let mut loss_sum = 0.0;
        for b in 0..batches {
            if remine_at.contains(&b) {
                source.remine(&net)?;
            }
            let batch: Vec<TrainingTuple> = order[b * cfg.batch_tuples..((b + 1) * cfg.batch_tuples).min(n)]
                .iter()
                .map(|&i| source.tuples()[i].clone())
                .collect();
            let mut g = batch_gradient(&net, images, &batch, kind, loss_cfg)?;
            if !g.loss.is_finite() || !g.grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: g.loss,
                });
            }
            for c in g.grads.convs.iter_mut().take(cfg.freeze_layers) {
                c.weight.iter_mut().chain(c.bias.iter_mut()).for_each(|v| *v = 0.0);
            }
            sgd_step(&mut net.params, &g.grads, &mut velocity, lr, cfg.momentum, cfg.weight_decay)?;
            loss_sum += g.loss;
        }
        if !net.params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: batches.saturating_sub(1),
                loss: f64::NAN,
            });
        }
        let val_map = validate(&net, images, val_tuples)?;
        let train_loss = loss_sum / batches as f64;
        log::info!("epoch {epoch} lr {lr:e} loss {train_loss:.6} val mAP {val_map:.6}");
        metrics.push(EpochMetrics {
            epoch,
            lr,
            train_loss,
            val_map,
        });
        if best.as_ref().is_none_or(|(_, m, _)| val_map > *m) {
            best = Some((epoch, val_map, net.clone()));
        }
    }
    let (best_epoch, best_val_map, best_net) = match best {
        Some(b) => b,
        None => (0, initial_val_map, net.clone()),
    };
    Ok(TrainOutcome {
        best: best_net,
        best_epoch,
        best_val_map,
        initial_val_map,
        last: net,
        metrics,
        loss: kind,
    })
}
