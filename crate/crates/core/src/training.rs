//! Pair mining, RMSProp with element-wise clipping, and the epoch loop with
//! learning-rate decay and early stopping on validation rank-1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, score_matrix, Protocol};
use crate::model::{EmbeddingModel, Label, PairExample};
use crate::numerics::SeededRng;

pub const DEFAULT_MARGIN: f64 = 0.5;
pub const DEFAULT_BATCH_SIZE: usize = 100;
pub const DEFAULT_RMSPROP_DECAY: f64 = 0.95;
pub const DEFAULT_CLIP: f64 = 5.0;
pub const DEFAULT_MAX_EPOCHS: usize = 20;
pub const DEFAULT_PATIENCE: usize = 3;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;
pub const RMSPROP_EPSILON: f64 = 1e-8;
/// Hard negatives mined per positive pair of an image.
pub const NEGATIVES_PER_POSITIVE: usize = 2;

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_decay() -> f64 {
    DEFAULT_RMSPROP_DECAY
}
fn default_clip() -> f64 {
    DEFAULT_CLIP
}
fn default_max_epochs() -> usize {
    DEFAULT_MAX_EPOCHS
}
fn default_patience() -> usize {
    DEFAULT_PATIENCE
}
fn default_validation_fraction() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}
fn default_epsilon() -> f64 {
    RMSPROP_EPSILON
}
fn default_true() -> bool {
    true
}

/// Optimization settings. `lr`, `lr_decay_per_epoch` and `hidden_dim` have no
/// defaults: they depend on the dataset and must be chosen explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_decay")]
    pub rmsprop_decay: f64,
    #[serde(default = "default_clip")]
    pub clip: f64,
    pub lr: f64,
    pub lr_decay_per_epoch: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Standardize inputs using training-partition statistics.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Compute per-pair gradients on the rayon pool. The reduction order is
    /// fixed, so results match the sequential path bit for bit.
    #[serde(default)]
    pub parallel: bool,
}

impl TrainConfig {
    /// Defaults for everything except the three dataset-dependent values.
    pub fn new(lr: f64, lr_decay_per_epoch: f64, hidden_dim: usize) -> Self {
        TrainConfig {
            margin: DEFAULT_MARGIN,
            batch_size: DEFAULT_BATCH_SIZE,
            rmsprop_decay: DEFAULT_RMSPROP_DECAY,
            clip: DEFAULT_CLIP,
            lr,
            lr_decay_per_epoch,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            hidden_dim,
            seed: 0,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            epsilon: RMSPROP_EPSILON,
            normalize: true,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("{what}: {self:?}")));
        if !(self.margin > 0.0) {
            return bad("margin must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return bad("rmsprop_decay must lie in (0, 1)");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be > 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch.is_finite()) {
            return bad("lr_decay_per_epoch must be > 0");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedPairs {
    pub pairs: Vec<PairExample>,
    pub positives: usize,
    pub negatives: usize,
    /// Identities with no cross-camera positive pair.
    pub skipped_identities: usize,
}

/// Builds training pairs: every cross-camera same-identity pair, plus for each
/// image `2 ×` (its positive count) nearest wrong-identity images in raw
/// concatenated feature space (ties by item order). The final list is
/// shuffled with `seed`.
pub fn mine_pairs(set: &FeatureSet, seed: u64) -> Result<MinedPairs> {
    let items = set.items();
    if set.identities().len() < 2 {
        return Err(Error::InvalidArgument("pair mining needs at least two identities".into()));
    }

    let mut positives = Vec::new();
    let mut positive_count = vec![0usize; items.len()];
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            if items[i].identity == items[j].identity && items[i].camera != items[j].camera {
                positives.push((i, j));
                positive_count[i] += 1;
                positive_count[j] += 1;
            }
        }
    }
    let skipped_identities = set
        .identities()
        .into_iter()
        .filter(|&id| !positives.iter().any(|&(i, _)| items[i].identity == id))
        .count();

    let negatives: Vec<(usize, usize)> = (0..items.len())
        .into_par_iter()
        .flat_map_iter(|anchor| {
            let wanted = NEGATIVES_PER_POSITIVE * positive_count[anchor];
            nearest_impostors(set, anchor, wanted).into_iter().map(move |j| (anchor, j))
        })
        .collect();

    let mut pairs: Vec<(usize, usize, Label)> = positives
        .iter()
        .map(|&(i, j)| (i, j, Label::Similar))
        .chain(negatives.iter().map(|&(i, j)| (i, j, Label::Dissimilar)))
        .collect();
    SeededRng::new(seed).shuffle(&mut pairs);

    let pairs = pairs
        .into_iter()
        .enumerate()
        .map(|(index, (i, j, label))| PairExample::new(items[i].seq.clone(), items[j].seq.clone(), label, index))
        .collect::<Result<Vec<_>>>()?;
    Ok(MinedPairs {
        pairs,
        positives: positives.len(),
        negatives: negatives.len(),
        skipped_identities,
    })
}

/// Indices of the `count` items of other identities closest to `anchor`.
fn nearest_impostors(set: &FeatureSet, anchor: usize, count: usize) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    let items = set.items();
    let a = items[anchor].seq.concat();
    let mut candidates: Vec<(f64, usize)> = items
        .iter()
        .enumerate()
        .filter(|(_, it)| it.identity != items[anchor].identity)
        .map(|(j, it)| {
            let d2: f64 = a.iter().zip(it.seq.concat()).map(|(x, y)| (x - y) * (x - y)).sum();
            (d2, j)
        })
        .collect();
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    candidates.into_iter().take(count).map(|(_, j)| j).collect()
}

/// Clamps every entry to `[-clip, clip]`.
pub fn clip_gradients(grads: &mut [Vec<f64>], clip: f64) {
    for g in grads.iter_mut().flatten() {
        *g = g.clamp(-clip, clip);
    }
}

/// Running averages of squared gradients, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub caches: Vec<Vec<f64>>,
    pub decay: f64,
    pub epsilon: f64,
}

impl RmspropState {
    pub fn new<M: EmbeddingModel>(model: &M, decay: f64, epsilon: f64) -> Self {
        RmspropState {
            caches: model.parameters().iter().map(|p| vec![0.0; p.len()]).collect(),
            decay,
            epsilon,
        }
    }

    pub fn for_shapes(lens: &[usize], decay: f64, epsilon: f64) -> Self {
        RmspropState {
            caches: lens.iter().map(|&n| vec![0.0; n]).collect(),
            decay,
            epsilon,
        }
    }
}

/// `cache ← ρ·cache + (1−ρ)·g²;  θ ← θ − lr·g / (√cache + ε)`
pub fn rmsprop_step(params: Vec<&mut [f64]>, grads: &[Vec<f64>], state: &mut RmspropState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.caches.len() {
        return Err(Error::shape(
            "rmsprop_step tensors",
            format!("params={}, grads={}", params.len(), grads.len()),
            state.caches.len(),
        ));
    }
    for ((p, g), cache) in params.iter().zip(grads).zip(&state.caches) {
        if p.len() != g.len() || p.len() != cache.len() {
            return Err(Error::shape("rmsprop_step", p.len(), format!("grad={}, cache={}", g.len(), cache.len())));
        }
    }
    let rho = state.decay;
    for ((p, g), cache) in params.into_iter().zip(grads).zip(state.caches.iter_mut()) {
        for ((w, &gi), c) in p.iter_mut().zip(g).zip(cache.iter_mut()) {
            *c = rho * *c + (1.0 - rho) * gi * gi;
            *w -= lr * gi / (c.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Held-out identities scored during training.
#[derive(Debug, Clone)]
pub struct Validation {
    pub query: FeatureSet,
    pub gallery: FeatureSet,
}

impl Validation {
    /// Queries are each identity's items from its lowest camera; the rest form
    /// the gallery.
    pub fn from_set(set: &FeatureSet) -> Self {
        let mut first_cam = std::collections::HashMap::new();
        for it in set.items() {
            let c = first_cam.entry(it.identity).or_insert(it.camera);
            *c = (*c).min(it.camera);
        }
        let (q, g): (Vec<usize>, Vec<usize>) =
            (0..set.len()).partition(|&i| first_cam[&set.items()[i].identity] == set.items()[i].camera);
        Validation {
            query: set.subset(&q),
            gallery: set.subset(&g),
        }
    }

    pub fn rank1<M: EmbeddingModel>(&self, model: &M) -> Result<f64> {
        let scores = score_matrix(model, &self.query, &self.gallery)?;
        Ok(evaluate(&scores, Protocol::SingleQuery)?.rank1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_rank1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters after the epoch with the best validation rank-1 (earliest
    /// on ties).
    pub model: M,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

fn batch_gradients<M: EmbeddingModel>(
    model: &M,
    batch: &[&PairExample],
    margin: f64,
    parallel: bool,
) -> Result<Vec<(f64, Vec<Vec<f64>>)>> {
    if parallel {
        batch.par_iter().map(|p| model.pair_gradients(p, margin)).collect()
    } else {
        batch.iter().map(|p| model.pair_gradients(p, margin)).collect()
    }
}

/// Mini-batch training with RMSProp; see [`TrainConfig`].
///
/// Batch gradients are the mean of per-pair gradients (each already summed
/// over both branches), clipped element-wise before the update.
pub fn train<M: EmbeddingModel>(
    model: M,
    pairs: &[PairExample],
    validation: &Validation,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<M>> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    let mut model = model;
    let mut state = RmspropState::new(&model, config.rmsprop_decay, config.epsilon);
    let mut rng = SeededRng::new(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut lr = config.lr;

    let mut best: Option<(f64, usize, M)> = None;
    let mut stale_epochs = 0;
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PairExample> = chunk.iter().map(|&i| &pairs[i]).collect();
            let results = batch_gradients(&model, &batch, config.margin, config.parallel)?;

            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> = model.parameters().iter().map(|p| vec![0.0; p.len()]).collect();
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    crate::numerics::axpy(scale, gi, acc);
                }
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_idx });
            }

            clip_gradients(&mut grads, config.clip);
            rmsprop_step(model.parameters_mut(), &grads, &mut state, lr)?;
            loss_sum += batch_loss;
            batches += 1;
        }

        let val_rank1 = validation.rank1(&model)?;
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / batches as f64,
            val_rank1,
            lr,
        };
        log::info!(
            "epoch {epoch}: loss {:.6}, val rank-1 {:.4}, lr {:.3e}",
            entry.mean_loss,
            val_rank1,
            lr
        );
        on_epoch(&entry);
        log.push(entry);

        if best.as_ref().map_or(true, |(r, _, _)| val_rank1 > *r) {
            best = Some((val_rank1, epoch, model.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
        }
        lr *= config.lr_decay_per_epoch;
        if stale_epochs >= config.patience {
            break;
        }
    }

    let (_, best_epoch, model) = best.expect("at least one epoch runs");
    Ok(TrainOutcome { model, best_epoch, log })
}
