//! The iterative training loop: per-epoch clustering, camera-aware
//! splitting, memory construction, proxy-balanced batch sampling, loss
//! evaluation, gradient steps on a learnable embedding table, and
//! moving-average memory updates.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::association::{
    associate_merged, associate_offline, associate_online, AssociationParams, AssociationResult,
};
use crate::clustering::{
    dbscan, discard_outliers, split_by_camera, DbscanParams, LabeledInstance, ProxyTable,
};
use crate::dataset::{self, Instance};
use crate::error::{O2capError, Result};
use crate::eval::{
    association_stats, clustering_quality, evaluate_retrieval, AssociationStats, ClusteringQuality,
    RetrievalMetrics,
};
use crate::losses::{
    loss_base, loss_base2, loss_intra, loss_o2cap, loss_positive_set, LossOutput, LossParams,
};
use crate::memory::{MemoryBank, MemoryLevel};
use crate::metricspace::{cosine_matrix, jaccard_distance, knn, JaccardParams, Matrix};
use crate::vecmath;

/// Which objective drives the gradient steps; mirrors the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Cluster-level softmax over all clusters.
    Base,
    /// Cluster-level softmax over hard-negative clusters.
    Base2,
    /// Offline-associated proxy loss.
    Off,
    /// Online-associated proxy loss.
    On,
    /// Offline + online proxy losses.
    O2cap,
    /// Single loss over the merged positive set.
    Merge,
    /// Intra-camera loss + offline proxy loss.
    Cap,
}

impl LossMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Self::Base),
            "base2" => Ok(Self::Base2),
            "off" => Ok(Self::Off),
            "on" => Ok(Self::On),
            "o2cap" => Ok(Self::O2cap),
            "merge" => Ok(Self::Merge),
            "cap" => Ok(Self::Cap),
            other => Err(O2capError::Config(format!("unknown loss mode {other:?}"))),
        }
    }

    fn needs_cluster_bank(&self) -> bool {
        matches!(self, Self::Base | Self::Base2)
    }
}

/// P proxies per batch, K instances per proxy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct BatchShape {
    pub proxies: usize,
    pub instances: usize,
}

impl Default for BatchShape {
    fn default() -> Self {
        Self {
            proxies: 8,
            instances: 4,
        }
    }
}

impl BatchShape {
    pub fn size(&self) -> usize {
        self.proxies * self.instances
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Batches per epoch; 0 means ceil(N' / batch size).
    pub iters_per_epoch: usize,
    pub batch: BatchShape,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub mu: f64,
    pub loss: LossParams,
    pub assoc: AssociationParams,
    pub loss_mode: LossMode,
    pub renormalize_memory: bool,
    /// Cluster on the k-reciprocal Jaccard distance; otherwise plain
    /// (1 - cosine) / 2.
    pub use_jaccard: bool,
    pub jaccard: JaccardParams,
    pub dbscan: DbscanParams,
    /// Associate against the epoch-start bank instead of the batch-start
    /// bank.
    pub assoc_bank_epoch_start: bool,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 25,
            iters_per_epoch: 0,
            batch: BatchShape::default(),
            lr: 0.5,
            warmup_epochs: 5,
            decay_factor: 0.1,
            decay_every: 15,
            mu: 0.2,
            loss: LossParams::default(),
            assoc: AssociationParams::default(),
            loss_mode: LossMode::O2cap,
            renormalize_memory: true,
            use_jaccard: true,
            jaccard: JaccardParams::default(),
            dbscan: DbscanParams::default(),
            assoc_bank_epoch_start: false,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_cameras: u32) -> Result<()> {
        if self.batch.proxies == 0 || self.batch.instances == 0 {
            return Err(O2capError::Config("batch shape must be positive".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(O2capError::Config(format!(
                "lr={} must be finite and >= 0",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(O2capError::Config(format!(
                "mu={} must lie in [0,1]",
                self.mu
            )));
        }
        self.loss.validate()?;
        self.assoc.validate(num_cameras)?;
        self.dbscan.validate()?;
        Ok(())
    }

    /// Linear warmup then step decay, the schedule shape scaled to the
    /// configured horizon.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.warmup_epochs > 0 && epoch < self.warmup_epochs {
            return self.lr * (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        let steps = if self.decay_every > 0 {
            epoch / self.decay_every
        } else {
            0
        };
        self.lr * self.decay_factor.powi(steps as i32)
    }
}

/// The learnable parameters: one unit vector per training instance,
/// standing in for the feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub table: Vec<Vec<f64>>,
}

/// Neighbors used when extending the table to unseen raw embeddings.
const EXTENSION_NEIGHBORS: usize = 10;
const EXTENSION_TEMP: f64 = 0.07;

impl EmbeddingModel {
    pub fn from_instances(instances: &[Instance]) -> Self {
        Self {
            table: instances.iter().map(|i| i.embedding.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Map an unseen raw embedding into the learned space: softmax-weighted
    /// average of the table rows of the nearest raw training embeddings.
    pub fn embed_raw(&self, raw: &[f64], train_raw: &[Vec<f64>]) -> Vec<f64> {
        let sims: Vec<f64> = train_raw.iter().map(|t| vecmath::dot(t, raw)).collect();
        let neighbors = knn(&sims, EXTENSION_NEIGHBORS, |_| false);
        let max = neighbors
            .iter()
            .map(|&i| sims[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out = vec![0.0; raw.len()];
        let mut total = 0.0;
        for &i in &neighbors {
            let w = ((sims[i] - max) / EXTENSION_TEMP).exp();
            total += w;
            vecmath::axpy(&mut out, w, &self.table[i]);
        }
        for x in out.iter_mut() {
            *x /= total;
        }
        if !vecmath::normalize(&mut out) {
            out = self.table[neighbors[0]].clone();
        }
        out
    }

    /// Embed a whole held-out set against this model.
    pub fn embed_instances(&self, held_out: &[Instance], train_raw: &[Vec<f64>]) -> Vec<Instance> {
        held_out
            .iter()
            .map(|inst| Instance {
                embedding: self.embed_raw(&inst.embedding, train_raw),
                ..inst.clone()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub num_clusters: usize,
    pub num_proxies: usize,
    pub num_outliers: usize,
    pub batches: usize,
    pub assoc: Option<AssociationStats>,
    pub clustering: Option<ClusteringQuality>,
    pub retrieval: Option<RetrievalMetrics>,
    /// Structural-invariant violations observed this epoch; empty on a
    /// healthy run.
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

/// Proxy-balanced sampling: P distinct proxies, K instances per proxy,
/// with replacement only when a proxy has fewer than K members.
pub fn sample_batch(
    table: &ProxyTable,
    shape: &BatchShape,
    rng: &mut ChaCha8Rng,
) -> (Vec<LabeledInstance>, bool) {
    let z = table.num_proxies();
    let p = shape.proxies.min(z);
    let shrunk = p < shape.proxies;
    let chosen = rand::seq::index::sample(rng, z, p);
    let mut batch = Vec::with_capacity(p * shape.instances);
    for j in chosen {
        let proxy = table.proxy(j);
        let members: Vec<usize> = if proxy.members.len() >= shape.instances {
            rand::seq::index::sample(rng, proxy.members.len(), shape.instances)
                .into_iter()
                .map(|m| proxy.members[m])
                .collect()
        } else {
            (0..shape.instances)
                .map(|_| proxy.members[rng.gen_range(0..proxy.members.len())])
                .collect()
        };
        let range = table.camera_range(proxy.camera);
        for inst in members {
            batch.push(LabeledInstance {
                instance: inst,
                global_label: proxy.cluster,
                camera: proxy.camera,
                proxy_label: j - range.start,
                proxy_index: j,
            });
        }
    }
    (batch, shrunk)
}

/// Mutable state carried across epochs.
pub struct TrainState<'a> {
    pub model: EmbeddingModel,
    pub dataset: &'a [Instance],
    pub raw: Vec<Vec<f64>>,
    pub rng: ChaCha8Rng,
}

impl<'a> TrainState<'a> {
    pub fn new(dataset: &'a [Instance], seed: u64) -> Self {
        Self {
            model: EmbeddingModel::from_instances(dataset),
            dataset,
            raw: dataset.iter().map(|i| i.embedding.clone()).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

fn pairwise_distance(feats: &[Vec<f64>], cfg: &TrainConfig) -> Result<Matrix> {
    if cfg.use_jaccard {
        jaccard_distance(feats, &cfg.jaccard)
    } else {
        let cos = cosine_matrix(feats, feats)?;
        let n = feats.len();
        let mut d = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    0.0
                } else {
                    ((1.0 - cos.get(i, j)) / 2.0).clamp(0.0, 1.0)
                };
                d.set(i, j, v);
            }
        }
        Ok(d)
    }
}

fn cluster_slots(table: &ProxyTable) -> Vec<Vec<usize>> {
    let mut slots = vec![Vec::new(); table.num_clusters()];
    for p in table.proxies() {
        slots[p.cluster].extend(&p.members);
    }
    slots
}

fn proxy_slots(table: &ProxyTable) -> Vec<Vec<usize>> {
    table.proxies().iter().map(|p| p.members.clone()).collect()
}

struct AnchorEval {
    loss: LossOutput,
    online: Option<AssociationResult>,
    offline: Option<AssociationResult>,
}

fn eval_anchor(
    feature: &[f64],
    anchor: &LabeledInstance,
    table: &ProxyTable,
    bank: &MemoryBank,
    cfg: &TrainConfig,
) -> Result<AnchorEval> {
    let p = &cfg.assoc;
    let lp = &cfg.loss;
    match cfg.loss_mode {
        LossMode::Base => Ok(AnchorEval {
            loss: loss_base(feature, bank, anchor.global_label, lp)?,
            online: None,
            offline: None,
        }),
        LossMode::Base2 => {
            let sims = bank.similarities(feature);
            let negatives = knn(&sims, p.k1, |j| j == anchor.global_label);
            Ok(AnchorEval {
                loss: loss_base2(feature, bank, anchor.global_label, &negatives, lp)?,
                online: None,
                offline: None,
            })
        }
        LossMode::Off => {
            let off = associate_offline(feature, anchor, table, bank, p);
            Ok(AnchorEval {
                loss: loss_positive_set(feature, bank, &off.positives, &off.negatives, lp)?,
                online: None,
                offline: Some(off),
            })
        }
        LossMode::On => {
            let on = associate_online(feature, anchor, table, bank, p);
            Ok(AnchorEval {
                loss: loss_positive_set(feature, bank, &on.positives, &on.negatives, lp)?,
                online: Some(on),
                offline: None,
            })
        }
        LossMode::O2cap => {
            let off = associate_offline(feature, anchor, table, bank, p);
            let on = associate_online(feature, anchor, table, bank, p);
            Ok(AnchorEval {
                loss: loss_o2cap(feature, bank, &off, &on, lp)?,
                online: Some(on),
                offline: Some(off),
            })
        }
        LossMode::Merge => {
            let merged = associate_merged(feature, anchor, table, bank, p);
            Ok(AnchorEval {
                loss: loss_positive_set(feature, bank, &merged.positives, &merged.negatives, lp)?,
                online: None,
                offline: None,
            })
        }
        LossMode::Cap => {
            let off = associate_offline(feature, anchor, table, bank, p);
            let mut loss = loss_positive_set(feature, bank, &off.positives, &off.negatives, lp)?;
            let intra = loss_intra(feature, bank, anchor, table.camera_range(anchor.camera), lp)?;
            loss.value += intra.value;
            vecmath::axpy(&mut loss.grad, 1.0, &intra.grad);
            Ok(AnchorEval {
                loss,
                online: None,
                offline: Some(off),
            })
        }
    }
}

/// Run one epoch: cluster, split, rebuild memory, then iterate batches.
pub fn train_epoch(
    state: &mut TrainState,
    cfg: &TrainConfig,
    epoch: usize,
    eval_split: Option<(&[Instance], &[Instance])>,
) -> Result<EpochReport> {
    let lr = cfg.lr_at(epoch);
    let feats: Vec<Vec<f64>> = state.model.table.clone();
    let dist = pairwise_distance(&feats, cfg)?;
    let assignment = dbscan(&dist, &cfg.dbscan)?;
    let retained = discard_outliers(&assignment)?;
    let cameras: Vec<u32> = state.dataset.iter().map(|i| i.camera).collect();
    let table = split_by_camera(&retained, &cameras)?;

    let mut bank = if cfg.loss_mode.needs_cluster_bank() {
        MemoryBank::init_from_partition(
            &feats,
            &cluster_slots(&table),
            MemoryLevel::Cluster,
            cfg.mu,
            cfg.renormalize_memory,
        )?
    } else {
        MemoryBank::init_from_partition(
            &feats,
            &proxy_slots(&table),
            MemoryLevel::Proxy,
            cfg.mu,
            cfg.renormalize_memory,
        )?
    };
    let epoch_start_bank = if cfg.assoc_bank_epoch_start {
        Some(bank.clone())
    } else {
        None
    };

    let batch_size = cfg.batch.size();
    let iters = if cfg.iters_per_epoch > 0 {
        cfg.iters_per_epoch
    } else {
        retained.len().div_ceil(batch_size)
    };

    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    let mut loss_sum = 0.0;
    for _ in 0..iters {
        let (batch, shrunk) = sample_batch(&table, &cfg.batch, &mut state.rng);
        if shrunk && warnings.is_empty() {
            warnings.push(format!(
                "fewer than {} proxies available; batch shrunk",
                cfg.batch.proxies
            ));
        }
        if !shrunk && batch.len() != batch_size {
            violations.push(format!("batch size {} != P*K {}", batch.len(), batch_size));
        }
        let b = batch.len() as f64;
        let assoc_bank = epoch_start_bank.as_ref().unwrap_or(&bank).clone();

        let mut evals = Vec::with_capacity(batch.len());
        for anchor in &batch {
            let feature = state.model.table[anchor.instance].clone();
            let eval = eval_anchor(&feature, anchor, &table, &assoc_bank, cfg)?;
            if let Some(on) = &eval.online {
                let mut cams: Vec<u32> = on
                    .positives
                    .iter()
                    .map(|&j| table.proxy(j).camera)
                    .collect();
                cams.sort_unstable();
                let before = cams.len();
                cams.dedup();
                if cams.len() != before {
                    violations.push(format!(
                        "online positives repeat a camera for anchor {}",
                        anchor.instance
                    ));
                }
            }
            if let Some(off) = &eval.offline {
                if off.positives != table.proxies_of_cluster(anchor.global_label) {
                    violations.push(format!(
                        "offline positives differ from cluster proxy set for anchor {}",
                        anchor.instance
                    ));
                }
            }
            loss_sum += eval.loss.value / b;
            evals.push((feature, eval));
        }

        // Parameter steps: projected gradient descent on the anchors'
        // table rows, in batch order.
        for (anchor, (_, eval)) in batch.iter().zip(&evals) {
            if lr == 0.0 {
                break;
            }
            let row = &mut state.model.table[anchor.instance];
            let mut g: Vec<f64> = eval.loss.grad.iter().map(|x| x / b).collect();
            let radial = vecmath::dot(&g, row);
            let row_snapshot = row.clone();
            vecmath::axpy(&mut g, -radial, &row_snapshot);
            vecmath::axpy(row, -lr, &g);
            if !vecmath::normalize(row) {
                *row = row_snapshot;
            }
        }
        // Memory updates per anchor in batch order, using the features
        // that entered the loss.
        for (anchor, (feature, _)) in batch.iter().zip(&evals) {
            let slot = if cfg.loss_mode.needs_cluster_bank() {
                anchor.global_label
            } else {
                anchor.proxy_index
            };
            bank.update(slot, feature);
        }
        for j in 0..bank.len() {
            let n = vecmath::norm(bank.entry(j));
            if (n - 1.0).abs() > 1e-6 && cfg.renormalize_memory {
                violations.push(format!("memory entry {j} norm {n} drifted off unit"));
            }
        }
    }

    let have_truth = state.dataset.iter().all(|i| i.true_id.is_some());
    let (assoc, clustering) = if have_truth {
        let true_ids: Vec<Option<u32>> = state.dataset.iter().map(|i| i.true_id).collect();
        // Epoch-end association statistics over all retained anchors,
        // with up-to-date features and the current proxy bank.
        let stats_bank = if cfg.loss_mode.needs_cluster_bank() {
            MemoryBank::init_from_partition(
                &state.model.table,
                &proxy_slots(&table),
                MemoryLevel::Proxy,
                cfg.mu,
                cfg.renormalize_memory,
            )?
        } else {
            bank.clone()
        };
        let anchors = table.labeled_instances().to_vec();
        let mut offline_sets = Vec::with_capacity(anchors.len());
        let mut online_sets = Vec::with_capacity(anchors.len());
        for anchor in &anchors {
            let f = &state.model.table[anchor.instance];
            offline_sets.push(table.proxies_of_cluster(anchor.global_label).to_vec());
            online_sets
                .push(associate_online(f, anchor, &table, &stats_bank, &cfg.assoc).positives);
        }
        (
            Some(association_stats(
                &offline_sets,
                &online_sets,
                &anchors,
                &table,
                &true_ids,
            )?),
            Some(clustering_quality(&assignment, &true_ids)?),
        )
    } else {
        (None, None)
    };

    let retrieval = match eval_split {
        Some((query, gallery)) => {
            let q = state.model.embed_instances(query, &state.raw);
            let g = state.model.embed_instances(gallery, &state.raw);
            Some(evaluate_retrieval(&q, &g)?)
        }
        None => None,
    };

    Ok(EpochReport {
        epoch,
        lr,
        mean_loss: loss_sum / iters.max(1) as f64,
        num_clusters: retained.num_clusters,
        num_proxies: table.num_proxies(),
        num_outliers: assignment.num_outliers(),
        batches: iters,
        assoc,
        clustering,
        retrieval,
        violations,
        warnings,
    })
}

/// Association and clustering quality of a feature set under a config,
/// computed from scratch (used to audit checkpoints).
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub num_clusters: usize,
    pub num_proxies: usize,
    pub num_outliers: usize,
    pub assoc: Option<AssociationStats>,
    pub clustering: Option<ClusteringQuality>,
}

/// Recluster `dataset` and recompute association statistics against a
/// freshly initialized proxy memory. Ground-truth-dependent fields are
/// `None` when any instance lacks a true identity.
pub fn association_snapshot(dataset: &[Instance], cfg: &TrainConfig) -> Result<Snapshot> {
    let feats: Vec<Vec<f64>> = dataset.iter().map(|i| i.embedding.clone()).collect();
    let dist = pairwise_distance(&feats, cfg)?;
    let assignment = dbscan(&dist, &cfg.dbscan)?;
    let retained = discard_outliers(&assignment)?;
    let cameras: Vec<u32> = dataset.iter().map(|i| i.camera).collect();
    let table = split_by_camera(&retained, &cameras)?;
    let bank = MemoryBank::init_from_partition(
        &feats,
        &proxy_slots(&table),
        MemoryLevel::Proxy,
        cfg.mu,
        cfg.renormalize_memory,
    )?;
    let have_truth = dataset.iter().all(|i| i.true_id.is_some());
    let (assoc, clustering) = if have_truth {
        let true_ids: Vec<Option<u32>> = dataset.iter().map(|i| i.true_id).collect();
        let anchors = table.labeled_instances().to_vec();
        let mut offline_sets = Vec::with_capacity(anchors.len());
        let mut online_sets = Vec::with_capacity(anchors.len());
        for anchor in &anchors {
            let f = &feats[anchor.instance];
            offline_sets.push(table.proxies_of_cluster(anchor.global_label).to_vec());
            online_sets.push(associate_online(f, anchor, &table, &bank, &cfg.assoc).positives);
        }
        (
            Some(association_stats(
                &offline_sets,
                &online_sets,
                &anchors,
                &table,
                &true_ids,
            )?),
            Some(clustering_quality(&assignment, &true_ids)?),
        )
    } else {
        (None, None)
    };
    Ok(Snapshot {
        num_clusters: retained.num_clusters,
        num_proxies: table.num_proxies(),
        num_outliers: assignment.num_outliers(),
        assoc,
        clustering,
    })
}

/// Run the full outer loop. Returns the trained model and per-epoch
/// history.
pub fn fit(
    dataset: &[Instance],
    cfg: &TrainConfig,
    eval_split: Option<(&[Instance], &[Instance])>,
) -> Result<(EmbeddingModel, Vec<EpochReport>)> {
    cfg.validate(dataset::num_cameras(dataset).max(1))?;
    let mut state = TrainState::new(dataset, cfg.rng_seed);
    let mut history = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        history.push(train_epoch(&mut state, cfg, epoch, eval_split)?);
    }
    Ok((state.model, history))
}

/// Write the per-epoch history as plot-ready CSV.
pub fn write_history_csv(history: &[EpochReport], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "epoch,loss,map,r1,iou,prec_off,prec_on,prec_union,rec_off,rec_on,rec_union"
    )?;
    for r in history {
        let (map, r1) = r
            .retrieval
            .map(|m| (m.map.to_string(), m.cmc.r1.to_string()))
            .unwrap_or_default();
        let assoc = r.assoc.map(|a| {
            [
                a.iou,
                a.precision_offline,
                a.precision_online,
                a.precision_union,
                a.recall_offline,
                a.recall_online,
                a.recall_union,
            ]
            .map(|v| v.to_string())
            .join(",")
        });
        writeln!(
            w,
            "{},{},{},{},{}",
            r.epoch,
            r.mean_loss,
            map,
            r1,
            assoc.unwrap_or_else(|| ",,,,,,".into())
        )?;
    }
    Ok(())
}

pub const CHECKPOINT_MODEL: &str = "model.o2eb";
pub const CHECKPOINT_RAW: &str = "raw.o2eb";
pub const CHECKPOINT_META: &str = "checkpoint.json";

/// Save a checkpoint: learned table + raw dataset in the embedding-file
/// format, and a JSON sidecar with the resolved config and history.
pub fn save_checkpoint(
    dir: &Path,
    model: &EmbeddingModel,
    dataset: &[Instance],
    resolved_config: &serde_json::Value,
    history: &[EpochReport],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let learned: Vec<Instance> = dataset
        .iter()
        .zip(&model.table)
        .map(|(inst, row)| Instance {
            embedding: row.clone(),
            ..inst.clone()
        })
        .collect();
    dataset::save_binary(&learned, &dir.join(CHECKPOINT_MODEL))?;
    dataset::save_binary(dataset, &dir.join(CHECKPOINT_RAW))?;
    let meta = serde_json::json!({
        "config": resolved_config,
        "history": history,
    });
    let mut f = std::fs::File::create(dir.join(CHECKPOINT_META))?;
    f.write_all(serde_json::to_string_pretty(&meta)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub struct Checkpoint {
    pub model: EmbeddingModel,
    /// The learned table with dataset metadata attached.
    pub learned: Vec<Instance>,
    /// The original (raw) dataset.
    pub raw: Vec<Instance>,
    pub meta: serde_json::Value,
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let learned = dataset::load_embeddings(&dir.join(CHECKPOINT_MODEL))?;
    let raw = dataset::load_embeddings(&dir.join(CHECKPOINT_RAW))?;
    if learned.len() != raw.len() {
        return Err(O2capError::Parse {
            location: dir.display().to_string(),
            message: format!("model rows {} != raw rows {}", learned.len(), raw.len()),
        });
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join(CHECKPOINT_META))?)?;
    Ok(Checkpoint {
        model: EmbeddingModel {
            table: learned.iter().map(|i| i.embedding.clone()).collect(),
        },
        learned,
        raw,
        meta,
    })
}
