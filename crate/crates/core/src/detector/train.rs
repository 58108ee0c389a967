//! Label-free pretraining, supervised training and prediction.

use log::warn;
use serde::{Deserialize, Serialize};

use super::{soft_assign, CandidatePair, Detector, WordPair};
use crate::error::{Error, Result};
use crate::numerics::ops::{argmax, cluster_loss};
use crate::numerics::{NodeId, Real, Rng, Sgd, Tape, Tensor};
use crate::presets::LanguageFamily;

fn as_divergence(e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Divergence(format!("non-finite value in {op}")),
        other => other,
    }
}

/// Clustering loss `−(1/N)·Σ_i max_j p_ij + max_j (1/N)·Σ_i p_ij²` on a
/// batch of class probabilities.
pub fn loss_unsupervised<T: Real>(p: &Tensor<T>) -> Result<T> {
    if p.rank() == 2 && p.rows() == 1 {
        warn!("clustering loss on a single row: the balance term is degenerate");
    }
    Ok(cluster_loss(p)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub sgd: Sgd,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            sgd: Sgd::new(LanguageFamily::Indian.detector_lr(), 0.95),
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn for_family(family: LanguageFamily) -> Self {
        let mut c = Self::default();
        c.sgd.lr = family.detector_lr();
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport<T> {
    /// Loss before training (epoch 0) and after each epoch, evaluated over
    /// fixed batches in input order.
    pub epochs: Vec<EpochLog>,
    /// Pair representations `z` after training, one row per input pair.
    pub z: Tensor<T>,
}

fn validate(batch_size: usize, lr: f64) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::Input("batch size must be positive".into()));
    }
    if !(lr > 0.0) {
        return Err(Error::Input("learning rate must be positive".into()));
    }
    Ok(())
}

fn unsup_loss<T: Real>(det: &Detector<T>, tape: &mut Tape<T>, batch: &[&WordPair]) -> Result<NodeId> {
    let nodes = det.net.forward(tape, &det.store, batch)?;
    tape.cluster_loss(nodes.p)
}

fn eval_unsup<T: Real>(det: &Detector<T>, pairs: &[WordPair], batch_size: usize) -> Result<f64> {
    let refs: Vec<&WordPair> = pairs.iter().collect();
    let mut total = 0.0;
    for batch in refs.chunks(batch_size) {
        let mut tape = Tape::new();
        let loss = unsup_loss(det, &mut tape, batch)?;
        total += tape.value(loss).item().f64() * batch.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Minimises the clustering loss over unlabeled pairs and returns the
/// resulting pair representations.
pub fn pretrain_unsupervised<T: Real>(
    det: &mut Detector<T>,
    pairs: &[WordPair],
    config: &PretrainConfig,
) -> Result<PretrainReport<T>> {
    validate(config.batch_size, config.sgd.lr)?;
    if pairs.len() < 2 {
        return Err(Error::Precondition(
            "clustering pretraining needs at least two pairs".into(),
        ));
    }
    let mut run = || -> Result<PretrainReport<T>> {
        let mut rng = Rng::new(config.seed);
        let mut order: Vec<&WordPair> = pairs.iter().collect();
        let mut epochs = vec![EpochLog {
            epoch: 0,
            loss: eval_unsup(det, pairs, config.batch_size)?,
        }];
        for epoch in 1..=config.epochs {
            rng.shuffle(&mut order);
            for batch in order.chunks(config.batch_size) {
                let mut tape = Tape::new();
                let loss = unsup_loss(det, &mut tape, batch)?;
                tape.backward(loss, &mut det.store)?;
                config.sgd.step(&mut det.store, epoch - 1);
            }
            epochs.push(EpochLog {
                epoch,
                loss: eval_unsup(det, pairs, config.batch_size)?,
            });
        }
        let z = embed_pairs(det, pairs, config.batch_size)?;
        Ok(PretrainReport { epochs, z })
    };
    run().map_err(as_divergence)
}

/// Pair representations `z`, one row per pair.
pub fn embed_pairs<T: Real>(det: &Detector<T>, pairs: &[WordPair], batch_size: usize) -> Result<Tensor<T>> {
    super::cluster::embed_all(&det.net, &det.store, pairs, batch_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub sgd: Sgd,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            sgd: Sgd::new(LanguageFamily::Indian.detector_lr(), 0.95),
            epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Cross-entropy training on labeled pairs. Returns the mean training
/// loss of each epoch.
pub fn train_supervised<T: Real>(
    det: &mut Detector<T>,
    pairs: &[CandidatePair],
    config: &SupervisedConfig,
) -> Result<Vec<EpochLog>> {
    validate(config.batch_size, config.sgd.lr)?;
    if pairs.is_empty() {
        return Err(Error::Precondition(
            "supervised training needs at least one pair".into(),
        ));
    }
    let labeled: Vec<(&WordPair, usize)> = pairs
        .iter()
        .map(|c| {
            c.label.map(|l| (&c.pair, l.index())).ok_or_else(|| {
                Error::Input(format!(
                    "unlabeled pair ({}, {}) in supervised training",
                    c.pair.word1, c.pair.word2
                ))
            })
        })
        .collect::<Result<_>>()?;
    if labeled.iter().all(|(_, y)| *y == labeled[0].1) {
        warn!("supervised training data contains a single class");
    }
    let mut run = || -> Result<Vec<EpochLog>> {
        let mut rng = Rng::new(config.seed);
        let mut order = labeled.clone();
        let mut logs = Vec::with_capacity(config.epochs);
        for epoch in 1..=config.epochs {
            rng.shuffle(&mut order);
            let mut total = 0.0;
            for batch in order.chunks(config.batch_size) {
                let words: Vec<&WordPair> = batch.iter().map(|(p, _)| *p).collect();
                let ys: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();
                let mut tape = Tape::new();
                let nodes = det.net.forward(&mut tape, &det.store, &words)?;
                let loss = tape.softmax_cross_entropy(nodes.logits, &ys)?;
                total += tape.value(loss).item().f64() * batch.len() as f64;
                tape.backward(loss, &mut det.store)?;
                config.sgd.step(&mut det.store, epoch - 1);
            }
            logs.push(EpochLog {
                epoch,
                loss: total / order.len() as f64,
            });
        }
        Ok(logs)
    };
    run().map_err(as_divergence)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    /// Argmax of the class head.
    Classes,
    /// Argmax of the soft cluster assignment (unmapped cluster ids).
    Clusters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub ids: Vec<usize>,
    /// Class probabilities or soft assignments, one row per pair.
    pub probs: Tensor<T>,
}

pub fn predict<T: Real>(det: &Detector<T>, pairs: &[WordPair], mode: PredictMode) -> Result<Prediction<T>> {
    const BATCH: usize = 128;
    let probs = match mode {
        PredictMode::Clusters => {
            let z = embed_pairs(det, pairs, BATCH)?;
            soft_assign(&z, det.centroids())?
        }
        PredictMode::Classes => {
            let mut rows = Vec::with_capacity(pairs.len());
            let refs: Vec<&WordPair> = pairs.iter().collect();
            for chunk in refs.chunks(BATCH) {
                let mut tape = Tape::new();
                let p = det.net.forward(&mut tape, &det.store, chunk)?.p;
                let p = tape.value(p);
                rows.extend((0..p.rows()).map(|i| p.row(i).to_vec()));
            }
            Tensor::from_rows(&rows)?
        }
    };
    let ids = (0..probs.rows()).map(|i| argmax(probs.row(i)).0).collect();
    Ok(Prediction { ids, probs })
}
