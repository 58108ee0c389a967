//! Morphology pretraining of the shared encoder.
//!
//! Monolingual (lemma, inflection) pairs are encoded by the same encoder,
//! projected by one dense layer, and pulled together with a mean squared
//! error. Only the encoder is meant to be transferred afterwards.

use std::collections::BTreeSet;
use std::io::Read;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::encoder::{CharVocab, Encoder, EncoderConfig, PREFIX as ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::numerics::ops::cosine;
use crate::numerics::{Checkpoint, NodeId, ParamId, ParamStore, Real, Rng, Sgd, Tape};
use crate::presets::LanguageFamily;

pub const PREFIX: &str = "morph.";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MorphPair {
    pub word1: String,
    pub word2: String,
    pub language: String,
}

impl MorphPair {
    pub fn new(word1: impl Into<String>, word2: impl Into<String>, language: impl Into<String>) -> Self {
        Self {
            word1: word1.into(),
            word2: word2.into(),
            language: language.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnimorphStats {
    pub accepted: usize,
    pub blank: usize,
    pub malformed: usize,
    pub duplicates: usize,
}

/// Reads `lemma<TAB>inflected[<TAB>features]` lines into lemma→inflection
/// pairs. Feature tags are ignored. Blank and malformed lines are skipped
/// and counted; duplicate pairs are dropped and counted.
pub fn pairs_from_unimorph(mut reader: impl Read, language: &str) -> Result<(Vec<MorphPair>, UnimorphStats)> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Data(format!("UniMorph input is not UTF-8: {e}")))?;
    let mut stats = UnimorphStats::default();
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            stats.blank += 1;
            continue;
        }
        let mut cols = line.split('\t');
        let lemma = cols.next().map(str::trim).unwrap_or("");
        let form = cols.next().map(str::trim).unwrap_or("");
        if lemma.is_empty() || form.is_empty() {
            stats.malformed += 1;
            continue;
        }
        if !seen.insert((lemma.to_string(), form.to_string())) {
            stats.duplicates += 1;
            continue;
        }
        pairs.push(MorphPair::new(lemma, form, language));
        stats.accepted += 1;
    }
    Ok((pairs, stats))
}

/// How the two projected sides are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphObjective {
    /// Mean squared distance between raw projections.
    Plain,
    /// Mean squared distance after standardising every projection
    /// dimension over the batch, separately per side. Shrinking the
    /// projections no longer lowers the loss.
    Standardized,
}

/// Variance floor used by [`MorphObjective::Standardized`].
pub const STANDARDIZE_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphTrainConfig {
    pub objective: MorphObjective,
    pub sgd: Sgd,
    pub epochs: usize,
    pub batch_size: usize,
    /// Output size of the projection head.
    pub proj_dim: usize,
    pub holdout_fraction: f64,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Words sampled for the collapse metric.
    pub collapse_sample: usize,
    pub seed: u64,
}

impl Default for MorphTrainConfig {
    fn default() -> Self {
        Self {
            objective: MorphObjective::Standardized,
            sgd: Sgd::new(0.1, 0.95).with_weight_decay(1e-5),
            epochs: 20,
            batch_size: 32,
            proj_dim: 128,
            holdout_fraction: 0.1,
            patience: 5,
            collapse_sample: 100,
            seed: 0,
        }
    }
}

impl MorphTrainConfig {
    pub fn for_family(family: LanguageFamily) -> Self {
        let mut c = Self::default();
        c.sgd.lr = family.morphology_lr();
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sgd.lr > 0.0) {
            return Err(Error::Input("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.proj_dim == 0 {
            return Err(Error::Input("batch size and projection size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Input("held-out fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Parameter handles of the morphology model.
#[derive(Debug, Clone)]
pub struct MorphNet {
    pub encoder: Encoder,
    proj_w: ParamId,
    proj_b: ParamId,
}

/// Encoder plus projection head, with parameter values.
#[derive(Debug, Clone)]
pub struct MorphologyModel<T = f32> {
    pub net: MorphNet,
    pub store: ParamStore<T>,
}

impl<T: Real> MorphologyModel<T> {
    /// Fresh model with a vocabulary covering every word in `pairs`.
    pub fn new(encoder: EncoderConfig, pairs: &[MorphPair], proj_dim: usize, rng: &mut Rng) -> Result<Self> {
        let vocab = CharVocab::from_words(pairs.iter().flat_map(|p| [p.word1.as_str(), p.word2.as_str()]));
        let mut store = ParamStore::new();
        let enc = Encoder::new(encoder, vocab, &mut store, rng)?;
        Self::with_encoder(enc, store, proj_dim, rng)
    }

    /// Adds a projection head on top of an already registered encoder.
    pub fn with_encoder(encoder: Encoder, mut store: ParamStore<T>, proj_dim: usize, rng: &mut Rng) -> Result<Self> {
        let d = encoder.output_dim();
        let proj_w = store.add_uniform(format!("{PREFIX}proj.w"), &[d, proj_dim], d, rng)?;
        let proj_b = store.add_uniform(format!("{PREFIX}proj.b"), &[proj_dim], d, rng)?;
        Ok(Self {
            net: MorphNet {
                encoder,
                proj_w,
                proj_b,
            },
            store,
        })
    }

    /// Records the loss for one batch of pairs.
    pub fn batch_loss(&self, tape: &mut Tape<T>, pairs: &[&MorphPair], objective: MorphObjective) -> Result<NodeId> {
        batch_loss(&self.net, &self.store, tape, pairs, objective)
    }

    /// Encoder weights (and optionally the head) as a checkpoint, with the
    /// vocabulary needed to use them.
    pub fn export_encoder(&self, keep_head: bool) -> (Checkpoint, CharVocab) {
        let prefixes: &[&str] = if keep_head {
            &[ENCODER_PREFIX, PREFIX]
        } else {
            &[ENCODER_PREFIX]
        };
        (
            Checkpoint::from_store(&self.store, prefixes),
            self.net.encoder.vocab().clone(),
        )
    }
}

fn batch_loss<T: Real>(
    net: &MorphNet,
    store: &ParamStore<T>,
    tape: &mut Tape<T>,
    pairs: &[&MorphPair],
    objective: MorphObjective,
) -> Result<NodeId> {
    let left: Vec<&str> = pairs.iter().map(|p| p.word1.as_str()).collect();
    let right: Vec<&str> = pairs.iter().map(|p| p.word2.as_str()).collect();
    let rl = net.encoder.encode_batch(tape, store, &left)?;
    let rr = net.encoder.encode_batch(tape, store, &right)?;
    let (w, b) = (tape.param(store, net.proj_w), tape.param(store, net.proj_b));
    let zl = tape.linear(rl, w, b)?;
    let zr = tape.linear(rr, w, b)?;
    match objective {
        MorphObjective::Plain => tape.mse(zl, zr),
        MorphObjective::Standardized => {
            let eps = T::of(STANDARDIZE_EPS);
            let zl = tape.standardize_cols(zl, eps)?;
            let zr = tape.standardize_cols(zr, eps)?;
            tape.mse(zl, zr)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphEpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches (loss before training at epoch 0).
    pub loss: f64,
    pub heldout_loss: Option<f64>,
    /// Mean pairwise cosine of sampled word encodings.
    pub collapse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphReport {
    pub epochs: Vec<MorphEpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl MorphReport {
    pub fn train_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn heldout_curve(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.heldout_loss).collect()
    }
}

/// Threshold above which the collapse metric triggers a warning.
pub const COLLAPSE_WARNING: f64 = 0.99;

fn as_divergence(e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Divergence(format!("non-finite value in {op}")),
        other => other,
    }
}

/// Trains the model in place and keeps the parameters of the best epoch
/// (lowest held-out loss, or training loss when nothing is held out).
pub fn train_morphology<T: Real>(
    model: &mut MorphologyModel<T>,
    pairs: &[MorphPair],
    config: &MorphTrainConfig,
) -> Result<MorphReport> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Precondition(
            "morphology training needs at least one pair".into(),
        ));
    }
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    rng.shuffle(&mut order);
    let n_holdout = if pairs.len() >= 10 {
        ((pairs.len() as f64) * config.holdout_fraction).round() as usize
    } else {
        0
    };
    let (held, train) = order.split_at(n_holdout);
    let held: Vec<&MorphPair> = held.iter().map(|i| &pairs[*i]).collect();
    let mut train: Vec<&MorphPair> = train.iter().map(|i| &pairs[*i]).collect();

    let words = collapse_words(&train, config.collapse_sample, &mut rng);

    // Only encoder and head parameters may move.
    let saved: Vec<bool> = model.store.iter().map(|p| p.trainable).collect();
    for p in model.store.iter_mut() {
        if !(p.name.starts_with(ENCODER_PREFIX) || p.name.starts_with(PREFIX)) {
            p.trainable = false;
        }
    }
    let result = run_epochs(model, &mut train, &held, &words, config, &mut rng);
    for (p, t) in model.store.iter_mut().zip(saved) {
        p.trainable = t;
    }
    result.map_err(as_divergence)
}

fn run_epochs<T: Real>(
    model: &mut MorphologyModel<T>,
    train: &mut [&MorphPair],
    held: &[&MorphPair],
    words: &[&str],
    config: &MorphTrainConfig,
    rng: &mut Rng,
) -> Result<MorphReport> {
    let mut epochs = Vec::with_capacity(config.epochs + 1);
    let initial_train = mean_loss(model, train, config)?;
    let initial_held = (!held.is_empty()).then(|| mean_loss(model, held, config)).transpose()?;
    epochs.push(MorphEpochLog {
        epoch: 0,
        loss: initial_train,
        heldout_loss: initial_held,
        collapse: collapse_metric(&model.net.encoder, &model.store, words)?,
    });
    let mut best = (initial_held.unwrap_or(initial_train), 0, model.store.clone());
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        rng.shuffle(train);
        let mut total = 0.0;
        for batch in train.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let loss = model.batch_loss(&mut tape, batch, config.objective)?;
            let value = tape.value(loss).item().f64();
            if !value.is_finite() {
                return Err(Error::Divergence(format!("loss {value} at epoch {epoch}")));
            }
            total += value * batch.len() as f64;
            tape.backward(loss, &mut model.store)?;
            config.sgd.step(&mut model.store, epoch - 1);
        }
        let loss = total / train.len() as f64;
        let heldout_loss = (!held.is_empty()).then(|| mean_loss(model, held, config)).transpose()?;
        let collapse = collapse_metric(&model.net.encoder, &model.store, words)?;
        if collapse > COLLAPSE_WARNING {
            warn!("encodings are collapsing: mean pairwise cosine {collapse:.4} at epoch {epoch}");
        }
        epochs.push(MorphEpochLog {
            epoch,
            loss,
            heldout_loss,
            collapse,
        });
        let score = heldout_loss.unwrap_or(loss);
        if score < best.0 {
            best = (score, epoch, model.store.clone());
        } else if epoch - best.1 >= config.patience {
            stopped_early = true;
            break;
        }
    }
    let (_, best_epoch, best_store) = best;
    model.store = best_store;
    Ok(MorphReport {
        epochs,
        best_epoch,
        stopped_early,
    })
}

/// Size-weighted mean of the batch losses, forward only.
fn mean_loss<T: Real>(model: &MorphologyModel<T>, pairs: &[&MorphPair], config: &MorphTrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for batch in pairs.chunks(config.batch_size) {
        let mut tape = Tape::new();
        let loss = model.batch_loss(&mut tape, batch, config.objective)?;
        total += tape.value(loss).item().f64() * batch.len() as f64;
    }
    Ok(total / pairs.len().max(1) as f64)
}

fn collapse_words<'a>(pairs: &[&'a MorphPair], limit: usize, rng: &mut Rng) -> Vec<&'a str> {
    let unique: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|p| [p.word1.as_str(), p.word2.as_str()])
        .collect();
    let mut words: Vec<&str> = unique.into_iter().collect();
    rng.shuffle(&mut words);
    words.truncate(limit);
    words
}

/// Mean pairwise cosine similarity of the encodings of `words`.
pub fn collapse_metric<T: Real>(encoder: &Encoder, store: &ParamStore<T>, words: &[&str]) -> Result<f64> {
    let enc: Vec<Vec<T>> = words
        .iter()
        .map(|w| encoder.encode(store, w).map(|e| e.r))
        .collect::<Result<_>>()?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..enc.len() {
        for j in i + 1..enc.len() {
            sum += cosine(&enc[i], &enc[j]).f64();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            char_dim: 4,
            filters_per_n: 3,
            max_word_len: 12,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn unimorph_parsing() {
        let input = "nuachtán\tnuachtáin\tN;GEN;SG\n\neolas\ta eolais\n\
                     nuachtán\tnuachtáin\tN;GEN;SG\nbroken\n\tx\tV\n";
        let (pairs, stats) = pairs_from_unimorph(input.as_bytes(), "ga").unwrap();
        assert_eq!(pairs[0], MorphPair::new("nuachtán", "nuachtáin", "ga"));
        assert_eq!(pairs[1], MorphPair::new("eolas", "a eolais", "ga"));
        assert_eq!(
            stats,
            UnimorphStats {
                accepted: 2,
                blank: 1,
                malformed: 2,
                duplicates: 1
            }
        );
    }

    #[test]
    fn unimorph_rejects_invalid_utf8() {
        let bytes: &[u8] = b"ab\t\xff\xfe\n";
        assert!(matches!(pairs_from_unimorph(bytes, "x"), Err(Error::Data(_))));
    }

    #[test]
    fn identical_pairs_have_zero_loss() {
        let pairs = vec![
            MorphPair::new("síceolaí", "síceolaí", "ga"),
            MorphPair::new("eolas", "eolas", "ga"),
        ];
        let model = MorphologyModel::<f64>::new(tiny_encoder(), &pairs, 5, &mut Rng::new(4)).unwrap();
        let refs: Vec<&MorphPair> = pairs.iter().collect();
        for objective in [MorphObjective::Plain, MorphObjective::Standardized] {
            let mut tape = Tape::new();
            let loss = model.batch_loss(&mut tape, &refs, objective).unwrap();
            assert_eq!(tape.value(loss).item(), 0.0);
        }
    }

    #[test]
    fn empty_pairs_are_rejected() {
        let pairs = vec![MorphPair::new("ab", "abc", "x")];
        let mut model = MorphologyModel::<f32>::new(tiny_encoder(), &pairs, 4, &mut Rng::new(1)).unwrap();
        let err = train_morphology(&mut model, &[], &MorphTrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn foreign_namespaces_are_left_alone() {
        let pairs: Vec<MorphPair> = ["bara", "kilo", "mesu", "tavi"]
            .iter()
            .map(|s| MorphPair::new(*s, format!("{s}en"), "x"))
            .collect();
        let mut model = MorphologyModel::<f32>::new(tiny_encoder(), &pairs, 4, &mut Rng::new(1)).unwrap();
        let foreign = model
            .store
            .add("detector.sense.w", Tensor::from_fn(&[2, 2], |i| i as f32))
            .unwrap();
        let before = model.store.value(foreign).clone();
        let config = MorphTrainConfig {
            epochs: 2,
            ..MorphTrainConfig::default()
        };
        train_morphology(&mut model, &pairs, &config).unwrap();
        assert_eq!(model.store.value(foreign).data(), before.data());
        assert!(model.store.get(foreign).trainable);
        assert!(model
            .store
            .names()
            .all(|n| n.starts_with(ENCODER_PREFIX) || n.starts_with(PREFIX) || n.starts_with("detector.")));
    }

    #[test]
    fn export_drops_head_unless_asked() {
        let pairs = vec![MorphPair::new("ab", "abc", "x")];
        let model = MorphologyModel::<f32>::new(tiny_encoder(), &pairs, 4, &mut Rng::new(1)).unwrap();
        let (ckpt, vocab) = model.export_encoder(false);
        assert!(ckpt.params.keys().all(|k| k.starts_with(ENCODER_PREFIX)));
        assert_eq!(vocab.len(), 5);
        let (with_head, _) = model.export_encoder(true);
        assert!(with_head.params.contains_key("morph.proj.w"));
    }
}
