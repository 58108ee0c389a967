//! Siamese cognate classifier.
//!
//! Both words of a pair go through the shared encoder and one dense
//! projection (`u`, `v`). The sense layer combines `[u; v; cos(u, v)]`
//! into `z`, and a class head turns `z` into two class probabilities.
//! Clustering works on `z` with two trainable centroids.

mod cluster;
mod train;

pub use cluster::{
    init_centroids, kmeans_inertia, self_train, soft_assign, target_distribution, ClusterEmbedder, KMeansConfig,
    PointEmbedder, RefreshLog, SelfTrainConfig, SelfTrainReport,
};
pub use train::{
    embed_pairs, loss_unsupervised, predict, pretrain_unsupervised, train_supervised, EpochLog, PredictMode,
    Prediction, PretrainConfig, PretrainReport, SupervisedConfig,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{CharVocab, Encoder, EncoderConfig, PREFIX as ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Checkpoint, NodeId, ParamId, ParamStore, Real, Rng, Tape, Tensor};

pub const PREFIX: &str = "detector.";
/// Number of output classes and of clusters.
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    NonCognate = 0,
    Cognate = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Self::NonCognate),
            1 => Some(Self::Cognate),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Self::NonCognate => Self::Cognate,
            Self::Cognate => Self::NonCognate,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Self::Cognate),
            "0" => Ok(Self::NonCognate),
            other => Err(Error::Data(format!("label must be 0 or 1, got {other:?}"))),
        }
    }
}

/// Unlabeled word pair: (pivot-side word, other-language word).
///
/// This is the only input the label-free training paths accept.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WordPair {
    pub word1: String,
    pub word2: String,
}

impl WordPair {
    pub fn new(word1: impl Into<String>, word2: impl Into<String>) -> Self {
        Self {
            word1: word1.into(),
            word2: word2.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CandidatePair {
    pub pair: WordPair,
    pub label: Option<Label>,
}

impl CandidatePair {
    pub fn labeled(word1: impl Into<String>, word2: impl Into<String>, label: Label) -> Self {
        Self {
            pair: WordPair::new(word1, word2),
            label: Some(label),
        }
    }

    pub fn unlabeled(word1: impl Into<String>, word2: impl Into<String>) -> Self {
        Self {
            pair: WordPair::new(word1, word2),
            label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub encoder: EncoderConfig,
    /// Size of the projected word vectors `u`, `v`.
    pub proj_dim: usize,
    /// Size of the pair representation `z`.
    pub sense_dim: usize,
    pub sense_activation: Activation,
    /// Initial weight bound for the cosine input of the sense layer.
    pub cosine_gain: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            proj_dim: 128,
            sense_dim: 128,
            sense_activation: Activation::Tanh,
            cosine_gain: 3.0,
        }
    }
}

/// Parameter handles of a detector.
#[derive(Debug, Clone)]
pub struct DetectorNet {
    pub encoder: Encoder,
    pub sense_activation: Activation,
    proj_w: ParamId,
    proj_b: ParamId,
    sense_w: ParamId,
    sense_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
    centroids: ParamId,
}

/// Tape nodes of one batch of pairs.
#[derive(Debug, Clone, Copy)]
pub struct PairNodes {
    pub u: NodeId,
    pub v: NodeId,
    pub cos: NodeId,
    pub z: NodeId,
    pub logits: NodeId,
    pub p: NodeId,
}

/// Forward values for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutput<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub cos: T,
    pub z: Vec<T>,
    pub p: Vec<T>,
}

impl DetectorNet {
    pub fn centroids(&self) -> ParamId {
        self.centroids
    }

    pub fn sense_dim<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.value(self.sense_w).cols()
    }

    /// Records the full forward pass for a batch of pairs.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        pairs: &[&WordPair],
    ) -> Result<PairNodes> {
        let left: Vec<&str> = pairs.iter().map(|p| p.word1.as_str()).collect();
        let right: Vec<&str> = pairs.iter().map(|p| p.word2.as_str()).collect();
        let rl = self.encoder.encode_batch(tape, store, &left)?;
        let rr = self.encoder.encode_batch(tape, store, &right)?;
        let (pw, pb) = (tape.param(store, self.proj_w), tape.param(store, self.proj_b));
        let u = tape.linear(rl, pw, pb)?;
        let v = tape.linear(rr, pw, pb)?;
        let cos = tape.cosine_rows(u, v)?;
        let joint = tape.concat_cols(&[u, v, cos])?;
        let (sw, sb) = (tape.param(store, self.sense_w), tape.param(store, self.sense_b));
        let z = tape.linear(joint, sw, sb)?;
        let z = tape.activation(z, self.sense_activation)?;
        let (hw, hb) = (tape.param(store, self.head_w), tape.param(store, self.head_b));
        let logits = tape.linear(z, hw, hb)?;
        let p = tape.softmax_rows(logits)?;
        Ok(PairNodes {
            u,
            v,
            cos,
            z,
            logits,
            p,
        })
    }

    /// Records only what clustering needs: `z` for each pair.
    pub fn embed<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, pairs: &[&WordPair]) -> Result<NodeId> {
        Ok(self.forward(tape, store, pairs)?.z)
    }
}

/// Detector network together with its parameter values.
#[derive(Debug, Clone)]
pub struct Detector<T = f32> {
    pub net: DetectorNet,
    pub store: ParamStore<T>,
}

impl<T: Real> Detector<T> {
    /// Randomly initialised detector whose vocabulary covers `words`.
    pub fn new<'a>(config: &DetectorConfig, words: impl IntoIterator<Item = &'a str>, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config.encoder.clone(), CharVocab::from_words(words), &mut store, rng)?;
        Self::assemble(encoder, store, config, rng)
    }

    /// Detector whose encoder starts from pretrained weights. Characters of
    /// `words` missing from the pretrained vocabulary get fresh embeddings.
    /// The encoder shape comes from the checkpoint, not from `config.encoder`.
    pub fn with_pretrained<'a>(
        ckpt: &Checkpoint,
        vocab: CharVocab,
        config: &DetectorConfig,
        words: impl IntoIterator<Item = &'a str>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut encoder = Encoder::from_checkpoint(ckpt, vocab, config.encoder.activation, &mut store)?;
        encoder.extend_vocab(words, &mut store, rng);
        Self::assemble(encoder, store, config, rng)
    }

    fn assemble(encoder: Encoder, mut store: ParamStore<T>, config: &DetectorConfig, rng: &mut Rng) -> Result<Self> {
        if !(config.cosine_gain >= 0.0) {
            return Err(Error::Input("cosine gain must be non-negative".into()));
        }
        if config.proj_dim == 0 || config.sense_dim == 0 {
            return Err(Error::Input("projection and sense sizes must be positive".into()));
        }
        let d = encoder.output_dim();
        let (p, s) = (config.proj_dim, config.sense_dim);
        let name = |s: &str| format!("{PREFIX}{s}");
        let proj_w = store.add_uniform(name("proj.w"), &[d, p], d, rng)?;
        let proj_b = store.add_uniform(name("proj.b"), &[p], d, rng)?;
        // The word blocks use fan-in P. The cosine row gets its own bound:
        // under the joint fan-in it would be scaled down with the 2P word
        // coordinates and clustering would ignore it.
        let cos_gain = config.cosine_gain;
        let word_bound = 1.0 / (p as f64).sqrt();
        let sense_w = store.add(
            name("sense.w"),
            Tensor::from_fn(&[2 * p + 1, s], |i| {
                let bound = if i / s < 2 * p { word_bound } else { cos_gain };
                T::of(rng.uniform(-bound, bound))
            }),
        )?;
        let sense_b = store.add_uniform(name("sense.b"), &[s], 2 * p + 1, rng)?;
        let head_w = store.add_uniform(name("head.w"), &[s, CLASSES], s, rng)?;
        let head_b = store.add_uniform(name("head.b"), &[CLASSES], s, rng)?;
        let centroids = store.add(name("centroids"), Tensor::zeros(&[CLASSES, s]))?;
        Ok(Self {
            net: DetectorNet {
                encoder,
                sense_activation: config.sense_activation,
                proj_w,
                proj_b,
                sense_w,
                sense_b,
                head_w,
                head_b,
                centroids,
            },
            store,
        })
    }

    /// Restores a detector saved with [`Detector::checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: CharVocab, config: &DetectorConfig) -> Result<Self> {
        let get = |s: &str| {
            ckpt.get(&format!("{PREFIX}{s}"))
                .ok_or_else(|| Error::Format(format!("checkpoint has no {PREFIX}{s}")))
        };
        let proj_dim = get("proj.w")?.cols();
        let sense_dim = get("sense.w")?.cols();
        let mut store = ParamStore::new();
        let encoder = Encoder::from_checkpoint(ckpt, vocab, config.encoder.activation, &mut store)?;
        let shaped = DetectorConfig {
            encoder: encoder.config().clone(),
            proj_dim,
            sense_dim,
            sense_activation: config.sense_activation,
            cosine_gain: config.cosine_gain,
        };
        let mut det = Self::assemble(encoder, store, &shaped, &mut Rng::new(0))?;
        ckpt.load_into(&mut det.store, PREFIX)?;
        Ok(det)
    }

    /// Encoder and detector parameters plus the vocabulary.
    pub fn checkpoint(&self) -> (Checkpoint, CharVocab) {
        (
            Checkpoint::from_store(&self.store, &[ENCODER_PREFIX, PREFIX]),
            self.net.encoder.vocab().clone(),
        )
    }

    pub fn forward_pair(&self, pair: &WordPair) -> Result<PairOutput<T>> {
        let mut tape = Tape::new();
        let nodes = self.net.forward(&mut tape, &self.store, &[pair])?;
        let row = |n: NodeId| tape.value(n).data().to_vec();
        Ok(PairOutput {
            u: row(nodes.u),
            v: row(nodes.v),
            cos: tape.value(nodes.cos).data()[0],
            z: row(nodes.z),
            p: row(nodes.p),
        })
    }

    pub fn centroids(&self) -> &Tensor<T> {
        self.store.value(self.net.centroids)
    }

    pub fn set_centroids(&mut self, centroids: Tensor<T>) -> Result<()> {
        self.store.set_value(self.net.centroids, centroids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> DetectorConfig {
        DetectorConfig {
            encoder: EncoderConfig {
                char_dim: 4,
                filters_per_n: 3,
                ngram_orders: vec![2, 3],
                max_word_len: 10,
                ..EncoderConfig::default()
            },
            proj_dim: 4,
            sense_dim: 3,
            sense_activation: Activation::Tanh,
            cosine_gain: 3.0,
        }
    }

    #[test]
    fn identical_words_have_unit_cosine() {
        let det = Detector::<f64>::new(&tiny_config(), ["kamala", "kamal"], &mut Rng::new(3)).unwrap();
        let out = det.forward_pair(&WordPair::new("kamala", "kamala")).unwrap();
        assert!((out.cos - 1.0).abs() < 1e-12);
        assert_eq!(out.u, out.v);
        assert!((out.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_order_matters() {
        let det = Detector::<f64>::new(&tiny_config(), ["kamala", "komolo"], &mut Rng::new(3)).unwrap();
        let a = det.forward_pair(&WordPair::new("kamala", "komolo")).unwrap();
        let b = det.forward_pair(&WordPair::new("komolo", "kamala")).unwrap();
        assert!((a.cos - b.cos).abs() < 1e-12);
        assert!(a.z.iter().zip(&b.z).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn parameter_names_and_shapes() {
        let det = Detector::<f32>::new(&tiny_config(), ["ab"], &mut Rng::new(0)).unwrap();
        let shape = |n: &str| det.store.by_name(n).unwrap().value.shape().to_vec();
        assert_eq!(shape("detector.sense.w"), vec![9, 3]);
        assert_eq!(shape("detector.head.w"), vec![3, 2]);
        assert_eq!(shape("detector.centroids"), vec![2, 3]);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_outputs() {
        let mut det = Detector::<f32>::new(&tiny_config(), ["sneachta", "sniachtey"], &mut Rng::new(9)).unwrap();
        det.set_centroids(Tensor::from_fn(&[2, 3], |i| i as f32 * 0.1)).unwrap();
        let (ckpt, vocab) = det.checkpoint();
        let back = Detector::<f32>::from_checkpoint(
            &Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap(),
            vocab,
            &tiny_config(),
        )
        .unwrap();
        let pair = WordPair::new("sneachta", "sniachtey");
        assert_eq!(det.forward_pair(&pair).unwrap(), back.forward_pair(&pair).unwrap());
        assert_eq!(det.centroids().data(), back.centroids().data());
    }

    #[test]
    fn label_parsing() {
        assert_eq!("1".parse::<Label>().unwrap(), Label::Cognate);
        assert_eq!(" 0".parse::<Label>().unwrap(), Label::NonCognate);
        assert!("yes".parse::<Label>().is_err());
        assert_eq!(Label::Cognate.flipped(), Label::NonCognate);
    }
}
