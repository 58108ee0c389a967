//! Character n-gram word encoder.
//!
//! A word's characters are embedded, convolved with one filter bank per
//! n-gram order, offset by a trainable per-order positional table, and
//! pooled by self-attention over positions. The pooled vectors of all
//! orders are concatenated into the word representation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Checkpoint, NodeId, ParamId, ParamStore, Real, Rng, Tape, Tensor};

mod vocab;

pub use vocab::{normalize_word, CharVocab, PAD, UNK};

pub const PREFIX: &str = "encoder.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub char_dim: usize,
    pub filters_per_n: usize,
    pub ngram_orders: Vec<usize>,
    pub max_word_len: usize,
    pub positional: bool,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            char_dim: 64,
            filters_per_n: 64,
            ngram_orders: vec![2, 3, 4, 5, 6],
            max_word_len: 40,
            positional: true,
            activation: Activation::Tanh,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let max_order = self.max_order();
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::Input("n-gram orders must be non-empty and positive".into()));
        }
        if self.char_dim == 0 || self.filters_per_n == 0 {
            return Err(Error::Input("encoder dimensions must be positive".into()));
        }
        if self.max_word_len < max_order {
            return Err(Error::Input(format!(
                "max word length {} shorter than largest n-gram order {max_order}",
                self.max_word_len
            )));
        }
        Ok(())
    }

    pub fn max_order(&self) -> usize {
        self.ngram_orders.iter().copied().max().unwrap_or(0)
    }

    /// Length of the word representation.
    pub fn output_dim(&self) -> usize {
        self.ngram_orders.len() * self.filters_per_n
    }
}

#[derive(Debug, Clone)]
struct OrderParams {
    n: usize,
    filters: ParamId,
    bias: ParamId,
    pos: Option<ParamId>,
    attn_w: ParamId,
    attn_b: ParamId,
}

/// Output of [`Encoder::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct WordEncoding<T = f32> {
    /// Concatenated per-order representations.
    pub r: Vec<T>,
    /// Attention weights over positions, one vector per order.
    pub attention: Vec<Vec<T>>,
}

/// Per-order nodes recorded while encoding one word.
#[derive(Debug, Clone, Copy)]
pub struct OrderNodes {
    pub features: NodeId,
    pub attention: NodeId,
    pub pooled: NodeId,
}

/// Encoder structure; parameter values live in a [`ParamStore`] so one
/// instance can serve both branches of a Siamese pair.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    vocab: CharVocab,
    char_emb: ParamId,
    orders: Vec<OrderParams>,
}

fn name(suffix: &str) -> String {
    format!("{PREFIX}{suffix}")
}

impl Encoder {
    pub fn new<T: Real>(
        config: EncoderConfig,
        vocab: CharVocab,
        store: &mut ParamStore<T>,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.char_dim;
        let f = config.filters_per_n;
        let char_emb = store.add_uniform(name("char_emb"), &[vocab.len(), d], 1, rng)?;
        let mut orders = Vec::with_capacity(config.ngram_orders.len());
        for &n in &config.ngram_orders {
            let filters = store.add_uniform(name(&format!("ngram{n}.filters")), &[f, n, d], n * d, rng)?;
            let bias = store.add_uniform(name(&format!("ngram{n}.bias")), &[f], n * d, rng)?;
            let pos = if config.positional {
                let rows = config.max_word_len - n + 1;
                Some(store.add_uniform(name(&format!("ngram{n}.pos")), &[rows, f], f, rng)?)
            } else {
                None
            };
            let attn_w = store.add_uniform(name(&format!("ngram{n}.attn_w")), &[f, 1], f, rng)?;
            let attn_b = store.add_uniform(name(&format!("ngram{n}.attn_b")), &[1], f, rng)?;
            orders.push(OrderParams {
                n,
                filters,
                bias,
                pos,
                attn_w,
                attn_b,
            });
        }
        Ok(Self {
            config,
            vocab,
            char_emb,
            orders,
        })
    }

    /// Registers an encoder whose shapes and values come from `ckpt`.
    ///
    /// The configuration is recovered from parameter shapes; `vocab` must
    /// match the embedding table.
    pub fn from_checkpoint<T: Real>(
        ckpt: &Checkpoint,
        vocab: CharVocab,
        activation: Activation,
        store: &mut ParamStore<T>,
    ) -> Result<Self> {
        let config = infer_config(ckpt, activation)?;
        let emb = ckpt
            .get(&name("char_emb"))
            .ok_or_else(|| Error::Format("checkpoint has no encoder embedding".into()))?;
        if emb.rows() != vocab.len() {
            return Err(Error::dim(
                "import_encoder",
                format!("embedding has {} rows, vocabulary has {}", emb.rows(), vocab.len()),
            ));
        }
        let mut rng = Rng::new(0);
        let enc = Self::new(config, vocab, store, &mut rng)?;
        ckpt.load_into(store, PREFIX)?;
        Ok(enc)
    }

    /// Loads encoder weights from `ckpt` into this (already registered) encoder.
    pub fn load_weights<T: Real>(&self, ckpt: &Checkpoint, store: &mut ParamStore<T>) -> Result<()> {
        let expected = infer_config(ckpt, self.config.activation)?;
        if expected != self.config {
            return Err(Error::dim(
                "import_encoder",
                format!("checkpoint encoder {expected:?} vs model {:?}", self.config),
            ));
        }
        ckpt.load_into(store, PREFIX).map(|_| ())
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &CharVocab {
        &self.vocab
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn char_embedding(&self) -> ParamId {
        self.char_emb
    }

    /// Positional table of the `i`-th order, if positional encoding is on.
    pub fn positional_table(&self, order_index: usize) -> Option<ParamId> {
        self.orders.get(order_index).and_then(|o| o.pos)
    }

    /// Adds characters of `words` missing from the vocabulary, growing the
    /// embedding table with freshly initialised rows. Existing rows keep
    /// their values.
    pub fn extend_vocab<'a, T: Real>(
        &mut self,
        words: impl IntoIterator<Item = &'a str>,
        store: &mut ParamStore<T>,
        rng: &mut Rng,
    ) -> usize {
        let added = self.vocab.extend(words);
        if added == 0 {
            return 0;
        }
        let d = self.config.char_dim;
        let old = store.value(self.char_emb);
        let mut data = old.data().to_vec();
        data.extend((0..added * d).map(|_| T::of(rng.uniform(-1.0, 1.0))));
        let grown = Tensor::new(vec![self.vocab.len(), d], data).expect("consistent embedding shape");
        store.replace(self.char_emb, grown);
        added
    }

    pub fn to_indices(&self, word: &str) -> Result<Vec<usize>> {
        normalize_word(word, &self.vocab, self.config.max_order(), self.config.max_word_len)
    }

    /// Character embeddings of `word`, `[T×d]`.
    pub fn embed<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, word: &str) -> Result<NodeId> {
        let seq = self.to_indices(word)?;
        let table = tape.param(store, self.char_emb);
        tape.gather(table, &seq)
    }

    /// Feature map `F_k` of one n-gram order: convolution plus activation.
    pub fn ngram_features<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        embedded: NodeId,
        order_index: usize,
    ) -> Result<NodeId> {
        let o = self.order(order_index)?;
        let (w, b) = (tape.param(store, o.filters), tape.param(store, o.bias));
        tape.conv1d(embedded, w, b, self.config.activation)
    }

    /// Adds positional table row `j` to feature row `j`. Identity when
    /// positional encoding is disabled.
    pub fn add_position<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        features: NodeId,
        order_index: usize,
    ) -> Result<NodeId> {
        match self.order(order_index)?.pos {
            Some(pos) => {
                let table = tape.param(store, pos);
                tape.add_rows(features, table)
            }
            None => Ok(features),
        }
    }

    /// Self-attention pooling over positions. Returns `(r_k, a)` with
    /// `a = softmax(tanh(F·W_h + b_h))ᵀ` and `r_k = a·F`.
    pub fn attend<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        features: NodeId,
        order_index: usize,
    ) -> Result<(NodeId, NodeId)> {
        let o = self.order(order_index)?;
        let (w, b) = (tape.param(store, o.attn_w), tape.param(store, o.attn_b));
        let scores = tape.linear(features, w, b)?;
        let scores = tape.tanh(scores)?;
        let scores = tape.transpose(scores)?;
        let weights = tape.softmax_rows(scores)?;
        let pooled = tape.matmul(weights, features)?;
        Ok((pooled, weights))
    }

    /// Records the encoding of one word; returns the `[1×D]` representation
    /// and the per-order intermediate nodes.
    pub fn encode_on_tape<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        word: &str,
    ) -> Result<(NodeId, Vec<OrderNodes>)> {
        let embedded = self.embed(tape, store, word)?;
        let mut pooled = Vec::with_capacity(self.orders.len());
        let mut nodes = Vec::with_capacity(self.orders.len());
        for i in 0..self.orders.len() {
            let f = self.ngram_features(tape, store, embedded, i)?;
            let f = self.add_position(tape, store, f, i)?;
            let (r, a) = self.attend(tape, store, f, i)?;
            pooled.push(r);
            nodes.push(OrderNodes {
                features: f,
                attention: a,
                pooled: r,
            });
        }
        Ok((tape.concat_cols(&pooled)?, nodes))
    }

    /// Encodes a batch of words into a `[N×D]` node. Repeated words share
    /// one encoding sub-graph.
    pub fn encode_batch<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, words: &[&str]) -> Result<NodeId> {
        let mut cache: BTreeMap<&str, NodeId> = BTreeMap::new();
        let mut rows = Vec::with_capacity(words.len());
        for w in words {
            let node = match cache.get(w) {
                Some(n) => *n,
                None => {
                    let (n, _) = self.encode_on_tape(tape, store, w)?;
                    cache.insert(w, n);
                    n
                }
            };
            rows.push(node);
        }
        tape.concat_rows(&rows)
    }

    /// Forward-only encoding of one word.
    pub fn encode<T: Real>(&self, store: &ParamStore<T>, word: &str) -> Result<WordEncoding<T>> {
        let mut tape = Tape::new();
        let (r, nodes) = self.encode_on_tape(&mut tape, store, word)?;
        Ok(WordEncoding {
            r: tape.value(r).data().to_vec(),
            attention: nodes.iter().map(|n| tape.value(n.attention).data().to_vec()).collect(),
        })
    }

    /// Positional addition and attention pooling applied to an explicit
    /// feature map, forward only.
    pub fn pool_features<T: Real>(
        &self,
        store: &ParamStore<T>,
        order_index: usize,
        features: Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let f = tape.constant(features)?;
        let f = self.add_position(&mut tape, store, f, order_index)?;
        let (r, _) = self.attend(&mut tape, store, f, order_index)?;
        Ok(tape.value(r).clone())
    }

    fn order(&self, i: usize) -> Result<&OrderParams> {
        self.orders
            .get(i)
            .ok_or_else(|| Error::Input(format!("no n-gram order at index {i}")))
    }

    /// N-gram order at position `i` of the configuration.
    pub fn order_n(&self, i: usize) -> Option<usize> {
        self.orders.get(i).map(|o| o.n)
    }
}

fn infer_config(ckpt: &Checkpoint, activation: Activation) -> Result<EncoderConfig> {
    let emb = ckpt
        .get(&name("char_emb"))
        .ok_or_else(|| Error::Format("checkpoint has no encoder embedding".into()))?;
    let char_dim = emb.cols();
    let mut orders = Vec::new();
    let mut filters_per_n = None;
    let mut max_word_len = None;
    let mut positional = None;
    for (pname, t) in &ckpt.params {
        let Some(rest) = pname.strip_prefix(&name("ngram")) else {
            continue;
        };
        let Some(n) = rest.strip_suffix(".filters").and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        if t.rank() != 3 || t.shape()[1] != n || t.shape()[2] != char_dim {
            return Err(Error::Format(format!("{pname} has shape {:?}", t.shape())));
        }
        let f = t.shape()[0];
        if *filters_per_n.get_or_insert(f) != f {
            return Err(Error::Format("filter counts differ across orders".into()));
        }
        let pos = ckpt.get(&name(&format!("ngram{n}.pos")));
        if *positional.get_or_insert(pos.is_some()) != pos.is_some() {
            return Err(Error::Format("positional tables present for only some orders".into()));
        }
        if let Some(p) = pos {
            let t_max = p.rows() + n - 1;
            if *max_word_len.get_or_insert(t_max) != t_max {
                return Err(Error::Format("positional tables disagree on max word length".into()));
            }
        }
        orders.push(n);
    }
    if orders.is_empty() {
        return Err(Error::Format("checkpoint has no n-gram filters".into()));
    }
    orders.sort_unstable();
    let max_order = *orders.last().unwrap();
    Ok(EncoderConfig {
        char_dim,
        filters_per_n: filters_per_n.unwrap_or(0),
        ngram_orders: orders,
        // Without positional tables the length cap is not recoverable.
        max_word_len: max_word_len.unwrap_or(EncoderConfig::default().max_word_len.max(max_order)),
        positional: positional.unwrap_or(false),
        activation,
    })
}
