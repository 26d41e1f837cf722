//! Per-token contextual representations behind a pluggable interface.
//!
//! Two implementations: a small trainable encoder (learned embeddings plus a
//! windowed convolutional context layer) that trains in seconds on CPU, and
//! an adapter that reads vectors precomputed by an external pretrained
//! contextual encoder, aggregating subword pieces back to whitespace tokens.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sentence;
use crate::error::{Error, Result};
use crate::params::{Binding, ParamStore};
use crate::tape::{NodeId, Tape};

/// Whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How subword piece vectors are reduced to one vector per original token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    /// The first piece of each token.
    #[default]
    FirstPiece,
    /// Mean over all pieces of each token.
    MeanPieces,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Toy,
    PretrainedAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Token representation dimension.
    pub dim: usize,
    pub dropout: f64,
    /// Sentences longer than this are rejected, never silently truncated.
    pub max_len: usize,
    /// Toy only: context window width (odd).
    pub window: usize,
    /// Toy only: cap on vocabulary size including the unknown-token slot.
    pub max_vocab: usize,
    /// Adapter only: identifier of the external model output, as a path to
    /// its precomputed-vectors file.
    pub model: Option<String>,
    /// Adapter only: subword-to-token aggregation.
    pub aggregation: AggregationRule,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Toy,
            dim: 64,
            dropout: 0.1,
            max_len: 512,
            window: 3,
            max_vocab: 50_000,
            model: None,
            aggregation: AggregationRule::FirstPiece,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("encoder.dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("encoder.dropout must be in [0, 1)".into()));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Config("encoder.window must be odd".into()));
        }
        if self.max_vocab < 2 {
            return Err(Error::Config("encoder.max_vocab must be at least 2".into()));
        }
        if matches!(self.kind, EncoderKind::PretrainedAdapter) && self.model.is_none() {
            return Err(Error::Config(
                "encoder.model is required for the pretrained adapter".into(),
            ));
        }
        Ok(())
    }
}

/// Token-to-id mapping for the toy encoder. Id 0 is the unknown token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

pub const UNK_ID: usize = 0;

impl Vocab {
    /// Build from training sentences, most frequent tokens first.
    pub fn build(sentences: &[Sentence], max_vocab: usize) -> Vocab {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in &s.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut by_freq: Vec<(&str, usize)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens = vec!["<unk>".to_string()];
        tokens.extend(
            by_freq
                .into_iter()
                .take(max_vocab.saturating_sub(1))
                .map(|(t, _)| t.to_string()),
        );
        let mut vocab = Vocab {
            tokens,
            index: HashMap::new(),
        };
        vocab.rebuild_index();
        vocab
    }

    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Learned embeddings plus one windowed convolutional context layer with a
/// tanh nonlinearity.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    pub vocab: Vocab,
    dim: usize,
    window: usize,
    max_len: usize,
    dropout: f64,
}

const EMBED: &str = "encoder.embed";
const CTX_BIAS: &str = "encoder.ctx.b";

fn ctx_weight_name(k: usize) -> String {
    format!("encoder.ctx.w{k}")
}

impl ToyEncoder {
    pub fn new(config: &EncoderConfig, vocab: Vocab) -> ToyEncoder {
        ToyEncoder {
            vocab,
            dim: config.dim,
            window: config.window,
            max_len: config.max_len,
            dropout: config.dropout,
        }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        store.insert_glorot(EMBED, self.vocab.len(), self.dim, rng);
        for k in 0..self.window {
            store.insert_glorot(&ctx_weight_name(k), self.dim, self.dim, rng);
        }
        store.insert_zeros(CTX_BIAS, 1, self.dim);
    }

    fn token_ids(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    pub fn encode_node(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        store: &ParamStore,
        sentence: &Sentence,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let n = sentence.tokens.len();
        if n == 0 {
            return Err(Error::Validation {
                id: sentence.id.clone(),
                msg: "cannot encode an empty sentence".into(),
            });
        }
        if n > self.max_len {
            return Err(Error::TooLong {
                id: sentence.id.clone(),
                len: n,
                max: self.max_len,
            });
        }

        let ids = self.token_ids(sentence);
        let embedded = binding.bind_rows(tape, store, store.idx(EMBED), ids);

        // h_i = tanh(b + sum_k E[i + k - half] . W_k), zero-padded.
        let half = (self.window / 2) as isize;
        let mut acc: Option<NodeId> = None;
        for k in 0..self.window {
            let offset = k as isize - half;
            let shifted = if offset == 0 {
                embedded
            } else {
                tape.shift_rows(embedded, -offset)
            };
            let w = binding.bind(tape, store, store.idx(&ctx_weight_name(k)));
            let term = tape.matmul(shifted, w);
            acc = Some(match acc {
                Some(prev) => tape.add(prev, term),
                None => term,
            });
        }
        let bias = binding.bind(tape, store, store.idx(CTX_BIAS));
        let pre = tape.add_row(acc.unwrap(), bias);
        let mut out = tape.tanh(pre);

        if mode == Mode::Train && self.dropout > 0.0 {
            let keep = 1.0 - self.dropout;
            let mask = Array2::from_shape_fn((n, self.dim), |_| {
                if rng.gen_range(0.0..1.0) < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            let mask_node = tape.leaf(mask);
            out = tape.mul(out, mask_node);
        }
        Ok(out)
    }
}

/// Record format for externally precomputed subword vectors: one JSON object
/// per line with the sentence id, token count, per-piece token alignment
/// (-1 marks special pieces to drop), and per-piece vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PieceRecord {
    id: String,
    tokens: usize,
    alignment: Vec<i64>,
    vectors: Vec<Vec<f64>>,
}

/// Adapter over an external pretrained contextual encoder's output file.
#[derive(Debug, Clone)]
pub struct PrecomputedEncoder {
    records: HashMap<String, PieceRecord>,
    dim: usize,
    max_len: usize,
    aggregation: AggregationRule,
}

impl PrecomputedEncoder {
    pub fn load(config: &EncoderConfig) -> Result<PrecomputedEncoder> {
        let path = config
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("encoder.model not set".into()))?;
        let text = fs::read_to_string(Path::new(path))?;
        let mut records = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: PieceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            records.insert(record.id.clone(), record);
        }
        Ok(PrecomputedEncoder {
            records,
            dim: config.dim,
            max_len: config.max_len,
            aggregation: config.aggregation,
        })
    }

    pub fn encode(&self, sentence: &Sentence) -> Result<Array2<f64>> {
        let record = self.records.get(&sentence.id).ok_or_else(|| Error::Validation {
            id: sentence.id.clone(),
            msg: "no precomputed vectors for this sentence id".into(),
        })?;
        if record.vectors.len() > self.max_len {
            return Err(Error::TooLong {
                id: sentence.id.clone(),
                len: record.vectors.len(),
                max: self.max_len,
            });
        }
        let n = sentence.tokens.len();
        if record.tokens != n {
            return Err(Error::Validation {
                id: sentence.id.clone(),
                msg: format!(
                    "precomputed record covers {} tokens, sentence has {n}",
                    record.tokens
                ),
            });
        }
        if record.alignment.len() != record.vectors.len() {
            return Err(Error::Validation {
                id: sentence.id.clone(),
                msg: "alignment and vector counts differ".into(),
            });
        }

        let mut out = Array2::zeros((n, self.dim));
        let mut piece_counts = vec![0usize; n];
        for (piece, &token) in record.alignment.iter().enumerate() {
            if token < 0 {
                continue;
            }
            let token = token as usize;
            if token >= n {
                return Err(Error::Validation {
                    id: sentence.id.clone(),
                    msg: format!("alignment points at token {token}, sentence has {n}"),
                });
            }
            let vector = &record.vectors[piece];
            if vector.len() != self.dim {
                return Err(Error::Validation {
                    id: sentence.id.clone(),
                    msg: format!("piece vector has {} dims, expected {}", vector.len(), self.dim),
                });
            }
            match self.aggregation {
                AggregationRule::FirstPiece => {
                    if piece_counts[token] == 0 {
                        for (c, &x) in vector.iter().enumerate() {
                            out[[token, c]] = x;
                        }
                    }
                }
                AggregationRule::MeanPieces => {
                    for (c, &x) in vector.iter().enumerate() {
                        out[[token, c]] += x;
                    }
                }
            }
            piece_counts[token] += 1;
        }
        for (token, &count) in piece_counts.iter().enumerate() {
            if count == 0 {
                return Err(Error::Validation {
                    id: sentence.id.clone(),
                    msg: format!("token {token} has no aligned pieces"),
                });
            }
            if matches!(self.aggregation, AggregationRule::MeanPieces) {
                let scale = 1.0 / count as f64;
                out.row_mut(token).mapv_inplace(|x| x * scale);
            }
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("precomputed vectors for sentence {}", sentence.id),
            });
        }
        Ok(out)
    }
}

/// The pluggable sentence encoder.
#[derive(Debug, Clone)]
pub enum Encoder {
    Toy(ToyEncoder),
    Precomputed(PrecomputedEncoder),
}

impl Encoder {
    /// Build an encoder and (for the toy kind) register its parameters.
    pub fn init(
        config: &EncoderConfig,
        train_sentences: &[Sentence],
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Encoder> {
        config.validate()?;
        match config.kind {
            EncoderKind::Toy => {
                let vocab = Vocab::build(train_sentences, config.max_vocab);
                let toy = ToyEncoder::new(config, vocab);
                toy.init_params(store, rng);
                Ok(Encoder::Toy(toy))
            }
            EncoderKind::PretrainedAdapter => {
                Ok(Encoder::Precomputed(PrecomputedEncoder::load(config)?))
            }
        }
    }

    /// Rebuild from a checkpointed vocabulary; parameters come from the
    /// restored store.
    pub fn from_checkpoint(config: &EncoderConfig, vocab: Option<Vocab>) -> Result<Encoder> {
        config.validate()?;
        match config.kind {
            EncoderKind::Toy => {
                let vocab = vocab.ok_or_else(|| {
                    Error::Config("checkpoint is missing the toy encoder vocabulary".into())
                })?;
                Ok(Encoder::Toy(ToyEncoder::new(config, vocab)))
            }
            EncoderKind::PretrainedAdapter => {
                Ok(Encoder::Precomputed(PrecomputedEncoder::load(config)?))
            }
        }
    }

    pub fn vocab(&self) -> Option<&Vocab> {
        match self {
            Encoder::Toy(t) => Some(&t.vocab),
            Encoder::Precomputed(_) => None,
        }
    }

    pub fn trainable(&self) -> bool {
        matches!(self, Encoder::Toy(_))
    }

    /// Record the encoding on a tape. The adapter contributes a constant
    /// leaf; the toy encoder binds its parameters for the backward pass.
    pub fn encode_node(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        store: &ParamStore,
        sentence: &Sentence,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        match self {
            Encoder::Toy(toy) => toy.encode_node(tape, binding, store, sentence, mode, rng),
            Encoder::Precomputed(pre) => Ok(tape.leaf(pre.encode(sentence)?)),
        }
    }

    /// One representation row per whitespace token.
    pub fn encode(
        &self,
        store: &ParamStore,
        sentence: &Sentence,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let node = self.encode_node(&mut tape, &mut binding, store, sentence, mode, rng)?;
        Ok(tape.value(node).clone())
    }

    /// Deterministic eval-mode encoding.
    pub fn encode_eval(&self, store: &ParamStore, sentence: &Sentence) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        self.encode(store, sentence, Mode::Eval, &mut rng)
    }
}
