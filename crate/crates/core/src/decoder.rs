//! Bidirectional span decoding.
//!
//! Two feed-forward feature extractors are shared across decode directions:
//! the aspect features trigger extraction in the aspect-to-opinion direction
//! and partner classification in the opinion-to-aspect direction, and vice
//! versa for the opinion features. Trigger heads are binary (valid/invalid);
//! partner heads classify each span against a specific trigger into one of
//! three sentiments or invalid, after an exponential gate ties the candidate
//! span's features to the trigger's original representation.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Sentence, Sentiment};
use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::lattice::{span_index, Span, SpanLattice};
use crate::params::{Binding, ParamStore};
use crate::tape::{NodeId, Tape};

/// Decode direction: which term type triggers the extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "a_to_o")]
    AspectToOpinion,
    #[serde(rename = "o_to_a")]
    OpinionToAspect,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AspectToOpinion => "a_to_o",
            Direction::OpinionToAspect => "o_to_a",
        })
    }
}

pub const TRIGGER_VALID: usize = 0;
pub const TRIGGER_INVALID: usize = 1;
pub const TRIGGER_CLASSES: usize = 2;

pub const PARTNER_INVALID: usize = 3;
pub const PARTNER_CLASSES: usize = 4;

pub fn sentiment_class(s: Sentiment) -> usize {
    match s {
        Sentiment::Positive => 0,
        Sentiment::Neutral => 1,
        Sentiment::Negative => 2,
    }
}

pub fn class_sentiment(class: usize) -> Option<Sentiment> {
    match class {
        0 => Some(Sentiment::Positive),
        1 => Some(Sentiment::Neutral),
        2 => Some(Sentiment::Negative),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

/// How a candidate span's features are gated against a trigger's original
/// representation before partner classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Element-wise exp(u - g), clamped.
    #[default]
    Elementwise,
    /// Feature-wise softmax of (u - g): normalized attention weights.
    SoftmaxAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Hidden width of the feature extractors; defaults to the span
    /// representation dimension.
    pub hidden: Option<usize>,
    pub activation: Activation,
    pub gate: GateMode,
    /// Upper bound on the element-wise gate, preventing overflow.
    pub gate_clamp: f64,
    pub dropout: f64,
    pub enable_a_to_o: bool,
    pub enable_o_to_a: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden: None,
            activation: Activation::Tanh,
            gate: GateMode::Elementwise,
            gate_clamp: 1e4,
            dropout: 0.1,
            enable_a_to_o: true,
            enable_o_to_a: true,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == Some(0) {
            return Err(Error::Config("decoder.hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("decoder.dropout must be in [0, 1)".into()));
        }
        if self.gate_clamp <= 0.0 {
            return Err(Error::Config("decoder.gate_clamp must be positive".into()));
        }
        if !self.enable_a_to_o && !self.enable_o_to_a {
            return Err(Error::Config("at least one decode direction must be enabled".into()));
        }
        Ok(())
    }
}

const FFNN_A: &str = "decoder.ffnn_a";
const FFNN_O: &str = "decoder.ffnn_o";
const HEAD_AO_TRIGGER: &str = "decoder.head.ao_trigger";
const HEAD_AO_PARTNER: &str = "decoder.head.ao_partner";
const HEAD_OA_TRIGGER: &str = "decoder.head.oa_trigger";
const HEAD_OA_PARTNER: &str = "decoder.head.oa_partner";

/// Shape bookkeeping for the decoder parameters living in a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub struct DecoderParams {
    pub rep_dim: usize,
    pub hidden: usize,
}

impl DecoderParams {
    /// Register freshly initialized parameters. The feature extractors map
    /// the representation dimension back onto itself, as required by the
    /// element-wise gate product.
    pub fn init(
        store: &mut ParamStore,
        rep_dim: usize,
        config: &DecoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<DecoderParams> {
        config.validate()?;
        if rep_dim == 0 {
            return Err(Error::Config("span representation dimension is zero".into()));
        }
        let hidden = config.hidden.unwrap_or(rep_dim);
        for ffnn in [FFNN_A, FFNN_O] {
            store.insert_glorot(&format!("{ffnn}.w1"), rep_dim, hidden, rng);
            store.insert_zeros(&format!("{ffnn}.b1"), 1, hidden);
            store.insert_glorot(&format!("{ffnn}.w2"), hidden, rep_dim, rng);
            store.insert_zeros(&format!("{ffnn}.b2"), 1, rep_dim);
        }
        store.insert_glorot(HEAD_AO_TRIGGER, rep_dim, TRIGGER_CLASSES, rng);
        store.insert_glorot(HEAD_AO_PARTNER, rep_dim, PARTNER_CLASSES, rng);
        store.insert_glorot(HEAD_OA_TRIGGER, rep_dim, TRIGGER_CLASSES, rng);
        store.insert_glorot(HEAD_OA_PARTNER, rep_dim, PARTNER_CLASSES, rng);
        Ok(DecoderParams { rep_dim, hidden })
    }

    /// Recover the shape bookkeeping from a restored store.
    pub fn from_store(store: &ParamStore) -> DecoderParams {
        let w1 = store.value(store.idx(&format!("{FFNN_A}.w1")));
        DecoderParams {
            rep_dim: w1.nrows(),
            hidden: w1.ncols(),
        }
    }

    pub fn bind(&self, tape: &mut Tape, binding: &mut Binding, store: &ParamStore) -> DecoderLeaves {
        let ffnn = |b: &mut Binding, t: &mut Tape, prefix: &str| FfnnLeaves {
            w1: b.bind(t, store, store.idx(&format!("{prefix}.w1"))),
            b1: b.bind(t, store, store.idx(&format!("{prefix}.b1"))),
            w2: b.bind(t, store, store.idx(&format!("{prefix}.w2"))),
            b2: b.bind(t, store, store.idx(&format!("{prefix}.b2"))),
        };
        DecoderLeaves {
            ffnn_a: ffnn(binding, tape, FFNN_A),
            ffnn_o: ffnn(binding, tape, FFNN_O),
            ao_trigger: binding.bind(tape, store, store.idx(HEAD_AO_TRIGGER)),
            ao_partner: binding.bind(tape, store, store.idx(HEAD_AO_PARTNER)),
            oa_trigger: binding.bind(tape, store, store.idx(HEAD_OA_TRIGGER)),
            oa_partner: binding.bind(tape, store, store.idx(HEAD_OA_PARTNER)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FfnnLeaves {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLeaves {
    pub ffnn_a: FfnnLeaves,
    pub ffnn_o: FfnnLeaves,
    pub ao_trigger: NodeId,
    pub ao_partner: NodeId,
    pub oa_trigger: NodeId,
    pub oa_partner: NodeId,
}

fn ffnn_node(
    tape: &mut Tape,
    leaves: FfnnLeaves,
    x: NodeId,
    config: &DecoderConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> NodeId {
    let pre = tape.matmul(x, leaves.w1);
    let pre = tape.add_row(pre, leaves.b1);
    let mut h = match config.activation {
        Activation::Tanh => tape.tanh(pre),
        Activation::Relu => tape.relu(pre),
    };
    if mode == Mode::Train && config.dropout > 0.0 {
        use rand::Rng;
        let keep = 1.0 - config.dropout;
        let shape = tape.value(h).raw_dim();
        let mask = Array2::from_shape_fn(shape, |_| {
            if rng.gen_range(0.0..1.0) < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let mask_node = tape.leaf(mask);
        h = tape.mul(h, mask_node);
    }
    let out = tape.matmul(h, leaves.w2);
    tape.add_row(out, leaves.b2)
}

/// Per-trigger partner classification nodes.
#[derive(Debug, Clone, Copy)]
pub struct PartnerGraph {
    pub logits: NodeId,
    pub probs: NodeId,
}

/// One decode direction recorded on a tape.
#[derive(Debug, Clone)]
pub struct DirectionGraph {
    pub direction: Direction,
    pub trigger_logits: NodeId,
    pub trigger_probs: NodeId,
    pub trigger_set: Vec<usize>,
    /// Keyed by trigger span index, ascending.
    pub partners: Vec<(usize, PartnerGraph)>,
}

/// Both directions plus the shared feature nodes.
#[derive(Debug, Clone)]
pub struct BidirGraph {
    pub aspect_feats: NodeId,
    pub opinion_feats: NodeId,
    pub a_to_o: Option<DirectionGraph>,
    pub o_to_a: Option<DirectionGraph>,
}

/// Spans predicted valid: p(valid) strictly above p(invalid); ties invalid.
pub fn argmax_valid_triggers(trigger_probs: &Array2<f64>) -> Vec<usize> {
    (0..trigger_probs.nrows())
        .filter(|&i| trigger_probs[[i, TRIGGER_VALID]] > trigger_probs[[i, TRIGGER_INVALID]])
        .collect()
}

fn direction_graph(
    tape: &mut Tape,
    reps: NodeId,
    trigger_feats: NodeId,
    partner_feats: NodeId,
    trigger_head: NodeId,
    partner_head: NodeId,
    direction: Direction,
    trigger_set_override: Option<&[usize]>,
    config: &DecoderConfig,
) -> Result<DirectionGraph> {
    let m = tape.value(reps).nrows();
    let trigger_logits = tape.matmul(trigger_feats, trigger_head);
    let trigger_probs = tape.softmax_rows(trigger_logits);

    let trigger_set: Vec<usize> = match trigger_set_override {
        Some(set) => {
            let mut set = set.to_vec();
            set.sort_unstable();
            set.dedup();
            if set.iter().any(|&j| j >= m) {
                return Err(Error::Validation {
                    id: String::new(),
                    msg: format!("trigger override index out of range for {m} spans"),
                });
            }
            set
        }
        None => argmax_valid_triggers(tape.value(trigger_probs)),
    };

    let ones = tape.leaf(Array2::from_elem((m, 1), 1.0));
    let mut partners = Vec::with_capacity(trigger_set.len());
    for &j in &trigger_set {
        let g_j = tape.gather_rows(reps, vec![j]);
        let g_rows = tape.matmul(ones, g_j); // broadcast g_j to every row
        let diff = tape.sub(partner_feats, g_rows);
        let gate = match config.gate {
            GateMode::Elementwise => {
                let e = tape.exp(diff);
                tape.clamp(e, 0.0, config.gate_clamp)
            }
            GateMode::SoftmaxAttention => tape.softmax_rows(diff),
        };
        let gated = tape.mul(gate, g_rows);
        let combined = tape.add(partner_feats, gated);
        let logits = tape.matmul(combined, partner_head);
        let probs = tape.softmax_rows(logits);
        partners.push((j, PartnerGraph { logits, probs }));
    }

    Ok(DirectionGraph {
        direction,
        trigger_logits,
        trigger_probs,
        trigger_set,
        partners,
    })
}

/// Record both decode directions on the tape; the two feature extractors run
/// once each and their outputs are shared across directions.
#[allow(clippy::too_many_arguments)]
pub fn decode_on_tape(
    tape: &mut Tape,
    leaves: &DecoderLeaves,
    params: &DecoderParams,
    reps: NodeId,
    config: &DecoderConfig,
    ao_override: Option<&[usize]>,
    oa_override: Option<&[usize]>,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<BidirGraph> {
    if tape.value(reps).ncols() != params.rep_dim {
        return Err(Error::Config(format!(
            "span representations have dimension {}, decoder was built for {}",
            tape.value(reps).ncols(),
            params.rep_dim
        )));
    }
    let aspect_feats = ffnn_node(tape, leaves.ffnn_a, reps, config, mode, rng);
    let opinion_feats = ffnn_node(tape, leaves.ffnn_o, reps, config, mode, rng);

    let a_to_o = if config.enable_a_to_o {
        Some(direction_graph(
            tape,
            reps,
            aspect_feats,
            opinion_feats,
            leaves.ao_trigger,
            leaves.ao_partner,
            Direction::AspectToOpinion,
            ao_override,
            config,
        )?)
    } else {
        None
    };
    let o_to_a = if config.enable_o_to_a {
        Some(direction_graph(
            tape,
            reps,
            opinion_feats,
            aspect_feats,
            leaves.oa_trigger,
            leaves.oa_partner,
            Direction::OpinionToAspect,
            oa_override,
            config,
        )?)
    } else {
        None
    };

    Ok(BidirGraph {
        aspect_feats,
        opinion_feats,
        a_to_o,
        o_to_a,
    })
}

/// Probabilities produced by one decode direction.
#[derive(Debug, Clone)]
pub struct DirectionOutputs {
    pub direction: Direction,
    /// m-by-2: valid / invalid per span.
    pub trigger_probs: Array2<f64>,
    pub trigger_set: Vec<usize>,
    /// Per trigger span index: m-by-4 over positive/neutral/negative/invalid.
    pub partner_probs: Vec<(usize, Array2<f64>)>,
}

impl DirectionOutputs {
    fn from_graph(tape: &Tape, graph: &DirectionGraph) -> DirectionOutputs {
        DirectionOutputs {
            direction: graph.direction,
            trigger_probs: tape.value(graph.trigger_probs).clone(),
            trigger_set: graph.trigger_set.clone(),
            partner_probs: graph
                .partners
                .iter()
                .map(|(j, p)| (*j, tape.value(p.probs).clone()))
                .collect(),
        }
    }

    pub fn partner_for(&self, trigger: usize) -> Option<&Array2<f64>> {
        self.partner_probs
            .iter()
            .find(|(j, _)| *j == trigger)
            .map(|(_, p)| p)
    }
}

/// Decode one direction of a lattice in eval mode (no dropout).
pub fn decode_direction(
    lattice: &SpanLattice,
    store: &ParamStore,
    params: &DecoderParams,
    config: &DecoderConfig,
    direction: Direction,
    trigger_set_override: Option<&[usize]>,
) -> Result<DirectionOutputs> {
    use rand::SeedableRng;
    let mut tape = Tape::new();
    let mut binding = Binding::new();
    let leaves = params.bind(&mut tape, &mut binding, store);
    let reps = tape.leaf(lattice.reps.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cfg = config.clone();
    // Only the requested direction is materialized.
    cfg.enable_a_to_o = direction == Direction::AspectToOpinion;
    cfg.enable_o_to_a = direction == Direction::OpinionToAspect;
    let (ao_override, oa_override) = match direction {
        Direction::AspectToOpinion => (trigger_set_override, None),
        Direction::OpinionToAspect => (None, trigger_set_override),
    };
    let graph = decode_on_tape(
        &mut tape,
        &leaves,
        params,
        reps,
        &cfg,
        ao_override,
        oa_override,
        Mode::Eval,
        &mut rng,
    )?;
    let direction_graph = match direction {
        Direction::AspectToOpinion => graph.a_to_o.unwrap(),
        Direction::OpinionToAspect => graph.o_to_a.unwrap(),
    };
    Ok(DirectionOutputs::from_graph(&tape, &direction_graph))
}

/// Gold supervision for one decode direction over a lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionLabels {
    /// Per span: is it a gold trigger for this direction.
    pub trigger_valid: Vec<bool>,
    /// Per gold trigger span index (ascending): partner class for every span.
    pub partner: Vec<(usize, Vec<usize>)>,
}

impl DirectionLabels {
    pub fn gold_triggers(&self) -> Vec<usize> {
        self.partner.iter().map(|(j, _)| *j).collect()
    }
}

/// Build direction labels from gold triplets. Terms longer than the span cap
/// are absent from the lattice; such triplets contribute only negative
/// trigger labels for the missing side.
pub fn build_labels(
    sentence: &Sentence,
    spans: &[Span],
    direction: Direction,
) -> DirectionLabels {
    let m = spans.len();
    let mut trigger_valid = vec![false; m];
    let mut partner_map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for t in &sentence.gold {
        let (trigger_indices, partner_indices) = match direction {
            Direction::AspectToOpinion => (&t.aspect, &t.opinion),
            Direction::OpinionToAspect => (&t.opinion, &t.aspect),
        };
        let Some(tj) = span_index(spans, &Span::from_indices(trigger_indices)) else {
            continue;
        };
        trigger_valid[tj] = true;
        let classes = partner_map
            .entry(tj)
            .or_insert_with(|| vec![PARTNER_INVALID; m]);
        if let Some(pi) = span_index(spans, &Span::from_indices(partner_indices)) {
            classes[pi] = sentiment_class(t.sentiment);
        }
    }
    DirectionLabels {
        trigger_valid,
        partner: partner_map.into_iter().collect(),
    }
}

/// Cross-entropy of the trigger head over all spans plus cross-entropy of the
/// partner head over every (span, gold trigger) pair.
pub fn direction_loss(outputs: &DirectionOutputs, labels: &DirectionLabels) -> Result<f64> {
    let m = outputs.trigger_probs.nrows();
    if labels.trigger_valid.len() != m {
        return Err(Error::Validation {
            id: String::new(),
            msg: format!(
                "trigger labels cover {} spans, outputs cover {m}",
                labels.trigger_valid.len()
            ),
        });
    }
    let mut loss = 0.0;
    for (i, &valid) in labels.trigger_valid.iter().enumerate() {
        let class = if valid { TRIGGER_VALID } else { TRIGGER_INVALID };
        loss -= outputs.trigger_probs[[i, class]].ln();
    }
    for (j, classes) in &labels.partner {
        let probs = outputs.partner_for(*j).ok_or_else(|| Error::Validation {
            id: String::new(),
            msg: format!("outputs carry no partner distribution for gold trigger {j}"),
        })?;
        if classes.len() != m {
            return Err(Error::Validation {
                id: String::new(),
                msg: format!("partner labels for trigger {j} cover {} spans, expected {m}", classes.len()),
            });
        }
        for (i, &class) in classes.iter().enumerate() {
            loss -= probs[[i, class]].ln();
        }
    }
    Ok(loss)
}

/// Tape version of [`direction_loss`]; requires the graph to have been
/// decoded with the gold triggers forced.
pub fn direction_loss_node(
    tape: &mut Tape,
    graph: &DirectionGraph,
    labels: &DirectionLabels,
) -> Result<NodeId> {
    let m = tape.value(graph.trigger_probs).nrows();
    if labels.trigger_valid.len() != m {
        return Err(Error::Validation {
            id: String::new(),
            msg: "trigger labels misaligned with lattice".into(),
        });
    }
    let trigger_logp = tape.log_softmax_rows(graph.trigger_logits);
    let mut one_hot = Array2::zeros((m, TRIGGER_CLASSES));
    for (i, &valid) in labels.trigger_valid.iter().enumerate() {
        let class = if valid { TRIGGER_VALID } else { TRIGGER_INVALID };
        one_hot[[i, class]] = 1.0;
    }
    let mask = tape.leaf(one_hot);
    let picked = tape.mul(trigger_logp, mask);
    let picked_sum = tape.sum_all(picked);
    let mut loss = tape.scale(picked_sum, -1.0);

    for (j, classes) in &labels.partner {
        let partner = graph
            .partners
            .iter()
            .find(|(pj, _)| pj == j)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Validation {
                id: String::new(),
                msg: format!("decode graph has no partner branch for gold trigger {j}"),
            })?;
        let logp = tape.log_softmax_rows(partner.logits);
        let mut one_hot = Array2::zeros((m, PARTNER_CLASSES));
        for (i, &class) in classes.iter().enumerate() {
            one_hot[[i, class]] = 1.0;
        }
        let mask = tape.leaf(one_hot);
        let picked = tape.mul(logp, mask);
        let picked_sum = tape.sum_all(picked);
        let neg = tape.scale(picked_sum, -1.0);
        loss = tape.add(loss, neg);
    }
    Ok(loss)
}

/// Combined objective: separation loss plus both direction losses.
pub fn total_loss(separation: f64, a_to_o: f64, o_to_a: f64) -> f64 {
    separation + a_to_o + o_to_a
}
