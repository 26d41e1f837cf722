//! Model assembly: encoder, span lattice, separation loss, and the
//! bidirectional decoder wired into one forward graph per sentence, plus the
//! full inference path from a sentence to resolved triplets.

use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::data::Sentence;
use crate::decoder::{
    build_labels, decode_on_tape, direction_loss_node, BidirGraph, DecoderParams, Direction,
    DirectionLabels, DirectionOutputs,
};
use crate::encoder::{Encoder, Mode, Vocab};
use crate::error::Result;
use crate::inference::{assemble, resolve_conflicts, union_only, PredictedTriplet};
use crate::lattice::{build_lattice, enumerate_spans, neighbor_sets, span_reps_node, Span};
use crate::params::{Binding, ParamStore};
use crate::separation::separation_loss_node;
use crate::tape::{NodeId, Tape};

pub struct Model {
    pub config: ExperimentConfig,
    pub encoder: Encoder,
    pub decoder: DecoderParams,
    pub store: ParamStore,
}

/// Loss nodes for one sentence on a shared tape.
pub struct SentenceGraph {
    pub spans: Vec<Span>,
    pub separation: NodeId,
    pub a_to_o: Option<NodeId>,
    pub o_to_a: Option<NodeId>,
    pub total: NodeId,
}

impl SentenceGraph {
    pub fn separation_value(&self, tape: &Tape) -> f64 {
        tape.scalar(self.separation)
    }

    pub fn direction_value(&self, tape: &Tape, direction: Direction) -> f64 {
        let node = match direction {
            Direction::AspectToOpinion => self.a_to_o,
            Direction::OpinionToAspect => self.o_to_a,
        };
        node.map_or(0.0, |n| tape.scalar(n))
    }

    pub fn total_value(&self, tape: &Tape) -> f64 {
        tape.scalar(self.total)
    }
}

impl Model {
    /// Fresh model: vocabulary from the training sentences, parameters
    /// freshly initialized into the store.
    pub fn init(
        config: ExperimentConfig,
        train_sentences: &[Sentence],
        rng: &mut ChaCha8Rng,
    ) -> Result<Model> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&config.encoder, train_sentences, &mut store, rng)?;
        let rep_dim = config.lattice.pooling.rep_dim(config.encoder.dim);
        let decoder = DecoderParams::init(&mut store, rep_dim, &config.decoder, rng)?;
        Ok(Model {
            config,
            encoder,
            decoder,
            store,
        })
    }

    /// Rebuild a model around restored parameters.
    pub fn from_parts(
        config: ExperimentConfig,
        store: ParamStore,
        vocab: Option<Vocab>,
    ) -> Result<Model> {
        config.validate()?;
        let encoder = Encoder::from_checkpoint(&config.encoder, vocab)?;
        let decoder = DecoderParams::from_store(&store);
        Ok(Model {
            config,
            encoder,
            decoder,
            store,
        })
    }

    /// Record the training objective for one sentence: separation loss plus
    /// both direction losses with gold triggers forced on the partner heads.
    pub fn sentence_graph(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        sentence: &Sentence,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<SentenceGraph> {
        let enc = self
            .encoder
            .encode_node(tape, binding, &self.store, sentence, mode, rng)?;
        let spans = enumerate_spans(
            sentence.tokens.len(),
            self.config.lattice.max_span_length,
            self.config.lattice.span_length_semantics,
        );
        let neighbors = neighbor_sets(&spans);
        let reps = span_reps_node(tape, enc, &spans, self.config.lattice.pooling);

        let separation = separation_loss_node(tape, reps, &neighbors, &self.config.loss);

        let ao_labels = build_labels(sentence, &spans, Direction::AspectToOpinion);
        let oa_labels = build_labels(sentence, &spans, Direction::OpinionToAspect);
        let leaves = self.decoder.bind(tape, binding, &self.store);
        let graph = decode_on_tape(
            tape,
            &leaves,
            &self.decoder,
            reps,
            &self.config.decoder,
            Some(&ao_labels.gold_triggers()),
            Some(&oa_labels.gold_triggers()),
            mode,
            rng,
        )?;

        let a_to_o = match &graph.a_to_o {
            Some(g) => Some(direction_loss_node(tape, g, &ao_labels)?),
            None => None,
        };
        let o_to_a = match &graph.o_to_a {
            Some(g) => Some(direction_loss_node(tape, g, &oa_labels)?),
            None => None,
        };

        let mut total = separation;
        if let Some(node) = a_to_o {
            total = tape.add(total, node);
        }
        if let Some(node) = o_to_a {
            total = tape.add(total, node);
        }

        Ok(SentenceGraph {
            spans,
            separation,
            a_to_o,
            o_to_a,
            total,
        })
    }

    /// Gold labels for one direction of a sentence over its span lattice.
    pub fn labels_for(&self, sentence: &Sentence, direction: Direction) -> DirectionLabels {
        let spans = enumerate_spans(
            sentence.tokens.len(),
            self.config.lattice.max_span_length,
            self.config.lattice.span_length_semantics,
        );
        build_labels(sentence, &spans, direction)
    }

    /// Decode both enabled directions in eval mode with predicted triggers.
    pub fn decode_sentence(
        &self,
        sentence: &Sentence,
    ) -> Result<(Option<DirectionOutputs>, Option<DirectionOutputs>, Vec<Span>)> {
        use rand::SeedableRng;
        let enc = self.encoder.encode_eval(&self.store, sentence)?;
        let lattice = build_lattice(
            &enc,
            self.config.lattice.max_span_length,
            self.config.lattice.pooling,
            self.config.lattice.span_length_semantics,
        );
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let leaves = self.decoder.bind(&mut tape, &mut binding, &self.store);
        let reps = tape.leaf(lattice.reps.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let graph: BidirGraph = decode_on_tape(
            &mut tape,
            &leaves,
            &self.decoder,
            reps,
            &self.config.decoder,
            None,
            None,
            Mode::Eval,
            &mut rng,
        )?;
        let extract = |g: &Option<crate::decoder::DirectionGraph>| {
            g.as_ref().map(|graph| DirectionOutputs {
                direction: graph.direction,
                trigger_probs: tape.value(graph.trigger_probs).clone(),
                trigger_set: graph.trigger_set.clone(),
                partner_probs: graph
                    .partners
                    .iter()
                    .map(|(j, p)| (*j, tape.value(p.probs).clone()))
                    .collect(),
            })
        };
        Ok((extract(&graph.a_to_o), extract(&graph.o_to_a), lattice.spans))
    }

    /// Full inference: both directions, assembly, and conflict resolution
    /// (or plain union when the inference strategy is disabled).
    pub fn predict_sentence(&self, sentence: &Sentence) -> Result<Vec<PredictedTriplet>> {
        let enc = self.encoder.encode_eval(&self.store, sentence)?;
        let lattice = build_lattice(
            &enc,
            self.config.lattice.max_span_length,
            self.config.lattice.pooling,
            self.config.lattice.span_length_semantics,
        );
        let (ao, oa, _) = self.decode_sentence(sentence)?;
        let empty = |direction| DirectionOutputs {
            direction,
            trigger_probs: ndarray::Array2::zeros((lattice.num_spans(), 2)),
            trigger_set: vec![],
            partner_probs: vec![],
        };
        let ao = ao.unwrap_or_else(|| empty(Direction::AspectToOpinion));
        let oa = oa.unwrap_or_else(|| empty(Direction::OpinionToAspect));
        let (t_ao, t_oa) = assemble(&ao, &oa, &lattice);
        Ok(if self.config.inference.resolve_conflicts {
            resolve_conflicts(t_ao, t_oa)
        } else {
            union_only(t_ao, t_oa)
        })
    }
}
