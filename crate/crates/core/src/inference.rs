//! Triplet assembly from both decode directions and confidence-based
//! conflict elimination.
//!
//! Two triplets conflict when their aspect spans overlap AND their opinion
//! spans overlap on token positions. Resolution keeps, in priority order
//! (confidence descending, then a canonical tie-break), every triplet that
//! does not conflict with an already-kept one; each removed triplet
//! therefore conflicts with a retained triplet of greater or equal
//! confidence, and the result is independent of input order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::Sentiment;
use crate::decoder::{class_sentiment, Direction, DirectionOutputs, TRIGGER_VALID};
use crate::lattice::{Span, SpanLattice};

/// One extracted triplet with its provenance and confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedTriplet {
    pub aspect: Span,
    pub opinion: Span,
    pub sentiment: Sentiment,
    pub direction: Direction,
    pub confidence: f64,
}

impl PredictedTriplet {
    /// Conflict test: overlap in both the aspect and the opinion positions.
    pub fn conflicts_with(&self, other: &PredictedTriplet) -> bool {
        self.aspect.overlaps(&other.aspect) && self.opinion.overlaps(&other.opinion)
    }

    fn same_triplet(&self, other: &PredictedTriplet) -> bool {
        self.aspect == other.aspect
            && self.opinion == other.opinion
            && self.sentiment == other.sentiment
    }
}

/// Canonical priority: higher confidence first; ties broken by direction
/// (aspect-to-opinion first), then span positions, then sentiment.
fn priority_order(a: &PredictedTriplet, b: &PredictedTriplet) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .expect("confidences must be finite")
        .then_with(|| a.direction.cmp(&b.direction))
        .then_with(|| a.aspect.cmp(&b.aspect))
        .then_with(|| a.opinion.cmp(&b.opinion))
        .then_with(|| sentiment_rank(a.sentiment).cmp(&sentiment_rank(b.sentiment)))
}

fn sentiment_rank(s: Sentiment) -> u8 {
    match s {
        Sentiment::Positive => 0,
        Sentiment::Neutral => 1,
        Sentiment::Negative => 2,
    }
}

/// Turn one direction's probabilities into candidate triplets.
///
/// For every trigger in the output's trigger set and every span whose
/// partner argmax is a sentiment class, a triplet is emitted with confidence
/// p(trigger valid) times p(partner sentiment).
fn assemble_direction(
    outputs: &DirectionOutputs,
    lattice: &SpanLattice,
) -> Vec<PredictedTriplet> {
    let mut triplets = Vec::new();
    for &(trigger_idx, ref probs) in &outputs.partner_probs {
        if !outputs.trigger_set.contains(&trigger_idx) {
            continue;
        }
        let trigger_conf = outputs.trigger_probs[[trigger_idx, TRIGGER_VALID]];
        for partner_idx in 0..probs.nrows() {
            let row = probs.row(partner_idx);
            let (best_class, best_p) = row
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite probabilities"))
                .unwrap();
            let Some(sentiment) = class_sentiment(best_class) else {
                continue; // argmax is the invalid class
            };
            let (aspect, opinion) = match outputs.direction {
                Direction::AspectToOpinion => {
                    (lattice.spans[trigger_idx], lattice.spans[partner_idx])
                }
                Direction::OpinionToAspect => {
                    (lattice.spans[partner_idx], lattice.spans[trigger_idx])
                }
            };
            triplets.push(PredictedTriplet {
                aspect,
                opinion,
                sentiment,
                direction: outputs.direction,
                confidence: trigger_conf * best_p,
            });
        }
    }
    triplets
}

/// Candidate triplets from both directions, in lattice order per direction.
pub fn assemble(
    outputs_ao: &DirectionOutputs,
    outputs_oa: &DirectionOutputs,
    lattice: &SpanLattice,
) -> (Vec<PredictedTriplet>, Vec<PredictedTriplet>) {
    (
        assemble_direction(outputs_ao, lattice),
        assemble_direction(outputs_oa, lattice),
    )
}

/// Union both directions (identical triplets merge, keeping the higher
/// confidence) and discard every triplet conflicting with a higher-priority
/// one.
pub fn resolve_conflicts(
    t_ao: Vec<PredictedTriplet>,
    t_oa: Vec<PredictedTriplet>,
) -> Vec<PredictedTriplet> {
    let mut pool: Vec<PredictedTriplet> = Vec::with_capacity(t_ao.len() + t_oa.len());
    for candidate in t_ao.into_iter().chain(t_oa) {
        match pool.iter_mut().find(|kept| kept.same_triplet(&candidate)) {
            Some(existing) => {
                if priority_order(&candidate, existing) == Ordering::Less {
                    *existing = candidate;
                }
            }
            None => pool.push(candidate),
        }
    }
    pool.sort_by(priority_order);

    let mut kept: Vec<PredictedTriplet> = Vec::new();
    for candidate in pool {
        if !kept.iter().any(|k| k.conflicts_with(&candidate)) {
            kept.push(candidate);
        }
    }
    kept
}

/// Union without conflict elimination (identical triplets still merge); used
/// when the inference strategy is disabled.
pub fn union_only(
    t_ao: Vec<PredictedTriplet>,
    t_oa: Vec<PredictedTriplet>,
) -> Vec<PredictedTriplet> {
    let mut pool: Vec<PredictedTriplet> = Vec::with_capacity(t_ao.len() + t_oa.len());
    for candidate in t_ao.into_iter().chain(t_oa) {
        match pool.iter_mut().find(|kept| kept.same_triplet(&candidate)) {
            Some(existing) => {
                if priority_order(&candidate, existing) == Ordering::Less {
                    *existing = candidate;
                }
            }
            None => pool.push(candidate),
        }
    }
    pool.sort_by(priority_order);
    pool
}
