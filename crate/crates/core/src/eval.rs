//! Exact-match scoring: a predicted triplet counts only if its aspect span,
//! opinion span, and sentiment all match a gold triplet on token positions.
//! Micro-averaged across the corpus, with entity-length and
//! triplets-per-sentence breakdowns.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{GoldTriplet, Sentence, Sentiment};
use crate::error::{Error, Result};
use crate::inference::PredictedTriplet;
use crate::lattice::Span;

/// Identity of a triplet for matching purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletKey {
    pub aspect: Span,
    pub opinion: Span,
    pub sentiment: Sentiment,
}

impl From<&GoldTriplet> for TripletKey {
    fn from(t: &GoldTriplet) -> Self {
        TripletKey {
            aspect: Span::from_indices(&t.aspect),
            opinion: Span::from_indices(&t.opinion),
            sentiment: t.sentiment,
        }
    }
}

impl From<&PredictedTriplet> for TripletKey {
    fn from(t: &PredictedTriplet) -> Self {
        TripletKey {
            aspect: t.aspect,
            opinion: t.opinion,
            sentiment: t.sentiment,
        }
    }
}

/// Micro counts with the derived precision/recall/F1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrfCounts {
    pub predicted: usize,
    pub gold: usize,
    pub correct: usize,
}

impl PrfCounts {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            0.0
        } else {
            self.correct as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.correct as f64 / self.gold as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn absorb(&mut self, other: &PrfCounts) {
        self.predicted += other.predicted;
        self.gold += other.gold;
        self.correct += other.correct;
    }
}

/// Sentence subclass by gold triplet count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CountBucket {
    One,
    Two,
    Three,
    Four,
    FivePlus,
}

impl CountBucket {
    pub fn of(gold_count: usize) -> Option<CountBucket> {
        match gold_count {
            0 => None,
            1 => Some(CountBucket::One),
            2 => Some(CountBucket::Two),
            3 => Some(CountBucket::Three),
            4 => Some(CountBucket::Four),
            _ => Some(CountBucket::FivePlus),
        }
    }
}

impl fmt::Display for CountBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CountBucket::One => "1",
            CountBucket::Two => "2",
            CountBucket::Three => "3",
            CountBucket::Four => "4",
            CountBucket::FivePlus => ">=5",
        })
    }
}

/// Per-length precision/recall counts for one term type, with a rollup of
/// all lengths of at least four tokens.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LengthBreakdown {
    pub by_length: BTreeMap<usize, PrfCounts>,
    pub four_plus: PrfCounts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub triplet: PrfCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub aspect_terms: LengthBreakdown,
    pub opinion_terms: LengthBreakdown,
    /// Only buckets with at least one sentence appear.
    pub by_triplet_count: BTreeMap<CountBucket, PrfCounts>,
}

/// Predictions keyed by sentence id.
pub type Predictions = BTreeMap<String, Vec<TripletKey>>;

fn match_counts(predicted: &[TripletKey], gold: &[TripletKey]) -> PrfCounts {
    let mut remaining: HashMap<TripletKey, usize> = HashMap::new();
    for g in gold {
        *remaining.entry(*g).or_default() += 1;
    }
    let mut correct = 0;
    for p in predicted {
        if let Some(count) = remaining.get_mut(p) {
            if *count > 0 {
                *count -= 1;
                correct += 1;
            }
        }
    }
    PrfCounts {
        predicted: predicted.len(),
        gold: gold.len(),
        correct,
    }
}

fn check_known_ids(predictions: &Predictions, gold: &[Sentence]) -> Result<()> {
    let known: HashSet<&str> = gold.iter().map(|s| s.id.as_str()).collect();
    for id in predictions.keys() {
        if !known.contains(id.as_str()) {
            return Err(Error::Eval(format!(
                "predictions reference unknown sentence id {id}"
            )));
        }
    }
    Ok(())
}

/// Micro-averaged exact-match scores plus both breakdowns.
pub fn score(predictions: &Predictions, gold: &[Sentence]) -> Result<EvalReport> {
    check_known_ids(predictions, gold)?;
    static EMPTY: Vec<TripletKey> = Vec::new();

    let mut triplet = PrfCounts::default();
    for sentence in gold {
        let pred = predictions.get(&sentence.id).unwrap_or(&EMPTY);
        let gold_keys: Vec<TripletKey> = sentence.gold.iter().map(TripletKey::from).collect();
        triplet.absorb(&match_counts(pred, &gold_keys));
    }

    let (aspect_terms, opinion_terms) = breakdown_by_length(predictions, gold)?;
    let by_triplet_count = breakdown_by_triplet_count(predictions, gold)?;

    Ok(EvalReport {
        precision: triplet.precision(),
        recall: triplet.recall(),
        f1: triplet.f1(),
        triplet,
        aspect_terms,
        opinion_terms,
        by_triplet_count,
    })
}

/// Term-level extraction scores bucketed by token length, separately for
/// aspect terms and opinion terms. Terms are de-duplicated per sentence.
pub fn breakdown_by_length(
    predictions: &Predictions,
    gold: &[Sentence],
) -> Result<(LengthBreakdown, LengthBreakdown)> {
    check_known_ids(predictions, gold)?;
    static EMPTY: Vec<TripletKey> = Vec::new();

    let mut aspect = LengthBreakdown::default();
    let mut opinion = LengthBreakdown::default();

    for sentence in gold {
        let pred = predictions.get(&sentence.id).unwrap_or(&EMPTY);
        for (breakdown, pick) in [
            (&mut aspect, &(|k: &TripletKey| k.aspect) as &dyn Fn(&TripletKey) -> Span),
            (&mut opinion, &|k: &TripletKey| k.opinion),
        ] {
            let gold_terms: HashSet<Span> =
                sentence.gold.iter().map(|t| pick(&TripletKey::from(t))).collect();
            let pred_terms: HashSet<Span> = pred.iter().map(pick).collect();
            for term in gold_terms.union(&pred_terms) {
                let in_gold = gold_terms.contains(term);
                let in_pred = pred_terms.contains(term);
                let counts = PrfCounts {
                    predicted: in_pred as usize,
                    gold: in_gold as usize,
                    correct: (in_gold && in_pred) as usize,
                };
                breakdown
                    .by_length
                    .entry(term.len())
                    .or_default()
                    .absorb(&counts);
                if term.len() >= 4 {
                    breakdown.four_plus.absorb(&counts);
                }
            }
        }
    }
    Ok((aspect, opinion))
}

/// Micro triplet scores within sentence subclasses of 1, 2, 3, 4, and five or
/// more gold triplets. Sentences without gold triplets join no bucket; empty
/// buckets are absent from the map.
pub fn breakdown_by_triplet_count(
    predictions: &Predictions,
    gold: &[Sentence],
) -> Result<BTreeMap<CountBucket, PrfCounts>> {
    check_known_ids(predictions, gold)?;
    static EMPTY: Vec<TripletKey> = Vec::new();

    let mut buckets: BTreeMap<CountBucket, PrfCounts> = BTreeMap::new();
    for sentence in gold {
        let Some(bucket) = CountBucket::of(sentence.gold.len()) else {
            continue;
        };
        let pred = predictions.get(&sentence.id).unwrap_or(&EMPTY);
        let gold_keys: Vec<TripletKey> = sentence.gold.iter().map(TripletKey::from).collect();
        buckets
            .entry(bucket)
            .or_default()
            .absorb(&match_counts(pred, &gold_keys));
    }
    Ok(buckets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(aspect: (usize, usize), opinion: (usize, usize), sentiment: Sentiment) -> TripletKey {
        TripletKey {
            aspect: Span::new(aspect.0, aspect.1),
            opinion: Span::new(opinion.0, opinion.1),
            sentiment,
        }
    }

    fn sentence(id: &str, n: usize, gold: Vec<TripletKey>) -> Sentence {
        Sentence {
            id: id.to_string(),
            tokens: (0..n).map(|i| format!("t{i}")).collect(),
            gold: gold
                .into_iter()
                .map(|k| GoldTriplet {
                    aspect: k.aspect.token_indices().collect(),
                    opinion: k.opinion.token_indices().collect(),
                    sentiment: k.sentiment,
                })
                .collect(),
        }
    }

    #[test]
    fn half_right_gives_half_scores() {
        let t1 = key((0, 0), (2, 2), Sentiment::Positive);
        let t2 = key((4, 4), (6, 6), Sentiment::Negative);
        let t3 = key((1, 1), (3, 3), Sentiment::Neutral);
        let gold = vec![sentence("s1", 8, vec![t1, t2])];
        let mut predictions = Predictions::new();
        predictions.insert("s1".into(), vec![t1, t3]);
        let report = score(&predictions, &gold).unwrap();
        assert_eq!(report.precision, 0.5);
        assert_eq!(report.recall, 0.5);
        assert_eq!(report.f1, 0.5);
    }

    #[test]
    fn identical_sets_score_one() {
        let t1 = key((0, 1), (3, 3), Sentiment::Positive);
        let t2 = key((5, 5), (7, 8), Sentiment::Negative);
        let gold = vec![sentence("s1", 9, vec![t1]), sentence("s2", 9, vec![t2])];
        let mut predictions = Predictions::new();
        predictions.insert("s1".into(), vec![t1]);
        predictions.insert("s2".into(), vec![t2]);
        let report = score(&predictions, &gold).unwrap();
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.triplet.correct, 2);
    }

    #[test]
    fn sentiment_mismatch_is_not_a_match() {
        let gold = vec![sentence("s1", 4, vec![key((0, 0), (2, 2), Sentiment::Positive)])];
        let mut predictions = Predictions::new();
        predictions.insert("s1".into(), vec![key((0, 0), (2, 2), Sentiment::Negative)]);
        let report = score(&predictions, &gold).unwrap();
        assert_eq!(report.triplet.correct, 0);
    }

    #[test]
    fn unknown_prediction_id_is_an_error() {
        let gold = vec![sentence("s1", 4, vec![])];
        let mut predictions = Predictions::new();
        predictions.insert("mystery".into(), vec![]);
        assert!(matches!(score(&predictions, &gold), Err(Error::Eval(_))));
    }

    #[test]
    fn missing_prediction_entry_counts_as_no_predictions() {
        let gold = vec![sentence("s1", 4, vec![key((0, 0), (1, 1), Sentiment::Neutral)])];
        let report = score(&Predictions::new(), &gold).unwrap();
        assert_eq!(report.triplet.predicted, 0);
        assert_eq!(report.recall, 0.0);
        assert_eq!(report.f1, 0.0);
    }

    #[test]
    fn duplicate_predictions_match_at_most_once() {
        let t = key((0, 0), (2, 2), Sentiment::Positive);
        let gold = vec![sentence("s1", 4, vec![t])];
        let mut predictions = Predictions::new();
        predictions.insert("s1".into(), vec![t, t]);
        let report = score(&predictions, &gold).unwrap();
        assert_eq!(report.triplet.correct, 1);
        assert_eq!(report.triplet.predicted, 2);
    }

    #[test]
    fn length_breakdown_buckets_by_term_length() {
        let t = key((1, 2), (4, 4), Sentiment::Positive);
        let gold = vec![sentence("s1", 6, vec![t])];
        let mut predictions = Predictions::new();
        predictions.insert("s1".into(), vec![t]);
        let (aspect, opinion) = breakdown_by_length(&predictions, &gold).unwrap();
        assert_eq!(aspect.by_length[&2].f1(), 1.0);
        assert_eq!(opinion.by_length[&1].f1(), 1.0);
        assert!(aspect.by_length.get(&1).is_none());
    }

    #[test]
    fn empty_length_bucket_has_zero_precision_and_recall() {
        let gold = vec![sentence(
            "s1",
            6,
            vec![key((0, 0), (2, 2), Sentiment::Positive)],
        )];
        let (aspect, _) = breakdown_by_length(&Predictions::new(), &gold).unwrap();
        let bucket = &aspect.by_length[&1];
        assert_eq!(bucket.precision(), 0.0);
        assert_eq!(bucket.recall(), 0.0);
    }

    #[test]
    fn four_plus_rollup_accumulates_long_terms() {
        let long = key((0, 4), (6, 6), Sentiment::Negative); // 5-token aspect
        let gold = vec![sentence("s1", 8, vec![long])];
        let mut predictions = Predictions::new();
        predictions.insert("s1".into(), vec![long]);
        let (aspect, _) = breakdown_by_length(&predictions, &gold).unwrap();
        assert_eq!(aspect.four_plus.correct, 1);
        assert_eq!(aspect.by_length[&5].correct, 1);
    }

    #[test]
    fn shared_term_across_triplets_is_one_term() {
        // Two triplets share the aspect; term-level sets count it once.
        let t1 = key((0, 0), (2, 2), Sentiment::Positive);
        let t2 = key((0, 0), (4, 4), Sentiment::Negative);
        let gold = vec![sentence("s1", 6, vec![t1, t2])];
        let mut predictions = Predictions::new();
        predictions.insert("s1".into(), vec![t1]);
        let (aspect, _) = breakdown_by_length(&predictions, &gold).unwrap();
        assert_eq!(aspect.by_length[&1].gold, 1);
        assert_eq!(aspect.by_length[&1].predicted, 1);
        assert_eq!(aspect.by_length[&1].correct, 1);
    }

    #[test]
    fn count_buckets_follow_gold_triplet_counts() {
        let t = |i: usize| key((i, i), (i + 1, i + 1), Sentiment::Positive);
        let gold = vec![
            sentence("s1", 12, vec![t(0)]),
            sentence("s2", 12, vec![t(0), t(2)]),
            sentence("s3", 12, vec![t(0), t(2), t(4), t(6), t(8)]),
            sentence("s4", 12, vec![]),
        ];
        let mut predictions = Predictions::new();
        predictions.insert("s1".into(), vec![t(0)]);
        predictions.insert("s2".into(), vec![t(0)]);
        let buckets = breakdown_by_triplet_count(&predictions, &gold).unwrap();
        assert_eq!(buckets[&CountBucket::One].f1(), 1.0);
        assert!(buckets[&CountBucket::Two].f1() > 0.0);
        assert!(buckets[&CountBucket::Two].f1() < 1.0);
        assert!(buckets.contains_key(&CountBucket::FivePlus));
        // Empty buckets are absent, and 0-gold sentences join no bucket.
        assert!(!buckets.contains_key(&CountBucket::Three));
        assert!(!buckets.contains_key(&CountBucket::Four));
        assert_eq!(buckets.len(), 3);
    }

    #[test]
    fn all_single_triplet_sentences_make_all_equal_bucket_one() {
        let t = key((0, 0), (2, 2), Sentiment::Positive);
        let gold = vec![sentence("s1", 4, vec![t]), sentence("s2", 4, vec![t])];
        let mut predictions = Predictions::new();
        predictions.insert("s1".into(), vec![t]);
        let report = score(&predictions, &gold).unwrap();
        let buckets = &report.by_triplet_count;
        assert_eq!(buckets.len(), 1);
        let one = &buckets[&CountBucket::One];
        assert_eq!(one.predicted, report.triplet.predicted);
        assert_eq!(one.gold, report.triplet.gold);
        assert_eq!(one.correct, report.triplet.correct);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_keys(n: usize) -> impl Strategy<Value = Vec<TripletKey>> {
            proptest::collection::vec(
                (0usize..6, 0usize..2, 0usize..6, 0usize..2, 0usize..3).prop_map(
                    move |(a0, alen, o0, olen, pol)| {
                        key(
                            (a0, (a0 + alen).min(7)),
                            (o0, (o0 + olen).min(7)),
                            match pol {
                                0 => Sentiment::Positive,
                                1 => Sentiment::Neutral,
                                _ => Sentiment::Negative,
                            },
                        )
                    },
                ),
                0..n,
            )
        }

        proptest! {
            #[test]
            fn scoring_is_invariant_to_triplet_order(
                gold_keys in arb_keys(5),
                pred_keys in arb_keys(5),
                seed in 0u64..100,
            ) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;

                let mut gold_dedup = gold_keys.clone();
                gold_dedup.sort();
                gold_dedup.dedup();
                let gold = vec![sentence("s1", 8, gold_dedup)];
                let mut predictions = Predictions::new();
                predictions.insert("s1".into(), pred_keys.clone());
                let a = score(&predictions, &gold).unwrap();

                let mut shuffled = pred_keys;
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                predictions.insert("s1".into(), shuffled);
                let b = score(&predictions, &gold).unwrap();
                prop_assert_eq!(a.triplet, b.triplet);
            }

            #[test]
            fn adding_a_correct_prediction_never_hurts(
                gold_keys in arb_keys(5),
                pred_keys in arb_keys(4),
            ) {
                let mut gold_dedup = gold_keys;
                gold_dedup.sort();
                gold_dedup.dedup();
                prop_assume!(!gold_dedup.is_empty());
                // A gold triplet not yet predicted.
                let missing: Vec<TripletKey> = gold_dedup
                    .iter()
                    .filter(|g| !pred_keys.contains(g))
                    .copied()
                    .collect();
                prop_assume!(!missing.is_empty());

                let gold = vec![sentence("s1", 8, gold_dedup)];
                let mut predictions = Predictions::new();
                predictions.insert("s1".into(), pred_keys.clone());
                let before = score(&predictions, &gold).unwrap();

                let mut extended = pred_keys.clone();
                extended.push(missing[0]);
                predictions.insert("s1".into(), extended);
                let after = score(&predictions, &gold).unwrap();

                prop_assert!(after.precision >= before.precision - 1e-12);
                prop_assert!(after.recall >= before.recall - 1e-12);
                prop_assert!(after.f1 >= before.f1 - 1e-12);

                // And an incorrect prediction never raises recall.
                let bogus = key((7, 7), (7, 7), Sentiment::Neutral);
                prop_assume!(!gold[0].gold.iter().any(|g| TripletKey::from(g) == bogus));
                let mut worse = pred_keys;
                worse.push(bogus);
                predictions.insert("s1".into(), worse);
                let noisy = score(&predictions, &gold).unwrap();
                prop_assert!(noisy.recall <= before.recall + 1e-12);
            }
        }
    }
}
