//! Similar-span separation loss.
//!
//! Spans that share tokens get pushed apart: a per-span divergence D_i is
//! accumulated over the token-overlap neighbor set, and each span contributes
//! `ln(1 + 2 / (D_i + eps))`, so small divergence means large loss. Spans
//! with no neighbors contribute nothing.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::{central_difference, max_rel_error};
use crate::lattice::SpanLattice;
use crate::tape::{NodeId, Tape};

/// Divergence used between neighboring span representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationVariant {
    /// Symmetric KL between softmax-normalized representations.
    #[default]
    Kl,
    /// Jensen-Shannon, doubled to mirror the symmetric KL sum.
    Js,
    /// Euclidean distance between raw representations.
    Euclidean,
    /// 1 + cosine similarity between raw representations.
    Cosine,
    /// Disabled: the loss is identically zero.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparationConfig {
    pub variant: SeparationVariant,
    /// Added to the divergence before the reciprocal; keeps duplicate
    /// representations (divergence zero) finite.
    pub epsilon: f64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        SeparationConfig {
            variant: SeparationVariant::Kl,
            epsilon: 1e-8,
        }
    }
}

/// Ordered neighbor pairs (i, j) with j in G_i.
fn neighbor_pairs(neighbors: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let mut is = Vec::new();
    let mut js = Vec::new();
    for (i, set) in neighbors.iter().enumerate() {
        for &j in set {
            is.push(i);
            js.push(j);
        }
    }
    (is, js)
}

/// Record the separation loss on the tape. `reps` is the m-by-d span
/// representation node; `neighbors` the lattice's overlap sets.
pub fn separation_loss_node(
    tape: &mut Tape,
    reps: NodeId,
    neighbors: &[Vec<usize>],
    config: &SeparationConfig,
) -> NodeId {
    assert!(config.epsilon > 0.0, "epsilon must be positive");
    let m = neighbors.len();
    if matches!(config.variant, SeparationVariant::None) || m == 0 {
        return tape.scalar_leaf(0.0);
    }
    let (is, js) = neighbor_pairs(neighbors);
    if is.is_empty() {
        return tape.scalar_leaf(0.0);
    }

    // Per ordered pair, a divergence contribution; scatter-added into D_i.
    let pair_div = match config.variant {
        SeparationVariant::Kl => {
            let p = tape.softmax_rows(reps);
            let logp = tape.log_softmax_rows(reps);
            let pi = tape.gather_rows(p, is.clone());
            let pj = tape.gather_rows(p, js.clone());
            let li = tape.gather_rows(logp, is.clone());
            let lj = tape.gather_rows(logp, js);
            // KL(p_i || p_j) + KL(p_j || p_i)
            let diff = tape.sub(li, lj);
            let fwd_terms = tape.mul(pi, diff);
            let fwd = tape.sum_rows(fwd_terms);
            let neg_diff = tape.scale(diff, -1.0);
            let rev_terms = tape.mul(pj, neg_diff);
            let rev = tape.sum_rows(rev_terms);
            tape.add(fwd, rev)
        }
        SeparationVariant::Js => {
            let p = tape.softmax_rows(reps);
            let logp = tape.log_softmax_rows(reps);
            let pi = tape.gather_rows(p, is.clone());
            let pj = tape.gather_rows(p, js.clone());
            let li = tape.gather_rows(logp, is.clone());
            let lj = tape.gather_rows(logp, js);
            let sum = tape.add(pi, pj);
            let mid = tape.scale(sum, 0.5);
            let log_mid = tape.ln(mid);
            // 2 * JS(p_i, p_j) = KL(p_i || mid) + KL(p_j || mid)
            let di = tape.sub(li, log_mid);
            let dj = tape.sub(lj, log_mid);
            let ti = tape.mul(pi, di);
            let tj = tape.mul(pj, dj);
            let both = tape.add(ti, tj);
            tape.sum_rows(both)
        }
        SeparationVariant::Euclidean => {
            let gi = tape.gather_rows(reps, is.clone());
            let gj = tape.gather_rows(reps, js);
            let diff = tape.sub(gi, gj);
            let sq = tape.mul(diff, diff);
            let ssq = tape.sum_rows(sq);
            tape.sqrt(ssq)
        }
        SeparationVariant::Cosine => {
            let gi = tape.gather_rows(reps, is.clone());
            let gj = tape.gather_rows(reps, js);
            let prod = tape.mul(gi, gj);
            let dots = tape.sum_rows(prod);
            let gi_sq = tape.mul(gi, gi);
            let gj_sq = tape.mul(gj, gj);
            let ni_ssq = tape.sum_rows(gi_sq);
            let nj_ssq = tape.sum_rows(gj_sq);
            let ni = tape.sqrt(ni_ssq);
            let nj = tape.sqrt(nj_ssq);
            let denom = tape.mul(ni, nj);
            // Tiny guard: a zero-norm representation must not divide by zero.
            let denom = tape.add_const(denom, 1e-12);
            let inv = tape.recip(denom);
            let cos = tape.mul(dots, inv);
            tape.add_const(cos, 1.0)
        }
        SeparationVariant::None => unreachable!(),
    };

    let d_per_span = tape.scatter_add_rows(pair_div, is, m);

    // ln(1 + 2 / (D_i + eps)), masked so empty neighbor sets contribute zero.
    let shifted = tape.add_const(d_per_span, config.epsilon);
    let inv = tape.recip(shifted);
    let two_inv = tape.scale(inv, 2.0);
    let one_plus = tape.add_const(two_inv, 1.0);
    let terms = tape.ln(one_plus);
    let mask_vals = Array2::from_shape_fn((m, 1), |(i, _)| {
        if neighbors[i].is_empty() {
            0.0
        } else {
            1.0
        }
    });
    let mask = tape.leaf(mask_vals);
    let masked = tape.mul(terms, mask);
    tape.sum_all(masked)
}

/// Separation loss of a built lattice.
pub fn separation_loss(lattice: &SpanLattice, config: &SeparationConfig) -> Result<f64> {
    if lattice.reps.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "span representations".to_string(),
        });
    }
    let mut tape = Tape::new();
    let reps = tape.leaf(lattice.reps.clone());
    let loss = separation_loss_node(&mut tape, reps, &lattice.neighbors, config);
    Ok(tape.scalar(loss))
}

/// Analytic gradient of the loss with respect to the representations.
pub fn separation_loss_grad(
    lattice: &SpanLattice,
    config: &SeparationConfig,
) -> Result<(f64, Array2<f64>)> {
    if lattice.reps.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "span representations".to_string(),
        });
    }
    let mut tape = Tape::new();
    let reps = tape.leaf(lattice.reps.clone());
    let loss = separation_loss_node(&mut tape, reps, &lattice.neighbors, config);
    let grads = tape.backward(loss);
    Ok((tape.scalar(loss), grads.wrt(&tape, reps)))
}

/// Compare the analytic gradient against central finite differences and
/// return the maximum relative error over all representation coordinates.
pub fn separation_grad_check(lattice: &SpanLattice, config: &SeparationConfig) -> Result<f64> {
    let (_, analytic) = separation_loss_grad(lattice, config)?;
    let neighbors = lattice.neighbors.clone();
    let numeric = central_difference(&lattice.reps, 1e-5, |reps| {
        let mut tape = Tape::new();
        let node = tape.leaf(reps.clone());
        let loss = separation_loss_node(&mut tape, node, &neighbors, config);
        tape.scalar(loss)
    });
    Ok(max_rel_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, Pooling, Span, SpanLengthSemantics};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_span_lattice(rep_a: Vec<f64>, rep_b: Vec<f64>) -> SpanLattice {
        let d = rep_a.len();
        let mut reps = Array2::zeros((2, d));
        reps.row_mut(0).assign(&ndarray::Array1::from(rep_a));
        reps.row_mut(1).assign(&ndarray::Array1::from(rep_b));
        SpanLattice {
            spans: vec![Span::new(0, 0), Span::new(0, 1)],
            reps,
            neighbors: vec![vec![1], vec![0]],
        }
    }

    fn random_lattice(rng: &mut ChaCha8Rng, n: usize, cap: usize, d: usize) -> SpanLattice {
        let enc = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        build_lattice(&enc, cap, Pooling::Max, SpanLengthSemantics::TokenLength)
    }

    #[test]
    fn identical_neighbor_pair_hits_the_epsilon_floor() {
        let lattice = two_span_lattice(vec![0.3, -0.7, 1.1], vec![0.3, -0.7, 1.1]);
        let config = SeparationConfig {
            variant: SeparationVariant::Kl,
            epsilon: 1e-8,
        };
        let loss = separation_loss(&lattice, &config).unwrap();
        let expected = 2.0 * (1.0 + 2.0 / 1e-8f64).ln();
        assert!((loss - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn symmetric_kl_of_09_01_distributions() {
        // softmax(g) = (0.9, 0.1) and (0.1, 0.9); symmetric KL = 1.6 ln 9.
        let g1 = vec![0.9f64.ln(), 0.1f64.ln()];
        let g2 = vec![0.1f64.ln(), 0.9f64.ln()];
        let lattice = two_span_lattice(g1, g2);
        let config = SeparationConfig::default();
        let loss = separation_loss(&lattice, &config).unwrap();
        let d = 1.6 * 9.0f64.ln();
        assert!((d - 3.5156).abs() < 1e-3);
        let per_span = (1.0 + 2.0 / (d + config.epsilon)).ln();
        assert!((per_span - 0.4503).abs() < 1e-4);
        assert!((loss - 2.0 * per_span).abs() < 1e-10);
    }

    #[test]
    fn disjoint_spans_contribute_zero() {
        // cap = 1: all single-token spans, no overlaps.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lattice = random_lattice(&mut rng, 6, 1, 4);
        assert!(lattice.neighbors.iter().all(|g| g.is_empty()));
        for variant in [
            SeparationVariant::Kl,
            SeparationVariant::Js,
            SeparationVariant::Euclidean,
            SeparationVariant::Cosine,
        ] {
            let config = SeparationConfig {
                variant,
                epsilon: 1e-8,
            };
            assert_eq!(separation_loss(&lattice, &config).unwrap(), 0.0);
        }
    }

    #[test]
    fn variant_none_is_always_zero_with_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lattice = random_lattice(&mut rng, 5, 3, 4);
        let config = SeparationConfig {
            variant: SeparationVariant::None,
            epsilon: 1e-8,
        };
        let (loss, grad) = separation_loss_grad(&lattice, &config).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_is_nonnegative_for_all_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let lattice = random_lattice(&mut rng, 7, 3, 5);
            for variant in [
                SeparationVariant::Kl,
                SeparationVariant::Js,
                SeparationVariant::Euclidean,
                SeparationVariant::Cosine,
            ] {
                let config = SeparationConfig {
                    variant,
                    epsilon: 1e-8,
                };
                let loss = separation_loss(&lattice, &config).unwrap();
                assert!(loss >= 0.0, "{variant:?} gave {loss}");
            }
        }
    }

    #[test]
    fn loss_decreases_as_divergence_grows() {
        // Two mutually-neighboring spans pulled apart along one axis.
        let mut last = f64::INFINITY;
        for step in 1..=8 {
            let a = step as f64 * 0.4;
            let lattice = two_span_lattice(vec![a, -a], vec![-a, a]);
            let loss = separation_loss(&lattice, &SeparationConfig::default()).unwrap();
            assert!(loss < last, "loss must strictly decrease, step {step}");
            last = loss;
        }
    }

    #[test]
    fn kl_and_js_are_invariant_to_constant_shift_of_one_rep() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lattice = random_lattice(&mut rng, 5, 3, 4);
        for variant in [SeparationVariant::Kl, SeparationVariant::Js] {
            let config = SeparationConfig {
                variant,
                epsilon: 1e-8,
            };
            let base = separation_loss(&lattice, &config).unwrap();
            let mut shifted = lattice.clone();
            shifted
                .reps
                .row_mut(2)
                .mapv_inplace(|x| x + 3.7);
            let after = separation_loss(&shifted, &config).unwrap();
            assert!((base - after).abs() < 1e-9, "{variant:?}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lattice = random_lattice(&mut rng, 5, 3, 4);
        for variant in [
            SeparationVariant::Kl,
            SeparationVariant::Js,
            SeparationVariant::Euclidean,
            SeparationVariant::Cosine,
        ] {
            let config = SeparationConfig {
                variant,
                epsilon: 1e-8,
            };
            let err = separation_grad_check(&lattice, &config).unwrap();
            assert!(err <= 1e-4, "{variant:?}: max rel error {err}");
        }
    }

    #[test]
    fn euclidean_with_equal_reps_stays_finite() {
        let lattice = two_span_lattice(vec![0.5, 0.5, 0.5], vec![0.5, 0.5, 0.5]);
        let config = SeparationConfig {
            variant: SeparationVariant::Euclidean,
            epsilon: 1e-8,
        };
        let (loss, grad) = separation_loss_grad(&lattice, &config).unwrap();
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn non_finite_representations_are_rejected() {
        let mut lattice = two_span_lattice(vec![0.0, 0.0], vec![1.0, 1.0]);
        lattice.reps[[0, 0]] = f64::NAN;
        let err = separation_loss(&lattice, &SeparationConfig::default());
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }
}
