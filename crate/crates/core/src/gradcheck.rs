//! Central finite differences, relative-error helpers, and the full-model
//! gradient audit behind the `grad-check` command.

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::data::parse_line;
use crate::encoder::Mode;
use crate::error::Result;
use crate::lattice::{build_lattice, Pooling, SpanLengthSemantics};
use crate::model::Model;
use crate::params::Binding;
use crate::separation::{separation_grad_check, SeparationConfig, SeparationVariant};
use crate::tape::Tape;

/// Central finite differences of a scalar function at `x` with step `h`.
pub fn central_difference(
    x: &Array2<f64>,
    h: f64,
    mut f: impl FnMut(&Array2<f64>) -> f64,
) -> Array2<f64> {
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let plus = f(&probe);
        probe[idx] = orig - h;
        let minus = f(&probe);
        probe[idx] = orig;
        grad[idx] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Relative error with a floor that absorbs finite-difference noise on
/// near-zero gradients.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Maximum element-wise [`rel_error`] between two same-shape matrices.
pub fn max_rel_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    assert_eq!(analytic.dim(), numeric.dim());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

/// Maximum relative errors between analytic and finite-difference gradients
/// for the main loss surfaces.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Separation loss, KL variant, with respect to span representations.
    pub separation_kl: f64,
    /// Separation loss, JS variant.
    pub separation_js: f64,
    /// Both direction losses with respect to every model parameter.
    pub direction_losses: f64,
    /// The combined objective with respect to every model parameter.
    pub total_loss: f64,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        self.separation_kl
            .max(self.separation_js)
            .max(self.direction_losses)
            .max(self.total_loss)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max() <= tolerance
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "separation_kl_max_rel_err {:.3e}", self.separation_kl)?;
        writeln!(f, "separation_js_max_rel_err {:.3e}", self.separation_js)?;
        writeln!(f, "direction_losses_max_rel_err {:.3e}", self.direction_losses)?;
        write!(f, "total_loss_max_rel_err {:.3e}", self.total_loss)
    }
}

fn grad_check_sentences() -> Vec<crate::data::Sentence> {
    [
        "the hot dogs are top notch####[([1, 2], [4, 5], 'POS')]",
        "bad screen but great keyboard####[([1], [0], 'NEG'), ([4], [3], 'POS')]",
        "service was average####[([0], [2], 'NEU')]",
    ]
    .iter()
    .enumerate()
    .map(|(i, line)| parse_line(line, format!("g{i}")).unwrap())
    .collect()
}

/// Audit analytic gradients against central finite differences on random
/// lattices (separation loss) and a small end-to-end model (direction and
/// total losses, every parameter).
pub fn run_grad_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Separation loss over random lattices of 5 to 20 spans.
    let mut separation_kl = 0.0f64;
    let mut separation_js = 0.0f64;
    for &(n, cap) in &[(3, 2), (5, 2), (5, 4), (7, 2), (6, 3)] {
        let enc = Array2::from_shape_fn((n, 5), |_| rng.gen_range(-1.0..1.0));
        let lattice = build_lattice(&enc, cap, Pooling::Max, SpanLengthSemantics::TokenLength);
        assert!((5..=20).contains(&lattice.num_spans()));
        for (slot, variant) in [
            (&mut separation_kl, SeparationVariant::Kl),
            (&mut separation_js, SeparationVariant::Js),
        ] {
            let config = SeparationConfig {
                variant,
                epsilon: 1e-8,
            };
            let err = separation_grad_check(&lattice, &config)?;
            *slot = slot.max(err);
        }
    }

    // End-to-end model losses with respect to every parameter.
    let sentences = grad_check_sentences();
    let mut config = ExperimentConfig::default();
    config.seed = seed;
    config.encoder.dim = 6;
    config.encoder.dropout = 0.0;
    config.decoder.dropout = 0.0;
    config.lattice.max_span_length = 3;
    let mut model = Model::init(config, &sentences, &mut rng)?;

    let direction_losses = model_loss_check(&mut model, &sentences, false)?;
    let total_loss = model_loss_check(&mut model, &sentences, true)?;

    Ok(GradCheckReport {
        separation_kl,
        separation_js,
        direction_losses,
        total_loss,
    })
}

/// Max relative error of the summed sentence losses over every parameter.
/// With `include_separation` false, only the two direction losses are
/// compared (the separation term is excluded from both routes).
fn model_loss_check(
    model: &mut Model,
    sentences: &[crate::data::Sentence],
    include_separation: bool,
) -> Result<f64> {
    let eval_loss = |model: &Model| -> f64 {
        let mut loss = 0.0;
        for sentence in sentences {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let graph = model
                .sentence_graph(&mut tape, &mut binding, sentence, Mode::Eval, &mut rng)
                .expect("forward pass");
            loss += graph.total_value(&tape);
            if !include_separation {
                loss -= graph.separation_value(&tape);
            }
        }
        loss
    };

    // Analytic gradients accumulated over the same sentences.
    model.store.zero_grads();
    for sentence in sentences {
        let mut tape = Tape::new();
        let mut binding = Binding::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let graph = model.sentence_graph(&mut tape, &mut binding, sentence, Mode::Eval, &mut rng)?;
        let root = if include_separation {
            graph.total
        } else {
            match (graph.a_to_o, graph.o_to_a) {
                (Some(a), Some(b)) => tape.add(a, b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => graph.separation, // zero-valued stand-in
            }
        };
        let grads = tape.backward(root);
        binding.harvest(&tape, &grads, &mut model.store, 1.0);
    }
    let analytic: Vec<Array2<f64>> = (0..model.store.len())
        .map(|i| model.store.grad(i).clone())
        .collect();

    let mut worst = 0.0f64;
    for idx in 0..model.store.len() {
        let original = model.store.value(idx).clone();
        let numeric = central_difference(&original, 1e-5, |perturbed| {
            model.store.value_mut(idx).assign(perturbed);
            eval_loss(model)
        });
        model.store.value_mut(idx).assign(&original);
        worst = worst.max(max_rel_error(&analytic[idx], &numeric));
    }
    Ok(worst)
}
