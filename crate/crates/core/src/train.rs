//! Training loop: seeded batching, the combined objective, decoupled-decay
//! adaptive-moment optimization with separate encoder and head rates, and
//! dev-F1 model selection with reloadable checkpoints.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::Sentence;
use crate::encoder::{Mode, Vocab};
use crate::error::{Error, Result};
use crate::eval::{score, Predictions, TripletKey};
use crate::model::Model;
use crate::params::{Binding, ParamStore};
use crate::tape::Tape;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adaptive moments with decoupled weight decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub weight_decay: f64,
    step: usize,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> AdamW {
        AdamW {
            weight_decay,
            step: 0,
            m: (0..store.len())
                .map(|i| Array2::zeros(store.value(i).raw_dim()))
                .collect(),
            v: (0..store.len())
                .map(|i| Array2::zeros(store.value(i).raw_dim()))
                .collect(),
        }
    }

    /// One update over all parameters; `lr_for` maps a parameter name to its
    /// learning rate (encoder fine-tune rate vs head rate).
    pub fn step(&mut self, store: &mut ParamStore, lr_for: impl Fn(&str) -> f64) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for idx in 0..store.len() {
            let lr = lr_for(store.name(idx));
            let grad = store.grad(idx).clone();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            m.zip_mut_with(&grad, |mi, &g| *mi = BETA1 * *mi + (1.0 - BETA1) * g);
            v.zip_mut_with(&grad, |vi, &g| *vi = BETA2 * *vi + (1.0 - BETA2) * g * g);
            let decay = self.weight_decay;
            let value = store.value_mut(idx);
            for ((p, &mi), &vi) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + decay * *p);
            }
        }
    }
}

/// One line of the per-epoch metric log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sentence loss components over the epoch.
    pub separation_loss: f64,
    pub a_to_o_loss: f64,
    pub o_to_a_loss: f64,
    pub total_loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
    pub is_best: bool,
}

/// Everything needed to reproduce eval-mode predictions bit-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_fingerprint: String,
    pub epoch: usize,
    pub dev_f1: f64,
    pub params: ParamStore,
    pub optimizer: AdamW,
    pub vocab: Option<Vocab>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path)?;
        let mut checkpoint: Checkpoint = serde_json::from_str(&text)?;
        checkpoint.params.rebuild_index();
        if let Some(vocab) = &mut checkpoint.vocab {
            vocab.rebuild_index();
        }
        Ok(checkpoint)
    }

    /// Rebuild the model this checkpoint was trained with.
    pub fn into_model(self, config: ExperimentConfig) -> Result<Model> {
        let expected = config.fingerprint();
        if self.config_fingerprint != expected {
            return Err(Error::Config(format!(
                "checkpoint was trained with config {}, current config is {}",
                &self.config_fingerprint[..12],
                &expected[..12]
            )));
        }
        Model::from_parts(config, self.params, self.vocab)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Triplet predictions for a set of sentences, keyed by sentence id.
pub fn predict_all(model: &Model, sentences: &[Sentence]) -> Result<Predictions> {
    let mut predictions = Predictions::new();
    for sentence in sentences {
        let triplets = model.predict_sentence(sentence)?;
        predictions.insert(
            sentence.id.clone(),
            triplets.iter().map(TripletKey::from).collect(),
        );
    }
    Ok(predictions)
}

/// Train on `train_set`, selecting the checkpoint with the best dev F1.
/// Per-epoch records report mean per-sentence loss components and the full
/// inference scores on the dev set.
pub fn train(
    config: &ExperimentConfig,
    train_set: &[Sentence],
    dev_set: &[Sentence],
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::init(config.clone(), train_set, &mut rng)?;
    let mut optimizer = AdamW::new(&model.store, config.train.weight_decay);
    let lr_for = {
        let encoder_lr = config.train.encoder_lr;
        let head_lr = config.train.head_lr;
        move |name: &str| {
            if name.starts_with("encoder.") {
                encoder_lr
            } else {
                head_lr
            }
        }
    };

    let fingerprint = config.fingerprint();
    let mut log = Vec::with_capacity(config.train.epochs);
    let mut best: Option<Checkpoint> = None;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.train.epochs {
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for (batch_no, batch) in order.chunks(config.train.batch_size).enumerate() {
            model.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let sentence = &train_set[i];
                let mut tape = Tape::new();
                let mut binding = Binding::new();
                let graph =
                    model.sentence_graph(&mut tape, &mut binding, sentence, Mode::Train, &mut rng)?;
                let separation = graph.separation_value(&tape);
                let a_to_o = graph
                    .direction_value(&tape, crate::decoder::Direction::AspectToOpinion);
                let o_to_a = graph
                    .direction_value(&tape, crate::decoder::Direction::OpinionToAspect);
                let total = graph.total_value(&tape);
                if !total.is_finite() {
                    return Err(Error::TrainDiverged {
                        epoch,
                        batch: batch_no,
                        separation,
                        a_to_o,
                        o_to_a,
                    });
                }
                sums.0 += separation;
                sums.1 += a_to_o;
                sums.2 += o_to_a;
                sums.3 += total;
                let grads = tape.backward(graph.total);
                binding.harvest(&tape, &grads, &mut model.store, scale);
            }
            optimizer.step(&mut model.store, &lr_for);
        }

        let n = train_set.len() as f64;
        let dev_predictions = predict_all(&model, dev_set)?;
        let report = score(&dev_predictions, dev_set)?;
        let is_best = best
            .as_ref()
            .map_or(true, |b| report.f1 > b.dev_f1);
        if is_best {
            best = Some(Checkpoint {
                config_fingerprint: fingerprint.clone(),
                epoch,
                dev_f1: report.f1,
                params: model.store.clone(),
                optimizer: optimizer.clone(),
                vocab: model.encoder.vocab().cloned(),
            });
        }
        let record = EpochRecord {
            epoch,
            separation_loss: sums.0 / n,
            a_to_o_loss: sums.1 / n,
            o_to_a_loss: sums.2 / n,
            total_loss: sums.3 / n,
            dev_precision: report.precision,
            dev_recall: report.recall,
            dev_f1: report.f1,
            is_best,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} (sep {:.4}, a->o {:.4}, o->a {:.4}), dev F1 {:.4}",
            record.total_loss,
            record.separation_loss,
            record.a_to_o_loss,
            record.o_to_a_loss,
            record.dev_f1
        );
        log.push(record);

        if let Some(target) = config.train.stop_at_dev_f1 {
            if report.f1 >= target {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_line;

    fn tiny_corpus() -> Vec<Sentence> {
        [
            "the keyboard is great####[([1], [3], 'POS')]",
            "awful battery life here####[([1, 2], [0], 'NEG')]",
            "screen looks average honestly####[([0], [2], 'NEU')]",
            "great speakers and bad mic####[([1], [0], 'POS'), ([4], [3], 'NEG')]",
        ]
        .iter()
        .enumerate()
        .map(|(i, line)| parse_line(line, format!("s{i}")).unwrap())
        .collect()
    }

    fn tiny_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.seed = 11;
        config.encoder.dim = 12;
        config.encoder.dropout = 0.0;
        config.decoder.dropout = 0.0;
        config.lattice.max_span_length = 3;
        config.train.batch_size = 2;
        config.train.epochs = 3;
        config.train.encoder_lr = 1e-2;
        config.train.head_lr = 1e-2;
        config
    }

    #[test]
    fn identical_seeds_give_identical_loss_sequences() {
        let corpus = tiny_corpus();
        let config = tiny_config();
        let a = train(&config, &corpus, &corpus).unwrap();
        let b = train(&config, &corpus, &corpus).unwrap();
        let losses_a: Vec<f64> = a.log.iter().map(|r| r.total_loss).collect();
        let losses_b: Vec<f64> = b.log.iter().map(|r| r.total_loss).collect();
        assert_eq!(losses_a, losses_b);
        assert_eq!(a.best.epoch, b.best.epoch);
    }

    #[test]
    fn one_epoch_yields_one_record_and_checkpoint_from_it() {
        let corpus = tiny_corpus();
        let mut config = tiny_config();
        config.train.epochs = 1;
        let outcome = train(&config, &corpus, &corpus).unwrap();
        assert_eq!(outcome.log.len(), 1);
        assert_eq!(outcome.best.epoch, 1);
    }

    #[test]
    fn best_dev_f1_is_the_log_maximum() {
        let corpus = tiny_corpus();
        let mut config = tiny_config();
        config.train.epochs = 5;
        let outcome = train(&config, &corpus, &corpus).unwrap();
        let max = outcome
            .log
            .iter()
            .map(|r| r.dev_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(outcome.best.dev_f1, max);
        assert!(outcome.log.iter().any(|r| r.is_best));
    }

    #[test]
    fn logged_components_sum_to_the_total() {
        let corpus = tiny_corpus();
        let outcome = train(&tiny_config(), &corpus, &corpus).unwrap();
        for record in &outcome.log {
            let sum = record.separation_loss + record.a_to_o_loss + record.o_to_a_loss;
            assert!((sum - record.total_loss).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip_reproduces_dev_f1_exactly() {
        let corpus = tiny_corpus();
        let config = tiny_config();
        let outcome = train(&config, &corpus, &corpus).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        outcome.best.save(&path).unwrap();
        let restored = Checkpoint::load(&path).unwrap();
        assert_eq!(restored.epoch, outcome.best.epoch);

        let model = restored.into_model(config.clone()).unwrap();
        let predictions = predict_all(&model, &corpus).unwrap();
        let report = score(&predictions, &corpus).unwrap();
        assert_eq!(report.f1, outcome.best.dev_f1);
    }

    #[test]
    fn checkpoint_rejects_mismatched_config() {
        let corpus = tiny_corpus();
        let config = tiny_config();
        let outcome = train(&config, &corpus, &corpus).unwrap();
        let mut other = config.clone();
        other.seed = 999;
        assert!(matches!(
            outcome.best.into_model(other),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn adamw_decays_weights_without_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        store.insert_glorot("w", 2, 2, &mut rng);
        let before = store.value(0).clone();
        let mut opt = AdamW::new(&store, 0.1);
        store.zero_grads();
        opt.step(&mut store, |_| 0.5);
        let after = store.value(0);
        for (b, a) in before.iter().zip(after.iter()) {
            assert!((a - (b - 0.5 * 0.1 * b)).abs() < 1e-12);
        }
    }

    #[test]
    fn training_loss_decreases_on_a_memorizable_corpus() {
        let corpus = tiny_corpus();
        let mut config = tiny_config();
        config.train.epochs = 40;
        let outcome = train(&config, &corpus, &corpus).unwrap();
        let first = outcome.log.first().unwrap().total_loss;
        let last = outcome.log.last().unwrap().total_loss;
        assert!(
            last < first * 0.8,
            "loss did not drop: first {first}, last {last}"
        );
    }

    #[test]
    fn stop_at_dev_f1_ends_training_early() {
        let corpus = tiny_corpus();
        let mut config = tiny_config();
        config.train.epochs = 200;
        config.train.stop_at_dev_f1 = Some(0.0); // any F1 qualifies
        let outcome = train(&config, &corpus, &corpus).unwrap();
        assert_eq!(outcome.log.len(), 1);
    }
}
