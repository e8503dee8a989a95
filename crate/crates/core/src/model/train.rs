use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::synth::SynthStream;
use super::{ModelConfig, ModelError};
use crate::codec::{TokenDictionary, TokenId};
use crate::imaging::{augment, resize_to_height, AugmentParams, PageImage};
use crate::metrics::edit_distance;

/// A deskewed page and its target sequence (ending with EOT).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: PageImage,
    pub target: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Curriculum {
    /// Synthetic fraction of the first epoch.
    pub initial: f64,
    pub minimum: f64,
    pub decay_epochs: usize,
}

impl Curriculum {
    pub fn none() -> Self {
        Self {
            initial: 0.0,
            minimum: 0.0,
            decay_epochs: 1,
        }
    }
}

/// Synthetic fraction of epoch `epoch`: `max(s_min, s0 − e·(s0 − s_min)/decay)`.
pub fn curriculum_fraction(c: &Curriculum, epoch: usize) -> f64 {
    let decay = c.decay_epochs.max(1) as f64;
    (c.initial - epoch as f64 * (c.initial - c.minimum) / decay).max(c.minimum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// Fixed-rate gradient descent.
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub curriculum: Curriculum,
    pub seed: u64,
    /// Applied to real pages only.
    pub augment: Option<AugmentParams>,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            max_epochs: 40,
            batch_size: 4,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            curriculum: Curriculum {
                initial: 0.75,
                minimum: 0.25,
                decay_epochs: 30,
            },
            seed: 1,
            augment: Some(AugmentParams::default()),
            grad_clip: Some(5.0),
            patience: None,
        }
    }

    /// Batch size 5 and learning rate 1e-4 with plain gradient descent.
    pub fn paper() -> Self {
        Self {
            max_epochs: 2000,
            batch_size: 5,
            learning_rate: 1e-4,
            optimizer: Optimizer::Sgd,
            curriculum: Curriculum {
                initial: 0.9,
                minimum: 0.1,
                decay_epochs: 1000,
            },
            seed: 1,
            augment: Some(AugmentParams::default()),
            grad_clip: None,
            patience: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::TrainConfig(m.to_string()));
        let c = &self.curriculum;
        if !(0.0 <= c.minimum && c.minimum <= c.initial && c.initial <= 1.0) {
            return err("curriculum needs 0 <= minimum <= initial <= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return err("batch_size and max_epochs must be positive");
        }
        if let Some(a) = &self.augment {
            a.validate().map_err(ModelError::TrainConfig)?;
        }
        Ok(())
    }
}

/// Replaces each character token with a uniformly drawn character token with
/// probability `p`. Markers and EOT are never touched.
pub fn apply_label_noise<R: Rng + ?Sized>(
    tokens: &mut [TokenId],
    dict: &TokenDictionary,
    p: f64,
    rng: &mut R,
) {
    let nc = dict.chars().len();
    if p <= 0.0 || nc == 0 {
        return;
    }
    for t in tokens.iter_mut() {
        if dict.is_char(*t) && rng.gen_bool(p) {
            *t = rng.gen_range(0..nc) as TokenId;
        }
    }
}

/// Token-level edit distance over the reference length, in percent.
pub fn sequence_cer(predicted: &[TokenId], reference: &[TokenId]) -> f64 {
    100.0 * edit_distance(predicted, reference) as f64 / reference.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_cer: f64,
    pub synth_fraction: f64,
    pub wall_ms: u128,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,valid_cer,synth_fraction,wall_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.4},{:.4},{}",
            self.epoch, self.train_loss, self.valid_cer, self.synth_fraction, self.wall_ms
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation CER.
    pub network: Network,
    pub best_epoch: usize,
    pub best_valid_cer: f64,
    pub epochs: Vec<EpochLog>,
}

/// Model input for a page: optional augmentation, then resize to the
/// configured height.
fn model_input(
    img: &PageImage,
    height: usize,
    aug: Option<(&AugmentParams, &mut ChaCha8Rng)>,
) -> PageImage {
    match aug {
        Some((params, rng)) => resize_to_height(&augment(img, params, rng), height),
        None => resize_to_height(img, height),
    }
}

/// Greedy-decoding CER over a set of samples.
pub fn validation_cer(
    net: &Network,
    samples: &[Sample],
    dict: &TokenDictionary,
) -> Result<f64, ModelError> {
    let mut edits = 0;
    let mut total = 0;
    for s in samples {
        let input = resize_to_height(&s.image, net.config().input_height);
        let f = net.encode_image(&input)?;
        let out = net.greedy(&f, dict.eot(), net.config().max_sequence_length);
        edits += edit_distance(&out, &s.target);
        total += s.target.len();
    }
    Ok(100.0 * edits as f64 / total.max(1) as f64)
}

struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

fn optimizer_step(
    net: &mut Network,
    grads: &[Vec<f64>],
    tcfg: &TrainConfig,
    state: &mut OptimizerState,
) {
    let lr = tcfg.learning_rate;
    state.step += 1;
    let params = net.params_mut().tensors_mut();
    match tcfg.optimizer {
        Optimizer::Sgd => {
            for (t, g) in params.iter_mut().zip(grads) {
                for (p, &g) in t.data.iter_mut().zip(g) {
                    *p -= lr * g;
                }
            }
        }
        Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            let c1 = 1.0 - beta1.powi(state.step);
            let c2 = 1.0 - beta2.powi(state.step);
            for ((t, g), (m, v)) in params
                .iter_mut()
                .zip(grads)
                .zip(state.m.iter_mut().zip(state.v.iter_mut()))
            {
                for i in 0..g.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    t.data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                }
            }
        }
    }
}

/// Trains with teacher forcing and a synthetic-data curriculum.
///
/// An epoch has `ceil(|train| / batch_size)` batches. Batch slots are
/// assigned to the synthetic stream so that the running synthetic share
/// tracks the epoch's curriculum fraction exactly; real slots draw from a
/// shuffled pass over the training set that carries over between epochs.
/// Per-sample gradients are accumulated in slot order, so a run is a pure
/// function of its inputs and seed.
pub fn train(
    train_set: &[Sample],
    valid_set: &[Sample],
    synth: &mut dyn SynthStream,
    dict: &TokenDictionary,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    init: Option<Network>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, ModelError> {
    mcfg.validate()?;
    tcfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let seed = tcfg.seed;
    let mut net = match init {
        Some(n) => {
            if n.config() != mcfg || n.vocab() != dict.len() {
                return Err(ModelError::Config(
                    "initial network does not match the configuration or dictionary".into(),
                ));
            }
            n
        }
        None => Network::new(
            mcfg,
            dict.len(),
            &mut ChaCha8Rng::seed_from_u64(seed ^ 0x1417),
        )?,
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0de7);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4015e);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd209);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa06);

    let batches = train_set.len().div_ceil(tcfg.batch_size);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;
    let mut state = OptimizerState {
        m: net.params().zeros_like(),
        v: net.params().zeros_like(),
        step: 0,
    };

    let mut best: Option<(f64, usize, Network)> = None;
    let mut logs = Vec::new();
    for epoch in 0..tcfg.max_epochs {
        let started = Instant::now();
        let fraction = curriculum_fraction(&tcfg.curriculum, epoch);
        let mut synth_due = 0.0;
        let mut synth_used = 0usize;
        let mut loss_sum = 0.0;
        for b in 0..batches {
            let mut batch: Vec<Sample> = Vec::with_capacity(tcfg.batch_size);
            for _ in 0..tcfg.batch_size {
                synth_due += fraction;
                if synth_due - synth_used as f64 >= 1.0 - 1e-9 {
                    synth_used += 1;
                    let s = synth.next_sample()?;
                    let image = model_input(&s.image, mcfg.input_height, None);
                    batch.push(Sample {
                        image,
                        target: s.target,
                    });
                } else {
                    if cursor == order.len() {
                        order.shuffle(&mut order_rng);
                        cursor = 0;
                    }
                    let s = &train_set[order[cursor]];
                    cursor += 1;
                    let aug = tcfg.augment.as_ref().map(|p| (p, &mut aug_rng));
                    batch.push(Sample {
                        image: model_input(&s.image, mcfg.input_height, aug),
                        target: s.target.clone(),
                    });
                }
            }
            let tokens: usize = batch.iter().map(|s| s.target.len()).sum();
            let mut grads = net.params().zeros_like();
            let mut batch_loss = 0.0;
            for s in &batch {
                let mut inputs = s.target[..s.target.len() - 1].to_vec();
                apply_label_noise(&mut inputs, dict, mcfg.label_noise_prob, &mut noise_rng);
                let rng = (mcfg.dropout > 0.0).then_some(&mut dropout_rng);
                batch_loss += net.loss_and_grads(
                    &s.image,
                    &inputs,
                    &s.target,
                    tokens as f64,
                    rng,
                    &mut grads,
                )?;
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            if let Some(clip) = tcfg.grad_clip {
                let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    let k = clip / norm;
                    grads.iter_mut().flatten().for_each(|g| *g *= k);
                }
            }
            optimizer_step(&mut net, &grads, tcfg, &mut state);
            loss_sum += batch_loss;
        }
        let train_loss = loss_sum / batches as f64;
        let valid_cer = if valid_set.is_empty() {
            f64::NAN
        } else {
            validation_cer(&net, valid_set, dict)?
        };
        let log = EpochLog {
            epoch,
            train_loss,
            valid_cer,
            synth_fraction: fraction,
            wall_ms: started.elapsed().as_millis(),
        };
        log::info!("{}", log.csv_row());
        on_epoch(&log);
        logs.push(log);
        // without a validation set the last epoch wins
        let score = if valid_cer.is_nan() {
            -(epoch as f64)
        } else {
            valid_cer
        };
        if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
            best = Some((score, epoch, net.clone()));
        }
        if let (Some(p), Some((_, be, _))) = (tcfg.patience, best.as_ref()) {
            if epoch - be >= p {
                break;
            }
        }
    }
    let (score, best_epoch, network) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        network,
        best_epoch,
        best_valid_cer: if valid_set.is_empty() {
            f64::NAN
        } else {
            score
        },
        epochs: logs,
    })
}
