use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::checkpoint::{Checkpoint, CheckpointMeta, EpochLoss, LossPoint, Phase, RngState};
use super::entropy::entropy_floor_of;
use super::schedule::lr_at;
use super::selector::LayerSelector;
use crate::corpus::{Passage, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{batch_loss, loss_and_grads_masked, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub epsilon_nats: f64,
    pub patience_epochs: usize,
    /// When false the criterion is only recorded and the full epoch budget
    /// always runs.
    #[serde(default = "yes")]
    pub stop_early: bool,
}

fn yes() -> bool {
    true
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence {
            epsilon_nats: 0.05,
            patience_epochs: 2,
            stop_early: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub freeze: Option<LayerSelector>,
    /// When set, the full-corpus loss is measured after every epoch and
    /// training stops once it stays within `epsilon_nats` of the entropy
    /// floor for `patience_epochs` epochs in a row.
    pub convergence: Option<Convergence>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 3e-4,
            batch_size: 16,
            n_epochs: 20,
            warmup_fraction: 0.1,
            seed: 0,
            freeze: None,
            convergence: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::Config(format!(
                "warmup_fraction {} not in (0, 1)",
                self.warmup_fraction
            )));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return Err(Error::Config(format!("bad peak_lr {}", self.peak_lr)));
        }
        Ok(())
    }
}

/// Encodes each passage as BOS + text + EOS and checks it fits the model.
pub fn encode_corpus(corpus: &[Passage], vocab: &Vocabulary, max_len: usize) -> Result<Vec<Vec<u32>>> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    corpus
        .iter()
        .map(|p| {
            let s = vocab.encode_sequence(&p.text);
            if s.len() > max_len {
                return Err(Error::SequenceTooLong {
                    len: s.len(),
                    max: max_len,
                });
            }
            Ok(s)
        })
        .collect()
}

/// What one call to [`run_epochs`] produced.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub loss_curve: Vec<LossPoint>,
    pub epoch_losses: Vec<EpochLoss>,
    pub converged: bool,
    pub steps: usize,
    pub rng_state: Option<RngState>,
}

/// Trains `model` in place. Step numbers in the log start after
/// `step_offset`; the schedule covers this call's own budget.
pub fn run_epochs(
    model: &mut ModelState,
    opt: &mut AdamState,
    seqs: &[Vec<u32>],
    config: &TrainConfig,
    phase: Phase,
    step_offset: usize,
    floor: f64,
) -> Result<RunLog> {
    config.validate()?;
    if seqs.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let grad_mask: Option<Vec<bool>> = match &config.freeze {
        Some(sel) => Some(sel.mask(model)?.into_iter().map(|f| !f).collect()),
        None => None,
    };
    let per_epoch = seqs.len().div_ceil(config.batch_size);
    let total = per_epoch * config.n_epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut log = RunLog::default();
    let mut streak = 0;
    let mut step = 0;
    for epoch in 0..config.n_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Vec<u32>> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let lr = lr_at(step + 1, total, config.peak_lr, config.warmup_fraction)?;
            let (loss, grads) = loss_and_grads_masked(model, &batch, grad_mask.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: (step_offset + step + 1) as u64,
                    epoch,
                    loss,
                });
            }
            adam_step(model, opt, &grads, lr, config.freeze.as_ref())?;
            step += 1;
            log.loss_curve.push(LossPoint {
                step: step_offset + step,
                epoch,
                lr,
                loss,
                phase,
            });
        }
        if let Some(conv) = &config.convergence {
            let loss = batch_loss(model, seqs)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: (step_offset + step) as u64,
                    epoch,
                    loss,
                });
            }
            log.epoch_losses.push(EpochLoss {
                epoch,
                step: step_offset + step,
                loss,
                phase,
            });
            log::info!(
                "{} epoch {epoch}: loss {loss:.4} (floor {floor:.4})",
                phase.label()
            );
            if loss - floor <= conv.epsilon_nats {
                streak += 1;
            } else {
                streak = 0;
            }
            log.converged = streak >= conv.patience_epochs;
            if log.converged && conv.stop_early {
                break;
            }
        } else {
            let last = log.loss_curve.last().map(|p| p.loss).unwrap_or(f64::NAN);
            log::info!("{} epoch {epoch}: last batch loss {last:.4}", phase.label());
        }
    }
    log.steps = step;
    log.rng_state = Some(RngState {
        seed: config.seed,
        word_pos: rng.get_word_pos().to_string(),
    });
    Ok(log)
}

/// Trains a copy of `init` on `corpus`. The result's `base_ref` is the
/// content hash of `init`.
pub fn train(
    init: &Checkpoint,
    corpus: &[Passage],
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    let seqs = encode_corpus(corpus, vocab, init.model.config.max_seq_len)?;
    train_sequences(init, &seqs, config)
}

pub fn train_sequences(init: &Checkpoint, seqs: &[Vec<u32>], config: &TrainConfig) -> Result<Checkpoint> {
    if let Some(sel) = &config.freeze {
        sel.validate(init.model.config.n_layers)?;
    }
    let floor = entropy_floor_of(seqs);
    let mut model = init.model.clone();
    let mut opt = AdamState::new(&model);
    let log = run_epochs(&mut model, &mut opt, seqs, config, Phase::Train, 0, floor)?;
    Ok(Checkpoint {
        model,
        meta: CheckpointMeta {
            base_ref: Some(init.content_hash()),
            loss_curve: log.loss_curve,
            epoch_losses: log.epoch_losses,
            train_config: Some(serde_json::to_value(config).expect("config serializes")),
            rng_state: log.rng_state,
            entropy_floor: Some(floor),
            reset_step: None,
            converged: config.convergence.map(|_| log.converged),
        },
    })
}
