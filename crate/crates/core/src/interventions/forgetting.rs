//! Active forgetting: train to convergence, reset the upper blocks to the
//! base weights, train again.

use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{batch_loss, ModelState};
use crate::train::{
    encode_corpus, entropy_floor_of, run_epochs, train, AdamState, Checkpoint, CheckpointMeta,
    EpochLoss, LayerSelector, LossPoint, Phase, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingSchedule {
    pub reset_selector: LayerSelector,
    pub pass1: TrainConfig,
    pub pass2: TrainConfig,
}

impl ForgettingSchedule {
    /// Resets `at_or_above(floor(L/3))`; both passes share `config`.
    pub fn upper_two_thirds(n_layers: usize, config: TrainConfig) -> Self {
        ForgettingSchedule {
            reset_selector: LayerSelector::upper_two_thirds(n_layers),
            pass1: config.clone(),
            pass2: config,
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        self.reset_selector.validate(n_layers)?;
        if self.reset_selector.is_empty(n_layers) {
            return Err(Error::Config("reset selector matches no tensors".into()));
        }
        self.pass1.validate()?;
        self.pass2.validate()
    }
}

/// Copies the selected tensors from `base` into `model` and zeroes their
/// optimizer moments; everything else is left as is.
pub fn reset_to_base(
    model: &mut ModelState,
    opt: &mut AdamState,
    base: &ModelState,
    selector: &LayerSelector,
) -> Result<()> {
    if model.config != base.config {
        return Err(Error::Lineage("model config differs from the base".into()));
    }
    for (i, reset) in selector.mask(model)?.into_iter().enumerate() {
        if reset {
            model.tensors[i].data.clone_from(&base.tensors[i].data);
            opt.reset_tensor(i);
        }
    }
    Ok(())
}

/// The final checkpoint plus the two intermediate states, for inspection.
#[derive(Debug, Clone)]
pub struct ForgettingRun {
    pub checkpoint: Checkpoint,
    pub end_of_pass1: ModelState,
    pub after_reset: ModelState,
}

pub fn active_forget_train(
    base: &Checkpoint,
    corpus: &[Passage],
    vocab: &Vocabulary,
    schedule: &ForgettingSchedule,
) -> Result<ForgettingRun> {
    let seqs = encode_corpus(corpus, vocab, base.model.config.max_seq_len)?;
    active_forget_sequences(base, &seqs, schedule)
}

pub fn active_forget_sequences(
    base: &Checkpoint,
    seqs: &[Vec<u32>],
    schedule: &ForgettingSchedule,
) -> Result<ForgettingRun> {
    schedule.validate(base.model.config.n_layers)?;
    let floor = entropy_floor_of(seqs);
    let mut model = base.model.clone();
    let mut opt = AdamState::new(&model);

    let p1 = run_epochs(&mut model, &mut opt, seqs, &schedule.pass1, Phase::Pass1, 0, floor)?;
    let end_of_pass1 = model.clone();

    reset_to_base(&mut model, &mut opt, &base.model, &schedule.reset_selector)?;
    let after_reset = model.clone();
    let reset_loss = batch_loss(&model, seqs)?;
    let last_epoch = p1.loss_curve.last().map(|p| p.epoch).unwrap_or(0);
    log::info!("reset: loss {reset_loss:.4} (floor {floor:.4})");

    let p2 = run_epochs(&mut model, &mut opt, seqs, &schedule.pass2, Phase::Pass2, p1.steps, floor)?;

    let mut loss_curve = p1.loss_curve;
    loss_curve.push(LossPoint {
        step: p1.steps,
        epoch: last_epoch,
        lr: 0.0,
        loss: reset_loss,
        phase: Phase::Reset,
    });
    loss_curve.extend(p2.loss_curve);
    let mut epoch_losses = p1.epoch_losses;
    epoch_losses.push(EpochLoss {
        epoch: last_epoch,
        step: p1.steps,
        loss: reset_loss,
        phase: Phase::Reset,
    });
    epoch_losses.extend(p2.epoch_losses);
    let converged = match (schedule.pass1.convergence, schedule.pass2.convergence) {
        (None, None) => None,
        _ => Some(p1.converged && p2.converged),
    };
    Ok(ForgettingRun {
        checkpoint: Checkpoint {
            model,
            meta: CheckpointMeta {
                base_ref: Some(base.content_hash()),
                loss_curve,
                epoch_losses,
                train_config: Some(serde_json::to_value(schedule).expect("schedule serializes")),
                rng_state: p2.rng_state,
                entropy_floor: Some(floor),
                reset_step: Some(p1.steps),
                converged,
            },
        },
        end_of_pass1,
        after_reset,
    })
}

/// Trains only the lower third: the upper two-thirds stay frozen at base.
pub fn lower_only_baseline(
    base: &Checkpoint,
    corpus: &[Passage],
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<Checkpoint> {
    let config = TrainConfig {
        freeze: Some(LayerSelector::upper_two_thirds(base.model.config.n_layers)),
        ..config.clone()
    };
    train(base, corpus, vocab, &config)
}
