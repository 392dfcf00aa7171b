use serde::{Deserialize, Serialize};

use crate::corpus::WorldConfig;
use crate::model::ModelConfig;
use crate::probe::FewShotConfig;
use crate::train::{Convergence, TrainConfig};

/// Model dimensions; vocabulary size and context length come from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub init_seed: u64,
}

impl ModelShape {
    pub fn config(&self, vocab_size: usize, max_seq_len: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size,
            max_seq_len,
            init_seed: self.init_seed,
        }
    }
}

impl Default for ModelShape {
    fn default() -> Self {
        let t = ModelConfig::toy(1, 1);
        ModelShape {
            n_layers: t.n_layers,
            d_model: t.d_model,
            n_heads: t.n_heads,
            d_ff: t.d_ff,
            init_seed: 0,
        }
    }
}

/// Everything the default recipe needs, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub world: WorldConfig,
    pub narrative_seed: u64,
    pub referencing_seed: u64,
    pub referencing_negatives: usize,
    pub eval_seed: u64,
    pub probe_seed: u64,
    pub probe_distractors: usize,
    pub model: ModelShape,
    pub pretrain: TrainConfig,
    /// One forgetting pass. Plain, lower-only and Referencing finetunes run
    /// for twice this many epochs so all budgets match.
    pub finetune: TrainConfig,
    pub fewshot: FewShotConfig,
    pub run_sweeps: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            world: WorldConfig {
                n_countries: 30,
                episode_fraction: 0.5,
                min_shots: 3,
                ..WorldConfig::default()
            },
            narrative_seed: 7,
            referencing_seed: 7,
            referencing_negatives: 3,
            eval_seed: 11,
            probe_seed: 13,
            probe_distractors: 3,
            model: ModelShape::default(),
            pretrain: TrainConfig {
                peak_lr: 1e-3,
                n_epochs: 40,
                seed: 1,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                peak_lr: 2e-3,
                n_epochs: 20,
                seed: 2,
                convergence: Some(Convergence {
                    stop_early: false,
                    ..Convergence::default()
                }),
                ..TrainConfig::default()
            },
            fewshot: FewShotConfig {
                demo_seed: 17,
                ..FewShotConfig::default()
            },
            run_sweeps: true,
        }
    }
}

impl PipelineConfig {
    /// The finetune schedule for the plain, lower-only and Referencing runs.
    pub fn matched_finetune(&self) -> TrainConfig {
        TrainConfig {
            n_epochs: 2 * self.finetune.n_epochs,
            ..self.finetune.clone()
        }
    }

    /// Same data and base, different finetuning order and demonstrations.
    pub fn with_finetune_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.finetune.seed = seed;
        c.fewshot.demo_seed = seed.wrapping_add(1000);
        c
    }
}
