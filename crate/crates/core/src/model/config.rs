use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    /// Nine layers so that the lower third is exactly three blocks.
    pub fn toy(vocab_size: usize, max_seq_len: usize) -> Self {
        ModelConfig {
            n_layers: 9,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            vocab_size,
            max_seq_len,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return fail("vocab_size and max_seq_len must be positive".into());
        }
        if self.vocab_size > u32::MAX as usize {
            return fail("vocab_size exceeds u32 token ids".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// First layer of the upper two-thirds: `floor(L / 3)`.
    pub fn lower_third(&self) -> usize {
        self.n_layers / 3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_partitions_into_thirds() {
        let c = ModelConfig::toy(50, 64);
        c.validate().unwrap();
        assert_eq!(c.lower_third(), 3);
        assert_eq!(c.head_dim(), 32);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = ModelConfig::toy(50, 64);
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
