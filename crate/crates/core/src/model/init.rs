use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::state::{layout, ModelState, Tensor};
use crate::error::Result;

pub const INIT_STD: f64 = 0.02;

/// Scaled-normal initialization. Norm scales start at 1 and biases at 0;
/// the residual-output projections (`attn.o`, `ffn.out`) are further scaled
/// by `1/sqrt(2L)`. Deterministic in `config.init_seed`.
pub fn init_params(config: &ModelConfig) -> Result<ModelState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let residual_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
    let mut tensors = indexmap::IndexMap::new();
    for (name, shape) in layout(config) {
        let t = if name.ends_with(".scale") {
            Tensor::filled(&shape, 1.0f32)
        } else if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let std = if name.ends_with("attn.o") || name.ends_with("ffn.out") {
                residual_std
            } else {
                INIT_STD
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            let n: usize = shape.iter().product();
            Tensor {
                shape,
                data: (0..n).map(|_| normal.sample(&mut rng) as f32).collect(),
            }
        };
        tensors.insert(name, t);
    }
    Ok(ModelState {
        config: config.clone(),
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 32,
            vocab_size: 50,
            max_seq_len: 16,
            init_seed: 9,
        }
    }

    #[test]
    fn shapes_and_norms() {
        let s = init_params(&micro()).unwrap();
        s.validate().unwrap();
        assert_eq!(s.get("layer.1.attn.q").unwrap().shape, vec![8, 8]);
        assert_eq!(s.get("unembed").unwrap().shape, vec![8, 50]);
        for (name, t) in &s.tensors {
            if name.ends_with(".scale") {
                assert!(t.data.iter().all(|&v| v == 1.0));
            }
            if name.ends_with(".bias") {
                assert!(t.data.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = init_params(&micro()).unwrap();
        let b = init_params(&micro()).unwrap();
        assert!(a.bit_equal(&b));
        let mut c = micro();
        c.init_seed = 10;
        assert!(!a.bit_equal(&init_params(&c).unwrap()));
    }

    #[test]
    fn residual_projections_are_smaller() {
        let mut c = ModelConfig::toy(200, 32);
        c.init_seed = 1;
        let s = init_params(&c).unwrap();
        let std = |name: &str| {
            let d = &s.get(name).unwrap().data;
            (d.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / d.len() as f64).sqrt()
        };
        assert!((std("layer.0.attn.q") - 0.02).abs() < 0.002);
        assert!((std("layer.0.ffn.out") - 0.02 / 18f64.sqrt()).abs() < 0.001);
    }

    #[test]
    fn invalid_config_errors() {
        let mut c = micro();
        c.n_heads = 3;
        assert!(init_params(&c).is_err());
    }
}
