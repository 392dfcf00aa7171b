//! Named parameter tensors.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::kernels::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f32> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Where a tensor sits in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorSite {
    Layer(usize),
    NonLayer,
}

/// Parses `layer.{i}.…` names; everything else is a non-layer tensor.
pub fn tensor_site(name: &str) -> Result<TensorSite> {
    match name.strip_prefix("layer.") {
        Some(rest) => {
            let idx = rest
                .split('.')
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::UnknownTensor(name.to_string()))?;
            Ok(TensorSite::Layer(idx))
        }
        None => match name {
            "embed.tok" | "embed.pos" | "final_norm.scale" | "final_norm.bias" | "unembed" => {
                Ok(TensorSite::NonLayer)
            }
            _ => Err(Error::UnknownTensor(name.to_string())),
        },
    }
}

/// Per-layer tensor suffixes in canonical order.
pub const LAYER_TENSORS: [&str; 10] = [
    "norm.1.scale",
    "norm.1.bias",
    "attn.q",
    "attn.k",
    "attn.v",
    "attn.o",
    "norm.2.scale",
    "norm.2.bias",
    "ffn.in",
    "ffn.out",
];

pub(crate) mod slot {
    pub const N1_SCALE: usize = 0;
    pub const N1_BIAS: usize = 1;
    pub const Q: usize = 2;
    pub const K: usize = 3;
    pub const V: usize = 4;
    pub const O: usize = 5;
    pub const N2_SCALE: usize = 6;
    pub const N2_BIAS: usize = 7;
    pub const FFN_IN: usize = 8;
    pub const FFN_OUT: usize = 9;
}

/// Canonical `(name, shape)` layout for a config.
pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d_model;
    let mut out = vec![
        ("embed.tok".to_string(), vec![config.vocab_size, d]),
        ("embed.pos".to_string(), vec![config.max_seq_len, d]),
    ];
    for i in 0..config.n_layers {
        for suffix in LAYER_TENSORS {
            let shape = match suffix {
                "attn.q" | "attn.k" | "attn.v" | "attn.o" => vec![d, d],
                "ffn.in" => vec![d, config.d_ff],
                "ffn.out" => vec![config.d_ff, d],
                _ => vec![d],
            };
            out.push((format!("layer.{i}.{suffix}"), shape));
        }
    }
    out.push(("final_norm.scale".into(), vec![d]));
    out.push(("final_norm.bias".into(), vec![d]));
    out.push(("unembed".into(), vec![d, config.vocab_size]));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState<T = f32> {
    pub config: ModelConfig,
    pub tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ModelState<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(ModelState {
            config: config.clone(),
            tensors: layout(config)
                .into_iter()
                .map(|(n, s)| (n, Tensor::zeros(&s)))
                .collect(),
        })
    }

    /// Checks names, order and shapes against the config layout.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = layout(&self.config);
        if expected.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), (have_name, t)) in expected.iter().zip(&self.tensors) {
            if name != have_name {
                return Err(Error::UnknownTensor(have_name.clone()));
            }
            if shape != &t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape {
                    name: name.clone(),
                    expected: shape.clone(),
                    actual: t.shape.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    #[inline]
    pub(crate) fn at(&self, idx: usize) -> &[T] {
        &self.tensors[idx].data
    }

    #[inline]
    pub(crate) fn at_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.tensors[idx].data
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ModelState {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(&t.shape)))
                .collect(),
        }
    }
}

/// Indices into the canonical tensor order.
pub(crate) mod index {
    pub const TOK: usize = 0;
    pub const POS: usize = 1;

    #[inline]
    pub fn layer(layer: usize, slot: usize) -> usize {
        2 + layer * super::LAYER_TENSORS.len() + slot
    }

    #[inline]
    pub fn final_scale(n_layers: usize) -> usize {
        2 + n_layers * super::LAYER_TENSORS.len()
    }

    #[inline]
    pub fn final_bias(n_layers: usize) -> usize {
        final_scale(n_layers) + 1
    }

    #[inline]
    pub fn unembed(n_layers: usize) -> usize {
        final_scale(n_layers) + 2
    }
}

impl ModelState<f32> {
    /// SHA-256 over the config and every tensor's name, shape and bytes.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, t) in &self.tensors {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.shape.len() as u64).to_le_bytes());
            for &d in &t.shape {
                h.update((d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// True when every tensor is bit-identical to `other`'s.
    pub fn bit_equal(&self, other: &ModelState) -> bool {
        self.config == other.config
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((a, x), (b, y))| a == b && tensor_bit_equal(x, y))
    }
}

pub fn tensor_bit_equal(a: &Tensor, b: &Tensor) -> bool {
    a.shape == b.shape
        && a.data.len() == b.data.len()
        && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sites_parse() {
        assert_eq!(tensor_site("layer.7.attn.q").unwrap(), TensorSite::Layer(7));
        assert_eq!(tensor_site("unembed").unwrap(), TensorSite::NonLayer);
        assert!(tensor_site("layer.x.attn.q").is_err());
        assert!(tensor_site("mystery").is_err());
    }

    #[test]
    fn layout_indices_agree() {
        let c = ModelConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 50,
            max_seq_len: 12,
            init_seed: 0,
        };
        let s = ModelState::<f32>::zeros(&c).unwrap();
        s.validate().unwrap();
        let names: Vec<&String> = s.tensors.keys().collect();
        assert_eq!(names[index::layer(1, slot::FFN_OUT)], "layer.1.ffn.out");
        assert_eq!(names[index::final_scale(2)], "final_norm.scale");
        assert_eq!(names[index::unembed(2)], "unembed");
        for n in s.tensors.keys() {
            tensor_site(n).unwrap();
        }
    }

    #[test]
    fn hash_tracks_content() {
        let c = ModelConfig::toy(20, 8);
        let mut s = ModelState::<f32>::zeros(&c).unwrap();
        let h0 = s.content_hash();
        assert_eq!(h0, s.clone().content_hash());
        s.get_mut("unembed").unwrap().data[3] = 1.0;
        assert_ne!(h0, s.content_hash());
        s.get_mut("unembed").unwrap().data[3] = -0.0;
        assert_ne!(h0, s.content_hash(), "hash is bitwise");
    }
}
