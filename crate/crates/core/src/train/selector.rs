use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tensor_site, ModelState, TensorSite};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "k")]
pub enum SelectorMode {
    LayerIndices(BTreeSet<usize>),
    Below(usize),
    AtOrAbove(usize),
    All,
    None,
}

/// A set of transformer blocks, optionally extended to the non-layer tensors
/// (embeddings, final norm, unembedding).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSelector {
    #[serde(flatten)]
    pub mode: SelectorMode,
    #[serde(default)]
    pub include_nonlayer: bool,
}

impl LayerSelector {
    pub fn new(mode: SelectorMode) -> Self {
        LayerSelector {
            mode,
            include_nonlayer: false,
        }
    }

    pub fn below(k: usize) -> Self {
        Self::new(SelectorMode::Below(k))
    }

    pub fn at_or_above(k: usize) -> Self {
        Self::new(SelectorMode::AtOrAbove(k))
    }

    pub fn all() -> Self {
        Self::new(SelectorMode::All)
    }

    pub fn none() -> Self {
        Self::new(SelectorMode::None)
    }

    pub fn indices<I: IntoIterator<Item = usize>>(it: I) -> Self {
        Self::new(SelectorMode::LayerIndices(it.into_iter().collect()))
    }

    pub fn with_nonlayer(mut self, yes: bool) -> Self {
        self.include_nonlayer = yes;
        self
    }

    /// `below(floor(L/3))`.
    pub fn lower_third(n_layers: usize) -> Self {
        Self::below(n_layers / 3)
    }

    /// `at_or_above(floor(L/3))`.
    pub fn upper_two_thirds(n_layers: usize) -> Self {
        Self::at_or_above(n_layers / 3)
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        let bad = match &self.mode {
            SelectorMode::LayerIndices(s) => s.iter().any(|&i| i >= n_layers),
            SelectorMode::Below(k) | SelectorMode::AtOrAbove(k) => *k > n_layers,
            SelectorMode::All | SelectorMode::None => false,
        };
        if bad {
            return Err(Error::Config(format!(
                "layer selector {:?} out of range for {n_layers} layers",
                self.mode
            )));
        }
        Ok(())
    }

    pub fn matches_layer(&self, layer: usize) -> bool {
        match &self.mode {
            SelectorMode::LayerIndices(s) => s.contains(&layer),
            SelectorMode::Below(k) => layer < *k,
            SelectorMode::AtOrAbove(k) => layer >= *k,
            SelectorMode::All => true,
            SelectorMode::None => false,
        }
    }

    pub fn matches(&self, tensor_name: &str) -> Result<bool> {
        Ok(match tensor_site(tensor_name)? {
            TensorSite::Layer(i) => self.matches_layer(i),
            TensorSite::NonLayer => self.include_nonlayer,
        })
    }

    /// One flag per tensor, in the state's order.
    pub fn mask<T>(&self, state: &ModelState<T>) -> Result<Vec<bool>> {
        self.validate(state.config.n_layers)?;
        state.tensors.keys().map(|n| self.matches(n)).collect()
    }

    pub fn layers(&self, n_layers: usize) -> Vec<usize> {
        (0..n_layers).filter(|&i| self.matches_layer(i)).collect()
    }

    pub fn is_empty(&self, n_layers: usize) -> bool {
        !self.include_nonlayer && self.layers(n_layers).is_empty()
    }
}
