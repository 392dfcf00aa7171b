use serde::{Deserialize, Serialize};

use super::selector::LayerSelector;
use crate::error::{Error, Result};
use crate::model::ModelState;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per tensor. Each tensor keeps its own step
/// count so that moments reset for some tensors restart bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ModelState,
    pub v: ModelState,
    pub steps: Vec<u64>,
}

impl AdamState {
    pub fn new(like: &ModelState) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            steps: vec![0; like.tensors.len()],
        }
    }

    pub fn step(&self) -> u64 {
        self.steps.iter().copied().max().unwrap_or(0)
    }

    /// Zeroes the moments and step count of tensor `idx`.
    pub fn reset_tensor(&mut self, idx: usize) {
        self.m.tensors[idx].data.fill(0.0);
        self.v.tensors[idx].data.fill(0.0);
        self.steps[idx] = 0;
    }
}

fn check_shapes(state: &ModelState, other: &ModelState) -> Result<()> {
    if state.tensors.len() != other.tensors.len() {
        return Err(Error::Config(format!(
            "expected {} tensors, found {}",
            state.tensors.len(),
            other.tensors.len()
        )));
    }
    for ((name, a), (oname, b)) in state.tensors.iter().zip(&other.tensors) {
        if name != oname {
            return Err(Error::UnknownTensor(oname.clone()));
        }
        if a.shape != b.shape {
            return Err(Error::Shape {
                name: name.clone(),
                expected: a.shape.clone(),
                actual: b.shape.clone(),
            });
        }
    }
    Ok(())
}

/// Bias-corrected Adam on every tensor not matched by `freeze`. Frozen
/// tensors and their moments are left untouched.
pub fn adam_step(
    state: &mut ModelState,
    opt: &mut AdamState,
    grads: &ModelState,
    lr: f64,
    freeze: Option<&LayerSelector>,
) -> Result<()> {
    check_shapes(state, grads)?;
    check_shapes(state, &opt.m)?;
    check_shapes(state, &opt.v)?;
    let frozen = match freeze {
        Some(sel) => sel.mask(state)?,
        None => vec![false; state.tensors.len()],
    };
    for i in 0..state.tensors.len() {
        if frozen[i] {
            continue;
        }
        opt.steps[i] += 1;
        let t = opt.steps[i] as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let p = &mut state.tensors[i].data;
        let g = &grads.tensors[i].data;
        let m = &mut opt.m.tensors[i].data;
        let v = &mut opt.v.tensors[i].data;
        for j in 0..p.len() {
            let gj = g[j] as f64;
            let mj = BETA1 * m[j] as f64 + (1.0 - BETA1) * gj;
            let vj = BETA2 * v[j] as f64 + (1.0 - BETA2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + ADAM_EPS);
            p[j] = (p[j] as f64 - update) as f32;
        }
    }
    Ok(())
}
