//! Layer-wise ablation of finetuning deltas and the sweeps over it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{EvalItem, Task, Vocabulary};
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::parallel;
use crate::probe::{evaluate, EvalReport, FewShotConfig};
use crate::train::{verify_lineage, Checkpoint, LayerSelector};

/// Copies the tensors matched by `selector` from `base` and every other
/// tensor from `finetuned`, bit for bit.
pub fn ablate(base: &ModelState, finetuned: &Checkpoint, selector: &LayerSelector) -> Result<ModelState> {
    verify_lineage(base, finetuned)?;
    let mask = selector.mask(base)?;
    let mut out = finetuned.model.clone();
    for (i, reset) in mask.into_iter().enumerate() {
        if reset {
            out.tensors[i].data.clone_from(&base.tensors[i].data);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Ablate layers `[0, k)`, for k ascending.
    Forward,
    /// Ablate layers `[k, L)`, for k descending.
    Backward,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "forward" => Some(Direction::Forward),
            "backward" => Some(Direction::Backward),
            _ => None,
        }
    }

    /// Sweep order of `k` and the selector ablated at each point. The point
    /// covering every block also restores the non-layer tensors, so the
    /// sweep ends exactly at the base model.
    pub fn points(self, n_layers: usize) -> Vec<(usize, LayerSelector)> {
        let point = |k: usize| {
            let sel = match self {
                Direction::Forward => LayerSelector::below(k),
                Direction::Backward => LayerSelector::at_or_above(k),
            };
            let full = match self {
                Direction::Forward => k == n_layers,
                Direction::Backward => k == 0,
            };
            (k, sel.with_nonlayer(full))
        };
        match self {
            Direction::Forward => (0..=n_layers).map(point).collect(),
            Direction::Backward => (0..=n_layers).rev().map(point).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub accuracy: BTreeMap<Task, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSweepResult {
    pub direction: Direction,
    pub layer_count: usize,
    /// In sweep order, from the finetuned end to the base end.
    pub per_k: Vec<SweepPoint>,
}

/// Shortest contiguous stretch of the sweep over which a task loses at
/// least half of its total swing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllingRange {
    /// `k` where the stretch starts and ends, in sweep order.
    pub k_from: usize,
    pub k_to: usize,
    pub drop: f64,
    pub swing: f64,
}

pub const CONTROLLING_FRACTION: f64 = 0.5;

impl AblationSweepResult {
    pub fn series(&self, task: Task) -> Vec<f64> {
        self.per_k
            .iter()
            .map(|p| p.accuracy.get(&task).copied().unwrap_or(0.0))
            .collect()
    }

    /// `None` when the task does not get worse from the finetuned end to
    /// the base end.
    pub fn controlling_range(&self, task: Task) -> Option<ControllingRange> {
        let acc = self.series(task);
        let (first, last) = (*acc.first()?, *acc.last()?);
        let swing = first - last;
        if swing <= 0.0 {
            return None;
        }
        let need = CONTROLLING_FRACTION * swing;
        let mut best: Option<(usize, usize)> = None;
        for i in 0..acc.len() {
            for j in i + 1..acc.len() {
                if acc[i] - acc[j] >= need - 1e-12 {
                    if best.is_none_or(|(a, b)| j - i < b - a) {
                        best = Some((i, j));
                    }
                    break;
                }
            }
        }
        best.map(|(i, j)| ControllingRange {
            k_from: self.per_k[i].k,
            k_to: self.per_k[j].k,
            drop: acc[i] - acc[j],
            swing,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("direction,k,task,accuracy\n");
        for p in &self.per_k {
            for (t, a) in &p.accuracy {
                let _ = writeln!(s, "{},{},{},{}", self.direction.label(), p.k, t, a);
            }
        }
        s
    }

    pub fn summary(&self) -> SweepSummary {
        let tasks: Vec<Task> = self
            .per_k
            .first()
            .map(|p| p.accuracy.keys().copied().collect())
            .unwrap_or_default();
        SweepSummary {
            direction: self.direction,
            layer_count: self.layer_count,
            controlling_ranges: tasks
                .into_iter()
                .map(|t| (t, self.controlling_range(t)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub direction: Direction,
    pub layer_count: usize,
    pub controlling_ranges: BTreeMap<Task, Option<ControllingRange>>,
}

/// Evaluates the ablated model at every point of the sweep. Points are
/// independent and run concurrently.
pub fn sweep(
    base: &ModelState,
    finetuned: &Checkpoint,
    vocab: &Vocabulary,
    evalset: &[EvalItem],
    direction: Direction,
    fewshot: &FewShotConfig,
) -> Result<AblationSweepResult> {
    Ok(sweep_reports(base, finetuned, vocab, evalset, direction, fewshot)?.0)
}

/// Like [`sweep`], also returning the full report of every point.
pub fn sweep_reports(
    base: &ModelState,
    finetuned: &Checkpoint,
    vocab: &Vocabulary,
    evalset: &[EvalItem],
    direction: Direction,
    fewshot: &FewShotConfig,
) -> Result<(AblationSweepResult, Vec<EvalReport>)> {
    verify_lineage(base, finetuned)?;
    if evalset.is_empty() {
        return Err(Error::Empty("evalset"));
    }
    let n_layers = base.config.n_layers;
    let points = direction.points(n_layers);
    let reports = parallel::try_map(&points, |(_, sel)| -> Result<EvalReport> {
        let state = ablate(base, finetuned, sel)?;
        evaluate(&state, vocab, evalset, fewshot)
    })?;
    let per_k = points
        .iter()
        .zip(&reports)
        .map(|((k, _), r)| SweepPoint {
            k: *k,
            accuracy: r.tasks.iter().map(|(t, s)| (*t, s.accuracy)).collect(),
        })
        .collect();
    Ok((
        AblationSweepResult {
            direction,
            layer_count: n_layers,
            per_k,
        },
        reports,
    ))
}
