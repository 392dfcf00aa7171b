//! Closed-book few-shot exact-match evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::tasks::{fewshot_prompt, item_rng, select_demos};
use crate::corpus::templates::slot_letter;
use crate::corpus::{EvalItem, Task, Vocabulary};
use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::parallel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewShotConfig {
    pub k: usize,
    pub demo_seed: u64,
    pub max_new_tokens: usize,
    /// Diagnostic only: answer multiple-choice items by the most likely
    /// choice letter instead of by generation.
    pub mc_ranking: bool,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig {
            k: 5,
            demo_seed: 0,
            max_new_tokens: 12,
            mc_ranking: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub task: Task,
    pub prompt: String,
    pub gold: String,
    pub generated: String,
    pub correct: bool,
    pub demo_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub accuracy: f64,
    pub n_items: usize,
    pub n_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalMeta {
    pub checkpoint_hash: Option<String>,
    pub demo_seed: u64,
    pub k: usize,
    pub mc_ranking: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: BTreeMap<Task, TaskScore>,
    pub records: Vec<EvalRecord>,
    pub metadata: EvalMeta,
}

impl EvalReport {
    pub fn accuracy(&self, task: Task) -> Option<f64> {
        self.tasks.get(&task).map(|s| s.accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("task,item_id,correct\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.task, r.item_id, r.correct as u8);
        }
        s
    }
}

/// Per-task accuracy as the mean of the correct flags.
pub fn summarize(records: &[EvalRecord]) -> BTreeMap<Task, TaskScore> {
    let mut out: BTreeMap<Task, TaskScore> = BTreeMap::new();
    for r in records {
        let e = out.entry(r.task).or_insert(TaskScore {
            accuracy: 0.0,
            n_items: 0,
            n_correct: 0,
        });
        e.n_items += 1;
        e.n_correct += r.correct as usize;
    }
    for s in out.values_mut() {
        s.accuracy = s.n_correct as f64 / s.n_items as f64;
    }
    out
}

/// Exact match after trimming surrounding whitespace; case-sensitive.
pub fn exact_match(generated: &str, gold: &str) -> bool {
    generated.trim() == gold.trim()
}

/// A query, its demonstrations, and the encoded prompt.
#[derive(Debug, Clone)]
pub struct PreparedItem {
    pub index: usize,
    pub demos: Vec<usize>,
    pub prompt: String,
    pub ids: Vec<u32>,
}

/// Builds the few-shot prompt of every item and checks each fits the
/// context along with the generation budget.
pub fn prepare(
    vocab: &Vocabulary,
    evalset: &[EvalItem],
    fewshot: &FewShotConfig,
    max_seq_len: usize,
) -> Result<Vec<PreparedItem>> {
    let mut by_task: BTreeMap<Task, Vec<usize>> = BTreeMap::new();
    for (i, it) in evalset.iter().enumerate() {
        by_task.entry(it.task).or_default().push(i);
    }
    let mut out = Vec::with_capacity(evalset.len());
    for (i, it) in evalset.iter().enumerate() {
        let group = &by_task[&it.task];
        let local: Vec<EvalItem> = group.iter().map(|&g| evalset[g].clone()).collect();
        let q = group.iter().position(|&g| g == i).expect("item in its group");
        let mut rng = item_rng(fewshot.demo_seed, i);
        let demos_local = select_demos(&local, q, fewshot.k, &mut rng)?;
        let prompt = fewshot_prompt(&local, &demos_local, q);
        let mut ids = vec![vocab.special().bos];
        ids.extend(vocab.encode(&prompt));
        let need = ids.len() + fewshot.max_new_tokens;
        if need > max_seq_len {
            return Err(Error::ContextOverflow {
                item: it.id.clone(),
                len: need,
                max: max_seq_len,
            });
        }
        out.push(PreparedItem {
            index: i,
            demos: demos_local.iter().map(|&d| group[d]).collect(),
            prompt,
            ids,
        });
    }
    Ok(out)
}

fn answer<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    item: &EvalItem,
    prepared: &PreparedItem,
    fewshot: &FewShotConfig,
) -> Result<String> {
    if fewshot.mc_ranking {
        if let Some(choices) = &item.choices {
            let mut best = (f64::NEG_INFINITY, String::new());
            for i in 0..choices.len() {
                let letter = slot_letter(i);
                let lp = model.sequence_logprob(&prepared.ids, &vocab.encode(&letter))?;
                if lp > best.0 {
                    best = (lp, letter);
                }
            }
            return Ok(best.1);
        }
    }
    let mut stop = vec![vocab.special().eos];
    if let Some(nl) = vocab.newline() {
        stop.push(nl);
    }
    let out = model.greedy_generate(&prepared.ids, &stop, fewshot.max_new_tokens)?;
    vocab.decode(&out)
}

/// Runs every item: few-shot prompt, greedy decoding to newline or EOS,
/// exact match against the gold answer.
pub fn evaluate<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    evalset: &[EvalItem],
    fewshot: &FewShotConfig,
) -> Result<EvalReport> {
    if evalset.is_empty() {
        return Err(Error::Empty("evalset"));
    }
    let prepared = prepare(vocab, evalset, fewshot, model.max_seq_len())?;
    let records = parallel::try_map(&prepared, |p| -> Result<EvalRecord> {
        let it = &evalset[p.index];
        let generated = answer(model, vocab, it, p, fewshot)?;
        Ok(EvalRecord {
            item_id: it.id.clone(),
            task: it.task,
            prompt: p.prompt.clone(),
            gold: it.gold.clone(),
            correct: exact_match(&generated, &it.gold),
            generated,
            demo_ids: p.demos.iter().map(|&d| evalset[d].id.clone()).collect(),
        })
    })?;
    Ok(EvalReport {
        tasks: summarize(&records),
        records,
        metadata: EvalMeta {
            checkpoint_hash: model.model_id(),
            demo_seed: fewshot.demo_seed,
            k: fewshot.k,
            mc_ranking: fewshot.mc_ranking,
        },
    })
}
