//! Comparison and negation likelihood-ratio probes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::render::draw_negatives;
use crate::corpus::{FactRegistry, FactTriplet, Relation, Vocabulary};
use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::parallel;

pub const NEGATION: &str = "not";
pub const DEFAULT_DISTRACTORS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub fact_id: String,
    pub relation: String,
    pub factual_prompt: String,
    pub negated_prompt: String,
    pub tail: String,
    pub distractors: Vec<String>,
}

/// Factual and negated probe prompts for a fact; both end right before the
/// tail.
pub fn probe_prompts(fact: &FactTriplet) -> (String, String) {
    let h = &fact.head;
    match &fact.relation {
        Relation::CapitalCity => (
            format!("The capital city of {h} is"),
            format!("The capital city of {h} is {NEGATION}"),
        ),
        Relation::FamousFor => (
            format!("The city of {h} is famous for its"),
            format!("The city of {h} is {NEGATION} famous for its"),
        ),
        Relation::External(_) => {
            let p = fact.relation.phrase();
            (
                format!("The {p} of {h} is"),
                format!("The {p} of {h} is {NEGATION}"),
            )
        }
    }
}

/// One item per fact with `n_distractors` same-category entities other than
/// the tail, sampled without replacement.
pub fn build_probe_items(
    registry: &FactRegistry,
    n_distractors: usize,
    seed: u64,
) -> Result<Vec<ProbeItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    registry
        .facts
        .iter()
        .map(|f| {
            let (factual_prompt, negated_prompt) = probe_prompts(f);
            Ok(ProbeItem {
                fact_id: f.id.clone(),
                relation: f.relation.label().to_string(),
                factual_prompt,
                negated_prompt,
                tail: f.tail.clone(),
                distractors: draw_negatives(registry, f, &f.tail, n_distractors, &mut rng)?,
            })
        })
        .collect()
}

fn prompt_ids(vocab: &Vocabulary, prompt: &str) -> Vec<u32> {
    let mut ids = vec![vocab.special().bos];
    ids.extend(vocab.encode(prompt));
    ids
}

fn logp<M: LanguageModel + ?Sized>(model: &M, vocab: &Vocabulary, prompt: &str, cont: &str) -> Result<f64> {
    model.sequence_logprob(&prompt_ids(vocab, prompt), &vocab.encode(cont))
}

/// Log comparison ratio, averaged over distractors, and the per-distractor
/// log ratios.
pub fn log_comparison_ratio<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    item: &ProbeItem,
) -> Result<(f64, Vec<f64>)> {
    if item.distractors.is_empty() {
        return Err(Error::Empty("distractors"));
    }
    let lt = logp(model, vocab, &item.factual_prompt, &item.tail)?;
    let pair = item
        .distractors
        .iter()
        .map(|d| Ok(lt - logp(model, vocab, &item.factual_prompt, d)?))
        .collect::<Result<Vec<f64>>>()?;
    let mean = pair.iter().sum::<f64>() / pair.len() as f64;
    Ok((mean, pair))
}

pub fn log_negation_ratio<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    item: &ProbeItem,
) -> Result<f64> {
    Ok(logp(model, vocab, &item.factual_prompt, &item.tail)?
        - logp(model, vocab, &item.negated_prompt, &item.tail)?)
}

/// `p(t | r, h) / mean-log p(t' | r, h)`, exponentiated.
pub fn comparison_ratio<M: LanguageModel + ?Sized>(model: &M, vocab: &Vocabulary, item: &ProbeItem) -> Result<f64> {
    Ok(log_comparison_ratio(model, vocab, item)?.0.exp())
}

/// `p(t | r, h) / p(t | not r, h)`.
pub fn negation_ratio<M: LanguageModel + ?Sized>(model: &M, vocab: &Vocabulary, item: &ProbeItem) -> Result<f64> {
    Ok(log_negation_ratio(model, vocab, item)?.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub fact_id: String,
    pub relation: String,
    pub log_comparison: f64,
    pub log_negation: f64,
    /// Log ratio against each distractor, in item order.
    pub pairwise: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean_log_comparison: f64,
    pub std_log_comparison: f64,
    pub mean_log_negation: f64,
    pub std_log_negation: f64,
}

impl Aggregate {
    pub fn of(rows: &[&ProbeRow]) -> Self {
        let (mc, sc) = mean_std(rows.iter().map(|r| r.log_comparison));
        let (mn, sn) = mean_std(rows.iter().map(|r| r.log_negation));
        Aggregate {
            n: rows.len(),
            mean_log_comparison: mc,
            std_log_comparison: sc,
            mean_log_negation: mn,
            std_log_negation: sn,
        }
    }
}

/// Mean and population standard deviation.
fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    pub overall: Aggregate,
    pub per_relation: BTreeMap<String, Aggregate>,
    /// Set when the vocabulary has no negation token, so the negated prompt
    /// carries an unknown token instead of "not".
    pub negation_flagged: bool,
}

impl ProbeReport {
    pub fn from_rows(rows: Vec<ProbeRow>, negation_flagged: bool) -> Self {
        let all: Vec<&ProbeRow> = rows.iter().collect();
        let overall = Aggregate::of(&all);
        let mut groups: BTreeMap<String, Vec<&ProbeRow>> = BTreeMap::new();
        for r in &rows {
            groups.entry(r.relation.clone()).or_default().push(r);
        }
        let per_relation = groups.into_iter().map(|(k, v)| (k, Aggregate::of(&v))).collect();
        ProbeReport {
            rows,
            overall,
            per_relation,
            negation_flagged,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fact_id,log_comparison,log_negation\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.fact_id, r.log_comparison, r.log_negation);
        }
        s
    }
}

pub fn probe_all<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocabulary,
    items: &[ProbeItem],
) -> Result<ProbeReport> {
    if items.is_empty() {
        return Err(Error::Empty("probe items"));
    }
    let rows = parallel::try_map(items, |it| -> Result<ProbeRow> {
        let (log_comparison, pairwise) = log_comparison_ratio(model, vocab, it)?;
        Ok(ProbeRow {
            fact_id: it.fact_id.clone(),
            relation: it.relation.clone(),
            log_comparison,
            log_negation: log_negation_ratio(model, vocab, it)?,
            pairwise,
        })
    })?;
    Ok(ProbeReport::from_rows(rows, !vocab.contains(NEGATION)))
}
