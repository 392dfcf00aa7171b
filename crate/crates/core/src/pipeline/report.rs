use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::probe::{EvalReport, ProbeReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub accuracy: BTreeMap<Task, f64>,
    pub mean_log_comparison: Option<f64>,
    pub mean_log_negation: Option<f64>,
}

/// Models by rows, tasks by columns, plus the probe means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Row order of the comparison: the base model, Referencing, then the
/// three Narrative variants.
pub const ROW_ORDER: [(&str, &str); 5] = [
    ("base", "Base (pretrained)"),
    ("referencing", "Referencing"),
    ("narrative", "Narrative, plain finetuning"),
    ("lower_only", "Narrative, only lower-third layers"),
    ("forgetting", "Narrative, + active forgetting"),
];

impl ComparisonTable {
    pub fn build(evals: &BTreeMap<String, EvalReport>, probes: &BTreeMap<String, ProbeReport>) -> Self {
        let mut names: Vec<&str> = ROW_ORDER
            .iter()
            .map(|(n, _)| *n)
            .filter(|n| evals.contains_key(*n))
            .collect();
        for k in evals.keys() {
            if !names.contains(&k.as_str()) {
                names.push(k);
            }
        }
        let rows = names
            .into_iter()
            .map(|n| ComparisonRow {
                model: n.to_string(),
                accuracy: evals[n].tasks.iter().map(|(t, s)| (*t, s.accuracy)).collect(),
                mean_log_comparison: probes.get(n).map(|p| p.overall.mean_log_comparison),
                mean_log_negation: probes.get(n).map(|p| p.overall.mean_log_negation),
            })
            .collect();
        ComparisonTable { rows }
    }

    pub fn row(&self, model: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let label = |m: &str| {
            ROW_ORDER
                .iter()
                .find(|(n, _)| *n == m)
                .map(|(_, l)| l.to_string())
                .unwrap_or_else(|| m.to_string())
        };
        let mut header = vec!["Model".to_string()];
        header.extend(Task::ALL.iter().map(|t| t.label().to_string()));
        header.push("log_cmp".into());
        header.push("log_neg".into());
        let mut body: Vec<Vec<String>> = Vec::new();
        for r in &self.rows {
            let mut cells = vec![label(&r.model)];
            for t in Task::ALL {
                cells.push(
                    r.accuracy
                        .get(&t)
                        .map(|a| format!("{:.1}", 100.0 * a))
                        .unwrap_or_else(|| "-".into()),
                );
            }
            for v in [r.mean_log_comparison, r.mean_log_negation] {
                cells.push(v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into()));
            }
            body.push(cells);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                body.iter()
                    .map(|r| r[i].len())
                    .chain([header[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut s = String::new();
        let mut line = |cells: &[String]| {
            for (i, c) in cells.iter().enumerate() {
                if i == 0 {
                    let _ = write!(s, "{c:<w$}", w = widths[0]);
                } else {
                    let _ = write!(s, "  {c:>w$}", w = widths[i]);
                }
            }
            s.push('\n');
        };
        line(&header);
        for r in &body {
            line(r);
        }
        s
    }
}

/// One expected-direction check on the comparison, with its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub holds: bool,
}

/// Checks whether the Narrative and Referencing probes and accuracies point
/// the expected way. Missing rows count as failing.
pub fn direction_checks(table: &ComparisonTable) -> Vec<DirectionCheck> {
    let get = |m: &str| table.row(m);
    let qa = get("narrative").and_then(|r| r.accuracy.get(&Task::Qa).copied()).unwrap_or(f64::NAN);
    let cmp = get("narrative").and_then(|r| r.mean_log_comparison).unwrap_or(f64::NAN);
    let neg = get("narrative").and_then(|r| r.mean_log_negation).unwrap_or(f64::NAN);
    let rneg = get("referencing").and_then(|r| r.mean_log_negation).unwrap_or(f64::NAN);
    let check = |name: &str, value: f64, threshold: f64, holds: bool| DirectionCheck {
        name: name.to_string(),
        value,
        threshold,
        holds,
    };
    vec![
        check("narrative QA accuracy >= threshold", qa, 0.95, qa >= 0.95),
        check("narrative mean log comparison > threshold", cmp, 1.0, cmp > 1.0),
        check(
            "narrative |mean log negation| < threshold (half the log comparison)",
            neg.abs(),
            0.5 * cmp,
            neg.abs() < 0.5 * cmp,
        ),
        check("referencing |mean log negation| >= threshold", rneg.abs(), 0.5, rneg.abs() >= 0.5),
    ]
}

pub fn checks_text(checks: &[DirectionCheck], seeds: &str) -> String {
    let mut s = format!("Expected directions ({seeds}):\n");
    for c in checks {
        let mark = if c.holds { "holds" } else { "NOT MET" };
        let _ = writeln!(s, "  {mark:<7}  {}: {:.3} vs {:.3}", c.name, c.value, c.threshold);
    }
    s
}
