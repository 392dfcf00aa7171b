use std::collections::HashMap;

use super::*;
use crate::corpus::tasks::{builtin_animal_facts, generate_eval_tasks};
use crate::corpus::{load_builtin_facts, render_narrative, EvalItem, Task, Vocabulary};
use crate::model::{init_params, LanguageModel, Logits, ModelConfig, ModelState};

fn evalset() -> Vec<EvalItem> {
    let reg = load_builtin_facts();
    generate_eval_tasks(&reg, &builtin_animal_facts(), 3)
        .unwrap()
        .into_values()
        .flatten()
        .collect()
}

fn vocab_for(items: &[ProbeItem], evalset: &[EvalItem]) -> Vocabulary {
    let reg = load_builtin_facts();
    let corpus = render_narrative(&reg, 1).unwrap();
    let mut extra: Vec<String> = items
        .iter()
        .flat_map(|i| [i.negated_prompt.clone(), i.distractors.join(" ")])
        .collect();
    extra.extend(evalset.iter().map(|e| e.solved()));
    Vocabulary::build(&corpus, &extra).unwrap()
}

fn random_model(vocab: &Vocabulary, seed: u64) -> ModelState {
    let mut c = ModelConfig {
        n_layers: 3,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size: vocab.len(),
        max_seq_len: 256,
        init_seed: seed,
    };
    c.init_seed = seed;
    let mut s = init_params(&c).unwrap();
    // Larger weights than the init so the ratios are far from zero.
    for t in s.tensors.values_mut() {
        for v in &mut t.data {
            *v *= 20.0;
        }
    }
    s
}

#[test]
fn probe_items_shape() {
    let reg = load_builtin_facts();
    let items = build_probe_items(&reg, 3, 5).unwrap();
    assert_eq!(items.len(), 40);
    let a = items.iter().find(|i| i.fact_id == "capital_city:Andoria").unwrap();
    assert_eq!(a.factual_prompt, "The capital city of Andoria is");
    assert_eq!(a.negated_prompt, "The capital city of Andoria is not");
    assert_eq!(a.tail, "Copperton");
    for it in &items {
        assert_eq!(it.distractors.len(), 3);
        assert!(!it.distractors.contains(&it.tail));
        let mut d = it.distractors.clone();
        d.dedup();
        assert_eq!(d.len(), 3);
        let f: Vec<&str> = it.factual_prompt.split(' ').collect();
        let n: Vec<&str> = it.negated_prompt.split(' ').collect();
        assert_eq!(n.len(), f.len() + 1);
        let at = f.iter().zip(&n).position(|(a, b)| a != b).unwrap_or(f.len());
        assert_eq!(n[at], "not");
        assert_eq!(&n[..at], &f[..at]);
        assert_eq!(&n[at + 1..], &f[at..]);
    }
    let famous = items.iter().find(|i| i.relation == "famous_for").unwrap();
    assert!(famous.factual_prompt.ends_with("is famous for its"));
    assert!(famous.negated_prompt.ends_with("is not famous for its"));
    assert!(build_probe_items(&reg, 20, 5).is_err());
}

#[test]
fn degenerate_distractor_gives_ratio_one() {
    let reg = load_builtin_facts();
    let mut items = build_probe_items(&reg, 3, 5).unwrap();
    let vocab = vocab_for(&items, &[]);
    let m = random_model(&vocab, 1);
    let it = &mut items[0];
    it.distractors = vec![it.tail.clone()];
    assert_eq!(comparison_ratio(&m, &vocab, it).unwrap(), 1.0);
}

/// Scores a continuation one full forward pass per token.
fn naive_logprob(m: &ModelState, prompt: &[u32], cont: &[u32]) -> f64 {
    let mut seq = prompt.to_vec();
    let mut total = 0.0;
    for &t in cont {
        let l = m.forward_logits(&seq).unwrap();
        let row: Vec<f64> = l.last().unwrap().iter().map(|&v| v as f64).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += row[t as usize] - lse;
        seq.push(t);
    }
    total
}

#[test]
fn ratios_match_naive_scorer() {
    let reg = load_builtin_facts();
    let items = build_probe_items(&reg, 3, 5).unwrap();
    let vocab = vocab_for(&items, &[]);
    let m = random_model(&vocab, 2);
    let enc = |p: &str| {
        let mut v = vec![vocab.special().bos];
        v.extend(vocab.encode(p));
        v
    };
    for it in &items {
        let lt = naive_logprob(&m, &enc(&it.factual_prompt), &vocab.encode(&it.tail));
        let mean_d = it
            .distractors
            .iter()
            .map(|d| naive_logprob(&m, &enc(&it.factual_prompt), &vocab.encode(d)))
            .sum::<f64>()
            / it.distractors.len() as f64;
        let ln = naive_logprob(&m, &enc(&it.negated_prompt), &vocab.encode(&it.tail));
        let cmp = comparison_ratio(&m, &vocab, it).unwrap();
        let neg = negation_ratio(&m, &vocab, it).unwrap();
        let (want_c, want_n) = ((lt - mean_d).exp(), (lt - ln).exp());
        assert!((cmp - want_c).abs() <= 1e-5 * want_c, "{cmp} vs {want_c}");
        assert!((neg - want_n).abs() <= 1e-5 * want_n, "{neg} vs {want_n}");
        // And exactly the log-difference of the scoring primitive.
        let sp = m.sequence_logprob(&enc(&it.factual_prompt), &vocab.encode(&it.tail)).unwrap()
            - m.sequence_logprob(&enc(&it.negated_prompt), &vocab.encode(&it.tail)).unwrap();
        assert!((log_negation_ratio(&m, &vocab, it).unwrap() - sp).abs() < 1e-9);
    }
}

#[test]
fn report_aggregates_recompute() {
    let reg = load_builtin_facts();
    let items = build_probe_items(&reg, 3, 5).unwrap();
    let vocab = vocab_for(&items, &[]);
    let m = random_model(&vocab, 3);
    let hash = m.content_hash();
    let r = probe_all(&m, &vocab, &items).unwrap();
    assert_eq!(m.content_hash(), hash);
    assert_eq!(r.rows.len(), 40);
    assert!(!r.negation_flagged);
    let n = r.rows.len() as f64;
    let mean = r.rows.iter().map(|x| x.log_comparison).sum::<f64>() / n;
    assert!((mean - r.overall.mean_log_comparison).abs() < 1e-12);
    let mean_n = r.rows.iter().map(|x| x.log_negation).sum::<f64>() / n;
    assert!((mean_n - r.overall.mean_log_negation).abs() < 1e-12);
    for row in &r.rows {
        let m = row.pairwise.iter().sum::<f64>() / row.pairwise.len() as f64;
        assert!((m - row.log_comparison).abs() < 1e-12);
        assert!(row.log_comparison.exp() > 0.0);
    }
    assert_eq!(r.per_relation.len(), 2);
    assert_eq!(r.per_relation["capital_city"].n, 20);
    let csv = r.to_csv();
    assert!(csv.starts_with("fact_id,log_comparison,log_negation\n"));
    assert_eq!(csv.lines().count(), 41);
    assert!(probe_all(&m, &vocab, &[]).is_err());
}

#[test]
fn missing_negation_is_flagged() {
    let reg = load_builtin_facts();
    let items = build_probe_items(&reg, 3, 5).unwrap();
    let corpus = render_narrative(&reg, 1).unwrap();
    let mut extra: Vec<String> = items.iter().map(|i| i.distractors.join(" ")).collect();
    extra.push("its".into());
    let vocab = Vocabulary::build(&corpus, &extra).unwrap();
    assert!(!vocab.contains("not"));
    let m = random_model(&vocab, 4);
    let r = probe_all(&m, &vocab, &items).unwrap();
    assert!(r.negation_flagged);
    assert!(r.rows.iter().all(|x| x.log_negation.is_finite()));
}

/// Answers every known prompt with its gold string, or a fixed token.
struct Stub {
    answers: HashMap<Vec<u32>, Vec<u32>>,
    fixed: Option<u32>,
    vocab: usize,
}

impl LanguageModel for Stub {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn max_seq_len(&self) -> usize {
        512
    }

    fn forward_logits(&self, tokens: &[u32]) -> crate::Result<Logits> {
        Ok(Logits {
            vocab: self.vocab,
            data: vec![0.0; tokens.len() * self.vocab],
        })
    }

    fn greedy_generate(&self, prompt: &[u32], _stop: &[u32], max_new: usize) -> crate::Result<Vec<u32>> {
        if let Some(t) = self.fixed {
            return Ok(vec![t; max_new.min(1)]);
        }
        for (q, a) in &self.answers {
            if prompt.ends_with(q) {
                return Ok(a.clone());
            }
        }
        Ok(Vec::new())
    }
}

#[test]
fn stub_models_score_one_and_zero() {
    let items = evalset();
    let vocab = vocab_for(&[], &items);
    let answers = items
        .iter()
        .map(|it| (vocab.encode(&it.prompt), vocab.encode(&it.gold)))
        .collect();
    let oracle = Stub {
        answers,
        fixed: None,
        vocab: vocab.len(),
    };
    let r = evaluate(&oracle, &vocab, &items, &FewShotConfig::default()).unwrap();
    assert_eq!(r.tasks.len(), 5);
    for s in r.tasks.values() {
        assert_eq!(s.accuracy, 1.0);
    }
    let wrong = Stub {
        answers: HashMap::new(),
        fixed: Some(vocab.id("?").unwrap()),
        vocab: vocab.len(),
    };
    let r = evaluate(&wrong, &vocab, &items, &FewShotConfig::default()).unwrap();
    for s in r.tasks.values() {
        assert_eq!(s.accuracy, 0.0);
    }
    assert_eq!(r.records.len(), items.len());
    assert!(r.to_csv().starts_with("task,item_id,correct\n"));
}

#[test]
fn demos_are_disjoint_and_counted() {
    let items = evalset();
    let vocab = vocab_for(&[], &items);
    let cfg = FewShotConfig::default();
    let prepared = eval::prepare(&vocab, &items, &cfg, 4096).unwrap();
    let qa: Vec<_> = prepared.iter().filter(|p| items[p.index].task == Task::Qa).collect();
    assert_eq!(qa.len(), 40);
    for p in &prepared {
        let q = &items[p.index];
        assert_eq!(p.demos.len(), 5);
        assert_eq!(p.prompt.matches("Answer:").count(), 6);
        assert_eq!(p.prompt.lines().count(), 6);
        for &d in &p.demos {
            assert_eq!(items[d].task, q.task);
            assert!(items[d].fact_ids.iter().all(|f| !q.fact_ids.contains(f)));
            assert!(p.prompt.contains(&items[d].solved()));
        }
        assert!(p.prompt.ends_with(&q.prompt));
    }
    let zero = FewShotConfig { k: 0, ..cfg };
    for p in eval::prepare(&vocab, &items, &zero, 4096).unwrap() {
        assert!(p.demos.is_empty());
        assert_eq!(p.prompt, items[p.index].prompt);
    }
}

#[test]
fn overflow_names_item() {
    let items = evalset();
    let vocab = vocab_for(&[], &items);
    let m = random_model(&vocab, 5);
    let mut small = m.config.clone();
    small.max_seq_len = 40;
    let m = init_params(&small).unwrap();
    match evaluate(&m, &vocab, &items, &FewShotConfig::default()) {
        Err(crate::Error::ContextOverflow { item, .. }) => assert!(!item.is_empty()),
        other => panic!("expected overflow, got {other:?}"),
    }
}

#[test]
fn evaluation_is_deterministic_and_read_only() {
    let items: Vec<EvalItem> = evalset().into_iter().filter(|i| i.task == Task::Qa).collect();
    let vocab = vocab_for(&[], &items);
    let m = random_model(&vocab, 6);
    let h = m.content_hash();
    let cfg = FewShotConfig { k: 2, ..Default::default() };
    let a = evaluate(&m, &vocab, &items, &cfg).unwrap();
    let b = evaluate(&m, &vocab, &items, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(m.content_hash(), h);
    assert_eq!(a.metadata.checkpoint_hash.as_deref(), Some(h.as_str()));
    let ranked = evaluate(&m, &vocab, &items, &FewShotConfig { mc_ranking: true, ..cfg }).unwrap();
    assert_eq!(ranked.records.len(), items.len());
}

#[test]
fn removing_wrong_item_never_lowers_accuracy() {
    let rec = |id: &str, ok: bool| EvalRecord {
        item_id: id.into(),
        task: Task::Qa,
        prompt: String::new(),
        gold: String::new(),
        generated: String::new(),
        correct: ok,
        demo_ids: vec![],
    };
    let records = vec![rec("a", true), rec("b", false), rec("c", true), rec("d", false)];
    let base = summarize(&records)[&Task::Qa].accuracy;
    assert_eq!(base, 0.5);
    for i in [1, 3] {
        let mut fewer = records.clone();
        fewer.remove(i);
        assert!(summarize(&fewer)[&Task::Qa].accuracy >= base);
    }
    assert!(exact_match("  Copperton \n", "Copperton"));
    assert!(!exact_match("copperton", "Copperton"));
}
