//! The default end-to-end recipe: generate corpora, pretrain on the base
//! world, finetune on Narrative and Referencing, then probe, evaluate,
//! sweep and run active forgetting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::report::{checks_text, direction_checks, ComparisonTable};
use crate::corpus::tasks::{builtin_animal_facts, generate_eval_tasks};
use crate::corpus::{
    audit_cooccurrence, build_base_world, load_builtin_facts, render_narrative, render_referencing,
    BaseWorld, CooccurrenceAudit, EvalItem, FactRegistry, Passage, Task, Vocabulary,
};
use crate::error::Result;
use crate::interventions::{
    active_forget_train, lower_only_baseline, sweep, AblationSweepResult, Direction,
    ForgettingRun, ForgettingSchedule,
};
use crate::io::{sha256_hex, to_jsonl, write_atomic, write_json};
use crate::model::init_params;
use crate::probe::{build_probe_items, evaluate, probe_all, EvalReport, ProbeItem, ProbeReport};
use crate::train::{
    estimate_entropy_floor, loss_curve_csv, train, Checkpoint, LayerSelector, TrainConfig,
};

/// Generated inputs shared by every stage.
#[derive(Debug, Clone)]
pub struct Data {
    pub registry: FactRegistry,
    pub world: BaseWorld,
    pub narrative: Vec<Passage>,
    pub referencing: Vec<Passage>,
    pub eval_tasks: BTreeMap<Task, Vec<EvalItem>>,
    pub evalset: Vec<EvalItem>,
    pub probe_items: Vec<ProbeItem>,
    pub vocab: Vocabulary,
    pub max_seq_len: usize,
    pub audits: BTreeMap<String, BTreeMap<String, CooccurrenceAudit>>,
}

pub fn prepare_data(config: &PipelineConfig) -> Result<Data> {
    let registry = load_builtin_facts();
    let world = build_base_world(&config.world)?;
    let narrative = render_narrative(&registry, config.narrative_seed)?;
    let referencing =
        render_referencing(&registry, config.referencing_negatives, config.referencing_seed)?;
    let eval_tasks = generate_eval_tasks(&registry, &builtin_animal_facts(), config.eval_seed)?;
    let evalset: Vec<EvalItem> = eval_tasks.values().flatten().cloned().collect();
    let probe_items =
        build_probe_items(&registry, config.probe_distractors, config.probe_seed)?;

    let mut extra: Vec<String> = evalset.iter().map(EvalItem::solved).collect();
    for p in &probe_items {
        extra.push(p.negated_prompt.clone());
        extra.extend(p.distractors.iter().cloned());
    }
    let all: Vec<Passage> = world
        .passages
        .iter()
        .chain(&narrative)
        .chain(&referencing)
        .cloned()
        .collect();
    let vocab = Vocabulary::build(&all, &extra)?;

    let longest_passage = all
        .iter()
        .map(|p| vocab.encode_sequence(&p.text).len())
        .max()
        .unwrap_or(1);
    let prepared = crate::probe::eval::prepare(&vocab, &evalset, &config.fewshot, usize::MAX)?;
    let longest_prompt = prepared
        .iter()
        .map(|p| p.ids.len() + config.fewshot.max_new_tokens)
        .max()
        .unwrap_or(1);
    let max_seq_len = longest_passage.max(longest_prompt).div_ceil(8) * 8;

    let mut audits = BTreeMap::new();
    audits.insert("narrative".to_string(), audit_cooccurrence(&narrative, &registry));
    audits.insert("referencing".to_string(), audit_cooccurrence(&referencing, &registry));
    Ok(Data {
        registry,
        world,
        narrative,
        referencing,
        eval_tasks,
        evalset,
        probe_items,
        vocab,
        max_seq_len,
        audits,
    })
}

/// Pretrains a fresh model on the base world.
pub fn pretrain(data: &Data, config: &PipelineConfig) -> Result<Checkpoint> {
    let mc = config.model.config(data.vocab.len(), data.max_seq_len);
    let init = Checkpoint::from_model(init_params(&mc)?);
    log::info!(
        "pretraining {} params on {} passages",
        init.model.n_params(),
        data.world.passages.len()
    );
    train(&init, &data.world.passages, &data.vocab, &config.pretrain)
}

pub const MODEL_NAMES: [&str; 5] = ["base", "narrative", "referencing", "lower_only", "forgetting"];

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub config: PipelineConfig,
    pub data: Data,
    pub base: Checkpoint,
    pub narrative: Checkpoint,
    pub referencing: Checkpoint,
    pub lower_only: Checkpoint,
    pub forgetting: ForgettingRun,
    pub floors: BTreeMap<String, f64>,
    pub evals: BTreeMap<String, EvalReport>,
    pub probes: BTreeMap<String, ProbeReport>,
    pub sweeps: BTreeMap<String, AblationSweepResult>,
    pub table: ComparisonTable,
    pub seconds: BTreeMap<String, f64>,
}

impl Outputs {
    pub fn checkpoint(&self, name: &str) -> Option<&Checkpoint> {
        match name {
            "base" => Some(&self.base),
            "narrative" => Some(&self.narrative),
            "referencing" => Some(&self.referencing),
            "lower_only" => Some(&self.lower_only),
            "forgetting" => Some(&self.forgetting.checkpoint),
            _ => None,
        }
    }
}

/// The finetunes of one seed: plain Narrative, Referencing, lower-only and
/// forgetting, each from the same base, with the wall time of each.
#[derive(Debug, Clone)]
pub struct Finetunes {
    pub narrative: Checkpoint,
    pub referencing: Checkpoint,
    pub lower_only: Checkpoint,
    pub forgetting: ForgettingRun,
    pub seconds: BTreeMap<String, f64>,
}

fn timed<T>(seconds: &mut BTreeMap<String, f64>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("finetune: {name}");
    let t = Instant::now();
    let out = f()?;
    seconds.insert(name.to_string(), t.elapsed().as_secs_f64());
    Ok(out)
}

pub fn finetune_all(data: &Data, base: &Checkpoint, config: &PipelineConfig) -> Result<Finetunes> {
    let matched = config.matched_finetune();
    let mut seconds = BTreeMap::new();
    let narrative = timed(&mut seconds, "narrative", || {
        train(base, &data.narrative, &data.vocab, &matched)
    })?;
    let referencing = timed(&mut seconds, "referencing", || {
        train(base, &data.referencing, &data.vocab, &matched)
    })?;
    let lower_only = timed(&mut seconds, "lower_only", || {
        lower_only_baseline(base, &data.narrative, &data.vocab, &matched)
    })?;
    let schedule = ForgettingSchedule {
        reset_selector: LayerSelector::upper_two_thirds(base.model.config.n_layers),
        pass1: config.finetune.clone(),
        pass2: TrainConfig {
            seed: config.finetune.seed.wrapping_add(1),
            ..config.finetune.clone()
        },
    };
    let forgetting = timed(&mut seconds, "forgetting", || {
        active_forget_train(base, &data.narrative, &data.vocab, &schedule)
    })?;
    Ok(Finetunes {
        narrative,
        referencing,
        lower_only,
        forgetting,
        seconds,
    })
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<Outputs> {
    let mut seconds = BTreeMap::new();
    let mut t = Instant::now();
    let mut lap = |name: &str, seconds: &mut BTreeMap<String, f64>| {
        seconds.insert(name.to_string(), t.elapsed().as_secs_f64());
        t = Instant::now();
    };
    let data = prepare_data(config)?;
    lap("gen", &mut seconds);
    let base = pretrain(&data, config)?;
    lap("pretrain", &mut seconds);
    let ft = finetune_all(&data, &base, config)?;
    lap("finetune", &mut seconds);
    for (name, secs) in &ft.seconds {
        seconds.insert(format!("finetune.{name}"), *secs);
    }

    let mut floors = BTreeMap::new();
    floors.insert("world".to_string(), estimate_entropy_floor(&data.world.passages, &data.vocab));
    floors.insert("narrative".to_string(), estimate_entropy_floor(&data.narrative, &data.vocab));
    floors.insert("referencing".to_string(), estimate_entropy_floor(&data.referencing, &data.vocab));

    let models: Vec<(&str, &Checkpoint)> = vec![
        ("base", &base),
        ("narrative", &ft.narrative),
        ("referencing", &ft.referencing),
        ("lower_only", &ft.lower_only),
        ("forgetting", &ft.forgetting.checkpoint),
    ];
    let mut probes = BTreeMap::new();
    let mut evals = BTreeMap::new();
    for (name, ck) in &models {
        probes.insert(name.to_string(), probe_all(&ck.model, &data.vocab, &data.probe_items)?);
        evals.insert(
            name.to_string(),
            evaluate(&ck.model, &data.vocab, &data.evalset, &config.fewshot)?,
        );
    }
    lap("probe_eval", &mut seconds);

    let mut sweeps = BTreeMap::new();
    if config.run_sweeps {
        for (name, ck) in [("narrative", &ft.narrative), ("referencing", &ft.referencing)] {
            for dir in [Direction::Forward, Direction::Backward] {
                log::info!("sweep {name} {}", dir.label());
                let r = sweep(&base.model, ck, &data.vocab, &data.evalset, dir, &config.fewshot)?;
                sweeps.insert(format!("{name}.{}", dir.label()), r);
            }
        }
    }
    lap("sweep", &mut seconds);

    let table = ComparisonTable::build(&evals, &probes);
    Ok(Outputs {
        config: config.clone(),
        data,
        base,
        narrative: ft.narrative,
        referencing: ft.referencing,
        lower_only: ft.lower_only,
        forgetting: ft.forgetting,
        floors,
        evals,
        probes,
        sweeps,
        table,
        seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Serializes every artifact in memory, keyed by relative path. Timing
/// information is left out so that identical runs give identical bytes.
pub fn artifacts(out: &Outputs) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    files.insert("config.json".into(), json(&out.config));
    files.insert("corpus/world.jsonl".into(), to_jsonl(&out.data.world.passages).into_bytes());
    files.insert("corpus/world_registry.json".into(), json(&out.data.world.registry.facts));
    files.insert("corpus/narrative.jsonl".into(), to_jsonl(&out.data.narrative).into_bytes());
    files.insert("corpus/referencing.jsonl".into(), to_jsonl(&out.data.referencing).into_bytes());
    for (style, audit) in &out.data.audits {
        files.insert(format!("corpus/{style}.audit.json"), json(audit));
    }
    for (task, items) in &out.data.eval_tasks {
        files.insert(format!("eval_tasks/{}.jsonl", task.label()), to_jsonl(items).into_bytes());
    }
    files.insert("probe_items.json".into(), json(&out.data.probe_items));
    files.insert("vocab.json".into(), json(&out.data.vocab));
    files.insert("entropy_floors.json".into(), json(&out.floors));
    for name in MODEL_NAMES {
        let ck = out.checkpoint(name).expect("known model");
        files.insert(format!("checkpoints/{name}.flab"), ck.to_bytes()?);
        files.insert(format!("loss/{name}.csv"), loss_curve_csv(&ck.meta).into_bytes());
        if let Some(p) = out.probes.get(name) {
            files.insert(format!("probes/{name}.json"), json(p));
            files.insert(format!("probes/{name}.csv"), p.to_csv().into_bytes());
        }
        if let Some(e) = out.evals.get(name) {
            files.insert(format!("evals/{name}.json"), json(e));
            files.insert(format!("evals/{name}.csv"), e.to_csv().into_bytes());
        }
    }
    for (name, s) in &out.sweeps {
        files.insert(format!("sweeps/{name}.csv"), s.to_csv().into_bytes());
        files.insert(format!("sweeps/{name}.summary.json"), json(&s.summary()));
    }
    files.insert("report.json".into(), json(&out.table));
    let checks = direction_checks(&out.table);
    let seeds = format!(
        "pretrain seed {}, finetune seed {}, demo seed {}, init seed {}",
        out.config.pretrain.seed, out.config.finetune.seed, out.config.fewshot.demo_seed, out.config.model.init_seed
    );
    files.insert("checks.json".into(), json(&checks));
    files.insert(
        "report.txt".into(),
        format!("{}\n{}", out.table.to_text(), checks_text(&checks, &seeds)).into_bytes(),
    );
    Ok(files)
}

fn json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

/// Writes all artifacts under `dir` and returns their paths and hashes.
pub fn write_outputs(out: &Outputs, dir: &Path) -> Result<Vec<Artifact>> {
    let files = artifacts(out)?;
    let mut listed = Vec::with_capacity(files.len());
    for (rel, bytes) in &files {
        let path: PathBuf = dir.join(rel);
        write_atomic(&path, bytes)?;
        listed.push(Artifact {
            path: rel.clone(),
            sha256: sha256_hex(bytes),
        });
    }
    write_json(&dir.join("timings.json"), &out.seconds)?;
    Ok(listed)
}
