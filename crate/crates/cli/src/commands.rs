use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use factlab::corpus::{
    audit_cooccurrence, build_base_world, builtin_animal_facts, generate_eval_tasks,
    load_builtin_facts, render_narrative, render_referencing, EvalItem, FactRegistry, Passage,
    Style, Task, Vocabulary, WorldConfig,
};
use factlab::interventions::{
    active_forget_train, lower_only_baseline, sweep, Direction, ForgettingSchedule,
};
use factlab::io::{read_json, read_jsonl, to_jsonl};
use factlab::model::init_params;
use factlab::pipeline::{artifacts, run_pipeline, ComparisonTable, ModelShape, PipelineConfig};
use factlab::probe::{build_probe_items, evaluate, probe_all, EvalReport, FewShotConfig, ProbeReport};
use factlab::train::{load_checkpoint, loss_curve_csv, train, Checkpoint, TrainConfig};

use crate::args::*;
use crate::manifest::Session;
use crate::{fail, EXIT_IO, EXIT_USAGE, EXIT_VALIDATION};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => gen(a, cli.force),
        Command::Vocab(a) => vocab(a, cli.force),
        Command::Pretrain(a) => pretrain(a, cli.force),
        Command::Train(a) => finetune(a, cli.force),
        Command::Forget(a) => forget(a, cli.force),
        Command::Ablate(a) => ablate(a, cli.force),
        Command::Probe(a) => probe(a, cli.force),
        Command::Eval(a) => eval(a, cli.force),
        Command::Grid(a) => grid(a, cli.force),
        Command::Report(a) => report(a, cli.force),
        Command::Run(a) => full_run(a, cli.force),
    }
}

fn must_exist(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(fail(EXIT_IO, format!("{}: no such file or directory", path.display())));
    }
    Ok(())
}

fn registry(session: &mut Session, path: Option<&Path>) -> Result<FactRegistry> {
    match path {
        Some(p) => {
            must_exist(p)?;
            session.input(p)?;
            Ok(FactRegistry::load(p)?)
        }
        None => Ok(load_builtin_facts()),
    }
}

fn passages(session: &mut Session, path: &Path) -> Result<Vec<Passage>> {
    must_exist(path)?;
    session.input(path)?;
    Ok(read_jsonl(path)?)
}

fn vocabulary(session: &mut Session, path: &Path) -> Result<Vocabulary> {
    must_exist(path)?;
    session.input(path)?;
    Ok(Vocabulary::load(path)?)
}

fn checkpoint(session: &mut Session, path: &Path, vocab: &Vocabulary) -> Result<Checkpoint> {
    must_exist(path)?;
    session.input(path)?;
    let ck = load_checkpoint(path)?;
    if ck.model.config.vocab_size != vocab.len() {
        return Err(fail(
            EXIT_VALIDATION,
            format!(
                "{}: model vocabulary size {} does not match the vocabulary ({})",
                path.display(),
                ck.model.config.vocab_size,
                vocab.len()
            ),
        ));
    }
    Ok(ck)
}

fn json_file<T: serde::de::DeserializeOwned>(session: &mut Session, path: &Path) -> Result<T> {
    must_exist(path)?;
    session.input(path)?;
    Ok(read_json(path)?)
}

/// Evaluation items from files and directories of `*.jsonl`, in path order.
fn evalset(session: &mut Session, paths: &[PathBuf]) -> Result<Vec<EvalItem>> {
    let mut files = Vec::new();
    for p in paths {
        must_exist(p)?;
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    let mut items = Vec::new();
    for f in files {
        session.input(&f)?;
        items.extend(read_jsonl::<EvalItem>(&f)?);
    }
    if items.is_empty() {
        return Err(fail(EXIT_USAGE, "evaluation set is empty"));
    }
    Ok(items)
}

fn train_config(session: &mut Session, opts: &TrainOpts) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &opts.config {
        Some(p) => json_file(session, p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = opts.lr {
        cfg.peak_lr = v;
    }
    if let Some(v) = opts.epochs {
        cfg.n_epochs = v;
    }
    if let Some(v) = opts.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = opts.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fewshot(opts: &FewShotOpts) -> FewShotConfig {
    FewShotConfig {
        k: opts.k,
        demo_seed: opts.demo_seed,
        max_new_tokens: opts.max_new_tokens,
        mc_ranking: opts.mc_ranking,
    }
}

fn write_model(session: &mut Session, stem: &str, ck: &Checkpoint) -> Result<()> {
    session.output(format!("{stem}.flab"), ck.to_bytes()?);
    session.output(format!("{stem}.loss.csv"), loss_curve_csv(&ck.meta).into_bytes());
    Ok(())
}

fn gen(a: &GenArgs, force: bool) -> Result<()> {
    let mut s = Session::new("gen", &a.out, force);
    let defaults = PipelineConfig::default();
    #[derive(Serialize)]
    struct Resolved<'a> {
        style: &'a str,
        seed: u64,
        negatives: usize,
        world: Option<WorldConfig>,
    }
    match a.style {
        GenStyle::Narrative | GenStyle::Referencing => {
            let reg = registry(&mut s, a.registry.as_deref())?;
            let (name, seed, corpus) = if a.style == GenStyle::Narrative {
                let seed = a.seed.unwrap_or(defaults.narrative_seed);
                ("narrative", seed, render_narrative(&reg, seed)?)
            } else {
                let seed = a.seed.unwrap_or(defaults.referencing_seed);
                ("referencing", seed, render_referencing(&reg, a.negatives, seed)?)
            };
            s.config(&Resolved {
                style: name,
                seed,
                negatives: a.negatives,
                world: None,
            });
            s.output(format!("{name}.jsonl"), to_jsonl(&corpus).into_bytes());
            s.json(format!("{name}.audit.json"), &audit_cooccurrence(&corpus, &reg));
        }
        GenStyle::PretrainWorld => {
            let mut world: WorldConfig = match &a.world {
                Some(p) => json_file(&mut s, p)?,
                None => WorldConfig::default(),
            };
            if let Some(seed) = a.seed {
                world.seed = seed;
            }
            let built = build_base_world(&world)?;
            s.config(&Resolved {
                style: "pretrain_world",
                seed: world.seed,
                negatives: a.negatives,
                world: Some(world),
            });
            s.output("world.jsonl", to_jsonl(&built.passages).into_bytes());
            s.json("world_registry.json", &built.registry.facts);
        }
        GenStyle::EvalTasks => {
            let reg = registry(&mut s, a.registry.as_deref())?;
            let seed = a.seed.unwrap_or(defaults.eval_seed);
            s.config(&Resolved {
                style: "eval_tasks",
                seed,
                negatives: a.negatives,
                world: None,
            });
            for (task, items) in generate_eval_tasks(&reg, &builtin_animal_facts(), seed)? {
                s.output(format!("{}.jsonl", task.label()), to_jsonl(&items).into_bytes());
            }
        }
    }
    s.commit()?;
    Ok(())
}

fn vocab(a: &VocabArgs, force: bool) -> Result<()> {
    let mut s = Session::new("vocab", &a.out, force);
    let mut texts = Vec::new();
    for path in &a.corpora {
        must_exist(path)?;
        s.input(path)?;
        let rows: Vec<serde_json::Value> = read_jsonl(path)?;
        for row in rows {
            if let Some(t) = row.get("text").and_then(|v| v.as_str()) {
                texts.push(t.to_string());
            } else if let Ok(item) = serde_json::from_value::<EvalItem>(row) {
                texts.push(item.solved());
                texts.extend(item.choices.into_iter().flatten());
            } else {
                return Err(fail(
                    EXIT_USAGE,
                    format!("{}: rows must be passages or evaluation items", path.display()),
                ));
            }
        }
    }
    let reg = registry(&mut s, a.registry.as_deref())?;
    for fact in &reg.facts {
        let (factual, negated) = factlab::probe::probe_prompts(fact);
        texts.push(factual);
        texts.push(negated);
    }
    texts.extend(reg.entity_pools.values().flatten().cloned());
    let corpus: Vec<Passage> = texts
        .into_iter()
        .map(|t| Passage::from_text(t, Style::Narrative))
        .collect();
    let v = Vocabulary::build(&corpus, &[])?;
    log::info!("vocabulary of {} tokens", v.len());
    s.json("vocab.json", &v);
    s.commit()?;
    Ok(())
}

fn pretrain(a: &PretrainArgs, force: bool) -> Result<()> {
    let mut s = Session::new("pretrain", &a.out, force);
    let v = vocabulary(&mut s, &a.vocab)?;
    let corpus = passages(&mut s, &a.corpus)?;
    let shape: ModelShape = match &a.model {
        Some(p) => json_file(&mut s, p)?,
        None => ModelShape::default(),
    };
    let cfg = train_config(&mut s, &a.train)?;
    let mc = shape.config(v.len(), a.max_seq_len);
    s.config(&serde_json::json!({ "model": mc, "train": cfg }));
    let init = Checkpoint::from_model(init_params(&mc)?);
    let ck = train(&init, &corpus, &v, &cfg)?;
    write_model(&mut s, "base", &ck)?;
    s.commit()?;
    Ok(())
}

fn finetune(a: &TrainArgs, force: bool) -> Result<()> {
    let mut s = Session::new("train", &a.out, force);
    let v = vocabulary(&mut s, &a.vocab)?;
    let base = checkpoint(&mut s, &a.base, &v)?;
    let corpus = passages(&mut s, &a.corpus)?;
    let cfg = train_config(&mut s, &a.train)?;
    s.config(&serde_json::json!({ "train": cfg, "lower_only": a.lower_only }));
    let (stem, ck) = if a.lower_only {
        ("lower_only", lower_only_baseline(&base, &corpus, &v, &cfg)?)
    } else {
        ("finetuned", train(&base, &corpus, &v, &cfg)?)
    };
    write_model(&mut s, stem, &ck)?;
    s.commit()?;
    Ok(())
}

fn forget(a: &ForgetArgs, force: bool) -> Result<()> {
    let mut s = Session::new("forget", &a.out, force);
    let v = vocabulary(&mut s, &a.vocab)?;
    let base = checkpoint(&mut s, &a.base, &v)?;
    let corpus = passages(&mut s, &a.corpus)?;
    let schedule: ForgettingSchedule = match &a.schedule {
        Some(p) => json_file(&mut s, p)?,
        None => {
            let cfg = train_config(&mut s, &a.train)?;
            let mut sch = ForgettingSchedule::upper_two_thirds(base.model.config.n_layers, cfg);
            sch.pass2.seed = sch.pass1.seed.wrapping_add(1);
            sch
        }
    };
    s.config(&schedule);
    let run = active_forget_train(&base, &corpus, &v, &schedule)?;
    write_model(&mut s, "forgetting", &run.checkpoint)?;
    s.commit()?;
    Ok(())
}

fn ablate(a: &AblateArgs, force: bool) -> Result<()> {
    let mut s = Session::new("ablate", &a.out, force);
    let direction = Direction::parse(&a.direction).ok_or_else(|| {
        fail(EXIT_USAGE, format!("unknown direction `{}` (forward or backward)", a.direction))
    })?;
    let v = vocabulary(&mut s, &a.vocab)?;
    let base = checkpoint(&mut s, &a.base, &v)?;
    let finetuned = checkpoint(&mut s, &a.finetuned, &v)?;
    let items = evalset(&mut s, &a.fewshot.evalset)?;
    let fs = fewshot(&a.fewshot);
    s.config(&serde_json::json!({ "direction": direction.label(), "fewshot": fs }));
    let r = sweep(&base.model, &finetuned, &v, &items, direction, &fs)?;
    let label = direction.label();
    s.output(format!("sweep_{label}.csv"), r.to_csv().into_bytes());
    s.json(format!("sweep_{label}.summary.json"), &r.summary());
    s.commit()?;
    Ok(())
}

fn probe(a: &ProbeArgs, force: bool) -> Result<()> {
    let mut s = Session::new("probe", &a.out, force);
    let v = vocabulary(&mut s, &a.vocab)?;
    let ck = checkpoint(&mut s, &a.checkpoint, &v)?;
    let reg = registry(&mut s, a.registry.as_deref())?;
    s.config(&serde_json::json!({ "distractors": a.distractors, "seed": a.seed }));
    let items = build_probe_items(&reg, a.distractors, a.seed)?;
    let r = probe_all(&ck.model, &v, &items)?;
    s.json("probe.json", &r);
    s.output("probe.csv", r.to_csv().into_bytes());
    s.commit()?;
    Ok(())
}

fn eval(a: &EvalArgs, force: bool) -> Result<()> {
    let mut s = Session::new("eval", &a.out, force);
    let v = vocabulary(&mut s, &a.vocab)?;
    let ck = checkpoint(&mut s, &a.checkpoint, &v)?;
    let items = evalset(&mut s, &a.fewshot.evalset)?;
    let fs = fewshot(&a.fewshot);
    s.config(&fs);
    let r = evaluate(&ck.model, &v, &items, &fs)?;
    for (task, score) in &r.tasks {
        log::info!("{task}: {:.3} ({}/{})", score.accuracy, score.n_correct, score.n_items);
    }
    s.json("eval.json", &r);
    s.output("eval.csv", r.to_csv().into_bytes());
    s.commit()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct GridCell {
    peak_lr: f64,
    n_epochs: usize,
    objective: Option<f64>,
    final_loss: Option<f64>,
    error: Option<String>,
}

/// Highest objective, then lowest final loss, then lowest learning rate.
fn better(a: &GridCell, b: &GridCell) -> bool {
    let (Some(oa), Some(ob)) = (a.objective, b.objective) else {
        return a.objective.is_some();
    };
    if oa != ob {
        return oa > ob;
    }
    let la = a.final_loss.unwrap_or(f64::INFINITY);
    let lb = b.final_loss.unwrap_or(f64::INFINITY);
    if la != lb {
        return la < lb;
    }
    a.peak_lr < b.peak_lr
}

fn grid(a: &GridArgs, force: bool) -> Result<()> {
    let mut s = Session::new("grid", &a.out, force);
    let task = Task::parse(&a.objective)
        .ok_or_else(|| fail(EXIT_USAGE, format!("unknown task `{}`", a.objective)))?;
    let v = vocabulary(&mut s, &a.vocab)?;
    let base = checkpoint(&mut s, &a.base, &v)?;
    let corpus = passages(&mut s, &a.corpus)?;
    let items = evalset(&mut s, &a.fewshot.evalset)?;
    let template = train_config(&mut s, &a.train)?;
    let fs = fewshot(&a.fewshot);
    s.config(&serde_json::json!({
        "lrs": a.lrs, "epochs": a.epochs, "objective": task, "train": template, "fewshot": fs,
    }));

    let mut cells = Vec::new();
    let mut best: Option<(usize, Checkpoint)> = None;
    for &lr in &a.lrs {
        for &epochs in &a.epochs {
            let cfg = TrainConfig {
                peak_lr: lr,
                n_epochs: epochs,
                ..template.clone()
            };
            let outcome = cfg
                .validate()
                .and_then(|_| train(&base, &corpus, &v, &cfg))
                .and_then(|ck| evaluate(&ck.model, &v, &items, &fs).map(|r| (ck, r)));
            let cell = match outcome {
                Ok((ck, r)) => {
                    let cell = GridCell {
                        peak_lr: lr,
                        n_epochs: epochs,
                        objective: Some(r.accuracy(task).unwrap_or(0.0)),
                        final_loss: ck.meta.epoch_losses.last().map(|e| e.loss),
                        error: None,
                    };
                    if best.as_ref().is_none_or(|(i, _)| better(&cell, &cells[*i])) {
                        best = Some((cells.len(), ck));
                    }
                    cell
                }
                Err(e) => {
                    log::warn!("cell lr={lr} epochs={epochs} failed: {e}");
                    GridCell {
                        peak_lr: lr,
                        n_epochs: epochs,
                        objective: None,
                        final_loss: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            cells.push(cell);
        }
    }
    let mut csv = String::from("peak_lr,n_epochs,objective,final_loss,error\n");
    for c in &cells {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            c.peak_lr,
            c.n_epochs,
            opt(c.objective),
            opt(c.final_loss),
            c.error.as_deref().unwrap_or("").replace(',', ";")
        ));
    }
    s.output("grid.csv", csv.into_bytes());
    let best_idx = best.as_ref().map(|(i, _)| *i);
    s.json(
        "grid.json",
        &serde_json::json!({ "objective": task, "cells": cells, "best": best_idx }),
    );
    match best {
        Some((_, ck)) => write_model(&mut s, "best", &ck)?,
        None => {
            s.commit()?;
            return Err(fail(EXIT_VALIDATION, "every grid cell failed"));
        }
    }
    s.commit()?;
    Ok(())
}

fn named_paths(specs: &[String]) -> Result<Vec<(String, PathBuf)>> {
    specs
        .iter()
        .map(|spec| {
            spec.split_once('=')
                .map(|(n, p)| (n.to_string(), PathBuf::from(p)))
                .ok_or_else(|| fail(EXIT_USAGE, format!("expected name=path, got `{spec}`")))
        })
        .collect()
}

fn report(a: &ReportArgs, force: bool) -> Result<()> {
    let mut s = Session::new("report", &a.out, force);
    let mut evals: BTreeMap<String, EvalReport> = BTreeMap::new();
    for (name, path) in named_paths(&a.evals)? {
        evals.insert(name, json_file(&mut s, &path)?);
    }
    let mut probes: BTreeMap<String, ProbeReport> = BTreeMap::new();
    for (name, path) in named_paths(&a.probes)? {
        probes.insert(name, json_file(&mut s, &path)?);
    }
    if evals.is_empty() && probes.is_empty() {
        return Err(fail(EXIT_USAGE, "nothing to report: pass --eval or --probe"));
    }
    let table = ComparisonTable::build(&evals, &probes);
    s.config(&serde_json::json!({ "evals": a.evals, "probes": a.probes }));
    print!("{}", table.to_text());
    s.json("report.json", &table);
    s.output("report.txt", table.to_text().into_bytes());
    s.commit()?;
    Ok(())
}

fn full_run(a: &RunArgs, force: bool) -> Result<()> {
    let mut s = Session::new("run", &a.out, force);
    let mut config: PipelineConfig = match &a.config {
        Some(p) => json_file(&mut s, p)?,
        None => PipelineConfig::default(),
    };
    if a.no_sweeps {
        config.run_sweeps = false;
    }
    s.config(&config);
    let out = run_pipeline(&config)?;
    for (rel, bytes) in artifacts(&out)? {
        s.output(rel, bytes);
    }
    let mut timings = serde_json::to_vec_pretty(&out.seconds)?;
    timings.push(b'\n');
    s.volatile("timings.json", timings);
    print!("{}", out.table.to_text());
    s.commit()?;
    Ok(())
}
