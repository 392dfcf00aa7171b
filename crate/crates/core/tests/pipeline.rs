use factlab::corpus::WorldConfig;
use factlab::pipeline::{artifacts, run_pipeline, write_outputs, ModelShape, PipelineConfig};
use factlab::train::TrainConfig;

fn small() -> PipelineConfig {
    let base = PipelineConfig::default();
    PipelineConfig {
        world: WorldConfig {
            n_countries: 6,
            max_indirect_episodes: 10,
            ..base.world.clone()
        },
        model: ModelShape {
            n_layers: 3,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            init_seed: 3,
        },
        pretrain: TrainConfig {
            n_epochs: 1,
            ..base.pretrain.clone()
        },
        finetune: TrainConfig {
            n_epochs: 1,
            ..base.finetune.clone()
        },
        run_sweeps: true,
        ..base
    }
}

#[test]
fn small_pipeline_produces_every_artifact() {
    factlab::parallel::set_max_threads(1);
    let out = run_pipeline(&small()).unwrap();
    let files = artifacts(&out).unwrap();
    for name in ["base", "narrative", "referencing", "lower_only", "forgetting"] {
        assert!(files.contains_key(&format!("checkpoints/{name}.flab")), "{name}");
        assert!(files.contains_key(&format!("evals/{name}.json")), "{name}");
        assert!(files.contains_key(&format!("probes/{name}.csv")), "{name}");
    }
    assert_eq!(files.keys().filter(|k| k.starts_with("eval_tasks/")).count(), 5);
    for sweep in ["narrative.forward", "narrative.backward", "referencing.forward", "referencing.backward"] {
        let csv = String::from_utf8(files[&format!("sweeps/{sweep}.csv")].clone()).unwrap();
        assert!(csv.lines().count() > 1, "{sweep}");
    }
    assert_eq!(out.forgetting.checkpoint.meta.base_ref, out.narrative.meta.base_ref);
    assert!(out.table.row("forgetting").is_some());

    let dir = tempfile::tempdir().unwrap();
    let listed = write_outputs(&out, dir.path()).unwrap();
    assert_eq!(listed.len(), files.len());
    assert!(dir.path().join("timings.json").exists());

    let again = artifacts(&run_pipeline(&small()).unwrap()).unwrap();
    assert_eq!(files, again);
}
