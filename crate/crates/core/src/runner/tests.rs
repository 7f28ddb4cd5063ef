use std::fs;

use super::*;
use crate::metrics::read_distribution_json;
use crate::trainer::{AblationFlags, TrainerConfig};

const MINIMAL: &str = r#"{
  "dataset": {"kind": "synthetic", "num_classes": 4, "dim": 6, "samples_per_class": 20, "spread": 0.5},
  "variants": [{"name": "BIR(w/ IR)"}]
}"#;

fn tiny_config(variants: &[&str]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(MINIMAL).unwrap();
    cfg.variants = variants.iter().map(|v| VariantSpec::named(v)).collect();
    let t = &mut cfg.trainer;
    t.num_tasks = 2;
    t.epochs_per_task = 1;
    t.batch_size = 16;
    t.network.perceptual_dims = vec![8];
    t.network.fc_dims = vec![8, 8];
    t.network.latent_dim = 3;
    t.pretrain.epochs = 1;
    t.diagnostics.importance_samples = 4;
    cfg.validate().unwrap();
    cfg
}

fn config_key(err: crate::Error) -> (String, String) {
    match err {
        crate::Error::Config { key, message } => (key, message),
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn minimal_config_gets_documented_defaults() {
    let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
    assert_eq!(cfg.trainer, TrainerConfig::default());
    assert_eq!(cfg.seeds, vec![0]);
    assert_eq!(cfg.output_dir, None);
    assert_eq!(cfg.variants[0].resolved_flags().unwrap(), AblationFlags::bir(true, false));
}

#[test]
fn unknown_and_mistyped_keys_are_named() {
    let text = MINIMAL.replace(r#""variants""#, r#""trainer": {"epochs_per_tsk": 3}, "variants""#);
    let (key, msg) = config_key(ExperimentConfig::parse(&text).unwrap_err());
    assert_eq!(key, "trainer.epochs_per_tsk");
    assert!(msg.contains("epochs_per_tsk"), "{msg}");

    let text = MINIMAL.replace(r#""variants""#, r#""trainer": {"si": {"c": "big"}}, "variants""#);
    let (key, _) = config_key(ExperimentConfig::parse(&text).unwrap_err());
    assert_eq!(key, "trainer.si.c");

    let text = MINIMAL.replace(r#""spread": 0.5"#, r#""spread": 0.5, "sprad": 1"#);
    let (key, msg) = config_key(ExperimentConfig::parse(&text).unwrap_err());
    assert!(key.starts_with("dataset"), "{key}");
    assert!(msg.contains("sprad"), "{msg}");

    let (_, msg) = config_key(ExperimentConfig::parse(r#"{"dataset": {"kind": "synthetic", "num_classes": 4, "dim": 6, "samples_per_class": 20, "spread": 0.5}}"#).unwrap_err());
    assert!(msg.contains("variants"), "{msg}");
}

#[test]
fn semantic_checks_name_their_keys() {
    let mut cfg = ExperimentConfig::parse(MINIMAL).unwrap();
    cfg.seeds.clear();
    assert_eq!(config_key(cfg.validate().unwrap_err()).0, "seeds");

    let mut cfg = ExperimentConfig::parse(MINIMAL).unwrap();
    cfg.variants.push(VariantSpec::named("BIR(w/ IR)"));
    assert_eq!(config_key(cfg.validate().unwrap_err()).0, "variants[1].name");

    let mut cfg = ExperimentConfig::parse(MINIMAL).unwrap();
    cfg.variants = vec![VariantSpec::named("mystery")];
    assert_eq!(config_key(cfg.validate().unwrap_err()).0, "variants[0].flags");

    let mut cfg = ExperimentConfig::parse(MINIMAL).unwrap();
    cfg.variants.clear();
    assert_eq!(config_key(cfg.validate().unwrap_err()).0, "variants");

    let mut cfg = ExperimentConfig::parse(MINIMAL).unwrap();
    cfg.trainer.learning_rate = 0.0;
    assert_eq!(config_key(cfg.validate().unwrap_err()).0, "trainer.learning_rate");

    let text = r#"{"dataset": {"kind": "cifar", "train": "/nonexistent/train.bin", "test": "/nonexistent/test.bin"},
                   "variants": [{"name": "fine_tuning"}]}"#;
    assert_eq!(config_key(ExperimentConfig::parse(text).unwrap_err()).0, "dataset.train");
}

#[test]
fn echo_is_a_fixed_point() {
    let mut cfg = ExperimentConfig::parse(MINIMAL).unwrap();
    cfg.variants.push(VariantSpec {
        name: "custom".into(),
        flags: Some(AblationFlags::fine_tuning()),
    });
    cfg.seeds = vec![3, 1];
    cfg.trainer.learning_rate = 0.1 + 0.2;
    cfg.trainer.replay_weight = Some(1.0 / 3.0);
    let echo = cfg.canonical_echo().unwrap();
    let back = ExperimentConfig::parse(&echo).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.canonical_echo().unwrap(), echo);
    let first_keys: Vec<&str> = echo.lines().filter(|l| l.starts_with("  \"")).collect();
    let mut sorted = first_keys.clone();
    sorted.sort();
    assert_eq!(first_keys, sorted);
}

#[test]
fn restrict_filters_variants_and_seeds() {
    let mut cfg = tiny_config(&["BIR(w/ IR)", "fine_tuning"]);
    cfg.restrict(&["fine_tuning".into()], &[5, 6]).unwrap();
    assert_eq!(cfg.variants.len(), 1);
    assert_eq!(cfg.seeds, vec![5, 6]);
    assert!(cfg.restrict(&["nope".into()], &[]).is_err());
}

#[test]
fn slugs_are_path_safe() {
    assert_eq!(slugify("BIR(w/ IR)"), "BIR_w_IR");
    assert_eq!(slugify("BIR+SI(w/o IR)"), "BIR+SI_w_o_IR");
    assert_eq!(slugify("fine_tuning"), "fine_tuning");
    assert_eq!(slugify("//"), "variant");
}

#[test]
fn output_dir_precedence() {
    let mut cfg = tiny_config(&["fine_tuning"]);
    assert_eq!(resolve_output_dir(Some(Path::new("a")), &cfg), PathBuf::from("a"));
    cfg.output_dir = Some("b".into());
    assert_eq!(resolve_output_dir(None, &cfg), PathBuf::from("b"));
}

#[test]
fn matrix_writes_reproducible_results_and_exports() {
    let cfg = tiny_config(&["BIR(w/ IR)", "BIR(w/o IR)"]);
    let data = cfg.dataset.load().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let outcome = run_matrix_on(&cfg, &data, a.path()).unwrap();
    assert!(outcome.is_success());
    run_matrix_on(&cfg, &data, b.path()).unwrap();
    assert_eq!(outcome.summary.keys().collect::<Vec<_>>(), vec!["BIR(w/ IR)", "BIR(w/o IR)"]);

    for v in &cfg.variants {
        let (da, db) = (run_dir(a.path(), v, 0), run_dir(b.path(), v, 0));
        for f in [
            ACCURACY_FILE,
            METRICS_FILE,
            LOG_LIKELIHOOD_FILE,
            RECONSTRUCTION_FILE,
            EMBEDDINGS_FILE,
            PROJECTION_FILE,
            SILHOUETTE_FILE,
        ] {
            assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
        }
        assert!(da.join("ckpt_task2.bin").is_file());
        assert!(da.join(TIMINGS_FILE).is_file());
    }
    assert_eq!(
        fs::read_to_string(a.path().join(CONFIG_FILE)).unwrap(),
        cfg.canonical_echo().unwrap()
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert!(summary.get("BIR(w/o IR)").is_some());

    let bundle = load_results(a.path()).unwrap();
    let plots = a.path().join("plots");
    let files = export_plot_data(&bundle, &plots).unwrap();
    assert_eq!(files.len(), 8);
    let text = fs::read_to_string(plots.join("forgetting_per_task.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "task,BIR(w/ IR),BIR(w/o IR)");
    assert_eq!(lines.len(), 1 + cfg.trainer.num_tasks + 1);
    assert!(lines[3].starts_with("mean,"));
    for col in 1..=2 {
        let vals: Vec<f64> = lines[1..3].iter().map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
        let m: f64 = lines[3].split(',').nth(col).unwrap().parse().unwrap();
        assert!((m - vals.iter().sum::<f64>() / 2.0).abs() < 1e-12);
    }
    let hist = fs::read_to_string(plots.join("histogram_reconstruction_error.csv")).unwrap();
    for v in ["BIR(w/ IR)", "BIR(w/o IR)"] {
        let total: usize = hist
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(&format!("{v},")))
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, data.test.len());
    }
}

#[test]
fn failing_variant_leaves_others_intact() {
    let mut cfg = tiny_config(&["BIR(w/o IR)", "BIR(w/ IR)"]);
    cfg.trainer.diagnostics.common_level = Some(0);
    let data = cfg.dataset.load().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_matrix_on(&cfg, &data, dir.path()).unwrap();
    assert!(!outcome.is_success());
    assert_eq!(outcome.failures.len(), 1);
    assert_eq!(outcome.failures[0].variant, "BIR(w/ IR)");
    assert_eq!(outcome.summary.keys().collect::<Vec<_>>(), vec!["BIR(w/o IR)"]);
    let manifest: Vec<RunFailure> =
        serde_json::from_str(&fs::read_to_string(dir.path().join(FAILURES_FILE)).unwrap()).unwrap();
    assert_eq!(manifest, outcome.failures);
    let ok = run_dir(dir.path(), &cfg.variants[0], 0);
    assert_eq!(
        read_distribution_json(&ok.join(RECONSTRUCTION_FILE)).unwrap().model_variant,
        "BIR(w/o IR)"
    );
    let err = load_results(dir.path()).unwrap_err();
    assert!(matches!(err, crate::Error::Export(ref m) if m.contains(ACCURACY_FILE)), "{err}");
}
