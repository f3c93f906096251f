use std::path::Path;

use lsl_core::experiment::{execute, Command, ExperimentConfig, RunOptions};
use lsl_core::forward::TransferDataset;

const SMALL: &str = r#"
name = "small"
kind = "schrodinger"
seed = 7
lambdas = [2.0, 4.0, 8.0, 16.0]
export_internal = true

[grid]
dimension = 1
lower = 0.0
upper = 1.0
spacing = 0.01

[sources]
layout = "siso"

[[bumps]]
amplitude = 0.5
center = [0.3]
deviation = [0.06]

[[runs]]
mode = "born"
pinv_threshold = 1e-4

[[runs]]
mode = "reg_lsl"
gramian_threshold = 1e-12
pinv_threshold = 1e-4

[[runs]]
mode = "reg_lsl"
gramian_threshold = 1e-6
pinv_threshold = 1e-4

[sweep]
gramian_thresholds = [1e-6, 1e-12]
pinv_thresholds = [1e-4, 1e-4]

[noise]
percents = [0.0, 1.0]
pinv_thresholds = [1e-4]
gramian_threshold = 1e-12
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::parse(SMALL).unwrap()
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions {
        out: dir.to_path_buf(),
        ..Default::default()
    }
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let config = ExperimentConfig::load(&path).unwrap();
        assert_eq!(
            ExperimentConfig::parse(&config.to_toml()).unwrap(),
            config,
            "{}",
            path.display()
        );
        count += 1;
    }
    assert_eq!(count, 4);
}

#[test]
fn invert_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = execute(Command::Invert, &small(), &opts(dir.path())).unwrap();
    let names: Vec<&str> = manifest.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["simulate", "born", "reg_lsl", "reg_lsl_1"]);
    for file in &manifest.outputs {
        assert!(dir.path().join(file).is_file(), "{file}");
    }
    assert!(manifest.outputs.contains(&"internal/reg_lsl_1_03.csv".to_string()));
    assert!(!manifest.outputs.iter().any(|f| f.starts_with("internal/born")));
    let meta: serde_json::Value = serde_json::from_str(&read(dir.path(), "reg_lsl.json")).unwrap();
    assert!(meta["l2_error"].as_f64().unwrap() < 1.0);
    assert_eq!(meta["rows"], 4);
    assert_eq!(read(dir.path(), "truth.csv").lines().count(), 102);
}

#[test]
fn same_seed_same_bytes_and_seed_override_changes_noise() {
    let config = small();
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    execute(Command::Noise, &config, &opts(a.path())).unwrap();
    execute(Command::Noise, &config, &opts(b.path())).unwrap();
    let reseeded = RunOptions {
        seed: Some(8),
        ..opts(c.path())
    };
    let manifest = execute(Command::Noise, &config, &reseeded).unwrap();
    assert_eq!(manifest.seed, 8);
    for file in [
        "noise/level_0.csv",
        "noise/level_1.csv",
        "noise_summary.csv",
        "data/perturbed.lsl",
    ] {
        assert_eq!(read(a.path(), file), read(b.path(), file), "{file}");
    }
    // Zero noise does not depend on the seed; one percent does.
    assert_eq!(read(a.path(), "noise/level_0.csv"), read(c.path(), "noise/level_0.csv"));
    assert_ne!(read(a.path(), "noise/level_1.csv"), read(c.path(), "noise/level_1.csv"));
}

#[test]
fn resume_skips_finished_stages_only_for_the_same_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = small();
    execute(Command::Sweep, &config, &opts(dir.path())).unwrap();
    let before = read(dir.path(), "sweep/alpha_1.csv");

    let resume = RunOptions {
        resume: true,
        ..opts(dir.path())
    };
    let again = execute(Command::Sweep, &config, &resume).unwrap();
    assert!(again
        .stages
        .iter()
        .filter(|s| s.name != "sweep_summary")
        .all(|s| s.skipped));
    assert_eq!(read(dir.path(), "sweep/alpha_1.csv"), before);

    std::fs::remove_file(dir.path().join("sweep/alpha_0.json")).unwrap();
    let repaired = execute(Command::Sweep, &config, &resume).unwrap();
    assert!(!repaired.stage("alpha_0").unwrap().skipped);
    assert!(repaired.stage("alpha_1").unwrap().skipped);

    let mut changed = config.clone();
    changed.bumps[0].amplitude = 0.4;
    let rerun = execute(Command::Sweep, &changed, &resume).unwrap();
    assert!(rerun.stages.iter().all(|s| !s.skipped));
    assert_ne!(read(dir.path(), "sweep/alpha_1.csv"), before);
}

#[test]
fn external_data_gives_the_same_reconstruction() {
    let (sim, direct, loaded) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    let config = small();
    execute(Command::Simulate, &config, &opts(sim.path())).unwrap();
    execute(Command::Invert, &config, &opts(direct.path())).unwrap();
    let with_data = RunOptions {
        data: Some(sim.path().join("data")),
        ..opts(loaded.path())
    };
    let manifest = execute(Command::Invert, &config, &with_data).unwrap();
    assert_eq!(manifest.stages[0].name, "load");
    assert_eq!(read(direct.path(), "reg_lsl.csv"), read(loaded.path(), "reg_lsl.csv"));

    let data = TransferDataset::read(&sim.path().join("data/perturbed.lsl")).unwrap();
    assert_eq!(data.lambdas, config.lambdas);
}

#[test]
fn mismatched_external_data_is_rejected() {
    let (sim, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    execute(Command::Simulate, &small(), &opts(sim.path())).unwrap();
    let mut other = small();
    other.lambdas = vec![1.0, 3.0, 9.0, 27.0];
    let with_data = RunOptions {
        data: Some(sim.path().join("data")),
        ..opts(out.path())
    };
    let err = execute(Command::Invert, &other, &with_data).unwrap_err();
    assert_eq!(err.category(), "config");
}

#[test]
fn summaries_have_one_line_per_job() {
    let dir = tempfile::tempdir().unwrap();
    execute(Command::Sweep, &small(), &opts(dir.path())).unwrap();
    let sweep = read(dir.path(), "sweep_summary.csv");
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[0], "alpha,pinv_threshold,retained,l2_error");
    assert_eq!(lines.len(), 3);
    assert!(
        lines[1].starts_with("1e-6,") || lines[1].starts_with("0.000001,"),
        "{}",
        lines[1]
    );
}

#[test]
fn missing_sections_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small();
    config.sweep = None;
    config.noise = None;
    for command in [Command::Sweep, Command::Noise] {
        assert_eq!(
            execute(command, &config, &opts(dir.path())).unwrap_err().category(),
            "config"
        );
    }
}
