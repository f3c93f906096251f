//! Reproducible experiments: simulate data, run inversions, sweep the
//! Gramian threshold, add noise.
//!
//! Every command writes into one output directory:
//!
//! ```text
//! data/perturbed.lsl  data/background.lsl  truth.csv
//! <mode>.csv  <mode>.json                  (invert)
//! sweep/alpha_<i>.csv|json  sweep_summary.csv
//! noise/level_<i>.csv|json  noise_summary.csv
//! internal/<tag>_<jj>.csv                  (export_internal)
//! manifest_<command>.json
//! ```
//!
//! All files except the manifest depend only on the config and seed. Wall
//! times live in the manifest.

pub mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{LslError, Result};
use crate::forward::{add_noise, generate_dataset, GridSpec, TransferDataset};
use crate::inversion::{relative_l2_error, run_mode, write_field_csv, BackgroundModel, InversionSettings, Mode};
use crate::rom::{build_rom, rom_health};

pub use config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Invert,
    Sweep,
    Noise,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Invert => "invert",
            Command::Sweep => "sweep",
            Command::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Overrides the config seed.
    pub seed: Option<u64>,
    /// Skip stages recorded as done under the same config hash.
    pub resume: bool,
    /// Read `perturbed.lsl` from here instead of simulating.
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub skipped: bool,
    pub diagnostics: Value,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

/// One inversion in a command: a tag naming its files and the settings.
struct Job {
    tag: String,
    dir: &'static str,
    settings: InversionSettings,
    noise: Option<f64>,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    grid: GridSpec,
    out: &'a Path,
    previous: Option<RunManifest>,
}

impl Context<'_> {
    fn reusable(&self, name: &str) -> Option<StageRecord> {
        let stage = self.previous.as_ref()?.stage(name)?;
        let complete = stage.outputs.iter().all(|p| self.out.join(p).is_file());
        complete.then(|| StageRecord {
            skipped: true,
            ..stage.clone()
        })
    }
}

pub fn execute(command: Command, config: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    config.validate()?;
    let out = opts.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| LslError::io(out, e))?;
    let hash = config.hash();
    let manifest_path = out.join(format!("manifest_{}.json", command.as_str()));
    let previous = if opts.resume {
        read_manifest(&manifest_path)?.filter(|m| m.config_hash == hash)
    } else {
        None
    };
    let ctx = Context {
        config: &config,
        grid: config.grid_spec()?,
        out,
        previous,
    };

    let mut stages = Vec::new();
    let (simulate_stage, data) = simulate_stage(&ctx, opts.data.as_deref())?;
    stages.push(simulate_stage);

    let jobs = match command {
        Command::Simulate => Vec::new(),
        Command::Invert => invert_jobs(&config),
        Command::Sweep => sweep_jobs(&config)?,
        Command::Noise => noise_jobs(&config)?,
    };
    if !jobs.is_empty() {
        let data = match data {
            Some(d) => d,
            None => TransferDataset::read(&out.join("data/perturbed.lsl"))?,
        };
        let background = BackgroundModel::new(&ctx.grid, config.kind, &config.lambdas, &config.source_set(&ctx.grid)?)?;
        let records: Vec<Result<StageRecord>> = jobs
            .par_iter()
            .map(|job| match ctx.reusable(&job.tag) {
                Some(record) => Ok(record),
                None => run_job(&ctx, job, &data, &background),
            })
            .collect();
        for r in records {
            stages.push(r?);
        }
        match command {
            Command::Sweep => stages.push(summary_stage(&ctx, "sweep_summary.csv", "alpha", &stages[1..])?),
            Command::Noise => stages.push(summary_stage(&ctx, "noise_summary.csv", "percent", &stages[1..])?),
            _ => {}
        }
    }

    let mut outputs: Vec<String> = stages.iter().flat_map(|s| s.outputs.iter().cloned()).collect();
    outputs.dedup();
    let manifest = RunManifest {
        command: command.as_str().into(),
        config: config.name.clone(),
        config_hash: hash,
        seed: config.seed,
        stages,
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text + "\n").map_err(|e| LslError::io(&manifest_path, e))?;
    Ok(manifest)
}

fn read_manifest(path: &Path) -> Result<Option<RunManifest>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| LslError::io(path, e))?;
    // A manifest from an older layout is just not reused.
    Ok(serde_json::from_str(&text).ok())
}

fn simulate_stage(ctx: &Context, external: Option<&Path>) -> Result<(StageRecord, Option<TransferDataset>)> {
    let start = Instant::now();
    if let Some(dir) = external {
        let path = dir.join("perturbed.lsl");
        let data = TransferDataset::read(&path)?;
        if data.lambdas != ctx.config.lambdas || data.kind != ctx.config.kind {
            return Err(LslError::Config(format!(
                "{}: dataset does not match the config (kind or spectral points differ)",
                path.display()
            )));
        }
        let record = StageRecord {
            name: "load".into(),
            seconds: start.elapsed().as_secs_f64(),
            skipped: false,
            diagnostics: json!({ "source": path.display().to_string() }),
            outputs: Vec::new(),
        };
        return Ok((record, Some(data)));
    }
    if let Some(record) = ctx.reusable("simulate") {
        return Ok((record, None));
    }
    let config = ctx.config;
    let grid = ctx.grid;
    let sources = config.source_set(&grid)?;
    let field = config.true_field(&grid);
    let data = generate_dataset(&grid, &field, &config.lambdas, &sources)?;
    let background = generate_dataset(
        &grid,
        &crate::forward::CoefficientField::background(config.kind, &grid),
        &config.lambdas,
        &sources,
    )?;
    let files = ["data/perturbed.lsl", "data/background.lsl", "truth.csv"];
    std::fs::create_dir_all(ctx.out.join("data")).map_err(|e| LslError::io(ctx.out.join("data"), e))?;
    data.write(&ctx.out.join(files[0]))?;
    background.write(&ctx.out.join(files[1]))?;
    write_field_csv(&grid, &field.perturbation(), &ctx.out.join(files[2]))?;
    let health = rom_health(&build_rom(&data)?)?;
    let record = StageRecord {
        name: "simulate".into(),
        seconds: start.elapsed().as_secs_f64(),
        skipped: false,
        diagnostics: json!({
            "nodes": grid.node_count(),
            "sources": sources.len(),
            "spectral_points": config.lambdas.len(),
            "rom": health,
        }),
        outputs: files.iter().map(|s| s.to_string()).collect(),
    };
    Ok((record, Some(data)))
}

fn invert_jobs(config: &ExperimentConfig) -> Vec<Job> {
    let mut jobs: Vec<Job> = Vec::new();
    for settings in &config.runs {
        let mut tag = settings.mode.as_str().to_string();
        let repeats = jobs.iter().filter(|j| j.settings.mode == settings.mode).count();
        if repeats > 0 {
            tag = format!("{tag}_{repeats}");
        }
        jobs.push(Job {
            tag,
            dir: "",
            settings: *settings,
            noise: None,
        });
    }
    jobs
}

fn sweep_jobs(config: &ExperimentConfig) -> Result<Vec<Job>> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| LslError::Config("config has no [sweep] section".into()))?;
    Ok(sweep
        .gramian_thresholds
        .iter()
        .zip(&sweep.pinv_thresholds)
        .enumerate()
        .map(|(i, (&g, &p))| Job {
            tag: format!("alpha_{i}"),
            dir: "sweep",
            settings: InversionSettings::new(Mode::RegLsl, g, p),
            noise: None,
        })
        .collect())
}

fn noise_jobs(config: &ExperimentConfig) -> Result<Vec<Job>> {
    let noise = config
        .noise
        .as_ref()
        .ok_or_else(|| LslError::Config("config has no [noise] section".into()))?;
    Ok(noise
        .percents
        .iter()
        .enumerate()
        .map(|(i, &pct)| Job {
            tag: format!("level_{i}"),
            dir: "noise",
            settings: InversionSettings::new(noise.mode, noise.gramian_threshold, noise.pinv_for(i)),
            noise: Some(pct),
        })
        .collect())
}

fn run_job(ctx: &Context, job: &Job, clean: &TransferDataset, background: &BackgroundModel) -> Result<StageRecord> {
    let start = Instant::now();
    let config = ctx.config;
    let grid = ctx.grid;
    let noisy;
    let data = match job.noise {
        Some(pct) => {
            noisy = add_noise(clean, &background.data0, pct, config.seed)?;
            &noisy
        }
        None => clean,
    };
    let outcome = run_mode(data, background, &job.settings)?;
    let truth = config.true_field(&grid).perturbation();
    let mask = config.error_mask(&grid);
    let weights = grid.weights();
    let l2 = relative_l2_error(&outcome.result.estimate, &truth, &weights, mask.as_deref());

    let base = if job.dir.is_empty() {
        job.tag.clone()
    } else {
        format!("{}/{}", job.dir, job.tag)
    };
    let csv = format!("{base}.csv");
    let meta = format!("{base}.json");
    write_field_csv(&grid, &outcome.result.estimate, &ctx.out.join(&csv))?;
    let diagnostics = json!({
        "tag": job.tag,
        "settings": job.settings,
        "noise_percent": job.noise,
        "l2_error": finite_or_null(l2),
        "rows": outcome.result.rows,
        "retained_singular_values": outcome.result.retained_singular_values,
        "residual_norm": outcome.result.residual_norm,
        "model": outcome.diagnostics,
    });
    let text = serde_json::to_string_pretty(&diagnostics).expect("diagnostics serialize");
    write_text(&ctx.out.join(&meta), &(text + "\n"))?;
    let mut outputs = vec![csv, meta];
    if config.export_internal && job.settings.mode != Mode::Born {
        let dir = ctx.out.join("internal");
        for path in outcome.internal.write_csv(&dir, &job.tag)? {
            let name = path.file_name().expect("csv file name").to_string_lossy();
            outputs.push(format!("internal/{name}"));
        }
    }
    Ok(StageRecord {
        name: job.tag.clone(),
        seconds: start.elapsed().as_secs_f64(),
        skipped: false,
        diagnostics,
        outputs,
    })
}

fn summary_stage(ctx: &Context, file: &str, key: &str, stages: &[StageRecord]) -> Result<StageRecord> {
    let mut text = format!("{key},pinv_threshold,retained,l2_error\n");
    for s in stages {
        let d = &s.diagnostics;
        let value = match key {
            "alpha" => d["settings"]["gramian_threshold"].clone(),
            _ => d["noise_percent"].clone(),
        };
        text.push_str(&format!(
            "{},{},{},{}\n",
            value, d["settings"]["pinv_threshold"], d["model"]["retained"], d["l2_error"]
        ));
    }
    write_text(&ctx.out.join(file), &text)?;
    Ok(StageRecord {
        name: file.trim_end_matches(".csv").into(),
        seconds: 0.0,
        skipped: false,
        diagnostics: Value::Null,
        outputs: vec![file.into()],
    })
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| LslError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| LslError::io(path, e))
}
