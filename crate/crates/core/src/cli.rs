//! Command-line front end. Every subcommand resolves the config the same way,
//! writes into `<out>/<name>/`, and on failure leaves `error.json` there.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ExperimentConfig, Materialized, Resolved};
use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::eval::{
    ood_csv, ood_detection, run_robustness, run_suite, summary_csv, uncertainty_field, write_field, write_manifest,
    AttackRun, AttackSummary, ExperimentResult, OodAuroc, Task,
};
use crate::metrics::ModelKind;
use crate::models::{train, Checkpoint, Model};
use crate::nn::accuracy;
use crate::rng::derive_seed;

#[derive(Debug, Parser)]
#[command(name = "uqbench", version, about = "Train, attack and probe uncertainty-aware classifiers")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; the run directory is `<out>/<name>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Restrict to one model (bnn, deep-ensemble, mc-dropout, swag, duq, sngp).
    #[arg(long, global = true)]
    pub model: Option<ModelKind>,
    #[arg(long, global = true)]
    pub dataset: Option<DatasetKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train models and write checkpoints.
    Train,
    /// Attack trained models through a proxy (needs checkpoints).
    Attack,
    /// Score OoD detection of trained models (needs checkpoints).
    Ood,
    /// Write 2-D uncertainty fields of trained models (needs checkpoints).
    Field,
    /// Train and run every configured task.
    Suite,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Attack => "attack",
            Command::Ood => "ood",
            Command::Field => "field",
            Command::Suite => "suite",
        }
    }
}

/// Applies config file, dataset override and flag overrides.
pub fn resolve(common: &Common) -> Result<Resolved> {
    let mut resolved = match &common.config {
        Some(path) => ExperimentConfig::load(path, common.dataset)?,
        None => ExperimentConfig::parse("", common.dataset)?,
    };
    let cfg = &mut resolved.config;
    let mut flagged = Vec::new();
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
        flagged.push("seeds");
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
        flagged.push("out");
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
        flagged.push("jobs");
    }
    if let Some(model) = common.model {
        cfg.models = vec![model];
        flagged.push("models");
    }
    for (path, note) in &mut resolved.provenance {
        if flagged.contains(&path.as_str()) {
            *note = "command-line flag".into();
        }
    }
    resolved.config.validate()?;
    Ok(resolved)
}

#[derive(Serialize)]
struct ErrorFile<'a> {
    command: &'a str,
    kind: &'a str,
    exit_code: u8,
    message: String,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        _ => 3,
    }
}

/// Parses arguments, runs the subcommand and maps errors to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let resolved = resolve(&cli.common);
    let run_dir = resolved
        .as_ref()
        .map(|r| r.config.run_dir())
        .unwrap_or_else(|_| cli.common.out.clone().unwrap_or_else(|| PathBuf::from("runs")));
    let result = resolved.and_then(|r| run(cli.command, &r));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e}");
            let file = ErrorFile {
                command: cli.command.name(),
                kind: if code == 2 { "config" } else { "execution" },
                exit_code: code,
                message: e.to_string(),
            };
            let written = std::fs::create_dir_all(&run_dir).is_ok()
                && serde_json::to_string_pretty(&file)
                    .ok()
                    .is_some_and(|s| std::fs::write(run_dir.join("error.json"), s + "\n").is_ok());
            if !written {
                eprintln!("could not write {}", run_dir.join("error.json").display());
            }
            ExitCode::from(code)
        }
    }
}

fn prepare_run_dir(r: &Resolved) -> Result<PathBuf> {
    let dir = r.config.run_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let stale = dir.join("error.json");
    if stale.exists() {
        std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    write(&dir.join("resolved.toml"), &r.config.to_toml()?)?;
    write(&dir.join("provenance.csv"), &r.provenance_csv())?;
    write_manifest(&r.config, &dir)?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_path(run_dir: &Path, model: ModelKind, seed: u64) -> PathBuf {
    run_dir.join("checkpoints").join(format!("{}-{seed}.json", model.name()))
}

fn load_model(run_dir: &Path, dataset: DatasetKind, model: ModelKind, seed: u64) -> Result<Model> {
    let ck = Checkpoint::load(&checkpoint_path(run_dir, model, seed))?;
    if ck.dataset != dataset || ck.model.kind() != model {
        return Err(Error::invalid(format!(
            "checkpoint holds {} on {}, expected {model} on {dataset}",
            ck.model.kind(),
            ck.dataset
        )));
    }
    Ok(ck.model)
}

/// Executes one subcommand against a resolved config.
pub fn run(command: Command, r: &Resolved) -> Result<()> {
    let cfg = &r.config;
    if command == Command::Suite {
        prepare_run_dir(r)?;
        let outcome = run_suite(cfg)?;
        for res in &outcome.results {
            print_result(res);
        }
        println!("wrote {}", outcome.run_dir.display());
        return match outcome.results.iter().find(|x| !x.is_ok()) {
            Some(bad) => Err(Error::invalid(format!(
                "{} {} failed: {}",
                bad.model,
                bad.task,
                bad.error.as_deref().unwrap_or("")
            ))),
            None => Ok(()),
        };
    }
    let dir = prepare_run_dir(r)?;
    let data: Vec<Materialized> = cfg.seeds.iter().map(|&s| cfg.dataset.materialize(s)).collect::<Result<_>>()?;
    match command {
        Command::Train => {
            std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir.join("checkpoints"), e))?;
            for (d, &seed) in data.iter().zip(&cfg.seeds) {
                for &kind in &cfg.models {
                    let model = train(kind, &cfg.model, &d.train, seed)?;
                    let acc = accuracy(&model.predict(d.test.features(), derive_seed(seed, 100))?, d.test.labels());
                    let path = checkpoint_path(&dir, kind, seed);
                    Checkpoint::new(cfg.dataset.kind, seed, model).save(&path)?;
                    println!("{kind:<14} seed {seed:<6} test accuracy {acc:.4}  -> {}", path.display());
                }
            }
        }
        Command::Attack => {
            let adv_dir = dir.join("adversarial");
            std::fs::create_dir_all(&adv_dir).map_err(|e| Error::io(&adv_dir, e))?;
            let mut results = Vec::new();
            for &kind in &cfg.models {
                let mut runs = Vec::new();
                for (d, &seed) in data.iter().zip(&cfg.seeds) {
                    let model = load_model(&dir, cfg.dataset.kind, kind, seed)?;
                    let out = run_robustness(
                        &model,
                        &d.train,
                        &d.test,
                        &cfg.attack.spec(),
                        &cfg.attack.proxy,
                        cfg.attack.calibrate.as_ref(),
                        derive_seed(seed, 101),
                    )?;
                    out.batch.write_csv(&adv_dir.join(format!("{}-{seed}.csv", kind.name())))?;
                    for w in &out.warnings {
                        eprintln!("warning: {kind} seed {seed}: {w}");
                    }
                    runs.push(AttackRun::from(&out));
                }
                let clean = runs.iter().map(|a| a.clean_accuracy).sum::<f64>() / runs.len() as f64;
                let mut res = row(cfg, kind, Task::Robustness, clean);
                res.attack = AttackSummary::from_runs(&runs);
                print_result(&res);
                results.push(res);
            }
            write(&dir.join("summary.csv"), &summary_csv(&results))?;
        }
        Command::Ood => {
            let mut results = Vec::new();
            for &kind in &cfg.models {
                let mut all = Vec::new();
                let mut clean = 0.0;
                for (d, &seed) in data.iter().zip(&cfg.seeds) {
                    let model = load_model(&dir, cfg.dataset.kind, kind, seed)?;
                    clean += accuracy(&model.predict(d.test.features(), derive_seed(seed, 100))?, d.test.labels());
                    all.push(ood_detection(&model, &d.test, &d.ood, derive_seed(seed, 102))?);
                }
                let mut res = row(cfg, kind, Task::Ood, clean / cfg.seeds.len() as f64);
                res.ood = OodAuroc::mean(&all);
                print_result(&res);
                results.push(res);
            }
            write(&dir.join("ood_auroc.csv"), &ood_csv(&results))?;
        }
        Command::Field => {
            let fields = dir.join("fields");
            std::fs::create_dir_all(&fields).map_err(|e| Error::io(&fields, e))?;
            let seed = cfg.seeds[0];
            for &kind in &cfg.models {
                let model = load_model(&dir, cfg.dataset.kind, kind, seed)?;
                let f = uncertainty_field(&model, data[0].train.features(), &cfg.field.grid(), derive_seed(seed, 105))?;
                write_field(&f, kind, &fields, cfg.field.pgm)?;
                println!("{kind:<14} field {}x{} -> {}", f.resolution, f.resolution, fields.display());
            }
        }
        Command::Suite => unreachable!(),
    }
    Ok(())
}

fn row(cfg: &ExperimentConfig, model: ModelKind, task: Task, clean_accuracy: f64) -> ExperimentResult {
    ExperimentResult {
        dataset: cfg.dataset.kind,
        model,
        task,
        clean_accuracy,
        attack: None,
        ood: None,
        sweep: None,
        restart: None,
        seeds: cfg.seeds.clone(),
        wall_clock: 0.0,
        error: None,
        warnings: vec![],
    }
}

fn print_result(r: &ExperimentResult) {
    let mut line = format!("{:<14} {:<15} clean {:.4}", r.model, r.task, r.clean_accuracy);
    if let Some(a) = &r.attack {
        line += &format!(
            "  proxy {:.4} adv {:.4} mean-l2 {:.4}",
            a.proxy_accuracy, a.adversarial_accuracy, a.mean_l2
        );
    }
    if let Some(o) = &r.ood {
        line += &format!("  epistemic AUROC {:.4}", o.epistemic);
    }
    if let Some(s) = &r.restart {
        line += &format!("  field distance cross-seed {:.4} same-seed {:.4}", s.cross_seed, s.same_seed);
    }
    if let Some(e) = &r.error {
        line += &format!("  ERROR {e}");
    }
    println!("{line}");
}
