use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{cosine_distance, uncertainty_field, UncertaintyField};
use super::tasks::{ood_detection, run_manifold_sweep, run_robustness, OodAuroc, RobustnessOutcome};
use super::Task;
use crate::attack::{AttackSpec, Direction};
use crate::config::{ExperimentConfig, Materialized};
use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::metrics::{Channel, ModelKind};
use crate::models::{train, Checkpoint};
use crate::nn::accuracy;
use crate::rng::derive_seed;

/// Models whose fields are compared across restarts.
const RESTART_MODELS: [ModelKind; 3] = [ModelKind::Bnn, ModelKind::McDropout, ModelKind::Swag];

/// Seed-averaged attack outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub proxy_accuracy: f64,
    pub adversarial_accuracy: f64,
    /// Per seed, in config order.
    pub adversarial_per_seed: Vec<f64>,
    pub epsilon: f64,
    /// Mean α (differs from the configured value only under calibration).
    pub alpha: f64,
    pub iterations: usize,
    pub mean_l2: f64,
    pub max_l2: f64,
    pub agreement: f64,
    /// Smallest per-seed fraction of data whose proxy loss never decreased.
    pub monotone_fraction: f64,
}

/// Scalar outcome of one attack, without the adversarial batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRun {
    pub spec: AttackSpec,
    pub clean_accuracy: f64,
    pub proxy_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub mean_l2: f64,
    pub max_l2: f64,
    pub agreement: f64,
    pub monotone_fraction: f64,
}

impl From<&RobustnessOutcome> for AttackRun {
    fn from(r: &RobustnessOutcome) -> Self {
        Self {
            spec: r.spec.clone(),
            clean_accuracy: r.metrics.clean_accuracy,
            proxy_accuracy: r.metrics.proxy_accuracy.unwrap_or(f64::NAN),
            adversarial_accuracy: r.metrics.adversarial_accuracy,
            mean_l2: r.metrics.mean_l2,
            max_l2: r.batch.max_norm(),
            agreement: r.agreement,
            monotone_fraction: r.monotone_fraction,
        }
    }
}

impl AttackSummary {
    /// Averages runs given in seed order; `None` when there are none.
    pub fn from_runs(runs: &[AttackRun]) -> Option<Self> {
        let first = runs.first()?;
        let col = |f: fn(&AttackRun) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        let adv = col(|r| r.adversarial_accuracy);
        Some(Self {
            proxy_accuracy: mean(&col(|r| r.proxy_accuracy)),
            adversarial_accuracy: mean(&adv),
            adversarial_per_seed: adv,
            epsilon: first.spec.epsilon,
            alpha: mean(&col(|r| r.spec.alpha)),
            iterations: first.spec.iterations,
            mean_l2: mean(&col(|r| r.mean_l2)),
            max_l2: col(|r| r.max_l2).into_iter().fold(0.0, f64::max),
            agreement: mean(&col(|r| r.agreement)),
            monotone_fraction: col(|r| r.monotone_fraction).into_iter().fold(1.0, f64::min),
        })
    }
}

/// Seed-averaged accuracy under manifold noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub epsilons: Vec<f64>,
    pub on: Vec<f64>,
    pub off: Vec<f64>,
    /// Across-seed standard deviation at each ε.
    pub on_std: Vec<f64>,
    pub off_std: Vec<f64>,
}

/// Cosine distance between epistemic fields of two models trained on the
/// same data: under different seeds, and under the same seed twice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seeds: [u64; 2],
    pub cross_seed: f64,
    pub same_seed: f64,
}

/// One (dataset, model, task) row of a suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub dataset: DatasetKind,
    pub model: ModelKind,
    pub task: Task,
    /// Mean test accuracy over the seeds that trained successfully.
    pub clean_accuracy: f64,
    pub attack: Option<AttackSummary>,
    pub ood: Option<OodAuroc>,
    pub sweep: Option<SweepSummary>,
    pub restart: Option<RestartSummary>,
    pub seeds: Vec<u64>,
    /// Training plus task time summed over seeds, in seconds.
    pub wall_clock: f64,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

impl ExperimentResult {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub results: Vec<ExperimentResult>,
    pub run_dir: PathBuf,
}

impl SuiteOutcome {
    pub fn get(&self, model: ModelKind, task: Task) -> Option<&ExperimentResult> {
        self.results.iter().find(|r| r.model == model && r.task == task)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub tool_version: String,
}

pub fn write_manifest(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let manifest = Manifest {
        name: cfg.name.clone(),
        config_hash: cfg.hash()?,
        seeds: cfg.seeds.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let path = dir.join("manifest");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Everything one trained (model, seed) produced.
struct Cell {
    seed: u64,
    model: ModelKind,
    outcome: Result<CellOutput>,
}

struct CellOutput {
    clean_accuracy: f64,
    train_time: f64,
    tasks: Vec<(Task, f64, Result<TaskOutput>)>,
    warnings: Vec<String>,
    field: Option<UncertaintyField>,
}

enum TaskOutput {
    Robustness(AttackRun),
    Ood(OodAuroc),
    Sweep { on: Vec<f64>, off: Vec<f64> },
    Done,
}

struct Dirs {
    checkpoints: PathBuf,
    adversarial: PathBuf,
}

fn run_cell(cfg: &ExperimentConfig, data: &Materialized, kind: ModelKind, seed: u64, dirs: &Dirs) -> Result<CellOutput> {
    let t0 = Instant::now();
    let model = train(kind, &cfg.model, &data.train, seed)?;
    let train_time = t0.elapsed().as_secs_f64();
    Checkpoint::new(cfg.dataset.kind, seed, model.clone())
        .save(&dirs.checkpoints.join(format!("{}-{seed}.json", kind.name())))?;
    let eval_seed = derive_seed(seed, 100);
    let clean_accuracy = accuracy(&model.predict(data.test.features(), eval_seed)?, data.test.labels());
    let first_seed = seed == cfg.seeds[0];
    let mut field = None;
    let mut tasks = Vec::new();
    for &task in &cfg.tasks {
        let t = Instant::now();
        let out = match task {
            Task::Robustness => run_robustness(
                &model,
                &data.train,
                &data.test,
                &cfg.attack.spec(),
                &cfg.attack.proxy,
                cfg.attack.calibrate.as_ref(),
                derive_seed(seed, 101),
            )
            .and_then(|r| {
                r.batch
                    .write_csv(&dirs.adversarial.join(format!("{}-{seed}.csv", kind.name())))?;
                Ok(TaskOutput::Robustness(AttackRun::from(&r)))
            }),
            Task::Ood => ood_detection(&model, &data.test, &data.ood, derive_seed(seed, 102)).map(TaskOutput::Ood),
            Task::ManifoldSweep => (|| {
                let meta = data
                    .meta
                    .as_ref()
                    .ok_or_else(|| Error::invalid("manifold sweep needs manifold metadata"))?;
                let sweep = &cfg.attack.sweep;
                let curve = |dir: Direction, stream| {
                    run_manifold_sweep(&model, &data.test, meta, &sweep.epsilons, dir, sweep.repeats, derive_seed(seed, stream))
                        .map(|c| c.into_iter().map(|(_, a)| a).collect::<Vec<_>>())
                };
                Ok(TaskOutput::Sweep {
                    on: curve(Direction::On, 103)?,
                    off: curve(Direction::Off, 104)?,
                })
            })(),
            // fields come from the first seed; restarts need it as their reference
            Task::Field | Task::Restarts => {
                if first_seed && field.is_none() {
                    match uncertainty_field(&model, data.train.features(), &cfg.field.grid(), derive_seed(seed, 105)) {
                        Ok(f) => {
                            field = Some(f);
                            Ok(TaskOutput::Done)
                        }
                        Err(e) => Err(e),
                    }
                } else {
                    Ok(TaskOutput::Done)
                }
            }
        };
        tasks.push((task, t.elapsed().as_secs_f64(), out));
    }
    Ok(CellOutput {
        clean_accuracy,
        train_time,
        tasks,
        warnings: model.warnings().to_vec(),
        field,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// Per-seed outputs of one (model, task), in seed order.
fn aggregate(task: Task, outs: &[&TaskOutput]) -> (Option<AttackSummary>, Option<OodAuroc>, Option<SweepSummary>, Vec<f64>) {
    match task {
        Task::Robustness => {
            let runs: Vec<AttackRun> = outs
                .iter()
                .filter_map(|o| match o {
                    TaskOutput::Robustness(r) => Some(r.clone()),
                    _ => None,
                })
                .collect();
            (AttackSummary::from_runs(&runs), None, None, vec![])
        }
        Task::Ood => {
            let all: Vec<&OodAuroc> = outs
                .iter()
                .filter_map(|o| match o {
                    TaskOutput::Ood(a) => Some(a),
                    _ => None,
                })
                .collect();
            let all: Vec<OodAuroc> = all.into_iter().cloned().collect();
            (None, OodAuroc::mean(&all), None, vec![])
        }
        Task::ManifoldSweep => {
            let curves: Vec<(&Vec<f64>, &Vec<f64>)> = outs
                .iter()
                .filter_map(|o| match o {
                    TaskOutput::Sweep { on, off } => Some((on, off)),
                    _ => None,
                })
                .collect();
            if curves.is_empty() {
                return (None, None, None, vec![]);
            }
            let k = curves[0].0.len();
            let at = |pick: &dyn Fn(&(&Vec<f64>, &Vec<f64>)) -> f64| curves.iter().map(pick).collect::<Vec<_>>();
            let (mut on, mut off, mut on_std, mut off_std) = (vec![], vec![], vec![], vec![]);
            for i in 0..k {
                let a = at(&|c| c.0[i]);
                let b = at(&|c| c.1[i]);
                on.push(mean(&a));
                on_std.push(std_dev(&a));
                off.push(mean(&b));
                off_std.push(std_dev(&b));
            }
            (
                None,
                None,
                Some(SweepSummary {
                    epsilons: vec![],
                    on,
                    off,
                    on_std,
                    off_std,
                }),
                vec![],
            )
        }
        Task::Field | Task::Restarts => (None, None, None, vec![]),
    }
}

fn epistemic_of(field: &UncertaintyField) -> &[f64] {
    field
        .channel(Channel::Distance)
        .or_else(|| field.channel(Channel::Epistemic))
        .unwrap_or(&[])
}

fn restart_study(cfg: &ExperimentConfig, data: &Materialized, kind: ModelKind, reference: &UncertaintyField) -> Result<RestartSummary> {
    let other = cfg.seeds[1];
    let grid = cfg.field.grid();
    let field_for = |seed: u64| -> Result<UncertaintyField> {
        let model = train(kind, &cfg.model, &data.train, seed)?;
        uncertainty_field(&model, data.train.features(), &grid, derive_seed(cfg.seeds[0], 105))
    };
    let rerun = field_for(cfg.seeds[0])?;
    let cross = field_for(other)?;
    Ok(RestartSummary {
        seeds: [cfg.seeds[0], other],
        cross_seed: cosine_distance(epistemic_of(reference), epistemic_of(&cross)),
        same_seed: cosine_distance(epistemic_of(reference), epistemic_of(&rerun)),
    })
}

/// Trains every configured model under every seed, runs the configured
/// tasks, and writes the run directory. Failures are recorded per result row
/// and do not stop the suite; only I/O on the run directory itself is fatal.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    cfg.validate()?;
    let run_dir = cfg.run_dir();
    let dirs = Dirs {
        checkpoints: run_dir.join("checkpoints"),
        adversarial: run_dir.join("adversarial"),
    };
    let fields_dir = run_dir.join("fields");
    for d in [&run_dir, &dirs.checkpoints, &dirs.adversarial, &fields_dir] {
        create_dir(d)?;
    }
    write(&run_dir.join("resolved.toml"), &cfg.to_toml()?)?;
    write_manifest(cfg, &run_dir)?;

    // image data does not depend on the seed; load it once
    let datasets: Vec<Result<Materialized>> = if cfg.dataset.kind == DatasetKind::Mnist {
        let d = cfg.dataset.materialize(cfg.seeds[0]).map_err(|e| e.to_string());
        cfg.seeds
            .iter()
            .map(|_| d.clone().map_err(|m| Error::invalid(m)))
            .collect()
    } else {
        cfg.seeds.iter().map(|&s| cfg.dataset.materialize(s)).collect()
    };

    let jobs: Vec<(usize, ModelKind)> = (0..cfg.seeds.len())
        .flat_map(|i| cfg.models.iter().map(move |&m| (i, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let cells: Vec<Cell> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, model)| {
                let seed = cfg.seeds[i];
                let outcome = match &datasets[i] {
                    Ok(data) => run_cell(cfg, data, model, seed, &dirs),
                    Err(e) => Err(Error::invalid(format!("dataset: {e}"))),
                };
                Cell { seed, model, outcome }
            })
            .collect()
    });

    let mut models = cfg.models.clone();
    models.sort();
    models.dedup();
    let mut results = Vec::new();
    for &model in &models {
        let mine: Vec<&Cell> = cfg
            .seeds
            .iter()
            .filter_map(|&s| cells.iter().find(|c| c.model == model && c.seed == s))
            .collect();
        let mut train_errors = Vec::new();
        let mut ok = Vec::new();
        for c in &mine {
            match &c.outcome {
                Ok(o) => ok.push((c.seed, o)),
                Err(e) => train_errors.push(format!("seed {}: {e}", c.seed)),
            }
        }
        let clean_accuracy = mean(&ok.iter().map(|(_, o)| o.clean_accuracy).collect::<Vec<_>>());
        let mut warnings: Vec<String> = Vec::new();
        for (_, o) in &ok {
            for w in &o.warnings {
                if !warnings.contains(w) {
                    warnings.push(w.clone());
                }
            }
        }
        let mut tasks = cfg.tasks.clone();
        tasks.sort();
        tasks.dedup();
        for &task in &tasks {
            let mut errors = train_errors.clone();
            let mut outs = Vec::new();
            let mut wall = 0.0;
            for (seed, o) in &ok {
                wall += o.train_time;
                for (t, secs, r) in &o.tasks {
                    if *t != task {
                        continue;
                    }
                    wall += secs;
                    match r {
                        Ok(v) => outs.push(v),
                        Err(e) => errors.push(format!("seed {seed}: {e}")),
                    }
                }
            }
            let (attack, ood, mut sweep, _) = aggregate(task, &outs);
            if let Some(s) = sweep.as_mut() {
                s.epsilons = cfg.attack.sweep.epsilons.clone();
            }
            let reference = ok.iter().find(|(s, _)| *s == cfg.seeds[0]).and_then(|(_, o)| o.field.as_ref());
            let mut restart = None;
            match task {
                Task::Field => match reference {
                    Some(f) => {
                        if let Err(e) = write_field(f, model, &fields_dir, cfg.field.pgm) {
                            errors.push(e.to_string());
                        }
                    }
                    None if errors.is_empty() => errors.push("no field for the first seed".into()),
                    None => {}
                },
                Task::Restarts if RESTART_MODELS.contains(&model) => match (reference, &datasets[0]) {
                    (Some(f), Ok(data)) => {
                        let t = Instant::now();
                        match restart_study(cfg, data, model, f) {
                            Ok(r) => restart = Some(r),
                            Err(e) => errors.push(e.to_string()),
                        }
                        wall += t.elapsed().as_secs_f64();
                    }
                    _ if errors.is_empty() => errors.push("no reference field for the restart study".into()),
                    _ => {}
                },
                _ => {}
            }
            results.push(ExperimentResult {
                dataset: cfg.dataset.kind,
                model,
                task,
                clean_accuracy,
                attack,
                ood,
                sweep,
                restart,
                seeds: cfg.seeds.clone(),
                wall_clock: wall,
                error: (!errors.is_empty()).then(|| errors.join("; ")),
                warnings: warnings.clone(),
            });
        }
    }

    write(&run_dir.join("summary.csv"), &summary_csv(&results))?;
    if cfg.tasks.contains(&Task::Ood) {
        write(&run_dir.join("ood_auroc.csv"), &ood_csv(&results))?;
    }
    if cfg.tasks.contains(&Task::ManifoldSweep) {
        write(&run_dir.join("manifold_sweep.csv"), &sweep_csv(&results))?;
    }
    if cfg.tasks.contains(&Task::Restarts) {
        write(&run_dir.join("restarts.csv"), &restart_csv(&results))?;
    }
    let path = run_dir.join("results.json");
    write(&path, &(serde_json::to_string_pretty(&results)? + "\n"))?;
    Ok(SuiteOutcome { results, run_dir })
}

pub fn write_field(f: &UncertaintyField, model: ModelKind, dir: &Path, with_pgm: bool) -> Result<()> {
    for (channel, values) in &f.channels {
        let stem = format!("field_{}_{}", model.name(), channel.name());
        write(&dir.join(format!("{stem}.csv")), &UncertaintyField::to_csv(values, f.resolution))?;
        if with_pgm {
            f.write_pgm(*channel, &dir.join(format!("{stem}.pgm")))?;
        }
    }
    let classes: Vec<f64> = f.classes.iter().map(|&c| c as f64).collect();
    write(
        &dir.join(format!("field_{}_class.csv", model.name())),
        &UncertaintyField::to_csv(&classes, f.resolution),
    )?;
    write(
        &dir.join("grid.csv"),
        &format!("lo_x,lo_y,hi_x,hi_y,resolution\n{},{},{},{},{}\n", f.lo[0], f.lo[1], f.hi[0], f.hi[1], f.resolution),
    )
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Table layout: one row per model, empty cells where the robustness task
/// did not run or failed.
pub fn summary_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from("model,proxy-acc,adv-acc,epsilon,alpha,iterations,mean-l2,clean-acc,error\n");
    let mut seen = Vec::new();
    for r in results {
        if seen.contains(&r.model) {
            continue;
        }
        let row = results
            .iter()
            .find(|x| x.model == r.model && x.task == Task::Robustness)
            .unwrap_or(r);
        seen.push(r.model);
        let a = row.attack.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.model,
            opt(a.map(|a| a.proxy_accuracy)),
            opt(a.map(|a| a.adversarial_accuracy)),
            opt(a.map(|a| a.epsilon)),
            opt(a.map(|a| a.alpha)),
            a.map(|a| a.iterations.to_string()).unwrap_or_default(),
            opt(a.map(|a| a.mean_l2)),
            r.clean_accuracy,
            row.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
    }
    out
}

pub fn ood_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from("model,channel,auroc\n");
    for r in results {
        if let Some(o) = &r.ood {
            for (c, v) in &o.channels {
                let _ = writeln!(out, "{},{},{v}", r.model, c.name());
            }
            let _ = writeln!(out, "{},epistemic-score,{}", r.model, o.epistemic);
        }
    }
    out
}

fn sweep_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from("model,direction,epsilon,accuracy,std\n");
    for r in results {
        if let Some(s) = &r.sweep {
            for (dir, acc, sd) in [(Direction::On, &s.on, &s.on_std), (Direction::Off, &s.off, &s.off_std)] {
                for ((e, a), d) in s.epsilons.iter().zip(acc).zip(sd) {
                    let _ = writeln!(out, "{},{},{e},{a},{d}", r.model, dir.name());
                }
            }
        }
    }
    out
}

fn restart_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from("model,seed_a,seed_b,cross_seed_distance,same_seed_distance\n");
    for r in results {
        if let Some(s) = &r.restart {
            let _ = writeln!(out, "{},{},{},{},{}", r.model, s.seeds[0], s.seeds[1], s.cross_seed, s.same_seed);
        }
    }
    out
}
