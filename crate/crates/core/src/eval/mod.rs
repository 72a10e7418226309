//! Experiment tasks and the suite runner that ties data, models and attacks
//! together and writes run artifacts.

mod auroc;
mod field;
mod suite;
mod tasks;

pub use auroc::auroc;
pub use field::{cosine_distance, grid_points, pgm, uncertainty_field, GridSpec, UncertaintyField};
pub use suite::{
    ood_csv, run_suite, summary_csv, write_field, write_manifest, AttackRun, AttackSummary, ExperimentResult, Manifest, RestartSummary, SuiteOutcome, SweepSummary,
};
pub use tasks::{ood_detection, run_manifold_sweep, run_robustness, CalibrationSpec, OodAuroc, RobustnessOutcome};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Robustness,
    Ood,
    Field,
    ManifoldSweep,
    /// Epistemic fields of the same model under two seeds versus a rerun.
    Restarts,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Robustness => "robustness",
            Task::Ood => "ood",
            Task::Field => "field",
            Task::ManifoldSweep => "manifold-sweep",
            Task::Restarts => "restarts",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}
