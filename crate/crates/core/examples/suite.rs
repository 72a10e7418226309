//! Runs a full experiment from a TOML config (or the half-moons defaults)
//! and prints the summary table the run directory also holds.
//!
//! cargo run --release --example suite [config.toml]

use uqbench::config::ExperimentConfig;
use uqbench::eval::{run_suite, summary_csv};

fn main() -> uqbench::Result<()> {
    let resolved = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref(), None)?,
        None => ExperimentConfig::parse("name = \"example-suite\"\nseeds = [12345]\ntasks = [\"robustness\", \"ood\"]\n", None)?,
    };
    let cfg = resolved.config;
    let outcome = run_suite(&cfg)?;
    print!("{}", summary_csv(&outcome.results));
    for r in outcome.results.iter().filter_map(|r| r.ood.as_ref().map(|o| (r.model, o.epistemic))) {
        println!("{:<14} epistemic AUROC {:.4}", r.0, r.1);
    }
    println!("artifacts in {}", outcome.run_dir.display());
    Ok(())
}
