//! Accuracy of Deep Ensembles and DUQ on the toy 1-D manifold under Gaussian
//! noise along the line (on-manifold) and across it (off-manifold).
//!
//! cargo run --release --example manifold_sweep [seed]

use uqbench::attack::Direction;
use uqbench::config::ExperimentConfig;
use uqbench::data::DatasetKind;
use uqbench::eval::run_manifold_sweep;
use uqbench::metrics::ModelKind;
use uqbench::models::train;

fn main() -> uqbench::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12345);
    let cfg = ExperimentConfig::defaults(DatasetKind::ToyManifold);
    let data = cfg.dataset.materialize(seed)?;
    let meta = data.meta.as_ref().expect("toy data carries its manifold");
    let sweep = &cfg.attack.sweep;
    println!("{:<14} {:<4} {}", "model", "dir", sweep.epsilons.iter().map(|e| format!("{e:>6}")).collect::<String>());
    for kind in [ModelKind::DeepEnsemble, ModelKind::Duq] {
        let model = train(kind, &cfg.model, &data.train, seed)?;
        for (label, dir) in [("on", Direction::On), ("off", Direction::Off)] {
            let curve = run_manifold_sweep(&model, &data.test, meta, &sweep.epsilons, dir, sweep.repeats, seed)?;
            let row: String = curve.iter().map(|(_, acc)| format!("{acc:>6.3}")).collect();
            println!("{kind:<14} {label:<4} {row}");
        }
    }
    Ok(())
}
