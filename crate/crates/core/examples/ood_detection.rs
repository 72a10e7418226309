//! Places off-distribution clusters around half moons and scores how well
//! each uncertainty channel of DUQ and MC Dropout separates them.
//!
//! cargo run --release --example ood_detection [seed]

use uqbench::config::ExperimentConfig;
use uqbench::data::DatasetKind;
use uqbench::eval::ood_detection;
use uqbench::metrics::ModelKind;
use uqbench::models::train;

fn main() -> uqbench::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12345);
    let cfg = ExperimentConfig::defaults(DatasetKind::HalfMoons);
    let data = cfg.dataset.materialize(seed)?;
    println!("{} test points, {} OoD points", data.test.len(), data.ood.len());
    for kind in [ModelKind::Duq, ModelKind::McDropout] {
        let model = train(kind, &cfg.model, &data.train, seed)?;
        let auroc = ood_detection(&model, &data.test, &data.ood, seed)?;
        for (channel, v) in &auroc.channels {
            println!("{kind:<12} {:<10} AUROC {v:.4}", channel.name());
        }
        println!("{kind:<12} epistemic  AUROC {:.4}", auroc.epistemic);
    }
    Ok(())
}
