//! Attacks a Deep Ensemble on half moons through a proxy network: the proxy
//! imitates the ensemble's labels, L2-PGD runs on the proxy, and the
//! perturbed points are replayed against the ensemble.
//!
//! cargo run --release --example black_box_attack [seed]

use uqbench::config::ExperimentConfig;
use uqbench::data::DatasetKind;
use uqbench::eval::run_robustness;
use uqbench::metrics::ModelKind;
use uqbench::models::train;

fn main() -> uqbench::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12345);
    let cfg = ExperimentConfig::defaults(DatasetKind::HalfMoons);
    let data = cfg.dataset.materialize(seed)?;
    let model = train(ModelKind::DeepEnsemble, &cfg.model, &data.train, seed)?;
    let spec = cfg.attack.spec();
    let out = run_robustness(&model, &data.train, &data.test, &spec, &cfg.attack.proxy, None, seed)?;
    let m = &out.metrics;
    println!("attack: eps {} alpha {} iterations {}", spec.epsilon, spec.alpha, spec.iterations);
    println!("proxy agreement with target   {:.3}", out.agreement);
    println!("clean accuracy                {:.3}", m.clean_accuracy);
    println!("adversarial accuracy          {:.3}", m.adversarial_accuracy);
    println!("mean / max perturbation norm  {:.3} / {:.3}", m.mean_l2, out.batch.max_norm());
    println!("proxy loss never decreased    {:.1}% of points", 100.0 * out.monotone_fraction);
    Ok(())
}
