//! Downsampled MNIST: trains MC Dropout, attacks it through a proxy and
//! scores Fashion-MNIST as out-of-distribution input.
//!
//! python3 scripts/fetch_data.py && cargo run --release --example mnist [data-dir]

use uqbench::config::ExperimentConfig;
use uqbench::data::DatasetKind;
use uqbench::eval::{ood_detection, run_robustness};
use uqbench::metrics::ModelKind;
use uqbench::models::train;

fn main() -> uqbench::Result<()> {
    let seed = 12345;
    let mut cfg = ExperimentConfig::defaults(DatasetKind::Mnist);
    let mnist = cfg.dataset.mnist.as_mut().expect("mnist defaults");
    if let Some(dir) = std::env::args().nth(1) {
        mnist.data_dir = dir.into();
    }
    println!("loading {} (set UQBENCH_DATA_DIR or pass a directory)", mnist.data_dir.display());
    let data = cfg.dataset.materialize(seed)?;
    println!("{} train / {} test images with {} features, {} Fashion-MNIST images", data.train.len(), data.test.len(), data.train.dim(), data.ood.len());
    let model = train(ModelKind::McDropout, &cfg.model, &data.train, seed)?;
    let attack = run_robustness(&model, &data.train, &data.test, &cfg.attack.spec(), &cfg.attack.proxy, None, seed)?;
    println!(
        "clean {:.3}  adversarial {:.3}  (eps {}, mean L2 {:.3})",
        attack.metrics.clean_accuracy, attack.metrics.adversarial_accuracy, cfg.attack.epsilon, attack.metrics.mean_l2
    );
    let auroc = ood_detection(&model, &data.test, &data.ood, seed)?;
    println!("Fashion-MNIST epistemic AUROC {:.4}", auroc.epistemic);
    Ok(())
}
