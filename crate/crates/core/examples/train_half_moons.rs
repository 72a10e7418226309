//! Trains all six models on half moons and prints clean test accuracy.
//!
//! cargo run --release --example train_half_moons [seed]

use std::time::Instant;

use uqbench::data::{make_half_moons, DatasetKind, Split};
use uqbench::metrics::ModelKind;
use uqbench::models::{train, ModelsConfig};
use uqbench::nn::accuracy;

fn main() -> uqbench::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12345);
    let train_set = make_half_moons(1000, 0.1, seed, Split::Train)?;
    let test_set = make_half_moons(500, 0.1, seed.wrapping_add(1), Split::Test)?;
    let cfg = ModelsConfig::defaults(DatasetKind::HalfMoons);
    for kind in ModelKind::ALL {
        let t = Instant::now();
        let model = train(kind, &cfg, &train_set, seed)?;
        let pred = model.predict(test_set.features(), seed)?;
        println!(
            "{kind:<14} test acc {:6.2}%  ({:.1}s)",
            100.0 * accuracy(&pred, test_set.labels()),
            t.elapsed().as_secs_f64()
        );
        for w in model.warnings() {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
