//! Evaluates SNGP's uncertainty channels on a grid over half moons and
//! writes CSV and PGM images.
//!
//! cargo run --release --example uncertainty_field [out-dir]

use std::path::PathBuf;

use uqbench::config::ExperimentConfig;
use uqbench::data::DatasetKind;
use uqbench::eval::{uncertainty_field, write_field, GridSpec};
use uqbench::metrics::ModelKind;
use uqbench::models::train;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs/example-field"));
    std::fs::create_dir_all(&out)?;
    let seed = 12345;
    let cfg = ExperimentConfig::defaults(DatasetKind::HalfMoons);
    let data = cfg.dataset.materialize(seed)?;
    let model = train(ModelKind::Sngp, &cfg.model, &data.train, seed)?;
    let spec = GridSpec { resolution: 100, expand: 1.5 };
    let field = uncertainty_field(&model, data.train.features(), &spec, seed)?;
    write_field(&field, ModelKind::Sngp, &out, true)?;
    for (channel, values) in &field.channels {
        let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        println!("{:<10} range [{lo:.4}, {hi:.4}]", channel.name());
    }
    println!("wrote {}", out.display());
    Ok(())
}
