//! Samples a 2-D standard Gaussian with adaptive HMC and reports moments.
//!
//! cargo run --release --example hmc_gaussian

use uqbench::models::{effective_sample_size, hmc_sample, GaussianTarget, HmcConfig};

fn main() -> uqbench::Result<()> {
    let cfg = HmcConfig {
        chains: 2,
        warmup: 1000,
        samples: 2000,
        thin: 1,
        initial_step_size: 1e-6,
        target_accept: 0.95,
        max_tree_depth: 5,
        prior_std: 1.0,
        hidden: vec![],
        init_train: None,
        max_points: None,
    };
    let run = hmc_sample(&GaussianTarget { dim: 2, std: 1.0 }, vec![vec![2.0, -2.0], vec![-1.0, 1.0]], &cfg, 1)?;
    println!(
        "{} draws, acceptance {:.3}, step size {:.3}, {} divergences",
        run.samples.len(),
        run.acceptance,
        run.step_size,
        run.divergences
    );
    for d in 0..2 {
        let xs: Vec<f64> = run.samples.iter().map(|s| s[d]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        println!("dim {d}: mean {mean:+.4}  variance {var:.4}  ESS {:.0}", effective_sample_size(&xs));
    }
    Ok(())
}
