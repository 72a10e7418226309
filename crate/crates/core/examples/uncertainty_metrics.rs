//! Aleatoric entropy, epistemic entropy and KL uncertainty on hand-made
//! ensembles: agreeing members, disagreeing members and a single pass.
//!
//! cargo run --release --example uncertainty_metrics

use uqbench::metrics::{aleatoric_entropy, epistemic_entropy, kl_uncertainty, ProbEnsemble};

fn show(label: &str, ens: &ProbEnsemble) {
    let ha = aleatoric_entropy(ens)[0];
    let he = epistemic_entropy(ens)[0];
    match kl_uncertainty(ens) {
        Ok(kl) => println!("{label:<22} H_a {ha:.4}  H_e {he:.4}  KL {:.4}", kl[0]),
        Err(e) => println!("{label:<22} H_a {ha:.4}  H_e {he:.4}  KL: {e}"),
    }
}

fn main() -> uqbench::Result<()> {
    // members × points × classes, flattened member-major
    show("confident, agreeing", &ProbEnsemble::new(3, 1, 2, vec![0.99, 0.01, 0.98, 0.02, 0.99, 0.01])?);
    show("unsure, agreeing", &ProbEnsemble::new(3, 1, 2, vec![0.5, 0.5, 0.55, 0.45, 0.45, 0.55])?);
    show("confident, disagreeing", &ProbEnsemble::new(3, 1, 2, vec![0.99, 0.01, 0.01, 0.99, 0.99, 0.01])?);
    show("single pass", &ProbEnsemble::new(1, 1, 3, vec![0.2, 0.3, 0.5])?);
    Ok(())
}
