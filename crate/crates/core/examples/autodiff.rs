//! Logistic regression gradient from the tape, checked against central
//! finite differences.
//!
//! cargo run --release --example autodiff

use uqbench::autodiff::{numeric_gradient, relative_error, Tape, Tensor};

fn main() -> uqbench::Result<()> {
    let x = Tensor::matrix(4, 2, vec![1.0, 0.5, -1.0, 2.0, 0.3, 0.3, -0.7, 1.1])?;
    let labels = [0, 1, 1, 0];
    let w0 = Tensor::matrix(2, 2, vec![0.1, -0.4, 0.7, 0.2])?;

    let loss = |w: &Tensor| -> uqbench::Result<(Tape, uqbench::autodiff::Var, uqbench::autodiff::Var)> {
        let mut tape = Tape::new();
        let wv = tape.param(w.clone());
        let xv = tape.constant(x.clone());
        let z = tape.matmul(xv, wv)?;
        let l = tape.cross_entropy(z, &labels)?;
        Ok((tape, wv, l))
    };

    let (tape, wv, l) = loss(&w0)?;
    let analytic = tape.backward(l)?.wrt(wv)?;
    let numeric = numeric_gradient(
        |ps| {
            let (t, _, l) = loss(&ps[0])?;
            Ok(t.value(l)?.item())
        },
        std::slice::from_ref(&w0),
        1e-6,
    )?;
    println!("loss          {:.6}", tape.value(l)?.item());
    println!("tape gradient {:?}", analytic.data());
    println!("finite diff   {:?}", numeric[0].data());
    println!("relative err  {:.2e}", relative_error(&analytic, &numeric[0], 1e-12));
    Ok(())
}
