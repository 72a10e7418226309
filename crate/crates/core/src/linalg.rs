//! Small dense linear algebra on row-major matrices.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Lower-triangular `L` with `A = L Lᵀ`.
pub fn cholesky(a: &Tensor) -> Result<Tensor> {
    let (n, m) = a.dims2();
    if n != m {
        return Err(Error::shape("cholesky", &[a.shape()]));
    }
    let src = a.data();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = src[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let (ri, rj) = (i * n, j * n);
            let dot: f64 = l[ri..ri + j].iter().zip(&l[rj..rj + j]).map(|(a, b)| a * b).sum();
            l[ri + j] = (src[ri + j] - dot) / d;
        }
    }
    Tensor::matrix(n, n, l)
}

/// `A⁻¹` from the Cholesky factor of `A`.
pub fn cholesky_inverse(l: &Tensor) -> Result<Tensor> {
    let n = l.rows();
    let ld = l.data();
    // L⁻¹ by forward substitution, one column at a time
    let mut inv = vec![0.0; n * n];
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                s -= ld[i * n + k] * inv[k * n + c];
            }
            inv[i * n + c] = s / ld[i * n + i];
        }
    }
    let linv = Tensor::matrix(n, n, inv)?;
    // A⁻¹ = L⁻ᵀ L⁻¹
    crate::autodiff::matmul(&linv.transpose(), &linv)
}

/// Factorises `a`, retrying once with `jitter · I` added on failure.
pub fn cholesky_with_jitter(a: &Tensor, jitter: f64) -> Result<Tensor> {
    match cholesky(a) {
        Ok(l) => Ok(l),
        Err(Error::NotPositiveDefinite) => {
            let n = a.rows();
            let mut b = a.clone();
            for i in 0..n {
                b.data_mut()[i * n + i] += jitter;
            }
            cholesky(&b)
        }
        Err(e) => Err(e),
    }
}

/// Largest singular value by power iteration.
pub fn top_singular_value(w: &Tensor, iterations: usize) -> f64 {
    let (r, _) = w.dims2();
    let mut u = vec![1.0 / (r as f64).sqrt(); r];
    let mut sigma = 0.0;
    for _ in 0..iterations {
        sigma = power_step(w, &mut u).0;
    }
    sigma
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// One power-iteration step on `w` (`r × c`) from the left vector `u`;
/// returns `(σ̂, v)` and updates `u` in place.
pub fn power_step(w: &Tensor, u: &mut [f64]) -> (f64, Vec<f64>) {
    let (r, c) = w.dims2();
    let d = w.data();
    let mut v = vec![0.0; c];
    for i in 0..r {
        for j in 0..c {
            v[j] += d[i * c + j] * u[i];
        }
    }
    normalize(&mut v);
    for (i, ui) in u.iter_mut().enumerate() {
        *ui = (0..c).map(|j| d[i * c + j] * v[j]).sum();
    }
    let sigma = normalize(u);
    (sigma, v)
}
