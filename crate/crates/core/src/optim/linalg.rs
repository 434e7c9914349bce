//! Reference linear algebra used to check the optimizer: a one-sided Jacobi
//! SVD and power iteration. Plain loops, f64, no shared code with the
//! polynomial path.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Thin SVD `a = u · diag(s) · vᵀ` for an `m × n` matrix with `m ≥ n`.
pub struct Svd {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub v: Tensor,
}

pub fn svd(a: &Tensor) -> Result<Svd> {
    if a.ndim() != 2 {
        return Err(Error::Dimension("svd needs a matrix".into()));
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    if m < n {
        let t = svd(&a.transpose()?)?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    // columns of w are rotated until mutually orthogonal
    let mut w: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.get2(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = w[p].iter().map(|x| x * x).sum();
                let beta: f64 = w[q].iter().map(|x| x * x).sum();
                let gamma: f64 = w[p].iter().zip(&w[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let (x, y) = (w[p][k], w[q][k]);
                    w[p][k] = c * x - s * y;
                    w[q][k] = s * x + c * y;
                }
                for k in 0..n {
                    let (x, y) = (v[p][k], v[q][k]);
                    v[p][k] = c * x - s * y;
                    v[q][k] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let s: Vec<f64> = w
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let u = Tensor::from_fn(&[m, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        if s[j] > 0.0 {
            w[j][i] / s[j]
        } else {
            0.0
        }
    });
    let vt = Tensor::from_fn(&[n, n], |idx| v[idx % n][idx / n]);
    Ok(Svd { u, s, v: vt })
}

pub fn singular_values(a: &Tensor) -> Result<Vec<f64>> {
    let mut s = svd(a)?.s;
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// Exact polar factor `u vᵀ` from the SVD.
pub fn polar_factor_svd(a: &Tensor) -> Result<Tensor> {
    let d = svd(a)?;
    d.u.matmul_nt(&d.v)
}

/// Largest singular value by power iteration on `aᵀa`.
pub fn spectral_norm(a: &Tensor, iters: usize) -> Result<f64> {
    let n = a.shape()[1];
    let mut x = Tensor::from_fn(&[n, 1], |i| 1.0 + (i as f64 * 0.618).fract());
    let mut sigma = 0.0;
    for _ in 0..iters {
        let y = a.matmul(&x)?;
        let z = a.matmul_tn(&y)?;
        let nz = z.frobenius();
        if nz == 0.0 {
            return Ok(0.0);
        }
        sigma = y.frobenius() / x.frobenius();
        x = z.scale(1.0 / nz);
    }
    Ok(sigma)
}
