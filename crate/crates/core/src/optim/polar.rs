//! Polar Express: an odd quintic per iteration, each one the minimax-optimal
//! approximation of 1 on the interval the singular values currently occupy.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_ITERS: usize = 5;
/// Assumed lower bound on singular values after Frobenius normalisation.
pub const DEFAULT_LOWER: f64 = 1e-2;

/// Coefficients `(a, b, c)` of `p(x) = a x + b x³ + c x⁵`.
pub type Quintic = (f64, f64, f64);

fn eval(q: Quintic, x: f64) -> f64 {
    let x2 = x * x;
    x * (q.0 + x2 * (q.1 + x2 * q.2))
}

/// Solve a 4×4 system by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 5]; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some([
        a[0][4] / a[0][0],
        a[1][4] / a[1][1],
        a[2][4] / a[2][2],
        a[3][4] / a[3][3],
    ])
}

/// Interior critical points of `p` in `(lo, hi)`, ascending.
fn critical_points(q: Quintic, lo: f64, hi: f64) -> Vec<f64> {
    // p'(x) = a + 3b y + 5c y², y = x²
    let (a, b, c) = (q.0, 3.0 * q.1, 5.0 * q.2);
    let mut ys = Vec::new();
    if c.abs() < 1e-300 {
        if b.abs() > 1e-300 {
            ys.push(-a / b);
        }
    } else {
        let disc = b * b - 4.0 * c * a;
        if disc >= 0.0 {
            let s = disc.sqrt();
            ys.push((-b - s) / (2.0 * c));
            ys.push((-b + s) / (2.0 * c));
        }
    }
    let mut xs: Vec<f64> = ys
        .into_iter()
        .filter(|&y| y > 0.0)
        .map(f64::sqrt)
        .filter(|&x| x > lo && x < hi)
        .collect();
    xs.sort_by(f64::total_cmp);
    xs
}

/// Minimax odd quintic for the constant 1 on `[lo, hi]` (Remez exchange).
/// Returns the coefficients and the image interval `[min p, max p]`.
pub fn minimax_quintic(lo: f64, hi: f64) -> Result<(Quintic, f64, f64)> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Range(format!("minimax interval [{lo}, {hi}]")));
    }
    let mut pts = [lo, lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo), hi];
    let mut q = (1.0, 0.0, 0.0);
    for _ in 0..200 {
        let mut m = [[0.0; 5]; 4];
        for (i, &x) in pts.iter().enumerate() {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            m[i] = [x, x.powi(3), x.powi(5), sign, 1.0];
        }
        let s = solve4(m).ok_or_else(|| Error::Evaluation("singular Remez system".into()))?;
        q = (s[0], s[1], s[2]);
        let crit = critical_points(q, lo, hi);
        if crit.len() != 2 {
            break;
        }
        let next = [lo, crit[0], crit[1], hi];
        let moved = next
            .iter()
            .zip(&pts)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        pts = next;
        if moved <= 1e-15 * hi {
            break;
        }
    }
    let mut cand = vec![lo, hi];
    cand.extend(critical_points(q, lo, hi));
    let vals: Vec<f64> = cand.iter().map(|&x| eval(q, x)).collect();
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((q, min, max))
}

/// Greedy per-iteration schedule starting from singular values in `[lower, 1]`.
pub fn coefficient_schedule(iters: usize, lower: f64) -> Result<Vec<Quintic>> {
    let (mut lo, mut hi) = (lower, 1.0);
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        if hi - lo < 1e-7 {
            // limit of the minimax quintic as the interval shrinks onto 1
            out.push((15.0 / 8.0, -5.0 / 4.0, 3.0 / 8.0));
            continue;
        }
        let (q, a, b) = minimax_quintic(lo, hi)?;
        out.push(q);
        lo = a;
        hi = b;
    }
    Ok(out)
}

/// Approximate polar factor of `g` (same shape). Zero input gives zeros.
pub fn polar_express<S: Scalar>(g: &Tensor<S>, iters: usize) -> Result<Tensor<S>> {
    polar_express_with(g, &coefficient_schedule(iters, DEFAULT_LOWER)?)
}

pub fn polar_express_with<S: Scalar>(g: &Tensor<S>, schedule: &[Quintic]) -> Result<Tensor<S>> {
    if g.ndim() != 2 {
        return Err(Error::Routing(format!(
            "polar factor needs a matrix, got shape {:?}",
            g.shape()
        )));
    }
    let norm = g.frobenius();
    if norm == S::zero() {
        return Ok(Tensor::zeros(g.shape()));
    }
    let tall = g.shape()[0] > g.shape()[1];
    let mut x = if tall { g.transpose()? } else { g.clone() };
    x = x.scale(S::one() / norm);
    for &(a, b, c) in schedule {
        let gram = x.matmul_nt(&x)?;
        let gram2 = gram.matmul(&gram)?;
        let mut poly = gram.scale(S::lit(b));
        poly.axpy(S::lit(c), &gram2);
        let mut next = poly.matmul(&x)?;
        next.axpy(S::lit(a), &x);
        x = next;
    }
    if tall {
        x.transpose()
    } else {
        Ok(x)
    }
}
