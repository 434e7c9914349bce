//! Central-difference gradient checking.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Relative error with a `1e-10` floor in the denominator.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-10)
}

/// Compare `grad` against central differences of `f` at `x` over `coords`
/// (all coordinates when `None`).
pub fn grad_check_coords<S: Scalar>(
    mut f: impl FnMut(&Tensor<S>) -> Result<f64>,
    x: &Tensor<S>,
    grad: &Tensor<S>,
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport> {
    let f0 = f(x)?;
    if !f0.is_finite() {
        return Err(Error::Evaluation(format!("f(x) = {f0}")));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.numel()).collect();
            &all
        }
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: coords.len(),
    };
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + S::lit(eps);
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - S::lit(eps);
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Evaluation(format!(
                "non-finite f near coordinate {i}"
            )));
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let analytic = grad.data()[i].f64();
        let e = rel_error(analytic, numeric);
        if e > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: e,
                worst_index: i,
                analytic,
                numeric,
                coords_checked: coords.len(),
            };
        }
    }
    Ok(report)
}

/// Full gradient check of a scalar function given its analytic gradient
/// routine `fg`, which returns `(f(x), ∇f(x))`.
pub fn grad_check<S: Scalar>(
    mut fg: impl FnMut(&Tensor<S>) -> Result<(f64, Tensor<S>)>,
    x: &Tensor<S>,
    eps: f64,
) -> Result<GradCheckReport> {
    let (_, grad) = fg(x)?;
    grad_check_coords(|p| fg(p).map(|(v, _)| v), x, &grad, eps, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn via_tape(
        x: &Tensor,
        build: impl Fn(&mut Tape, crate::tensor::Var) -> crate::tensor::Var,
    ) -> Result<(f64, Tensor)> {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = build(&mut tape, v);
        let g = tape.backward(out)?;
        Ok((tape.value(out).data()[0], g.get(v).unwrap().clone()))
    }

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let r = grad_check(
            |p| {
                via_tape(p, |t, v| {
                    let sq = t.mul(v, v).unwrap();
                    t.sum(sq)
                })
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn linear_is_exact() {
        // dyadic inputs and power-of-two steps keep f(x ± eps) exact
        let x = Tensor::new(vec![4], vec![0.25, -1.0, 2.0, 7.0]).unwrap();
        for eps in [2f64.powi(-23), 2f64.powi(-17), 2f64.powi(-14)] {
            let r = grad_check(|p| via_tape(p, |t, v| t.sum(v)), &x, eps).unwrap();
            assert!(r.max_rel_error < 1e-10, "{eps}: {r:?}");
        }
    }

    #[test]
    fn non_finite_is_evaluation_error() {
        let x = Tensor::new(vec![1], vec![1.0]).unwrap();
        let r = grad_check(|_| Ok((f64::NAN, Tensor::zeros(&[1]))), &x, 1e-5);
        assert!(matches!(r, Err(Error::Evaluation(_))));
    }
}
