//! Warmup-stable-decay learning-rate multiplier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub decay_fraction: f64,
}

impl LrSchedule {
    pub fn new(total_steps: usize, warmup_steps: usize, decay_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay_fraction) {
            return Err(Error::Config(format!(
                "decay fraction {decay_fraction} outside [0, 1]"
            )));
        }
        if warmup_steps > total_steps {
            return Err(Error::Config(format!(
                "warmup {warmup_steps} longer than {total_steps} steps"
            )));
        }
        Ok(LrSchedule {
            total_steps,
            warmup_steps,
            decay_fraction,
        })
    }

    /// Warmup given as a fraction of the run, rounded to whole steps.
    pub fn with_warmup_fraction(
        total_steps: usize,
        warmup: f64,
        decay_fraction: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&warmup) {
            return Err(Error::Config(format!(
                "warmup fraction {warmup} outside [0, 1]"
            )));
        }
        Self::new(
            total_steps,
            (warmup * total_steps as f64).round() as usize,
            decay_fraction,
        )
    }

    /// First step of the decay phase.
    pub fn decay_start(&self) -> usize {
        let len = (self.decay_fraction * self.total_steps as f64).round() as usize;
        self.total_steps - len.min(self.total_steps)
    }

    pub fn multiplier(&self, step: usize) -> Result<f64> {
        wsd_multiplier(step, self)
    }
}

pub fn wsd_multiplier(step: usize, s: &LrSchedule) -> Result<f64> {
    if step > s.total_steps {
        return Err(Error::Range(format!(
            "step {step} past the end of a {}-step schedule",
            s.total_steps
        )));
    }
    if step == s.total_steps {
        return Ok(0.0);
    }
    let warm = if step < s.warmup_steps {
        step as f64 / s.warmup_steps as f64
    } else {
        1.0
    };
    let d0 = s.decay_start();
    let decay = if step >= d0 {
        (s.total_steps - step) as f64 / (s.total_steps - d0) as f64
    } else {
        1.0
    };
    Ok(warm.min(decay))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn landmarks_are_exact() {
        let s = LrSchedule::new(1000, 0, 0.1).unwrap();
        assert_eq!(wsd_multiplier(500, &s).unwrap(), 1.0);
        assert_eq!(wsd_multiplier(950, &s).unwrap(), 0.5);
        assert_eq!(wsd_multiplier(1000, &s).unwrap(), 0.0);
        assert_eq!(wsd_multiplier(900, &s).unwrap(), 1.0);
        assert!(matches!(wsd_multiplier(1001, &s), Err(Error::Range(_))));
    }

    #[test]
    fn warmup_ramps_from_zero() {
        let s = LrSchedule::with_warmup_fraction(1000, 0.01, 0.1).unwrap();
        assert_eq!(s.warmup_steps, 10);
        assert_eq!(s.multiplier(0).unwrap(), 0.0);
        assert_eq!(s.multiplier(5).unwrap(), 0.5);
        assert_eq!(s.multiplier(10).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn piecewise_linear_and_bounded(total in 1usize..3000, warm in 0.0f64..0.3) {
            let s = LrSchedule::with_warmup_fraction(total, warm, 0.1).unwrap();
            let m: Vec<f64> = (0..=total).map(|k| s.multiplier(k).unwrap()).collect();
            for &x in &m {
                prop_assert!((0.0..=1.0).contains(&x));
            }
            // steps between consecutive values never exceed the steepest ramp
            let w = s.warmup_steps.max(1) as f64;
            let d = (total - s.decay_start()).max(1) as f64;
            let slope = (1.0 / w).max(1.0 / d);
            for k in 1..m.len() {
                prop_assert!((m[k] - m[k - 1]).abs() <= slope + 1e-12);
            }
            for k in s.warmup_steps..s.decay_start() {
                prop_assert_eq!(m[k], 1.0);
            }
        }
    }
}
