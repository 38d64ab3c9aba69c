//! Bounded Nelder-Mead simplex search with dimension-adaptive coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    /// Stop once every vertex lies within `x_tol` (max norm) of the best.
    pub x_tol: f64,
    /// Stop once the spread of simplex values is at most `f_tol · |f_best|`.
    pub f_tol: f64,
    pub bounds: Vec<(f64, f64)>,
    pub initial_step: Vec<f64>,
}

impl OptimizerConfig {
    /// Default tolerances, initial steps at 10% of each bound half-width.
    pub fn with_bounds(bounds: Vec<(f64, f64)>, max_iter: usize) -> Self {
        let initial_step = bounds.iter().map(|(lo, hi)| 0.1 * (hi - lo) / 2.0).collect();
        Self {
            max_iter,
            x_tol: 1e-6,
            f_tol: 1e-10,
            bounds,
            initial_step,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::DimensionMismatch("x0 must not be empty".into()));
        }
        if self.bounds.len() != n || self.initial_step.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "x0 has {n} coordinates, bounds {} and initial_step {}",
                self.bounds.len(),
                self.initial_step.len()
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("every bound needs lo < hi".into()));
        }
        if self.initial_step.iter().any(|s| !(s.is_finite() && *s != 0.0)) {
            return Err(Error::Config("initial steps must be finite and non-zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub iterations: usize,
    /// `(0, f(x0))` followed by the best value after each iteration.
    pub history: Vec<(usize, f64)>,
    pub evaluations: usize,
}

/// Reflection, expansion, contraction and shrink coefficients for dimension `n`.
pub fn adaptive_coefficients(n: usize) -> (f64, f64, f64, f64) {
    let n = n as f64;
    (1.0, 1.0 + 2.0 / n, 0.75 - 1.0 / (2.0 * n), 1.0 - 1.0 / n)
}

pub fn nelder_mead_adaptive<F>(f: F, x0: &[f64], cfg: &OptimizerConfig) -> Result<OptimizerResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    nelder_mead_with_callback(f, x0, cfg, |_, _| {})
}

/// As [`nelder_mead_adaptive`], calling `on_iter(iteration, f_best)` after
/// the initial simplex (iteration 0) and after every iteration.
pub fn nelder_mead_with_callback<F, C>(
    mut f: F,
    x0: &[f64],
    cfg: &OptimizerConfig,
    mut on_iter: C,
) -> Result<OptimizerResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
    C: FnMut(usize, f64),
{
    let n = x0.len();
    cfg.validate(n)?;
    let (alpha, beta, gamma, delta) = adaptive_coefficients(n);
    let clip = |x: &mut Vec<f64>| {
        for (v, &(lo, hi)) in x.iter_mut().zip(&cfg.bounds) {
            *v = v.clamp(lo, hi);
        }
    };
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| -> Result<f64> {
        evaluations += 1;
        let v = f(x)?;
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    };

    let mut start = x0.to_vec();
    clip(&mut start);
    let f_start = eval(&start)?;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.clone(), f_start));
    for k in 0..n {
        let mut x = start.clone();
        x[k] += cfg.initial_step[k];
        clip(&mut x);
        if x[k] == start[k] {
            x[k] -= cfg.initial_step[k];
            clip(&mut x);
        }
        let fx = eval(&x)?;
        simplex.push((x, fx));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);

    // The starting point keeps priority on ties so f_best never exceeds f(x0).
    let mut history = vec![(0, f_start)];
    on_iter(0, f_start);
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let f_lo = simplex[0].1;
        let f_hi = simplex[n].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if size < cfg.x_tol || (f_hi - f_lo) <= cfg.f_tol * f_lo.abs() {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            let mut x: Vec<f64> = centroid.iter().zip(from).map(|(c, w)| c + t * (c - w)).collect();
            clip(&mut x);
            x
        };
        let worst = simplex[n].0.clone();
        let xr = along(alpha, &worst);
        let fr = eval(&xr)?;
        let mut shrink = false;
        if fr < simplex[0].1 {
            let xe = along(alpha * beta, &worst);
            let fe = eval(&xe)?;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else if fr < simplex[n].1 {
            let xc = along(alpha * gamma, &worst);
            let fc = eval(&xc)?;
            if fc <= fr {
                simplex[n] = (xc, fc);
            } else {
                shrink = true;
            }
        } else {
            let xc = along(-gamma, &worst);
            let fc = eval(&xc)?;
            if fc < simplex[n].1 {
                simplex[n] = (xc, fc);
            } else {
                shrink = true;
            }
        }
        if shrink {
            let best = simplex[0].0.clone();
            for (x, fx) in simplex.iter_mut().skip(1) {
                for (v, b) in x.iter_mut().zip(&best) {
                    *v = b + delta * (*v - b);
                }
                *fx = eval(x)?;
            }
        }
        order(&mut simplex);
        history.push((iterations, simplex[0].1));
        on_iter(iterations, simplex[0].1);
    }

    let (x_best, f_best) = simplex.swap_remove(0);
    Ok(OptimizerResult {
        x_best,
        f_best,
        iterations,
        history,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere(x: &[f64]) -> Result<f64> {
        Ok(x.iter().map(|v| v * v).sum())
    }

    fn rosenbrock(x: &[f64]) -> Result<f64> {
        Ok(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2))
    }

    #[test]
    fn classic_coefficients_at_n2() {
        assert_eq!(adaptive_coefficients(2), (1.0, 2.0, 0.5, 0.5));
    }

    #[test]
    fn sphere_converges() {
        let mut cfg = OptimizerConfig::with_bounds(vec![(-10.0, 10.0); 6], 2000);
        cfg.x_tol = 1e-9;
        cfg.f_tol = 0.0;
        let r = nelder_mead_adaptive(sphere, &[1.0; 6], &cfg).unwrap();
        assert!(r.f_best <= 1e-10, "{}", r.f_best);
        assert!(r.iterations <= 2000);
    }

    #[test]
    fn rosenbrock_converges() {
        let mut cfg = OptimizerConfig::with_bounds(vec![(-5.0, 5.0); 2], 2000);
        cfg.x_tol = 1e-10;
        cfg.f_tol = 0.0;
        let r = nelder_mead_adaptive(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!((r.x_best[0] - 1.0).abs() < 1e-3 && (r.x_best[1] - 1.0).abs() < 1e-3, "{:?}", r.x_best);
    }

    #[test]
    fn dimension_mismatch() {
        let cfg = OptimizerConfig::with_bounds(vec![(-1.0, 1.0); 3], 10);
        assert!(matches!(
            nelder_mead_adaptive(sphere, &[0.0; 2], &cfg),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn deterministic_history() {
        let cfg = OptimizerConfig::with_bounds(vec![(-3.0, 3.0); 4], 300);
        let x0 = [0.5, -1.0, 2.0, 0.1];
        let a = nelder_mead_adaptive(sphere, &x0, &cfg).unwrap();
        let b = nelder_mead_adaptive(sphere, &x0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn minimum_on_the_boundary() {
        let cfg = OptimizerConfig::with_bounds(vec![(1.0, 4.0), (-2.0, 2.0)], 500);
        let r = nelder_mead_adaptive(sphere, &[3.0, 1.0], &cfg).unwrap();
        assert!((r.x_best[0] - 1.0).abs() < 1e-5 && r.x_best[1].abs() < 1e-5);
    }

    #[test]
    fn objective_errors_propagate() {
        let cfg = OptimizerConfig::with_bounds(vec![(-1.0, 1.0)], 10);
        let r = nelder_mead_adaptive(|_: &[f64]| Err(Error::DegenerateMatrix), &[0.0], &cfg);
        assert!(matches!(r, Err(Error::DegenerateMatrix)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn stays_in_bounds_and_best_is_monotone(
            x0 in proptest::collection::vec(-2.0f64..2.0, 3),
            shift in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let bounds = vec![(-2.0, 2.0), (-1.5, 2.5), (-2.0, 1.0)];
            let cfg = OptimizerConfig::with_bounds(bounds.clone(), 200);
            let mut outside = 0;
            let f = |x: &[f64]| {
                if x.iter().zip(&bounds).any(|(v, (lo, hi))| v < lo || v > hi) {
                    outside += 1;
                }
                Ok(x.iter().zip(&shift).map(|(a, b)| (a - b).powi(2) + (a - b).abs().sin()).sum())
            };
            let r = nelder_mead_adaptive(f, &x0, &cfg).unwrap();
            prop_assert_eq!(outside, 0);
            let mut x_clipped = x0.clone();
            for (v, (lo, hi)) in x_clipped.iter_mut().zip(&bounds) {
                *v = v.clamp(*lo, *hi);
            }
            let f0 = x_clipped.iter().zip(&shift).map(|(a, b)| (a - b).powi(2) + (a - b).abs().sin()).sum::<f64>();
            prop_assert!(r.f_best <= f0);
            prop_assert!(r.history.windows(2).all(|w| w[1].1 <= w[0].1));
            let min = r.history.iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(min, r.f_best);
            prop_assert!(r.iterations <= 200);
        }
    }
}
