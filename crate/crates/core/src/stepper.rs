//! Scalar root finding for one implicit-in-`y` backward step,
//! `y = c + dt * f_eff(y)`, with `f_eff` non-increasing in `y`.

use thiserror::Error;

/// Bracket growth stops after this many doublings of the initial half-width.
pub const MAX_BRACKET_DOUBLINGS: u32 = 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error(
        "no sign change of the step residual within 2^{MAX_BRACKET_DOUBLINGS} half-widths around {continuation}; effective driver is not monotone"
    )]
    Divergence { continuation: f64 },
    #[error("implicit step stopped after {iterations} iterations with residual {residual:e}")]
    Tolerance { iterations: usize, residual: f64 },
    #[error("effective driver returned {value} at y = {y}")]
    NonFinite { y: f64, value: f64 },
}

/// One implicit step. `t` and `z` are already frozen inside `f_eff`.
#[derive(Debug, Clone, Copy)]
pub struct ImplicitStepProblem<F> {
    pub continuation: f64,
    pub dt: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub f_eff: F,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub y: f64,
    pub iterations: usize,
    /// `|y - c - dt f_eff(y)|`
    pub residual: f64,
}

/// Safeguarded bisection. The bracket `[c - h, c + h]` with
/// `h = dt |f_eff(c)| + 1` is doubled until the residual changes sign, then
/// halved until it collapses to a few ulps or hits an exact zero.
pub fn solve_implicit<F: Fn(f64) -> f64>(
    p: &ImplicitStepProblem<F>,
) -> Result<StepOutcome, StepError> {
    let c = p.continuation;
    let g = |y: f64| -> Result<f64, StepError> {
        let v = (p.f_eff)(y);
        if !v.is_finite() {
            return Err(StepError::NonFinite { y, value: v });
        }
        Ok(y - c - p.dt * v)
    };

    let g_c = g(c)?;
    if g_c == 0.0 {
        return Ok(StepOutcome {
            y: c,
            iterations: 0,
            residual: 0.0,
        });
    }
    let half = g_c.abs() + 1.0;

    let (mut lo, mut hi, mut g_lo, mut g_hi);
    if g_c < 0.0 {
        lo = c;
        g_lo = g_c;
        let mut width = half;
        let mut doublings = 0;
        loop {
            hi = c + width;
            g_hi = g(hi)?;
            if g_hi >= 0.0 {
                break;
            }
            lo = hi;
            g_lo = g_hi;
            doublings += 1;
            if doublings > MAX_BRACKET_DOUBLINGS {
                return Err(StepError::Divergence { continuation: c });
            }
            width *= 2.0;
        }
    } else {
        hi = c;
        g_hi = g_c;
        let mut width = half;
        let mut doublings = 0;
        loop {
            lo = c - width;
            g_lo = g(lo)?;
            if g_lo <= 0.0 {
                break;
            }
            hi = lo;
            g_hi = g_lo;
            doublings += 1;
            if doublings > MAX_BRACKET_DOUBLINGS {
                return Err(StepError::Divergence { continuation: c });
            }
            width *= 2.0;
        }
    }

    let mut iterations = 0;
    loop {
        if g_lo == 0.0 {
            return finish(lo, g_lo, iterations, p.tol);
        }
        if g_hi == 0.0 {
            return finish(hi, g_hi, iterations, p.tol);
        }
        let scale = 1f64.max(lo.abs()).max(hi.abs());
        if hi - lo <= 4.0 * f64::EPSILON * scale {
            break;
        }
        if iterations >= p.max_iter {
            let (_, r) = best(lo, g_lo, hi, g_hi);
            return Err(StepError::Tolerance {
                iterations,
                residual: r.abs(),
            });
        }
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let g_mid = g(mid)?;
        iterations += 1;
        if g_mid < 0.0 {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
        }
    }
    // The bracket has collapsed onto neighbouring doubles: the root is pinned
    // as tightly as the arithmetic allows, even if a steep residual cannot
    // reach `tol` there.
    let (y, r) = best(lo, g_lo, hi, g_hi);
    Ok(StepOutcome {
        y,
        iterations,
        residual: r.abs(),
    })
}

fn best(lo: f64, g_lo: f64, hi: f64, g_hi: f64) -> (f64, f64) {
    if g_lo.abs() <= g_hi.abs() {
        (lo, g_lo)
    } else {
        (hi, g_hi)
    }
}

fn finish(y: f64, r: f64, iterations: usize, tol: f64) -> Result<StepOutcome, StepError> {
    if r.abs() <= tol {
        Ok(StepOutcome {
            y,
            iterations,
            residual: r.abs(),
        })
    } else {
        Err(StepError::Tolerance {
            iterations,
            residual: r.abs(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn solve(c: f64, dt: f64, f: impl Fn(f64) -> f64) -> StepOutcome {
        solve_implicit(&ImplicitStepProblem {
            continuation: c,
            dt,
            tol: 1e-12,
            max_iter: 200,
            f_eff: f,
        })
        .unwrap()
    }

    fn reference_bisection(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64) -> f64 {
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_driver_returns_continuation() {
        let out = solve(0.7, 0.25, |_| 0.0);
        assert_eq!(out.y, 0.7);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn linear_step() {
        let out = solve(1.0, 0.5, |y| -y);
        assert_abs_diff_eq!(out.y, 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn cubic_step_matches_independent_bisection() {
        let out = solve(1.0, 1.0, |y| -y * y * y);
        let oracle = reference_bisection(0.0, 1.0, |y| y + y * y * y - 1.0);
        assert_abs_diff_eq!(out.y, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(out.y, 0.68233, epsilon = 1e-5);
        assert!(out.residual <= 1e-12);
    }

    #[test]
    fn increasing_driver_diverges() {
        let err = solve_implicit(&ImplicitStepProblem {
            continuation: 0.0,
            dt: 1.0,
            tol: 1e-12,
            max_iter: 200,
            f_eff: |y: f64| 2.0 * y + 1.0,
        })
        .unwrap_err();
        assert!(matches!(err, StepError::Divergence { .. }));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let err = solve_implicit(&ImplicitStepProblem {
            continuation: 0.3,
            dt: 1.0,
            tol: 1e-12,
            max_iter: 5,
            f_eff: |y: f64| -y * y * y,
        })
        .unwrap_err();
        assert!(matches!(err, StepError::Tolerance { iterations: 5, .. }));
    }

    #[test]
    fn non_finite_driver_is_an_error() {
        let err = solve_implicit(&ImplicitStepProblem {
            continuation: 0.3,
            dt: 1.0,
            tol: 1e-12,
            max_iter: 200,
            f_eff: |_y: f64| f64::NAN,
        })
        .unwrap_err();
        assert!(matches!(err, StepError::NonFinite { .. }));
    }

    #[test]
    fn steep_residual_settles_on_neighbouring_doubles() {
        // |g| cannot drop below 1e3 times the spacing of doubles near 1e8
        let out = solve_implicit(&ImplicitStepProblem {
            continuation: 1e8 + 0.3,
            dt: 1.0,
            tol: 1e-15,
            max_iter: 200,
            f_eff: |y: f64| -1e3 * (y - 1e8),
        })
        .unwrap();
        assert!(out.residual > 1e-15);
        let exact = 1e8 + 0.3 / 1001.0;
        assert!((out.y - exact).abs() <= 2.0 * f64::EPSILON * 1e8);
    }

    fn penalized(m: f64, n: f64, l: f64, u: f64) -> impl Fn(f64) -> f64 {
        move |y: f64| -y * y * y + m * (l - y).max(0.0) - n * (y - u).max(0.0)
    }

    proptest! {
        #[test]
        fn step_is_monotone_in_continuation(
            c1 in -5.0f64..5.0, d in 0.0f64..3.0, dt in 0.001f64..1.0,
            m in 0.0f64..1e4, n in 0.0f64..1e4,
        ) {
            let f = penalized(m, n, -0.5, 0.5);
            let y1 = solve(c1, dt, &f).y;
            let y2 = solve(c1 + d, dt, &f).y;
            prop_assert!(y1 <= y2);
        }

        #[test]
        fn residual_is_within_tolerance(
            c in -10.0f64..10.0, dt in 0.001f64..1.0, a in -3.0f64..0.0, g in -5.0f64..5.0,
        ) {
            let f = move |y: f64| -y * y * y + a * y + g;
            let out = solve(c, dt, f);
            prop_assert!((out.y - c - dt * f(out.y)).abs() <= 1e-12);
            prop_assert!(out.residual <= 1e-12);
        }

        #[test]
        fn penalties_keep_residual_increasing(
            y in -3.0f64..3.0, h in 1e-6f64..0.5, dt in 0.001f64..1.0,
            m in 0.0f64..1e5, n in 0.0f64..1e5,
        ) {
            let f = penalized(m, n, -0.5, 0.5);
            let g = |x: f64| x - dt * f(x);
            prop_assert!(g(y + h) - g(y) > 0.0);
        }
    }
}
