//! Two-barrier penalization: the driver gains `m (L - y)^+ - n (y - U)^+`
//! and nothing is clamped. As `m, n` grow the penalized surfaces approach the
//! reflected one.

use rayon::prelude::*;
use serde::Serialize;

use crate::lattice::NodeField;
use crate::model::ScenarioSpec;
use crate::reflect::{
    backward_sweep, default_rate, solve_reflected_with_rate, Reflection, SolutionSurface,
    SolveError, SweepOptions,
};

/// Slack used by the node-wise ordering checks.
pub const ORDER_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltySchedule {
    pairs: Vec<(f64, f64)>,
}

impl PenaltySchedule {
    /// Rejects negative or non-finite weights and any pair that decreases
    /// either coordinate.
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self, SolveError> {
        if pairs.is_empty() {
            return Err(SolveError::InvalidInput("penalty schedule is empty".into()));
        }
        for (k, &(m, n)) in pairs.iter().enumerate() {
            if !(m.is_finite() && n.is_finite() && m >= 0.0 && n >= 0.0) {
                return Err(SolveError::InvalidInput(format!(
                    "penalty pair {k} = ({m}, {n}) must be finite and nonnegative"
                )));
            }
            if k > 0 {
                let (pm, pn) = pairs[k - 1];
                if m < pm || n < pn {
                    return Err(SolveError::InvalidInput(format!(
                        "penalty pair {k} = ({m}, {n}) decreases from ({pm}, {pn})"
                    )));
                }
            }
        }
        Ok(Self { pairs })
    }

    /// `(2^j, 2^j)` for `j = 1..=max_exp`.
    pub fn doubling(max_exp: u32) -> Self {
        Self {
            pairs: (1..=max_exp)
                .map(|j| {
                    let w = 2f64.powi(j as i32);
                    (w, w)
                })
                .collect(),
        }
    }

    /// Iterated limit, lower penalty first: `m` climbs through `levels` with
    /// `n` held at the smallest level, then `n` climbs with `m` at the top.
    pub fn sequential(levels: &[f64]) -> Result<Self, SolveError> {
        let (first, last) = match (levels.first(), levels.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(SolveError::InvalidInput("no penalty levels given".into())),
        };
        let mut pairs: Vec<(f64, f64)> = levels.iter().map(|&m| (m, first)).collect();
        pairs.extend(levels.iter().skip(1).map(|&n| (last, n)));
        Self::new(pairs)
    }

    /// Parses `m1:n1,m2:n2,...`.
    pub fn parse(text: &str) -> Result<Self, SolveError> {
        let bad = |item: &str| {
            SolveError::InvalidInput(format!("bad penalty pair {item:?}, expected m:n"))
        };
        let pairs = text
            .split(',')
            .map(|item| {
                let (m, n) = item.trim().split_once(':').ok_or_else(|| bad(item))?;
                let m: f64 = m.trim().parse().map_err(|_| bad(item))?;
                let n: f64 = n.trim().parse().map_err(|_| bad(item))?;
                Ok((m, n))
            })
            .collect::<Result<Vec<_>, SolveError>>()?;
        Self::new(pairs)
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self::doubling(14)
    }
}

/// Penalized scheme at the default rate `max(mu, 0)`.
pub fn solve_penalized(spec: &ScenarioSpec, m: f64, n: f64) -> Result<SolutionSurface, SolveError> {
    solve_penalized_with_rate(spec, m, n, default_rate(spec))
}

pub fn solve_penalized_with_rate(
    spec: &ScenarioSpec,
    m: f64,
    n: f64,
    rate: f64,
) -> Result<SolutionSurface, SolveError> {
    backward_sweep(
        spec,
        &SweepOptions {
            reflection: Reflection::Penalty { m, n },
            rate,
            frozen_z: None,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub m: f64,
    pub n: f64,
    pub sup_err_vs_projection: f64,
    #[serde(rename = "Y0")]
    pub y0: f64,
    #[serde(rename = "K_plus_total_expect")]
    pub k_plus_total_expect: f64,
    #[serde(rename = "K_minus_total_expect")]
    pub k_minus_total_expect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleReport {
    pub reference_y0: f64,
    /// The projection solution records some reflection.
    pub binding: bool,
    pub rows: Vec<ScheduleRow>,
    /// Raising `m` with `n` fixed never lowers `Y` (checked between
    /// consecutive pairs).
    pub monotone_in_m: bool,
    pub worst_m_violation: f64,
    /// Raising `n` with `m` fixed never raises `Y`.
    pub monotone_in_n: bool,
    pub worst_n_violation: f64,
    pub gap_strictly_decreasing: bool,
    #[serde(skip)]
    pub solutions: Vec<SolutionSurface>,
}

/// `max over nodes of (lo - hi)^+`.
fn excess(lo: &NodeField, hi: &NodeField) -> f64 {
    lo.values()
        .iter()
        .zip(hi.values())
        .map(|(a, b)| (a - b).max(0.0))
        .fold(0.0, f64::max)
}

/// Solves every pair of the schedule (in parallel) at one shared rate and
/// tabulates the distance to the projection solution.
pub fn run_schedule(
    spec: &ScenarioSpec,
    sched: &PenaltySchedule,
) -> Result<ScheduleReport, SolveError> {
    let rate = default_rate(spec);
    let reference = solve_reflected_with_rate(spec, rate)?;
    let (rp, rm) = reference.expected_k_totals();
    let pairs = sched.pairs();

    let solutions = pairs
        .par_iter()
        .map(|&(m, n)| solve_penalized_with_rate(spec, m, n, rate))
        .collect::<Result<Vec<_>, _>>()?;

    // Neighbours that move one coordinate at a time.
    let probes = pairs
        .par_windows(2)
        .enumerate()
        .map(|(k, w)| {
            let (m0, n0) = w[0];
            let (m1, n1) = w[1];
            let up_m = if m1 > m0 {
                Some(solve_penalized_with_rate(spec, m1, n0, rate)?)
            } else {
                None
            };
            let up_n = if n1 > n0 {
                Some(solve_penalized_with_rate(spec, m0, n1, rate)?)
            } else {
                None
            };
            Ok((k, up_m, up_n))
        })
        .collect::<Result<Vec<_>, SolveError>>()?;

    let mut worst_m: f64 = 0.0;
    let mut worst_n: f64 = 0.0;
    for (k, up_m, up_n) in &probes {
        let base = &solutions[*k].y;
        if let Some(s) = up_m {
            worst_m = worst_m.max(excess(base, &s.y));
        }
        if let Some(s) = up_n {
            worst_n = worst_n.max(excess(&s.y, base));
        }
    }

    let rows: Vec<ScheduleRow> = pairs
        .iter()
        .zip(&solutions)
        .map(|(&(m, n), s)| {
            let (kp, km) = s.expected_k_totals();
            ScheduleRow {
                m,
                n,
                sup_err_vs_projection: s.y.sup_distance(&reference.y).0,
                y0: s.y0(),
                k_plus_total_expect: kp,
                k_minus_total_expect: km,
            }
        })
        .collect();
    let gap_strictly_decreasing = rows
        .windows(2)
        .all(|w| w[1].sup_err_vs_projection < w[0].sup_err_vs_projection);

    Ok(ScheduleReport {
        reference_y0: reference.y0(),
        binding: rp + rm > 0.0,
        rows,
        monotone_in_m: worst_m <= ORDER_SLACK,
        worst_m_violation: worst_m,
        monotone_in_n: worst_n <= ORDER_SLACK,
        worst_n_violation: worst_n,
        gap_strictly_decreasing,
        solutions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichReport {
    /// `max (Y^{0,n} - Y^{m,n})^+`
    pub below_violation: f64,
    /// `max (Y^{m,n} - Y^{m,0})^+`
    pub above_violation: f64,
    pub holds: bool,
}

/// The upper-only penalized surface lies below `Y^{m,n}`, the lower-only one
/// above it.
pub fn sandwich_check(spec: &ScenarioSpec, m: f64, n: f64) -> Result<SandwichReport, SolveError> {
    let rate = default_rate(spec);
    let both = solve_penalized_with_rate(spec, m, n, rate)?;
    let upper_only = solve_penalized_with_rate(spec, 0.0, n, rate)?;
    let lower_only = solve_penalized_with_rate(spec, m, 0.0, rate)?;
    let below = excess(&upper_only.y, &both.y);
    let above = excess(&both.y, &lower_only.y);
    Ok(SandwichReport {
        below_violation: below,
        above_violation: above,
        holds: below <= ORDER_SLACK && above <= ORDER_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Barrier, Driver, DriverSpec, Terminal};
    use crate::reflect::solve_reflected;
    use approx::assert_abs_diff_eq;

    fn two_sided(n: usize) -> ScenarioSpec {
        ScenarioSpec::new(
            1.0,
            DriverSpec::new(Driver::linear(-0.2, 0.5, 0.6), 0.0, 0.5),
            Terminal::sine(0.35, 1.5, 0.05),
            Barrier::constant(-0.5),
            Barrier::constant(0.4),
            n,
        )
    }

    #[test]
    fn schedule_validation() {
        assert!(PenaltySchedule::new(vec![(1.0, 2.0), (2.0, 1.0)]).is_err());
        assert!(PenaltySchedule::new(vec![(-1.0, 2.0)]).is_err());
        assert!(PenaltySchedule::new(vec![]).is_err());
        let d = PenaltySchedule::default();
        assert_eq!(d.pairs().len(), 14);
        assert_eq!(d.pairs()[13], (16384.0, 16384.0));
        let p = PenaltySchedule::parse("2:2, 8:16").unwrap();
        assert_eq!(p.pairs(), &[(2.0, 2.0), (8.0, 16.0)]);
        assert!(PenaltySchedule::parse("2:2,x").is_err());
        let s = PenaltySchedule::sequential(&[1.0, 4.0, 16.0]).unwrap();
        assert_eq!(
            s.pairs(),
            &[
                (1.0, 1.0),
                (4.0, 1.0),
                (16.0, 1.0),
                (16.0, 4.0),
                (16.0, 16.0)
            ]
        );
    }

    #[test]
    fn unpenalized_martingale() {
        let s = ScenarioSpec::new(
            1.0,
            DriverSpec::new(Driver::constant(0.0), 0.0, 0.0),
            Terminal::affine(0.0, 1.0),
            Barrier::NegInfinity,
            Barrier::PosInfinity,
            6,
        );
        let sol = solve_penalized(&s, 0.0, 0.0).unwrap();
        let m = sol.lattice;
        for node in m.nodes() {
            assert_abs_diff_eq!(
                sol.y.at(node),
                m.brownian(node.layer, node.state),
                epsilon = 1e-14
            );
        }
        assert!(sol
            .dk_plus
            .values()
            .iter()
            .chain(sol.dk_minus.values())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn inactive_barriers_linear_decay() {
        let s = ScenarioSpec::new(
            1.0,
            DriverSpec::new(Driver::linear(-1.0, 0.0, 0.0), 0.0, 0.0),
            Terminal::constant(1.0),
            Barrier::constant(-10.0),
            Barrier::constant(10.0),
            64,
        );
        let sol = solve_penalized(&s, 1024.0, 1024.0).unwrap();
        assert_abs_diff_eq!(sol.y0(), (-1f64).exp(), epsilon = 0.01);
    }

    #[test]
    fn two_step_upper_penalty_approaches_projection() {
        let s = ScenarioSpec::new(
            1.0,
            DriverSpec::new(Driver::constant(1.0), 0.0, 0.0),
            Terminal::affine(0.0, 1.0),
            Barrier::NegInfinity,
            Barrier::state(0.2, 0.0, 1.0, 0.0),
            2,
        );
        let mut prev = f64::INFINITY;
        for e in [2, 6, 10, 14] {
            let y0 = solve_penalized(&s, 0.0, 2f64.powi(e)).unwrap().y0();
            assert!(y0 < prev && y0 > 0.2);
            prev = y0;
        }
        assert_abs_diff_eq!(prev, 0.2, epsilon = 1e-3);
        assert_abs_diff_eq!(solve_reflected(&s).unwrap().y0(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn schedule_on_binding_scenario() {
        let s = two_sided(32);
        let sched =
            PenaltySchedule::new(vec![(2.0, 2.0), (8.0, 8.0), (32.0, 32.0), (128.0, 128.0)])
                .unwrap();
        let r = run_schedule(&s, &sched).unwrap();
        assert!(r.binding);
        assert!(r.gap_strictly_decreasing, "{:?}", r.rows);
        assert!(r.monotone_in_m && r.monotone_in_n);
        for (row, sol) in r.rows.iter().zip(&r.solutions) {
            assert!(sol.dk_plus.values().iter().all(|&v| v >= 0.0));
            assert!(sol.dk_minus.values().iter().all(|&v| v >= 0.0));
            assert_eq!(row.y0, sol.y0());
        }
    }

    #[test]
    fn inactive_upper_penalty_changes_nothing() {
        let mut s = two_sided(16);
        s.upper = Barrier::constant(50.0);
        let sched = PenaltySchedule::new(vec![(4.0, 1.0), (4.0, 100.0), (4.0, 1e4)]).unwrap();
        let r = run_schedule(&s, &sched).unwrap();
        assert_eq!(r.solutions[0].y, r.solutions[1].y);
        assert_eq!(r.solutions[0].y, r.solutions[2].y);
    }

    #[test]
    fn zero_pair_is_unreflected() {
        let mut s = two_sided(16);
        let r = run_schedule(&s, &PenaltySchedule::new(vec![(0.0, 0.0)]).unwrap()).unwrap();
        s.lower = Barrier::NegInfinity;
        s.upper = Barrier::PosInfinity;
        let free = solve_reflected(&s).unwrap();
        assert_eq!(r.solutions[0].y, free.y);
    }

    #[test]
    fn increments_vanish_strictly_inside() {
        let s = two_sided(24);
        let sol = solve_penalized(&s, 64.0, 64.0).unwrap();
        let m = sol.lattice;
        let (lo, hi) = (s.lower_field(&m), s.upper_field(&m));
        for node in m.nodes() {
            let y = sol.y.at(node);
            if lo.at(node) + 1e-12 <= y && y <= hi.at(node) - 1e-12 {
                assert_eq!(sol.dk_plus.at(node), 0.0);
                assert_eq!(sol.dk_minus.at(node), 0.0);
            }
        }
    }

    #[test]
    fn sandwich_and_grid_monotonicity() {
        let s = two_sided(24);
        for &(m, n) in &[(1.0, 1.0), (16.0, 4.0), (4.0, 256.0), (1e4, 1e4)] {
            let r = sandwich_check(&s, m, n).unwrap();
            assert!(r.holds, "{m} {n} {r:?}");
        }
        let ms = [0.0, 2.0, 32.0, 512.0];
        let surf: Vec<Vec<NodeField>> = ms
            .iter()
            .map(|&m| {
                ms.iter()
                    .map(|&n| solve_penalized(&s, m, n).unwrap().y)
                    .collect()
            })
            .collect();
        #[allow(clippy::needless_range_loop)]
        for a in 0..ms.len() {
            for b in 1..ms.len() {
                assert!(excess(&surf[b - 1][a], &surf[b][a]) <= ORDER_SLACK);
                assert!(excess(&surf[a][b], &surf[a][b - 1]) <= ORDER_SLACK);
            }
        }
    }
}
