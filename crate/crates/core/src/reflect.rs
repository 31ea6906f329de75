//! Discretely reflected backward scheme, the Picard loop for `z`-dependent
//! drivers, and the truncation / refinement studies built on top of them.
//!
//! All sweeps run in the original coordinates with an exponential rate
//! `lambda >= 0`: at node `(i, j)` with `E = E[Y_{i+1} | (i, j)]` the
//! unconstrained value solves
//!
//! ```text
//! y = e^{lambda dt} E + dt (f(t_i, B, y, z) - lambda y + penalties(y)),
//! z = e^{lambda dt} (Y(i+1, j+1) - Y(i+1, j)) / (2 sqrt(dt)).
//! ```
//!
//! This is the plain implicit step applied to the exponentially rescaled
//! problem, mapped back node by node. Choosing `lambda >= mu` makes the
//! effective driver non-increasing so every step has a unique root, while
//! clamping still happens against the original barriers and therefore stays
//! exact.

use serde::Serialize;
use thiserror::Error;

use crate::lattice::{LatticeError, LatticeModel, Node, NodeField};
use crate::model::{Barrier, Driver, ScenarioSpec, Terminal};
use crate::stepper::{solve_implicit, ImplicitStepProblem, StepError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("implicit step failed at node {node}: {source}")]
    Step { node: Node, source: StepError },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("scenario not solvable on the lattice: {0}")]
    InvalidScenario(String),
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
    #[error("internal consistency check failed at node {node}: {message}")]
    Inconsistent { node: Node, message: String },
    #[error("Picard iteration did not reach {stop_tol:e} within {} iterations (last difference {:e})", trace.iterations(), trace.last_difference().unwrap_or(f64::NAN))]
    PicardNotConverged { stop_tol: f64, trace: PicardTrace },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Projection,
    Penalized,
    Picard,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Projection => "projection",
            Scheme::Penalized => "penalized",
            Scheme::Picard => "picard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveMeta {
    pub scheme: Scheme,
    /// Exponential rate used by the sweep.
    pub rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<(f64, f64)>,
    pub implicit_iterations: u64,
    pub max_step_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub picard_iterations: Option<usize>,
}

/// `Y`, `Z` and the per-node reflection increments on one lattice. `Z` and
/// both increments are zero on the terminal layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSurface {
    pub lattice: LatticeModel,
    pub y: NodeField,
    pub z: NodeField,
    pub dk_plus: NodeField,
    pub dk_minus: NodeField,
    pub meta: SolveMeta,
}

impl SolutionSurface {
    pub fn y0(&self) -> f64 {
        self.y.get(0, 0)
    }

    pub fn z0(&self) -> f64 {
        self.z.get(0, 0)
    }

    /// `(E[K+_T], E[K-_T])`
    pub fn expected_k_totals(&self) -> (f64, f64) {
        let p = self.lattice.node_probabilities();
        let mut plus = 0.0;
        let mut minus = 0.0;
        for i in 0..self.lattice.steps() {
            plus += self.dk_plus.layer_expectation(&p, i);
            minus += self.dk_minus.layer_expectation(&p, i);
        }
        (plus, minus)
    }

    /// Cumulative `(K+_T, K-_T)` along every path, in path-enumeration order.
    pub fn pathwise_k_totals(&self) -> Result<Vec<(f64, f64)>, LatticeError> {
        let m = &self.lattice;
        Ok(m.enumerate_paths()?
            .map(|path| {
                (
                    m.path_sum(&self.dk_plus, &path),
                    m.path_sum(&self.dk_minus, &path),
                )
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Reflection {
    Projection,
    Penalty { m: f64, n: f64 },
}

pub(crate) struct SweepOptions<'a> {
    pub reflection: Reflection,
    pub rate: f64,
    /// Use this surface for `z` instead of the explicit difference.
    pub frozen_z: Option<&'a NodeField>,
}

/// Default exponential rate for a scenario: `max(mu, 0)`.
pub fn default_rate(spec: &ScenarioSpec) -> f64 {
    spec.driver.mu.max(0.0)
}

/// Exact lattice checks every solver relies on: `L_T <= xi <= U_T` and
/// `L < U` before the horizon.
pub fn check_solvable(spec: &ScenarioSpec, m: &LatticeModel) -> Result<(), SolveError> {
    let n = m.steps();
    let lower = spec.lower_field(m);
    let upper = spec.upper_field(m);
    for (j, &x) in spec.terminal_values(m).iter().enumerate() {
        if !x.is_finite() {
            return Err(SolveError::InvalidScenario(format!(
                "terminal payoff {x} at node {}",
                Node::new(n, j)
            )));
        }
        let (l, u) = (lower.get(n, j), upper.get(n, j));
        if !(l <= x && x <= u) {
            return Err(SolveError::InvalidScenario(format!(
                "terminal payoff {x} outside [{l}, {u}] at node {}",
                Node::new(n, j)
            )));
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let (l, u) = (lower.get(i, j), upper.get(i, j));
            // NaN counts as out of order.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(l < u) {
                return Err(SolveError::InvalidScenario(format!(
                    "lower barrier {l} not below upper barrier {u} at node {}",
                    Node::new(i, j)
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn backward_sweep(
    spec: &ScenarioSpec,
    opts: &SweepOptions<'_>,
) -> Result<SolutionSurface, SolveError> {
    let m = spec.lattice()?;
    check_solvable(spec, &m)?;
    if !(opts.rate.is_finite() && opts.rate >= 0.0) {
        return Err(SolveError::InvalidInput(format!(
            "sweep rate must be finite and nonnegative, got {}",
            opts.rate
        )));
    }
    if let Reflection::Penalty { m: pm, n: pn } = opts.reflection {
        if !(pm >= 0.0 && pn >= 0.0 && pm.is_finite() && pn.is_finite()) {
            return Err(SolveError::InvalidInput(format!(
                "penalty pair ({pm}, {pn}) must be finite and nonnegative"
            )));
        }
    }
    if let Some(q) = opts.frozen_z {
        if q.steps() != m.steps() {
            return Err(SolveError::InvalidInput(
                "frozen z surface lives on a different lattice".into(),
            ));
        }
    }

    let n = m.steps();
    let dt = m.dt();
    let lambda = opts.rate;
    let growth = (lambda * dt).exp();
    let lower = spec.lower_field(&m);
    let upper = spec.upper_field(&m);

    let mut y = NodeField::zeros(n);
    let mut z = NodeField::zeros(n);
    let mut dk_plus = NodeField::zeros(n);
    let mut dk_minus = NodeField::zeros(n);
    y.layer_mut(n).copy_from_slice(&spec.terminal_values(&m));

    let mut iterations = 0u64;
    let mut max_residual: f64 = 0.0;
    let driver = &spec.driver.family;

    for i in (0..n).rev() {
        let t = m.time(i);
        let (cur, next) = y.two_layers_mut(i);
        for j in 0..=i {
            let node = Node::new(i, j);
            let b = m.brownian(i, j);
            let cond = 0.5 * (next[j] + next[j + 1]);
            let zd = (next[j + 1] - next[j]) / (2.0 * m.sqrt_dt());
            let zv = match opts.frozen_z {
                Some(q) => q.get(i, j),
                None => growth * zd,
            };
            let (l, u) = (lower.get(i, j), upper.get(i, j));
            let out = match opts.reflection {
                Reflection::Projection => solve_implicit(&ImplicitStepProblem {
                    continuation: growth * cond,
                    dt,
                    tol: spec.grid.implicit_tol,
                    max_iter: spec.grid.implicit_max_iter,
                    f_eff: |v: f64| driver.eval(t, b, v, zv) - lambda * v,
                }),
                Reflection::Penalty { m: pm, n: pn } => solve_implicit(&ImplicitStepProblem {
                    continuation: growth * cond,
                    dt,
                    tol: spec.grid.implicit_tol,
                    max_iter: spec.grid.implicit_max_iter,
                    f_eff: |v: f64| {
                        driver.eval(t, b, v, zv) - lambda * v + penalty_term(pm, l - v)
                            - penalty_term(pn, v - u)
                    },
                }),
            }
            .map_err(|source| SolveError::Step { node, source })?;
            iterations += out.iterations as u64;
            max_residual = max_residual.max(out.residual);
            let raw = out.y;

            z.set(i, j, zv);
            match opts.reflection {
                Reflection::Projection => {
                    if raw < l {
                        cur[j] = l;
                        dk_plus.set(i, j, l - raw);
                    } else if raw > u {
                        cur[j] = u;
                        dk_minus.set(i, j, raw - u);
                    } else {
                        cur[j] = raw;
                    }
                }
                Reflection::Penalty { m: pm, n: pn } => {
                    cur[j] = raw;
                    dk_plus.set(i, j, penalty_term(pm, l - raw) * dt);
                    dk_minus.set(i, j, penalty_term(pn, raw - u) * dt);
                }
            }
        }
    }

    let (scheme, penalty) = match opts.reflection {
        Reflection::Projection if opts.frozen_z.is_some() => (Scheme::Picard, None),
        Reflection::Projection => (Scheme::Projection, None),
        Reflection::Penalty { m, n } => (Scheme::Penalized, Some((m, n))),
    };
    let surface = SolutionSurface {
        lattice: m,
        y,
        z,
        dk_plus,
        dk_minus,
        meta: SolveMeta {
            scheme,
            rate: lambda,
            penalty,
            implicit_iterations: iterations,
            max_step_residual: max_residual,
            picard_iterations: None,
        },
    };
    if opts.reflection == Reflection::Projection {
        check_projection_invariants(&surface, &lower, &upper)?;
    }
    Ok(surface)
}

/// `weight * max(gap, 0)`, zero whenever the gap is not positive (including
/// an infinite barrier).
fn penalty_term(weight: f64, gap: f64) -> f64 {
    if gap > 0.0 {
        weight * gap
    } else {
        0.0
    }
}

fn check_projection_invariants(
    s: &SolutionSurface,
    lower: &NodeField,
    upper: &NodeField,
) -> Result<(), SolveError> {
    for node in s.lattice.nodes() {
        let (y, l, u) = (s.y.at(node), lower.at(node), upper.at(node));
        let (kp, km) = (s.dk_plus.at(node), s.dk_minus.at(node));
        let fail = |message: String| SolveError::Inconsistent { node, message };
        if !(l <= y && y <= u) {
            return Err(fail(format!("Y = {y} outside [{l}, {u}]")));
        }
        if !(kp >= 0.0 && km >= 0.0) {
            return Err(fail(format!("negative increment ({kp}, {km})")));
        }
        if (kp > 0.0 && y != l) || (km > 0.0 && y != u) || (kp > 0.0 && km > 0.0) {
            return Err(fail("reflection increment away from its barrier".into()));
        }
    }
    Ok(())
}

/// Projection scheme with the default rate `max(mu, 0)`.
pub fn solve_reflected(spec: &ScenarioSpec) -> Result<SolutionSurface, SolveError> {
    solve_reflected_with_rate(spec, default_rate(spec))
}

/// Projection scheme with an explicit exponential rate. Any `rate >= mu`
/// keeps the implicit step well posed; pairs of scenarios compared node by
/// node should share one rate.
pub fn solve_reflected_with_rate(
    spec: &ScenarioSpec,
    rate: f64,
) -> Result<SolutionSurface, SolveError> {
    backward_sweep(
        spec,
        &SweepOptions {
            reflection: Reflection::Projection,
            rate,
            frozen_z: None,
        },
    )
}

// ---------------------------------------------------------------------------
// Skorokhod residuals and the Dynkin running payoff

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SkorokhodResiduals {
    /// `sum p (Y - L) dK+` over nodes with a nonzero increment.
    pub lower: f64,
    /// `sum p (U - Y) dK-` over nodes with a nonzero increment.
    pub upper: f64,
    /// `sum p dK+ dK-`
    pub overlap: f64,
    /// `max (L - Y)^+`
    pub lower_violation: f64,
    /// `max (Y - U)^+`
    pub upper_violation: f64,
}

pub fn skorokhod_residuals(spec: &ScenarioSpec, s: &SolutionSurface) -> SkorokhodResiduals {
    let m = &s.lattice;
    let p = m.node_probabilities();
    let lower = spec.lower_field(m);
    let upper = spec.upper_field(m);
    let mut r = SkorokhodResiduals {
        lower: 0.0,
        upper: 0.0,
        overlap: 0.0,
        lower_violation: 0.0,
        upper_violation: 0.0,
    };
    for node in m.nodes() {
        let (y, pr) = (s.y.at(node), p.at(node));
        let (kp, km) = (s.dk_plus.at(node), s.dk_minus.at(node));
        if kp != 0.0 {
            r.lower += pr * (y - lower.at(node)).abs() * kp;
        }
        if km != 0.0 {
            r.upper += pr * (upper.at(node) - y).abs() * km;
        }
        r.overlap += pr * kp * km;
        r.lower_violation = r.lower_violation.max(lower.at(node) - y);
        r.upper_violation = r.upper_violation.max(y - upper.at(node));
    }
    r
}

/// Running payoff realised by a solved surface:
/// `g = f(t, B, Y, Z) - lambda Y + (e^{lambda dt} - 1) E[Y_{i+1}] / dt`,
/// which reduces to `f(t, B, Y, Z)` when the sweep rate is zero. Frozen into
/// the game recursion it reproduces the surface exactly.
pub fn running_payoff(spec: &ScenarioSpec, s: &SolutionSurface) -> NodeField {
    let m = &s.lattice;
    let dt = m.dt();
    let lambda = s.meta.rate;
    let carry = if lambda == 0.0 {
        0.0
    } else {
        (lambda * dt).exp_m1() / dt
    };
    let mut g = NodeField::zeros(m.steps());
    for i in 0..m.steps() {
        let t = m.time(i);
        let next = s.y.layer(i + 1);
        for j in 0..=i {
            let (y, z) = (s.y.get(i, j), s.z.get(i, j));
            let mut v = spec.driver.eval(t, m.brownian(i, j), y, z);
            if lambda != 0.0 {
                v += -lambda * y + carry * 0.5 * (next[j] + next[j + 1]);
            }
            g.set(i, j, v);
        }
    }
    g
}

// ---------------------------------------------------------------------------
// Picard iteration

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardConfig {
    pub max_iter: usize,
    /// Stop once the gamma-norm of successive differences drops below this.
    pub stop_tol: f64,
    pub gamma: f64,
}

impl PicardConfig {
    /// `gamma = 1 + 2 k^2`, the contraction weight of the rescaled problem
    /// (whose monotonicity constant is zero).
    pub fn default_gamma(spec: &ScenarioSpec) -> f64 {
        1.0 + 2.0 * spec.driver.k * spec.driver.k
    }

    pub fn for_spec(spec: &ScenarioSpec) -> Self {
        Self {
            max_iter: 200,
            stop_tol: 1e-12,
            gamma: Self::default_gamma(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PicardTrace {
    /// Squared gamma-norm of `(Y^p - Y^{p-1}, Z^p - Z^{p-1})`, `p = 1, 2, ...`,
    /// starting from the zero pair.
    pub sq_differences: Vec<f64>,
    /// `sq_differences[p] / sq_differences[p - 1]` for `p >= 1`.
    pub ratios: Vec<f64>,
}

impl PicardTrace {
    pub fn iterations(&self) -> usize {
        self.sq_differences.len()
    }

    pub fn last_difference(&self) -> Option<f64> {
        self.sq_differences.last().map(|d| d.sqrt())
    }

    fn push(&mut self, d: f64) {
        if let Some(&prev) = self.sq_differences.last() {
            self.ratios.push(if prev > 0.0 { d / prev } else { 0.0 });
        }
        self.sq_differences.push(d);
    }
}

/// `sum_{i<N} e^{(gamma + 2 rate) t_i} sum_j p(i, j) (dY^2 + dZ^2) dt`, the
/// weighted norm of the rescaled pair written in original coordinates.
pub fn gamma_sq_distance(
    m: &LatticeModel,
    gamma: f64,
    rate: f64,
    (y1, z1): (&NodeField, &NodeField),
    (y0, z0): (&NodeField, &NodeField),
) -> f64 {
    let p = m.node_probabilities();
    let mut total = 0.0;
    for i in 0..m.steps() {
        let w = ((gamma + 2.0 * rate) * m.time(i)).exp();
        let mut layer = 0.0;
        for j in 0..=i {
            let dy = y1.get(i, j) - y0.get(i, j);
            let dz = z1.get(i, j) - z0.get(i, j);
            layer += p.get(i, j) * (dy * dy + dz * dz);
        }
        total += w * layer * m.dt();
    }
    total
}

/// Fixed-point iteration `Q -> Z(Q)`: each pass solves the reflected problem
/// with the driver's `z` argument frozen at the previous `Z` surface,
/// starting from `Q = 0`.
pub fn solve_picard(
    spec: &ScenarioSpec,
    cfg: &PicardConfig,
) -> Result<(SolutionSurface, PicardTrace), SolveError> {
    if !(cfg.gamma > 0.0 && cfg.gamma.is_finite()) {
        return Err(SolveError::InvalidInput(format!(
            "gamma must be positive, got {}",
            cfg.gamma
        )));
    }
    if cfg.max_iter == 0 {
        return Err(SolveError::InvalidInput(
            "max_iter must be at least 1".into(),
        ));
    }
    let m = spec.lattice()?;
    let rate = default_rate(spec);
    let mut prev_y = NodeField::zeros(m.steps());
    let mut prev_z = NodeField::zeros(m.steps());
    let mut trace = PicardTrace::default();
    for p in 1..=cfg.max_iter {
        let mut s = backward_sweep(
            spec,
            &SweepOptions {
                reflection: Reflection::Projection,
                rate,
                frozen_z: Some(&prev_z),
            },
        )?;
        // Z(Q): explicit difference of the new Y, which the next pass freezes
        let z_new = explicit_z(&m, &s.y, rate);
        let d = gamma_sq_distance(&m, cfg.gamma, rate, (&s.y, &z_new), (&prev_y, &prev_z));
        trace.push(d);
        s.z = z_new;
        if d.sqrt() <= cfg.stop_tol {
            s.meta.picard_iterations = Some(p);
            return Ok((s, trace));
        }
        prev_y = s.y;
        prev_z = s.z;
    }
    Err(SolveError::PicardNotConverged {
        stop_tol: cfg.stop_tol,
        trace,
    })
}

fn explicit_z(m: &LatticeModel, y: &NodeField, rate: f64) -> NodeField {
    let growth = (rate * m.dt()).exp();
    let mut z = NodeField::zeros(m.steps());
    for i in 0..m.steps() {
        let next = y.layer(i + 1);
        for (j, v) in z.layer_mut(i).iter_mut().enumerate() {
            *v = growth * (next[j + 1] - next[j]) / (2.0 * m.sqrt_dt());
        }
    }
    z
}

// ---------------------------------------------------------------------------
// Truncation and refinement studies

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// `L ∧ n`
    LowerCap,
    /// `U ∨ (-n)`
    UpperFloor,
    /// `xi ∧ n`
    TerminalCap,
    /// `xi ∨ (-n)`
    TerminalFloor,
    /// `f - f(t, 0) + f(t, 0) ∧ n`
    DriverCap,
}

impl TruncationMode {
    pub const ALL: [TruncationMode; 5] = [
        TruncationMode::LowerCap,
        TruncationMode::UpperFloor,
        TruncationMode::TerminalCap,
        TruncationMode::TerminalFloor,
        TruncationMode::DriverCap,
    ];

    /// `+1` if the truncated solution grows with the level, `-1` if it shrinks.
    pub fn direction(self) -> f64 {
        match self {
            TruncationMode::UpperFloor | TruncationMode::TerminalFloor => -1.0,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TruncationMode::LowerCap => "lower_cap",
            TruncationMode::UpperFloor => "upper_floor",
            TruncationMode::TerminalCap => "terminal_cap",
            TruncationMode::TerminalFloor => "terminal_floor",
            TruncationMode::DriverCap => "driver_cap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// The scenario with one datum truncated at `level`.
pub fn truncate_scenario(spec: &ScenarioSpec, mode: TruncationMode, level: f64) -> ScenarioSpec {
    let mut out = spec.clone();
    match mode {
        TruncationMode::LowerCap => {
            out.lower = Barrier::CapAbove {
                inner: Box::new(spec.lower.clone()),
                level,
            }
        }
        TruncationMode::UpperFloor => {
            out.upper = Barrier::FloorBelow {
                inner: Box::new(spec.upper.clone()),
                level: -level,
            }
        }
        TruncationMode::TerminalCap => {
            out.terminal = Terminal::Cap {
                inner: Box::new(spec.terminal.clone()),
                level,
            }
        }
        TruncationMode::TerminalFloor => {
            out.terminal = Terminal::Floor {
                inner: Box::new(spec.terminal.clone()),
                level: -level,
            }
        }
        TruncationMode::DriverCap => {
            out.driver.family = Driver::CapAtZero {
                inner: Box::new(spec.driver.family.clone()),
                level,
            };
            if !spec.driver.family.is_z_independent() {
                out.driver.k *= 3.0;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationRow {
    pub level: f64,
    pub y0: f64,
    pub sup_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationStudy {
    pub mode: TruncationMode,
    pub rows: Vec<TruncationRow>,
    pub gap_nonincreasing: bool,
    /// Node-wise monotonicity of the truncated surfaces in the level, in the
    /// direction the mode predicts.
    pub monotone_in_level: bool,
}

const ORDER_SLACK: f64 = 1e-10;

pub fn truncation_study(
    spec: &ScenarioSpec,
    mode: TruncationMode,
    levels: &[f64],
) -> Result<TruncationStudy, SolveError> {
    if levels.windows(2).any(|w| w[0] > w[1]) || levels.iter().any(|l| !l.is_finite()) {
        return Err(SolveError::InvalidInput(
            "truncation levels must be finite and nondecreasing".into(),
        ));
    }
    let rate = default_rate(spec);
    let base = solve_reflected_with_rate(spec, rate)?;
    let mut rows = Vec::with_capacity(levels.len());
    let mut monotone = true;
    let mut previous: Option<SolutionSurface> = None;
    for &level in levels {
        let s = solve_reflected_with_rate(&truncate_scenario(spec, mode, level), rate)?;
        let (gap, _) = s.y.sup_distance(&base.y);
        if let Some(prev) = &previous {
            let dir = mode.direction();
            monotone &=
                s.y.values()
                    .iter()
                    .zip(prev.y.values())
                    .all(|(now, before)| dir * (now - before) >= -ORDER_SLACK);
        }
        rows.push(TruncationRow {
            level,
            y0: s.y0(),
            sup_gap: gap,
        });
        previous = Some(s);
    }
    let gap_nonincreasing = rows
        .windows(2)
        .all(|w| w[1].sup_gap <= w[0].sup_gap + ORDER_SLACK);
    Ok(TruncationStudy {
        mode,
        rows,
        gap_nonincreasing,
        monotone_in_level: monotone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub y0: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub reference_steps: usize,
    pub reference_y0: f64,
    pub rows: Vec<ConvergenceRow>,
    pub error_nonincreasing: bool,
}

/// Root value at several step counts against a reference solve on a finer
/// lattice (`reference_steps >= 4 max(step_counts)`).
pub fn convergence_study(
    spec: &ScenarioSpec,
    step_counts: &[usize],
    reference_steps: usize,
) -> Result<ConvergenceStudy, SolveError> {
    let finest = step_counts.iter().copied().max().unwrap_or(0);
    if reference_steps < 4 * finest || reference_steps == 0 {
        return Err(SolveError::InvalidInput(format!(
            "reference lattice with {reference_steps} steps is coarser than 4 x {finest}"
        )));
    }
    let rate = default_rate(spec);
    let reference = solve_reflected_with_rate(&spec.clone().with_steps(reference_steps), rate)?;
    let y_ref = reference.y0();
    let mut rows = Vec::with_capacity(step_counts.len());
    for &n in step_counts {
        let s = solve_reflected_with_rate(&spec.clone().with_steps(n), rate)?;
        rows.push(ConvergenceRow {
            steps: n,
            y0: s.y0(),
            error: (s.y0() - y_ref).abs(),
        });
    }
    let error_nonincreasing = rows.windows(2).all(|w| w[1].error <= w[0].error);
    Ok(ConvergenceStudy {
        reference_steps,
        reference_y0: y_ref,
        rows,
        error_nonincreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DriverSpec, Terminal};
    use approx::assert_abs_diff_eq;

    fn spec(
        driver: Driver,
        terminal: Terminal,
        lower: Barrier,
        upper: Barrier,
        n: usize,
    ) -> ScenarioSpec {
        ScenarioSpec::new(
            1.0,
            DriverSpec::new(driver, 0.0, 0.0),
            terminal,
            lower,
            upper,
            n,
        )
    }

    fn binding_two_step() -> ScenarioSpec {
        spec(
            Driver::constant(1.0),
            Terminal::affine(0.0, 1.0),
            Barrier::NegInfinity,
            Barrier::state(0.2, 0.0, 1.0, 0.0),
            2,
        )
    }

    #[test]
    fn zero_solution() {
        let s = solve_reflected(&spec(
            Driver::constant(0.0),
            Terminal::constant(0.0),
            Barrier::constant(-1.0),
            Barrier::constant(1.0),
            6,
        ))
        .unwrap();
        assert!(s.y.values().iter().all(|&v| v == 0.0));
        assert!(s.z.values().iter().all(|&v| v == 0.0));
        assert!(s
            .dk_plus
            .values()
            .iter()
            .chain(s.dk_minus.values())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn two_step_hand_induction() {
        let s = solve_reflected(&binding_two_step()).unwrap();
        let h = 0.5f64.sqrt();
        // layer 1: continuation B, plus dt * 1 = 0.5, clamped to B + 0.2
        for (j, b) in [(0, -h), (1, h)] {
            assert_abs_diff_eq!(s.y.get(1, j), b + 0.2, epsilon = 1e-12);
            assert_abs_diff_eq!(s.dk_minus.get(1, j), 0.3, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(s.y0(), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(s.dk_minus.get(0, 0), 0.5, epsilon = 1e-12);
        for (kp, km) in s.pathwise_k_totals().unwrap() {
            assert_eq!(kp, 0.0);
            assert_abs_diff_eq!(km, 0.8, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_decay_closed_form() {
        let s = solve_reflected(&spec(
            Driver::linear(-1.0, 0.0, 0.0),
            Terminal::constant(1.0),
            Barrier::constant(-10.0),
            Barrier::constant(10.0),
            256,
        ))
        .unwrap();
        assert!((s.y0() - (-1f64).exp()).abs() <= 5e-3);
        assert_eq!(s.expected_k_totals(), (0.0, 0.0));
    }

    #[test]
    fn martingale_terminal_is_reproduced() {
        let s = solve_reflected(&spec(
            Driver::constant(0.0),
            Terminal::affine(0.0, 1.0),
            Barrier::NegInfinity,
            Barrier::PosInfinity,
            10,
        ))
        .unwrap();
        for node in s.lattice.nodes() {
            assert_abs_diff_eq!(
                s.y.at(node),
                s.lattice.brownian(node.layer, node.state),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn one_lower_barrier_never_pushes_down() {
        let s = solve_reflected(&spec(
            Driver::cubic(1.0, 0.0, 0.0, 0.0),
            Terminal::Put(crate::model::StrikeParams { strike: 0.0 }),
            Barrier::affine_in_time(0.3, -0.3),
            Barrier::PosInfinity,
            32,
        ))
        .unwrap();
        assert!(s.dk_minus.values().iter().all(|&v| v == 0.0));
        assert!(s.expected_k_totals().0 > 0.0);
    }

    #[test]
    fn residuals_vanish_on_binding_solve() {
        let sp = binding_two_step();
        let s = solve_reflected(&sp).unwrap();
        let r = skorokhod_residuals(&sp, &s);
        assert_eq!((r.lower, r.upper, r.overlap), (0.0, 0.0, 0.0));
        assert!(r.lower_violation <= 0.0 && r.upper_violation <= 0.0);
    }

    #[test]
    fn bad_terminal_ordering_is_rejected() {
        let err = solve_reflected(&spec(
            Driver::constant(0.0),
            Terminal::constant(0.0),
            Barrier::constant(0.5),
            Barrier::constant(1.0),
            3,
        ))
        .unwrap_err();
        assert!(matches!(err, SolveError::InvalidScenario(_)));
    }

    #[test]
    fn picard_on_z_free_driver_stops_after_two_passes() {
        let mut sp = spec(
            Driver::linear(-0.5, 0.0, 0.1),
            Terminal::sine(0.25, 1.0, 0.0),
            Barrier::constant(-0.3),
            Barrier::constant(0.3),
            16,
        );
        sp.driver.k = 1.0;
        let (s, trace) = solve_picard(&sp, &PicardConfig::for_spec(&sp)).unwrap();
        assert_eq!(trace.iterations(), 2);
        assert_eq!(trace.sq_differences[1], 0.0);
        let direct = solve_reflected(&sp).unwrap();
        assert_eq!(s.y, direct.y);
    }

    #[test]
    fn picard_limit_is_the_projection_solution() {
        let mut sp = spec(
            Driver::linear(-0.2, 0.5, 0.6),
            Terminal::sine(0.35, 1.5, 0.05),
            Barrier::constant(-0.5),
            Barrier::constant(0.4),
            16,
        );
        sp.driver.k = 0.5;
        let (s, _) = solve_picard(&sp, &PicardConfig::for_spec(&sp)).unwrap();
        let direct = solve_reflected(&sp).unwrap();
        assert!(direct.expected_k_totals().1 > 0.0);
        assert!(s.y.sup_distance(&direct.y).0 < 1e-10);
        assert!(s.z.sup_distance(&direct.z).0 < 1e-9);
    }

    #[test]
    fn picard_contracts_on_wide_barriers() {
        let mut sp = spec(
            Driver::linear(0.0, 0.5, 0.0),
            Terminal::affine(0.0, 1.0),
            Barrier::constant(-10.0),
            Barrier::constant(10.0),
            32,
        );
        sp.driver.k = 0.5;
        let (_, trace) = solve_picard(&sp, &PicardConfig::for_spec(&sp)).unwrap();
        assert!(
            trace.ratios.iter().all(|&r| r <= 0.5 + 0.2),
            "{:?}",
            trace.ratios
        );
    }

    #[test]
    fn default_gamma() {
        let mut sp = binding_two_step();
        sp.driver.k = 1.0;
        assert_eq!(PicardConfig::default_gamma(&sp), 3.0);
    }

    #[test]
    fn picard_exhaustion_carries_trace() {
        let mut sp = spec(
            Driver::linear(0.0, 1.0, 0.0),
            Terminal::affine(0.0, 1.0),
            Barrier::NegInfinity,
            Barrier::PosInfinity,
            8,
        );
        sp.driver.k = 1.0;
        let cfg = PicardConfig {
            max_iter: 2,
            stop_tol: 0.0,
            gamma: 3.0,
        };
        match solve_picard(&sp, &cfg).unwrap_err() {
            SolveError::PicardNotConverged { trace, .. } => assert_eq!(trace.iterations(), 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn inactive_truncation_has_zero_gap() {
        let sp = spec(
            Driver::cubic(1.0, 0.0, 0.0, 0.5),
            Terminal::sine(0.8, 2.0, 0.0),
            Barrier::affine_in_time(-0.3, -0.6),
            Barrier::affine_in_time(0.3, 0.6),
            16,
        );
        let study = truncation_study(&sp, TruncationMode::LowerCap, &[1.0, 2.0]).unwrap();
        assert!(study.rows.iter().all(|r| r.sup_gap == 0.0));
        let floor = truncation_study(
            &spec(
                Driver::constant(0.0),
                Terminal::Call(crate::model::StrikeParams { strike: 0.0 }),
                Barrier::NegInfinity,
                Barrier::PosInfinity,
                8,
            ),
            TruncationMode::TerminalFloor,
            &[0.5, 1.0],
        )
        .unwrap();
        assert!(floor.rows.iter().all(|r| r.sup_gap == 0.0));
    }

    #[test]
    fn lower_cap_grows_with_level() {
        let sp = spec(
            Driver::constant(-1.0),
            Terminal::Call(crate::model::StrikeParams { strike: 0.0 }),
            Barrier::state(0.0, 0.0, 1.0, 0.0),
            Barrier::PosInfinity,
            12,
        );
        let study =
            truncation_study(&sp, TruncationMode::LowerCap, &[0.0, 0.25, 0.5, 1.0, 4.0]).unwrap();
        assert!(study.monotone_in_level);
        assert!(study.gap_nonincreasing);
        assert!(study.rows.windows(2).all(|w| w[0].y0 <= w[1].y0));
        assert_eq!(study.rows.last().unwrap().sup_gap, 0.0);
        assert!(study.rows[0].sup_gap > 0.0);
    }

    #[test]
    fn refinement_study() {
        let lin = spec(
            Driver::linear(-1.0, 0.0, 0.0),
            Terminal::constant(1.0),
            Barrier::NegInfinity,
            Barrier::PosInfinity,
            8,
        );
        let study = convergence_study(&lin, &[8, 16, 32], 256).unwrap();
        assert!(study.error_nonincreasing);
        assert!(study.rows.windows(2).all(|w| w[1].error < w[0].error));
        let exact = (-1f64).exp();
        let true_errors: Vec<f64> = study.rows.iter().map(|r| (r.y0 - exact).abs()).collect();
        assert!(true_errors.windows(2).all(|w| w[1] < w[0]));

        let mart = spec(
            Driver::constant(0.0),
            Terminal::affine(0.0, 1.0),
            Barrier::NegInfinity,
            Barrier::PosInfinity,
            8,
        );
        let study = convergence_study(&mart, &[4, 8, 16], 64).unwrap();
        assert!(study.rows.iter().all(|r| r.error == 0.0));
        assert!(convergence_study(&mart, &[8, 16, 32], 64).is_err());
    }
}
