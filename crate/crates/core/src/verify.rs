//! Comparison and domination properties of the reflected scheme, checked on
//! generated pairs of ordered scenarios.
//!
//! Every check samples its own hypotheses first. A pair whose declared
//! orderings do not hold is reported as inapplicable, never as passing. Each
//! pair is tagged with the strongest comparison result whose hypotheses it
//! meets, and exactly the orderings that result asserts are tested.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lattice::{LatticeModel, Node, NodeField, MAX_ENUMERATION_STEPS};
use crate::model::{
    sample_axis, Barrier, Driver, DriverSpec, FreezeAt, ScenarioSpec, TableParams, Terminal,
};
use crate::penalize::solve_penalized_with_rate;
use crate::reflect::{
    check_solvable, default_rate, solve_reflected_with_rate, SolutionSurface, SolveError,
};
use crate::transform::transform_scenario;

/// One-sided slack for every ordering check.
pub const ORDER_TOL: f64 = 1e-10;
/// Cumulative reflection orderings are checked along every path up to this
/// many steps.
pub const PATHWISE_LIMIT: usize = 12;
/// Default threshold for the projection / penalized agreement check.
pub const UNIQUENESS_THRESHOLD: f64 = 5e-3;
/// Penalty weights used for the agreement check, the last one decisive.
pub const UNIQUENESS_TAIL: [f64; 3] = [1024.0, 4096.0, 16384.0];
/// Rate used by the suite's transform-equivariance check.
pub const EQUIVARIANCE_RATE: f64 = 0.5;

const Z_SAMPLES: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("declared ordering does not hold: {0}")]
    Hypothesis(String),
    #[error("check does not apply: {0}")]
    Inapplicable(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingMode {
    Terminal,
    Driver,
    LowerBarrier,
    UpperBarrier,
    Combined,
}

impl OrderingMode {
    pub const ALL: [OrderingMode; 5] = [
        OrderingMode::Terminal,
        OrderingMode::Driver,
        OrderingMode::LowerBarrier,
        OrderingMode::UpperBarrier,
        OrderingMode::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OrderingMode::Terminal => "terminal",
            OrderingMode::Driver => "driver",
            OrderingMode::LowerBarrier => "lower_barrier",
            OrderingMode::UpperBarrier => "upper_barrier",
            OrderingMode::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Equal,
    LessEq,
}

/// Declared relation between the first and second member, per datum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeclaredRelations {
    pub terminal: Relation,
    pub driver: Relation,
    pub lower: Relation,
    pub upper: Relation,
}

impl DeclaredRelations {
    pub fn for_mode(mode: OrderingMode) -> Self {
        use Relation::*;
        let only = |t, d, l, u| Self {
            terminal: t,
            driver: d,
            lower: l,
            upper: u,
        };
        match mode {
            OrderingMode::Terminal => only(LessEq, Equal, Equal, Equal),
            OrderingMode::Driver => only(Equal, LessEq, Equal, Equal),
            OrderingMode::LowerBarrier => only(Equal, Equal, LessEq, Equal),
            OrderingMode::UpperBarrier => only(Equal, Equal, Equal, LessEq),
            OrderingMode::Combined => only(LessEq, LessEq, LessEq, LessEq),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedScenarioPair {
    pub s1: ScenarioSpec,
    pub s2: ScenarioSpec,
    pub mode: OrderingMode,
    pub relations: DeclaredRelations,
}

impl OrderedScenarioPair {
    pub fn new(s1: ScenarioSpec, s2: ScenarioSpec, mode: OrderingMode) -> Self {
        Self {
            s1,
            s2,
            mode,
            relations: DeclaredRelations::for_mode(mode),
        }
    }

    /// Both members are solved at this rate so their sweeps are comparable.
    pub fn common_rate(&self) -> f64 {
        default_rate(&self.s1).max(default_rate(&self.s2))
    }

    pub fn transformed(&self, lam: f64) -> Result<Self, VerifyError> {
        let t = |s: &ScenarioSpec| {
            transform_scenario(s, lam).map_err(|e| VerifyError::Inapplicable(e.to_string()))
        };
        Ok(Self {
            s1: t(&self.s1)?,
            s2: t(&self.s2)?,
            mode: self.mode,
            relations: self.relations,
        })
    }
}

/// Which barriers differ between the members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierCase {
    Shared,
    OrderedLower,
    OrderedUpper,
    OrderedBoth,
}

/// Hypothesis families of the comparison results, strongest conclusions
/// first. All but `General` give reflection orderings; `General` gives the
/// ordering of `Y` only, but allows both barriers to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisClass {
    /// Drivers Lipschitz in `(y, z)`, pointwise ordered.
    LipschitzDriver,
    /// `z`-free non-increasing drivers; terminal, `f(t, 0)`, `L+` and `U-`
    /// bounded.
    BoundedMonotone,
    /// As above, but `L+` may be unbounded.
    UnboundedLower,
    /// As above, but both barriers may be unbounded.
    UnboundedBarriers,
    /// `z`-free monotone drivers that agree at `y = 0`.
    EqualZeroLevel,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TheoremTag {
    pub class: HypothesisClass,
    pub case: BarrierCase,
}

impl TheoremTag {
    /// `dK+` of the first member dominates that of the second.
    pub fn asserts_k_plus(&self) -> bool {
        self.class != HypothesisClass::General
            && matches!(self.case, BarrierCase::Shared | BarrierCase::OrderedUpper)
    }

    /// `dK-` of the first member is dominated by that of the second.
    pub fn asserts_k_minus(&self) -> bool {
        self.class != HypothesisClass::General
            && matches!(self.case, BarrierCase::Shared | BarrierCase::OrderedLower)
    }
}

impl std::fmt::Display for TheoremTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let class = match self.class {
            HypothesisClass::LipschitzDriver => "lipschitz_driver",
            HypothesisClass::BoundedMonotone => "bounded_monotone",
            HypothesisClass::UnboundedLower => "unbounded_lower",
            HypothesisClass::UnboundedBarriers => "unbounded_barriers",
            HypothesisClass::EqualZeroLevel => "equal_zero_level",
            HypothesisClass::General => "general",
        };
        let case = match self.case {
            BarrierCase::Shared => "shared_barriers",
            BarrierCase::OrderedLower => "ordered_lower",
            BarrierCase::OrderedUpper => "ordered_upper",
            BarrierCase::OrderedBoth => "ordered_both",
        };
        write!(f, "{class}/{case}")
    }
}

// ---------------------------------------------------------------------------
// Hypothesis sampling

fn sample_nodes(m: &LatticeModel) -> impl Iterator<Item = (f64, f64)> + '_ {
    (0..m.steps()).flat_map(move |i| (0..=i).map(move |j| (m.time(i), m.brownian(i, j))))
}

fn relation_holds(rel: Relation, a: f64, b: f64) -> bool {
    match rel {
        Relation::Equal => a == b,
        Relation::LessEq => a <= b,
    }
}

fn field_relation(
    what: &str,
    rel: Relation,
    a: &NodeField,
    b: &NodeField,
    m: &LatticeModel,
) -> Result<(), VerifyError> {
    for node in m.nodes() {
        let (x, y) = (a.at(node), b.at(node));
        if !relation_holds(rel, x, y) {
            return Err(VerifyError::Hypothesis(format!(
                "{what} {x} vs {y} at node {node} violates {rel:?}"
            )));
        }
    }
    Ok(())
}

/// Samples every declared relation on the shared lattice: terminal and
/// barriers at every node, drivers at every non-terminal node over a grid of
/// `(y, z)`.
pub fn check_hypotheses(p: &OrderedScenarioPair) -> Result<LatticeModel, VerifyError> {
    let m = p.s1.lattice().map_err(SolveError::from)?;
    let m2 = p.s2.lattice().map_err(SolveError::from)?;
    if m != m2 {
        return Err(VerifyError::Hypothesis(
            "members live on different lattices".into(),
        ));
    }
    let r = p.relations;
    let (x1, x2) = (p.s1.terminal_values(&m), p.s2.terminal_values(&m));
    for (j, (a, b)) in x1.iter().zip(&x2).enumerate() {
        if !relation_holds(r.terminal, *a, *b) {
            return Err(VerifyError::Hypothesis(format!(
                "terminal {a} vs {b} at node {} violates {:?}",
                Node::new(m.steps(), j),
                r.terminal
            )));
        }
    }
    field_relation(
        "lower barrier",
        r.lower,
        &p.s1.lower_field(&m),
        &p.s2.lower_field(&m),
        &m,
    )?;
    field_relation(
        "upper barrier",
        r.upper,
        &p.s1.upper_field(&m),
        &p.s2.upper_field(&m),
        &m,
    )?;
    for (t, b) in sample_nodes(&m) {
        for y in sample_axis() {
            for z in Z_SAMPLES {
                let (f1, f2) = (p.s1.driver.eval(t, b, y, z), p.s2.driver.eval(t, b, y, z));
                if !relation_holds(r.driver, f1, f2) {
                    return Err(VerifyError::Hypothesis(format!(
                        "driver {f1} vs {f2} at (t, B, y, z) = ({t}, {b}, {y}, {z}) violates {:?}",
                        r.driver
                    )));
                }
            }
        }
    }
    Ok(m)
}

fn sampled_non_increasing(s: &ScenarioSpec, m: &LatticeModel) -> bool {
    sample_nodes(m).all(|(t, b)| {
        let mut prev = f64::INFINITY;
        sample_axis().all(|y| {
            let v = s.driver.eval(t, b, y, 0.0);
            let ok = v <= prev;
            prev = v;
            ok
        })
    })
}

fn equal_zero_level(p: &OrderedScenarioPair, m: &LatticeModel) -> bool {
    sample_nodes(m)
        .all(|(t, b)| p.s1.driver.eval(t, b, 0.0, 0.0) == p.s2.driver.eval(t, b, 0.0, 0.0))
}

/// The strongest hypothesis family both members satisfy, after sampling.
pub fn theorem_tag(p: &OrderedScenarioPair, m: &LatticeModel) -> TheoremTag {
    let lower_equal = p.s1.lower_field(m) == p.s2.lower_field(m);
    let upper_equal = p.s1.upper_field(m) == p.s2.upper_field(m);
    let case = match (lower_equal, upper_equal) {
        (true, true) => BarrierCase::Shared,
        (false, true) => BarrierCase::OrderedLower,
        (true, false) => BarrierCase::OrderedUpper,
        (false, false) => BarrierCase::OrderedBoth,
    };
    let both = [&p.s1, &p.s2];
    let class = if case == BarrierCase::OrderedBoth {
        HypothesisClass::General
    } else if both.iter().all(|s| s.driver.family.is_y_lipschitz()) {
        HypothesisClass::LipschitzDriver
    } else if both.iter().all(|s| s.driver.family.is_z_independent()) {
        let monotone = both.iter().all(|s| sampled_non_increasing(s, m));
        let base = both
            .iter()
            .all(|s| s.terminal.is_bounded() && s.driver.family.zero_level_bounded());
        let lower_plus = both.iter().all(|s| s.lower.bounded_above());
        let upper_minus = both.iter().all(|s| s.upper.bounded_below());
        if monotone && base && lower_plus && upper_minus {
            HypothesisClass::BoundedMonotone
        } else if monotone && base && upper_minus {
            HypothesisClass::UnboundedLower
        } else if monotone && base {
            HypothesisClass::UnboundedBarriers
        } else if equal_zero_level(p, m) {
            HypothesisClass::EqualZeroLevel
        } else {
            HypothesisClass::General
        }
    } else {
        HypothesisClass::General
    };
    TheoremTag { class, case }
}

// ---------------------------------------------------------------------------
// Comparison checks

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonVerdict {
    pub theorem_tag: String,
    pub y_ordered: bool,
    /// `max (Y1 - Y2)^+`, reported even when within tolerance.
    pub y_worst: f64,
    pub y_worst_node: Node,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kplus_increment_ordered: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kplus_worst: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kminus_increment_ordered: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kminus_worst: Option<f64>,
    /// Ordering of the cumulative processes, pathwise when the tree is small
    /// enough and otherwise implied by the increments.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cumulative_ordered: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cumulative_worst: Option<f64>,
    pub cumulative_pathwise: bool,
}

impl ComparisonVerdict {
    pub fn passed(&self) -> bool {
        self.y_ordered
            && self.kplus_increment_ordered != Some(false)
            && self.kminus_increment_ordered != Some(false)
            && self.cumulative_ordered != Some(false)
    }

    pub fn worst_gap(&self) -> f64 {
        [self.kplus_worst, self.kminus_worst, self.cumulative_worst]
            .into_iter()
            .flatten()
            .fold(self.y_worst, f64::max)
    }
}

/// `(max (a - b)^+, where)`
fn worst_excess(a: &NodeField, b: &NodeField, m: &LatticeModel) -> (f64, Node) {
    let mut worst = (0.0, Node::new(0, 0));
    for node in m.nodes() {
        let d = a.at(node) - b.at(node);
        if d > worst.0 {
            worst = (d, node);
        }
    }
    worst
}

/// `max over paths and layers of (lo - hi)^+` for the running sums.
fn pathwise_excess(lo: &NodeField, hi: &NodeField, m: &LatticeModel) -> f64 {
    let mut worst: f64 = 0.0;
    for path in m.enumerate_paths().expect("checked against the limit") {
        let (mut a, mut b) = (0.0, 0.0);
        for node in path.nodes().take(m.steps()) {
            a += lo.at(node);
            b += hi.at(node);
            worst = worst.max(a - b);
        }
    }
    worst
}

fn solve_pair(p: &OrderedScenarioPair) -> Result<(SolutionSurface, SolutionSurface), VerifyError> {
    let rate = p.common_rate();
    Ok((
        solve_reflected_with_rate(&p.s1, rate)?,
        solve_reflected_with_rate(&p.s2, rate)?,
    ))
}

fn compare(
    p: &OrderedScenarioPair,
    tag: TheoremTag,
    with_k: bool,
) -> Result<ComparisonVerdict, VerifyError> {
    let (a, b) = solve_pair(p)?;
    let m = a.lattice;
    let (y_worst, y_node) = worst_excess(&a.y, &b.y, &m);
    let mut v = ComparisonVerdict {
        theorem_tag: tag.to_string(),
        y_ordered: y_worst <= ORDER_TOL,
        y_worst,
        y_worst_node: y_node,
        kplus_increment_ordered: None,
        kplus_worst: None,
        kminus_increment_ordered: None,
        kminus_worst: None,
        cumulative_ordered: None,
        cumulative_worst: None,
        cumulative_pathwise: false,
    };
    if !with_k {
        return Ok(v);
    }
    let pathwise = m.steps() <= PATHWISE_LIMIT.min(MAX_ENUMERATION_STEPS);
    let mut cumulative: Option<f64> = None;
    if tag.asserts_k_plus() {
        // K+ of the first member dominates
        let w = worst_excess(&b.dk_plus, &a.dk_plus, &m).0;
        v.kplus_increment_ordered = Some(w <= ORDER_TOL);
        v.kplus_worst = Some(w);
        let c = if pathwise {
            pathwise_excess(&b.dk_plus, &a.dk_plus, &m)
        } else {
            w
        };
        cumulative = Some(cumulative.unwrap_or(0.0).max(c));
    }
    if tag.asserts_k_minus() {
        let w = worst_excess(&a.dk_minus, &b.dk_minus, &m).0;
        v.kminus_increment_ordered = Some(w <= ORDER_TOL);
        v.kminus_worst = Some(w);
        let c = if pathwise {
            pathwise_excess(&a.dk_minus, &b.dk_minus, &m)
        } else {
            w
        };
        cumulative = Some(cumulative.unwrap_or(0.0).max(c));
    }
    if let Some(c) = cumulative {
        v.cumulative_ordered = Some(c <= ORDER_TOL);
        v.cumulative_worst = Some(c);
        v.cumulative_pathwise = pathwise;
    }
    Ok(v)
}

/// `Y1 <= Y2` at every node, after the declared orderings are confirmed.
pub fn check_y_comparison(p: &OrderedScenarioPair) -> Result<ComparisonVerdict, VerifyError> {
    let m = check_hypotheses(p)?;
    compare(p, theorem_tag(p, &m), false)
}

/// The `Y` ordering plus the reflection orderings asserted for the pair's
/// barrier case. Rejects pairs whose tag asserts no reflection ordering.
pub fn check_k_comparison(p: &OrderedScenarioPair) -> Result<ComparisonVerdict, VerifyError> {
    let m = check_hypotheses(p)?;
    let tag = theorem_tag(p, &m);
    if !(tag.asserts_k_plus() || tag.asserts_k_minus()) {
        return Err(VerifyError::Inapplicable(format!(
            "pair tagged {tag} carries no reflection ordering"
        )));
    }
    compare(p, tag, true)
}

// ---------------------------------------------------------------------------
// Domination by frozen-driver references

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationVerdict {
    /// `max (dK- - dK-_ref)^+` against the reference frozen at the lower
    /// barrier's negative part.
    pub worst_minus: f64,
    /// `max (dK+ - dK+_ref)^+` against the reference frozen at the upper
    /// barrier's positive part.
    pub worst_plus: f64,
    pub minus_dominated: bool,
    pub plus_dominated: bool,
}

impl DominationVerdict {
    pub fn passed(&self) -> bool {
        self.minus_dominated && self.plus_dominated
    }
}

/// `s` with driver `f(t, a_t, z) + rate (y - a_t)`, where `a = min(L, 0)` or
/// `a = max(U, 0)`. The linear term vanishes from the effective driver of a
/// sweep at `rate`, leaving `f` frozen at the barrier part.
pub fn frozen_reference(s: &ScenarioSpec, at: FreezeAt, rate: f64) -> ScenarioSpec {
    let anchor = match at {
        FreezeAt::LowerNegativePart => s.lower.clone(),
        FreezeAt::UpperPositivePart => s.upper.clone(),
    };
    let mut out = s.clone();
    out.driver = DriverSpec {
        family: Driver::Frozen {
            inner: Box::new(s.driver.family.clone()),
            anchor: Box::new(anchor),
            at,
            rate,
        },
        mu: rate,
        k: s.driver.k,
        growth_phi: None,
    };
    out
}

pub fn check_k_domination(s: &ScenarioSpec) -> Result<DominationVerdict, VerifyError> {
    if !(s.lower.is_finite() && s.upper.is_finite()) {
        return Err(VerifyError::Inapplicable(
            "reference problems need two finite barriers".into(),
        ));
    }
    let rate = default_rate(s);
    let sol = solve_reflected_with_rate(s, rate)?;
    let m = sol.lattice;
    let lower_ref = solve_reflected_with_rate(
        &frozen_reference(s, FreezeAt::LowerNegativePart, rate),
        rate,
    )?;
    let upper_ref = solve_reflected_with_rate(
        &frozen_reference(s, FreezeAt::UpperPositivePart, rate),
        rate,
    )?;
    let worst_minus = worst_excess(&sol.dk_minus, &lower_ref.dk_minus, &m).0;
    let worst_plus = worst_excess(&sol.dk_plus, &upper_ref.dk_plus, &m).0;
    Ok(DominationVerdict {
        worst_minus,
        worst_plus,
        minus_dominated: worst_minus <= ORDER_TOL,
        plus_dominated: worst_plus <= ORDER_TOL,
    })
}

// ---------------------------------------------------------------------------
// Two-scheme agreement

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessVerdict {
    pub threshold: f64,
    /// Sup-node gap at the last weight of the tail.
    pub sup_gap: f64,
    pub worst_node: Node,
    /// `(m = n, sup gap)` along the tail.
    pub tail: Vec<(f64, f64)>,
    pub trend_nonincreasing: bool,
    pub passed: bool,
}

/// Projection against penalized solutions at `m = n` along
/// [`UNIQUENESS_TAIL`], at one shared rate.
pub fn check_uniqueness_surrogate(
    s: &ScenarioSpec,
    threshold: f64,
) -> Result<UniquenessVerdict, SolveError> {
    let rate = default_rate(s);
    let proj = solve_reflected_with_rate(s, rate)?;
    let gaps = UNIQUENESS_TAIL
        .par_iter()
        .map(|&w| {
            let pen = solve_penalized_with_rate(s, w, w, rate)?;
            Ok((w, pen.y.sup_distance(&proj.y)))
        })
        .collect::<Result<Vec<_>, SolveError>>()?;
    let &(_, (sup_gap, worst_node)) = gaps.last().expect("non-empty tail");
    let tail: Vec<(f64, f64)> = gaps.iter().map(|&(w, (g, _))| (w, g)).collect();
    let trend_nonincreasing = tail.windows(2).all(|w| w[1].1 <= w[0].1);
    Ok(UniquenessVerdict {
        threshold,
        sup_gap,
        worst_node,
        tail,
        trend_nonincreasing,
        passed: sup_gap <= threshold,
    })
}

// ---------------------------------------------------------------------------
// Generated suite

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inapplicable,
}

impl CheckStatus {
    pub fn name(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Inapplicable => "inapplicable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub status: CheckStatus,
    pub worst_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteItem {
    pub index: usize,
    pub mode: OrderingMode,
    pub theorem_tag: String,
    pub steps: usize,
    pub horizon: f64,
    pub verdict: CheckStatus,
    pub worst_gap: f64,
    pub repro_cmd: String,
    pub checks: Vec<CheckOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SuiteSummary {
    pub items: usize,
    pub passed: usize,
    pub failed: usize,
    pub inapplicable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub count: usize,
    pub summary: SuiteSummary,
    pub items: Vec<SuiteItem>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.summary.failed == 0
    }
}

fn round(x: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (x * s).round() / s
}

fn gen_driver(rng: &mut ChaCha8Rng) -> DriverSpec {
    let u = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| round(rng.random_range(lo..hi), 3);
    match rng.random_range(0..4u32) {
        0 => {
            let (a, b, c) = (u(rng, -1.0, 0.5), u(rng, -0.5, 0.5), u(rng, -1.0, 1.0));
            DriverSpec::new(Driver::linear(a, b, c), a.max(0.0), b.abs())
        }
        1 => {
            let c3 = u(rng, 0.2, 1.0);
            let a = u(rng, -0.5, 0.5);
            let b = if rng.random_bool(0.5) {
                0.0
            } else {
                u(rng, -0.5, 0.5)
            };
            let g = u(rng, -1.0, 1.0);
            DriverSpec::new(Driver::cubic(c3, a, b, g), a.max(0.0), b.abs())
        }
        2 => DriverSpec::new(Driver::constant(u(rng, -1.0, 1.0)), 0.0, 0.0),
        _ => {
            let v0 = u(rng, -0.5, 1.0);
            let v1 = v0 - u(rng, 0.0, 1.0);
            let v2 = v1 - u(rng, 0.0, 1.0);
            DriverSpec::new(
                Driver::CustomTable(TableParams {
                    ys: vec![-1.0, 0.0, 1.0],
                    values: vec![v0, v1, v2],
                    b: 0.0,
                }),
                0.0,
                0.0,
            )
        }
    }
}

fn gen_terminal(rng: &mut ChaCha8Rng) -> Terminal {
    let u = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| round(rng.random_range(lo..hi), 3);
    match rng.random_range(0..3u32) {
        0 => Terminal::sine(u(rng, 0.1, 0.5), u(rng, 0.5, 2.0), u(rng, -0.2, 0.2)),
        1 => Terminal::constant(u(rng, -0.3, 0.3)),
        _ => Terminal::Cap {
            inner: Box::new(Terminal::Floor {
                inner: Box::new(Terminal::affine(u(rng, -0.2, 0.2), u(rng, -1.0, 1.0))),
                level: -0.5,
            }),
            level: 0.5,
        },
    }
}

/// Constant or affine-in-time barrier whose terminal value is `end`.
fn gen_barrier(rng: &mut ChaCha8Rng, end: f64, horizon: f64) -> Barrier {
    if rng.random_bool(0.5) {
        Barrier::constant(end)
    } else {
        let slope = round(rng.random_range(-0.3..0.3), 3);
        Barrier::affine_in_time(end - slope * horizon, slope)
    }
}

/// Deterministic pair number `index` of the suite for `seed`.
pub fn generate_pair(seed: u64, index: usize, mode: OrderingMode) -> OrderedScenarioPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    loop {
        if let Some(p) = try_generate(&mut rng, mode) {
            return p;
        }
    }
}

fn try_generate(rng: &mut ChaCha8Rng, mode: OrderingMode) -> Option<OrderedScenarioPair> {
    let rel = DeclaredRelations::for_mode(mode);
    let steps = rng.random_range(4..=12usize);
    let horizon = if rng.random_bool(0.5) { 0.5 } else { 1.0 };
    let m = LatticeModel::new(horizon, steps).ok()?;
    let mut delta = || round(rng.random_range(0.02..0.3), 3);
    let (d_xi, d_f, d_l, d_u) = (delta(), delta(), delta(), delta());

    let driver1 = gen_driver(rng);
    let mut driver2 = driver1.clone();
    if rel.driver == Relation::LessEq {
        driver2.family = Driver::Shifted {
            inner: Box::new(driver1.family.clone()),
            shift: d_f,
        };
    }
    let xi1 = gen_terminal(rng);
    let xi2 = if rel.terminal == Relation::LessEq {
        Terminal::Shift {
            inner: Box::new(xi1.clone()),
            shift: d_xi,
        }
    } else {
        xi1.clone()
    };
    let terminal_at = |xi: &Terminal| -> Vec<f64> {
        (0..=steps).map(|j| xi.eval(m.brownian(steps, j))).collect()
    };
    let lo = terminal_at(&xi1).into_iter().fold(f64::INFINITY, f64::min);
    let hi = terminal_at(&xi2)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);

    let lower_end = lo - round(rng.random_range(0.0..0.1), 3);
    let upper_end = hi + round(rng.random_range(0.0..0.1), 3);
    let lower2 = gen_barrier(rng, lower_end, horizon);
    let upper1 = gen_barrier(rng, upper_end, horizon);
    let lower1 = if rel.lower == Relation::LessEq {
        Barrier::Shifted {
            inner: Box::new(lower2.clone()),
            shift: -d_l,
        }
    } else {
        lower2.clone()
    };
    let upper2 = if rel.upper == Relation::LessEq {
        Barrier::Shifted {
            inner: Box::new(upper1.clone()),
            shift: d_u,
        }
    } else {
        upper1.clone()
    };

    let s1 = ScenarioSpec::new(horizon, driver1, xi1, lower1, upper1, steps);
    let s2 = ScenarioSpec::new(horizon, driver2, xi2, lower2, upper2, steps);
    check_solvable(&s1, &m).ok()?;
    check_solvable(&s2, &m).ok()?;
    Some(OrderedScenarioPair::new(s1, s2, mode))
}

fn outcome_from(name: &'static str, r: Result<(bool, f64), VerifyError>) -> CheckOutcome {
    match r {
        Ok((ok, gap)) => CheckOutcome {
            name,
            status: if ok {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            worst_gap: gap,
            detail: None,
        },
        Err(VerifyError::Hypothesis(msg)) | Err(VerifyError::Inapplicable(msg)) => CheckOutcome {
            name,
            status: CheckStatus::Inapplicable,
            worst_gap: 0.0,
            detail: Some(msg),
        },
        Err(e) => CheckOutcome {
            name,
            status: CheckStatus::Fail,
            worst_gap: f64::NAN,
            detail: Some(e.to_string()),
        },
    }
}

/// Runs every check on one generated pair.
pub fn run_item(seed: u64, count: usize, index: usize) -> SuiteItem {
    let mode = OrderingMode::ALL[index / count.max(1)];
    let p = generate_pair(seed, index, mode);
    let repro_cmd = format!("rbsde verify --seed {seed} --count {count} --only {index}");
    let mut item = SuiteItem {
        index,
        mode,
        theorem_tag: String::new(),
        steps: p.s1.grid.steps,
        horizon: p.s1.horizon,
        verdict: CheckStatus::Inapplicable,
        worst_gap: 0.0,
        repro_cmd,
        checks: Vec::new(),
    };
    let m = match check_hypotheses(&p) {
        Ok(m) => m,
        Err(e) => {
            item.checks.push(outcome_from("hypotheses", Err(e)));
            return item;
        }
    };
    let tag = theorem_tag(&p, &m);
    item.theorem_tag = tag.to_string();
    let with_k = tag.asserts_k_plus() || tag.asserts_k_minus();

    let base = compare(&p, tag, with_k);
    let base_passed = base.as_ref().map(|v| v.passed()).ok();
    item.checks.push(outcome_from(
        "y_comparison",
        base.as_ref()
            .map(|v| (v.y_ordered, v.y_worst))
            .map_err(Clone::clone),
    ));
    if with_k {
        item.checks.push(outcome_from(
            "k_comparison",
            base.as_ref()
                .map(|v| {
                    let ok = v.kplus_increment_ordered != Some(false)
                        && v.kminus_increment_ordered != Some(false)
                        && v.cumulative_ordered != Some(false);
                    (ok, v.worst_gap())
                })
                .map_err(Clone::clone),
        ));
    }
    let equivariance = p
        .transformed(EQUIVARIANCE_RATE)
        .and_then(|q| compare(&q, tag, with_k))
        .map(|v| (Some(v.passed()) == base_passed, v.worst_gap()));
    item.checks
        .push(outcome_from("transform_equivariance", equivariance));
    for (name, s) in [
        ("k_domination_first", &p.s1),
        ("k_domination_second", &p.s2),
    ] {
        item.checks.push(outcome_from(
            name,
            check_k_domination(s).map(|v| (v.passed(), v.worst_minus.max(v.worst_plus))),
        ));
    }

    item.worst_gap =
        item.checks
            .iter()
            .map(|c| c.worst_gap)
            .fold(0.0, |a, b| if b.is_nan() { b } else { a.max(b) });
    item.verdict = if item.checks.iter().any(|c| c.status == CheckStatus::Fail) {
        CheckStatus::Fail
    } else if item.checks.iter().any(|c| c.status == CheckStatus::Pass) {
        CheckStatus::Pass
    } else {
        CheckStatus::Inapplicable
    };
    item
}

fn summarize(seed: u64, count: usize, items: Vec<SuiteItem>) -> SuiteReport {
    let tally = |s: CheckStatus| items.iter().filter(|i| i.verdict == s).count();
    SuiteReport {
        seed,
        count,
        summary: SuiteSummary {
            items: items.len(),
            passed: tally(CheckStatus::Pass),
            failed: tally(CheckStatus::Fail),
            inapplicable: tally(CheckStatus::Inapplicable),
        },
        items,
    }
}

/// `count` generated pairs per ordering mode, item `k` of mode `q` at index
/// `q * count + k`. Items run concurrently and are reported in index order.
pub fn run_suite(seed: u64, count: usize) -> SuiteReport {
    let total = count * OrderingMode::ALL.len();
    let items: Vec<SuiteItem> = (0..total)
        .into_par_iter()
        .map(|index| run_item(seed, count, index))
        .collect();
    summarize(seed, count, items)
}

/// A single item of [`run_suite`], for reproduction.
pub fn run_suite_only(seed: u64, count: usize, index: usize) -> Option<SuiteReport> {
    (index < count * OrderingMode::ALL.len())
        .then(|| summarize(seed, count, vec![run_item(seed, count, index)]))
}
