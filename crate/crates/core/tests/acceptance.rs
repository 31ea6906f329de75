//! Acceptance checks. Each test prints one `PASS`/`FAIL` line to stderr,
//! bypassing output capture, then asserts.

use std::io::Write;
use std::time::Instant;

use rbsde::dynkin::{consistency_check, BRUTE_FORCE_TOL};
use rbsde::penalize::{run_schedule, PenaltySchedule};
use rbsde::reflect::{
    skorokhod_residuals, solve_picard, solve_reflected, PicardConfig, SolutionSurface,
};
use rbsde::suite::{standard_suite, StandardScenario};
use rbsde::transform::{transform_scenario, untransform_solution};
use rbsde::verify::{check_k_domination, check_uniqueness_surrogate, run_suite, CheckStatus};
use rbsde::{Barrier, Driver, DriverSpec, ScenarioSpec, Terminal};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr().lock(),
        "acceptance {id:>2} {verdict} {name}: {detail}"
    );
}

fn two_step_anchor() -> ScenarioSpec {
    ScenarioSpec::new(
        1.0,
        DriverSpec::new(Driver::constant(1.0), 0.0, 0.0),
        Terminal::affine(0.0, 1.0),
        Barrier::NegInfinity,
        Barrier::state(0.2, 0.0, 1.0, 0.0),
        2,
    )
}

/// Exact complementarity and confinement on one solved surface; returns the
/// first violation.
fn complementarity_violation(spec: &ScenarioSpec, s: &SolutionSurface) -> Option<String> {
    let m = &s.lattice;
    let (lower, upper) = (spec.lower_field(m), spec.upper_field(m));
    for node in m.nodes() {
        let (y, l, u) = (s.y.at(node), lower.at(node), upper.at(node));
        let (kp, km) = (s.dk_plus.at(node), s.dk_minus.at(node));
        let bad =
            !(l <= y && y <= u) || (kp != 0.0 && y != l) || (km != 0.0 && y != u) || kp * km != 0.0;
        if bad {
            return Some(format!("node {node}: Y={y} L={l} U={u} dK+={kp} dK-={km}"));
        }
    }
    None
}

#[test]
fn criterion_01_projection_and_penalized_agree() {
    let start = Instant::now();
    let mut worst: (f64, &str) = (0.0, "");
    let mut failures = Vec::new();
    for s in standard_suite() {
        let v = check_uniqueness_surrogate(&s.spec, 5e-3).unwrap();
        if v.sup_gap > worst.0 {
            worst = (v.sup_gap, s.name);
        }
        if !v.passed {
            failures.push(format!("{} gap {:e}", s.name, v.sup_gap));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && elapsed <= 60.0;
    report(
        1,
        "projection vs penalized at m = n = 2^14, N = 64",
        pass,
        &format!(
            "max gap {:.3e} ({}) limit 5e-3, {elapsed:.2} s of 60 s {failures:?}",
            worst.0, worst.1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_game_value_reproduces_solution() {
    let mut worst = 0.0f64;
    let mut small_trees = 0;
    let mut failures = Vec::new();
    for s in standard_suite() {
        for steps in [64, 1, 2, 3] {
            let spec = s.spec.clone().with_steps(steps);
            let sol = solve_reflected(&spec).unwrap();
            let c = consistency_check(&spec, &sol).unwrap();
            worst = worst.max(c.max_gap);
            if c.max_gap > 1e-10 {
                failures.push(format!(
                    "{} N={steps} gap {:e} at {}",
                    s.name, c.max_gap, c.worst_node
                ));
            }
            if steps <= 3 {
                small_trees += 1;
                let (lo, hi) = c.game.brute_force_value.expect("small tree is enumerated");
                let agree = (lo - hi).abs() <= BRUTE_FORCE_TOL
                    && (lo - c.game.root_value).abs() <= BRUTE_FORCE_TOL;
                if !(agree && c.game.is_saddle_certified) {
                    failures.push(format!(
                        "{} N={steps} brute force ({lo}, {hi}) vs {}",
                        s.name, c.game.root_value
                    ));
                }
            }
        }
    }
    let anchor = two_step_anchor();
    let c = consistency_check(&anchor, &solve_reflected(&anchor).unwrap()).unwrap();
    if !(c.game.is_saddle_certified && c.max_gap <= 1e-10) {
        failures.push("two-step anchor".into());
    }
    let pass = failures.is_empty();
    report(
        2,
        "game value equals Y, brute force certifies small trees",
        pass,
        &format!("max |V - Y| {worst:.3e} limit 1e-10, {small_trees} trees with N <= 3 enumerated {failures:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_two_step_hand_computation() {
    let s = two_step_anchor();
    let sol = solve_reflected(&s).unwrap();
    let tol = s.grid.implicit_tol;
    let paths = sol.pathwise_k_totals().unwrap();
    let y0_ok = (sol.y0() - 0.2).abs() <= tol;
    let k_ok = paths
        .iter()
        .all(|&(kp, km)| kp == 0.0 && (km - 0.8).abs() <= tol);
    let pass = y0_ok && k_ok && paths.len() == 4;
    report(
        3,
        "two-step upper-reflected anchor",
        pass,
        &format!(
            "Y0 = {:.15}, K-_T per path {:?}",
            sol.y0(),
            paths.iter().map(|p| p.1).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_linear_closed_form() {
    let s = standard_suite()
        .into_iter()
        .find(|s| s.name == "linear_decay")
        .unwrap()
        .spec
        .with_steps(256);
    let sol = solve_reflected(&s).unwrap();
    let err = (sol.y0() - (-1f64).exp()).abs();
    let (kp, km) = sol.expected_k_totals();
    let pass = err <= 5e-3 && kp == 0.0 && km == 0.0;
    report(
        4,
        "f = -y, N = 256 against e^-1",
        pass,
        &format!("Y0 = {:.6}, error {err:.3e} limit 5e-3", sol.y0()),
    );
    assert!(pass);
}

#[test]
fn criterion_05_comparison_suite() {
    let r = run_suite(1, 25);
    let mut per_mode = std::collections::BTreeMap::new();
    for item in &r.items {
        let e = per_mode.entry(item.mode.name()).or_insert((0, 0));
        e.1 += 1;
        if item.verdict == CheckStatus::Pass {
            e.0 += 1;
        }
    }
    let pass = r.summary.items == 125 && r.summary.passed == r.summary.items;
    let worst = r.items.iter().map(|i| i.worst_gap).fold(0.0, f64::max);
    report(
        5,
        "comparison suite, seed 1, 25 pairs per mode",
        pass,
        &format!(
            "{}/{} pass, {} fail, {} inapplicable, worst gap {worst:.3e}, per mode {per_mode:?}",
            r.summary.passed, r.summary.items, r.summary.failed, r.summary.inapplicable
        ),
    );
    if !pass {
        for item in r.items.iter().filter(|i| i.verdict != CheckStatus::Pass) {
            let _ = writeln!(
                std::io::stderr().lock(),
                "  {} {:?}: {}",
                item.index,
                item.verdict,
                item.repro_cmd
            );
        }
    }
    assert!(pass);
}

#[test]
fn criterion_06_penalization_monotone() {
    let sched = PenaltySchedule::doubling(10);
    let mut failures = Vec::new();
    let mut worst_order = 0.0f64;
    let mut binding = 0;
    for s in standard_suite() {
        let r = run_schedule(&s.spec, &sched).unwrap();
        worst_order = worst_order
            .max(r.worst_m_violation)
            .max(r.worst_n_violation);
        if !(r.monotone_in_m && r.monotone_in_n) {
            failures.push(format!("{} order", s.name));
        }
        if r.binding {
            binding += 1;
            if !r.gap_strictly_decreasing {
                let gaps: Vec<f64> = r.rows.iter().map(|row| row.sup_err_vs_projection).collect();
                failures.push(format!("{} gaps {gaps:?}", s.name));
            }
        }
    }
    let pass = failures.is_empty();
    report(
        6,
        "penalized surfaces monotone in m and n along (2^j, 2^j), j <= 10",
        pass,
        &format!("worst order violation {worst_order:.3e} slack 1e-10, {binding} binding scenarios with strictly shrinking gap {failures:?}"),
    );
    assert!(pass);
}

/// The suite scenario with `mu * y` added to its driver, so that its
/// monotonicity constant grows by `mu`.
fn with_extra_growth(s: &StandardScenario, mu: f64) -> ScenarioSpec {
    let mut spec = s.spec.clone();
    spec.driver.family = Driver::PlusLinear {
        inner: Box::new(spec.driver.family.clone()),
        slope: mu,
    };
    spec.driver.mu = mu + s.spec.driver.mu.max(0.0);
    spec
}

#[test]
fn criterion_07_transform_round_trip() {
    let mut worst = (0.0f64, String::new());
    let mut cases = 0;
    for s in standard_suite() {
        for mu in [0.5, 1.0, 2.0] {
            let spec = with_extra_growth(&s, mu);
            let direct = solve_reflected(&spec).unwrap();
            let t = transform_scenario(&spec, mu).unwrap();
            let back = untransform_solution(&solve_reflected(&t).unwrap(), mu).unwrap();
            let gap = back.y.sup_distance(&direct.y).0;
            cases += 1;
            if gap > worst.0 {
                worst = (gap, format!("{} mu={mu}", s.name));
            }
        }
    }
    let pass = worst.0 <= 1e-6;
    report(
        7,
        "untransform(solve(transform(s, mu))) against solve(s)",
        pass,
        &format!(
            "{cases} cases, max gap {:.3e} ({}) limit 1e-6",
            worst.0, worst.1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_picard_contraction() {
    let mut worst = 0.0f64;
    let mut runs = Vec::new();
    let mut pass = true;
    for k in [0.5, 1.0] {
        for (label, xi) in [
            ("sin", Terminal::sine(1.0, 1.0, 0.0)),
            (
                "call",
                Terminal::Call(rbsde::model::StrikeParams { strike: 0.0 }),
            ),
        ] {
            let spec = ScenarioSpec::new(
                1.0,
                DriverSpec::new(Driver::linear(0.0, k, 0.0), 0.0, k),
                xi,
                Barrier::constant(-10.0),
                Barrier::constant(10.0),
                32,
            );
            let cfg = PicardConfig::for_spec(&spec);
            let (sol, trace) = solve_picard(&spec, &cfg).unwrap();
            let (kp, km) = sol.expected_k_totals();
            let r = trace.ratios.iter().copied().fold(0.0, f64::max);
            worst = worst.max(r);
            pass &= r <= 0.7 && kp == 0.0 && km == 0.0 && cfg.gamma == 1.0 + 2.0 * k * k;
            runs.push(format!(
                "k={k} {label}: {} passes, max ratio {r:.3}",
                trace.iterations()
            ));
        }
    }
    report(
        8,
        "Picard squared-norm ratios, gamma = 1 + 2k^2, N = 32",
        pass,
        &format!("max ratio {worst:.4} limit 0.7; {}", runs.join("; ")),
    );
    assert!(pass);
}

#[test]
fn criterion_09_exact_complementarity() {
    let mut solves = 0;
    let mut failures = Vec::new();
    let mut check = |name: String, spec: &ScenarioSpec, sol: &SolutionSurface| {
        solves += 1;
        let r = skorokhod_residuals(spec, sol);
        let residual_free = r.lower == 0.0 && r.upper == 0.0 && r.overlap == 0.0;
        if let Some(v) = complementarity_violation(spec, sol) {
            failures.push(format!("{name}: {v}"));
        } else if !residual_free {
            failures.push(format!("{name}: residuals {r:?}"));
        }
    };
    for s in standard_suite() {
        for steps in [1, 2, 3, 64, 128] {
            let spec = s.spec.clone().with_steps(steps);
            let sol = solve_reflected(&spec).unwrap();
            check(format!("{} N={steps}", s.name), &spec, &sol);
        }
        for mu in [0.5, 2.0] {
            let spec = with_extra_growth(&s, mu);
            let sol = solve_reflected(&spec).unwrap();
            check(format!("{} mu+{mu}", s.name), &spec, &sol);
        }
        let (sol, _) = solve_picard(&s.spec, &PicardConfig::for_spec(&s.spec)).unwrap();
        check(format!("{} picard", s.name), &s.spec, &sol);
    }
    let anchor = two_step_anchor();
    check("anchor".into(), &anchor, &solve_reflected(&anchor).unwrap());
    let pass = failures.is_empty();
    report(
        9,
        "exact complementarity and confinement",
        pass,
        &format!("{solves} solves checked {failures:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_frozen_reference_domination() {
    let mut checked = Vec::new();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for s in standard_suite()
        .into_iter()
        .filter(|s| s.spec.has_finite_barriers())
    {
        let v = check_k_domination(&s.spec).unwrap();
        worst = worst.max(v.worst_minus).max(v.worst_plus);
        if !v.passed() {
            failures.push(format!(
                "{} ({:e}, {:e})",
                s.name, v.worst_minus, v.worst_plus
            ));
        }
        checked.push(s.name);
    }
    let pass = failures.is_empty() && checked.len() >= 8;
    report(
        10,
        "reflection increments dominated by frozen-driver references",
        pass,
        &format!(
            "{} scenarios, worst excess {worst:.3e} slack 1e-10 {failures:?}",
            checked.len()
        ),
    );
    assert!(pass);
}
