use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rbsde::dynkin::{consistency_check, GameValueReport, MAX_BRUTE_FORCE_STEPS};
use rbsde::model::{
    validate_scenario, validate_witness, Finding, MokobodskiWitness, ValidationReport,
};
use rbsde::penalize::{run_schedule, solve_penalized, PenaltySchedule, ScheduleReport};
use rbsde::reflect::{
    convergence_study, skorokhod_residuals, solve_picard, solve_reflected, truncation_study,
    ConvergenceStudy, PicardConfig, PicardTrace, Scheme, SkorokhodResiduals, SolveMeta,
    TruncationMode, TruncationStudy,
};
use rbsde::verify::{run_suite, run_suite_only, CheckStatus, OrderingMode, SuiteReport};
use rbsde::{Node, ScenarioSpec, SolveError};
use serde::Serialize;

use crate::output::{emit, fmt_f64, to_json, Envelope, Table, SCHEMA_VERSION};
use crate::{Cli, CliError, Command, ScheduleMode, SchemeArg};

/// Largest `|V - Y|` accepted by the game consistency check.
const GAME_GAP_TOL: f64 = 1e-10;

fn solve_err(e: SolveError) -> CliError {
    match e {
        SolveError::InvalidInput(msg) => CliError::Validation(msg),
        other => CliError::Solve(other.to_string()),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read `{}`: {e}", path.display())))
}

fn describe(f: &Finding) -> String {
    match &f.location {
        Some(loc) => format!("{}: {} at {loc}", f.clause, f.message),
        None => format!("{}: {}", f.clause, f.message),
    }
}

fn load_scenario(path: &Path, steps: Option<usize>) -> Result<ScenarioSpec, CliError> {
    let spec = ScenarioSpec::from_json_str(&read_text(path)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(match steps {
        Some(n) => spec.with_steps(n),
        None => spec,
    })
}

/// Loads and validates; solver commands refuse scenarios that fail.
fn load_valid(path: &Path, steps: Option<usize>) -> Result<ScenarioSpec, CliError> {
    let spec = load_scenario(path, steps)?;
    let report = validate_scenario(&spec);
    if !report.passed() {
        let lines: Vec<String> = report.failures().map(describe).collect();
        return Err(CliError::Validation(format!(
            "{} fails validation:\n  {}",
            path.display(),
            lines.join("\n  ")
        )));
    }
    Ok(spec)
}

struct Emitted {
    json: Vec<u8>,
    table: Option<Table>,
    /// Written regardless; decides the exit code afterwards.
    outcome: Result<(), CliError>,
}

fn envelope<T: Serialize>(cli: &Cli, command: &'static str, body: T) -> Result<Vec<u8>, CliError> {
    let generated_at_unix = (!cli.no_timestamp).then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    to_json(&Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        generated_at_unix,
        body,
    })
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let e = match &cli.command {
        Command::Validate { scenario, witness } => validate(cli, scenario, witness.as_deref())?,
        Command::Solve {
            scenario,
            scheme,
            steps,
            penalty_schedule,
            gamma,
        } => solve(
            cli,
            scenario,
            *scheme,
            *steps,
            penalty_schedule.as_deref(),
            *gamma,
        )?,
        Command::Penalize {
            scenario,
            penalty_schedule,
            mode,
            levels,
            steps,
        } => penalize(
            cli,
            scenario,
            penalty_schedule.as_deref(),
            *mode,
            levels,
            *steps,
        )?,
        Command::Dynkin { scenario, steps } => dynkin(cli, scenario, *steps)?,
        Command::Verify { seed, count, only } => verify(cli, *seed, *count, *only)?,
        Command::Convergence {
            scenario,
            step_counts,
            reference_steps,
        } => convergence(cli, scenario, step_counts, *reference_steps)?,
        Command::Truncation {
            scenario,
            mode,
            levels,
            steps,
        } => truncation(cli, scenario, mode, levels, *steps)?,
    };
    emit(cli.out.as_deref(), &e.json, e.table.as_ref())?;
    e.outcome
}

#[derive(Serialize)]
struct ValidateBody<'a> {
    scenario: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    witness: Option<String>,
    passed: bool,
    findings: &'a [Finding],
}

fn validate(cli: &Cli, path: &Path, witness: Option<&Path>) -> Result<Emitted, CliError> {
    let spec = load_scenario(path, None)?;
    let mut report: ValidationReport = validate_scenario(&spec);
    if let Some(wp) = witness {
        let w = MokobodskiWitness::from_json_str(&read_text(wp)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", wp.display())))?;
        report.findings.extend(validate_witness(&spec, &w).findings);
    }
    let passed = report.passed();
    let json = envelope(
        cli,
        "validate",
        ValidateBody {
            scenario: path.display().to_string(),
            witness: witness.map(|p| p.display().to_string()),
            passed,
            findings: &report.findings,
        },
    )?;
    let outcome = if passed {
        Ok(())
    } else {
        let lines: Vec<String> = report.failures().map(describe).collect();
        Err(CliError::Validation(format!(
            "{} fails validation:\n  {}",
            path.display(),
            lines.join("\n  ")
        )))
    };
    Ok(Emitted {
        json,
        table: None,
        outcome,
    })
}

#[derive(Serialize)]
struct SolveBody {
    scenario: String,
    scheme: Scheme,
    steps: usize,
    horizon: f64,
    #[serde(rename = "Y0")]
    y0: f64,
    #[serde(rename = "Z0")]
    z0: f64,
    #[serde(rename = "E_K_plus_T")]
    expected_k_plus: f64,
    #[serde(rename = "E_K_minus_T")]
    expected_k_minus: f64,
    residuals: SkorokhodResiduals,
    meta: SolveMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    picard: Option<PicardTrace>,
}

fn last_pair(text: Option<&str>) -> Result<(f64, f64), CliError> {
    let sched = match text {
        Some(t) => PenaltySchedule::parse(t).map_err(solve_err)?,
        None => PenaltySchedule::default(),
    };
    Ok(*sched.pairs().last().expect("schedules are nonempty"))
}

fn solve(
    cli: &Cli,
    path: &Path,
    scheme: SchemeArg,
    steps: Option<usize>,
    penalty_schedule: Option<&str>,
    gamma: Option<f64>,
) -> Result<Emitted, CliError> {
    if gamma.is_some() && scheme != SchemeArg::Picard {
        return Err(CliError::Validation(
            "--gamma only applies to --scheme picard".into(),
        ));
    }
    if penalty_schedule.is_some() && scheme != SchemeArg::Penalized {
        return Err(CliError::Validation(
            "--penalty-schedule only applies to --scheme penalized".into(),
        ));
    }
    let spec = load_valid(path, steps)?;
    let (sol, picard) = match scheme {
        SchemeArg::Projection => (solve_reflected(&spec).map_err(solve_err)?, None),
        SchemeArg::Penalized => {
            let (m, n) = last_pair(penalty_schedule)?;
            (solve_penalized(&spec, m, n).map_err(solve_err)?, None)
        }
        SchemeArg::Picard => {
            let mut cfg = PicardConfig::for_spec(&spec);
            if let Some(g) = gamma {
                cfg.gamma = g;
            }
            let (sol, trace) = solve_picard(&spec, &cfg).map_err(solve_err)?;
            (sol, Some(trace))
        }
    };
    let (kp, km) = sol.expected_k_totals();
    let lattice = sol.lattice;
    let mut table = Table::new(&["layer", "state", "t", "B", "Y", "Z", "dK_plus", "dK_minus"]);
    for node in lattice.nodes() {
        let (i, j) = (node.layer, node.state);
        table.push(vec![
            i.to_string(),
            j.to_string(),
            fmt_f64(lattice.time(i)),
            fmt_f64(lattice.brownian(i, j)),
            fmt_f64(sol.y.at(node)),
            fmt_f64(sol.z.at(node)),
            fmt_f64(sol.dk_plus.at(node)),
            fmt_f64(sol.dk_minus.at(node)),
        ]);
    }
    let json = envelope(
        cli,
        "solve",
        SolveBody {
            scenario: path.display().to_string(),
            scheme: sol.meta.scheme,
            steps: lattice.steps(),
            horizon: lattice.horizon(),
            y0: sol.y0(),
            z0: sol.z0(),
            expected_k_plus: kp,
            expected_k_minus: km,
            residuals: skorokhod_residuals(&spec, &sol),
            meta: sol.meta.clone(),
            picard,
        },
    )?;
    Ok(Emitted {
        json,
        table: Some(table),
        outcome: Ok(()),
    })
}

#[derive(Serialize)]
struct PenalizeBody<'a> {
    scenario: String,
    mode: &'static str,
    steps: usize,
    #[serde(flatten)]
    report: &'a ScheduleReport,
}

fn penalize(
    cli: &Cli,
    path: &Path,
    penalty_schedule: Option<&str>,
    mode: ScheduleMode,
    levels: &[f64],
    steps: Option<usize>,
) -> Result<Emitted, CliError> {
    let sched = match (mode, penalty_schedule) {
        (ScheduleMode::Simultaneous, Some(t)) => PenaltySchedule::parse(t).map_err(solve_err)?,
        (ScheduleMode::Simultaneous, None) => PenaltySchedule::default(),
        (ScheduleMode::Sequential, None) => {
            PenaltySchedule::sequential(levels).map_err(solve_err)?
        }
        (ScheduleMode::Sequential, Some(_)) => {
            return Err(CliError::Validation(
                "--mode sequential builds its schedule from --levels; drop --penalty-schedule"
                    .into(),
            ))
        }
    };
    let spec = load_valid(path, steps)?;
    let report = run_schedule(&spec, &sched).map_err(solve_err)?;
    let mut table = Table::new(&[
        "m",
        "n",
        "sup_err_vs_projection",
        "Y0",
        "K_plus_total_expect",
        "K_minus_total_expect",
    ]);
    for r in &report.rows {
        table.push(vec![
            fmt_f64(r.m),
            fmt_f64(r.n),
            fmt_f64(r.sup_err_vs_projection),
            fmt_f64(r.y0),
            fmt_f64(r.k_plus_total_expect),
            fmt_f64(r.k_minus_total_expect),
        ]);
    }
    let json = envelope(
        cli,
        "penalize",
        PenalizeBody {
            scenario: path.display().to_string(),
            mode: match mode {
                ScheduleMode::Simultaneous => "simultaneous",
                ScheduleMode::Sequential => "sequential",
            },
            steps: spec.grid.steps,
            report: &report,
        },
    )?;
    Ok(Emitted {
        json,
        table: Some(table),
        outcome: Ok(()),
    })
}

#[derive(Serialize)]
struct DynkinBody<'a> {
    scenario: String,
    steps: usize,
    #[serde(rename = "Y0")]
    y0: f64,
    max_gap: f64,
    worst_node: Node,
    consistent: bool,
    game: &'a GameValueReport,
}

fn dynkin(cli: &Cli, path: &Path, steps: Option<usize>) -> Result<Emitted, CliError> {
    let spec = load_valid(path, steps)?;
    let sol = solve_reflected(&spec).map_err(solve_err)?;
    let report = consistency_check(&spec, &sol).map_err(|e| CliError::Solve(e.to_string()))?;
    let n = sol.lattice.steps();
    let mut problems = Vec::new();
    if report.max_gap.is_nan() || report.max_gap > GAME_GAP_TOL {
        problems.push(format!(
            "game value differs from Y by {:e} at {}",
            report.max_gap, report.worst_node
        ));
    }
    if n <= MAX_BRUTE_FORCE_STEPS && !report.game.is_saddle_certified {
        problems.push("optimal stopping rules are not certified as a saddle point".into());
    }
    let json = envelope(
        cli,
        "dynkin",
        DynkinBody {
            scenario: path.display().to_string(),
            steps: n,
            y0: sol.y0(),
            max_gap: report.max_gap,
            worst_node: report.worst_node,
            consistent: problems.is_empty(),
            game: &report.game,
        },
    )?;
    let outcome = if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::SuiteFailed(problems.join("; ")))
    };
    Ok(Emitted {
        json,
        table: None,
        outcome,
    })
}

fn verify(cli: &Cli, seed: u64, count: usize, only: Option<usize>) -> Result<Emitted, CliError> {
    let report: SuiteReport = match only {
        None => run_suite(seed, count),
        Some(k) => run_suite_only(seed, count, k).ok_or_else(|| {
            CliError::Validation(format!(
                "--only {k} is out of range for --count {count} (items 0..{})",
                count * OrderingMode::ALL.len()
            ))
        })?,
    };
    let mut table = Table::new(&[
        "index",
        "mode",
        "theorem_tag",
        "verdict",
        "worst_gap",
        "repro_cmd",
    ]);
    for item in &report.items {
        table.push(vec![
            item.index.to_string(),
            item.mode.name().to_string(),
            item.theorem_tag.clone(),
            item.verdict.name().to_string(),
            fmt_f64(item.worst_gap),
            item.repro_cmd.clone(),
        ]);
    }
    let json = envelope(cli, "verify", &report)?;
    let outcome = if report.passed() {
        Ok(())
    } else {
        let failing: Vec<&str> = report
            .items
            .iter()
            .filter(|i| i.verdict == CheckStatus::Fail)
            .map(|i| i.repro_cmd.as_str())
            .collect();
        Err(CliError::SuiteFailed(format!(
            "{} of {} items failed; rerun with:\n  {}",
            report.summary.failed,
            report.summary.items,
            failing.join("\n  ")
        )))
    };
    Ok(Emitted {
        json,
        table: Some(table),
        outcome,
    })
}

#[derive(Serialize)]
struct ConvergenceBody<'a> {
    scenario: String,
    #[serde(flatten)]
    study: &'a ConvergenceStudy,
}

fn convergence(
    cli: &Cli,
    path: &Path,
    step_counts: &[usize],
    reference_steps: Option<usize>,
) -> Result<Emitted, CliError> {
    let spec = load_valid(path, None)?;
    let finest = step_counts.iter().copied().max().unwrap_or(0);
    let reference = reference_steps.unwrap_or(4 * finest);
    let study = convergence_study(&spec, step_counts, reference).map_err(solve_err)?;
    let mut table = Table::new(&["steps", "Y0", "error"]);
    for r in &study.rows {
        table.push(vec![r.steps.to_string(), fmt_f64(r.y0), fmt_f64(r.error)]);
    }
    let json = envelope(
        cli,
        "convergence",
        ConvergenceBody {
            scenario: path.display().to_string(),
            study: &study,
        },
    )?;
    Ok(Emitted {
        json,
        table: Some(table),
        outcome: Ok(()),
    })
}

#[derive(Serialize)]
struct TruncationBody {
    scenario: String,
    steps: usize,
    studies: Vec<TruncationStudy>,
}

fn truncation(
    cli: &Cli,
    path: &Path,
    mode: &str,
    levels: &[f64],
    steps: Option<usize>,
) -> Result<Emitted, CliError> {
    let modes: Vec<TruncationMode> = if mode == "all" {
        TruncationMode::ALL.to_vec()
    } else {
        vec![TruncationMode::parse(mode).ok_or_else(|| {
            let names: Vec<&str> = TruncationMode::ALL.iter().map(|m| m.name()).collect();
            CliError::Validation(format!(
                "unknown truncation mode `{mode}`; expected all or one of {}",
                names.join(", ")
            ))
        })?]
    };
    let spec = load_valid(path, steps)?;
    let studies = modes
        .iter()
        .map(|&m| truncation_study(&spec, m, levels))
        .collect::<Result<Vec<_>, _>>()
        .map_err(solve_err)?;
    let mut table = Table::new(&["mode", "level", "Y0", "sup_gap"]);
    for s in &studies {
        for r in &s.rows {
            table.push(vec![
                s.mode.name().to_string(),
                fmt_f64(r.level),
                fmt_f64(r.y0),
                fmt_f64(r.sup_gap),
            ]);
        }
    }
    let json = envelope(
        cli,
        "truncation",
        TruncationBody {
            scenario: path.display().to_string(),
            steps: spec.grid.steps,
            studies,
        },
    )?;
    Ok(Emitted {
        json,
        table: Some(table),
        outcome: Ok(()),
    })
}
