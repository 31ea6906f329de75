//! The fixed set of reference scenarios used by the acceptance checks and the
//! command-line examples. All live on `[0, 1]` with 64 steps.

use crate::model::{
    Barrier, Driver, DriverSpec, ScenarioSpec, StrikeParams, TableParams, Terminal,
};

pub const SUITE_STEPS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct StandardScenario {
    pub name: &'static str,
    pub spec: ScenarioSpec,
    /// Whether some reflection is expected to act.
    pub binding: bool,
}

fn scenario(
    name: &'static str,
    binding: bool,
    driver: DriverSpec,
    terminal: Terminal,
    lower: Barrier,
    upper: Barrier,
) -> StandardScenario {
    StandardScenario {
        name,
        spec: ScenarioSpec::new(1.0, driver, terminal, lower, upper, SUITE_STEPS),
        binding,
    }
}

pub fn standard_suite() -> Vec<StandardScenario> {
    vec![
        scenario(
            "zero",
            false,
            DriverSpec::new(Driver::constant(0.0), 0.0, 0.0),
            Terminal::constant(0.0),
            Barrier::constant(-1.0),
            Barrier::constant(1.0),
        ),
        scenario(
            "linear_decay",
            false,
            DriverSpec::new(Driver::linear(-1.0, 0.0, 0.0), 0.0, 0.0),
            Terminal::constant(1.0),
            Barrier::constant(-10.0),
            Barrier::constant(10.0),
        ),
        scenario(
            "drift_upper_brownian",
            true,
            DriverSpec::new(Driver::constant(1.0), 0.0, 0.0),
            Terminal::affine(0.0, 1.0),
            Barrier::NegInfinity,
            Barrier::state(0.2, 0.0, 1.0, 0.0),
        ),
        scenario(
            "linear_sine_two_sided",
            true,
            DriverSpec::new(Driver::linear(-0.2, 0.5, 0.6), 0.0, 0.5),
            Terminal::sine(0.35, 1.5, 0.05),
            Barrier::constant(-0.5),
            Barrier::constant(0.4),
        ),
        scenario(
            "cubic_sine_two_sided",
            true,
            DriverSpec::new(Driver::cubic(1.0, 0.0, 0.0, 0.3), 0.0, 0.0),
            Terminal::sine(0.3, 1.0, 0.0),
            Barrier::constant(-0.35),
            Barrier::affine_in_time(0.2, 0.15),
        ),
        scenario(
            "cubic_put_lower",
            true,
            DriverSpec::new(Driver::cubic(0.5, 0.0, 0.0, -0.3), 0.0, 0.0),
            Terminal::Put(StrikeParams { strike: 0.2 }),
            Barrier::constant(0.0),
            Barrier::PosInfinity,
        ),
        scenario(
            "linear_growth_call",
            true,
            DriverSpec::new(Driver::linear(0.5, 0.2, 0.0), 0.5, 0.2),
            Terminal::Call(StrikeParams { strike: 0.0 }),
            Barrier::constant(-0.2),
            Barrier::state(0.5, 0.0, 0.0, 0.5),
        ),
        scenario(
            "cubic_mu_positive",
            true,
            DriverSpec::new(Driver::cubic(0.5, 1.0, 0.0, 0.1), 1.0, 0.0),
            Terminal::sine(0.3, 1.0, 0.0),
            Barrier::constant(-0.4),
            Barrier::constant(0.45),
        ),
        scenario(
            "wide_linear_z",
            false,
            DriverSpec::new(Driver::linear(-0.5, 1.0, 0.0), 0.0, 1.0),
            Terminal::sine(1.0, 1.0, 0.0),
            Barrier::constant(-10.0),
            Barrier::constant(10.0),
        ),
        scenario(
            "table_driver_two_sided",
            true,
            DriverSpec::new(
                Driver::CustomTable(TableParams {
                    ys: vec![-1.0, 0.0, 1.0],
                    values: vec![0.5, 0.1, -0.6],
                    b: 0.0,
                }),
                0.0,
                0.0,
            ),
            Terminal::affine(0.0, 0.3),
            Barrier::state(-0.3, 0.0, 0.3, 0.0),
            Barrier::state(0.25, 0.0, 0.3, 0.0),
        ),
    ]
}

pub fn find(name: &str) -> Option<StandardScenario> {
    standard_suite().into_iter().find(|s| s.name == name)
}
