//! Dynkin game on the lattice: a maximizer stops at the lower barrier, a
//! minimizer at the upper one, and a running payoff accrues until either
//! stops. Backward value iteration gives the game value; on tiny trees every
//! pair of node-based stopping rules is enumerated to certify it.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lattice::{LatticeModel, LatticePath, Node, NodeField};
use crate::model::ScenarioSpec;
use crate::reflect::{running_payoff, SolutionSurface};

/// Largest tree on which stopping rules are enumerated.
pub const MAX_BRUTE_FORCE_STEPS: usize = 4;
/// A node is on a barrier when `V` is this close to it.
pub const TOUCH_TOL: f64 = 1e-10;
/// Slack for the saddle inequalities.
pub const SADDLE_TOL: f64 = 1e-10;
/// Brute-force values must agree with value iteration within this.
pub const BRUTE_FORCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("lower barrier {lower} above upper barrier {upper} at node {node}")]
    BarrierOrder { node: Node, lower: f64, upper: f64 },
    #[error("terminal payoff {value} outside [{lower}, {upper}] at node {node}")]
    TerminalOutside {
        node: Node,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("stopping-rule enumeration is limited to {limit} steps, got {steps}")]
    TooLarge { steps: usize, limit: usize },
    #[error("{what} has {found} steps, lattice has {expected}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Node-based stopping rule: stop at the first visited node whose flag is
/// set, and at the horizon otherwise. Flags on the terminal layer are
/// ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoppingRule {
    steps: usize,
    stop: Vec<bool>,
}

impl StoppingRule {
    pub fn never(steps: usize) -> Self {
        Self {
            steps,
            stop: vec![false; steps * (steps + 1) / 2],
        }
    }

    fn from_mask(steps: usize, mask: u32) -> Self {
        let stop = (0..steps * (steps + 1) / 2)
            .map(|k| mask >> k & 1 == 1)
            .collect();
        Self { steps, stop }
    }

    fn mask(&self) -> u32 {
        self.stop
            .iter()
            .enumerate()
            .fold(0, |acc, (k, &s)| if s { acc | 1 << k } else { acc })
    }

    pub fn stops_at(&self, node: Node) -> bool {
        node.layer < self.steps && self.stop[node.layer * (node.layer + 1) / 2 + node.state]
    }

    /// Per node (flat layout of [`NodeField`]), the earliest layer at which
    /// some path from that node stops; the horizon if none does.
    pub fn earliest_layers(&self) -> Vec<usize> {
        let n = self.steps;
        let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;
        let mut out = vec![n; (n + 1) * (n + 2) / 2];
        for i in (0..n).rev() {
            for j in 0..=i {
                out[idx(i, j)] = if self.stop[idx(i, j)] {
                    i
                } else {
                    out[idx(i + 1, j)].min(out[idx(i + 1, j + 1)])
                };
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GameValueReport {
    #[serde(skip)]
    pub value: NodeField,
    pub root_value: f64,
    /// Minimizer's rule: stop where `V` touches the upper barrier.
    pub sigma_hat: StoppingRule,
    /// Maximizer's rule: stop where `V` touches the lower barrier.
    pub tau_hat: StoppingRule,
    pub sigma_hat_root_layer: usize,
    pub tau_hat_root_layer: usize,
    /// `(sup_tau inf_sigma, inf_sigma sup_tau)` when the tree is small enough.
    pub brute_force_value: Option<(f64, f64)>,
    pub is_saddle_certified: bool,
}

/// Inputs of one game, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct Game<'a> {
    pub lattice: &'a LatticeModel,
    /// Running payoff on layers `0..N`.
    pub running: &'a NodeField,
    /// Terminal payoff, one value per terminal node.
    pub terminal: &'a [f64],
    pub lower: &'a NodeField,
    pub upper: &'a NodeField,
}

impl Game<'_> {
    fn check(&self) -> Result<(), GameError> {
        let n = self.lattice.steps();
        for (what, f) in [
            ("running payoff", self.running),
            ("lower barrier", self.lower),
            ("upper barrier", self.upper),
        ] {
            if f.steps() != n {
                return Err(GameError::Shape {
                    what,
                    expected: n,
                    found: f.steps(),
                });
            }
        }
        if self.terminal.len() != n + 1 {
            return Err(GameError::Shape {
                what: "terminal payoff",
                expected: n,
                found: self.terminal.len().saturating_sub(1),
            });
        }
        for node in self.lattice.nodes() {
            let (l, u) = (self.lower.at(node), self.upper.at(node));
            // NaN counts as out of order.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(l <= u) {
                return Err(GameError::BarrierOrder {
                    node,
                    lower: l,
                    upper: u,
                });
            }
        }
        for (j, &x) in self.terminal.iter().enumerate() {
            let (l, u) = (self.lower.get(n, j), self.upper.get(n, j));
            if !(l <= x && x <= u) {
                return Err(GameError::TerminalOutside {
                    node: Node::new(n, j),
                    value: x,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(())
    }

    /// `E[R_0(sigma, tau)]` by summing over every path. Ties go to the
    /// maximizer's barrier.
    pub fn expected_payoff(
        &self,
        sigma: &StoppingRule,
        tau: &StoppingRule,
    ) -> Result<f64, GameError> {
        let m = self.lattice;
        Ok(m.enumerate_paths()
            .map_err(|_| GameError::TooLarge {
                steps: m.steps(),
                limit: crate::lattice::MAX_ENUMERATION_STEPS,
            })?
            .map(|path| path.probability() * self.path_payoff(&path, sigma.mask(), tau.mask()))
            .sum())
    }

    fn path_payoff(&self, path: &LatticePath, sigma: u32, tau: u32) -> f64 {
        let m = self.lattice;
        let dt = m.dt();
        let mut acc = 0.0;
        for i in 0..m.steps() {
            let j = path.state_at(i);
            let bit = 1u32 << (i * (i + 1) / 2 + j);
            if tau & bit != 0 {
                return acc + self.lower.get(i, j);
            }
            if sigma & bit != 0 {
                return acc + self.upper.get(i, j);
            }
            acc += self.running.get(i, j) * dt;
        }
        acc + self.terminal[path.state_at(m.steps())]
    }

    /// Nodes before the horizon where the barrier is finite; stopping at an
    /// infinite barrier is never optimal.
    fn finite_mask(&self, barrier: &NodeField) -> u32 {
        let mut mask = 0;
        for i in 0..self.lattice.steps() {
            for j in 0..=i {
                if barrier.get(i, j).is_finite() {
                    mask |= 1 << (i * (i + 1) / 2 + j);
                }
            }
        }
        mask
    }
}

fn submasks(mask: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(1 << mask.count_ones());
    let mut s = mask;
    loop {
        out.push(s);
        if s == 0 {
            break;
        }
        s = (s - 1) & mask;
    }
    out
}

/// `V(N) = xi`, `V(i, j) = min(U, max(L, E[V_{i+1}] + g dt))`.
pub fn value_iteration(game: &Game<'_>) -> Result<NodeField, GameError> {
    game.check()?;
    let m = game.lattice;
    let n = m.steps();
    let dt = m.dt();
    let mut v = NodeField::zeros(n);
    v.layer_mut(n).copy_from_slice(game.terminal);
    for i in (0..n).rev() {
        let (cur, next) = v.two_layers_mut(i);
        for j in 0..=i {
            let cont = 0.5 * (next[j] + next[j + 1]) + game.running.get(i, j) * dt;
            cur[j] = game.upper.get(i, j).min(game.lower.get(i, j).max(cont));
        }
    }
    Ok(v)
}

/// `(sup_tau inf_sigma, inf_sigma sup_tau)` over all node-based rules.
pub fn brute_force_value(game: &Game<'_>) -> Result<(f64, f64), GameError> {
    game.check()?;
    let n = game.lattice.steps();
    if n > MAX_BRUTE_FORCE_STEPS {
        return Err(GameError::TooLarge {
            steps: n,
            limit: MAX_BRUTE_FORCE_STEPS,
        });
    }
    let paths: Vec<LatticePath> = game
        .lattice
        .enumerate_paths()
        .expect("small tree")
        .collect();
    let taus = submasks(game.finite_mask(game.lower));
    let sigmas = submasks(game.finite_mask(game.upper));
    let table: Vec<Vec<f64>> = taus
        .par_iter()
        .map(|&tau| {
            sigmas
                .iter()
                .map(|&sigma| {
                    paths
                        .iter()
                        .map(|p| p.probability() * game.path_payoff(p, sigma, tau))
                        .sum()
                })
                .collect()
        })
        .collect();
    let lower = table
        .iter()
        .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
        .fold(f64::NEG_INFINITY, f64::max);
    let upper = (0..sigmas.len())
        .map(|s| {
            table
                .iter()
                .map(|row| row[s])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::INFINITY, f64::min);
    Ok((lower, upper))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleVerdict {
    pub holds: bool,
    pub saddle_payoff: f64,
    /// Largest gain a maximizer deviation achieves against `sigma_hat`.
    pub best_tau_gain: f64,
    /// Largest gain a minimizer deviation achieves against `tau_hat`.
    pub best_sigma_gain: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violating_tau: Option<StoppingRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violating_sigma: Option<StoppingRule>,
}

/// `E[R(sigma_hat, tau)] <= E[R(sigma_hat, tau_hat)] <= E[R(sigma, tau_hat)]`
/// for every node-based deviation.
pub fn saddle_check(report: &GameValueReport, game: &Game<'_>) -> Result<SaddleVerdict, GameError> {
    game.check()?;
    let n = game.lattice.steps();
    if n > MAX_BRUTE_FORCE_STEPS {
        return Err(GameError::TooLarge {
            steps: n,
            limit: MAX_BRUTE_FORCE_STEPS,
        });
    }
    let (sh, th) = (report.sigma_hat.mask(), report.tau_hat.mask());
    let paths: Vec<LatticePath> = game
        .lattice
        .enumerate_paths()
        .expect("small tree")
        .collect();
    let payoff = |sigma: u32, tau: u32| -> f64 {
        paths
            .iter()
            .map(|p| p.probability() * game.path_payoff(p, sigma, tau))
            .sum()
    };
    let base = payoff(sh, th);
    let best = |cands: Vec<(u32, f64)>| {
        cands
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least the empty rule")
    };
    let (tau_dev, tau_gain) = best(
        submasks(game.finite_mask(game.lower))
            .into_par_iter()
            .map(|t| (t, payoff(sh, t) - base))
            .collect(),
    );
    let (sigma_dev, sigma_gain) = best(
        submasks(game.finite_mask(game.upper))
            .into_par_iter()
            .map(|s| (s, base - payoff(s, th)))
            .collect(),
    );
    Ok(SaddleVerdict {
        holds: tau_gain <= SADDLE_TOL && sigma_gain <= SADDLE_TOL,
        saddle_payoff: base,
        best_tau_gain: tau_gain,
        best_sigma_gain: sigma_gain,
        violating_tau: (tau_gain > SADDLE_TOL).then(|| StoppingRule::from_mask(n, tau_dev)),
        violating_sigma: (sigma_gain > SADDLE_TOL).then(|| StoppingRule::from_mask(n, sigma_dev)),
    })
}

/// Value iteration, saddle extraction and, for `N <= 4`, certification by
/// enumeration.
pub fn game_value(game: &Game<'_>) -> Result<GameValueReport, GameError> {
    let v = value_iteration(game)?;
    let n = game.lattice.steps();
    let mut sigma = StoppingRule::never(n);
    let mut tau = StoppingRule::never(n);
    for i in 0..n {
        for j in 0..=i {
            let k = i * (i + 1) / 2 + j;
            let x = v.get(i, j);
            sigma.stop[k] = (x - game.upper.get(i, j)).abs() <= TOUCH_TOL;
            tau.stop[k] = (x - game.lower.get(i, j)).abs() <= TOUCH_TOL;
        }
    }
    let mut report = GameValueReport {
        root_value: v.get(0, 0),
        sigma_hat_root_layer: sigma.earliest_layers()[0],
        tau_hat_root_layer: tau.earliest_layers()[0],
        value: v,
        sigma_hat: sigma,
        tau_hat: tau,
        brute_force_value: None,
        is_saddle_certified: false,
    };
    if n <= MAX_BRUTE_FORCE_STEPS {
        let (lo, hi) = brute_force_value(game)?;
        let verdict = saddle_check(&report, game)?;
        report.brute_force_value = Some((lo, hi));
        report.is_saddle_certified = verdict.holds
            && (lo - hi).abs() <= BRUTE_FORCE_TOL
            && (lo - report.root_value).abs() <= BRUTE_FORCE_TOL;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub game: GameValueReport,
    /// `max |V - Y|` over all nodes.
    pub max_gap: f64,
    pub worst_node: Node,
}

/// Freezes the running payoff realised by `sol` and compares the game value
/// with `Y` node by node.
pub fn consistency_check(
    spec: &ScenarioSpec,
    sol: &SolutionSurface,
) -> Result<ConsistencyReport, GameError> {
    let m = sol.lattice;
    let g = running_payoff(spec, sol);
    let xi = spec.terminal_values(&m);
    let (lower, upper) = (spec.lower_field(&m), spec.upper_field(&m));
    let game = Game {
        lattice: &m,
        running: &g,
        terminal: &xi,
        lower: &lower,
        upper: &upper,
    };
    let report = game_value(&game)?;
    let (max_gap, worst_node) = report.value.sup_distance(&sol.y);
    Ok(ConsistencyReport {
        game: report,
        max_gap,
        worst_node,
    })
}
