//! Exponential change of variables `Y -> e^{lambda t} Y`, which shifts the
//! monotonicity constant of the driver by `-lambda`.

use thiserror::Error;

use crate::model::{Barrier, Driver, GrowthPhi, ScenarioSpec, Terminal};
use crate::reflect::SolutionSurface;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("transform rate must be finite, got {0}")]
    NonFiniteRate(f64),
    #[error("solution lives on a lattice with {found} steps, expected {expected}")]
    LatticeMismatch { expected: usize, found: usize },
}

/// Rescaled scenario `(e^{lT} xi, e^{lt} f(t, e^{-lt} y, e^{-lt} z) - l y,
/// e^{lt} L, e^{lt} U)`. Declared `mu` drops by `lam`; `k` is unchanged.
pub fn transform_scenario(s: &ScenarioSpec, lam: f64) -> Result<ScenarioSpec, TransformError> {
    if !lam.is_finite() {
        return Err(TransformError::NonFiniteRate(lam));
    }
    if lam == 0.0 {
        return Ok(s.clone());
    }
    let mut out = s.clone();
    out.terminal = match &s.terminal {
        Terminal::Scaled { inner, factor } => Terminal::Scaled {
            inner: inner.clone(),
            factor: factor * (lam * s.horizon).exp(),
        },
        other => Terminal::Scaled {
            inner: Box::new(other.clone()),
            factor: (lam * s.horizon).exp(),
        },
    };
    out.driver.family = match &s.driver.family {
        Driver::Exponential { inner, rate } if rate + lam != 0.0 => Driver::Exponential {
            inner: inner.clone(),
            rate: rate + lam,
        },
        Driver::Exponential { inner, .. } => (**inner).clone(),
        other => Driver::Exponential {
            inner: Box::new(other.clone()),
            rate: lam,
        },
    };
    out.lower = scale_barrier(&s.lower, lam);
    out.upper = scale_barrier(&s.upper, lam);
    out.driver.mu = s.driver.mu - lam;
    out.driver.growth_phi = s.driver.growth_phi.map(|phi| {
        // e^{lt} phi(e^{-lt} r) + |l| r, bounded crudely over t in [0, T]
        let stretch = (lam.abs() * s.horizon).exp();
        GrowthPhi {
            degree: phi.degree,
            coefficient: phi.coefficient * stretch * stretch.powf(phi.degree),
            linear: phi.linear * stretch * stretch + lam.abs(),
        }
    });
    Ok(out)
}

fn scale_barrier(b: &Barrier, lam: f64) -> Barrier {
    if b.sentinel().is_some() {
        return b.clone();
    }
    match b {
        Barrier::ExpScaled { inner, rate } if rate + lam != 0.0 => Barrier::ExpScaled {
            inner: inner.clone(),
            rate: rate + lam,
        },
        Barrier::ExpScaled { inner, .. } => (**inner).clone(),
        other => Barrier::ExpScaled {
            inner: Box::new(other.clone()),
            rate: lam,
        },
    }
}

/// Maps a solution of the rescaled problem back: every node value and
/// increment on layer `i` is multiplied by `e^{-lam t_i}`.
pub fn untransform_solution(
    sol: &SolutionSurface,
    lam: f64,
) -> Result<SolutionSurface, TransformError> {
    if !lam.is_finite() {
        return Err(TransformError::NonFiniteRate(lam));
    }
    let m = sol.lattice;
    let scale = |f: &crate::NodeField| f.map(|node, v| (-lam * m.time(node.layer)).exp() * v);
    let mut out = SolutionSurface {
        lattice: m,
        y: scale(&sol.y),
        z: scale(&sol.z),
        dk_plus: scale(&sol.dk_plus),
        dk_minus: scale(&sol.dk_minus),
        meta: sol.meta.clone(),
    };
    out.meta.rate += lam;
    Ok(out)
}

/// [`untransform_solution`] after checking the surface belongs to `spec`.
pub fn untransform_for(
    spec: &ScenarioSpec,
    sol: &SolutionSurface,
    lam: f64,
) -> Result<SolutionSurface, TransformError> {
    if spec.grid.steps != sol.lattice.steps() {
        return Err(TransformError::LatticeMismatch {
            expected: spec.grid.steps,
            found: sol.lattice.steps(),
        });
    }
    untransform_solution(sol, lam)
}
