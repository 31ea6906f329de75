//! Problem data: terminal payoff, driver, the two barriers and the grid, plus
//! sampled validation of the standing assumptions on a concrete instance.

use serde::de::Error as _;
use serde::ser::{Error as _, SerializeMap};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::lattice::{LatticeError, LatticeModel, Node, NodeField};

/// Absolute slack used by the sampled assumption checks.
pub const SAMPLING_TOL: f64 = 1e-9;
/// Points per sampled variable.
pub const SAMPLING_POINTS: usize = 101;
/// Half-width of the sampled interval for `y`, `y'` and `z`.
pub const SAMPLING_RADIUS: f64 = 5.0;

/// Deepest lattice on which a path-dependent witness is enumerated.
const WITNESS_PATH_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("cannot parse scenario at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid parameter `{path}`: {message}")]
    InvalidParameter { path: String, message: String },
    #[error("{what} evaluated to {value} at {location}")]
    NonFinite {
        what: &'static str,
        value: f64,
        location: String,
    },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

fn parse_error<E: std::fmt::Display>(err: serde_path_to_error::Error<E>) -> ModelError {
    let path = err.path().to_string();
    ModelError::Parse {
        path: if path == "." { "<root>".into() } else { path },
        message: err.into_inner().to_string(),
    }
}

fn invalid(path: &str, message: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter {
        path: path.to_string(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Driver

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueParams {
    pub value: f64,
}

/// `a*y + b*z + c + c_slope*t`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(default)]
    pub c_slope: f64,
}

/// `-c3*y^3 + a*y + b*z + g + g_slope*t`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubicParams {
    pub c3: f64,
    #[serde(default)]
    pub a: f64,
    pub b: f64,
    pub g: f64,
    #[serde(default)]
    pub g_slope: f64,
}

/// Piecewise-linear `h(y)` through `(ys[i], values[i])`, extended linearly
/// beyond the end points, plus `b*z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableParams {
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub b: f64,
}

impl TableParams {
    fn interpolate(&self, y: f64) -> f64 {
        let n = self.ys.len();
        let seg = match self.ys.partition_point(|&x| x <= y) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let (x0, x1) = (self.ys[seg], self.ys[seg + 1]);
        let (v0, v1) = (self.values[seg], self.values[seg + 1]);
        v0 + (v1 - v0) * (y - x0) / (x1 - x0)
    }
}

/// Which barrier a frozen reference driver is pinned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeAt {
    /// `min(L, 0)`
    LowerNegativePart,
    /// `max(U, 0)`
    UpperPositivePart,
}

/// Driver `f(t, b, y, z)`. The first four variants are the user-facing
/// families; the rest are built programmatically by transformations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "family",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum Driver {
    Constant(ValueParams),
    Linear(LinearParams),
    MonotoneCubic(CubicParams),
    CustomTable(TableParams),
    /// `e^{rt} f(t, b, e^{-rt} y, e^{-rt} z) - r y`
    #[serde(skip)]
    Exponential {
        inner: Box<Driver>,
        rate: f64,
    },
    /// `f(t, b, y, z) - f(t, b, 0, z) + min(f(t, b, 0, z), level)`
    #[serde(skip)]
    CapAtZero {
        inner: Box<Driver>,
        level: f64,
    },
    /// `f(t, b, a, z) + rate (y - a)` with `a` read off a barrier.
    #[serde(skip)]
    Frozen {
        inner: Box<Driver>,
        anchor: Box<Barrier>,
        at: FreezeAt,
        rate: f64,
    },
    #[serde(skip)]
    Shifted {
        inner: Box<Driver>,
        shift: f64,
    },
    /// `f + slope * y`
    #[serde(skip)]
    PlusLinear {
        inner: Box<Driver>,
        slope: f64,
    },
}

impl Driver {
    pub fn constant(value: f64) -> Self {
        Driver::Constant(ValueParams { value })
    }

    pub fn linear(a: f64, b: f64, c: f64) -> Self {
        Driver::Linear(LinearParams {
            a,
            b,
            c,
            c_slope: 0.0,
        })
    }

    pub fn cubic(c3: f64, a: f64, b: f64, g: f64) -> Self {
        Driver::MonotoneCubic(CubicParams {
            c3,
            a,
            b,
            g,
            g_slope: 0.0,
        })
    }

    pub fn eval(&self, t: f64, b: f64, y: f64, z: f64) -> f64 {
        match self {
            Driver::Constant(p) => p.value,
            Driver::Linear(p) => p.a * y + p.b * z + p.c + p.c_slope * t,
            Driver::MonotoneCubic(p) => -p.c3 * y * y * y + p.a * y + p.b * z + p.g + p.g_slope * t,
            Driver::CustomTable(p) => p.interpolate(y) + p.b * z,
            Driver::Exponential { inner, rate } => {
                let up = (rate * t).exp();
                up * inner.eval(t, b, y / up, z / up) - rate * y
            }
            Driver::CapAtZero { inner, level } => {
                let at_zero = inner.eval(t, b, 0.0, z);
                inner.eval(t, b, y, z) - at_zero + at_zero.min(*level)
            }
            Driver::Frozen {
                inner,
                anchor,
                at,
                rate,
            } => {
                let level = anchor.eval(t, b);
                let a = match at {
                    FreezeAt::LowerNegativePart => level.min(0.0),
                    FreezeAt::UpperPositivePart => level.max(0.0),
                };
                inner.eval(t, b, a, z) + rate * (y - a)
            }
            Driver::Shifted { inner, shift } => inner.eval(t, b, y, z) + shift,
            Driver::PlusLinear { inner, slope } => inner.eval(t, b, y, z) + slope * y,
        }
    }

    /// Structural test for independence of `z`.
    pub fn is_z_independent(&self) -> bool {
        match self {
            Driver::Constant(_) => true,
            Driver::Linear(p) => p.b == 0.0,
            Driver::MonotoneCubic(p) => p.b == 0.0,
            Driver::CustomTable(p) => p.b == 0.0,
            Driver::Exponential { inner, .. }
            | Driver::CapAtZero { inner, .. }
            | Driver::Frozen { inner, .. }
            | Driver::Shifted { inner, .. }
            | Driver::PlusLinear { inner, .. } => inner.is_z_independent(),
        }
    }

    /// Whether `y -> f` is globally Lipschitz (no cubic term anywhere).
    pub fn is_y_lipschitz(&self) -> bool {
        match self {
            Driver::MonotoneCubic(p) => p.c3 == 0.0,
            Driver::Constant(_) | Driver::Linear(_) | Driver::CustomTable(_) => true,
            Driver::Exponential { inner, .. }
            | Driver::CapAtZero { inner, .. }
            | Driver::Shifted { inner, .. }
            | Driver::PlusLinear { inner, .. } => inner.is_y_lipschitz(),
            Driver::Frozen { .. } => true,
        }
    }

    /// Whether `sup_t |f(t, 0, z)|` is finite as a function of the Brownian
    /// state. Only drivers frozen at a state-dependent barrier can fail this.
    pub fn zero_level_bounded(&self) -> bool {
        match self {
            Driver::Frozen { inner, anchor, .. } => {
                inner.zero_level_bounded() && anchor.bounded_above() && anchor.bounded_below()
            }
            Driver::Exponential { inner, .. }
            | Driver::CapAtZero { inner, .. }
            | Driver::Shifted { inner, .. }
            | Driver::PlusLinear { inner, .. } => inner.zero_level_bounded(),
            _ => true,
        }
    }

    fn check(&self, path: &str) -> Result<(), ModelError> {
        match self {
            Driver::MonotoneCubic(p) if p.c3 < 0.0 => Err(invalid(
                &format!("{path}.params.c3"),
                format!("cubic coefficient must be nonnegative, got {}", p.c3),
            )),
            Driver::CustomTable(p) => {
                if p.ys.len() < 2 {
                    return Err(invalid(
                        &format!("{path}.params.ys"),
                        "need at least two points",
                    ));
                }
                if p.ys.len() != p.values.len() {
                    return Err(invalid(
                        &format!("{path}.params.values"),
                        format!("{} values for {} abscissae", p.values.len(), p.ys.len()),
                    ));
                }
                if p.ys.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid(
                        &format!("{path}.params.ys"),
                        "abscissae must be strictly increasing",
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// `phi(r) = coefficient * r^degree + linear * r`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthPhi {
    pub degree: f64,
    pub coefficient: f64,
    #[serde(default)]
    pub linear: f64,
}

impl GrowthPhi {
    pub fn eval(&self, r: f64) -> f64 {
        self.coefficient * r.powf(self.degree) + self.linear * r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverSpec {
    pub family: Driver,
    /// Declared one-sided Lipschitz constant in `y`.
    pub mu: f64,
    /// Declared Lipschitz constant in `z`.
    pub k: f64,
    pub growth_phi: Option<GrowthPhi>,
}

impl DriverSpec {
    pub fn new(family: Driver, mu: f64, k: f64) -> Self {
        Self {
            family,
            mu,
            k,
            growth_phi: None,
        }
    }

    pub fn with_growth(mut self, phi: GrowthPhi) -> Self {
        self.growth_phi = Some(phi);
        self
    }

    pub fn eval(&self, t: f64, b: f64, y: f64, z: f64) -> f64 {
        self.family.eval(t, b, y, z)
    }

    /// Evaluates the driver and rejects non-finite results.
    pub fn evaluate(&self, t: f64, y: f64, z: f64) -> Result<f64, ModelError> {
        let v = self.family.eval(t, 0.0, y, z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::NonFinite {
                what: "driver",
                value: v,
                location: format!("t={t}, y={y}, z={z}"),
            })
        }
    }

    fn check(&self, path: &str) -> Result<(), ModelError> {
        self.family.check(path)?;
        if self.k < 0.0 {
            return Err(invalid(&format!("{path}.k"), "must be nonnegative"));
        }
        if let Some(phi) = &self.growth_phi {
            if phi.degree < 0.0 || phi.coefficient < 0.0 || phi.linear < 0.0 {
                return Err(invalid(
                    &format!("{path}.growth_phi"),
                    "degree and coefficients must be nonnegative",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DriverSpecRepr {
    family: String,
    #[serde(default)]
    params: Option<Value>,
    mu: f64,
    k: f64,
    #[serde(default)]
    growth_phi: Option<GrowthPhi>,
}

impl<'de> Deserialize<'de> for DriverSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = DriverSpecRepr::deserialize(d)?;
        let mut tagged = serde_json::Map::new();
        tagged.insert("family".into(), Value::String(repr.family));
        if let Some(p) = repr.params {
            tagged.insert("params".into(), p);
        }
        let family: Driver = serde_path_to_error::deserialize(Value::Object(tagged))
            .map_err(|e| D::Error::custom(format!("at `{}`: {}", e.path(), e.inner())))?;
        Ok(DriverSpec {
            family,
            mu: repr.mu,
            k: repr.k,
            growth_phi: repr.growth_phi,
        })
    }
}

impl Serialize for DriverSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let tagged = serde_json::to_value(&self.family).map_err(S::Error::custom)?;
        let mut map = s.serialize_map(None)?;
        map.serialize_entry("family", &tagged["family"])?;
        if let Some(p) = tagged.get("params") {
            map.serialize_entry("params", p)?;
        }
        map.serialize_entry("mu", &self.mu)?;
        map.serialize_entry("k", &self.k)?;
        if let Some(phi) = &self.growth_phi {
            map.serialize_entry("growth_phi", phi)?;
        }
        map.end()
    }
}

// ---------------------------------------------------------------------------
// Terminal payoff

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineParams {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrikeParams {
    pub strike: f64,
}

/// `offset + amplitude * sin(frequency * x)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineParams {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub offset: f64,
}

/// Terminal payoff as a function of `B_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "family",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum Terminal {
    Constant(ValueParams),
    /// `a + b x`
    Affine(AffineParams),
    /// `a + b x + c x^2`
    Quadratic(QuadraticParams),
    Call(StrikeParams),
    Put(StrikeParams),
    Sine(SineParams),
    #[serde(skip)]
    Scaled {
        inner: Box<Terminal>,
        factor: f64,
    },
    #[serde(skip)]
    Cap {
        inner: Box<Terminal>,
        level: f64,
    },
    #[serde(skip)]
    Floor {
        inner: Box<Terminal>,
        level: f64,
    },
    #[serde(skip)]
    Shift {
        inner: Box<Terminal>,
        shift: f64,
    },
}

impl Terminal {
    pub fn constant(value: f64) -> Self {
        Terminal::Constant(ValueParams { value })
    }

    pub fn affine(a: f64, b: f64) -> Self {
        Terminal::Affine(AffineParams { a, b })
    }

    pub fn sine(amplitude: f64, frequency: f64, offset: f64) -> Self {
        Terminal::Sine(SineParams {
            amplitude,
            frequency,
            offset,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Terminal::Constant(p) => p.value,
            Terminal::Affine(p) => p.a + p.b * x,
            Terminal::Quadratic(p) => p.a + p.b * x + p.c * x * x,
            Terminal::Call(p) => (x - p.strike).max(0.0),
            Terminal::Put(p) => (p.strike - x).max(0.0),
            Terminal::Sine(p) => p.offset + p.amplitude * (p.frequency * x).sin(),
            Terminal::Scaled { inner, factor } => factor * inner.eval(x),
            Terminal::Cap { inner, level } => inner.eval(x).min(*level),
            Terminal::Floor { inner, level } => inner.eval(x).max(*level),
            Terminal::Shift { inner, shift } => inner.eval(x) + shift,
        }
    }

    /// `(bounded above, bounded below)` as a function on the whole real line.
    pub fn bounds(&self) -> (bool, bool) {
        match self {
            Terminal::Constant(_) | Terminal::Sine(_) => (true, true),
            Terminal::Affine(p) => (p.b == 0.0, p.b == 0.0),
            Terminal::Quadratic(p) => {
                if p.c > 0.0 {
                    (false, true)
                } else if p.c < 0.0 {
                    (true, false)
                } else {
                    (p.b == 0.0, p.b == 0.0)
                }
            }
            Terminal::Call(_) | Terminal::Put(_) => (false, true),
            Terminal::Scaled { inner, factor } => {
                let (up, down) = inner.bounds();
                if *factor == 0.0 {
                    (true, true)
                } else if *factor > 0.0 {
                    (up, down)
                } else {
                    (down, up)
                }
            }
            Terminal::Cap { inner, .. } => (true, inner.bounds().1),
            Terminal::Floor { inner, .. } => (inner.bounds().0, true),
            Terminal::Shift { inner, .. } => inner.bounds(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        let (up, down) = self.bounds();
        up && down
    }

    pub fn description(&self) -> String {
        match self {
            Terminal::Constant(p) => format!("constant {}", p.value),
            Terminal::Affine(p) => format!("{} + {} B_T", p.a, p.b),
            Terminal::Quadratic(p) => format!("{} + {} B_T + {} B_T^2", p.a, p.b, p.c),
            Terminal::Call(p) => format!("(B_T - {})^+", p.strike),
            Terminal::Put(p) => format!("({} - B_T)^+", p.strike),
            Terminal::Sine(p) => {
                format!("{} + {} sin({} B_T)", p.offset, p.amplitude, p.frequency)
            }
            Terminal::Scaled { inner, factor } => format!("{factor} * [{}]", inner.description()),
            Terminal::Cap { inner, level } => format!("min([{}], {level})", inner.description()),
            Terminal::Floor { inner, level } => format!("max([{}], {level})", inner.description()),
            Terminal::Shift { inner, shift } => format!("[{}] + {shift}", inner.description()),
        }
    }
}

// ---------------------------------------------------------------------------
// Barriers

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineTimeParams {
    pub value: f64,
    pub slope: f64,
}

/// `offset + time*t + linear*b + quadratic*b^2`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateParams {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub time: f64,
    #[serde(default)]
    pub linear: f64,
    #[serde(default)]
    pub quadratic: f64,
}

/// A barrier `(t, b) -> extended real`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "family",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum Barrier {
    NegInfinity,
    PosInfinity,
    Constant(ValueParams),
    AffineInTime(AffineTimeParams),
    StateFunction(StateParams),
    #[serde(skip)]
    ExpScaled {
        inner: Box<Barrier>,
        rate: f64,
    },
    /// `min(inner, level)`
    #[serde(skip)]
    CapAbove {
        inner: Box<Barrier>,
        level: f64,
    },
    /// `max(inner, level)`
    #[serde(skip)]
    FloorBelow {
        inner: Box<Barrier>,
        level: f64,
    },
    #[serde(skip)]
    Shifted {
        inner: Box<Barrier>,
        shift: f64,
    },
}

impl Barrier {
    pub fn constant(value: f64) -> Self {
        Barrier::Constant(ValueParams { value })
    }

    pub fn affine_in_time(value: f64, slope: f64) -> Self {
        Barrier::AffineInTime(AffineTimeParams { value, slope })
    }

    pub fn state(offset: f64, time: f64, linear: f64, quadratic: f64) -> Self {
        Barrier::StateFunction(StateParams {
            offset,
            time,
            linear,
            quadratic,
        })
    }

    pub fn eval(&self, t: f64, b: f64) -> f64 {
        match self {
            Barrier::NegInfinity => f64::NEG_INFINITY,
            Barrier::PosInfinity => f64::INFINITY,
            Barrier::Constant(p) => p.value,
            Barrier::AffineInTime(p) => p.value + p.slope * t,
            Barrier::StateFunction(p) => p.offset + p.time * t + p.linear * b + p.quadratic * b * b,
            Barrier::ExpScaled { inner, rate } => (rate * t).exp() * inner.eval(t, b),
            Barrier::CapAbove { inner, level } => inner.eval(t, b).min(*level),
            Barrier::FloorBelow { inner, level } => inner.eval(t, b).max(*level),
            Barrier::Shifted { inner, shift } => inner.eval(t, b) + shift,
        }
    }

    /// `Some(+-inf)` when the barrier is identically infinite.
    pub fn sentinel(&self) -> Option<f64> {
        match self {
            Barrier::NegInfinity => Some(f64::NEG_INFINITY),
            Barrier::PosInfinity => Some(f64::INFINITY),
            Barrier::Constant(_) | Barrier::AffineInTime(_) | Barrier::StateFunction(_) => None,
            Barrier::ExpScaled { inner, .. } | Barrier::Shifted { inner, .. } => inner.sentinel(),
            Barrier::CapAbove { inner, .. } => inner.sentinel().filter(|s| *s < 0.0),
            Barrier::FloorBelow { inner, .. } => inner.sentinel().filter(|s| *s > 0.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.sentinel().is_none()
    }

    /// `sup` over `[0, T] x R` is below `+inf`.
    pub fn bounded_above(&self) -> bool {
        match self {
            Barrier::NegInfinity | Barrier::Constant(_) | Barrier::AffineInTime(_) => true,
            Barrier::PosInfinity => false,
            Barrier::StateFunction(p) => {
                p.quadratic < 0.0 || (p.quadratic == 0.0 && p.linear == 0.0)
            }
            Barrier::ExpScaled { inner, .. } | Barrier::Shifted { inner, .. } => {
                inner.bounded_above()
            }
            Barrier::CapAbove { .. } => true,
            Barrier::FloorBelow { inner, .. } => inner.bounded_above(),
        }
    }

    /// `inf` over `[0, T] x R` is above `-inf`.
    pub fn bounded_below(&self) -> bool {
        match self {
            Barrier::PosInfinity | Barrier::Constant(_) | Barrier::AffineInTime(_) => true,
            Barrier::NegInfinity => false,
            Barrier::StateFunction(p) => {
                p.quadratic > 0.0 || (p.quadratic == 0.0 && p.linear == 0.0)
            }
            Barrier::ExpScaled { inner, .. } | Barrier::Shifted { inner, .. } => {
                inner.bounded_below()
            }
            Barrier::CapAbove { inner, .. } => inner.bounded_below(),
            Barrier::FloorBelow { .. } => true,
        }
    }
}

// ---------------------------------------------------------------------------
// Grid and scenario

fn default_tol() -> f64 {
    1e-12
}

fn default_max_iter() -> usize {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "steps_N")]
    pub steps: usize,
    #[serde(default = "default_tol")]
    pub implicit_tol: f64,
    #[serde(default = "default_max_iter")]
    pub implicit_max_iter: usize,
}

impl GridSpec {
    pub fn new(steps: usize) -> Self {
        Self {
            steps,
            implicit_tol: default_tol(),
            implicit_max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(rename = "horizon_T")]
    pub horizon: f64,
    pub driver: DriverSpec,
    pub terminal: Terminal,
    pub lower: Barrier,
    pub upper: Barrier,
    pub grid: GridSpec,
}

impl ScenarioSpec {
    pub fn new(
        horizon: f64,
        driver: DriverSpec,
        terminal: Terminal,
        lower: Barrier,
        upper: Barrier,
        steps: usize,
    ) -> Self {
        Self {
            horizon,
            driver,
            terminal,
            lower,
            upper,
            grid: GridSpec::new(steps),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ScenarioSpec = serde_path_to_error::deserialize(de).map_err(parse_error)?;
        spec.check_parameters()?;
        Ok(spec)
    }

    pub fn to_json_string(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }

    /// Structural parameter checks that do not need sampling.
    pub fn check_parameters(&self) -> Result<(), ModelError> {
        self.driver.check("driver")
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.grid.steps = steps;
        self
    }

    pub fn lattice(&self) -> Result<LatticeModel, LatticeError> {
        LatticeModel::new(self.horizon, self.grid.steps)
    }

    pub fn lower_field(&self, m: &LatticeModel) -> NodeField {
        m.field_from_fn(|t, b| self.lower.eval(t, b))
    }

    pub fn upper_field(&self, m: &LatticeModel) -> NodeField {
        m.field_from_fn(|t, b| self.upper.eval(t, b))
    }

    /// Terminal payoff on layer `N`.
    pub fn terminal_values(&self, m: &LatticeModel) -> Vec<f64> {
        let n = m.steps();
        (0..=n)
            .map(|j| self.terminal.eval(m.brownian(n, j)))
            .collect()
    }

    pub fn has_finite_barriers(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingStatus {
    Pass,
    Fail,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub clause: &'static str,
    pub status: FindingStatus,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

impl Finding {
    fn pass(clause: &'static str, message: impl Into<String>) -> Self {
        Self {
            clause,
            status: FindingStatus::Pass,
            message: message.into(),
            location: None,
        }
    }

    fn fail(clause: &'static str, message: impl Into<String>, location: Option<String>) -> Self {
        Self {
            clause,
            status: FindingStatus::Fail,
            message: message.into(),
            location,
        }
    }

    fn info(clause: &'static str, message: impl Into<String>) -> Self {
        Self {
            clause,
            status: FindingStatus::Info,
            message: message.into(),
            location: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.findings
            .iter()
            .all(|f| f.status != FindingStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.status == FindingStatus::Fail)
    }

    pub fn finding(&self, clause: &str) -> Option<&Finding> {
        self.findings.iter().find(|f| f.clause == clause)
    }
}

pub fn sample_axis() -> impl Iterator<Item = f64> + Clone {
    let step = 2.0 * SAMPLING_RADIUS / (SAMPLING_POINTS - 1) as f64;
    (0..SAMPLING_POINTS).map(move |k| -SAMPLING_RADIUS + k as f64 * step)
}

fn sample_times(horizon: f64) -> [f64; 3] {
    [0.0, 0.5 * horizon, horizon]
}

struct Worst {
    excess: f64,
    location: Option<String>,
}

impl Worst {
    fn new() -> Self {
        Self {
            excess: f64::NEG_INFINITY,
            location: None,
        }
    }

    fn offer(&mut self, excess: f64, location: impl FnOnce() -> String) {
        if excess > self.excess || excess.is_nan() {
            self.excess = excess;
            self.location = Some(location());
        }
    }
}

fn monotonicity_worst(driver: &DriverSpec, horizon: f64) -> Worst {
    let ys: Vec<f64> = sample_axis().collect();
    let mut worst = Worst::new();
    for t in sample_times(horizon) {
        for z in sample_axis() {
            let fs: Vec<f64> = ys.iter().map(|&y| driver.eval(t, 0.0, y, z)).collect();
            for (a, (&y, &fy)) in ys.iter().zip(&fs).enumerate() {
                for (&yp, &fyp) in ys[a + 1..].iter().zip(&fs[a + 1..]) {
                    let d = y - yp;
                    let excess = d * (fy - fyp) - driver.mu * d * d;
                    worst.offer(excess, || format!("t={t}, y={y}, y'={yp}, z={z}"));
                }
            }
        }
    }
    worst
}

fn lipschitz_worst(driver: &DriverSpec, horizon: f64) -> Worst {
    let zs: Vec<f64> = sample_axis().collect();
    let mut worst = Worst::new();
    for t in sample_times(horizon) {
        for y in sample_axis() {
            let fs: Vec<f64> = zs.iter().map(|&z| driver.eval(t, 0.0, y, z)).collect();
            for (a, (&z, &fz)) in zs.iter().zip(&fs).enumerate() {
                for (&zp, &fzp) in zs[a + 1..].iter().zip(&fs[a + 1..]) {
                    let excess = (fz - fzp).abs() - driver.k * (z - zp).abs();
                    worst.offer(excess, || format!("t={t}, y={y}, z={z}, z'={zp}"));
                }
            }
        }
    }
    worst
}

fn growth_worst(driver: &DriverSpec, phi: &GrowthPhi, horizon: f64) -> Worst {
    let mut worst = Worst::new();
    for t in sample_times(horizon) {
        for z in sample_axis() {
            let at_zero = driver.eval(t, 0.0, 0.0, z).abs();
            for y in sample_axis() {
                let excess = driver.eval(t, 0.0, y, z).abs() - at_zero - phi.eval(y.abs());
                worst.offer(excess, || format!("t={t}, y={y}, z={z}"));
            }
        }
    }
    worst
}

/// Runs every assumption clause on `spec`. Deterministic and side-effect free.
pub fn validate_scenario(spec: &ScenarioSpec) -> ValidationReport {
    let mut out = Vec::new();
    let horizon_ok = spec.horizon.is_finite() && spec.horizon > 0.0;
    out.push(if horizon_ok {
        Finding::pass("horizon", format!("T = {}", spec.horizon))
    } else {
        Finding::fail(
            "horizon",
            format!("T must be positive, got {}", spec.horizon),
            None,
        )
    });

    let g = &spec.grid;
    let grid_ok = g.steps >= 1 && g.implicit_tol > 0.0 && g.implicit_max_iter >= 1;
    out.push(if grid_ok {
        Finding::pass(
            "grid",
            format!("N = {}, dt = {}", g.steps, spec.horizon / g.steps as f64),
        )
    } else {
        Finding::fail(
            "grid",
            format!(
                "need steps_N >= 1, implicit_tol > 0, implicit_max_iter >= 1 (got {}, {}, {})",
                g.steps, g.implicit_tol, g.implicit_max_iter
            ),
            None,
        )
    });

    if let Err(e) = spec.check_parameters() {
        out.push(Finding::fail("driver_parameters", e.to_string(), None));
    }

    let sentinel_fail = |side: &str| {
        Finding::fail(
            "barrier_sentinels",
            format!("{side} barrier uses the wrong infinite sentinel"),
            Some(format!("{side}.family")),
        )
    };
    if spec.lower.sentinel() == Some(f64::INFINITY) {
        out.push(sentinel_fail("lower"));
    } else if spec.upper.sentinel() == Some(f64::NEG_INFINITY) {
        out.push(sentinel_fail("upper"));
    } else {
        out.push(Finding::pass(
            "barrier_sentinels",
            "infinite sentinels only on their own side",
        ));
    }

    let horizon = if horizon_ok { spec.horizon } else { 1.0 };
    let mono = monotonicity_worst(&spec.driver, horizon);
    out.push(if mono.excess <= SAMPLING_TOL {
        Finding::pass(
            "driver_monotonicity",
            format!(
                "(y-y')(f(y)-f(y')) <= mu |y-y'|^2 on the sample grid, mu = {}",
                spec.driver.mu
            ),
        )
    } else {
        Finding::fail(
            "driver_monotonicity",
            format!(
                "declared mu = {} exceeded by {:e}",
                spec.driver.mu, mono.excess
            ),
            mono.location,
        )
    });

    let lip = lipschitz_worst(&spec.driver, horizon);
    out.push(if lip.excess <= SAMPLING_TOL {
        Finding::pass(
            "driver_z_lipschitz",
            format!(
                "|f(z)-f(z')| <= k |z-z'| on the sample grid, k = {}",
                spec.driver.k
            ),
        )
    } else {
        Finding::fail(
            "driver_z_lipschitz",
            format!(
                "declared k = {} exceeded by {:e}",
                spec.driver.k, lip.excess
            ),
            lip.location,
        )
    });

    match &spec.driver.growth_phi {
        None => out.push(Finding::info(
            "driver_growth",
            "no growth function declared; growth bound not checked",
        )),
        Some(phi) => {
            let gw = growth_worst(&spec.driver, phi, horizon);
            out.push(if gw.excess <= SAMPLING_TOL {
                Finding::pass(
                    "driver_growth",
                    "|f(y)| <= |f(0)| + phi(|y|) on the sample grid",
                )
            } else {
                Finding::fail(
                    "driver_growth",
                    format!("growth bound exceeded by {:e}", gw.excess),
                    gw.location,
                )
            });
        }
    }

    let mut at_zero_finite = true;
    for t in sample_times(horizon) {
        for b in sample_axis() {
            if !spec.driver.eval(t, b, 0.0, 0.0).is_finite() {
                at_zero_finite = false;
            }
        }
    }
    out.push(if at_zero_finite {
        Finding::pass(
            "driver_square_integrability",
            "f(t, 0, 0) finite on the sample grid",
        )
    } else {
        Finding::fail(
            "driver_square_integrability",
            "f(t, 0, 0) is not finite",
            None,
        )
    });

    out.push(Finding::info(
        "barrier_moments",
        "barriers are bounded on the finite lattice; moment conditions hold there",
    ));

    match spec.lattice() {
        Ok(m) => lattice_findings(spec, &m, &mut out),
        Err(e) => out.push(Finding::info(
            "lattice",
            format!("lattice checks skipped: {e}"),
        )),
    }

    out.push(Finding::info(
        "mokobodski",
        "existence of a semimartingale between the barriers is not searched for; supply a witness to check one",
    ));

    ValidationReport { findings: out }
}

fn lattice_findings(spec: &ScenarioSpec, m: &LatticeModel, out: &mut Vec<Finding>) {
    let n = m.steps();
    let t = m.horizon();
    let xi = spec.terminal_values(m);
    match xi.iter().position(|v| !v.is_finite()) {
        Some(j) => out.push(Finding::fail(
            "terminal_finite",
            format!("terminal payoff is {}", xi[j]),
            Some(format!("node {}", Node::new(n, j))),
        )),
        None => out.push(Finding::pass(
            "terminal_finite",
            "finite on every terminal node",
        )),
    }

    let mut ordering = Finding::pass(
        "terminal_ordering",
        "L_T <= xi <= U_T on every terminal node",
    );
    for (j, &x) in xi.iter().enumerate() {
        let b = m.brownian(n, j);
        let (l, u) = (spec.lower.eval(t, b), spec.upper.eval(t, b));
        if !(l <= x && x <= u) {
            ordering = Finding::fail(
                "terminal_ordering",
                format!("L_T = {l}, xi = {x}, U_T = {u}"),
                Some(format!("node {}", Node::new(n, j))),
            );
            break;
        }
    }
    out.push(ordering);

    let mut strict = Finding::pass(
        "strict_separation",
        "L < U on every node before the horizon",
    );
    'outer: for i in 0..n {
        let ti = m.time(i);
        for j in 0..=i {
            let b = m.brownian(i, j);
            let (l, u) = (spec.lower.eval(ti, b), spec.upper.eval(ti, b));
            // NaN counts as out of order.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(l < u) {
                strict = Finding::fail(
                    "strict_separation",
                    format!("L = {l} is not below U = {u}"),
                    Some(format!("node {}", Node::new(i, j))),
                );
                break 'outer;
            }
        }
    }
    out.push(strict);
}

// ---------------------------------------------------------------------------
// Witness for the existence of a semimartingale between the barriers

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateParams {
    pub rate: f64,
}

/// `J_t = J0 + int phi dB - V+_t + V-_t` with `V+-_t = rate * t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MokobodskiWitness {
    pub j0: f64,
    pub phi: Barrier,
    pub v_plus: RateParams,
    pub v_minus: RateParams,
}

impl MokobodskiWitness {
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let w: MokobodskiWitness = serde_path_to_error::deserialize(de).map_err(parse_error)?;
        for (name, r) in [("v_plus", w.v_plus.rate), ("v_minus", w.v_minus.rate)] {
            if r < 0.0 {
                return Err(invalid(&format!("{name}.rate"), "must be nonnegative"));
            }
        }
        if !w.phi.is_finite() {
            return Err(invalid("phi", "integrand must be finite"));
        }
        Ok(w)
    }

    fn drift(&self, t: f64) -> f64 {
        -self.v_plus.rate * t + self.v_minus.rate * t
    }

    fn phi_is_constant(&self) -> Option<f64> {
        match &self.phi {
            Barrier::Constant(p) => Some(p.value),
            Barrier::AffineInTime(p) if p.slope == 0.0 => Some(p.value),
            Barrier::StateFunction(p) if p.time == 0.0 && p.linear == 0.0 && p.quadratic == 0.0 => {
                Some(p.offset)
            }
            _ => None,
        }
    }
}

/// Checks that the discretised witness stays inside `[L - tol, U + tol]`.
pub fn validate_witness(spec: &ScenarioSpec, w: &MokobodskiWitness) -> ValidationReport {
    let tol = SAMPLING_TOL;
    let mut out = Vec::new();
    let m = match spec.lattice() {
        Ok(m) => m,
        Err(e) => {
            out.push(Finding::fail(
                "witness_between_barriers",
                e.to_string(),
                None,
            ));
            return ValidationReport { findings: out };
        }
    };
    let lower = spec.lower_field(&m);
    let upper = spec.upper_field(&m);
    let n = m.steps();

    let mut violation: Option<(Node, f64, f64, f64)> = None;
    let mut terminal_gap: f64 = 0.0;
    let mut record = |node: Node, j: f64, violation: &mut Option<(Node, f64, f64, f64)>| {
        let (l, u) = (lower.at(node), upper.at(node));
        if violation.is_none() && !(j >= l - tol && j <= u + tol) {
            *violation = Some((node, j, l, u));
        }
        if node.layer == n {
            terminal_gap =
                terminal_gap.max((j - spec.terminal.eval(m.brownian(n, node.state))).abs());
        }
    };

    if let Some(phi) = w.phi_is_constant() {
        for node in m.nodes() {
            let j = w.j0 + phi * m.brownian(node.layer, node.state) + w.drift(m.time(node.layer));
            record(node, j, &mut violation);
        }
    } else if n <= WITNESS_PATH_LIMIT {
        for path in m.enumerate_paths().expect("depth checked above") {
            let mut j = w.j0;
            record(Node::new(0, 0), j + w.drift(0.0), &mut violation);
            let mut integral = 0.0;
            for i in 0..n {
                let s = path.state_at(i);
                let db = if path.goes_up(i) {
                    m.sqrt_dt()
                } else {
                    -m.sqrt_dt()
                };
                integral += w.phi.eval(m.time(i), m.brownian(i, s)) * db;
                let node = Node::new(i + 1, path.state_at(i + 1));
                j = w.j0 + integral + w.drift(m.time(i + 1));
                record(node, j, &mut violation);
            }
        }
    } else {
        out.push(Finding::fail(
            "witness_between_barriers",
            format!(
                "state-dependent integrand needs path enumeration, refused above {WITNESS_PATH_LIMIT} steps"
            ),
            None,
        ));
        return ValidationReport { findings: out };
    }

    out.push(match violation {
        None => Finding::pass(
            "witness_between_barriers",
            "L - tol <= J <= U + tol on every lattice node",
        ),
        Some((node, j, l, u)) => Finding::fail(
            "witness_between_barriers",
            format!("J = {j} outside [{l}, {u}]"),
            Some(format!("layer {} node {node}", node.layer)),
        ),
    });
    out.push(Finding::info(
        "witness_terminal",
        format!("max |J_T - xi| over terminal nodes = {terminal_gap:e}"),
    ));
    ValidationReport { findings: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple(lower: Barrier, upper: Barrier, terminal: Terminal, driver: Driver) -> ScenarioSpec {
        ScenarioSpec::new(
            1.0,
            DriverSpec::new(driver, 0.0, 0.0),
            terminal,
            lower,
            upper,
            8,
        )
    }

    #[test]
    fn driver_arithmetic() {
        let lin = DriverSpec::new(Driver::linear(-1.0, 0.0, 0.0), 0.0, 0.0);
        assert_eq!(lin.evaluate(0.0, 2.0, 0.0).unwrap(), -2.0);
        let cub = DriverSpec::new(Driver::cubic(1.0, 0.0, 0.0, 0.0), 0.0, 0.0);
        assert_eq!(cub.evaluate(0.0, 2.0, 0.0).unwrap(), -8.0);
        let zl = DriverSpec::new(Driver::linear(0.0, 1.0, 0.0), 0.0, 1.0);
        assert_eq!(zl.evaluate(0.0, 0.0, 0.5).unwrap(), 0.5);
        let huge = DriverSpec::new(Driver::cubic(1.0, 0.0, 0.0, 0.0), 0.0, 0.0);
        assert!(huge.evaluate(0.0, 1e200, 0.0).is_err());
    }

    #[test]
    fn table_interpolates_and_extrapolates() {
        let p = TableParams {
            ys: vec![-2.0, 0.0, 2.0],
            values: vec![1.0, 0.0, -1.5],
            b: 0.0,
        };
        assert_eq!(p.interpolate(-1.0), 0.5);
        assert_eq!(p.interpolate(0.0), 0.0);
        assert_eq!(p.interpolate(1.0), -0.75);
        assert_eq!(p.interpolate(4.0), -3.0);
        assert_eq!(p.interpolate(-4.0), 2.0);
    }

    #[test]
    fn constants_pass_every_clause() {
        let s = simple(
            Barrier::constant(-1.0),
            Barrier::constant(1.0),
            Terminal::constant(0.0),
            Driver::constant(0.0),
        );
        let r = validate_scenario(&s);
        assert!(r.passed(), "{r:?}");
        assert!(r.findings.iter().all(|f| f.status != FindingStatus::Fail));
    }

    #[test]
    fn terminal_ordering_failure_is_located() {
        let s = simple(
            Barrier::constant(0.5),
            Barrier::constant(1.0),
            Terminal::constant(0.0),
            Driver::constant(0.0),
        );
        let r = validate_scenario(&s);
        let f = r.finding("terminal_ordering").unwrap();
        assert_eq!(f.status, FindingStatus::Fail);
        assert_eq!(f.location.as_deref(), Some("node (8, 0)"));
    }

    #[test]
    fn cubic_is_monotone_with_zero_mu() {
        let s = simple(
            Barrier::NegInfinity,
            Barrier::PosInfinity,
            Terminal::constant(0.0),
            Driver::cubic(1.0, 0.0, 0.0, 0.0),
        );
        let r = validate_scenario(&s);
        assert_eq!(
            r.finding("driver_monotonicity").unwrap().status,
            FindingStatus::Pass
        );
    }

    #[test]
    fn understated_mu_and_k_fail() {
        let mut s = simple(
            Barrier::NegInfinity,
            Barrier::PosInfinity,
            Terminal::constant(0.0),
            Driver::linear(1.0, 2.0, 0.0),
        );
        s.driver.mu = 0.5;
        s.driver.k = 1.0;
        let r = validate_scenario(&s);
        assert_eq!(
            r.finding("driver_monotonicity").unwrap().status,
            FindingStatus::Fail
        );
        assert_eq!(
            r.finding("driver_z_lipschitz").unwrap().status,
            FindingStatus::Fail
        );
        s.driver.mu = 1.0;
        s.driver.k = 2.0;
        assert!(validate_scenario(&s).passed());
    }

    #[test]
    fn growth_clause_uses_phi() {
        let mut s = simple(
            Barrier::NegInfinity,
            Barrier::PosInfinity,
            Terminal::constant(0.0),
            Driver::cubic(1.0, 0.0, 0.0, 0.3),
        );
        let r = validate_scenario(&s);
        assert_eq!(
            r.finding("driver_growth").unwrap().status,
            FindingStatus::Info
        );
        s.driver.growth_phi = Some(GrowthPhi {
            degree: 3.0,
            coefficient: 1.0,
            linear: 0.0,
        });
        assert_eq!(
            validate_scenario(&s)
                .finding("driver_growth")
                .unwrap()
                .status,
            FindingStatus::Pass
        );
        s.driver.growth_phi = Some(GrowthPhi {
            degree: 2.0,
            coefficient: 1.0,
            linear: 0.0,
        });
        assert_eq!(
            validate_scenario(&s)
                .finding("driver_growth")
                .unwrap()
                .status,
            FindingStatus::Fail
        );
    }

    #[test]
    fn wrong_sentinel_and_touching_barriers_fail() {
        let s = simple(
            Barrier::PosInfinity,
            Barrier::PosInfinity,
            Terminal::constant(0.0),
            Driver::constant(0.0),
        );
        assert_eq!(
            validate_scenario(&s)
                .finding("barrier_sentinels")
                .unwrap()
                .status,
            FindingStatus::Fail
        );
        let s = simple(
            Barrier::affine_in_time(-1.0, 1.0),
            Barrier::constant(0.0),
            Terminal::constant(0.0),
            Driver::constant(0.0),
        );
        let r = validate_scenario(&s);
        assert_eq!(
            r.finding("terminal_ordering").unwrap().status,
            FindingStatus::Pass
        );
        assert_eq!(
            r.finding("strict_separation").unwrap().status,
            FindingStatus::Pass
        );
        let s = simple(
            Barrier::constant(0.0),
            Barrier::constant(0.0),
            Terminal::constant(0.0),
            Driver::constant(0.0),
        );
        let f = validate_scenario(&s);
        let f = f.finding("strict_separation").unwrap();
        assert_eq!(f.status, FindingStatus::Fail);
        assert_eq!(f.location.as_deref(), Some("node (0, 0)"));
    }

    #[test]
    fn validation_is_deterministic() {
        let s = simple(
            Barrier::state(-1.0, 0.0, 0.5, 0.0),
            Barrier::constant(3.0),
            Terminal::sine(0.5, 1.0, 0.0),
            Driver::cubic(1.0, 0.5, 0.2, 0.1),
        );
        assert_eq!(validate_scenario(&s), validate_scenario(&s));
    }

    const ZERO: &str = r#"{
        "horizon_T": 1.0,
        "driver": {"family": "constant", "params": {"value": 0.0}, "mu": 0.0, "k": 0.0},
        "terminal": {"family": "constant", "params": {"value": 0.0}},
        "lower": {"family": "constant", "params": {"value": -1.0}},
        "upper": {"family": "pos_infinity"},
        "grid": {"steps_N": 4, "implicit_tol": 1e-12}
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let s = ScenarioSpec::from_json_str(ZERO).unwrap();
        assert_eq!(s.upper, Barrier::PosInfinity);
        assert_eq!(s.grid.implicit_max_iter, 200);
        let again = ScenarioSpec::from_json_str(&s.to_json_string().unwrap()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let bad = ZERO.replace("\"k\": 0.0", "\"k\": 0.0, \"kk\": 1");
        let err = ScenarioSpec::from_json_str(&bad).unwrap_err();
        assert!(
            matches!(&err, ModelError::Parse { path, .. } if path.starts_with("driver")),
            "{err}"
        );

        let bad = ZERO.replace("{\"value\": -1.0}", "{\"value\": -1.0, \"slope\": 2}");
        let err = ScenarioSpec::from_json_str(&bad).unwrap_err();
        assert!(
            matches!(&err, ModelError::Parse { path, .. } if path.starts_with("lower")),
            "{err}"
        );

        let bad = ZERO.replace("\"horizon_T\"", "\"horizon\"");
        assert!(ScenarioSpec::from_json_str(&bad).is_err());

        let bad = ZERO.replace(
            "\"family\": \"constant\", \"params\": {\"value\": 0.0}, \"mu\"",
            "\"family\": \"quartic\", \"params\": {\"value\": 0.0}, \"mu\"",
        );
        let err = ScenarioSpec::from_json_str(&bad).unwrap_err();
        assert!(err.to_string().contains("quartic"), "{err}");
    }

    #[test]
    fn negative_cubic_coefficient_is_rejected() {
        let bad = ZERO.replace(
            "\"family\": \"constant\", \"params\": {\"value\": 0.0}, \"mu\"",
            "\"family\": \"monotone_cubic\", \"params\": {\"c3\": -1, \"b\": 0, \"g\": 0}, \"mu\"",
        );
        let err = ScenarioSpec::from_json_str(&bad).unwrap_err();
        assert!(
            matches!(&err, ModelError::InvalidParameter { path, .. } if path == "driver.params.c3"),
            "{err}"
        );
    }

    #[test]
    fn witness_examples() {
        let s = simple(
            Barrier::constant(-1.0),
            Barrier::constant(1.0),
            Terminal::constant(0.0),
            Driver::constant(0.0),
        );
        let zero = MokobodskiWitness {
            j0: 0.0,
            phi: Barrier::constant(0.0),
            v_plus: RateParams { rate: 0.0 },
            v_minus: RateParams { rate: 0.0 },
        };
        assert!(validate_witness(&s, &zero).passed());
        let high = MokobodskiWitness {
            j0: 2.0,
            ..zero.clone()
        };
        let r = validate_witness(&s, &high);
        assert!(!r.passed());
        assert!(r
            .failures()
            .next()
            .unwrap()
            .location
            .as_deref()
            .unwrap()
            .starts_with("layer 0"));

        let moving = simple(
            Barrier::affine_in_time(-1.0, 1.0),
            Barrier::affine_in_time(1.0, 1.0),
            Terminal::constant(1.0),
            Driver::constant(0.0),
        );
        let drift = MokobodskiWitness {
            v_minus: RateParams { rate: 1.0 },
            ..zero.clone()
        };
        assert!(validate_witness(&moving, &drift).passed());
    }

    #[test]
    fn path_dependent_witness_is_enumerated() {
        let s = simple(
            Barrier::constant(-1.0),
            Barrier::constant(1.0),
            Terminal::constant(0.0),
            Driver::constant(0.0),
        );
        // |phi| <= 0.1 over 8 steps of size sqrt(1/8): |J| <= 0.29
        let w = MokobodskiWitness {
            j0: 0.0,
            phi: Barrier::affine_in_time(0.1, -0.05),
            v_plus: RateParams { rate: 0.0 },
            v_minus: RateParams { rate: 0.0 },
        };
        assert!(validate_witness(&s, &w).passed());
        let w = MokobodskiWitness {
            phi: Barrier::affine_in_time(1.0, 0.01),
            ..w
        };
        assert!(!validate_witness(&s, &w).passed());
    }

    #[test]
    fn boundedness_is_structural() {
        assert!(Barrier::constant(1.0).bounded_above());
        assert!(!Barrier::state(0.0, 0.0, 1.0, 0.0).bounded_above());
        assert!(Barrier::state(0.0, 0.0, 0.0, 1.0).bounded_below());
        assert!(Barrier::CapAbove {
            inner: Box::new(Barrier::state(0.0, 0.0, 1.0, 0.0)),
            level: 2.0
        }
        .bounded_above());
        assert!(!Terminal::affine(0.0, 1.0).is_bounded());
        assert!(Terminal::sine(1.0, 2.0, 0.0).is_bounded());
        assert_eq!(
            Barrier::FloorBelow {
                inner: Box::new(Barrier::NegInfinity),
                level: -3.0
            }
            .sentinel(),
            None
        );
    }
}
