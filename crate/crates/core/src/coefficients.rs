//! Reaction, diffusion and advection coefficients and the structural
//! constants derived from them.
//!
//! Spatially varying coefficients are described by [`ScalarExpr`], a small
//! whitelist of smooth closed-form expressions (`const`, `tanh`, `sin`).

use std::fmt;

use thiserror::Error;

use crate::numerics::adaptive_simpson;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("threshold outside (0,1): {0}")]
    Threshold(f64),
    #[error("reaction modulation must stay positive, lower bound is {0}")]
    Modulation(f64),
    #[error("diffusion entry must stay positive, lower bound is {0}")]
    Ellipticity(f64),
    #[error("operation needs an x-independent reaction")]
    NotHomogeneous,
    #[error("bad expression '{0}': {1}")]
    Expr(String, String),
}

/// Coordinate axis selector used by expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    fn pick(self, x: [f64; 2]) -> f64 {
        match self {
            Axis::X => x[0],
            Axis::Y => x[1],
        }
    }
    fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

/// Closed-form scalar field over the plane.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarExpr {
    /// `value`
    Const(f64),
    /// `base + amp * tanh((x_axis - center) / scale)`
    Tanh { base: f64, amp: f64, axis: Axis, center: f64, scale: f64 },
    /// `base + amp * sin(freq * x_axis + phase)`
    Sin { base: f64, amp: f64, axis: Axis, freq: f64, phase: f64 },
}

impl ScalarExpr {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match *self {
            ScalarExpr::Const(v) => v,
            ScalarExpr::Tanh { base, amp, axis, center, scale } => {
                base + amp * ((axis.pick(x) - center) / scale).tanh()
            }
            ScalarExpr::Sin { base, amp, axis, freq, phase } => {
                base + amp * (freq * axis.pick(x) + phase).sin()
            }
        }
    }

    /// Lower and upper bound over the whole plane.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            ScalarExpr::Const(v) => (v, v),
            ScalarExpr::Tanh { base, amp, .. } | ScalarExpr::Sin { base, amp, .. } => {
                (base - amp.abs(), base + amp.abs())
            }
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self {
            ScalarExpr::Const(v) => Some(v),
            ScalarExpr::Tanh { base, amp, .. } | ScalarExpr::Sin { base, amp, .. } if amp == 0.0 => {
                Some(base)
            }
            _ => None,
        }
    }

    /// Parses `const(v)`, `tanh(base, amp, axis, center, scale)` or
    /// `sin(base, amp, axis, freq, phase)`; a bare number is a constant.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let err = |m: &str| ModelError::Expr(text.to_string(), m.to_string());
        let t = text.trim();
        if let Ok(v) = t.parse::<f64>() {
            return Self::checked(ScalarExpr::Const(v), text);
        }
        let open = t.find('(').ok_or_else(|| err("expected name(args)"))?;
        if !t.ends_with(')') {
            return Err(err("missing closing parenthesis"));
        }
        let name = t[..open].trim();
        let args: Vec<&str> = t[open + 1..t.len() - 1].split(',').map(str::trim).collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(&format!("'{s}' is not a number")));
        let axis = |s: &str| match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            _ => Err(err(&format!("axis must be x or y, got '{s}'"))),
        };
        let e = match (name, args.len()) {
            ("const", 1) => ScalarExpr::Const(num(args[0])?),
            ("tanh", 5) => ScalarExpr::Tanh {
                base: num(args[0])?,
                amp: num(args[1])?,
                axis: axis(args[2])?,
                center: num(args[3])?,
                scale: num(args[4])?,
            },
            ("sin", 5) => ScalarExpr::Sin {
                base: num(args[0])?,
                amp: num(args[1])?,
                axis: axis(args[2])?,
                freq: num(args[3])?,
                phase: num(args[4])?,
            },
            ("const" | "tanh" | "sin", n) => return Err(err(&format!("wrong argument count {n}"))),
            _ => return Err(err("unknown function; allowed: const, tanh, sin")),
        };
        Self::checked(e, text)
    }

    fn checked(e: ScalarExpr, text: &str) -> Result<Self, ModelError> {
        let finite = match e {
            ScalarExpr::Const(v) => v.is_finite(),
            ScalarExpr::Tanh { base, amp, center, scale, .. } => {
                base.is_finite() && amp.is_finite() && center.is_finite() && scale.is_finite() && scale != 0.0
            }
            ScalarExpr::Sin { base, amp, freq, phase, .. } => {
                base.is_finite() && amp.is_finite() && freq.is_finite() && phase.is_finite()
            }
        };
        if finite {
            Ok(e)
        } else {
            Err(ModelError::Expr(text.to_string(), "non-finite or zero-scale parameter".into()))
        }
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ScalarExpr::Const(v) => write!(f, "const({v:?})"),
            ScalarExpr::Tanh { base, amp, axis, center, scale } => {
                write!(f, "tanh({base:?}, {amp:?}, {}, {center:?}, {scale:?})", axis.name())
            }
            ScalarExpr::Sin { base, amp, axis, freq, phase } => {
                write!(f, "sin({base:?}, {amp:?}, {}, {freq:?}, {phase:?})", axis.name())
            }
        }
    }
}

/// Bistable cubic reaction `rho(x) * u (1 - u) (u - theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    theta: f64,
    rho: ScalarExpr,
}

impl Nonlinearity {
    pub fn cubic(theta: f64) -> Result<Self, ModelError> {
        Self::modulated(theta, ScalarExpr::Const(1.0))
    }

    pub fn modulated(theta: f64, rho: ScalarExpr) -> Result<Self, ModelError> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(ModelError::Threshold(theta));
        }
        let (lo, _) = rho.bounds();
        if !(lo > 0.0) {
            return Err(ModelError::Modulation(lo));
        }
        Ok(Self { theta, rho })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn modulation(&self) -> &ScalarExpr {
        &self.rho
    }

    pub fn is_homogeneous(&self) -> bool {
        self.rho.as_const().is_some()
    }

    /// `(rho_min, rho_max)`.
    pub fn modulation_bounds(&self) -> (f64, f64) {
        self.rho.bounds()
    }

    /// Unmodulated cubic factor.
    #[inline]
    pub fn shape(&self, u: f64) -> f64 {
        u * (1.0 - u) * (u - self.theta)
    }

    #[inline]
    pub fn shape_du(&self, u: f64) -> f64 {
        -3.0 * u * u + 2.0 * (1.0 + self.theta) * u - self.theta
    }

    #[inline]
    pub fn rho(&self, x: [f64; 2]) -> f64 {
        self.rho.eval(x)
    }

    #[inline]
    pub fn eval(&self, x: [f64; 2], u: f64) -> f64 {
        self.rho.eval(x) * self.shape(u)
    }

    #[inline]
    pub fn du(&self, x: [f64; 2], u: f64) -> f64 {
        self.rho.eval(x) * self.shape_du(u)
    }

    /// Homogeneous reaction evaluated with the constant modulation; panics if
    /// the reaction depends on x.
    pub fn eval_homogeneous(&self, u: f64) -> f64 {
        self.rho.as_const().expect("homogeneous reaction") * self.shape(u)
    }

    /// Reaction for the reflected unknown `1 - u`: `-f(x, 1 - u)`.
    pub fn reflected(&self) -> Self {
        Self { theta: 1.0 - self.theta, rho: self.rho.clone() }
    }

    /// Critical points of the cubic factor, `u_minus < u_plus`.
    pub fn critical_points(&self) -> (f64, f64) {
        let t = self.theta;
        let disc = (t * t - t + 1.0).sqrt();
        ((1.0 + t - disc) / 3.0, (1.0 + t + disc) / 3.0)
    }
}

/// Stability constants of a bistable reaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityConstants {
    pub gamma: f64,
    pub sigma: f64,
}

/// `sigma` is 0.99 of the distance from the stable states to the nearest
/// critical point; `gamma` is the worst ratio `-f/u` on `[0, sigma]` and
/// `f/(1-u)` on `[1-sigma, 1]`, scaled by the smallest modulation.
pub fn derive_stability_constants(nl: &Nonlinearity) -> Result<StabilityConstants, ModelError> {
    let t = nl.theta;
    if !(t > 0.0 && t < 1.0) {
        return Err(ModelError::Threshold(t));
    }
    let (um, up) = nl.critical_points();
    let sigma = (0.99 * um.min(1.0 - up).min(0.5 - 1e-6)).min(0.49);
    // Both ratios are monotone on their intervals, so the minimum sits at the inner end.
    let near_zero = (1.0 - sigma) * (t - sigma);
    let near_one = (1.0 - sigma) * (1.0 - sigma - t);
    let (rho_min, _) = nl.modulation_bounds();
    Ok(StabilityConstants { gamma: rho_min * near_zero.min(near_one), sigma })
}

/// Integral of the homogeneous reaction over `[0, 1]`.
pub fn integral_f(nl: &Nonlinearity) -> Result<f64, ModelError> {
    if !nl.is_homogeneous() {
        return Err(ModelError::NotHomogeneous);
    }
    Ok(adaptive_simpson(&|u| nl.eval_homogeneous(u), 0.0, 1.0, 1e-15))
}

/// Upper bound on `|df/du|` over `u` in `[0, 1]` with 5% headroom.
pub fn lipschitz_bound(nl: &Nonlinearity) -> f64 {
    let n = 10_000;
    let max = (0..=n)
        .map(|j| nl.shape_du(j as f64 / n as f64).abs())
        .fold(0.0f64, f64::max);
    let (_, rho_max) = nl.modulation_bounds();
    1.05 * rho_max * max
}

/// Diagonal diffusion tensor `diag(a1(x), a2(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    a1: ScalarExpr,
    a2: ScalarExpr,
}

impl DiffusionModel {
    pub fn new(a1: ScalarExpr, a2: ScalarExpr) -> Result<Self, ModelError> {
        for e in [&a1, &a2] {
            let (lo, _) = e.bounds();
            if !(lo > 0.0) {
                return Err(ModelError::Ellipticity(lo));
            }
        }
        Ok(Self { a1, a2 })
    }

    pub fn identity() -> Self {
        Self { a1: ScalarExpr::Const(1.0), a2: ScalarExpr::Const(1.0) }
    }

    pub fn entries(&self) -> (&ScalarExpr, &ScalarExpr) {
        (&self.a1, &self.a2)
    }

    #[inline]
    pub fn a1(&self, x: [f64; 2]) -> f64 {
        self.a1.eval(x)
    }

    #[inline]
    pub fn a2(&self, x: [f64; 2]) -> f64 {
        self.a2.eval(x)
    }

    pub fn beta1(&self) -> f64 {
        self.a1.bounds().0.min(self.a2.bounds().0)
    }

    pub fn beta2(&self) -> f64 {
        self.a1.bounds().1.max(self.a2.bounds().1)
    }

    pub fn is_identity(&self) -> bool {
        self.a1.as_const() == Some(1.0) && self.a2.as_const() == Some(1.0)
    }
}

/// Advection field `q(x) = (q1(x), q2(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvectionModel {
    q1: ScalarExpr,
    q2: ScalarExpr,
}

impl AdvectionModel {
    pub fn new(q1: ScalarExpr, q2: ScalarExpr) -> Self {
        Self { q1, q2 }
    }

    pub fn zero() -> Self {
        Self::new(ScalarExpr::Const(0.0), ScalarExpr::Const(0.0))
    }

    pub fn components(&self) -> (&ScalarExpr, &ScalarExpr) {
        (&self.q1, &self.q2)
    }

    #[inline]
    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        [self.q1.eval(x), self.q2.eval(x)]
    }

    /// Bound on the Euclidean norm of `q`.
    pub fn sup_norm(&self) -> f64 {
        let m = |e: &ScalarExpr| {
            let (lo, hi) = e.bounds();
            lo.abs().max(hi.abs())
        };
        m(&self.q1).hypot(m(&self.q2))
    }

    pub fn is_zero(&self) -> bool {
        self.q1.as_const() == Some(0.0) && self.q2.as_const() == Some(0.0)
    }
}

/// The full coefficient set of the equation.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub reaction: Nonlinearity,
    pub diffusion: DiffusionModel,
    pub advection: AdvectionModel,
}

impl Models {
    /// Cubic reaction with identity diffusion and no advection.
    pub fn cubic(theta: f64) -> Result<Self, ModelError> {
        Ok(Self {
            reaction: Nonlinearity::cubic(theta)?,
            diffusion: DiffusionModel::identity(),
            advection: AdvectionModel::zero(),
        })
    }

    pub fn lipschitz(&self) -> f64 {
        lipschitz_bound(&self.reaction)
    }
}
