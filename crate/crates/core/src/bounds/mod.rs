//! Sub- and supersolution candidates built from planar profiles, their
//! parameter recipes, and numerical checks of the defining inequalities.
//!
//! Every candidate lives on one channel (the weight's channel) and is written
//! in that channel's axial coordinate `s`. Checks are reported, never
//! asserted: a violated inequality comes back as a negative margin.

mod weight;

pub use weight::{
    build_weight, build_weight_with, verify_weight, AuxWeight, WeightCheck, WeightForm, WeightLattice,
    WeightOptions, WEIGHT_TOL,
};

use crate::coefficients::{derive_stability_constants, lipschitz_bound, ModelError, Models, Nonlinearity};
use crate::geometry::MaskedGrid;
use crate::solver::ScalarField;
use crate::wave1d::{min_slope, profile_width, FrontProfile, WaveError};
use rayon::prelude::*;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Residual tolerance with exact derivatives.
pub const ANALYTIC_TOL: f64 = 1e-8;
/// Residual tolerance with difference quotients.
pub const FD_TOL: f64 = 5e-3;
/// Ordering tolerance.
pub const ORDERING_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("{0} is infeasible: {1}")]
    KindInfeasible(BoundKind, String),
    #[error("time {t} outside the validity interval [{lo}, {hi}]")]
    Region { t: f64, lo: f64, hi: f64 },
    #[error("weight construction: {0}")]
    Weight(String),
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The five candidate constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundKind {
    /// Inward front lowered by a decaying weight, zero near the junction.
    EmanationSub,
    /// Inward front raised by the weight, glued to a small constant.
    EmanationSuper,
    /// Outward front from below, after an anchor time.
    ConvergenceLower,
    /// Outward front from above, after an anchor time.
    ConvergenceUpper,
    /// Two opposed fronts bracketing a slab.
    JunctionLower,
}

impl BoundKind {
    pub const ALL: [BoundKind; 5] = [
        BoundKind::EmanationSub,
        BoundKind::EmanationSuper,
        BoundKind::ConvergenceLower,
        BoundKind::ConvergenceUpper,
        BoundKind::JunctionLower,
    ];

    /// True for candidates that bound solutions from below.
    pub fn is_lower(self) -> bool {
        !matches!(self, BoundKind::EmanationSuper | BoundKind::ConvergenceUpper)
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundKind::EmanationSub => "emanation-sub",
            BoundKind::EmanationSuper => "emanation-super",
            BoundKind::ConvergenceLower => "convergence-lower",
            BoundKind::ConvergenceUpper => "convergence-upper",
            BoundKind::JunctionLower => "junction-lower",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Optional inputs of the parameter recipes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamOptions {
    /// Fraction of the cap used for `delta`.
    pub delta_factor: f64,
    /// Use this `delta` instead of the capped one (checks are left to the caller).
    pub delta_override: Option<f64>,
    /// Start time of the convergence kinds.
    pub anchor_time: f64,
    /// Axial offset where the convergence kinds start; defaults to the channel offset.
    pub anchor_offset: Option<f64>,
    /// `(center, half width)` of the junction-lower slab.
    pub slab: Option<(f64, f64)>,
    /// Constant level of the emanation supersolution; defaults to `delta'/2`.
    pub eps: Option<f64>,
}

impl Default for ParamOptions {
    fn default() -> Self {
        Self { delta_factor: 0.9, delta_override: None, anchor_time: 0.0, anchor_offset: None, slab: None, eps: None }
    }
}

/// Level and start of the constant part of the emanation supersolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsGlue {
    pub eps: f64,
    /// Axial coordinate beyond which the front part is used alone.
    pub cut: f64,
}

/// Numbers that define a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundParams {
    pub kind: BoundKind,
    pub delta: f64,
    /// `delta / sup psi`.
    pub delta_tilde: f64,
    /// `delta_tilde * inf psi`.
    pub delta_prime: f64,
    pub omega: f64,
    /// Profile width at level `delta`.
    pub m_delta: f64,
    /// Minimal time slope of the front on its middle zone.
    pub slope: f64,
    /// Validity interval in time.
    pub valid: (f64, f64),
    /// Channel offset.
    pub offset: f64,
    pub lambda: f64,
    pub speed: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub lipschitz: f64,
    /// Axial start of the convergence kinds.
    pub anchor_offset: f64,
    /// Start time of the convergence kinds.
    pub anchor_time: f64,
    /// Time shifts of the profiles.
    pub shifts: (f64, f64),
    pub glue: Option<EpsGlue>,
    pub slab: Option<(f64, f64)>,
}

impl BoundParams {
    /// `key = value` lines for reports.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: f64| s.push_str(&format!("{k} = {v:.10e}\n"));
        put("delta", self.delta);
        put("delta_tilde", self.delta_tilde);
        put("delta_prime", self.delta_prime);
        put("omega", self.omega);
        put("m_delta", self.m_delta);
        put("slope", self.slope);
        put("t_start", self.valid.0);
        put("t_end", self.valid.1);
        put("offset", self.offset);
        put("lambda", self.lambda);
        put("speed", self.speed);
        put("gamma", self.gamma);
        put("sigma", self.sigma);
        put("lipschitz", self.lipschitz);
        put("anchor_offset", self.anchor_offset);
        put("anchor_time", self.anchor_time);
        put("shift_1", self.shifts.0);
        put("shift_2", self.shifts.1);
        if let Some(g) = self.glue {
            put("eps", g.eps);
            put("eps_cut", g.cut);
        }
        if let Some((c, r)) = self.slab {
            put("slab_center", c);
            put("slab_half_width", r);
        }
        format!("kind = {}\n{s}", self.kind)
    }
}

/// Parameters with the default options.
pub fn choose_parameters(
    kind: BoundKind,
    p: &dyn FrontProfile,
    w: &AuxWeight,
    nl: &Nonlinearity,
    offset: f64,
) -> Result<BoundParams, BoundError> {
    choose_parameters_with(kind, p, w, nl, offset, &ParamOptions::default())
}

/// Parameter recipe for `kind`: `delta` a fraction of its cap, `omega` 1.1
/// times the smallest admissible value, validity horizon from the profile widths.
pub fn choose_parameters_with(
    kind: BoundKind,
    p: &dyn FrontProfile,
    w: &AuxWeight,
    nl: &Nonlinearity,
    offset: f64,
    opts: &ParamOptions,
) -> Result<BoundParams, BoundError> {
    let c = p.speed();
    if !(c > 0.0) {
        return Err(BoundError::KindInfeasible(kind, format!("needs a positive front speed, got {c}")));
    }
    if !(opts.delta_factor > 0.0 && opts.delta_factor <= 1.0) {
        return Err(BoundError::Argument(format!("delta factor {} outside (0, 1]", opts.delta_factor)));
    }
    let st = derive_stability_constants(nl)?;
    let (gamma, sigma) = (st.gamma, st.sigma);
    let big_m = lipschitz_bound(nl);
    let lam = w.lambda();
    let cap = match kind {
        BoundKind::EmanationSub | BoundKind::EmanationSuper => (sigma / 2.0).min(lam * c),
        BoundKind::ConvergenceLower | BoundKind::ConvergenceUpper => (lam * c).min(gamma).min(sigma / 3.0),
        BoundKind::JunctionLower => {
            // Decay rate of the tail weight: largest r with r^2 + r c <= gamma.
            let r = (-c + (c * c + 4.0 * gamma).sqrt()) / 2.0;
            gamma.min(sigma / 4.0).min(lam * c / 2.0).min(r * c / 2.0)
        }
    };
    let delta = opts.delta_override.unwrap_or(opts.delta_factor * cap);
    if !(delta > 0.0 && delta < 0.5) {
        return Err(BoundError::Argument(format!("delta {delta} outside (0, 1/2)")));
    }
    let delta_tilde = delta / w.sup_psi();
    let delta_prime = delta_tilde * w.inf_psi();
    let m_delta = profile_width(p, delta)?;
    let m_prime = profile_width(p, delta_prime.min(0.5))?;
    let slope = min_slope(p, m_delta)?;
    let mut params = BoundParams {
        kind,
        delta,
        delta_tilde,
        delta_prime,
        omega: 0.0,
        m_delta,
        slope,
        valid: (f64::NEG_INFINITY, f64::INFINITY),
        offset,
        lambda: lam,
        speed: c,
        gamma,
        sigma,
        lipschitz: big_m,
        anchor_offset: opts.anchor_offset.unwrap_or(offset),
        anchor_time: opts.anchor_time,
        shifts: (0.0, 0.0),
        glue: None,
        slab: None,
    };
    match kind {
        BoundKind::EmanationSub | BoundKind::EmanationSuper => {
            params.omega = 1.1 * (gamma + big_m) * (lam * (m_delta + offset + 1.0)).exp() / slope;
            let horizon = (-(offset + m_prime + 1.0) / c).min(0.0);
            params.valid.1 = horizon;
            if kind == BoundKind::EmanationSuper {
                let eps = opts.eps.unwrap_or(delta_prime / 2.0);
                if !(eps > 0.0 && eps < delta_prime) {
                    return Err(BoundError::Argument(format!("eps {eps} must lie in (0, {delta_prime})")));
                }
                let cut = offset + ((2.0 * delta / eps).ln() / lam).max(0.0);
                let m_half = profile_width(p, eps / 2.0)?;
                let t_eps = horizon
                    .min(-params.omega)
                    .min((1.0 / (c * params.omega)).ln() / delta)
                    .min((-cut - m_half - 1.0) / c);
                params.valid.1 = t_eps;
                params.glue = Some(EpsGlue { eps, cut });
            }
        }
        BoundKind::ConvergenceLower | BoundKind::ConvergenceUpper => {
            params.omega = 1.1 * (delta + gamma + 2.0 * big_m) / slope;
            let l1 = params.anchor_offset;
            if l1 < offset {
                return Err(BoundError::Argument(format!("anchor offset {l1} below the channel offset {offset}")));
            }
            let reach = c * params.omega;
            params.shifts = ((l1 + m_delta + reach) / c, (l1 + m_prime) / c);
            params.valid.0 = opts.anchor_time;
        }
        BoundKind::JunctionLower => {
            let (center, half) = opts
                .slab
                .ok_or_else(|| BoundError::Argument("junction-lower needs a slab (center, half width)".into()))?;
            params.omega = 1.1 * (delta + 4.0 * big_m) / slope;
            let horizon = (center - 2.0 * half - offset) / c;
            if !(half > 0.0 && horizon > 0.0) {
                return Err(BoundError::KindInfeasible(
                    kind,
                    format!("slab ({center}, {half}) leaves no time before reaching the offset {offset}"),
                ));
            }
            params.shifts = (
                (half - center - m_delta) / c - params.omega,
                (center + half - m_delta) / c - params.omega,
            );
            params.valid = (0.0, horizon);
            params.slab = Some((center, half));
        }
    }
    Ok(params)
}

/// A function of `(t, x)` that may be undefined at some points.
pub trait SpaceTimeBound: Send + Sync {
    /// `Ok(None)` off the spatial region; `Err` outside the time interval.
    fn value(&self, t: f64, x: [f64; 2]) -> Result<Option<f64>, BoundError>;
}

/// The constant function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantBound(pub f64);

impl SpaceTimeBound for ConstantBound {
    fn value(&self, _t: f64, _x: [f64; 2]) -> Result<Option<f64>, BoundError> {
        Ok(Some(self.0))
    }
}

/// Smooth piece of a candidate active at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    Front,
    Constant,
}

/// An evaluable candidate.
#[derive(Clone)]
pub struct CandidateBound {
    pub kind: BoundKind,
    profile: Arc<dyn FrontProfile>,
    pub weight: AuxWeight,
    pub params: BoundParams,
}

impl fmt::Debug for CandidateBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CandidateBound")
            .field("kind", &self.kind)
            .field("speed", &self.profile.speed())
            .field("params", &self.params)
            .finish()
    }
}

/// Candidate of `kind` on the weight's channel.
pub fn build_candidate(
    kind: BoundKind,
    p: Arc<dyn FrontProfile>,
    w: &AuxWeight,
    params: &BoundParams,
) -> Result<CandidateBound, BoundError> {
    if params.kind != kind {
        return Err(BoundError::Argument(format!("parameters were chosen for {}, not {kind}", params.kind)));
    }
    if (p.speed() - params.speed).abs() > 1e-12 * params.speed.abs().max(1.0) {
        return Err(BoundError::Argument("profile speed differs from the parameter echo".into()));
    }
    if kind == BoundKind::EmanationSuper && params.glue.is_none() {
        return Err(BoundError::Argument("emanation-super needs its constant level".into()));
    }
    if kind == BoundKind::JunctionLower && params.slab.is_none() {
        return Err(BoundError::Argument("junction-lower needs its slab".into()));
    }
    Ok(CandidateBound { kind, profile: p, weight: w.clone(), params: params.clone() })
}

/// Value and exact derivatives `(u, u_t, u_ss)` of a front piece.
#[derive(Debug, Clone, Copy)]
struct Jet {
    u: f64,
    ut: f64,
    uss: f64,
}

impl CandidateBound {
    pub fn profile(&self) -> &dyn FrontProfile {
        self.profile.as_ref()
    }

    fn check_time(&self, t: f64) -> Result<(), BoundError> {
        let (lo, hi) = self.params.valid;
        let slack = 1e-12 * (1.0 + t.abs());
        if t < lo - slack || t > hi + slack {
            return Err(BoundError::Region { t, lo, hi });
        }
        Ok(())
    }

    /// Local coordinates and whether the point lies in the channel strip.
    fn locate(&self, x: [f64; 2]) -> (f64, f64, bool) {
        let (s, tau) = self.weight.channel.base.local(x);
        let inside = tau.abs() <= self.weight.channel.width(s) / 2.0 + 1e-9;
        (s, tau, inside)
    }

    /// Exponential weight term `delta_tilde * exp(-lambda (s - start)) * psi`
    /// and its second axial derivative factor.
    fn decay(&self, s: f64, tau: f64, start: f64) -> f64 {
        let p = &self.params;
        p.delta_tilde * (-p.lambda * (s - start)).exp() * self.weight.psi_local(s, tau)
    }

    /// Front piece, unclamped, with exact derivatives when `psi` is constant.
    fn front_jet(&self, t: f64, s: f64, tau: f64) -> Jet {
        let p = &self.params;
        let c = p.speed;
        let pr = self.profile.as_ref();
        let lam2 = p.lambda * p.lambda;
        let (om, d) = (p.omega, p.delta);
        match self.kind {
            BoundKind::EmanationSub | BoundKind::EmanationSuper => {
                let sign = if self.kind == BoundKind::EmanationSub { -1.0 } else { 1.0 };
                let grow = om * (d * t).exp();
                let zeta = t + sign * grow;
                let dzeta = 1.0 + sign * d * grow;
                let eta = -s - c * zeta;
                let wt = self.decay(s, tau, p.offset);
                Jet {
                    u: pr.phi(eta) + sign * wt,
                    ut: -c * dzeta * pr.dphi(eta),
                    uss: pr.d2phi(eta) + sign * lam2 * wt,
                }
            }
            BoundKind::ConvergenceLower | BoundKind::ConvergenceUpper => {
                let lower = self.kind == BoundKind::ConvergenceLower;
                let sign = if lower { -1.0 } else { 1.0 };
                let elapsed = t - p.anchor_time;
                let shrink = (-d * elapsed).exp();
                let shift = if lower { p.shifts.0 } else { p.shifts.1 };
                let zeta = elapsed + sign * om * (1.0 - shrink) + shift;
                let dzeta = 1.0 + sign * om * d * shrink;
                let eta = s - c * zeta;
                let dd = d * shrink;
                let wt = self.decay(s, tau, p.anchor_offset);
                Jet {
                    u: pr.phi(eta) + sign * (dd + wt),
                    ut: -c * dzeta * pr.dphi(eta) - sign * d * dd,
                    uss: pr.d2phi(eta) + sign * lam2 * wt,
                }
            }
            BoundKind::JunctionLower => {
                let shrink = (-d * t).exp();
                let z1 = t + p.shifts.0 + om * shrink;
                let z2 = t + p.shifts.1 + om * shrink;
                let dz = 1.0 - om * d * shrink;
                let e1 = -s - c * z1;
                let e2 = s - c * z2;
                let dd = d * shrink;
                Jet {
                    u: pr.phi(e1) + pr.phi(e2) - 1.0 - dd,
                    ut: -c * dz * (pr.dphi(e1) + pr.dphi(e2)) + d * dd,
                    uss: pr.d2phi(e1) + pr.d2phi(e2),
                }
            }
        }
    }

    /// Active smooth piece and its raw value at `(t, x)`; `None` where the
    /// candidate is clamped, constant by definition, or undefined.
    pub fn active_piece(&self, t: f64, x: [f64; 2]) -> Result<Option<(Piece, f64)>, BoundError> {
        self.check_time(t)?;
        let (s, tau, inside) = self.locate(x);
        let p = &self.params;
        let front = |s: f64| self.front_jet(t, s, tau).u;
        Ok(match self.kind {
            BoundKind::EmanationSub => {
                let v = front(s);
                (inside && s >= p.offset && v > 0.0).then_some((Piece::Front, v))
            }
            BoundKind::EmanationSuper => {
                let g = p.glue.expect("checked at construction");
                if !inside || s < p.offset {
                    Some((Piece::Constant, g.eps))
                } else {
                    let v = front(s);
                    if s < g.cut && v > g.eps {
                        Some((Piece::Constant, g.eps))
                    } else {
                        (v < 1.0).then_some((Piece::Front, v))
                    }
                }
            }
            BoundKind::ConvergenceLower => {
                let v = front(s);
                (inside && s >= p.anchor_offset && v > 0.0).then_some((Piece::Front, v))
            }
            BoundKind::ConvergenceUpper => {
                let v = front(s);
                (inside && s >= p.anchor_offset && v < 1.0).then_some((Piece::Front, v))
            }
            BoundKind::JunctionLower => {
                let v = front(if inside { s.max(0.0) } else { 0.0 });
                (v > 0.0).then_some((Piece::Front, v))
            }
        })
    }
}

impl SpaceTimeBound for CandidateBound {
    fn value(&self, t: f64, x: [f64; 2]) -> Result<Option<f64>, BoundError> {
        self.check_time(t)?;
        let (s, tau, inside) = self.locate(x);
        let p = &self.params;
        let front = |s: f64| self.front_jet(t, s, tau).u;
        Ok(match self.kind {
            BoundKind::EmanationSub => Some(if inside && s >= p.offset { front(s).max(0.0) } else { 0.0 }),
            BoundKind::EmanationSuper => {
                let g = p.glue.expect("checked at construction");
                Some(if !inside || s < p.offset {
                    g.eps
                } else if s < g.cut {
                    front(s).min(g.eps).min(1.0)
                } else {
                    front(s).min(1.0)
                })
            }
            BoundKind::ConvergenceLower => (inside && s >= p.anchor_offset).then(|| front(s).max(0.0)),
            BoundKind::ConvergenceUpper => (inside && s >= p.anchor_offset).then(|| front(s).min(1.0)),
            BoundKind::JunctionLower => Some(front(if inside { s.max(0.0) } else { 0.0 }).max(0.0)),
        })
    }
}

/// How residuals are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualMethod {
    /// Exact derivatives where available, differences otherwise.
    Auto,
    /// Centered differences with spatial step `h` and time step `dt`.
    Differences { h: f64, dt: f64 },
}

/// Worst signed residual of a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub kind: BoundKind,
    /// Largest residual for lower kinds, smallest for upper kinds.
    pub worst: f64,
    pub at: (f64, [f64; 2]),
    /// Points where the candidate was strictly between its clamps.
    pub samples: usize,
    pub analytic: bool,
    /// Richardson estimate of the difference error; zero for exact derivatives.
    pub fd_error: f64,
    pub tolerance: f64,
}

impl ResidualReport {
    pub fn passed(&self) -> bool {
        if self.kind.is_lower() {
            self.worst <= self.tolerance
        } else {
            self.worst >= -self.tolerance
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "kind = {}\nmethod = {}\nworst_residual = {:.6e}\nworst_t = {:.6}\nworst_x = {:.6}\nworst_y = {:.6}\nsamples = {}\nfd_error = {:.3e}\ntolerance = {:.1e}\npassed = {}\n",
            self.kind,
            if self.analytic { "analytic" } else { "differences" },
            self.worst,
            self.at.0,
            self.at.1[0],
            self.at.1[1],
            self.samples,
            self.fd_error,
            self.tolerance,
            self.passed()
        )
    }
}

fn analytic_available(cb: &CandidateBound, models: &Models) -> bool {
    cb.weight.is_constant()
        && models.diffusion.is_identity()
        && models.advection.is_zero()
        && models.reaction.is_homogeneous()
}

/// `u_t - div(A grad u) + q . grad u - f(x, u)` by differences of `g`.
fn fd_residual(g: &dyn Fn(f64, [f64; 2]) -> f64, models: &Models, t: f64, x: [f64; 2], h: f64, dt: f64) -> f64 {
    let u = g(t, x);
    let ut = (g(t + dt, x) - g(t - dt, x)) / (2.0 * dt);
    let at = |dx: f64, dy: f64| g(t, [x[0] + dx, x[1] + dy]);
    let (ue, uw, un, us) = (at(h, 0.0), at(-h, 0.0), at(0.0, h), at(0.0, -h));
    let d = &models.diffusion;
    let div = (d.a1([x[0] + h / 2.0, x[1]]) * (ue - u) - d.a1([x[0] - h / 2.0, x[1]]) * (u - uw)
        + d.a2([x[0], x[1] + h / 2.0]) * (un - u)
        - d.a2([x[0], x[1] - h / 2.0]) * (u - us))
        / (h * h);
    let q = models.advection.eval(x);
    let adv = q[0] * (ue - uw) / (2.0 * h) + q[1] * (un - us) / (2.0 * h);
    ut - div + adv - models.reaction.eval(x, u)
}

/// Residual of the candidate at the listed points and times, restricted to
/// where it is strictly between its clamps.
pub fn verify_residual(
    cb: &CandidateBound,
    points: &[[f64; 2]],
    times: &[f64],
    models: &Models,
    method: ResidualMethod,
) -> Result<ResidualReport, BoundError> {
    for &t in times {
        cb.check_time(t)?;
    }
    let analytic = matches!(method, ResidualMethod::Auto) && analytic_available(cb, models);
    let (h, dt) = match method {
        ResidualMethod::Differences { h, dt } => (h, dt),
        ResidualMethod::Auto => (1e-2, 1e-3),
    };
    let lower = cb.kind.is_lower();
    let pairs: Vec<(f64, [f64; 2])> = times.iter().flat_map(|&t| points.iter().map(move |&x| (t, x))).collect();
    let evaluated: Vec<Option<(f64, f64, f64, [f64; 2])>> = pairs
        .par_iter()
        .map(|&(t, x)| -> Result<_, BoundError> {
            let Some((piece, _)) = cb.active_piece(t, x)? else { return Ok(None) };
            let (s, tau, _) = cb.locate(x);
            if piece == Piece::Constant {
                let eps = cb.params.glue.expect("constant piece implies glue").eps;
                return Ok(Some((-models.reaction.eval(x, eps), 0.0, t, x)));
            }
            if analytic {
                let j = cb.front_jet(t, s, tau);
                let n = j.ut - j.uss - models.reaction.eval(x, j.u);
                return Ok(Some((n, 0.0, t, x)));
            }
            let g = |t: f64, y: [f64; 2]| {
                let (s, tau) = cb.weight.channel.base.local(y);
                let s = if cb.kind == BoundKind::JunctionLower { s.max(0.0) } else { s };
                cb.front_jet(t, s, tau).u
            };
            let fine = fd_residual(&g, models, t, x, h, dt);
            let coarse = fd_residual(&g, models, t, x, 2.0 * h, 2.0 * dt);
            Ok(Some((fine, (fine - coarse).abs() / 3.0, t, x)))
        })
        .collect::<Result<_, _>>()?;
    let mut worst = if lower { f64::NEG_INFINITY } else { f64::INFINITY };
    let mut at = (f64::NAN, [f64::NAN; 2]);
    let mut fd_error: f64 = 0.0;
    let mut samples = 0;
    for (n, err, t, x) in evaluated.into_iter().flatten() {
        samples += 1;
        fd_error = fd_error.max(err);
        if (lower && n > worst) || (!lower && n < worst) {
            worst = n;
            at = (t, x);
        }
    }
    Ok(ResidualReport {
        kind: cb.kind,
        worst,
        at,
        samples,
        analytic,
        fd_error,
        tolerance: if analytic { ANALYTIC_TOL } else { FD_TOL },
    })
}

/// Which side of the solution the bound is supposed to lie on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Lower,
    Upper,
}

/// Smallest signed gap between a trajectory and a bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingReport {
    pub margin: f64,
    pub t: f64,
    pub cell: usize,
    pub compared: usize,
}

impl OrderingReport {
    pub fn passed(&self) -> bool {
        self.margin >= -ORDERING_TOL
    }
}

/// `min(u - b)` (lower) or `min(b - u)` (upper) over cells where `b` is defined.
pub fn ordering_margin(u: &[f64], bound: &[Option<f64>], direction: Direction) -> (f64, usize) {
    u.iter()
        .zip(bound)
        .enumerate()
        .filter_map(|(c, (&v, b))| {
            b.map(|b| {
                (
                    match direction {
                        Direction::Lower => v - b,
                        Direction::Upper => b - v,
                    },
                    c,
                )
            })
        })
        .fold((f64::INFINITY, usize::MAX), |a, b| if b.0 < a.0 { b } else { a })
}

/// Bound values at the cell centers at time `t`.
pub fn sample_bound(cb: &dyn SpaceTimeBound, grid: &MaskedGrid, t: f64) -> Result<Vec<Option<f64>>, BoundError> {
    grid.centers().par_iter().map(|&x| cb.value(t, x)).collect()
}

/// Ordering of every snapshot against the bound at the snapshot's time plus `time_shift`.
pub fn check_ordering(
    trajectory: &[ScalarField],
    grid: &MaskedGrid,
    cb: &dyn SpaceTimeBound,
    direction: Direction,
    time_shift: f64,
) -> Result<OrderingReport, BoundError> {
    let mut report = OrderingReport { margin: f64::INFINITY, t: f64::NAN, cell: usize::MAX, compared: 0 };
    for snap in trajectory {
        let b = sample_bound(cb, grid, snap.t + time_shift)?;
        let (m, cell) = ordering_margin(&snap.values, &b, direction);
        report.compared += b.iter().filter(|v| v.is_some()).count();
        if m < report.margin {
            report = OrderingReport { margin: m, t: snap.t, cell, compared: report.compared };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
