//! Time integration of the reaction-diffusion-advection equation on a masked
//! grid with zero-flux walls.
//!
//! Diffusion uses the five-point divergence stencil with coefficients sampled
//! at face midpoints; advection is first-order upwind; reaction is explicit.
//! Closed faces drop out of every stencil, which is the discrete no-flux wall.

mod initial;

pub use initial::{emanation_seed, initial_block, initial_front, initial_plateau, Facing};

use rayon::prelude::*;
use thiserror::Error;

use crate::coefficients::Models;
use crate::geometry::{MaskedGrid, CLOSED};
use crate::numerics::det_dot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("linear solve did not converge in {iterations} iterations (residual {residual:e}) at t = {t}")]
    LinearSolve { iterations: usize, residual: f64, t: f64 },
    #[error("non-finite value in cell {cell} at t = {t}")]
    BlowUp { cell: usize, t: f64 },
}

/// Cell values on the interior of a grid at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub t: f64,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(t: f64, values: Vec<f64>) -> Self {
        Self { t, values }
    }

    pub fn constant(grid: &MaskedGrid, v: f64) -> Self {
        Self { t: 0.0, values: vec![v; grid.len()] }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum u h^2` with a fixed summation order.
    pub fn mass(&self, grid: &MaskedGrid) -> f64 {
        let h = grid.spacing();
        crate::numerics::det_sum(&self.values) * h * h
    }

    /// `max |self - other|`.
    pub fn sup_distance(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Explicit,
    Imex,
}

/// Time-stepping parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Time between probe calls; zero probes only the start and the end.
    pub output_every: f64,
    pub tol_ss: f64,
    pub lin_tol: f64,
}

/// Largest step the scheme accepts on this grid.
pub fn max_stable_dt(grid: &MaskedGrid, models: &Models, scheme: Scheme) -> f64 {
    let h = grid.spacing();
    let m = models.lipschitz();
    let q = models.advection.sup_norm();
    match scheme {
        Scheme::Explicit => 1.0 / (4.0 * models.diffusion.beta2() / (h * h) + 2.0 * q / h + m),
        Scheme::Imex => 1.0 / (m + 2.0 * q / h),
    }
}

impl SimConfig {
    /// Default step `0.9 * max_stable_dt` (capped at 0.5 for the implicit scheme).
    pub fn with_default_dt(grid: &MaskedGrid, models: &Models, scheme: Scheme, t_end: f64) -> Self {
        let mut dt = 0.9 * max_stable_dt(grid, models, scheme);
        if scheme == Scheme::Imex {
            dt = dt.min(0.5);
        }
        Self { dt, t_end, scheme, output_every: 0.0, tol_ss: 1e-6, lin_tol: 1e-13 }
    }

    pub fn validate(&self, grid: &MaskedGrid, models: &Models) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(SolverError::Config(format!("t_end = {} must be nonnegative", self.t_end)));
        }
        if !(self.output_every >= 0.0) || !(self.tol_ss > 0.0) || !(self.lin_tol > 0.0) {
            return Err(SolverError::Config("output_every, tol_ss and lin_tol must be positive".into()));
        }
        let limit = max_stable_dt(grid, models, self.scheme);
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(SolverError::Config(format!(
                "dt = {} exceeds the monotone bound {limit} for the {:?} scheme",
                self.dt, self.scheme
            )));
        }
        Ok(())
    }

    /// Step count and uniform step that land exactly on `t_end`; when `t_end`
    /// is a whole number of output intervals every interval gets the same
    /// number of steps, so probes fall exactly on the cadence.
    pub fn steps(&self) -> (usize, f64) {
        if self.t_end == 0.0 {
            return (0, self.dt);
        }
        let per = |span: f64| (span / self.dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let n = match self.intervals() {
            Some(k) => k * per(self.output_every),
            None => per(self.t_end),
        };
        (n, self.t_end / n as f64)
    }

    fn intervals(&self) -> Option<usize> {
        if self.output_every <= 0.0 {
            return None;
        }
        let k = self.t_end / self.output_every;
        (k.round() >= 1.0 && (k - k.round()).abs() <= 1e-9 * k.max(1.0)).then(|| k.round() as usize)
    }

    /// Steps between probes; `usize::MAX` when only the end points are probed.
    pub fn probe_stride(&self) -> usize {
        let (n, dt) = self.steps();
        match self.intervals() {
            Some(k) => n / k,
            None if self.output_every > 0.0 => ((self.output_every / dt).round() as usize).max(1),
            None => usize::MAX,
        }
    }
}

/// Summary of a run: the final field and the extremes seen along the way.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub field: ScalarField,
    pub steps: usize,
    pub dt: f64,
    pub min: f64,
    pub max: f64,
    pub probe_times: Vec<f64>,
}

/// Approximate steady state reached by long-time integration.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub field: ScalarField,
    /// Last per-step rate `max |u_{n+1} - u_n| / dt`.
    pub residual: f64,
    pub converged: bool,
}

/// Precomputed stencil for a grid and model set.
pub struct Stepper<'a> {
    grid: &'a MaskedGrid,
    models: &'a Models,
    cfg: SimConfig,
    /// Face conductances divided by `h^2`, zero on closed faces.
    cond: Vec<[f64; 4]>,
    /// Upwind weights `max(q,0)/h`, `max(-q,0)/h` per axis, zero toward closed faces.
    upwind: Vec<[f64; 4]>,
    rho: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(grid: &'a MaskedGrid, models: &'a Models, cfg: SimConfig) -> Result<Self, SolverError> {
        cfg.validate(grid, models)?;
        let h = grid.spacing();
        let n = grid.len();
        let mut cond = vec![[0.0; 4]; n];
        let mut upwind = vec![[0.0; 4]; n];
        let mut rho = vec![0.0; n];
        for c in 0..n {
            let x = grid.center(c);
            let nb = grid.neighbors(c);
            for (slot, &k) in nb.iter().enumerate() {
                if k == CLOSED {
                    continue;
                }
                let y = grid.center(k as usize);
                let mid = [(x[0] + y[0]) / 2.0, (x[1] + y[1]) / 2.0];
                let a = if slot < 2 { models.diffusion.a1(mid) } else { models.diffusion.a2(mid) };
                cond[c][slot] = a / (h * h);
            }
            let q = models.advection.eval(x);
            // q1 > 0 looks west, q1 < 0 looks east; same for q2 with south/north.
            if nb[1] != CLOSED {
                upwind[c][1] = q[0].max(0.0) / h;
            }
            if nb[0] != CLOSED {
                upwind[c][0] = (-q[0]).max(0.0) / h;
            }
            if nb[3] != CLOSED {
                upwind[c][3] = q[1].max(0.0) / h;
            }
            if nb[2] != CLOSED {
                upwind[c][2] = (-q[1]).max(0.0) / h;
            }
            rho[c] = models.reaction.rho(x);
        }
        Ok(Self { grid, models, cfg, cond, upwind, rho })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &MaskedGrid {
        self.grid
    }

    fn reaction(&self, c: usize, u: f64) -> f64 {
        self.rho[c] * self.models.reaction.shape(u)
    }

    /// Advances `u` by one step of size `dt`.
    pub fn step_with(&self, u: &ScalarField, dt: f64) -> Result<ScalarField, SolverError> {
        let nb = self.grid.neighbor_table();
        let old = &u.values;
        let at = |k: u32| old[k as usize];
        let explicit = self.cfg.scheme == Scheme::Explicit;
        let star: Vec<f64> = (0..old.len())
            .into_par_iter()
            .map(|c| {
                let uc = old[c];
                let mut rate = self.reaction(c, uc);
                for slot in 0..4 {
                    if nb[c][slot] == CLOSED {
                        continue;
                    }
                    let d = at(nb[c][slot]) - uc;
                    rate += self.upwind[c][slot] * d;
                    if explicit {
                        rate += self.cond[c][slot] * d;
                    }
                }
                uc + dt * rate
            })
            .collect();
        let values = if explicit { star } else { self.implicit_diffusion(&star, dt, u.t)? };
        if let Some(cell) = values.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::BlowUp { cell, t: u.t + dt });
        }
        Ok(ScalarField { t: u.t + dt, values })
    }

    pub fn step(&self, u: &ScalarField) -> Result<ScalarField, SolverError> {
        self.step_with(u, self.cfg.dt)
    }

    fn apply(&self, x: &[f64], dt: f64, out: &mut [f64]) {
        let nb = self.grid.neighbor_table();
        out.par_iter_mut().enumerate().for_each(|(c, o)| {
            let mut acc = x[c];
            for slot in 0..4 {
                let k = nb[c][slot];
                if k != CLOSED {
                    acc -= dt * self.cond[c][slot] * (x[k as usize] - x[c]);
                }
            }
            *o = acc;
        });
    }

    /// Solves `(I - dt D) x = b` by Jacobi-preconditioned conjugate gradients.
    fn implicit_diffusion(&self, b: &[f64], dt: f64, t: f64) -> Result<Vec<f64>, SolverError> {
        let n = b.len();
        let diag: Vec<f64> = self.cond.iter().map(|k| 1.0 + dt * k.iter().sum::<f64>()).collect();
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = self.cfg.lin_tol * scale;
        let mut x = b.to_vec();
        let mut ax = vec![0.0; n];
        self.apply(&x, dt, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let mut res = norm(&r);
        if res <= tol {
            return Ok(x);
        }
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz = det_dot(&r, &z);
        let mut ap = vec![0.0; n];
        for _ in 0..1000 {
            self.apply(&p, dt, &mut ap);
            let alpha = rz / det_dot(&p, &ap);
            x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
            r.par_iter_mut().zip(&ap).for_each(|(r, a)| *r -= alpha * a);
            res = norm(&r);
            if res <= tol {
                return Ok(x);
            }
            z.par_iter_mut().zip(&r).zip(&diag).for_each(|((z, r), d)| *z = r / d);
            let rz_new = det_dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        }
        Err(SolverError::LinearSolve { iterations: 1000, residual: res, t })
    }

    /// Integrates from `u0` to `u0.t + t_end`, calling `probe` at the start,
    /// at each multiple of `output_every` and at the end.
    pub fn run<P>(&self, u0: &ScalarField, mut probe: P) -> Result<RunSummary, SolverError>
    where
        P: FnMut(&ScalarField),
    {
        let (n, dt) = self.cfg.steps();
        let every = self.cfg.probe_stride();
        let t0 = u0.t;
        let mut u = u0.clone();
        let (mut lo, mut hi) = (u.min(), u.max());
        let mut probe_times = vec![u.t];
        probe(&u);
        for k in 1..=n {
            u = self.step_with(&u, dt)?;
            u.t = t0 + k as f64 * dt;
            lo = lo.min(u.min());
            hi = hi.max(u.max());
            if k % every == 0 || k == n {
                probe_times.push(u.t);
                probe(&u);
            }
        }
        Ok(RunSummary { field: u, steps: n, dt, min: lo, max: hi, probe_times })
    }

    /// Integrates until the per-step rate drops below `tol_ss` or `t_end` passes.
    pub fn steady_state(&self, u0: &ScalarField) -> Result<SteadyState, SolverError> {
        let (n, dt) = self.cfg.steps();
        let t0 = u0.t;
        let mut u = u0.clone();
        let mut residual = f64::INFINITY;
        for k in 1..=n {
            let next = self.step_with(&u, dt)?;
            residual = next.sup_distance(&u) / dt;
            u = next;
            u.t = t0 + k as f64 * dt;
            if residual <= self.cfg.tol_ss {
                return Ok(SteadyState { field: u, residual, converged: true });
            }
        }
        Ok(SteadyState { field: u, residual, converged: false })
    }
}
