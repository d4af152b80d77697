//! Planar traveling waves `c phi' + phi'' + f(phi) = 0`, `phi(-inf) = 1`,
//! `phi(+inf) = 0`, and the front analytics derived from a profile.

use std::fmt::Write as _;

use thiserror::Error;

use crate::coefficients::{lipschitz_bound, Nonlinearity};
use crate::numerics::{bisect, linear_fit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error("reaction must be x-independent for a planar profile")]
    NotHomogeneous,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("no speed bracket in [{0}, {1}]: shooting does not change type")]
    Bracket(f64, f64),
    #[error("profile polish did not converge (residual {0:e})")]
    Convergence(f64),
    #[error("polished profile is not strictly decreasing at node {0}")]
    NonMonotone(usize),
    #[error("speed is zero; the time derivative of the front vanishes")]
    DegenerateSpeed,
    #[error("tail fit poor (r2 = {0}); enlarge the window")]
    TailResolution(f64),
}

/// A decreasing front profile with its speed.
pub trait FrontProfile: Send + Sync {
    fn speed(&self) -> f64;
    fn phi(&self, xi: f64) -> f64;
    fn dphi(&self, xi: f64) -> f64;
    fn d2phi(&self, xi: f64) -> f64;
    /// Reaction the profile belongs to.
    fn reaction(&self, u: f64) -> f64;
}

/// Exact profile of the unmodulated cubic with unit diffusion:
/// `phi = 1 / (1 + exp(xi / sqrt 2))`, `c = (1 - 2 theta) / sqrt 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormCubic {
    pub theta: f64,
}

impl ClosedFormCubic {
    pub fn new(theta: f64) -> Self {
        Self { theta }
    }

    /// `1 - phi`, accurate in the left tail.
    pub fn one_minus_phi(&self, xi: f64) -> f64 {
        1.0 / (1.0 + (-xi * std::f64::consts::FRAC_1_SQRT_2).exp())
    }
}

impl FrontProfile for ClosedFormCubic {
    fn speed(&self) -> f64 {
        (1.0 - 2.0 * self.theta) * std::f64::consts::FRAC_1_SQRT_2
    }
    fn phi(&self, xi: f64) -> f64 {
        1.0 / (1.0 + (xi * std::f64::consts::FRAC_1_SQRT_2).exp())
    }
    fn dphi(&self, xi: f64) -> f64 {
        -self.phi(xi) * self.one_minus_phi(xi) * std::f64::consts::FRAC_1_SQRT_2
    }
    fn d2phi(&self, xi: f64) -> f64 {
        let p = self.phi(xi);
        -self.dphi(xi) * (self.one_minus_phi(xi) - p) * std::f64::consts::FRAC_1_SQRT_2
    }
    fn reaction(&self, u: f64) -> f64 {
        u * (1.0 - u) * (u - self.theta)
    }
}

/// Numerically computed profile on `[-X, X]` with exponential tails outside.
#[derive(Debug, Clone)]
pub struct WaveProfile {
    nl: Nonlinearity,
    speed: f64,
    x0: f64,
    h: f64,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    rate_minus: f64,
    rate_plus: f64,
    residual: f64,
}

/// Linearized decay rates `(r_minus, r_plus)` of `1 - phi` at `-inf` and of `phi` at `+inf`.
pub fn linear_rates(nl: &Nonlinearity, c: f64) -> (f64, f64) {
    let rho = nl.modulation().as_const().unwrap_or(1.0);
    let d1 = rho * nl.shape_du(1.0);
    let d0 = rho * nl.shape_du(0.0);
    ((-c + (c * c - 4.0 * d1).sqrt()) / 2.0, (c + (c * c - 4.0 * d0).sqrt()) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shot {
    Overshoot,
    Undershoot,
    Undecided,
}

const SHOT_START: f64 = 1e-8;
const SHOT_STEP: f64 = 0.01;

fn shoot(nl: &Nonlinearity, c: f64, keep: Option<&mut Vec<(f64, f64)>>) -> Shot {
    let f = |u: f64| nl.eval_homogeneous(u);
    let (rm, _) = linear_rates(nl, c);
    let rhs = |p: f64, q: f64| (q, -c * q - f(p));
    let mut p = 1.0 - SHOT_START;
    let mut q = -rm * SHOT_START;
    let mut xi = 0.0;
    let mut keep = keep;
    let max_len = 2000.0;
    while xi < max_len {
        if let Some(k) = keep.as_deref_mut() {
            k.push((xi, p));
        }
        let hs = SHOT_STEP;
        let (k1p, k1q) = rhs(p, q);
        let (k2p, k2q) = rhs(p + 0.5 * hs * k1p, q + 0.5 * hs * k1q);
        let (k3p, k3q) = rhs(p + 0.5 * hs * k2p, q + 0.5 * hs * k2q);
        let (k4p, k4q) = rhs(p + hs * k3p, q + hs * k3q);
        p += hs / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        q += hs / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
        xi += hs;
        if p < 0.0 {
            return Shot::Overshoot;
        }
        if q > 0.0 {
            return Shot::Undershoot;
        }
    }
    // Heavy damping settles into the middle zero without turning: an undershoot.
    if p > 1e-3 {
        Shot::Undershoot
    } else {
        Shot::Undecided
    }
}

/// Speed by bisection on the shooting map.
fn bisect_speed(nl: &Nonlinearity) -> Result<f64, WaveError> {
    let bound = 2.0 * lipschitz_bound(nl).sqrt();
    let (mut lo, mut hi) = (-bound, bound);
    if shoot(nl, lo, None) != Shot::Overshoot || shoot(nl, hi, None) != Shot::Undershoot {
        return Err(WaveError::Bracket(lo, hi));
    }
    for _ in 0..200 {
        if hi - lo < 1e-14 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match shoot(nl, mid, None) {
            Shot::Overshoot => lo = mid,
            Shot::Undershoot => hi = mid,
            Shot::Undecided => return Ok(mid),
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solves for the profile on `[-half_window, half_window]` with node spacing `h`,
/// normalized by `phi(0) = 1/2`.
pub fn solve_profile(nl: &Nonlinearity, half_window: f64, h: f64) -> Result<WaveProfile, WaveError> {
    solve_profile_with_phase(nl, half_window, h, 0.0)
}

/// Solves with the window chosen as 20 decay lengths and `h = 0.05`.
pub fn solve_profile_auto(nl: &Nonlinearity) -> Result<WaveProfile, WaveError> {
    if !nl.is_homogeneous() {
        return Err(WaveError::NotHomogeneous);
    }
    let c = bisect_speed(nl)?;
    let (rm, rp) = linear_rates(nl, c);
    let x = (20.0 / rm.min(rp) / 0.05).ceil() * 0.05;
    solve_profile_with_phase(nl, x, 0.05, 0.0)
}

/// As [`solve_profile`] with the phase condition `phi(xi0) = 1/2`.
pub fn solve_profile_with_phase(
    nl: &Nonlinearity,
    half_window: f64,
    h: f64,
    xi0: f64,
) -> Result<WaveProfile, WaveError> {
    if !nl.is_homogeneous() {
        return Err(WaveError::NotHomogeneous);
    }
    if !(h > 0.0 && h <= 0.05) {
        return Err(WaveError::Argument(format!("step {h} must lie in (0, 0.05]")));
    }
    let c0 = bisect_speed(nl)?;
    let (rm0, rp0) = linear_rates(nl, c0);
    let need = 20.0 / rm0.min(rp0);
    if half_window < need * (1.0 - 1e-9) {
        return Err(WaveError::Argument(format!(
            "half window {half_window} below 20 decay lengths ({need:.3})"
        )));
    }
    if xi0.abs() > half_window / 4.0 {
        return Err(WaveError::Argument(format!("phase point {xi0} too close to the window edge")));
    }

    let n = (2.0 * half_window / h).round() as usize;
    let x0 = -half_window;
    let xi = |j: usize| x0 + j as f64 * h;

    // Initial guess from the shooting trajectory, shifted to the phase point.
    let mut traj = Vec::new();
    shoot(nl, c0, Some(&mut traj));
    let cut = traj.iter().position(|&(_, p)| p < 1e-7).unwrap_or(traj.len() - 1).max(2);
    traj.truncate(cut);
    let half_at = traj
        .windows(2)
        .find(|w| w[0].1 >= 0.5 && w[1].1 < 0.5)
        .map(|w| w[0].0 + (w[0].1 - 0.5) / (w[0].1 - w[1].1) * (w[1].0 - w[0].0))
        .ok_or(WaveError::Convergence(f64::NAN))?;
    let (t_first, t_last) = (traj[0], traj[traj.len() - 1]);
    let mut phi: Vec<f64> = (0..=n)
        .map(|j| {
            let s = xi(j) - xi0 + half_at;
            if s <= t_first.0 {
                1.0 - SHOT_START * (rm0 * (s - t_first.0)).exp()
            } else if s >= t_last.0 {
                t_last.1 * (-rp0 * (s - t_last.0)).exp()
            } else {
                let k = ((s - t_first.0) / SHOT_STEP) as usize;
                let k = k.min(traj.len() - 2);
                let (a, b) = (traj[k], traj[k + 1]);
                a.1 + (b.1 - a.1) * (s - a.0) / (b.0 - a.0)
            }
        })
        .collect();
    let mut c = c0;

    let kp = (((xi0 - x0) / h).floor() as usize).min(n - 1);
    let wp = (xi0 - xi(kp)) / h;
    let f = |u: f64| nl.eval_homogeneous(u);
    let rho = nl.modulation().as_const().unwrap_or(1.0);
    let fu = |u: f64| rho * nl.shape_du(u);

    let mut residual = f64::INFINITY;
    for _ in 0..50 {
        let (rm, rp) = linear_rates(nl, c);
        let em = (-rm * h).exp();
        let ep = (-rp * h).exp();
        let mut rhs = vec![0.0; n + 1];
        let mut sub = vec![0.0; n + 1];
        let mut diag = vec![0.0; n + 1];
        let mut sup = vec![0.0; n + 1];
        let mut dc = vec![0.0; n + 1];
        rhs[0] = phi[0] - 1.0 + (1.0 - phi[1]) * em;
        diag[0] = 1.0;
        sup[0] = -em;
        rhs[n] = phi[n] - phi[n - 1] * ep;
        diag[n] = 1.0;
        sub[n] = -ep;
        let ih2 = 1.0 / (h * h);
        let i2h = 0.5 / h;
        let mut interior = 0.0f64;
        for j in 1..n {
            let d1 = (phi[j + 1] - phi[j - 1]) * i2h;
            let d2 = (phi[j + 1] - 2.0 * phi[j] + phi[j - 1]) * ih2;
            rhs[j] = c * d1 + d2 + f(phi[j]);
            interior = interior.max(rhs[j].abs());
            sub[j] = ih2 - c * i2h;
            diag[j] = -2.0 * ih2 + fu(phi[j]);
            sup[j] = ih2 + c * i2h;
            dc[j] = d1;
        }
        let phase = (1.0 - wp) * phi[kp] + wp * phi[kp + 1] - 0.5;
        residual = interior;
        let total = interior.max(rhs[0].abs()).max(rhs[n].abs()).max(phase.abs());
        if total < 1e-13 {
            break;
        }
        let y = thomas(&sub, &diag, &sup, &rhs.iter().map(|v| -v).collect::<Vec<_>>());
        let z = thomas(&sub, &diag, &sup, &dc);
        let ya = (1.0 - wp) * y[kp] + wp * y[kp + 1];
        let za = (1.0 - wp) * z[kp] + wp * z[kp + 1];
        let delta_c = (ya + phase) / za;
        for j in 0..=n {
            phi[j] += y[j] - delta_c * z[j];
        }
        c += delta_c;
        if !c.is_finite() {
            return Err(WaveError::Convergence(f64::NAN));
        }
    }
    if !(residual < 1e-6) {
        return Err(WaveError::Convergence(residual));
    }
    for j in 0..n {
        // Far in the left tail 1 - phi falls below the resolution of a double.
        let saturated = 1.0 - phi[j] < 1e-12 && (phi[j + 1] - phi[j]).abs() < 1e-14;
        if phi[j + 1] >= phi[j] && !saturated {
            return Err(WaveError::NonMonotone(j));
        }
    }
    let (rm, rp) = linear_rates(nl, c);
    let mut dphi = vec![0.0; n + 1];
    dphi[0] = -rm * (1.0 - phi[0]);
    dphi[n] = -rp * phi[n];
    for j in 1..n {
        dphi[j] = (phi[j + 1] - phi[j - 1]) / (2.0 * h);
    }
    Ok(WaveProfile {
        nl: nl.clone(),
        speed: c,
        x0,
        h,
        phi,
        dphi,
        rate_minus: rm,
        rate_plus: rp,
        residual,
    })
}

/// Tridiagonal solve; `sub[0]` and `sup[n-1]` are ignored.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = sup[0] / diag[0];
    dp[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * cp[i - 1];
        cp[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        dp[i] = (rhs[i] - sub[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

impl WaveProfile {
    pub fn half_window(&self) -> f64 {
        -self.x0
    }
    pub fn step(&self) -> f64 {
        self.h
    }
    /// Max interior residual of the discrete wave equation.
    pub fn residual(&self) -> f64 {
        self.residual
    }
    /// Linearized decay rates at the computed speed.
    pub fn linear_rates(&self) -> (f64, f64) {
        (self.rate_minus, self.rate_plus)
    }
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.phi.iter().enumerate().map(|(j, &p)| (self.x0 + j as f64 * self.h, p))
    }
    fn last(&self) -> usize {
        self.phi.len() - 1
    }

    fn locate(&self, xi: f64) -> Option<(usize, f64)> {
        let s = (xi - self.x0) / self.h;
        if s < 0.0 || s > self.last() as f64 {
            return None;
        }
        let k = (s.floor() as usize).min(self.last() - 1);
        Some((k, s - k as f64))
    }

    /// Least-squares tail rates fitted on the sampled profile.
    pub fn tail_rates(&self) -> Result<(f64, f64), WaveError> {
        let mut lx = Vec::new();
        let mut ly = Vec::new();
        let mut rx = Vec::new();
        let mut ry = Vec::new();
        for (x, p) in self.nodes() {
            let q = 1.0 - p;
            if q > 1e-9 && q < 1e-3 {
                lx.push(x);
                ly.push(q.ln());
            }
            if p > 1e-9 && p < 1e-3 {
                rx.push(x);
                ry.push(p.ln());
            }
        }
        if lx.len() < 3 || rx.len() < 3 {
            return Err(WaveError::TailResolution(0.0));
        }
        let (sl, _, r2l) = linear_fit(&lx, &ly);
        let (sr, _, r2r) = linear_fit(&rx, &ry);
        let r2 = r2l.min(r2r);
        if r2 < 0.999 {
            return Err(WaveError::TailResolution(r2));
        }
        Ok((sl, -sr))
    }

    /// Two-column text export with a header.
    pub fn export(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# planar front profile");
        let _ = writeln!(s, "# speed {:?}", self.speed);
        let _ = writeln!(s, "# rate_minus {:?}", self.rate_minus);
        let _ = writeln!(s, "# rate_plus {:?}", self.rate_plus);
        let _ = writeln!(s, "# residual {:e}", self.residual);
        let _ = writeln!(s, "xi phi");
        for (x, p) in self.nodes() {
            let _ = writeln!(s, "{x:?} {p:?}");
        }
        s
    }
}

impl FrontProfile for WaveProfile {
    fn speed(&self) -> f64 {
        self.speed
    }

    fn phi(&self, xi: f64) -> f64 {
        match self.locate(xi) {
            Some((k, t)) => {
                let h = self.h;
                let (p0, p1) = (self.phi[k], self.phi[k + 1]);
                let (m0, m1) = (self.dphi[k] * h, self.dphi[k + 1] * h);
                let t2 = t * t;
                let t3 = t2 * t;
                (2.0 * t3 - 3.0 * t2 + 1.0) * p0
                    + (t3 - 2.0 * t2 + t) * m0
                    + (-2.0 * t3 + 3.0 * t2) * p1
                    + (t3 - t2) * m1
            }
            None if xi < self.x0 => 1.0 - (1.0 - self.phi[0]) * (self.rate_minus * (xi - self.x0)).exp(),
            None => self.phi[self.last()] * (-self.rate_plus * (xi + self.x0)).exp(),
        }
    }

    fn dphi(&self, xi: f64) -> f64 {
        match self.locate(xi) {
            Some((k, t)) => {
                let h = self.h;
                let (p0, p1) = (self.phi[k], self.phi[k + 1]);
                let (m0, m1) = (self.dphi[k] * h, self.dphi[k + 1] * h);
                let t2 = t * t;
                ((6.0 * t2 - 6.0 * t) * p0
                    + (3.0 * t2 - 4.0 * t + 1.0) * m0
                    + (-6.0 * t2 + 6.0 * t) * p1
                    + (3.0 * t2 - 2.0 * t) * m1)
                    / h
            }
            None if xi < self.x0 => {
                -self.rate_minus * (1.0 - self.phi[0]) * (self.rate_minus * (xi - self.x0)).exp()
            }
            None => -self.rate_plus * self.phi[self.last()] * (-self.rate_plus * (xi + self.x0)).exp(),
        }
    }

    fn d2phi(&self, xi: f64) -> f64 {
        -self.speed * self.dphi(xi) - self.reaction(self.phi(xi))
    }

    fn reaction(&self, u: f64) -> f64 {
        self.nl.eval_homogeneous(u)
    }
}

/// Inverse of a decreasing profile: `xi` with `phi(xi) = level`.
pub fn profile_inverse(p: &dyn FrontProfile, level: f64) -> f64 {
    let (mut a, mut b) = (-1.0, 1.0);
    while p.phi(a) < level {
        a *= 2.0;
    }
    while p.phi(b) > level {
        b *= 2.0;
    }
    bisect(|x| p.phi(x) - level, a, b, 1e-13)
}

/// Smallest `M >= 0` with `phi(-M) >= 1 - eps` and `phi(M) <= eps`.
pub fn profile_width(p: &dyn FrontProfile, eps: f64) -> Result<f64, WaveError> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(WaveError::Argument(format!("level {eps} outside (0, 1/2]")));
    }
    let left = -profile_inverse(p, 1.0 - eps);
    let right = profile_inverse(p, eps);
    Ok(left.max(right).max(0.0))
}

/// `|c| * min |phi'|` over `[-M, M]`.
pub fn min_slope(p: &dyn FrontProfile, m: f64) -> Result<f64, WaveError> {
    if p.speed().abs() < 1e-9 {
        return Err(WaveError::DegenerateSpeed);
    }
    if !(m >= 0.0) {
        return Err(WaveError::Argument(format!("width {m} must be nonnegative")));
    }
    let n = 2000;
    let min = (0..=n)
        .map(|j| p.dphi(-m + 2.0 * m * j as f64 / n as f64).abs())
        .fold(f64::INFINITY, f64::min);
    Ok(p.speed().abs() * min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::integral_f;

    fn cubic(t: f64) -> Nonlinearity {
        Nonlinearity::cubic(t).unwrap()
    }

    #[test]
    fn closed_form_solves_the_wave_equation() {
        for t in [0.2, 0.3, 0.5, 0.7] {
            let p = ClosedFormCubic::new(t);
            for j in -40..=40 {
                let x = j as f64 * 0.37;
                let r = p.speed() * p.dphi(x) + p.d2phi(x) + p.reaction(p.phi(x));
                assert!(r.abs() < 1e-15, "theta {t} xi {x}: {r}");
            }
        }
    }

    #[test]
    fn speeds_match_closed_form() {
        for t in [0.2, 0.3, 0.4, 0.6, 0.7] {
            let p = solve_profile_auto(&cubic(t)).unwrap();
            let want = (1.0 - 2.0 * t) / 2f64.sqrt();
            assert!((p.speed() - want).abs() < 1e-3, "theta {t}: {} vs {want}", p.speed());
            assert!(p.residual() <= 1e-6);
            let sign = integral_f(&cubic(t)).unwrap().signum();
            assert_eq!(p.speed().signum(), sign);
        }
        let p = solve_profile_auto(&cubic(0.5)).unwrap();
        assert!(p.speed().abs() <= 1e-6);
        let p = solve_profile_auto(&cubic(0.3)).unwrap();
        assert!((p.speed() - 0.282_842_7).abs() < 1e-3);
    }

    #[test]
    fn profile_invariants() {
        let p = solve_profile_auto(&cubic(0.3)).unwrap();
        let nodes: Vec<_> = p.nodes().collect();
        assert!(nodes.windows(2).all(|w| w[1].1 < w[0].1));
        assert!(nodes[0].1 >= 1.0 - 1e-6);
        assert!(nodes.last().unwrap().1 <= 1e-6);
        assert!((p.phi(0.0) - 0.5).abs() < 1e-12);
        let exact = ClosedFormCubic::new(0.3);
        for j in -200..=200 {
            let x = j as f64 * 0.1;
            assert!((p.phi(x) - exact.phi(x)).abs() < 1e-4);
        }
    }

    #[test]
    fn widths() {
        let exact = ClosedFormCubic::new(0.3);
        let m = profile_width(&exact, 0.01).unwrap();
        assert!((m - 2f64.sqrt() * 99f64.ln()).abs() < 1e-9);
        let p = solve_profile_auto(&cubic(0.3)).unwrap();
        let m = profile_width(&p, 0.01).unwrap();
        assert!((m - 6.4987).abs() < 0.01);
        assert!(profile_width(&p, 0.5).unwrap() < 1e-9);
        let (a, b, c) = (
            profile_width(&p, 0.001).unwrap(),
            profile_width(&p, 0.01).unwrap(),
            profile_width(&p, 0.1).unwrap(),
        );
        assert!(a > b && b > c);
        assert!(profile_width(&p, 0.0).is_err());
        assert!(profile_width(&p, 0.7).is_err());
    }

    #[test]
    fn slopes() {
        let p = solve_profile_auto(&cubic(0.3)).unwrap();
        let m = profile_width(&p, 0.05).unwrap();
        let k = min_slope(&p, m).unwrap();
        let c = (1.0 - 2.0 * 0.3) / 2f64.sqrt();
        let want = c * 0.05 * 0.95 / 2f64.sqrt();
        assert!((k - want).abs() / want < 0.05, "{k} vs {want}");
        assert!((want - 0.0095).abs() < 1e-4);
        assert!(k <= c * 0.25 / 2f64.sqrt() + 1e-12);
        let k0 = min_slope(&p, 1e-9).unwrap();
        assert!((k0 - p.speed() * p.dphi(0.0).abs()).abs() < 1e-9);
        let still = solve_profile_auto(&cubic(0.5)).unwrap();
        assert!(matches!(min_slope(&still, 1.0), Err(WaveError::DegenerateSpeed)));
    }

    #[test]
    fn tails() {
        let p = solve_profile_auto(&cubic(0.3)).unwrap();
        let (rm, rp) = p.tail_rates().unwrap();
        let want = std::f64::consts::FRAC_1_SQRT_2;
        assert!((rm - want).abs() / want < 0.01, "{rm}");
        assert!((rp - want).abs() / want < 0.01, "{rp}");
        for t in [0.2, 0.6] {
            let (a, b) = solve_profile_auto(&cubic(t)).unwrap().tail_rates().unwrap();
            assert!(a > 0.0 && b > 0.0);
        }
    }

    #[test]
    fn grid_convergence_of_speed() {
        let nl = cubic(0.3);
        let p1 = solve_profile(&nl, 30.0, 0.05).unwrap();
        let p2 = solve_profile(&nl, 60.0, 0.025).unwrap();
        assert!((p1.speed() - p2.speed()).abs() < 1e-4);
    }

    #[test]
    fn translation_gauge() {
        let nl = cubic(0.3);
        let p1 = solve_profile(&nl, 30.0, 0.05).unwrap();
        let p2 = solve_profile_with_phase(&nl, 30.0, 0.05, 2.0).unwrap();
        let mut worst = 0.0f64;
        for j in -400..=400 {
            let x = j as f64 * 0.05;
            worst = worst.max((p2.phi(x + 2.0) - p1.phi(x)).abs());
        }
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn reflection_flips_speed() {
        for t in [0.2, 0.35] {
            let a = solve_profile_auto(&cubic(t)).unwrap();
            let b = solve_profile_auto(&cubic(t).reflected()).unwrap();
            assert!((a.speed() + b.speed()).abs() < 1e-8);
        }
    }

    #[test]
    fn window_too_small_rejected() {
        assert!(matches!(solve_profile(&cubic(0.3), 5.0, 0.05), Err(WaveError::Argument(_))));
        assert!(matches!(solve_profile(&cubic(0.3), 30.0, 0.1), Err(WaveError::Argument(_))));
    }

    #[test]
    fn export_has_header_and_columns() {
        let p = solve_profile_auto(&cubic(0.3)).unwrap();
        let text = p.export();
        assert!(text.lines().any(|l| l.starts_with("# speed ")));
        let rows = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(rows, p.nodes().count() + 1);
    }
}
