use super::BoundError;
use crate::coefficients::Models;
use crate::geometry::{ExtendedChannelSpec, WidthProfile};
use crate::numerics::golden_min;
use rayon::prelude::*;

/// Pass threshold for the normalized weight margins.
pub const WEIGHT_TOL: f64 = 1e-6;

/// Sampling controls for the non-straight weight construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightOptions {
    pub spacing: f64,
    /// Mollifier radius; zero disables smoothing.
    pub radius: f64,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self { spacing: 0.1, radius: 0.3 }
    }
}

/// Signed distance samples of the channel on an axis-aligned lattice in
/// local coordinates, smoothed and negated.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightLattice {
    s0: f64,
    tau0: f64,
    h: f64,
    ns: usize,
    nt: usize,
    /// Usable index range along the axis (smoothed values defined).
    valid_s: (usize, usize),
    valid_t: (usize, usize),
    /// Smoothed negated distance; NaN outside the valid range.
    shape: Vec<f64>,
    window: (f64, f64),
    sup_abs: f64,
}

impl WeightLattice {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.shape[i * self.nt + j]
    }

    fn s_of(&self, i: usize) -> f64 {
        self.s0 + i as f64 * self.h
    }

    fn tau_of(&self, j: usize) -> f64 {
        self.tau0 + j as f64 * self.h
    }

    /// Bilinear interpolation of the smoothed shape at local `(s, tau)`.
    fn interp(&self, s: f64, tau: f64) -> f64 {
        let clamp = |x: f64, lo: usize, hi: usize, o: f64| -> (usize, f64) {
            let lo_x = o + lo as f64 * self.h;
            let hi_x = o + (hi - 1) as f64 * self.h;
            let x = x.clamp(lo_x, hi_x);
            let k = (((x - o) / self.h).floor() as usize).clamp(lo, hi - 2);
            (k, ((x - o) / self.h - k as f64).clamp(0.0, 1.0))
        };
        let (i, fs) = clamp(s, self.valid_s.0, self.valid_s.1, self.s0);
        let (j, ft) = clamp(tau, self.valid_t.0, self.valid_t.1, self.tau0);
        let v00 = self.at(i, j);
        let v01 = self.at(i, j + 1);
        let v10 = self.at(i + 1, j);
        let v11 = self.at(i + 1, j + 1);
        (1.0 - fs) * ((1.0 - ft) * v00 + ft * v01) + fs * ((1.0 - ft) * v10 + ft * v11)
    }
}

/// Representation of the weight function.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightForm {
    /// `psi` equal to the offset everywhere.
    Constant,
    Sampled(WeightLattice),
}

/// A decay rate `lambda` and positive weight `psi = shape + offset` on an
/// extended channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxWeight {
    pub channel: ExtendedChannelSpec,
    lambda: f64,
    offset: f64,
    radius: f64,
    speed_shift: f64,
    form: WeightForm,
}

/// Margins of the two weight inequalities, each divided by `psi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightCheck {
    pub interior: f64,
    pub boundary: f64,
    pub interior_at: [f64; 2],
    pub boundary_at: [f64; 2],
}

impl WeightCheck {
    /// Most negative margin.
    pub fn violation(&self) -> f64 {
        self.interior.min(self.boundary)
    }

    pub fn worst_at(&self) -> [f64; 2] {
        if self.interior <= self.boundary {
            self.interior_at
        } else {
            self.boundary_at
        }
    }

    pub fn passed(&self) -> bool {
        self.violation() >= -WEIGHT_TOL
    }
}

impl AuxWeight {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn speed_shift(&self) -> f64 {
        self.speed_shift
    }

    pub fn form(&self) -> &WeightForm {
        &self.form
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.form, WeightForm::Constant)
    }

    /// Same weight with a different decay rate; nothing is re-verified.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    /// Adds the `-shift * psi` term of the speed-shifted inequality.
    pub fn with_speed_shift(&self, shift: f64) -> Self {
        Self { speed_shift: shift, ..self.clone() }
    }

    /// `psi` at local coordinates.
    pub fn psi_local(&self, s: f64, tau: f64) -> f64 {
        match &self.form {
            WeightForm::Constant => self.offset,
            WeightForm::Sampled(lat) => self.offset + lat.interp(s, tau),
        }
    }

    /// `psi` at a point of the plane, through the channel's local coordinates.
    pub fn psi(&self, x: [f64; 2]) -> f64 {
        let (s, tau) = self.channel.base.local(x);
        self.psi_local(s, tau)
    }

    pub fn sup_psi(&self) -> f64 {
        match &self.form {
            WeightForm::Constant => self.offset,
            WeightForm::Sampled(lat) => self.offset + lat.sup_abs,
        }
    }

    pub fn inf_psi(&self) -> f64 {
        match &self.form {
            WeightForm::Constant => self.offset,
            WeightForm::Sampled(lat) => self.offset - lat.sup_abs,
        }
    }

    /// Weight on a sampled shape with offset `1/lambda - sup|shape|`, no search.
    pub fn sampled(ch: &ExtendedChannelSpec, lambda: f64, opts: WeightOptions) -> Result<Self, BoundError> {
        let lat = build_lattice(ch, opts)?;
        Ok(Self::from_lattice(ch, lambda, opts.radius, lat))
    }

    fn from_lattice(ch: &ExtendedChannelSpec, lambda: f64, radius: f64, lat: WeightLattice) -> Self {
        Self {
            channel: ch.clone(),
            lambda,
            offset: 1.0 / lambda - lat.sup_abs,
            radius,
            speed_shift: 0.0,
            form: WeightForm::Sampled(lat),
        }
    }
}

fn window(ch: &ExtendedChannelSpec) -> (f64, f64) {
    let (lo, hi) = match &ch.base.width {
        WidthProfile::Constant(_) => (-5.0, 5.0),
        WidthProfile::Tanh { ell, .. } => (-(8.0 * ell + 10.0), 8.0 * ell + 10.0),
        WidthProfile::Table { s, .. } => (s[0] - 10.0, s[s.len() - 1] + 10.0),
    };
    (lo.min(-10.0), hi.max(10.0))
}

/// Signed distance from local `(s, tau)` to the wall `tau = w(s)/2`, positive below it.
fn wall_distance(ch: &ExtendedChannelSpec, s: f64, tau: f64) -> f64 {
    let g = |x: f64| ch.width(x) / 2.0;
    let vertical = g(s) - tau;
    let reach = vertical.abs() + 1e-12;
    let dist2 = |x: f64| (x - s).powi(2) + (tau - g(x)).powi(2);
    let n = 40;
    let step = 2.0 * reach / n as f64;
    let best = (0..=n)
        .map(|k| s - reach + k as f64 * step)
        .map(|x| (x, dist2(x)))
        .fold((s, dist2(s)), |a, b| if b.1 < a.1 { b } else { a });
    let (_, refined) = golden_min(dist2, best.0 - step, best.0 + step, 1e-10);
    refined.min(best.1).sqrt().copysign(vertical)
}

fn build_lattice(ch: &ExtendedChannelSpec, opts: WeightOptions) -> Result<WeightLattice, BoundError> {
    let h = opts.spacing;
    if !(h > 0.0 && opts.radius >= 0.0) {
        return Err(BoundError::Argument("weight spacing must be positive and radius nonnegative".into()));
    }
    let (wlo, whi) = window(ch);
    let m = (opts.radius / h).ceil() as usize + 2;
    let wmax = (window_sup_width(ch, wlo, whi)).max(ch.width(wlo)).max(ch.width(whi));
    let half = wmax / 2.0 + opts.radius + 3.0 * h;
    let nt = 2 * (half / h).ceil() as usize + 1;
    let tau0 = -((nt - 1) as f64) * h / 2.0;
    let s0 = wlo - m as f64 * h;
    let ns = ((whi - wlo) / h).ceil() as usize + 1 + 2 * m;
    let dist: Vec<f64> = (0..ns * nt)
        .into_par_iter()
        .map(|k| {
            let (s, tau) = (s0 + (k / nt) as f64 * h, tau0 + (k % nt) as f64 * h);
            wall_distance(ch, s, tau).min(wall_distance(ch, s, -tau))
        })
        .collect();
    let r = (opts.radius / h).floor() as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|a| (-r..=r).map(move |b| (a, b)))
        .filter(|&(a, b)| ((a * a + b * b) as f64).sqrt() * h <= opts.radius + 1e-12)
        .collect();
    let valid_s = (m, ns - m);
    let valid_t = (m, nt - m);
    let shape: Vec<f64> = (0..ns * nt)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / nt, k % nt);
            if i < valid_s.0 || i >= valid_s.1 || j < valid_t.0 || j >= valid_t.1 {
                return f64::NAN;
            }
            let sum: f64 = offsets
                .iter()
                .map(|&(a, b)| dist[(i as isize + a) as usize * nt + (j as isize + b) as usize])
                .sum();
            -sum / offsets.len() as f64
        })
        .collect();
    let mut lat = WeightLattice {
        s0,
        tau0,
        h,
        ns,
        nt,
        valid_s,
        valid_t,
        shape,
        window: (wlo, whi),
        sup_abs: 0.0,
    };
    lat.sup_abs = interior_nodes(ch, &lat).map(|(i, j)| lat.at(i, j).abs()).fold(0.0, f64::max);
    Ok(lat)
}

fn window_sup_width(ch: &ExtendedChannelSpec, lo: f64, hi: f64) -> f64 {
    let n = 2000;
    (0..=n).map(|k| ch.width(lo + (hi - lo) * k as f64 / n as f64)).fold(0.0, f64::max)
}

/// Lattice nodes strictly inside the channel whose neighbours carry values.
fn interior_nodes<'a>(ch: &'a ExtendedChannelSpec, lat: &'a WeightLattice) -> impl Iterator<Item = (usize, usize)> + 'a {
    (lat.valid_s.0 + 1..lat.valid_s.1 - 1).flat_map(move |i| {
        let s = lat.s_of(i);
        let half = ch.width(s) / 2.0;
        (lat.valid_t.0 + 1..lat.valid_t.1 - 1).filter(move |&j| lat.tau_of(j).abs() < half).map(move |j| (i, j))
    })
}

fn isotropic(models: &Models) -> bool {
    let (a1, a2) = models.diffusion.entries();
    a1 == a2
}

/// Margins of the weight inequalities with rate `beta`.
pub fn verify_weight(w: &AuxWeight, beta: f64, models: &Models) -> WeightCheck {
    match &w.form {
        WeightForm::Constant => verify_constant(w, beta, models),
        WeightForm::Sampled(lat) => verify_sampled(w, lat, beta, models),
    }
}

fn worst(items: impl Iterator<Item = (f64, [f64; 2])>) -> (f64, [f64; 2]) {
    items.fold((f64::INFINITY, [f64::NAN; 2]), |a, b| if b.0 < a.0 { b } else { a })
}

fn verify_constant(w: &AuxWeight, beta: f64, models: &Models) -> WeightCheck {
    let ch = &w.channel;
    let e = ch.base.direction;
    let n = ch.base.normal();
    let lam = w.lambda;
    let (lo, hi) = window(ch);
    let a = |x: [f64; 2]| (models.diffusion.a1(x), models.diffusion.a2(x));
    let samples = 200;
    let s_at = |k: usize| lo + (hi - lo) * k as f64 / samples as f64;
    let interior = worst((0..=samples).flat_map(|k| {
        let s = s_at(k);
        let half = ch.width(s) / 2.0;
        (0..=8).map(move |j| {
            let x = ch.base.point(s, -half + 2.0 * half * (j as f64 + 0.5) / 9.0);
            let (a1, a2) = a(x);
            let d = 1e-6;
            let div_ae = e[0] * (models.diffusion.a1([x[0] + d, x[1]]) - models.diffusion.a1([x[0] - d, x[1]])) / (2.0 * d)
                + e[1] * (models.diffusion.a2([x[0], x[1] + d]) - models.diffusion.a2([x[0], x[1] - d])) / (2.0 * d);
            let q = models.advection.eval(x);
            let eae = a1 * e[0] * e[0] + a2 * e[1] * e[1];
            let m = lam * div_ae - lam * (q[0] * e[0] + q[1] * e[1]) - lam * lam * eae - w.speed_shift + beta;
            (m, x)
        })
    }));
    let boundary = worst((0..=samples).flat_map(|k| {
        let s = s_at(k);
        let half = ch.width(s) / 2.0;
        [1.0f64, -1.0].into_iter().map(move |side| {
            let x = ch.base.point(s, side * half);
            let (a1, a2) = a(x);
            let nu = [side * n[0], side * n[1]];
            (lam * (nu[0] * a1 * e[0] + nu[1] * a2 * e[1]), x)
        })
    }));
    WeightCheck { interior: interior.0, boundary: boundary.0, interior_at: interior.1, boundary_at: boundary.1 }
}

fn verify_sampled(w: &AuxWeight, lat: &WeightLattice, beta: f64, models: &Models) -> WeightCheck {
    let ch = &w.channel;
    let h = lat.h;
    let lam = w.lambda;
    let c = w.offset;
    let e = ch.base.direction;
    let nrm = ch.base.normal();
    let a = |s: f64, tau: f64| models.diffusion.a1(ch.base.point(s, tau));
    let nodes: Vec<(usize, usize)> = interior_nodes(ch, lat).collect();
    let interior = nodes
        .par_iter()
        .map(|&(i, j)| {
            let (s, tau) = (lat.s_of(i), lat.tau_of(j));
            let p = c + lat.at(i, j);
            let pe = c + lat.at(i + 1, j);
            let pw = c + lat.at(i - 1, j);
            let pn = c + lat.at(i, j + 1);
            let ps = c + lat.at(i, j - 1);
            let div = (a(s + h / 2.0, tau) * (pe - p) - a(s - h / 2.0, tau) * (p - pw)
                + a(s, tau + h / 2.0) * (pn - p)
                - a(s, tau - h / 2.0) * (p - ps))
                / (h * h);
            let ax = a(s, tau);
            let ds = (pe - pw) / (2.0 * h);
            let dt = (pn - ps) / (2.0 * h);
            let d_ap = (a(s + h, tau) * pe - a(s - h, tau) * pw) / (2.0 * h);
            let x = ch.base.point(s, tau);
            let q = models.advection.eval(x);
            let qs = q[0] * e[0] + q[1] * e[1];
            let qt = q[0] * nrm[0] + q[1] * nrm[1];
            let lhs = -div + lam * (d_ap + ax * ds) + qs * ds + qt * dt - lam * qs * p - lam * lam * ax * p
                - w.speed_shift * p;
            ((lhs + beta * p) / p, x)
        })
        .collect::<Vec<_>>();
    let interior = worst(interior.into_iter());
    let rows: Vec<usize> = (lat.valid_s.0 + 1..lat.valid_s.1 - 1).collect();
    let boundary = rows
        .par_iter()
        .flat_map_iter(|&i| {
            let s = lat.s_of(i);
            let g = ch.width(s) / 2.0;
            let dg = ch.width_derivative(s) / 2.0;
            [1.0f64, -1.0].into_iter().map(move |side| {
                let norm = (dg * dg + 1.0).sqrt();
                let nu = (-dg / norm, side / norm);
                let tau = side * g;
                let psi_at = |k: f64| c + lat.interp(s - k * h * nu.0, tau - k * h * nu.1);
                let p = psi_at(0.0);
                let dnu = (3.0 * p - 4.0 * psi_at(1.0) + psi_at(2.0)) / (2.0 * h);
                let m = a(s, tau) * (lam * p * nu.0 + dnu) / p;
                (m, ch.base.point(s, tau))
            })
        })
        .collect::<Vec<_>>();
    let boundary = worst(boundary.into_iter());
    WeightCheck { interior: interior.0, boundary: boundary.0, interior_at: interior.1, boundary_at: boundary.1 }
}

/// Weight for rate `beta` with default sampling.
pub fn build_weight(ch: &ExtendedChannelSpec, beta: f64, models: &Models) -> Result<AuxWeight, BoundError> {
    build_weight_with(ch, beta, models, WeightOptions::default())
}

/// Constant weight for straight channels where it is feasible, otherwise a
/// search over `lambda = 0.85^k` on the sampled shape.
pub fn build_weight_with(
    ch: &ExtendedChannelSpec,
    beta: f64,
    models: &Models,
    opts: WeightOptions,
) -> Result<AuxWeight, BoundError> {
    if !(beta > 0.0) {
        return Err(BoundError::Argument(format!("rate {beta} must be positive")));
    }
    let beta2 = models.diffusion.beta2();
    let (a1, a2) = models.diffusion.entries();
    let e = ch.base.direction;
    let axis_aligned = e[0] == 0.0 || e[1] == 0.0;
    if ch.is_straight()
        && a1.as_const().is_some()
        && a2.as_const().is_some()
        && models.advection.is_zero()
        && (isotropic(models) || axis_aligned)
    {
        return Ok(AuxWeight {
            channel: ch.clone(),
            lambda: (beta / beta2).sqrt(),
            offset: 1.0,
            radius: 0.0,
            speed_shift: 0.0,
            form: WeightForm::Constant,
        });
    }
    if !isotropic(models) {
        return Err(BoundError::Weight(
            "anisotropic diffusion is supported only on straight axis-aligned channels without advection".into(),
        ));
    }
    let lat = build_lattice(ch, opts)?;
    let mut last: Option<WeightCheck> = None;
    for k in 0..400 {
        let lam = 0.85f64.powi(k);
        if lam < 1e-8 {
            break;
        }
        if lam * lam * beta2 > beta || 1.0 / lam <= 2.0 * lat.sup_abs {
            continue;
        }
        let w = AuxWeight::from_lattice(ch, lam, opts.radius, lat.clone());
        let check = verify_weight(&w, beta, models);
        if check.passed() {
            return Ok(w);
        }
        last = Some(check);
    }
    Err(BoundError::Weight(match last {
        Some(c) => format!(
            "no feasible decay rate; last margin {:.3e} at ({:.3}, {:.3})",
            c.violation(),
            c.worst_at()[0],
            c.worst_at()[1]
        ),
        None => "no admissible decay rate".into(),
    }))
}

impl WeightLattice {
    /// Axial window covered by the samples.
    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ns, self.nt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::derive_stability_constants;
    use crate::geometry::{BranchSpec, Extension};

    fn straight() -> ExtendedChannelSpec {
        ExtendedChannelSpec::new(BranchSpec::at_angle(0.0, WidthProfile::Constant(2.0), 40.0), Extension::Natural)
    }

    fn widening() -> ExtendedChannelSpec {
        let w = WidthProfile::Tanh { w0: 2.0, winf: 3.0, ell: 2.0 };
        ExtendedChannelSpec::new(BranchSpec::at_angle(0.0, w, 40.0), Extension::Natural)
    }

    #[test]
    fn straight_channel_gets_the_constant_pair() {
        let models = Models::cubic(0.3).unwrap();
        let w = build_weight(&straight(), 0.141, &models).unwrap();
        assert!(w.is_constant());
        assert!((w.lambda() - 0.141f64.sqrt()).abs() < 1e-15);
        assert!((w.lambda() - 0.3755).abs() < 1e-4);
        assert_eq!(w.psi([3.0, 0.2]), 1.0);
        let check = verify_weight(&w, 0.141, &models);
        assert!(check.violation() >= -1e-12, "{check:?}");
        assert_eq!(check.boundary, 0.0);
    }

    #[test]
    fn oversized_rate_is_flagged() {
        let models = Models::cubic(0.3).unwrap();
        let w = build_weight(&straight(), 0.141, &models).unwrap();
        let big = w.with_lambda(2.0 * w.lambda());
        let check = verify_weight(&big, 0.141, &models);
        let want = 0.141 - 4.0 * w.lambda().powi(2);
        assert!((check.interior - want).abs() < 1e-12);
        assert!(!check.passed());
    }

    #[test]
    fn straight_channel_sampled_shape_has_unit_normal_slope() {
        let w = AuxWeight::sampled(&straight(), 0.3, WeightOptions::default()).unwrap();
        let WeightForm::Sampled(lat) = w.form() else { panic!() };
        // Plain distance to the nearer wall is 1 on the axis; disc averaging
        // lowers the ridge by the mean of |tau| over the disc, 4r/(3 pi).
        let dip = 4.0 * 0.3 / (3.0 * std::f64::consts::PI);
        assert!(lat.sup_abs <= 1.0 + 1e-12 && lat.sup_abs > 1.0 - dip - 0.02, "{}", lat.sup_abs);
        let inner = w.psi_local(0.0, 0.5);
        let wall = w.psi_local(0.0, 1.0);
        assert!(((inner - wall) / 0.5 + 1.0).abs() < 1e-9);
    }

    #[test]
    fn widening_channel_search_succeeds() {
        let models = Models::cubic(0.3).unwrap();
        let gamma = derive_stability_constants(&models.reaction).unwrap().gamma;
        let w = build_weight(&widening(), gamma, &models).unwrap();
        assert!(!w.is_constant());
        assert!(w.lambda() > 0.0);
        assert!(w.inf_psi() > 0.0 && w.sup_psi() < f64::INFINITY);
        let check = verify_weight(&w, gamma, &models);
        assert!(check.passed(), "{check:?}");
    }

    #[test]
    fn shrinking_the_mollifier_degrades_the_margin() {
        let models = Models::cubic(0.3).unwrap();
        let gamma = derive_stability_constants(&models.reaction).unwrap().gamma;
        let lam = build_weight(&widening(), gamma, &models).unwrap().lambda();
        let checks: Vec<WeightCheck> = [0.3, 0.2, 0.1, 0.0]
            .iter()
            .map(|&r| {
                let w = AuxWeight::sampled(&widening(), lam, WeightOptions { spacing: 0.1, radius: r }).unwrap();
                verify_weight(&w, gamma, &models)
            })
            .collect();
        for pair in checks.windows(2) {
            assert!(pair[1].violation() < pair[0].violation(), "{checks:?}");
            assert!(pair[1].interior < pair[0].interior);
        }
        assert!(checks[0].passed());
        assert!(!checks[3].passed());
        // The wall term stays positive at every radius: the kink sits on the axis.
        assert!(checks.iter().all(|c| c.boundary > 0.0));
    }

    #[test]
    fn larger_rate_allows_larger_decay() {
        let models = Models::cubic(0.3).unwrap();
        let lo = build_weight(&widening(), 0.1, &models).unwrap();
        let hi = build_weight(&widening(), 0.3, &models).unwrap();
        assert!(hi.lambda() >= lo.lambda());
    }

    #[test]
    fn anisotropic_rotated_channel_is_rejected() {
        use crate::coefficients::{DiffusionModel, ScalarExpr};
        let mut models = Models::cubic(0.3).unwrap();
        models.diffusion = DiffusionModel::new(ScalarExpr::Const(1.0), ScalarExpr::Const(2.0)).unwrap();
        let ch = ExtendedChannelSpec::new(
            BranchSpec::at_angle(30.0, WidthProfile::Constant(2.0), 40.0),
            Extension::Natural,
        );
        assert!(matches!(build_weight(&ch, 0.1, &models), Err(BoundError::Weight(_))));
        let axis = ExtendedChannelSpec::new(
            BranchSpec::at_angle(90.0, WidthProfile::Constant(2.0), 40.0),
            Extension::Natural,
        );
        let w = build_weight(&axis, 0.1, &models).unwrap();
        assert!((w.lambda() - (0.1f64 / 2.0).sqrt()).abs() < 1e-15);
        assert!(verify_weight(&w, 0.1, &models).passed());
    }
}
