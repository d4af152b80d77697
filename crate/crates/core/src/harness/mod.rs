//! Named scenarios: config files in, field snapshots, CSV series, reports
//! and a plot script out.

mod config;
mod output;
mod scenario;

pub use config::{parse_config, serialize_config, ConfigError, ConfigIssue};
pub use output::{emit_plots, export_field, import_field, list_snapshots, snapshot_name};
pub use scenario::*;

use crate::bounds::{
    build_candidate, build_weight, check_ordering, choose_parameters_with, verify_residual, verify_weight,
    BoundError, CandidateBound, Direction, ParamOptions, ResidualMethod,
};
use crate::coefficients::{derive_stability_constants, integral_f, ModelError, Models, Nonlinearity};
use crate::diagnostics::{
    blocking_report, certify_transition_front, front_distance, interfaces, mean_speed, BlockingOutcome,
    DiagnosticError, InterfaceTrack, DEFAULT_CROSSING_CAP,
};
use crate::geometry::{Extension, ExtendedChannelSpec, GeometryError, MaskedGrid, WidthProfile};
use crate::solver::{
    emanation_seed, initial_block, initial_front, initial_plateau, ScalarField, SimConfig, SolverError, Stepper,
};
use crate::wave1d::{profile_width, solve_profile_auto, ClosedFormCubic, FrontProfile, WaveError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

use output::write_text;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario '{scenario}': {context}: {message}")]
    Run { scenario: String, context: String, message: String },
}

fn ctx<'a, E: std::fmt::Display>(s: &'a Scenario, context: &str) -> impl Fn(E) -> HarnessError + 'a {
    let context = context.to_string();
    move |e| HarnessError::Run { scenario: s.name.clone(), context: context.clone(), message: e.to_string() }
}

/// One assertion from the scenario's expectations.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of a scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitReport {
    pub scenario: String,
    pub task: Task,
    pub checks: Vec<Check>,
    /// Measured quantities in report order.
    pub values: Vec<(String, String)>,
    pub files: Vec<PathBuf>,
}

impl ExitReport {
    fn new(s: &Scenario) -> Self {
        Self { scenario: s.name.clone(), task: s.task, checks: Vec::new(), values: Vec::new(), files: Vec::new() }
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    fn value(&mut self, key: impl Into<String>, v: impl std::fmt::Display) {
        self.values.push((key.into(), v.to_string()));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Process exit code: 0 when every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn check_named(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn value_of(&self, key: &str) -> Option<&str> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// `key: value` lines, then one `check <name>: PASS|FAIL (detail)` line per check.
    pub fn to_text(&self) -> String {
        let mut s = format!("scenario: {}\ntask: {}\n", self.scenario, self.task.name());
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}: {v}");
        }
        for c in &self.checks {
            let _ = writeln!(s, "check {}: {} ({})", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
        }
        let _ = writeln!(s, "status: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

/// Options that never change scenario physics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Adds this many seeded random sample points to residual checks; echoed in reports.
    pub seed: Option<u64>,
}

/// Planar front `phi(xi / sqrt a)` with speed `sqrt(a) c` for isotropic constant diffusion `a`.
struct ScaledProfile {
    inner: Arc<dyn FrontProfile>,
    root: f64,
}

impl FrontProfile for ScaledProfile {
    fn speed(&self) -> f64 {
        self.inner.speed() * self.root
    }
    fn phi(&self, xi: f64) -> f64 {
        self.inner.phi(xi / self.root)
    }
    fn dphi(&self, xi: f64) -> f64 {
        self.inner.dphi(xi / self.root) / self.root
    }
    fn d2phi(&self, xi: f64) -> f64 {
        self.inner.d2phi(xi / self.root) / (self.root * self.root)
    }
    fn reaction(&self, u: f64) -> f64 {
        self.inner.reaction(u)
    }
}

/// The planar front of the scenario's equation along any axis: closed form
/// for the plain cubic, the shooting solution otherwise.
pub fn planar_profile(models: &Models) -> Result<Arc<dyn FrontProfile>, HarnessError> {
    let fail = |m: &str| HarnessError::Run { scenario: String::new(), context: "planar profile".into(), message: m.into() };
    if !models.advection.is_zero() {
        return Err(fail("needs zero advection"));
    }
    let (a1, a2) = models.diffusion.entries();
    let a = match (a1.as_const(), a2.as_const()) {
        (Some(x), Some(y)) if x == y => x,
        _ => return Err(fail("needs constant isotropic diffusion")),
    };
    let nl = &models.reaction;
    let base: Arc<dyn FrontProfile> = match nl.modulation().as_const() {
        Some(r) if r == 1.0 => Arc::new(ClosedFormCubic::new(nl.theta())),
        Some(_) => Arc::new(solve_profile_auto(nl).map_err(|e| fail(&e.to_string()))?),
        None => return Err(fail("needs an x-independent reaction")),
    };
    Ok(if a == 1.0 { base } else { Arc::new(ScaledProfile { inner: base, root: a.sqrt() }) })
}

/// Parses a config file from disk.
pub fn load_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = output::read_text(path)?;
    parse_config(&text).map_err(HarnessError::Config)
}

/// Runs the scenario and writes its outputs to `out_dir`.
pub fn run_scenario(s: &Scenario, out_dir: &Path) -> Result<ExitReport, HarnessError> {
    run_scenario_with(s, out_dir, RunOptions::default())
}

pub fn run_scenario_with(s: &Scenario, out_dir: &Path, opts: RunOptions) -> Result<ExitReport, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io { path: out_dir.to_path_buf(), source })?;
    let mut report = match s.task {
        Task::Simulate => simulate(s, out_dir)?,
        Task::Sweep => sweep(s, out_dir)?,
        Task::WaveTable => wave_table(s, out_dir)?,
        Task::VerifyBounds => verify_bounds(s, out_dir, opts)?,
    };
    if let Some(seed) = opts.seed {
        report.value("seed", seed);
    }
    let config_path = out_dir.join("scenario.toml");
    write_text(&config_path, &serialize_config(s))?;
    report.files.push(config_path);
    report.files.push(emit_plots(out_dir)?);
    let report_path = out_dir.join("report.txt");
    report.files.push(report_path.clone());
    write_text(&report_path, &report.to_text())?;
    Ok(report)
}

fn grid_of(s: &Scenario) -> Result<MaskedGrid, HarnessError> {
    let d = s.domain.as_ref().ok_or_else(|| ctx::<&str>(s, "grid")("scenario has no domain"))?;
    let h = s.h.ok_or_else(|| ctx::<&str>(s, "grid")("scenario has no grid spacing"))?;
    MaskedGrid::build(d, h).map_err(ctx::<GeometryError>(s, "grid"))
}

fn bound_candidate(s: &Scenario, kind: crate::bounds::BoundKind) -> Result<CandidateBound, HarnessError> {
    let plan = s.bounds.as_ref().ok_or_else(|| ctx::<&str>(s, "bounds")("scenario has no [bounds] section"))?;
    let domain = s.domain.as_ref().ok_or_else(|| ctx::<&str>(s, "bounds")("scenario has no domain"))?;
    let profile = planar_profile(&s.models)?;
    let channel = ExtendedChannelSpec::new(domain.branches[plan.branch].clone(), Extension::Natural);
    let nl = &s.models.reaction;
    let gamma = derive_stability_constants(nl).map_err(ctx::<ModelError>(s, "stability constants"))?.gamma;
    let w = build_weight(&channel, gamma, &s.models).map_err(ctx::<BoundError>(s, "weight"))?;
    let opts = ParamOptions {
        delta_factor: plan.delta_factor,
        anchor_time: plan.anchor_time,
        slab: plan.slab,
        ..ParamOptions::default()
    };
    let params = choose_parameters_with(kind, profile.as_ref(), &w, nl, domain.junction_radius, &opts)
        .map_err(ctx::<BoundError>(s, "parameters"))?;
    build_candidate(kind, profile, &w, &params).map_err(ctx::<BoundError>(s, "candidate"))
}

fn initial_field(s: &Scenario, grid: &MaskedGrid, init: &InitialRecipe) -> Result<ScalarField, HarnessError> {
    let e = ctx::<SolverError>(s, "initial data");
    match *init {
        InitialRecipe::Front { branch, position, facing } => {
            let p = planar_profile(&s.models)?;
            initial_front(grid, branch, position, p.as_ref(), facing).map_err(e)
        }
        InitialRecipe::Emanation { branch, position, amp, rate } => {
            let p = planar_profile(&s.models)?;
            emanation_seed(grid, branch, position, p.as_ref(), amp, rate, grid.junction_radius()).map_err(e)
        }
        InitialRecipe::Block { branch, range, level, floor } => {
            initial_block(grid, branch, range, level, floor).map_err(e)
        }
        InitialRecipe::Plateau { ref cuts, level, floor } => initial_plateau(grid, cuts, level, floor).map_err(e),
        InitialRecipe::Constant { level } => Ok(ScalarField::constant(grid, level)),
        InitialRecipe::Bound { kind, time } => {
            let cb = bound_candidate(s, kind)?;
            let values = crate::bounds::sample_bound(&cb, grid, time).map_err(ctx::<BoundError>(s, "initial bound"))?;
            Ok(ScalarField::new(0.0, values.into_iter().map(|v| v.unwrap_or(0.0)).collect()))
        }
    }
}

/// Everything recorded while stepping.
struct Trajectory {
    probes: Vec<ScalarField>,
    track: InterfaceTrack,
    min: f64,
    max: f64,
    /// Smallest per-step change of any cell.
    worst_change: f64,
}

fn integrate(s: &Scenario, grid: &MaskedGrid, models: &Models, sim: &SimConfig, u0: &ScalarField, keep: bool) -> Result<Trajectory, HarnessError> {
    let stepper = Stepper::new(grid, models, sim.clone()).map_err(ctx::<SolverError>(s, "stepper"))?;
    let (n, dt) = sim.steps();
    let every = sim.probe_stride();
    let t0 = u0.t;
    let mut u = u0.clone();
    let mut tr = Trajectory {
        probes: Vec::new(),
        track: InterfaceTrack::default(),
        min: u.min(),
        max: u.max(),
        worst_change: f64::INFINITY,
    };
    let probe = |u: &ScalarField, tr: &mut Trajectory| {
        tr.track.push(interfaces(u, grid, DEFAULT_CROSSING_CAP));
        if keep {
            tr.probes.push(u.clone());
        }
    };
    probe(&u, &mut tr);
    for k in 1..=n {
        let t = t0 + k as f64 * dt;
        let mut next = stepper.step_with(&u, dt).map_err(ctx::<SolverError>(s, &format!("step {k} (t = {t:.6})")))?;
        next.t = t;
        for (a, b) in u.values.iter().zip(&next.values) {
            tr.worst_change = tr.worst_change.min(b - a);
        }
        tr.min = tr.min.min(next.min());
        tr.max = tr.max.max(next.max());
        u = next;
        if k % every == 0 || k == n {
            probe(&u, &mut tr);
        }
    }
    if !keep {
        tr.probes.push(u);
    }
    Ok(tr)
}

/// Blocking outcome name used in reports and CSV files.
pub fn outcome_name(o: &BlockingOutcome) -> &'static str {
    match o {
        BlockingOutcome::Invaded => "invaded",
        BlockingOutcome::Blocked => "blocked",
        BlockingOutcome::Indeterminate { .. } => "indeterminate",
    }
}

fn simulate(s: &Scenario, out: &Path) -> Result<ExitReport, HarnessError> {
    let mut rep = ExitReport::new(s);
    let grid = grid_of(s)?;
    let sim = s.sim.as_ref().ok_or_else(|| ctx::<&str>(s, "time")("scenario has no [time] section"))?;
    let init = s.initial.as_ref().ok_or_else(|| ctx::<&str>(s, "initial")("scenario has no [initial] section"))?;
    let plan = &s.diagnostics;
    let ex = &s.expect;
    let u0 = initial_field(s, &grid, init)?;
    let tr = integrate(s, &grid, &s.models, sim, &u0, true)?;
    let last = tr.probes.last().expect("at least one probe").clone();
    let h = grid.spacing();

    rep.value("cells", grid.len());
    rep.value("h", format!("{h:?}"));
    rep.value("dt", format!("{:?}", sim.steps().1));
    rep.value("steps", sim.steps().0);
    rep.value("t_end", format!("{:?}", last.t));
    rep.value("min", format!("{:?}", tr.min));
    rep.value("max", format!("{:?}", tr.max));
    let tol = ex.invariant_tol;
    rep.check(
        "invariant_region",
        tr.min >= -tol && tr.max <= 1.0 + tol,
        format!("min u = {:e}, max u - 1 = {:e}, tolerance {tol:e}", tr.min, tr.max - 1.0),
    );
    if plan.monotone {
        rep.value("worst_step_change", format!("{:?}", tr.worst_change));
        if let Some(t) = ex.monotone_tol {
            rep.check("monotone", tr.worst_change >= -t, format!("smallest per-step change {:e} >= -{t:e}", tr.worst_change));
        }
    }

    let needs_profile = !plan.speed_branches.is_empty() || !plan.distance_branches.is_empty() || !plan.certify_eps.is_empty();
    let profile = if needs_profile { Some(planar_profile(&s.models)?) } else { None };

    let mut files = Vec::new();
    // Snapshots: every k-th probe plus the last one, replacing any from an earlier run.
    for stale in list_snapshots(out, &s.name)? {
        std::fs::remove_file(&stale).map_err(|source| HarnessError::Io { path: stale.clone(), source })?;
    }
    let nprobe = tr.probes.len();
    for (i, u) in tr.probes.iter().enumerate() {
        let wanted = i + 1 == nprobe || (plan.snapshot_every > 0 && i % plan.snapshot_every == 0);
        if wanted {
            let path = out.join(snapshot_name(&s.name, i));
            export_field(u, &grid, &path)?;
            files.push(path);
        }
    }
    let path = out.join("interfaces.csv");
    write_text(&path, &tr.track.to_csv())?;
    files.push(path);
    let mut times = String::from("index,t,min,max,mass\n");
    for (i, u) in tr.probes.iter().enumerate() {
        let _ = writeln!(times, "{i},{:?},{:?},{:?},{:?}", u.t, u.min(), u.max(), u.mass(&grid));
    }
    let path = out.join("probes.csv");
    write_text(&path, &times)?;
    files.push(path);

    if let (Some(p), false) = (&profile, plan.speed_branches.is_empty()) {
        let c = p.speed();
        let window = plan.speed_window.expect("validated with speed_branches");
        let mut csv = String::from("branch,speed,r2,planar_speed,relative_error\n");
        for &b in &plan.speed_branches {
            match mean_speed(&tr.track, b, window) {
                Ok((v, r2)) => {
                    let rel = (v - c).abs() / c.abs();
                    let _ = writeln!(csv, "{},{v:?},{r2:?},{c:?},{rel:?}", b + 1);
                    rep.value(format!("speed_{}", b + 1), format!("{v:?}"));
                    rep.value(format!("speed_r2_{}", b + 1), format!("{r2:?}"));
                    if let Some(t) = ex.speed_rel_tol {
                        rep.check(format!("speed_{}", b + 1), rel <= t, format!("mean speed {v:.6} vs planar {c:.6}: relative error {rel:.4e} <= {t:e}"));
                    }
                    if let Some(m) = ex.speed_r2_min {
                        rep.check(format!("speed_fit_{}", b + 1), r2 >= m, format!("R^2 = {r2:.6} >= {m}"));
                    }
                }
                Err(e) => {
                    let _ = writeln!(csv, "{},,,{c:?},", b + 1);
                    rep.value(format!("speed_{}", b + 1), format!("unavailable ({e})"));
                    if ex.speed_rel_tol.is_some() || ex.speed_r2_min.is_some() {
                        rep.check(format!("speed_{}", b + 1), false, e.to_string());
                    }
                }
            }
        }
        let path = out.join("speeds.csv");
        write_text(&path, &csv)?;
        files.push(path);
    }

    if let (Some(p), false) = (&profile, plan.distance_branches.is_empty()) {
        let mut csv = String::from("branch,shift,position,distance\n");
        let mut shifts = Vec::new();
        for &b in &plan.distance_branches {
            match front_distance(&last, &grid, b, p.as_ref(), plan.distance_facing) {
                Ok((tau, d)) => {
                    let _ = writeln!(csv, "{},{tau:?},{:?},{d:?}", b + 1, p.speed() * tau);
                    rep.value(format!("front_distance_{}", b + 1), format!("{d:?}"));
                    rep.value(format!("shift_{}", b + 1), format!("{tau:?}"));
                    shifts.push(tau);
                    if let Some(m) = ex.distance_max {
                        rep.check(format!("front_distance_{}", b + 1), d <= m, format!("sup distance {d:.4e} <= {m}"));
                    }
                }
                Err(e) => {
                    rep.value(format!("front_distance_{}", b + 1), format!("unavailable ({e})"));
                    if ex.distance_max.is_some() {
                        rep.check(format!("front_distance_{}", b + 1), false, e.to_string());
                    }
                }
            }
        }
        if ex.shift_agreement && shifts.len() == plan.distance_branches.len() && shifts.len() >= 2 {
            let spread = shifts.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - shifts.iter().cloned().fold(f64::INFINITY, f64::min);
            let limit = h / p.speed().abs();
            rep.value("shift_spread", format!("{spread:?}"));
            rep.check("shift_agreement", spread <= limit, format!("shift spread {spread:.4e} <= h/|c| = {limit:.4e}"));
        } else if ex.shift_agreement {
            rep.check("shift_agreement", false, "shifts unavailable in some branch");
        }
        let path = out.join("front_distance.csv");
        write_text(&path, &csv)?;
        files.push(path);
    }

    if let (Some(p), false) = (&profile, plan.certify_eps.is_empty()) {
        let snaps: Vec<ScalarField> = tr.probes.iter().filter(|u| u.t >= plan.certify_from).cloned().collect();
        let text = certify_snapshots(s, &snaps, &grid, p.as_ref(), &mut rep)?;
        let path = out.join("certification.txt");
        write_text(&path, &text)?;
        files.push(path);
    }

    if let Some(eps) = plan.blocking_eps {
        for (b, o) in blocking_report(&last, &grid, eps).iter().enumerate() {
            rep.value(format!("blocking_{}", b + 1), outcome_name(o));
        }
    }

    if plan.bound_ordering {
        if let InitialRecipe::Bound { kind, time } = *init {
            let cb = bound_candidate(s, kind)?;
            let (a, b) = cb.params.valid;
            let inside: Vec<ScalarField> = tr.probes.iter().filter(|u| u.t + time >= a && u.t + time <= b).cloned().collect();
            let dir = if kind.is_lower() { Direction::Lower } else { Direction::Upper };
            let r = check_ordering(&inside, &grid, &cb, dir, time).map_err(ctx::<BoundError>(s, "ordering"))?;
            rep.value("ordering_margin", format!("{:?}", r.margin));
            rep.value("ordering_snapshots", inside.len());
            if let Some(t) = ex.ordering_tol {
                rep.check("ordering", r.margin >= -t && !inside.is_empty(), format!("margin {:.4e} >= -{t:e} over {} snapshots", r.margin, inside.len()));
            }
        }
    }

    rep.files.extend(files);
    Ok(rep)
}

/// Certification per level with the measured band widths compared to the profile widths.
fn certify_snapshots(
    s: &Scenario,
    snaps: &[ScalarField],
    grid: &MaskedGrid,
    p: &dyn FrontProfile,
    rep: &mut ExitReport,
) -> Result<String, HarnessError> {
    let h = grid.spacing();
    let slack = 2.0 * grid.junction_radius();
    let mut text = String::new();
    for &eps in &s.diagnostics.certify_eps {
        let width = profile_width(p, eps).map_err(ctx::<WaveError>(s, "profile width"))?;
        let limit = width + 2.0 * h + slack;
        let r = certify_transition_front(snaps, grid, &[eps], limit).map_err(ctx::<DiagnosticError>(s, "certification"))?;
        let measured = r.bands[0].width;
        let _ = writeln!(text, "eps: {eps:?}\nprofile_width: {width:?}");
        text += &r.to_text();
        rep.value(format!("band_width_{eps:?}"), format!("{measured:?}"));
        rep.value(format!("profile_width_{eps:?}"), format!("{width:?}"));
        if s.expect.certify_slack {
            let gap = (measured - width).abs();
            rep.check(
                format!("certify_{eps:?}"),
                r.passed() && gap <= 2.0 * h + slack,
                format!("band {measured:.4} vs profile {width:.4}: gap {gap:.4} <= 2h + {slack} = {:.4}", 2.0 * h + slack),
            );
        }
    }
    Ok(text)
}

/// Re-runs the certification on snapshot files already written for `s`.
pub fn certify_stored(s: &Scenario, run_dir: &Path, out_dir: &Path) -> Result<ExitReport, HarnessError> {
    let grid = grid_of(s)?;
    let p = planar_profile(&s.models)?;
    let mut rep = ExitReport::new(s);
    let mut snaps = Vec::new();
    for path in list_snapshots(run_dir, &s.name)? {
        let u = import_field(&path, &grid)?;
        if u.t >= s.diagnostics.certify_from {
            snaps.push(u);
        }
    }
    if snaps.is_empty() {
        return Err(ctx::<&str>(s, "certify")("no stored snapshots found"));
    }
    if s.diagnostics.certify_eps.is_empty() {
        return Err(ctx::<&str>(s, "certify")("diagnostics list no certify_eps levels"));
    }
    rep.value("snapshots", snaps.len());
    let text = certify_snapshots(s, &snaps, &grid, p.as_ref(), &mut rep)?;
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io { path: out_dir.to_path_buf(), source })?;
    let path = out_dir.join("certification.txt");
    write_text(&path, &text)?;
    rep.files.push(path);
    let path = out_dir.join("report.txt");
    write_text(&path, &rep.to_text())?;
    rep.files.push(path);
    Ok(rep)
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub outcome: BlockingOutcome,
    pub doubled: BlockingOutcome,
    /// `sup |u(2 t_end) - u(t_end)|`.
    pub change: f64,
    pub min: f64,
    pub max: f64,
}

fn sweep_instance(s: &Scenario, plan: &SweepPlan, value: f64) -> Result<(Scenario, SimConfig), HarnessError> {
    let mut inst = s.clone();
    let mut sim = s.sim.clone().ok_or_else(|| ctx::<&str>(s, "sweep")("scenario has no [time] section"))?;
    match plan.parameter {
        SweepParameter::ChamberRatio { branch, neck } => {
            let d = inst.domain.as_mut().expect("validated domain");
            let br = &mut d.branches[branch];
            let w = br.width.eval(0.0);
            br.width = if value == 1.0 {
                WidthProfile::Constant(w)
            } else {
                WidthProfile::Table { s: vec![0.0, neck.0, neck.1, br.length], w: vec![w, w, value * w, value * w] }
            };
            d.validate().map_err(ctx::<GeometryError>(s, "sweep domain"))?;
        }
        SweepParameter::Theta => {
            let rho = inst.models.reaction.modulation().clone();
            inst.models.reaction = Nonlinearity::modulated(value, rho).map_err(ctx::<ModelError>(s, "sweep reaction"))?;
        }
    }
    inst.name = format!("{}-v{:02}", s.name, plan.values.iter().position(|v| *v == value).unwrap_or(0));
    let grid = grid_of(&inst)?;
    let bound = crate::solver::max_stable_dt(&grid, &inst.models, sim.scheme);
    sim.dt = sim.dt.min(0.9 * bound);
    Ok((inst, sim))
}

fn sweep_point(s: &Scenario, plan: &SweepPlan, value: f64, out: &Path) -> Result<(SweepPoint, Vec<PathBuf>), HarnessError> {
    let (inst, sim) = sweep_instance(s, plan, value)?;
    let grid = grid_of(&inst)?;
    let init = inst.initial.as_ref().expect("validated initial data");
    let u0 = initial_field(&inst, &grid, init)?;
    let stepper = Stepper::new(&grid, &inst.models, sim.clone()).map_err(ctx::<SolverError>(&inst, "stepper"))?;
    let first = stepper.run(&u0, |_| {}).map_err(ctx::<SolverError>(&inst, "first half"))?;
    let second = stepper.run(&first.field, |_| {}).map_err(ctx::<SolverError>(&inst, "second half"))?;
    let eps = inst.diagnostics.blocking_eps.unwrap_or(0.05);
    let a = blocking_report(&first.field, &grid, eps)[plan.branch].clone();
    let b = blocking_report(&second.field, &grid, eps)[plan.branch].clone();
    let mut files = Vec::new();
    for (i, u) in [&first.field, &second.field].into_iter().enumerate() {
        let path = out.join(snapshot_name(&inst.name, i + 1));
        export_field(u, &grid, &path)?;
        files.push(path);
    }
    let point = SweepPoint {
        value,
        outcome: a,
        doubled: b,
        change: first.field.sup_distance(&second.field),
        min: first.min.min(second.min),
        max: first.max.max(second.max),
    };
    Ok((point, files))
}

/// Sweep points in value order; runs the values in parallel.
pub fn run_sweep(s: &Scenario, out: &Path) -> Result<Vec<SweepPoint>, HarnessError> {
    Ok(sweep_points(s, out)?.into_iter().map(|(p, _)| p).collect())
}

fn sweep_points(s: &Scenario, out: &Path) -> Result<Vec<(SweepPoint, Vec<PathBuf>)>, HarnessError> {
    let plan = s.sweep.as_ref().ok_or_else(|| ctx::<&str>(s, "sweep")("scenario has no [sweep] section"))?;
    std::fs::create_dir_all(out).map_err(|source| HarnessError::Io { path: out.to_path_buf(), source })?;
    plan.values.par_iter().map(|&v| sweep_point(s, plan, v, out)).collect()
}

fn sweep(s: &Scenario, out: &Path) -> Result<ExitReport, HarnessError> {
    let mut rep = ExitReport::new(s);
    let ex = &s.expect;
    let results = sweep_points(s, out)?;
    let mut csv = String::from("value,outcome,outcome_doubled,change,min,max\n");
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (p, files) in &results {
        let _ = writeln!(csv, "{:?},{},{},{:?},{:?},{:?}", p.value, outcome_name(&p.outcome), outcome_name(&p.doubled), p.change, p.min, p.max);
        rep.value(format!("outcome_{:?}", p.value), outcome_name(&p.outcome));
        rep.value(format!("change_{:?}", p.value), format!("{:?}", p.change));
        rep.files.extend(files.iter().cloned());
        lo = lo.min(p.min);
        hi = hi.max(p.max);
    }
    let tol = ex.invariant_tol;
    rep.check("invariant_region", lo >= -tol && hi <= 1.0 + tol, format!("min u = {lo:e}, max u - 1 = {:e}, tolerance {tol:e}", hi - 1.0));
    let points: Vec<&SweepPoint> = results.iter().map(|(p, _)| p).collect();
    if ex.sweep_monotone {
        let decisive = points.iter().all(|p| !matches!(p.outcome, BlockingOutcome::Indeterminate { .. }));
        let first_block = points.iter().position(|p| p.outcome == BlockingOutcome::Blocked);
        let monotone = match first_block {
            None => true,
            Some(k) => points[k..].iter().all(|p| p.outcome == BlockingOutcome::Blocked),
        };
        rep.check("sweep_monotone", decisive && monotone, format!("outcomes {:?}", points.iter().map(|p| outcome_name(&p.outcome)).collect::<Vec<_>>()));
    }
    if let Some(n) = ex.sweep_min_invaded {
        let k = points.iter().filter(|p| p.outcome == BlockingOutcome::Invaded).count();
        rep.check("sweep_invasion", k >= n, format!("{k} invading values, need {n}"));
    }
    if let Some(t) = ex.sweep_stability_tol {
        let worst = points.iter().map(|p| p.change).fold(0.0, f64::max);
        let same = points.iter().all(|p| p.outcome == p.doubled);
        rep.check("sweep_stability", same && worst <= t, format!("outcomes unchanged: {same}; largest field change {worst:.3e} <= {t:e}"));
    }
    let path = out.join("sweep.csv");
    write_text(&path, &csv)?;
    rep.files.push(path);
    Ok(rep)
}

/// One row of the traveling-wave table.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveRow {
    pub theta: f64,
    pub speed: f64,
    pub closed_form: f64,
    pub integral: f64,
    pub residual: f64,
}

impl WaveRow {
    /// Sign of the speed against the sign of the reaction integral, both
    /// treated as zero inside `zero_tol`.
    pub fn sign_agrees(&self, zero_tol: f64) -> bool {
        let sign = |x: f64, tol: f64| if x.abs() <= tol { 0 } else if x > 0.0 { 1 } else { -1 };
        sign(self.speed, zero_tol) == sign(self.integral, 1e-12)
    }
}

/// Shooting speeds for the listed thresholds with the scenario's modulation.
pub fn wave_rows(s: &Scenario) -> Result<Vec<WaveRow>, HarnessError> {
    let plan = s.waves.as_ref().ok_or_else(|| ctx::<&str>(s, "waves")("scenario has no [waves] section"))?;
    let rho = s.models.reaction.modulation().clone();
    let scale = rho.as_const().ok_or_else(|| ctx::<&str>(s, "waves")("wave table needs an x-independent reaction"))?;
    plan.thetas
        .par_iter()
        .map(|&theta| {
            let nl = Nonlinearity::modulated(theta, rho.clone()).map_err(ctx::<ModelError>(s, "reaction"))?;
            let p = solve_profile_auto(&nl).map_err(ctx::<WaveError>(s, &format!("profile at theta = {theta}")))?;
            Ok(WaveRow {
                theta,
                speed: p.speed(),
                closed_form: (1.0 - 2.0 * theta) * std::f64::consts::FRAC_1_SQRT_2 * scale.sqrt(),
                integral: integral_f(&nl).map_err(ctx::<ModelError>(s, "integral"))?,
                residual: p.residual(),
            })
        })
        .collect()
}

fn wave_table(s: &Scenario, out: &Path) -> Result<ExitReport, HarnessError> {
    let mut rep = ExitReport::new(s);
    let rows = wave_rows(s)?;
    let ex = &s.expect;
    let zero = ex.wave_zero_tol.unwrap_or(1e-6);
    let mut csv = String::from("theta,speed,closed_form,abs_error,integral_f,sign_agrees,residual\n");
    for r in &rows {
        let err = (r.speed - r.closed_form).abs();
        let _ = writeln!(csv, "{:?},{:?},{:?},{:?},{:?},{},{:?}", r.theta, r.speed, r.closed_form, err, r.integral, r.sign_agrees(zero), r.residual);
        rep.value(format!("speed_{:?}", r.theta), format!("{:?}", r.speed));
        if let Some(t) = ex.wave_speed_tol {
            rep.check(format!("wave_speed_{:?}", r.theta), err <= t, format!("|c - closed form| = {err:.3e} <= {t:e}"));
        }
        if r.closed_form == 0.0 {
            if let Some(t) = ex.wave_zero_tol {
                rep.check(format!("wave_zero_{:?}", r.theta), r.speed.abs() <= t, format!("|c| = {:.3e} <= {t:e}", r.speed.abs()));
            }
        }
        rep.check(format!("sign_rule_{:?}", r.theta), r.sign_agrees(zero), format!("c = {:.3e}, integral = {:.3e}", r.speed, r.integral));
    }
    let path = out.join("wave_table.csv");
    write_text(&path, &csv)?;
    rep.files.push(path);
    Ok(rep)
}

fn verify_bounds(s: &Scenario, out: &Path, opts: RunOptions) -> Result<ExitReport, HarnessError> {
    let mut rep = ExitReport::new(s);
    let plan = s.bounds.as_ref().ok_or_else(|| ctx::<&str>(s, "bounds")("scenario has no [bounds] section"))?;
    let domain = s.domain.as_ref().ok_or_else(|| ctx::<&str>(s, "bounds")("scenario has no domain"))?;
    let branch = &domain.branches[plan.branch];
    let channel = ExtendedChannelSpec::new(branch.clone(), Extension::Natural);
    let gamma = derive_stability_constants(&s.models.reaction).map_err(ctx::<ModelError>(s, "stability constants"))?.gamma;
    let mut text = String::new();
    match build_weight(&channel, gamma, &s.models) {
        Ok(w) => {
            let chk = verify_weight(&w, gamma, &s.models);
            let _ = writeln!(
                text,
                "[weight]\nlambda = {:?}\nconstant = {}\ninf_psi = {:?}\nsup_psi = {:?}\ninterior_margin = {:?}\nboundary_margin = {:?}\n",
                w.lambda(),
                w.is_constant(),
                w.inf_psi(),
                w.sup_psi(),
                chk.interior,
                chk.boundary
            );
            rep.value("weight_lambda", format!("{:?}", w.lambda()));
            rep.value("weight_violation", format!("{:?}", chk.violation()));
            if s.expect.weight {
                rep.check("weight", chk.passed(), format!("violation {:.3e}", chk.violation()));
            }
        }
        Err(e) => {
            let _ = writeln!(text, "[weight]\nerror = {e}\n");
            rep.value("weight_lambda", format!("unavailable ({e})"));
            if s.expect.weight {
                rep.check("weight", false, e.to_string());
            }
        }
    }
    let l = domain.junction_radius;
    let (na, nt) = plan.samples;
    let mut points: Vec<[f64; 2]> = Vec::new();
    for i in 0..na {
        let sx = l + (branch.length - l) * (i as f64 + 0.5) / na as f64;
        let w = branch.width.eval(sx);
        for f in [-0.3, 0.0, 0.3] {
            points.push(branch.point(sx, f * w));
        }
    }
    if let Some(seed) = opts.seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..na {
            let sx = rng.gen_range(l..branch.length);
            let tau = rng.gen_range(-0.45..0.45) * branch.width.eval(sx);
            points.push(branch.point(sx, tau));
        }
    }
    for &kind in &plan.kinds {
        let cb = match bound_candidate(s, kind) {
            Ok(cb) => cb,
            Err(e) => {
                let _ = writeln!(text, "[{kind}]\nerror = {e}\n");
                rep.value(format!("residual_{kind}"), format!("unavailable ({e})"));
                if s.expect.residuals {
                    rep.check(format!("residual_{kind}"), false, e.to_string());
                }
                continue;
            }
        };
        let (a, b) = cb.params.valid;
        let (t0, t1) = if a.is_finite() { (a, (a + plan.span).min(b)) } else { (b - plan.span, b) };
        let times: Vec<f64> = (0..nt).map(|k| if nt == 1 { t1 } else { t0 + (t1 - t0) * k as f64 / (nt - 1) as f64 }).collect();
        let method = match plan.residual_mode {
            ResidualMode::Auto => ResidualMethod::Auto,
            ResidualMode::Differences => ResidualMethod::Differences { h: 1e-2, dt: 1e-3 },
        };
        let r = verify_residual(&cb, &points, &times, &s.models, method).map_err(ctx::<BoundError>(s, "residual"))?;
        let _ = writeln!(text, "[{kind}]\n{}{}", cb.params.to_text(), r.to_text());
        rep.value(format!("residual_{kind}"), format!("{:?}", r.worst));
        rep.value(format!("samples_{kind}"), r.samples);
        if s.expect.residuals {
            rep.check(format!("residual_{kind}"), r.passed() && r.samples > 0, format!("worst {:.3e}, tolerance {:.0e}, {} samples", r.worst, r.tolerance, r.samples));
        }
    }
    let path = out.join("bounds.txt");
    write_text(&path, &text)?;
    rep.files.push(path);
    Ok(rep)
}

#[cfg(test)]
mod tests;
