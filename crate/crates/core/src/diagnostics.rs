//! Front tracking and classification on simulated fields.
//!
//! Everything here works on cross-sectional means: cells of a branch are
//! binned by axial coordinate with bin width `h`, and the 1/2-level of the
//! binned profile defines the interface positions.

use thiserror::Error;

use crate::geometry::{MaskedGrid, Tag};
use crate::numerics::{golden_min, linear_fit};
use crate::solver::{Facing, ScalarField};
use crate::wave1d::FrontProfile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticError {
    #[error("branch {branch}: expected one crossing at t = {t}, found {count}")]
    Crossings { branch: usize, t: f64, count: usize },
    #[error("no samples in the requested window")]
    EmptyWindow,
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Binned cross-sectional mean `(s, mean u)` of branch `b`, sorted by `s`.
/// The abscissa of a bin is the mean axial coordinate of its cells.
pub fn cross_section_means(u: &ScalarField, grid: &MaskedGrid, b: usize) -> Vec<(f64, f64)> {
    let h = grid.spacing();
    let mut bins: std::collections::BTreeMap<i64, (f64, f64, usize)> = Default::default();
    for &c in grid.branch_cells(b) {
        let s = grid.axial(c);
        let e = bins.entry((s / h).floor() as i64).or_insert((0.0, 0.0, 0));
        e.0 += s;
        e.1 += u.values[c];
        e.2 += 1;
    }
    bins.values().map(|&(s, v, n)| (s / n as f64, v / n as f64)).collect()
}

/// Interface data of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceEntry {
    pub t: f64,
    /// Increasing 1/2-crossings of the mean profile per branch.
    pub crossings: Vec<Vec<f64>>,
    /// Branches with more crossings than the cap.
    pub overflow: Vec<bool>,
    /// Mean profile at the branch mouth is at least 1/2.
    pub mouth_high: Vec<bool>,
    /// The junction region contains cells on both sides of 1/2.
    pub junction_crossing: bool,
    pub junction_mean: f64,
}

/// State of a branch without a crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchPhase {
    Invaded,
    Empty,
    Front,
}

impl InterfaceEntry {
    pub fn phase(&self, b: usize) -> BranchPhase {
        match (self.crossings[b].is_empty(), self.mouth_high[b]) {
            (false, _) => BranchPhase::Front,
            (true, true) => BranchPhase::Invaded,
            (true, false) => BranchPhase::Empty,
        }
    }
}

/// Interface entries for a sequence of snapshots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InterfaceTrack {
    pub entries: Vec<InterfaceEntry>,
}

impl InterfaceTrack {
    pub fn push(&mut self, e: InterfaceEntry) {
        self.entries.push(e);
    }

    /// CSV of the first crossing and crossing count of every branch over time.
    pub fn to_csv(&self) -> String {
        let m = self.entries.first().map_or(0, |e| e.crossings.len());
        let mut s = String::from("t");
        for b in 0..m {
            s += &format!(",xi_{},n_{}", b + 1, b + 1);
        }
        s.push('\n');
        for e in &self.entries {
            s += &format!("{:?}", e.t);
            for c in &e.crossings {
                match c.first() {
                    Some(x) => s += &format!(",{x:?},{}", c.len()),
                    None => s += &format!(",,{}", 0),
                }
            }
            s.push('\n');
        }
        s
    }
}

pub const DEFAULT_CROSSING_CAP: usize = 4;

fn half_crossings(profile: &[(f64, f64)]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for w in profile.windows(2) {
        let ((s0, a), (s1, b)) = (w[0], w[1]);
        let (da, db) = (a - 0.5, b - 0.5);
        if da == 0.0 {
            if out.last() != Some(&s0) {
                out.push(s0);
            }
        } else if da * db < 0.0 {
            out.push(s0 + (s1 - s0) * da / (da - db));
        }
    }
    if let Some(&(s, v)) = profile.last() {
        if v == 0.5 && out.last() != Some(&s) {
            out.push(s);
        }
    }
    out
}

/// Per-branch 1/2-crossings of the cross-sectional means of `u`.
pub fn interfaces(u: &ScalarField, grid: &MaskedGrid, cap: usize) -> InterfaceEntry {
    let m = grid.branch_count();
    let mut crossings = Vec::with_capacity(m);
    let mut overflow = Vec::with_capacity(m);
    let mut mouth_high = Vec::with_capacity(m);
    for b in 0..m {
        let prof = cross_section_means(u, grid, b);
        let xs = half_crossings(&prof);
        overflow.push(xs.len() > cap);
        mouth_high.push(prof.first().is_some_and(|p| p.1 >= 0.5));
        crossings.push(xs);
    }
    let (mut lo, mut hi, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for c in 0..grid.len() {
        if grid.tag(c) == Tag::Junction {
            let v = u.values[c];
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
            n += 1;
        }
    }
    InterfaceEntry {
        t: u.t,
        crossings,
        overflow,
        mouth_high,
        junction_crossing: lo < 0.5 && hi > 0.5,
        junction_mean: if n > 0 { sum / n as f64 } else { f64::NAN },
    }
}

/// Least-squares slope of the single crossing of branch `b` against time
/// over `[ta, tb]`, with the fit's R^2.
pub fn mean_speed(track: &InterfaceTrack, b: usize, (ta, tb): (f64, f64)) -> Result<(f64, f64), DiagnosticError> {
    let mut ts = Vec::new();
    let mut xs = Vec::new();
    for e in track.entries.iter().filter(|e| e.t >= ta && e.t <= tb) {
        let c = e.crossings.get(b).ok_or_else(|| DiagnosticError::Argument(format!("no branch {}", b + 1)))?;
        if c.len() != 1 {
            return Err(DiagnosticError::Crossings { branch: b + 1, t: e.t, count: c.len() });
        }
        ts.push(e.t);
        xs.push(c[0]);
    }
    if ts.len() < 2 {
        return Err(DiagnosticError::EmptyWindow);
    }
    let (slope, _, r2) = linear_fit(&ts, &xs);
    Ok((slope, r2))
}

/// Measured band width for one level.
#[derive(Debug, Clone, PartialEq)]
pub struct BandResult {
    pub eps: f64,
    /// Largest skeleton distance from the interface of a cell on the wrong
    /// side of its level; zero when no cell violates, infinite when cells
    /// violate but no interface exists.
    pub width: f64,
    pub pass: bool,
    /// `(t, x, y, distance)` of the worst violating cell.
    pub witness: Option<(f64, [f64; 2], f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub bands: Vec<BandResult>,
    pub band_limit: f64,
    /// Bound on the gap between skeleton distance and true distance.
    pub distance_slack: f64,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.bands.iter().all(|b| b.pass)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("band_limit: {:?}\ndistance_slack: {:?}\n", self.band_limit, self.distance_slack);
        for b in &self.bands {
            s += &format!("eps_{:?}_width: {:?}\neps_{:?}_pass: {}\n", b.eps, b.width, b.eps, b.pass);
            if let Some((t, x, d)) = b.witness {
                s += &format!("eps_{:?}_witness: {:?},{:?},{:?},{:?}\n", b.eps, t, x[0], x[1], d);
            }
        }
        s
    }
}

/// Measures, per level `eps`, the band outside which every snapshot is
/// within `eps` of 1 on the invaded side and of 0 on the other side.
///
/// A cell's side comes from its bin of the cross-sectional mean (junction
/// cells use the junction mean). Distances are skeleton distances to the
/// crossing points, plus the junction center when the junction is crossed.
pub fn certify_transition_front(
    snapshots: &[ScalarField],
    grid: &MaskedGrid,
    eps_list: &[f64],
    band_limit: f64,
) -> Result<CertificationReport, DiagnosticError> {
    if eps_list.iter().any(|e| !(*e > 0.0 && *e <= 0.5)) {
        return Err(DiagnosticError::Argument("levels must lie in (0, 1/2]".into()));
    }
    let domain = grid.domain();
    let h = grid.spacing();
    let mut bands: Vec<BandResult> =
        eps_list.iter().map(|&eps| BandResult { eps, width: 0.0, pass: true, witness: None }).collect();
    for u in snapshots {
        let entry = interfaces(u, grid, usize::MAX);
        let mut gamma: Vec<[f64; 2]> = Vec::new();
        for (b, xs) in entry.crossings.iter().enumerate() {
            gamma.extend(xs.iter().map(|&s| domain.branches[b].point(s, 0.0)));
        }
        if entry.junction_crossing {
            gamma.push([0.0, 0.0]);
        }
        let bin_means: Vec<std::collections::HashMap<i64, f64>> = (0..grid.branch_count())
            .map(|b| {
                let mut acc: std::collections::HashMap<i64, (f64, usize)> = Default::default();
                for &c in grid.branch_cells(b) {
                    let e = acc.entry((grid.axial(c) / h).floor() as i64).or_insert((0.0, 0));
                    e.0 += u.values[c];
                    e.1 += 1;
                }
                acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
            })
            .collect();
        for c in 0..grid.len() {
            let high = match grid.tag(c) {
                Tag::Junction => entry.junction_mean >= 0.5,
                Tag::Branch(b) => bin_means[b][&((grid.axial(c) / h).floor() as i64)] >= 0.5,
            };
            let v = u.values[c];
            let x = grid.center(c);
            let mut dist: Option<f64> = None;
            for band in bands.iter_mut() {
                let bad = if high { v < 1.0 - band.eps } else { v > band.eps };
                if !bad {
                    continue;
                }
                let d = *dist.get_or_insert_with(|| {
                    gamma
                        .iter()
                        .map(|&g| domain.skeleton_distance(x, g).unwrap_or(f64::INFINITY))
                        .fold(f64::INFINITY, f64::min)
                });
                if d > band.width || band.witness.is_none() {
                    band.width = band.width.max(d);
                    band.witness = Some((u.t, x, d));
                }
            }
        }
    }
    for band in bands.iter_mut() {
        band.pass = band.width <= band_limit;
    }
    Ok(CertificationReport { bands, band_limit, distance_slack: 2.0 * grid.junction_radius() })
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockingOutcome {
    Invaded,
    Blocked,
    Indeterminate { min: f64, max: f64 },
}

/// Classifies each branch by the values of `p` on its far third.
pub fn blocking_report(p: &ScalarField, grid: &MaskedGrid, eps_block: f64) -> Vec<BlockingOutcome> {
    let l = grid.junction_radius();
    (0..grid.branch_count())
        .map(|b| {
            let len = grid.domain().branches[b].length;
            let from = len - (len - l) / 3.0;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &c in grid.branch_cells(b) {
                if grid.axial(c) >= from {
                    lo = lo.min(p.values[c]);
                    hi = hi.max(p.values[c]);
                }
            }
            if lo >= 1.0 - eps_block {
                BlockingOutcome::Invaded
            } else if hi <= 1.0 - eps_block {
                BlockingOutcome::Blocked
            } else {
                BlockingOutcome::Indeterminate { min: lo, max: hi }
            }
        })
        .collect()
}

fn oriented(p: &dyn FrontProfile, s: f64, pos: f64, facing: Facing) -> f64 {
    match facing {
        Facing::Inward => p.phi(pos - s),
        Facing::Outward => p.phi(s - pos),
    }
}

/// Best time shift `tau` (front position `c tau`) of the planar profile
/// against the mean profile of branch `b` on `s >= L + 2`, and the attained
/// sup distance.
pub fn front_distance(
    u: &ScalarField,
    grid: &MaskedGrid,
    b: usize,
    p: &dyn FrontProfile,
    facing: Facing,
) -> Result<(f64, f64), DiagnosticError> {
    let c = p.speed();
    if c == 0.0 {
        return Err(DiagnosticError::Argument("profile speed is zero".into()));
    }
    let entry = interfaces(u, grid, usize::MAX);
    let xs = &entry.crossings[b];
    if xs.len() != 1 {
        return Err(DiagnosticError::Crossings { branch: b + 1, t: u.t, count: xs.len() });
    }
    let smin = grid.junction_radius() + 2.0;
    let prof: Vec<(f64, f64)> = cross_section_means(u, grid, b).into_iter().filter(|p| p.0 >= smin).collect();
    let dist = |tau: f64| {
        let pos = c * tau;
        prof.iter().map(|&(s, v)| (v - oriented(p, s, pos, facing)).abs()).fold(0.0, f64::max)
    };
    let h = grid.spacing();
    let mid = xs[0] / c;
    let half = (2.0 + 5.0 * h) / c.abs();
    let (tau, d) = golden_min(dist, mid - half, mid + half, 1e-10);
    Ok((tau, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    /// Approach to 1.
    One,
    /// Approach to 0.
    Zero,
}

/// Exponential rate of approach of the mean profile of branch `b` to 1 or 0,
/// fitted where the deviation lies in `[1e-8, 1e-2]`.
/// Returns `f64::INFINITY` when the deviation is below `1e-14` throughout.
pub fn tail_fit(u: &ScalarField, grid: &MaskedGrid, b: usize, side: TailSide) -> Result<f64, DiagnosticError> {
    let prof = cross_section_means(u, grid, b);
    let dev: Vec<(f64, f64)> = prof
        .iter()
        .map(|&(s, v)| (s, if side == TailSide::One { 1.0 - v } else { v }))
        .collect();
    if dev.iter().all(|d| d.1.abs() < 1e-14) {
        return Ok(f64::INFINITY);
    }
    let pts: Vec<(f64, f64)> = dev.into_iter().filter(|d| d.1 >= 1e-8 && d.1 <= 1e-2).collect();
    if pts.len() < 3 {
        return Err(DiagnosticError::Fit(format!("only {} samples in the tail range", pts.len())));
    }
    let inc = pts.windows(2).all(|w| w[1].1 > w[0].1);
    let dec = pts.windows(2).all(|w| w[1].1 < w[0].1);
    if !(inc || dec) {
        return Err(DiagnosticError::Fit("deviation is not monotone on the tail range".into()));
    }
    let s: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (slope, _, r2) = linear_fit(&s, &y);
    if !(r2 >= 0.99) {
        return Err(DiagnosticError::Fit(format!("R^2 = {r2:.4} below 0.99")));
    }
    Ok(slope.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BranchSpec, DomainSpec, WidthProfile};
    use crate::solver::{initial_block, initial_front};
    use crate::wave1d::{profile_width, ClosedFormCubic};

    fn y_grid(h: f64) -> MaskedGrid {
        let b = |deg| BranchSpec::at_angle(deg, WidthProfile::Constant(2.0), 30.0);
        let spec = DomainSpec::new(4.0, vec![b(0.0), b(120.0), b(240.0)], None).unwrap();
        MaskedGrid::build(&spec, h).unwrap()
    }

    #[test]
    fn planar_front_has_one_crossing() {
        let g = y_grid(0.2);
        let p = ClosedFormCubic::new(0.3);
        for b in 0..3 {
            let u = initial_front(&g, b, 15.0, &p, Facing::Inward).unwrap();
            let e = interfaces(&u, &g, DEFAULT_CROSSING_CAP);
            assert_eq!(e.crossings[b].len(), 1);
            assert!((e.crossings[b][0] - 15.0).abs() <= 0.2, "{:?}", e.crossings[b]);
            for k in (0..3).filter(|&k| k != b) {
                assert_eq!(e.phase(k), BranchPhase::Empty);
            }
        }
    }

    #[test]
    fn constant_branch_is_invaded() {
        let g = y_grid(0.25);
        let u = ScalarField::constant(&g, 0.8);
        let e = interfaces(&u, &g, DEFAULT_CROSSING_CAP);
        assert!((0..3).all(|b| e.phase(b) == BranchPhase::Invaded));
        assert!(!e.junction_crossing);
    }

    #[test]
    fn slab_has_two_crossings() {
        let g = y_grid(0.25);
        let u = initial_block(&g, 1, (10.0, 14.0), 0.95, 0.0).unwrap();
        let e = interfaces(&u, &g, DEFAULT_CROSSING_CAP);
        let xs = &e.crossings[1];
        assert_eq!(xs.len(), 2);
        assert!((xs[0] - 10.0).abs() <= 0.25 && (xs[1] - 14.0).abs() <= 0.25, "{xs:?}");
    }

    #[test]
    fn synthetic_track_speed() {
        let mut track = InterfaceTrack::default();
        for k in 0..20 {
            let t = k as f64;
            track.push(InterfaceEntry {
                t,
                crossings: vec![vec![3.0 + 0.28 * t]],
                overflow: vec![false],
                mouth_high: vec![false],
                junction_crossing: false,
                junction_mean: 0.0,
            });
        }
        let (v, r2) = mean_speed(&track, 0, (0.0, 19.0)).unwrap();
        assert!((v - 0.28).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        track.entries[5].crossings[0].push(9.0);
        assert_eq!(
            mean_speed(&track, 0, (0.0, 19.0)),
            Err(DiagnosticError::Crossings { branch: 1, t: 5.0, count: 2 })
        );
    }

    #[test]
    fn planar_front_certifies_with_profile_width() {
        let h = 0.1;
        let b = |deg| BranchSpec::at_angle(deg, WidthProfile::Constant(2.0), 40.0);
        let spec = DomainSpec::new(2.0, vec![b(0.0), b(180.0)], None).unwrap();
        let g = MaskedGrid::build(&spec, h).unwrap();
        let p = ClosedFormCubic::new(0.3);
        let snaps: Vec<ScalarField> = [12.0, 20.0, 28.0]
            .iter()
            .map(|&s0| initial_front(&g, 0, s0, &p, Facing::Inward).unwrap())
            .collect();
        let rep = certify_transition_front(&snaps, &g, &[0.5, 0.1, 0.05], 30.0).unwrap();
        assert_eq!(rep.bands[0].width, 0.0);
        for band in &rep.bands[1..] {
            let want = profile_width(&p, band.eps).unwrap();
            assert!(band.pass);
            assert!((band.width - want).abs() <= 2.0 * h, "{} vs {want}", band.width);
        }
        assert!(rep.bands[1].width <= rep.bands[2].width);
    }

    #[test]
    fn plateau_fails_certification_in_its_branch() {
        let g = y_grid(0.25);
        let p = ClosedFormCubic::new(0.3);
        let mut u = initial_front(&g, 0, 15.0, &p, Facing::Inward).unwrap();
        for &c in g.branch_cells(2) {
            u.values[c] = 0.6;
        }
        let rep = certify_transition_front(&[u], &g, &[0.3], 12.0).unwrap();
        let band = &rep.bands[0];
        assert!(!band.pass);
        let (_, x, _) = band.witness.unwrap();
        assert_eq!(g.domain().branch_coordinates(x).map(|q| q.0), Some(2));
    }

    #[test]
    fn blocking_of_constants() {
        let g = y_grid(0.25);
        assert!(blocking_report(&ScalarField::constant(&g, 1.0), &g, 0.05)
            .iter()
            .all(|o| *o == BlockingOutcome::Invaded));
        assert!(blocking_report(&ScalarField::constant(&g, 0.0), &g, 0.05)
            .iter()
            .all(|o| *o == BlockingOutcome::Blocked));
    }

    #[test]
    fn self_fit_recovers_shift() {
        let h = 0.2;
        let g = y_grid(h);
        let p = ClosedFormCubic::new(0.3);
        let c = p.speed();
        for (b, facing) in [(1, Facing::Outward), (2, Facing::Inward)] {
            let u = initial_front(&g, b, 14.3, &p, facing).unwrap();
            let (tau, d) = front_distance(&u, &g, b, &p, facing).unwrap();
            assert!(d <= 2.0 * h, "{d}");
            assert!((tau - 14.3 / c).abs() <= h / c, "{tau}");
        }
    }

    #[test]
    fn tail_rate_of_planar_front() {
        let g = y_grid(0.1);
        let p = ClosedFormCubic::new(0.3);
        let u = initial_front(&g, 0, 14.0, &p, Facing::Inward).unwrap();
        let r_one = tail_fit(&u, &g, 0, TailSide::One).unwrap();
        assert!((r_one - std::f64::consts::FRAC_1_SQRT_2).abs() <= 0.05 * std::f64::consts::FRAC_1_SQRT_2);
        let r_zero = tail_fit(&u, &g, 0, TailSide::Zero).unwrap();
        assert!((r_zero - std::f64::consts::FRAC_1_SQRT_2).abs() <= 0.05 * std::f64::consts::FRAC_1_SQRT_2);
        assert_eq!(tail_fit(&ScalarField::constant(&g, 1.0), &g, 0, TailSide::One), Ok(f64::INFINITY));
    }
}
