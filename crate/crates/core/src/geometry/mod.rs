//! Branched planar domains: a junction region joined to straight-axis
//! branches of variable width, discretized on a masked uniform grid.

mod grid;

pub use grid::{read_grid_file, write_grid_file, GridFile, MaskedGrid, Tag, CLOSED};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    Spec(String),
    #[error("branches {0} and {1} overlap outside the junction disc near ({2:.3}, {3:.3})")]
    Overlap(usize, usize, f64, f64),
    #[error("mask is disconnected: {0} is cut off")]
    Disconnected(String),
    #[error("grid spacing {0} too coarse: need at least 6 cells across width {1}")]
    Spacing(f64, f64),
    #[error("point ({0}, {1}) lies outside the domain")]
    Exterior(f64, f64),
    #[error("grid file: {0}")]
    File(String),
}

/// Width of a branch as a function of the axial coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum WidthProfile {
    Constant(f64),
    /// `winf + (w0 - winf) (1 - tanh(s / ell)) / 2`
    Tanh { w0: f64, winf: f64, ell: f64 },
    /// Piecewise linear through `(s[k], w[k])`, constant beyond the ends.
    Table { s: Vec<f64>, w: Vec<f64> },
}

impl WidthProfile {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            WidthProfile::Constant(w) => *w,
            WidthProfile::Tanh { w0, winf, ell } => winf + (w0 - winf) * (1.0 - (s / ell).tanh()) / 2.0,
            WidthProfile::Table { s: xs, w } => {
                if s <= xs[0] {
                    return w[0];
                }
                for k in 1..xs.len() {
                    if s <= xs[k] {
                        let t = (s - xs[k - 1]) / (xs[k] - xs[k - 1]);
                        return w[k - 1] + t * (w[k] - w[k - 1]);
                    }
                }
                w[w.len() - 1]
            }
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match self {
            WidthProfile::Constant(_) => 0.0,
            WidthProfile::Tanh { w0, winf, ell } => {
                let sech = 1.0 / (s / ell).cosh();
                -(w0 - winf) * sech * sech / (2.0 * ell)
            }
            WidthProfile::Table { s: xs, w } => {
                for k in 1..xs.len() {
                    if s >= xs[k - 1] && s < xs[k] {
                        return (w[k] - w[k - 1]) / (xs[k] - xs[k - 1]);
                    }
                }
                0.0
            }
        }
    }

    /// `(inf, sup)` over all `s`.
    pub fn range(&self) -> (f64, f64) {
        match self {
            WidthProfile::Constant(w) => (*w, *w),
            WidthProfile::Tanh { w0, winf, .. } => (w0.min(*winf), w0.max(*winf)),
            WidthProfile::Table { w, .. } => (
                w.iter().cloned().fold(f64::INFINITY, f64::min),
                w.iter().cloned().fold(0.0, f64::max),
            ),
        }
    }

    fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::Spec(m));
        match self {
            WidthProfile::Constant(w) if !(*w > 0.0 && w.is_finite()) => bad(format!("width {w} must be positive")),
            WidthProfile::Tanh { w0, winf, ell } => {
                if !(*w0 > 0.0 && *winf > 0.0 && *ell > 0.0) || !(w0.is_finite() && winf.is_finite() && ell.is_finite()) {
                    bad("tanh width needs positive finite w0, winf, ell".into())
                } else {
                    Ok(())
                }
            }
            WidthProfile::Table { s, w } => {
                if s.len() != w.len() || s.len() < 2 {
                    bad("width table needs matching s and w lists of length >= 2".into())
                } else if s.windows(2).any(|p| !(p[1] > p[0])) {
                    bad("width table abscissae must increase".into())
                } else if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    bad("width table values must be positive".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// A straight-axis branch `{x_i + s e_i + tau e_i^perp : 0 < s <= length, |tau| < w(s)/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSpec {
    pub direction: [f64; 2],
    pub shift: [f64; 2],
    pub width: WidthProfile,
    pub length: f64,
}

/// `(cos, sin)` of an angle in degrees, reduced to the first quadrant so that
/// mirror-image angles give exactly mirrored vectors.
pub fn unit_from_degrees(deg: f64) -> [f64; 2] {
    let a = deg.rem_euclid(360.0);
    let (q, r) = ((a / 90.0).floor() as i32, a % 90.0);
    let (c, s) = if r <= 45.0 {
        let t = r.to_radians();
        (t.cos(), t.sin())
    } else {
        let t = (90.0 - r).to_radians();
        (t.sin(), t.cos())
    };
    match q {
        0 => [c, s],
        1 => [-s, c],
        2 => [-c, -s],
        _ => [s, -c],
    }
}

impl BranchSpec {
    pub fn new(direction: [f64; 2], shift: [f64; 2], width: WidthProfile, length: f64) -> Self {
        Self { direction, shift, width, length }
    }

    pub fn at_angle(deg: f64, width: WidthProfile, length: f64) -> Self {
        Self::new(unit_from_degrees(deg), [0.0, 0.0], width, length)
    }

    /// Unit normal `e^perp`, the direction of positive `tau`.
    pub fn normal(&self) -> [f64; 2] {
        [-self.direction[1], self.direction[0]]
    }

    /// Axial and transverse coordinates of `p`.
    pub fn local(&self, p: [f64; 2]) -> (f64, f64) {
        let d = [p[0] - self.shift[0], p[1] - self.shift[1]];
        let e = self.direction;
        (d[0] * e[0] + d[1] * e[1], -d[0] * e[1] + d[1] * e[0])
    }

    pub fn point(&self, s: f64, tau: f64) -> [f64; 2] {
        let n = self.normal();
        [
            self.shift[0] + s * self.direction[0] + tau * n[0],
            self.shift[1] + s * self.direction[1] + tau * n[1],
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (s, tau) = self.local(p);
        s > 0.0 && s <= self.length && tau.abs() < self.width.eval(s) / 2.0
    }

    fn validate(&self) -> Result<(), GeometryError> {
        let n = self.direction[0].hypot(self.direction[1]);
        if (n - 1.0).abs() > 1e-12 {
            return Err(GeometryError::Spec(format!("branch direction has norm {n}, expected 1")));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(GeometryError::Spec(format!("branch length {} must be positive", self.length)));
        }
        self.width.validate()
    }
}

/// How a channel is continued to negative axial coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extension {
    /// Continue the width formula (constant tables hold their first value).
    Natural,
    /// Freeze the width at its `s = 0` value.
    Frozen,
}

/// A branch continued to an unbounded straight-axis channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedChannelSpec {
    pub base: BranchSpec,
    pub extension: Extension,
}

impl ExtendedChannelSpec {
    pub fn new(base: BranchSpec, extension: Extension) -> Self {
        Self { base, extension }
    }

    pub fn width(&self, s: f64) -> f64 {
        if s >= 0.0 || self.extension == Extension::Natural {
            self.base.width.eval(s)
        } else {
            self.base.width.eval(0.0)
        }
    }

    pub fn width_derivative(&self, s: f64) -> f64 {
        if s >= 0.0 || self.extension == Extension::Natural {
            self.base.width.derivative(s)
        } else {
            0.0
        }
    }

    /// True for constant-width channels.
    pub fn is_straight(&self) -> bool {
        matches!(self.base.width, WidthProfile::Constant(_))
    }
}

/// Junction disc of radius `junction_radius` around the origin plus branches.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub junction_radius: f64,
    pub branches: Vec<BranchSpec>,
    pub polygon: Option<Vec<[f64; 2]>>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn in_polygon(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    if poly.len() < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

impl DomainSpec {
    pub fn new(junction_radius: f64, branches: Vec<BranchSpec>, polygon: Option<Vec<[f64; 2]>>) -> Result<Self, GeometryError> {
        let d = Self { junction_radius, branches, polygon };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let l = self.junction_radius;
        if !(l > 0.0 && l.is_finite()) {
            return Err(GeometryError::Spec(format!("junction radius {l} must be positive")));
        }
        if self.branches.len() < 2 {
            return Err(GeometryError::Spec(format!("need at least 2 branches, got {}", self.branches.len())));
        }
        for (i, b) in self.branches.iter().enumerate() {
            b.validate().map_err(|e| GeometryError::Spec(format!("branch {}: {e}", i + 1)))?;
            if b.length <= l {
                return Err(GeometryError::Spec(format!(
                    "branch {} length {} does not reach past the junction radius {l}",
                    i + 1,
                    b.length
                )));
            }
        }
        if let Some(poly) = &self.polygon {
            if poly.len() < 3 {
                return Err(GeometryError::Spec("junction polygon needs at least 3 vertices".into()));
            }
            if let Some(v) = poly.iter().find(|v| v[0].hypot(v[1]) > l + 1e-12) {
                return Err(GeometryError::Spec(format!(
                    "junction polygon vertex ({}, {}) lies outside radius {l}",
                    v[0], v[1]
                )));
            }
        }
        self.check_disjoint()
    }

    fn check_disjoint(&self) -> Result<(), GeometryError> {
        let l = self.junction_radius;
        for (i, bi) in self.branches.iter().enumerate() {
            let (wmin, _) = bi.width.range();
            let ds = (wmin / 8.0).min(0.25);
            let ns = (bi.length / ds).ceil() as usize;
            for k in 1..=ns {
                let s = (k as f64 * ds).min(bi.length);
                let half = bi.width.eval(s) / 2.0;
                for m in 0..=8 {
                    let tau = half * (-0.99 + 1.98 * m as f64 / 8.0);
                    let p = bi.point(s, tau);
                    if p[0].hypot(p[1]) < l {
                        continue;
                    }
                    for (j, bj) in self.branches.iter().enumerate() {
                        if j != i && bj.contains(p) {
                            return Err(GeometryError::Overlap(i + 1, j + 1, p[0], p[1]));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// The junction polygon: explicit, or the convex hull of the branch mouths.
    pub fn junction_polygon(&self) -> Vec<[f64; 2]> {
        if let Some(p) = &self.polygon {
            return p.clone();
        }
        let mut pts = Vec::new();
        for b in &self.branches {
            let half = b.width.eval(0.0) / 2.0;
            pts.push(b.point(0.0, half));
            pts.push(b.point(0.0, -half));
        }
        convex_hull(pts)
    }

    /// Membership of the closed junction polygon or some branch.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.branches.iter().any(|b| b.contains(p)) || in_polygon(&self.junction_polygon(), p)
    }

    /// Branch index with axial and transverse coordinates, for points outside
    /// the junction disc that lie in exactly one branch.
    pub fn branch_coordinates(&self, p: [f64; 2]) -> Option<(usize, f64, f64)> {
        if p[0].hypot(p[1]) < self.junction_radius {
            return None;
        }
        let mut hit = None;
        for (i, b) in self.branches.iter().enumerate() {
            if b.contains(p) {
                if hit.is_some() {
                    return None;
                }
                let (s, tau) = b.local(p);
                hit = Some((i, s, tau));
            }
        }
        hit
    }

    /// Axial distance through the junction center; junction points sit at the center.
    pub fn skeleton_distance(&self, a: [f64; 2], b: [f64; 2]) -> Result<f64, GeometryError> {
        for p in [a, b] {
            if !self.contains(p) {
                return Err(GeometryError::Exterior(p[0], p[1]));
            }
        }
        if a == b {
            return Ok(0.0);
        }
        let place = |p: [f64; 2]| {
            self.skeleton_branch(p).map(|(i, s)| {
                let sh = self.branches[i].shift;
                (i, s, sh[0].hypot(sh[1]))
            })
        };
        Ok(match (place(a), place(b)) {
            (Some((i, sa, _)), Some((j, sb, _))) if i == j => (sa - sb).abs(),
            (Some((_, sa, ra)), Some((_, sb, rb))) => sa + ra + sb + rb,
            (Some((_, s, r)), None) | (None, Some((_, s, r))) => s + r,
            (None, None) => 0.0,
        })
    }

    /// Branch used to place a point on the skeleton: the first branch strip
    /// containing it, also inside the junction disc.
    fn skeleton_branch(&self, p: [f64; 2]) -> Option<(usize, f64)> {
        if let Some((i, s, _)) = self.branch_coordinates(p) {
            return Some((i, s));
        }
        self.branches
            .iter()
            .enumerate()
            .find(|(_, b)| b.contains(p))
            .map(|(i, b)| (i, b.local(p).0))
    }

    /// Distance from a point to the junction center along the skeleton.
    pub fn center_distance(&self, p: [f64; 2]) -> f64 {
        match self.skeleton_branch(p) {
            Some((i, s)) => {
                let sh = self.branches[i].shift;
                s + sh[0].hypot(sh[1])
            }
            None => 0.0,
        }
    }

    /// Smallest branch width over each branch's simulated extent.
    pub fn min_width(&self) -> f64 {
        self.branches
            .iter()
            .map(|b| {
                (0..=200)
                    .map(|k| b.width.eval(b.length * k as f64 / 200.0))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn y_junction(length: f64) -> DomainSpec {
        let b = |a| BranchSpec::at_angle(a, WidthProfile::Constant(2.0), length);
        DomainSpec::new(4.0, vec![b(90.0), b(210.0), b(330.0)], None).unwrap()
    }

    #[test]
    fn angles_are_mirror_exact() {
        let a = unit_from_degrees(210.0);
        let b = unit_from_degrees(330.0);
        assert_eq!(a[0], -b[0]);
        assert_eq!(a[1], b[1]);
        assert_eq!(unit_from_degrees(90.0), [0.0, 1.0]);
        assert_eq!(unit_from_degrees(180.0), [-1.0, 0.0]);
        let c = unit_from_degrees(33.0);
        assert!((c[0] - 33f64.to_radians().cos()).abs() < 1e-15);
    }

    #[test]
    fn branch_coordinate_examples() {
        let d = DomainSpec::new(
            2.0,
            vec![
                BranchSpec::at_angle(0.0, WidthProfile::Constant(2.0), 20.0),
                BranchSpec::at_angle(180.0, WidthProfile::Constant(2.0), 20.0),
            ],
            None,
        )
        .unwrap();
        assert_eq!(d.branch_coordinates([5.0, 0.3]), Some((0, 5.0, 0.3)));
        assert_eq!(d.branch_coordinates([0.0, 0.0]), None);
        assert_eq!(d.branch_coordinates([5.0, 1.5]), None);

        let y = y_junction(40.0);
        let e = y.branches[1].direction;
        // rotate-then-project oracle: rotating by -210 degrees maps the axis to +x
        let p = [6.0 * e[0], 6.0 * e[1]];
        let (c, s) = ((-210f64).to_radians().cos(), (-210f64).to_radians().sin());
        let rotated = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        let (i, sa, tau) = y.branch_coordinates(p).unwrap();
        assert_eq!(i, 1);
        assert!((sa - rotated[0]).abs() < 1e-12 && (sa - 6.0).abs() < 1e-12);
        assert!((tau - rotated[1]).abs() < 1e-12 && tau.abs() < 1e-12);
    }

    #[test]
    fn overlapping_branches_rejected() {
        let b = |a| BranchSpec::at_angle(a, WidthProfile::Constant(2.0), 30.0);
        let r = DomainSpec::new(4.0, vec![b(0.0), b(5.0)], None);
        assert!(matches!(r, Err(GeometryError::Overlap(..))));
    }

    #[test]
    fn skeleton_distance_examples() {
        let y = y_junction(40.0);
        let p = |i: usize, s: f64| y.branches[i].point(s, 0.0);
        assert!((y.skeleton_distance(p(0, 3.0), p(0, 10.0)).unwrap() - 7.0).abs() < 1e-12);
        let d = y.skeleton_distance(p(1, 5.0), p(2, 5.0)).unwrap();
        assert!(d >= 10.0 - 1e-12 && d <= 5.0 + 5.0 + 2.0 * 4.0);
        assert_eq!(y.skeleton_distance(p(2, 7.0), p(2, 7.0)).unwrap(), 0.0);
        assert!(y.skeleton_distance([30.0, 30.0], p(0, 5.0)).is_err());
    }

    #[test]
    fn asymptotic_width_converges() {
        let w = WidthProfile::Tanh { w0: 2.0, winf: 3.0, ell: 2.0 };
        for k in 0..200 {
            let s = 6.0 + k as f64 * 0.2;
            assert!((w.eval(s) - 3.0).abs() <= 2.0 * (-s / 2.0).exp());
        }
        let fd = (w.eval(1.0 + 1e-6) - w.eval(1.0 - 1e-6)) / 2e-6;
        assert!((fd - w.derivative(1.0)).abs() < 1e-8);
    }

    #[test]
    fn extension_is_continuous() {
        let base = BranchSpec::at_angle(0.0, WidthProfile::Tanh { w0: 2.0, winf: 3.0, ell: 2.0 }, 20.0);
        for ext in [Extension::Natural, Extension::Frozen] {
            let ch = ExtendedChannelSpec::new(base.clone(), ext);
            assert!((ch.width(-1e-12) - ch.width(0.0)).abs() < 1e-10);
            assert!((-50..0).all(|k| ch.width(k as f64) <= 3.0));
        }
    }

    fn triple() -> impl Strategy<Value = Vec<(usize, f64, f64)>> {
        proptest::collection::vec((0usize..4, 0.0f64..30.0, -0.9f64..0.9), 3)
    }

    proptest! {
        #[test]
        fn skeleton_distance_is_a_pseudometric(pts in triple()) {
            let y = y_junction(40.0);
            let map = |&(i, s, t): &(usize, f64, f64)| -> [f64; 2] {
                if i == 3 { [t, t * 0.5] } else { y.branches[i].point(s + 0.01, t) }
            };
            let p: Vec<[f64; 2]> = pts.iter().map(map).collect();
            let d = |a: [f64; 2], b: [f64; 2]| y.skeleton_distance(a, b).unwrap();
            prop_assert!((d(p[0], p[1]) - d(p[1], p[0])).abs() < 1e-12);
            prop_assert!(d(p[0], p[2]) <= d(p[0], p[1]) + d(p[1], p[2]) + 1e-12);
            let euclid = (p[0][0] - p[1][0]).hypot(p[0][1] - p[1][1]);
            prop_assert!(d(p[0], p[1]) >= euclid - 2.0 * 4.0 - 1e-12);
        }
    }
}
