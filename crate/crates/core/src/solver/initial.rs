use super::{ScalarField, SolverError};
use crate::geometry::{MaskedGrid, Tag};
use crate::wave1d::{profile_width, FrontProfile};

/// Orientation of a seeded front relative to the junction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Facing {
    /// State 1 toward the far end of the branch, front moving toward the junction.
    Inward,
    /// State 1 toward the junction, front moving away from it.
    Outward,
}

/// Axial coordinate of `cell` in branch `b`'s strip, including the part of
/// the strip inside the junction disc; `None` off the strip.
fn strip_coordinate(grid: &MaskedGrid, b: usize, cell: usize) -> Option<f64> {
    match grid.tag(cell) {
        Tag::Branch(k) if k == b => Some(grid.axial(cell)),
        Tag::Branch(_) => None,
        Tag::Junction => {
            let branch = &grid.domain().branches[b];
            let p = grid.center(cell);
            branch.contains(p).then(|| branch.local(p).0.max(0.0))
        }
    }
}

fn check_branch(grid: &MaskedGrid, b: usize) -> Result<f64, SolverError> {
    grid.domain()
        .branches
        .get(b)
        .map(|br| br.length)
        .ok_or_else(|| SolverError::Argument(format!("branch {} does not exist", b + 1)))
}

fn front_value(p: &dyn FrontProfile, s: f64, s0: f64, facing: Facing) -> f64 {
    match facing {
        Facing::Inward => p.phi(s0 - s),
        Facing::Outward => p.phi(s - s0),
    }
}

/// Planar profile composed with the axial coordinate of branch `b`, centered
/// at `s0`; cells off the branch strip take the mouth value.
pub fn initial_front(
    grid: &MaskedGrid,
    b: usize,
    s0: f64,
    p: &dyn FrontProfile,
    facing: Facing,
) -> Result<ScalarField, SolverError> {
    let len = check_branch(grid, b)?;
    let m = profile_width(p, 0.01).map_err(|e| SolverError::Argument(e.to_string()))?;
    if !(s0 > m && s0 < len - m) {
        return Err(SolverError::Argument(format!(
            "front position {s0} outside ({m:.4}, {:.4})",
            len - m
        )));
    }
    let values = (0..grid.len())
        .map(|c| {
            let s = strip_coordinate(grid, b, c).unwrap_or(0.0);
            front_value(p, s, s0, facing).clamp(0.0, 1.0)
        })
        .collect();
    Ok(ScalarField::new(0.0, values))
}

/// Inward front lowered by decaying floors at both ends of branch `b`:
/// `max(phi(s0 - s) - amp exp(-rate (s - offset)) - far exp(-rate (len - s)), 0)`,
/// zero elsewhere. `far` is twice the amplitude that cancels the outward
/// slope at the closed far wall, so that slope is nonpositive.
pub fn emanation_seed(
    grid: &MaskedGrid,
    b: usize,
    s0: f64,
    p: &dyn FrontProfile,
    amp: f64,
    rate: f64,
    offset: f64,
) -> Result<ScalarField, SolverError> {
    let len = check_branch(grid, b)?;
    if !(amp >= 0.0 && rate > 0.0 && s0 > offset && s0 < len) {
        return Err(SolverError::Argument("emanation seed needs amp >= 0, rate > 0, offset < s0 < length".into()));
    }
    let far = 2.0 * (amp * (-rate * (len - offset)).exp() + p.dphi(s0 - len).abs() / rate);
    let values = (0..grid.len())
        .map(|c| match strip_coordinate(grid, b, c) {
            Some(s) => {
                let floor = amp * (-rate * (s - offset)).exp() + far * (-rate * (len - s)).exp();
                (p.phi(s0 - s) - floor).max(0.0)
            }
            None => 0.0,
        })
        .collect();
    Ok(ScalarField::new(0.0, values))
}

/// `level` on cells of branch `b` with axial coordinate in `[sa, sb]`, `floor` elsewhere.
pub fn initial_block(
    grid: &MaskedGrid,
    b: usize,
    (sa, sb): (f64, f64),
    level: f64,
    floor: f64,
) -> Result<ScalarField, SolverError> {
    let len = check_branch(grid, b)?;
    let l = grid.junction_radius();
    if !(sa < sb) {
        return Err(SolverError::Argument(format!("empty slab [{sa}, {sb}]")));
    }
    if sa < l || sb > len {
        return Err(SolverError::Argument(format!("slab [{sa}, {sb}] not inside [{l}, {len}]")));
    }
    let values = (0..grid.len())
        .map(|c| match grid.tag(c) {
            Tag::Branch(k) if k == b && (sa..=sb).contains(&grid.axial(c)) => level,
            _ => floor,
        })
        .collect();
    Ok(ScalarField::new(0.0, values))
}

/// `level` on the far part `s > cut` of each listed branch, `floor` elsewhere.
pub fn initial_plateau(
    grid: &MaskedGrid,
    cuts: &[(usize, f64)],
    level: f64,
    floor: f64,
) -> Result<ScalarField, SolverError> {
    for &(b, _) in cuts {
        check_branch(grid, b)?;
    }
    let values = (0..grid.len())
        .map(|c| match grid.tag(c) {
            Tag::Branch(k) if cuts.iter().any(|&(b, s)| b == k && grid.axial(c) > s) => level,
            _ => floor,
        })
        .collect();
    Ok(ScalarField::new(0.0, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BranchSpec, DomainSpec, WidthProfile};
    use crate::wave1d::ClosedFormCubic;

    fn y_grid() -> MaskedGrid {
        let b = |deg| BranchSpec::at_angle(deg, WidthProfile::Constant(2.0), 30.0);
        let spec = DomainSpec::new(4.0, vec![b(90.0), b(210.0), b(330.0)], None).unwrap();
        MaskedGrid::build(&spec, 0.25).unwrap()
    }

    #[test]
    fn front_is_planar_across_the_branch() {
        let g = y_grid();
        let p = ClosedFormCubic::new(0.3);
        let u = initial_front(&g, 0, 15.0, &p, Facing::Inward).unwrap();
        let mut by_s: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
        for &c in g.branch_cells(0) {
            by_s.entry((g.axial(c) * 1e6).round() as i64).or_default().push(u.values[c]);
        }
        for vals in by_s.values() {
            assert!(vals.iter().all(|v| *v == vals[0]));
        }
    }

    #[test]
    fn front_tail_values() {
        let g = y_grid();
        let p = ClosedFormCubic::new(0.3);
        let s0 = 15.0;
        let u = initial_front(&g, 0, s0, &p, Facing::Inward).unwrap();
        for &c in g.branch_cells(1) {
            assert_eq!(u.values[c], p.phi(s0));
            assert!(u.values[c] <= 0.01);
        }
        let out = initial_front(&g, 0, s0, &p, Facing::Outward).unwrap();
        for &c in g.branch_cells(2) {
            assert_eq!(out.values[c], p.phi(-s0));
            assert!(out.values[c] >= 0.99);
        }
        assert!(initial_front(&g, 0, 2.0, &p, Facing::Inward).is_err());
        assert!(initial_front(&g, 0, 28.0, &p, Facing::Inward).is_err());
    }

    #[test]
    fn block_and_mass() {
        let g = y_grid();
        let u = initial_block(&g, 1, (10.0, 14.0), 0.95, 0.0).unwrap();
        let slab: Vec<usize> =
            g.branch_cells(1).iter().cloned().filter(|&c| (10.0..=14.0).contains(&g.axial(c))).collect();
        for c in 0..g.len() {
            let want = if slab.contains(&c) { 0.95 } else { 0.0 };
            assert_eq!(u.values[c], want);
        }
        let h = g.spacing();
        let mass = 0.95 * slab.len() as f64 * h * h;
        assert!((u.mass(&g) - mass).abs() < 1e-12);
        let v = initial_block(&g, 1, (10.0, 14.0), 0.95, 0.05).unwrap();
        let want = mass + 0.05 * (g.len() - slab.len()) as f64 * h * h;
        assert!((v.mass(&g) - want).abs() < 1e-12 * want);
        assert!(initial_block(&g, 1, (14.0, 10.0), 0.95, 0.0).is_err());
        assert!(initial_block(&g, 1, (2.0, 10.0), 0.95, 0.0).is_err());
    }

    #[test]
    fn plateau_levels() {
        let g = y_grid();
        let u = initial_plateau(&g, &[(0, 10.0), (2, 12.0)], 1.0, 0.05).unwrap();
        for c in 0..g.len() {
            let high = match g.tag(c) {
                Tag::Branch(0) => g.axial(c) > 10.0,
                Tag::Branch(2) => g.axial(c) > 12.0,
                _ => false,
            };
            assert_eq!(u.values[c], if high { 1.0 } else { 0.05 });
        }
    }

    #[test]
    fn seed_is_zero_near_the_junction() {
        let g = y_grid();
        let p = ClosedFormCubic::new(0.3);
        let u = emanation_seed(&g, 0, 15.0, &p, 0.06, 0.37, 4.0).unwrap();
        for c in 0..g.len() {
            if g.center(c)[0].hypot(g.center(c)[1]) < 5.0 {
                assert_eq!(u.values[c], 0.0);
            }
        }
        assert!(u.max() > 0.99);
    }
}
