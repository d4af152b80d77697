use std::collections::VecDeque;
use std::fmt::Write as _;

use super::{DomainSpec, GeometryError};

/// Neighbor slot value for a closed face.
pub const CLOSED: u32 = u32::MAX;

/// Region label of an interior cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Junction,
    Branch(usize),
}

/// Uniform Cartesian grid restricted to a domain.
///
/// Cells are indexed on the full box row-major (`j * nx + i`, `j` upward) and
/// interior cells additionally get a compact index in the same order. Neighbor
/// slots are ordered east, west, north, south.
#[derive(Debug, Clone)]
pub struct MaskedGrid {
    h: f64,
    nx: usize,
    ny: usize,
    ix0: i64,
    iy0: i64,
    mask: Vec<bool>,
    cells: Vec<usize>,
    neighbors: Vec<[u32; 4]>,
    tags: Vec<Tag>,
    axial: Vec<f64>,
    centers: Vec<[f64; 2]>,
    branch_cells: Vec<Vec<usize>>,
    domain: DomainSpec,
}

impl MaskedGrid {
    /// Meshes `spec` with spacing `h`.
    pub fn build(spec: &DomainSpec, h: f64) -> Result<Self, GeometryError> {
        let wmin = spec.min_width();
        if !(h > 0.0) || h > wmin / 6.0 + 1e-12 {
            return Err(GeometryError::Spacing(h, wmin));
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut grow = |p: [f64; 2]| {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        };
        for v in spec.junction_polygon() {
            grow(v);
        }
        for b in &spec.branches {
            let (_, wmax) = b.width.range();
            for s in [0.0, b.length] {
                grow(b.point(s, wmax / 2.0));
                grow(b.point(s, -wmax / 2.0));
            }
        }
        let ix0 = (lo[0] / h).floor() as i64 - 1;
        let iy0 = (lo[1] / h).floor() as i64 - 1;
        let nx = ((hi[0] / h).ceil() as i64 + 1 - ix0) as usize;
        let ny = ((hi[1] / h).ceil() as i64 + 1 - iy0) as usize;

        let poly = spec.junction_polygon();
        let center = |i: usize, j: usize| -> [f64; 2] {
            [((ix0 + i as i64) as f64 + 0.5) * h, ((iy0 + j as i64) as f64 + 0.5) * h]
        };
        let mut mask = vec![false; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let p = center(i, j);
                mask[j * nx + i] = spec.branches.iter().any(|b| b.contains(p)) || super::in_polygon(&poly, p);
            }
        }
        let cells: Vec<usize> = (0..nx * ny).filter(|&g| mask[g]).collect();
        let mut index = vec![CLOSED; nx * ny];
        for (k, &g) in cells.iter().enumerate() {
            index[g] = k as u32;
        }
        let mut neighbors = Vec::with_capacity(cells.len());
        let mut tags = Vec::with_capacity(cells.len());
        let mut axial = Vec::with_capacity(cells.len());
        let mut centers = Vec::with_capacity(cells.len());
        let mut branch_cells = vec![Vec::new(); spec.branches.len()];
        for (k, &g) in cells.iter().enumerate() {
            let (i, j) = (g % nx, g / nx);
            let look = |di: i64, dj: i64| -> u32 {
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                    CLOSED
                } else {
                    index[b as usize * nx + a as usize]
                }
            };
            neighbors.push([look(1, 0), look(-1, 0), look(0, 1), look(0, -1)]);
            let p = center(i, j);
            centers.push(p);
            match spec.branch_coordinates(p) {
                Some((b, s, _)) => {
                    tags.push(Tag::Branch(b));
                    axial.push(s);
                    branch_cells[b].push(k);
                }
                None => {
                    tags.push(Tag::Junction);
                    axial.push(f64::NAN);
                }
            }
        }
        let grid = Self {
            h,
            nx,
            ny,
            ix0,
            iy0,
            mask,
            cells,
            neighbors,
            tags,
            axial,
            centers,
            branch_cells,
            domain: spec.clone(),
        };
        grid.check_connected()?;
        Ok(grid)
    }

    fn components(&self, keep: impl Fn(usize) -> bool) -> (Vec<u32>, u32) {
        let n = self.cells.len();
        let mut label = vec![u32::MAX; n];
        let mut count = 0;
        for start in 0..n {
            if !keep(start) || label[start] != u32::MAX {
                continue;
            }
            label[start] = count;
            let mut queue = VecDeque::from([start]);
            while let Some(c) = queue.pop_front() {
                for &nb in &self.neighbors[c] {
                    if nb != CLOSED && keep(nb as usize) && label[nb as usize] == u32::MAX {
                        label[nb as usize] = count;
                        queue.push_back(nb as usize);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    fn check_connected(&self) -> Result<(), GeometryError> {
        if self.cells.is_empty() {
            return Err(GeometryError::Disconnected("the whole domain".into()));
        }
        let name = |t: Tag| match t {
            Tag::Junction => "the junction".to_string(),
            Tag::Branch(b) => format!("branch {}", b + 1),
        };
        let (label, count) = self.components(|_| true);
        if count > 1 {
            let k = label.iter().position(|&l| l != 0).unwrap();
            return Err(GeometryError::Disconnected(name(self.tags[k])));
        }
        for b in 0..self.branch_cells.len() {
            if self.branch_cells[b].is_empty() {
                return Err(GeometryError::Disconnected(format!("branch {} (no cells)", b + 1)));
            }
            // Rim cells may reach their branch only through the junction.
            let (_, count) = self.components(|c| matches!(self.tags[c], Tag::Junction) || self.tags[c] == Tag::Branch(b));
            if count > 1 {
                return Err(GeometryError::Disconnected(format!("part of branch {}", b + 1)));
            }
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }
    /// Lower-left corner of the box.
    pub fn origin(&self) -> [f64; 2] {
        [self.ix0 as f64 * self.h, self.iy0 as f64 * self.h]
    }
    pub fn len(&self) -> usize {
        self.cells.len()
    }
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
    /// Box index of each interior cell.
    pub fn box_index(&self) -> &[usize] {
        &self.cells
    }
    pub fn neighbors(&self, cell: usize) -> [u32; 4] {
        self.neighbors[cell]
    }
    pub fn neighbor_table(&self) -> &[[u32; 4]] {
        &self.neighbors
    }
    pub fn center(&self, cell: usize) -> [f64; 2] {
        self.centers[cell]
    }
    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }
    pub fn tag(&self, cell: usize) -> Tag {
        self.tags[cell]
    }
    /// Axial coordinate in the cell's branch; NaN for junction cells.
    pub fn axial(&self, cell: usize) -> f64 {
        self.axial[cell]
    }
    pub fn branch_count(&self) -> usize {
        self.branch_cells.len()
    }
    /// Compact indices of cells tagged with branch `b`.
    pub fn branch_cells(&self, b: usize) -> &[usize] {
        &self.branch_cells[b]
    }
    pub fn junction_radius(&self) -> f64 {
        self.domain.junction_radius
    }
    /// The domain this grid was built from.
    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    /// A face is open iff both cells are interior.
    pub fn face_open(&self, cell: usize, slot: usize) -> bool {
        self.neighbors[cell][slot] != CLOSED
    }

    /// Interior area estimate `count * h^2`.
    pub fn area(&self) -> f64 {
        self.cells.len() as f64 * self.h * self.h
    }
}

/// Parsed portable grid file.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: [f64; 2],
    pub mask: Vec<bool>,
    pub time: Option<f64>,
    pub values: Option<Vec<f64>>,
}

/// Plain-text mask (rows bottom to top, `0`/`1` per cell) with an optional
/// snapshot payload of one value per interior cell in compact order.
pub fn write_grid_file(grid: &MaskedGrid, snapshot: Option<(f64, &[f64])>) -> String {
    let mut s = String::new();
    let o = grid.origin();
    let _ = writeln!(s, "branchfront-grid 1");
    let _ = writeln!(s, "nx {}", grid.nx);
    let _ = writeln!(s, "ny {}", grid.ny);
    let _ = writeln!(s, "h {:?}", grid.h);
    let _ = writeln!(s, "origin {:?} {:?}", o[0], o[1]);
    let _ = writeln!(s, "cells {}", grid.len());
    let _ = writeln!(s, "mask");
    for j in 0..grid.ny {
        let row: String = (0..grid.nx).map(|i| if grid.mask[j * grid.nx + i] { '1' } else { '0' }).collect();
        let _ = writeln!(s, "{row}");
    }
    if let Some((t, values)) = snapshot {
        let _ = writeln!(s, "time {t:?}");
        let _ = writeln!(s, "values");
        for v in values {
            let _ = writeln!(s, "{v:?}");
        }
    }
    s
}

struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), GeometryError> {
        let l = self
            .lines
            .get(self.pos)
            .ok_or_else(|| GeometryError::File(format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok((self.pos, l))
    }

    fn field(&mut self, key: &str) -> Result<Vec<&'a str>, GeometryError> {
        let (n, l) = self.next(key)?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(GeometryError::File(format!("line {n}: expected '{key}'")));
        }
        Ok(parts.collect())
    }

    fn number(&mut self, key: &str, k: usize) -> Result<f64, GeometryError> {
        let v = self.field(key)?;
        v.get(k)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| GeometryError::File(format!("line {}: bad number for '{key}'", self.pos)))
    }
}

pub fn read_grid_file(text: &str) -> Result<GridFile, GeometryError> {
    let err = GeometryError::File;
    let mut r = Lines { lines: text.lines().collect(), pos: 0 };
    let (n, magic) = r.next("header")?;
    if magic.trim() != "branchfront-grid 1" {
        return Err(err(format!("line {n}: not a grid file")));
    }
    let nx = r.number("nx", 0)? as usize;
    let ny = r.number("ny", 0)? as usize;
    let h = r.number("h", 0)?;
    let o = r.field("origin")?;
    let parse = |s: Option<&&str>| s.and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| err("bad origin".into()));
    let origin = [parse(o.first())?, parse(o.get(1))?];
    let cells = r.number("cells", 0)? as usize;
    r.field("mask")?;
    let mut mask = Vec::with_capacity(nx * ny);
    for _ in 0..ny {
        let (n, row) = r.next("mask row")?;
        if row.len() != nx {
            return Err(err(format!("line {n}: mask row has {} entries, expected {nx}", row.len())));
        }
        for ch in row.chars() {
            match ch {
                '0' => mask.push(false),
                '1' => mask.push(true),
                _ => return Err(err(format!("line {n}: mask entries must be 0 or 1"))),
            }
        }
    }
    if mask.iter().filter(|&&m| m).count() != cells {
        return Err(err("cell count does not match the mask".into()));
    }
    let (time, values) = match r.next("time") {
        Err(_) => (None, None),
        Ok((n, l)) => {
            let t = l
                .strip_prefix("time ")
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| err(format!("line {n}: expected 'time <t>'")))?;
            r.field("values")?;
            let mut v = Vec::with_capacity(cells);
            for _ in 0..cells {
                let (n, l) = r.next("value")?;
                v.push(l.trim().parse::<f64>().map_err(|_| err(format!("line {n}: bad value")))?);
            }
            (Some(t), Some(v))
        }
    };
    Ok(GridFile { nx, ny, h, origin, mask, time, values })
}

#[cfg(test)]
mod tests {
    use super::super::{BranchSpec, DomainSpec, WidthProfile};
    use super::*;

    fn channel(l: f64, length: f64) -> DomainSpec {
        DomainSpec::new(
            l,
            vec![
                BranchSpec::at_angle(0.0, WidthProfile::Constant(2.0), length),
                BranchSpec::at_angle(180.0, WidthProfile::Constant(2.0), length),
            ],
            None,
        )
        .unwrap()
    }

    fn y(length: f64) -> DomainSpec {
        let b = |a| BranchSpec::at_angle(a, WidthProfile::Constant(2.0), length);
        DomainSpec::new(4.0, vec![b(90.0), b(210.0), b(330.0)], None).unwrap()
    }

    #[test]
    fn straight_channel_columns() {
        let g = MaskedGrid::build(&channel(2.0, 10.0), 0.25).unwrap();
        let (nx, ny) = g.dims();
        let mut cols = vec![0usize; nx];
        for &b in g.box_index() {
            cols[b % nx] += 1;
        }
        assert!(cols.iter().all(|&c| c == 0 || c == 8));
        assert_eq!(cols.iter().filter(|&&c| c == 8).count(), 80);
        let ymin = g.centers().iter().map(|c| c[1]).fold(f64::INFINITY, f64::min);
        let ymax = g.centers().iter().map(|c| c[1]).fold(f64::NEG_INFINITY, f64::max);
        for k in 0..g.len() {
            let c = g.center(k);
            if c[1] == ymin {
                assert!(!g.face_open(k, 3));
            }
            if c[1] == ymax {
                assert!(!g.face_open(k, 2));
            }
        }
        assert!(ny >= 8);
    }

    #[test]
    fn y_junction_tags_match_oracle() {
        let spec = y(40.0);
        let g = MaskedGrid::build(&spec, 0.1).unwrap();
        let (nx, ny) = g.dims();
        let o = g.origin();
        let h = g.spacing();
        // Membership oracle evaluated on every box cell center.
        for j in 0..ny {
            for i in 0..nx {
                let p = [o[0] + (i as f64 + 0.5) * h, o[1] + (j as f64 + 0.5) * h];
                let inside = spec.branches.iter().any(|b| {
                    let (s, t) = b.local(p);
                    s > 0.0 && s <= b.length && t.abs() < 1.0
                }) || spec.contains(p);
                assert_eq!(g.mask()[j * nx + i], inside);
            }
        }
        let mut seen = [false; 3];
        for k in 0..g.len() {
            let c = g.center(k);
            let r = c[0].hypot(c[1]);
            match g.tag(k) {
                Tag::Junction => assert!(r < 4.0 + 1e-9 || spec.branch_coordinates(c).is_none()),
                Tag::Branch(b) => {
                    assert!(r >= 4.0);
                    seen[b] = true;
                    assert_eq!(spec.branch_coordinates(c).unwrap().0, b);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn faces_open_iff_both_interior() {
        let g = MaskedGrid::build(&y(12.0), 0.25).unwrap();
        let (nx, _) = g.dims();
        for k in 0..g.len() {
            let b = g.box_index()[k];
            let nb = g.neighbors(k);
            let idx = [b + 1, b.wrapping_sub(1), b + nx, b.wrapping_sub(nx)];
            for slot in 0..4 {
                let other = idx[slot];
                let interior = other < g.mask().len() && g.mask()[other];
                assert_eq!(g.face_open(k, slot), interior);
                if interior {
                    assert_eq!(g.box_index()[nb[slot] as usize], other);
                }
            }
        }
    }

    #[test]
    fn oblique_rim_cells_are_accepted() {
        let angle = 284.2707605293887;
        let b = |deg: f64| BranchSpec::at_angle(deg, WidthProfile::Constant(2.0), 6.0);
        let spec = DomainSpec::new(3.0, vec![b(angle), b(angle + 150.0), b(angle + 240.0)], None).unwrap();
        let g = MaskedGrid::build(&spec, 0.17087906010527326).unwrap();
        // Some branch 1 cell touches no other branch 1 cell.
        let lone = g.branch_cells(0).iter().any(|&c| {
            g.neighbors(c).iter().all(|&n| n == CLOSED || g.tag(n as usize) != Tag::Branch(0))
        });
        assert!(lone);
    }

    #[test]
    fn disconnected_domain_reported() {
        let spec = DomainSpec::new(
            1.0,
            vec![
                BranchSpec::new([1.0, 0.0], [0.0, 0.0], WidthProfile::Constant(2.0), 10.0),
                BranchSpec::new([-1.0, 0.0], [-3.0, 5.0], WidthProfile::Constant(2.0), 10.0),
            ],
            Some(vec![[0.0, -0.9], [0.0, 0.9], [-0.9, 0.0]]),
        )
        .unwrap();
        match MaskedGrid::build(&spec, 0.25) {
            Err(GeometryError::Disconnected(name)) => assert!(name.contains("branch 2"), "{name}"),
            other => panic!("expected disconnection, got {other:?}"),
        }
    }

    #[test]
    fn coarse_spacing_rejected() {
        assert!(matches!(MaskedGrid::build(&channel(2.0, 10.0), 0.5), Err(GeometryError::Spacing(..))));
    }

    #[test]
    fn refinement_changes_area_little() {
        let spec = y(20.0);
        let a = MaskedGrid::build(&spec, 0.2).unwrap().area();
        let b = MaskedGrid::build(&spec, 0.1).unwrap().area();
        let perimeter = 3.0 * (2.0 * 20.0 + 2.0);
        assert!((a - b).abs() < 4.0 * perimeter * 0.2);
    }

    #[test]
    fn grid_file_round_trip() {
        let g = MaskedGrid::build(&y(8.0), 0.25).unwrap();
        let values: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.37).sin().abs() / 3.0).collect();
        let text = write_grid_file(&g, Some((1.25, &values)));
        let back = read_grid_file(&text).unwrap();
        assert_eq!(back.mask, g.mask());
        assert_eq!(back.time, Some(1.25));
        let v = back.values.unwrap();
        assert!(v.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
        let plain = read_grid_file(&write_grid_file(&g, None)).unwrap();
        assert!(plain.values.is_none());
        assert!(read_grid_file("nonsense").is_err());
    }
}
