//! Uniform lattices on balls `B_R` and nodal fields.

use std::sync::Arc;

use crate::exec::pairwise_sum;
use crate::{KppError, Result};

pub const DEFAULT_MAX_NODES: usize = 40_000_000;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    radius: f64,
    h: f64,
    half: usize,
    nodes: Vec<[f64; 2]>,
    lattice: Vec<[i64; 2]>,
    index: Vec<u32>,
}

pub fn make_grid(dim: usize, radius: f64, h: f64) -> Result<Grid> {
    make_grid_capped(dim, radius, h, DEFAULT_MAX_NODES)
}

pub fn make_grid_capped(dim: usize, radius: f64, h: f64, max_nodes: usize) -> Result<Grid> {
    if dim != 1 && dim != 2 {
        return Err(KppError::Grid(format!("dimension must be 1 or 2, got {dim}")));
    }
    if !(radius > 0.0 && h > 0.0 && radius.is_finite() && h.is_finite()) {
        return Err(KppError::Grid(format!("need R > 0 and h > 0, got R={radius}, h={h}")));
    }
    let q = 2.0 * radius / h;
    if (q - q.round()).abs() > 1e-9 * q.max(1.0) {
        return Err(KppError::Grid(format!("2R/h = {q} is not an integer")));
    }
    let half = (radius / h + 1e-9).floor() as usize;
    let side = 2 * half + 1;
    let estimate = if dim == 1 { side } else { (std::f64::consts::PI * (half as f64 + 1.0).powi(2)) as usize };
    if estimate > max_nodes || (dim == 2 && side.saturating_mul(side) > 4 * max_nodes.max(1)) {
        return Err(KppError::Grid(format!("about {estimate} nodes exceeds the cap of {max_nodes}")));
    }
    let hi = half as i64;
    let mut nodes = Vec::new();
    let mut lattice = Vec::new();
    let mut index = vec![NONE; side.pow(dim as u32)];
    if dim == 1 {
        for i in -hi..=hi {
            index[(i + hi) as usize] = nodes.len() as u32;
            nodes.push([i as f64 * h, 0.0]);
            lattice.push([i, 0]);
        }
    } else {
        let r2 = (radius / h).powi(2) * (1.0 + 1e-12);
        for i in -hi..=hi {
            for j in -hi..=hi {
                if ((i * i + j * j) as f64) <= r2 {
                    index[(i + hi) as usize * side + (j + hi) as usize] = nodes.len() as u32;
                    nodes.push([i as f64 * h, j as f64 * h]);
                    lattice.push([i, j]);
                }
            }
        }
    }
    Ok(Grid { dim, radius, h, half, nodes, lattice, index })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn spacing(&self) -> f64 {
        self.h
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    /// Lattice half-width: node indices run over `-half..=half` per axis.
    pub fn half(&self) -> usize {
        self.half
    }
    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }
    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }
    pub fn point(&self, i: usize) -> &[f64] {
        &self.nodes[i][..self.dim]
    }
    pub fn lattice(&self, i: usize) -> [i64; 2] {
        self.lattice[i]
    }
    pub fn norm(&self, i: usize) -> f64 {
        let [x, y] = self.nodes[i];
        x.hypot(y)
    }
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn index_of(&self, l: [i64; 2]) -> Option<usize> {
        let hi = self.half as i64;
        if l[0].abs() > hi || l[1].abs() > hi || (self.dim == 1 && l[1] != 0) {
            return None;
        }
        let side = 2 * self.half + 1;
        let k = if self.dim == 1 { (l[0] + hi) as usize } else { (l[0] + hi) as usize * side + (l[1] + hi) as usize };
        let v = self.index[k];
        (v != NONE).then_some(v as usize)
    }

    /// Index of the node `-x`.
    pub fn mirror(&self, i: usize) -> usize {
        let [a, b] = self.lattice[i];
        self.index_of([-a, -b]).expect("grid is symmetric")
    }

    /// Nodes with `|x| >= r`.
    pub fn outside(&self, r: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.norm(i) >= r).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(KppError::GridMismatch(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KppError::NonFinite("field values"));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Field {
        let n = grid.len();
        Field { grid, values: vec![0.0; n] }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Field {
        let n = grid.len();
        Field { grid, values: vec![c; n] }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Field {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Field { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || same_lattice(&self.grid, &other.grid)
    }

    /// Values at the mirrored nodes `-x`.
    pub fn reflect(&self) -> Field {
        let values = (0..self.grid.len()).map(|i| self.values[self.grid.mirror(i)]).collect();
        Field { grid: self.grid.clone(), values }
    }

    /// Zero extension onto a larger grid with the same spacing.
    pub fn extend_by_zero(&self, larger: &Arc<Grid>) -> Result<Field> {
        let mut out = vec![0.0; larger.len()];
        for i in 0..self.grid.len() {
            let j = nested_index(&self.grid, larger, i)?;
            out[j] = self.values[i];
        }
        Field::new(larger.clone(), out)
    }
}

pub fn same_lattice(a: &Grid, b: &Grid) -> bool {
    a.dim == b.dim && a.h == b.h && a.radius == b.radius && a.len() == b.len()
}

fn nested_index(small: &Grid, large: &Grid, i: usize) -> Result<usize> {
    if small.dim != large.dim {
        return Err(KppError::GridMismatch("dimensions differ".into()));
    }
    let x = small.node(i);
    let l = [(x[0] / large.h).round() as i64, (x[1] / large.h).round() as i64];
    let ok = (l[0] as f64 * large.h - x[0]).abs() <= 1e-9 * large.h
        && (l[1] as f64 * large.h - x[1]).abs() <= 1e-9 * large.h;
    match large.index_of(l) {
        Some(j) if ok => Ok(j),
        _ => Err(KppError::GridMismatch(format!("node {x:?} is not a node of the larger grid"))),
    }
}

/// `sum values * h^N`, pairwise in node order.
pub fn integrate(field: &Field) -> f64 {
    pairwise_sum(&field.values) * field.grid.cell_volume()
}

pub fn sup_norm(field: &Field) -> f64 {
    field.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn inf_on(field: &Field, nodes: &[usize]) -> f64 {
    nodes.iter().fold(f64::INFINITY, |m, &i| m.min(field.values[i]))
}

pub fn sup_on(field: &Field, nodes: &[usize]) -> f64 {
    nodes.iter().fold(f64::NEG_INFINITY, |m, &i| m.max(field.values[i]))
}

pub fn restrict(field: &Field, smaller: &Arc<Grid>) -> Result<Field> {
    let values = (0..smaller.len())
        .map(|i| nested_index(smaller, &field.grid, i).map(|j| field.values[j]))
        .collect::<Result<Vec<_>>>()?;
    Field::new(smaller.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(dim: usize, r: f64, h: f64) -> Arc<Grid> {
        Arc::new(make_grid(dim, r, h).unwrap())
    }

    #[test]
    fn enumeration_examples() {
        let a = g(1, 1.0, 0.5);
        let xs: Vec<f64> = a.nodes().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let b = g(2, 1.0, 1.0);
        assert_eq!(b.len(), 5);
        assert_eq!(b.nodes(), &[[-1.0, 0.0], [0.0, -1.0], [0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        let c = g(1, 2.0, 0.25);
        assert_eq!(c.len(), 17);
        for i in 0..c.len() {
            assert_eq!(c.node(c.mirror(i))[0], -c.node(i)[0]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(make_grid(1, 1.0, 0.3).is_err());
        assert!(make_grid(3, 1.0, 0.5).is_err());
        assert!(make_grid_capped(1, 1.0, 1e-3, 100).is_err());
    }

    #[test]
    fn integrals() {
        let a = g(1, 1.0, 0.5);
        assert_eq!(integrate(&Field::constant(a.clone(), 1.0)), 2.5);
        assert_eq!(integrate(&Field::zeros(a)), 0.0);
        let b = g(1, 1.0, 0.01);
        let f = Field::from_fn(b, |x| x[0] * x[0]);
        // untrimmed end cells add h * R^2 over the exact 2/3
        let discrete = 1e-6 * 2.0 * (100.0 * 101.0 * 201.0 / 6.0);
        assert!((integrate(&f) - discrete).abs() < 1e-13);
        assert!((integrate(&f) - 2.0 / 3.0 - 0.01).abs() < 1e-4);
    }

    #[test]
    fn reductions_and_restrict() {
        let a = g(2, 2.0, 0.25);
        let f = Field::from_fn(a.clone(), |x| 1.0 - x[0] + 0.5 * x[1]);
        assert_eq!(sup_norm(&Field::constant(a.clone(), -3.5)), 3.5);
        let same = restrict(&f, &a).unwrap();
        assert_eq!(same.values(), f.values());
        let small = g(2, 1.0, 0.25);
        let r = restrict(&f, &small).unwrap();
        for i in 0..small.len() {
            let x = small.node(i);
            assert_eq!(r.values()[i], 1.0 - x[0] + 0.5 * x[1]);
        }
        let back = r.extend_by_zero(&a).unwrap();
        assert_eq!(integrate(&back), integrate(&r));
        let off = g(2, 1.0, 0.2);
        assert!(restrict(&f, &off).is_err());
    }

    #[test]
    fn second_order_for_fields_vanishing_on_the_boundary() {
        // f(x) = (1 - x^2) cos x; exact integral 4 (sin 1 - cos 1)
        let exact = 4.0 * (1f64.sin() - 1f64.cos());
        let errs: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&h| {
                let f = Field::from_fn(g(1, 1.0, h), |x| (1.0 - x[0] * x[0]) * x[0].cos());
                (integrate(&f) - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
        }
    }

    #[test]
    fn reflection_symmetry() {
        let a = g(2, 1.5, 0.1);
        let f = Field::from_fn(a.clone(), |x| (x[0] * x[0] + 2.0 * x[1] * x[1]).cos());
        assert_eq!(integrate(&f), integrate(&f.reflect()));
        assert_eq!(sup_norm(&f), sup_norm(&f.reflect()));
    }

    #[test]
    fn nonfinite_rejected() {
        let a = g(1, 1.0, 0.5);
        assert!(Field::new(a, vec![0.0, 1.0, f64::NAN, 0.0, 0.0]).is_err());
    }
}
