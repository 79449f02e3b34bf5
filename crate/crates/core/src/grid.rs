//! Uniform tensor grids in one and two dimensions and nodal fields on them.
//!
//! Nodes carry multi-indices `0..=n` per axis. On a periodic grid node `n`
//! is identified with node `0`, so there are `n^dim` degrees of freedom. On a
//! Dirichlet grid the boundary nodes are fixed at zero and only the
//! `(n-1)^dim` interior nodes are unknowns. Degrees of freedom are numbered
//! with the first axis running fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Periodic,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    h: f64,
    boundary: BoundaryKind,
    origin: [f64; 2],
    side: f64,
}

/// Gauss abscissae of the two-point rule on `[0, 1]`.
pub const GAUSS_1D: [f64; 2] = [
    0.5 - 0.288_675_134_594_812_9,
    0.5 + 0.288_675_134_594_812_9,
];

/// Builds a grid on the box `[0, side]^dim`.
pub fn build_grid(dim: usize, n: usize, boundary: BoundaryKind, side_length: f64) -> Result<Grid> {
    Grid::new(dim, n, boundary, [0.0; 2], side_length)
}

impl Grid {
    pub fn new(
        dim: usize,
        n: usize,
        boundary: BoundaryKind,
        origin: [f64; 2],
        side: f64,
    ) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!(
                "unsupported dimension {dim} (only 1 and 2)"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 cells per axis, got {n}")));
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::InvalidGrid(format!("side length must be positive, got {side}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        let mut origin = origin;
        if dim == 1 {
            origin[1] = 0.0;
        }
        Ok(Self {
            dim,
            n,
            h: side / n as f64,
            boundary,
            origin,
            side,
        })
    }

    /// Periodic grid on the unit cell.
    pub fn unit_cell(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, BoundaryKind::Periodic, [0.0; 2], 1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn boundary(&self) -> BoundaryKind {
        self.boundary
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn dofs_per_axis(&self) -> usize {
        match self.boundary {
            BoundaryKind::Periodic => self.n,
            BoundaryKind::Dirichlet => self.n - 1,
        }
    }

    pub fn dof_count(&self) -> usize {
        self.dofs_per_axis().pow(self.dim as u32)
    }

    pub fn cell_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn nodes_per_cell(&self) -> usize {
        1 << self.dim
    }

    pub fn quad_points_per_cell(&self) -> usize {
        1 << self.dim
    }

    /// Volume of one cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn domain_volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Degree of freedom carried by node multi-index, `None` for Dirichlet
    /// boundary nodes. Indices up to `n` are accepted on every axis.
    pub fn node_dof(&self, node: [usize; 2]) -> Option<usize> {
        let per = self.dofs_per_axis();
        let mut idx = 0;
        let mut stride = 1;
        for (axis, &raw) in node.iter().enumerate().take(self.dim) {
            debug_assert!(raw <= self.n, "node index {raw} out of range on axis {axis}");
            let local = match self.boundary {
                BoundaryKind::Periodic => raw % self.n,
                BoundaryKind::Dirichlet => {
                    if raw == 0 || raw >= self.n {
                        return None;
                    }
                    raw - 1
                }
            };
            idx += local * stride;
            stride *= per;
        }
        Some(idx)
    }

    /// Node multi-index of a degree of freedom.
    pub fn dof_node(&self, dof: usize) -> [usize; 2] {
        let per = self.dofs_per_axis();
        let shift = match self.boundary {
            BoundaryKind::Periodic => 0,
            BoundaryKind::Dirichlet => 1,
        };
        let mut node = [0usize; 2];
        node[0] = dof % per + shift;
        if self.dim == 2 {
            node[1] = dof / per + shift;
        }
        node
    }

    pub fn node_coord(&self, node: [usize; 2]) -> [f64; 2] {
        let mut x = [0.0; 2];
        for (axis, xi) in x.iter_mut().enumerate().take(self.dim) {
            *xi = self.origin[axis] + node[axis] as f64 * self.h;
        }
        x
    }

    pub fn dof_coord(&self, dof: usize) -> [f64; 2] {
        self.node_coord(self.dof_node(dof))
    }

    /// Cell multi-index from a linear cell number (first axis fastest).
    pub fn cell_index(&self, cell: usize) -> [usize; 2] {
        if self.dim == 1 {
            [cell, 0]
        } else {
            [cell % self.n, cell / self.n]
        }
    }

    /// Local node multi-indices of a cell in reference order
    /// `(0,0), (1,0), (0,1), (1,1)`.
    pub fn cell_nodes(&self, cell: [usize; 2]) -> [[usize; 2]; 4] {
        let mut out = [[0usize; 2]; 4];
        for (a, node) in out.iter_mut().enumerate().take(self.nodes_per_cell()) {
            node[0] = cell[0] + (a & 1);
            if self.dim == 2 {
                node[1] = cell[1] + ((a >> 1) & 1);
            }
        }
        out
    }

    pub fn cell_dofs(&self, cell: [usize; 2]) -> [Option<usize>; 4] {
        let nodes = self.cell_nodes(cell);
        let mut out = [None; 4];
        for a in 0..self.nodes_per_cell() {
            out[a] = self.node_dof(nodes[a]);
        }
        out
    }

    pub fn cell_origin(&self, cell: [usize; 2]) -> [f64; 2] {
        self.node_coord(cell)
    }

    /// Physical coordinates of the Gauss points of a cell.
    pub fn gauss_points(&self, cell: [usize; 2]) -> [[f64; 2]; 4] {
        let o = self.cell_origin(cell);
        let mut out = [[0.0; 2]; 4];
        for (g, p) in out.iter_mut().enumerate().take(self.quad_points_per_cell()) {
            let xi = reference_gauss(g, self.dim);
            for axis in 0..self.dim {
                p[axis] = o[axis] + xi[axis] * self.h;
            }
        }
        out
    }

    /// Locates the cell containing `x` and the local reference coordinates.
    /// Periodic grids wrap `x`; Dirichlet grids return `None` outside the box.
    pub fn locate(&self, x: [f64; 2]) -> Option<([usize; 2], [f64; 2])> {
        let mut cell = [0usize; 2];
        let mut xi = [0.0; 2];
        for axis in 0..self.dim {
            let mut t = (x[axis] - self.origin[axis]) / self.side;
            match self.boundary {
                BoundaryKind::Periodic => {
                    t -= t.floor();
                    if t >= 1.0 {
                        t = 0.0;
                    }
                }
                BoundaryKind::Dirichlet => {
                    if !(-1e-12..=1.0 + 1e-12).contains(&t) {
                        return None;
                    }
                    t = t.clamp(0.0, 1.0);
                }
            }
            let scaled = t * self.n as f64;
            let c = (scaled.floor() as usize).min(self.n - 1);
            cell[axis] = c;
            xi[axis] = scaled - c as f64;
        }
        Some((cell, xi))
    }

    pub fn same_discretization(&self, other: &Grid) -> bool {
        self == other
    }
}

/// Reference coordinates of Gauss point `g` on `[0,1]^dim`.
pub fn reference_gauss(g: usize, dim: usize) -> [f64; 2] {
    let mut xi = [0.0; 2];
    xi[0] = GAUSS_1D[g & 1];
    if dim == 2 {
        xi[1] = GAUSS_1D[(g >> 1) & 1];
    }
    xi
}

/// Q1 shape function values at reference point `xi`.
pub fn shape_values(dim: usize, xi: [f64; 2]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (a, v) in out.iter_mut().enumerate().take(1 << dim) {
        let mut prod = 1.0;
        for axis in 0..dim {
            let bit = (a >> axis) & 1;
            prod *= if bit == 1 { xi[axis] } else { 1.0 - xi[axis] };
        }
        *v = prod;
    }
    out
}

/// Q1 shape function gradients with respect to physical coordinates.
pub fn shape_gradients(dim: usize, xi: [f64; 2], h: f64) -> [[f64; 2]; 4] {
    let mut out = [[0.0; 2]; 4];
    for (a, grad) in out.iter_mut().enumerate().take(1 << dim) {
        for d in 0..dim {
            let mut prod = 1.0;
            for axis in 0..dim {
                let bit = (a >> axis) & 1;
                if axis == d {
                    prod *= if bit == 1 { 1.0 } else { -1.0 };
                } else {
                    prod *= if bit == 1 { xi[axis] } else { 1.0 - xi[axis] };
                }
            }
            grad[d] = prod / h;
        }
    }
    out
}

/// Nodal values on a grid, one per degree of freedom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.dof_count() {
            return Err(Error::DimensionMismatch {
                expected: grid.dof_count(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at dof {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.dof_count();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.dof_count()).map(|d| f(grid.dof_coord(d))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
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

    /// Value at a node, zero on Dirichlet boundary nodes.
    pub fn node_value(&self, node: [usize; 2]) -> f64 {
        self.grid.node_dof(node).map_or(0.0, |d| self.values[d])
    }

    pub fn cell_values(&self, cell: [usize; 2]) -> [f64; 4] {
        let dofs = self.grid.cell_dofs(cell);
        let mut out = [0.0; 4];
        for a in 0..self.grid.nodes_per_cell() {
            out[a] = dofs[a].map_or(0.0, |d| self.values[d]);
        }
        out
    }

    pub fn eval_in_cell(&self, cell: [usize; 2], xi: [f64; 2]) -> f64 {
        let vals = self.cell_values(cell);
        let n = shape_values(self.grid.dim(), xi);
        (0..self.grid.nodes_per_cell()).map(|a| n[a] * vals[a]).sum()
    }

    pub fn grad_in_cell(&self, cell: [usize; 2], xi: [f64; 2]) -> [f64; 2] {
        let vals = self.cell_values(cell);
        let g = shape_gradients(self.grid.dim(), xi, self.grid.h());
        let mut out = [0.0; 2];
        for a in 0..self.grid.nodes_per_cell() {
            out[0] += g[a][0] * vals[a];
            out[1] += g[a][1] * vals[a];
        }
        out
    }

    /// Multilinear interpolation at an arbitrary point (periodic wrap on
    /// periodic grids, zero outside a Dirichlet box).
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self.grid.locate(x) {
            Some((cell, xi)) => self.eval_in_cell(cell, xi),
            None => 0.0,
        }
    }

    /// Gradient of the Q1 interpolant at an arbitrary point.
    pub fn eval_grad(&self, x: [f64; 2]) -> [f64; 2] {
        match self.grid.locate(x) {
            Some((cell, xi)) => self.grad_in_cell(cell, xi),
            None => [0.0; 2],
        }
    }

    /// Arithmetic mean of the nodal values; on a periodic grid this is the
    /// exact cell average of the Q1 interpolant.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}
