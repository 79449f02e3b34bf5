//! Q1 Galerkin assembly on uniform grids.
//!
//! Every cell integral uses the tensor two-point Gauss rule, `2^dim` points
//! per cell. Coefficients are sampled pointwise at those points.

use crate::error::{Error, Result};
use crate::grid::{reference_gauss, shape_gradients, shape_values, BoundaryKind, Grid};
use crate::sparse::{Constraint, SparseOperator};
use crate::tensor::Tensor;

/// A quadrature point handed to coefficient callbacks.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    /// Linear cell number.
    pub cell: usize,
    /// Gauss point within the cell, `0..2^dim`.
    pub index: usize,
    /// Physical coordinates.
    pub x: [f64; 2],
}

const SYMMETRY_TOL: f64 = 1e-12;

/// Precomputed reference data for one grid.
struct Reference {
    dim: usize,
    nloc: usize,
    weight: f64,
    values: [[f64; 4]; 4],
    grads: [[[f64; 2]; 4]; 4],
}

impl Reference {
    fn new(grid: &Grid) -> Self {
        let dim = grid.dim();
        let mut values = [[0.0; 4]; 4];
        let mut grads = [[[0.0; 2]; 4]; 4];
        for g in 0..grid.quad_points_per_cell() {
            let xi = reference_gauss(g, dim);
            values[g] = shape_values(dim, xi);
            grads[g] = shape_gradients(dim, xi, grid.h());
        }
        Self {
            dim,
            nloc: grid.nodes_per_cell(),
            weight: grid.cell_volume() / grid.quad_points_per_cell() as f64,
            values,
            grads,
        }
    }
}

fn for_each_quad_point(grid: &Grid, mut f: impl FnMut(QuadPoint, [usize; 2])) {
    for cell in 0..grid.cell_count() {
        let idx = grid.cell_index(cell);
        let pts = grid.gauss_points(idx);
        for (g, &x) in pts.iter().enumerate().take(grid.quad_points_per_cell()) {
            f(QuadPoint { cell, index: g, x }, idx);
        }
    }
}

/// Stiffness matrix of `v -> -div(a grad v)`.
///
/// Periodic grids yield an operator tagged [`Constraint::ZeroMean`];
/// Dirichlet grids yield an unconstrained operator on the interior nodes.
pub fn assemble_stiffness(
    grid: &Grid,
    coeff: impl Fn(&QuadPoint) -> Tensor,
) -> Result<SparseOperator> {
    let constraint = match grid.boundary() {
        BoundaryKind::Periodic => Constraint::ZeroMean,
        BoundaryKind::Dirichlet => Constraint::None,
    };
    let mut op = SparseOperator::grid_pattern(grid, constraint);
    let r = Reference::new(grid);
    let mut err = None;
    for_each_quad_point(grid, |qp, idx| {
        if err.is_some() {
            return;
        }
        let a = coeff(&qp);
        if r.dim == 2 {
            let defect = a.symmetry_defect();
            if defect > SYMMETRY_TOL * a.norm().max(1.0) {
                err = Some(Error::AsymmetricCoefficient {
                    location: qp.x,
                    defect,
                });
                return;
            }
        }
        let dofs = grid.cell_dofs(idx);
        let grads = &r.grads[qp.index];
        for i in 0..r.nloc {
            let Some(di) = dofs[i] else { continue };
            let ag = a.apply(grads[i]);
            for j in 0..r.nloc {
                let Some(dj) = dofs[j] else { continue };
                let v = r.weight * (ag[0] * grads[j][0] + ag[1] * grads[j][1]);
                op.add_at(di, dj, v);
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(op),
    }
}

/// Consistent mass matrix (exact for Q1 under the two-point rule).
pub fn assemble_mass(grid: &Grid) -> SparseOperator {
    let mut op = SparseOperator::grid_pattern(grid, Constraint::None);
    let r = Reference::new(grid);
    for_each_quad_point(grid, |qp, idx| {
        let dofs = grid.cell_dofs(idx);
        let vals = &r.values[qp.index];
        for i in 0..r.nloc {
            let Some(di) = dofs[i] else { continue };
            for j in 0..r.nloc {
                let Some(dj) = dofs[j] else { continue };
                op.add_at(di, dj, r.weight * vals[i] * vals[j]);
            }
        }
    });
    op
}

/// Row-summed mass matrix. Uniform grids give `h^dim` on every degree of
/// freedom.
pub fn lumped_mass(grid: &Grid) -> Vec<f64> {
    vec![grid.cell_volume(); grid.dof_count()]
}

/// Load vector `b_i = ∫ f φ_i`.
pub fn assemble_load(grid: &Grid, f: impl Fn(&QuadPoint) -> f64) -> Vec<f64> {
    let r = Reference::new(grid);
    let mut b = vec![0.0; grid.dof_count()];
    for_each_quad_point(grid, |qp, idx| {
        let fv = f(&qp);
        let dofs = grid.cell_dofs(idx);
        for i in 0..r.nloc {
            if let Some(di) = dofs[i] {
                b[di] += r.weight * fv * r.values[qp.index][i];
            }
        }
    });
    b
}

/// Flux load vector `b_i = ∫ q · grad φ_i`, the weak form of `-div q`.
pub fn assemble_flux_load(grid: &Grid, q: impl Fn(&QuadPoint) -> [f64; 2]) -> Vec<f64> {
    let r = Reference::new(grid);
    let mut b = vec![0.0; grid.dof_count()];
    for_each_quad_point(grid, |qp, idx| {
        let qv = q(&qp);
        let dofs = grid.cell_dofs(idx);
        let grads = &r.grads[qp.index];
        for i in 0..r.nloc {
            if let Some(di) = dofs[i] {
                b[di] += r.weight * (qv[0] * grads[i][0] + qv[1] * grads[i][1]);
            }
        }
    });
    b
}

/// Evaluates `f` at every quadrature point, cell-major.
pub fn sample_quadrature<T>(grid: &Grid, f: impl Fn(&QuadPoint) -> T) -> Vec<T> {
    let mut out = Vec::with_capacity(grid.cell_count() * grid.quad_points_per_cell());
    for_each_quad_point(grid, |qp, _| out.push(f(&qp)));
    out
}

/// Index into a cell-major quadrature array.
pub fn quad_index(grid: &Grid, qp: &QuadPoint) -> usize {
    qp.cell * grid.quad_points_per_cell() + qp.index
}

/// Weight of each Gauss point (all equal on a uniform grid).
pub fn quad_weight(grid: &Grid) -> f64 {
    grid.cell_volume() / grid.quad_points_per_cell() as f64
}
