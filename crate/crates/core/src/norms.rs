//! Norms of Q1 fields.
//!
//! `L2` and the `H1` seminorm use the two-point Gauss rule per axis, exact
//! for Q1 fields. Other `Lp` norms use the composite midpoint rule (one
//! sample per cell at the cell centre), second-order accurate for smooth
//! integrands. [`lumped_lp_norm`] uses the nodal (row-summed mass) rule.

use serde::{Deserialize, Serialize};

use crate::assembly::quad_weight;
use crate::error::{Error, Result};
use crate::grid::{reference_gauss, Grid, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Lp(f64),
    H1Semi,
}

/// Axis-aligned box `[lo, hi]`; only the first `dim` components are used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subdomain {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Subdomain {
    /// Centred box with half the side length of the grid domain.
    pub fn centered_half(grid: &Grid) -> Self {
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for axis in 0..grid.dim() {
            lo[axis] = grid.origin()[axis] + 0.25 * grid.side();
            hi[axis] = grid.origin()[axis] + 0.75 * grid.side();
        }
        Self { lo, hi }
    }

    /// Smallest distance from the box to the boundary of the grid domain.
    pub fn margin(&self, grid: &Grid) -> f64 {
        let mut m = f64::INFINITY;
        for axis in 0..grid.dim() {
            let a = grid.origin()[axis];
            let b = a + grid.side();
            m = m.min(self.lo[axis] - a).min(b - self.hi[axis]);
        }
        m
    }
}

/// Range of cell indices per axis covered by `sub`, validated against the grid.
pub fn cell_range(grid: &Grid, sub: Option<&Subdomain>) -> Result<[(usize, usize); 2]> {
    let mut out = [(0, 1); 2];
    for (axis, range) in out.iter_mut().enumerate().take(grid.dim()) {
        *range = (0, grid.n());
        let Some(s) = sub else { continue };
        let to_index = |v: f64| -> Result<usize> {
            let t = (v - grid.origin()[axis]) / grid.h();
            let r = t.round();
            if (t - r).abs() > 1e-9 * t.abs().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "subdomain bound {v} is not aligned to cells (h = {})",
                    grid.h()
                )));
            }
            if r < 0.0 || r > grid.n() as f64 {
                return Err(Error::InvalidArgument(format!(
                    "subdomain bound {v} lies outside the grid domain"
                )));
            }
            Ok(r as usize)
        };
        let lo = to_index(s.lo[axis])?;
        let hi = to_index(s.hi[axis])?;
        if hi <= lo {
            return Err(Error::InvalidArgument("empty subdomain".into()));
        }
        *range = (lo, hi);
    }
    Ok(out)
}

pub(crate) fn cells_in(range: &[(usize, usize); 2], dim: usize) -> impl Iterator<Item = [usize; 2]> + '_ {
    let (j0, j1) = if dim == 2 { range[1] } else { (0, 1) };
    (j0..j1).flat_map(move |j| (range[0].0..range[0].1).map(move |i| [i, j]))
}

pub fn norm(field: &ScalarField, kind: NormKind, subdomain: Option<&Subdomain>) -> Result<f64> {
    match kind {
        NormKind::Lp(p) => {
            if !(p >= 1.0) {
                return Err(Error::InvalidArgument(format!("Lp norm needs p >= 1, got {p}")));
            }
            Ok(lp_integral(field, p, subdomain)?.powf(1.0 / p))
        }
        NormKind::H1Semi => Ok(grad_sq_integral(field, subdomain)?.sqrt()),
    }
}

/// `∫ |u|^p` with the quadrature documented at module level.
pub fn lp_integral(field: &ScalarField, p: f64, subdomain: Option<&Subdomain>) -> Result<f64> {
    let grid = field.grid();
    let range = cell_range(grid, subdomain)?;
    let mut total = 0.0;
    if p == 2.0 {
        let w = quad_weight(grid);
        for cell in cells_in(&range, grid.dim()) {
            for g in 0..grid.quad_points_per_cell() {
                let v = field.eval_in_cell(cell, reference_gauss(g, grid.dim()));
                total += w * v * v;
            }
        }
    } else {
        let vol = grid.cell_volume();
        for cell in cells_in(&range, grid.dim()) {
            let v = field.eval_in_cell(cell, [0.5, 0.5]);
            total += vol * v.abs().powf(p);
        }
    }
    Ok(total)
}

/// `∫ |grad u|^2`, exact for Q1 fields.
pub fn grad_sq_integral(field: &ScalarField, subdomain: Option<&Subdomain>) -> Result<f64> {
    let grid = field.grid();
    let range = cell_range(grid, subdomain)?;
    let w = quad_weight(grid);
    let mut total = 0.0;
    for cell in cells_in(&range, grid.dim()) {
        for g in 0..grid.quad_points_per_cell() {
            let gr = field.grad_in_cell(cell, reference_gauss(g, grid.dim()));
            total += w * (gr[0] * gr[0] + gr[1] * gr[1]);
        }
    }
    Ok(total)
}

/// `(∫ |u - f|^p)^(1/p)` against a pointwise function, Gauss rule per cell.
pub fn lp_distance(field: &ScalarField, f: impl Fn([f64; 2]) -> f64, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("Lp norm needs p >= 1, got {p}")));
    }
    let grid = field.grid();
    let w = quad_weight(grid);
    let mut total = 0.0;
    for cell in cells_in(&cell_range(grid, None)?, grid.dim()) {
        let pts = grid.gauss_points(cell);
        for (g, &x) in pts.iter().enumerate().take(grid.quad_points_per_cell()) {
            let v = field.eval_in_cell(cell, reference_gauss(g, grid.dim())) - f(x);
            total += w * v.abs().powf(p);
        }
    }
    Ok(total.powf(1.0 / p))
}

/// `(Σ_i M_i |u_i|^p)^(1/p)` with the row-summed mass `M_i = h^dim`.
pub fn lumped_lp_norm(field: &ScalarField, p: f64) -> f64 {
    let vol = field.grid().cell_volume();
    let s: f64 = field.values().iter().map(|v| v.abs().powf(p)).sum();
    (vol * s).powf(1.0 / p)
}
