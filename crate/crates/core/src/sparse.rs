//! Compressed sparse row operators with a constraint tag.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundaryKind, Grid};

/// Whether the operator acts on the mean-free subspace (periodic stiffness)
/// or on the whole space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    None,
    ZeroMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    constraint: Constraint,
}

impl SparseOperator {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
            constraint: Constraint::None,
        }
    }

    /// Zero operator carrying the nearest-neighbour pattern of a Q1 grid.
    pub fn grid_pattern(grid: &Grid, constraint: Constraint) -> Self {
        let n = grid.dof_count();
        let dim = grid.dim();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(n * 3usize.pow(dim as u32));
        row_ptr.push(0);
        let offsets: &[[isize; 2]] = if dim == 1 {
            &[[-1, 0], [0, 0], [1, 0]]
        } else {
            &[
                [-1, -1],
                [0, -1],
                [1, -1],
                [-1, 0],
                [0, 0],
                [1, 0],
                [-1, 1],
                [0, 1],
                [1, 1],
            ]
        };
        let nn = grid.n() as isize;
        let mut row = Vec::with_capacity(9);
        for dof in 0..n {
            let node = grid.dof_node(dof);
            row.clear();
            'offsets: for off in offsets {
                let mut nb = [0usize; 2];
                for axis in 0..dim {
                    let mut c = node[axis] as isize + off[axis];
                    match grid.boundary() {
                        BoundaryKind::Periodic => c = c.rem_euclid(nn),
                        BoundaryKind::Dirichlet => {
                            if c <= 0 || c >= nn {
                                continue 'offsets;
                            }
                        }
                    }
                    nb[axis] = c as usize;
                }
                if let Some(j) = grid.node_dof(nb) {
                    row.push(j);
                }
            }
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(&row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
            constraint,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        self.constraint = constraint;
        self
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.col_idx[start..self.row_ptr[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|p| start + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Adds `v` at `(i, j)`; the entry must exist in the pattern.
    pub(crate) fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .position(i, j)
            .expect("entry outside the assembled sparsity pattern");
        self.values[p] += v;
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[p] * x[self.col_idx[p]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.symmetry_defect() <= rel_tol
    }

    /// `alpha * self + beta * other` for operators sharing one pattern.
    pub fn combine(&self, alpha: f64, other: &SparseOperator, beta: f64) -> Result<Self> {
        if self.row_ptr != other.row_ptr || self.col_idx != other.col_idx {
            return Err(Error::InvalidArgument(
                "operators do not share a sparsity pattern".into(),
            ));
        }
        let mut out = self.clone();
        for (o, (a, b)) in out.values.iter_mut().zip(self.values.iter().zip(&other.values)) {
            *o = alpha * a + beta * b;
        }
        Ok(out)
    }

    /// Adds `d[i]` to every diagonal entry.
    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, &di) in d.iter().enumerate() {
            self.add_at(i, i, di);
        }
    }

    /// Scales every row `i` by `d[i]` on the right, i.e. `self * diag(d)`.
    pub fn scale_columns(&mut self, d: &[f64]) {
        for p in 0..self.values.len() {
            self.values[p] *= d[self.col_idx[p]];
        }
    }

    /// Half-bandwidth `max |i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            let (cols, _) = self.row(i);
            for &j in cols {
                bw = bw.max(i.abs_diff(j));
            }
        }
        bw
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] += v;
            }
        }
        d
    }
}
