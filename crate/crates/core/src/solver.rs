//! Linear solvers: Jacobi-preconditioned conjugate gradients with an optional
//! zero-mean projection, a banded LDLᵀ factorization for narrow-band SPD
//! systems, and restarted GMRES for matrix-free operators.

use crate::error::{Error, Result};
use crate::sparse::{Constraint, SparseOperator};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Default iteration cap, `50 * dof count`.
pub fn default_max_iter(n: usize) -> usize {
    50 * n.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn project_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

/// Solves `op x = rhs` from a zero start.
pub fn solve_spd(op: &SparseOperator, rhs: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    solve_spd_from(op, rhs, None, tol, max_iter).map(|(x, _)| x)
}

/// Preconditioned conjugate gradients with an optional initial guess.
///
/// For [`Constraint::ZeroMean`] operators the right-hand side, the residuals,
/// the preconditioned residuals and the returned solution are projected onto
/// the mean-free subspace. Convergence is declared on the true relative
/// residual `|b - A x| / |b|`.
pub fn solve_spd_from(
    op: &SparseOperator,
    rhs: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rhs.len(),
        });
    }
    let zero_mean = op.constraint() == Constraint::ZeroMean;
    let mut b = rhs.to_vec();
    if zero_mean {
        project_mean(&mut b);
    }
    let bnorm = norm2(&b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = op
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        _ => vec![0.0; n],
    };
    if zero_mean {
        project_mean(&mut x);
    }
    let mut ap = vec![0.0; n];
    let mut iterations = 0;

    // Outer loop restarts from the true residual when the recursive one drifts.
    loop {
        op.apply(&x, &mut ap);
        let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
        if zero_mean {
            project_mean(&mut r);
        }
        let rel = norm2(&r) / bnorm;
        if rel <= tol {
            if zero_mean {
                project_mean(&mut x);
            }
            return Ok((
                x,
                SolveStats {
                    iterations,
                    residual: rel,
                },
            ));
        }
        if iterations >= max_iter {
            return Err(Error::NotConverged {
                iterations,
                residual: rel,
                tol,
            });
        }

        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        if zero_mean {
            project_mean(&mut z);
        }
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            op.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "operator is not positive definite along a search direction (pAp = {pap:e})"
                )));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if zero_mean {
                project_mean(&mut r);
            }
            if norm2(&r) / bnorm <= tol {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            if zero_mean {
                project_mean(&mut z);
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

/// LDLᵀ factorization of a symmetric positive definite banded matrix.
#[derive(Debug, Clone)]
pub struct BandedLdl {
    n: usize,
    bw: usize,
    // row i holds L[i][i-bw..i] followed by D[i]
    band: Vec<f64>,
}

impl BandedLdl {
    pub fn factor(op: &SparseOperator) -> Result<Self> {
        let n = op.dim();
        let bw = op.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            let (cols, vals) = op.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    band[i * w + (j + bw - i)] += v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                let jlo = j.saturating_sub(bw).max(lo);
                let mut s = band[i * w + (j + bw - i)];
                for k in jlo..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)] * band[k * w + bw];
                }
                band[i * w + (j + bw - i)] = s / band[j * w + bw];
            }
            let mut d = band[i * w + bw];
            for k in lo..i {
                let l = band[i * w + (k + bw - i)];
                d -= l * l * band[k * w + bw];
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite { row: i, pivot: d });
            }
            band[i * w + bw] = d;
        }
        Ok(Self { n, bw, band })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut x = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for k in lo..i {
                s -= self.band[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s;
        }
        for (i, xi) in x.iter_mut().enumerate() {
            *xi /= self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = x[i];
            for k in (i + 1)..=hi {
                s -= self.band[k * w + (i + bw - k)] * x[k];
            }
            x[i] = s;
        }
        x
    }
}

/// Direct banded solve followed by a residual check against `tol`.
pub fn solve_banded(op: &SparseOperator, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    if op.constraint() == Constraint::ZeroMean {
        return Err(Error::InvalidArgument(
            "banded factorization needs a nonsingular operator".into(),
        ));
    }
    let ldl = BandedLdl::factor(op)?;
    let x = ldl.solve(rhs);
    let bnorm = norm2(rhs);
    if bnorm > 0.0 {
        let ax = op.mul(&x);
        let res = norm2(&rhs.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>()) / bnorm;
        if res > tol {
            return Err(Error::NotConverged {
                iterations: 1,
                residual: res,
                tol,
            });
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    /// Operator applications, including residual evaluations at restarts.
    pub iterations: usize,
    /// Final true relative residual `|b - A x| / |b|`.
    pub residual: f64,
    pub converged: bool,
}

/// Right-preconditioned restarted GMRES for `A x = b` with matrix-free
/// operator and preconditioner. Running out of iterations is not an error;
/// the caller inspects [`GmresOutcome::converged`].
pub fn gmres(
    b: &[f64],
    x0: &[f64],
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    mut precond: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    opts: GmresOptions,
) -> Result<GmresOutcome> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = x0.to_vec();
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let m = opts.restart.max(1);
    let mut iterations = 0;
    loop {
        let ax = apply(&x)?;
        iterations += 1;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        if beta / bnorm <= opts.tol || iterations >= opts.max_iter {
            return Ok(GmresOutcome {
                x,
                iterations,
                residual: beta / bnorm,
                converged: beta / bnorm <= opts.tol,
            });
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut hess = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && iterations < opts.max_iter {
            let zk = precond(&v[k])?;
            let mut w = apply(&zk)?;
            iterations += 1;
            z.push(zk);
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                hess[i][k] = hij;
                for (wl, vl) in w.iter_mut().zip(vi) {
                    *wl -= hij * vl;
                }
            }
            let hnext = norm2(&w);
            hess[k + 1][k] = hnext;
            for i in 0..k {
                let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let denom = hess[k][k].hypot(hess[k + 1][k]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = hess[k][k] / denom;
                sn[k] = hess[k + 1][k] / denom;
            }
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k += 1;
            if g[k].abs() / bnorm <= opts.tol || hnext == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hnext).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in (i + 1)..k {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        for (yj, zj) in y.iter().zip(&z) {
            for (xl, zl) in x.iter_mut().zip(zj) {
                *xl += yj * zl;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_mass, assemble_stiffness};
    use crate::grid::{build_grid, BoundaryKind};
    use crate::tensor::Tensor;

    #[test]
    fn identity_returns_rhs() {
        let op = SparseOperator::identity(5);
        let rhs = [1.0, -2.0, 3.0, 0.5, 7.0];
        let x = solve_spd(&op, &rhs, 1e-12, 10).unwrap();
        for (a, b) in x.iter().zip(rhs) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn unreachable_tolerance_reports_residual() {
        let g = build_grid(1, 32, BoundaryKind::Dirichlet, 1.0).unwrap();
        let k = assemble_stiffness(&g, |_| Tensor::identity(1)).unwrap();
        let rhs: Vec<f64> = (0..g.dof_count()).map(|i| (i as f64).sin()).collect();
        match solve_spd(&k, &rhs, 1e-12, 1) {
            Err(Error::NotConverged { iterations, residual, .. }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 1e-12);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn zero_mean_solution_on_periodic_grid() {
        let g = build_grid(2, 8, BoundaryKind::Periodic, 1.0).unwrap();
        let k = assemble_stiffness(&g, |_| Tensor::identity(2)).unwrap();
        let rhs: Vec<f64> = (0..g.dof_count()).map(|i| 1.0 + (i as f64 * 0.37).cos()).collect();
        let x = solve_spd(&k, &rhs, 1e-10, 1000).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        assert!(mean.abs() <= 1e-10);
    }

    #[test]
    fn banded_matches_cg() {
        let g = build_grid(2, 9, BoundaryKind::Dirichlet, 1.0).unwrap();
        let k = assemble_stiffness(&g, |qp| Tensor::sym(2, 1.0 + 0.5 * qp.x[0], 0.2, 0.8)).unwrap();
        let m = assemble_mass(&g);
        let a = k.combine(1.0, &m, 3.0).unwrap();
        let rhs: Vec<f64> = (0..g.dof_count()).map(|i| (i as f64 * 0.11).sin()).collect();
        let x1 = solve_banded(&a, &rhs, 1e-12).unwrap();
        let x2 = solve_spd(&a, &rhs, 1e-13, 10_000).unwrap();
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        // [[4,1,0],[2,5,1],[0,1,3]] x = [1,2,3]
        let a = [[4.0, 1.0, 0.0], [2.0, 5.0, 1.0], [0.0, 1.0, 3.0]];
        let apply = |x: &[f64]| -> Result<Vec<f64>> {
            Ok((0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum()).collect())
        };
        let out = gmres(
            &[1.0, 2.0, 3.0],
            &[0.0; 3],
            apply,
            |v: &[f64]| Ok(v.to_vec()),
            GmresOptions {
                tol: 1e-13,
                restart: 2,
                max_iter: 100,
            },
        )
        .unwrap();
        assert!(out.converged);
        let r = apply(&out.x).unwrap();
        for (ri, bi) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }
}
