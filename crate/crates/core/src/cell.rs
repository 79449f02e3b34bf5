//! Cell problems on the periodic unit cell and the effective tensor.
//!
//! Three regimes, selected by the temporal scale exponent `r`:
//!
//! * `r < 2` ([`Regime::Sub`]): `-div_y(a(y,s)[∇Φ_k + e_k]) = 0` for every
//!   `s`, solved at composite-trapezoid nodes in `s`.
//! * `r = 2` ([`Regime::Critical`]): the time-periodic problem
//!   `∂_sΨ_k = div_y(a(y,s)[θ∇Ψ_k + e_k])` with `θ = m u^{m-1}`, and
//!   `Φ_k = θΨ_k` (zero when `θ = 0`).
//! * `r > 2` ([`Regime::Super`]): one elliptic problem with the `s`-averaged
//!   coefficient.
//!
//! In every regime `a_hom e_k = ∫₀¹∫ a(y,s)[∇Φ_k + e_k] dy ds`.
//!
//! The critical problem is solved in the variable `Φ = θΨ`, which stays of
//! unit size for all `θ`. Implicit Euler marches over one period; the affine
//! period map is iterated to its fixed point, first by plain marching and then
//! by GMRES on `(I - P)x = g` when plain marching contracts slowly (small
//! `θ`). The GMRES preconditioner `I + (θ K̄)⁻¹M` uses the `s`-averaged
//! stiffness `K̄` and inverts the slow modes of the period map.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_flux_load, assemble_mass, assemble_stiffness, quad_index, quad_weight,
    sample_quadrature,
};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{reference_gauss, BoundaryKind, Grid, ScalarField};
use crate::io;
use crate::solver::{
    default_max_iter, gmres, project_mean, solve_spd, solve_spd_from, GmresOptions,
};
use crate::sparse::{Constraint, SparseOperator};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Sub,
    Critical,
    Super,
}

impl Regime {
    pub fn from_r(r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidArgument(format!("r must be positive, got {r}")));
        }
        Ok(if r < 2.0 {
            Regime::Sub
        } else if r == 2.0 {
            Regime::Critical
        } else {
            Regime::Super
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Sub => "sub",
            Regime::Critical => "critical",
            Regime::Super => "super",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellOptions {
    /// Relative residual for every linear solve.
    pub tol: f64,
    pub max_iter: Option<usize>,
    /// Relative `L²` periodicity defect accepted for the critical problem.
    pub periodic_tol: f64,
    pub max_periods: usize,
    /// Keep every cell solution inside a [`ThetaTable`].
    pub keep_table_fields: bool,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: None,
            periodic_tol: 1e-9,
            max_periods: 200,
            keep_table_fields: false,
        }
    }
}

impl CellOptions {
    fn max_iter(&self, n: usize) -> usize {
        self.max_iter.unwrap_or_else(|| default_max_iter(n))
    }
}

/// Corrector fields for one direction `k` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution {
    pub regime: Regime,
    pub k: usize,
    /// `θ` for the critical regime.
    pub theta: Option<f64>,
    pub grid: Grid,
    /// Quadrature abscissae in `s`; weights sum to one.
    pub s_nodes: Vec<f64>,
    pub s_weights: Vec<f64>,
    /// `Φ_k` per `s`-node (sub), one `Φ_k` (super) or `Ψ_k` per `s`-node
    /// (critical).
    pub fields: Vec<ScalarField>,
    pub periods: usize,
    pub periodic_defect: f64,
}

impl CellSolution {
    fn field_at(&self, node: usize) -> &ScalarField {
        if self.fields.len() == 1 {
            &self.fields[0]
        } else {
            &self.fields[node]
        }
    }

    /// Factor turning stored fields into `Φ_k`: `θ` for the critical regime.
    pub fn corrector_scale(&self) -> f64 {
        match self.regime {
            Regime::Critical => self.theta.unwrap_or(0.0),
            _ => 1.0,
        }
    }

    /// `s`-node closest to `s` on the unit circle.
    pub fn nearest_node(&self, s: f64) -> usize {
        let s = crate::coefficients::frac(s);
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (j, &sj) in self.s_nodes.iter().enumerate() {
            let d = (s - sj).abs();
            let d = d.min(1.0 - d);
            if d < dist {
                dist = d;
                best = j;
            }
        }
        best
    }

    /// `∇_yΦ_k(y, s)` using the nearest `s`-node.
    pub fn corrector_grad(&self, y: [f64; 2], s: f64) -> [f64; 2] {
        let g = self.field_at(self.nearest_node(s)).eval_grad(y);
        let c = self.corrector_scale();
        [c * g[0], c * g[1]]
    }

    /// `Φ_k(y, s)` using the nearest `s`-node.
    pub fn corrector_value(&self, y: [f64; 2], s: f64) -> f64 {
        self.corrector_scale() * self.field_at(self.nearest_node(s)).eval(y)
    }

    /// Stored field value (`Ψ_k` in the critical regime) at `(y, s)`.
    pub fn stored_value(&self, y: [f64; 2], s: f64) -> f64 {
        self.field_at(self.nearest_node(s)).eval(y)
    }

    pub fn max_abs_mean(&self) -> f64 {
        self.fields.iter().fold(0.0f64, |m, f| m.max(f.mean().abs()))
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let value_name = if self.regime == Regime::Critical { "psi" } else { "phi" };
        let mut names = Vec::with_capacity(self.fields.len());
        for (j, f) in self.fields.iter().enumerate() {
            let name = format!("field_{j:03}.csv");
            io::write_field_csv(&dir.join(&name), f, value_name)?;
            names.push(name);
        }
        let manifest = CellManifest {
            regime: self.regime,
            k: self.k,
            theta: self.theta,
            grid: self.grid.clone(),
            s_nodes: self.s_nodes.clone(),
            s_weights: self.s_weights.clone(),
            periods: self.periods,
            periodic_defect: self.periodic_defect,
            fields: names,
        };
        io::write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let m: CellManifest = io::read_json(&dir.join("manifest.json"))?;
        let fields = m
            .fields
            .iter()
            .map(|name| io::read_field_csv(&dir.join(name), &m.grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            regime: m.regime,
            k: m.k,
            theta: m.theta,
            grid: m.grid,
            s_nodes: m.s_nodes,
            s_weights: m.s_weights,
            fields,
            periods: m.periods,
            periodic_defect: m.periodic_defect,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellManifest {
    regime: Regime,
    k: usize,
    theta: Option<f64>,
    grid: Grid,
    s_nodes: Vec<f64>,
    s_weights: Vec<f64>,
    periods: usize,
    periodic_defect: f64,
    fields: Vec<String>,
}

fn check_inputs(coeff: &CoefficientField, grid: &Grid, k: usize) -> Result<()> {
    if grid.boundary() != BoundaryKind::Periodic || grid.side() != 1.0 || grid.origin() != [0.0; 2] {
        return Err(Error::Cell("cell problems need the periodic unit-cell grid".into()));
    }
    if grid.dim() != coeff.dim() {
        return Err(Error::DimensionMismatch {
            expected: coeff.dim(),
            got: grid.dim(),
        });
    }
    if k < 1 || k > grid.dim() {
        return Err(Error::Cell(format!(
            "direction k = {k} outside 1..={}",
            grid.dim()
        )));
    }
    Ok(())
}

/// Periodic trapezoid abscissae `j / count`, `j = 0..count`.
fn trapezoid_nodes(count: usize) -> (Vec<f64>, Vec<f64>) {
    let nodes = (0..count).map(|j| j as f64 / count as f64).collect();
    (nodes, vec![1.0 / count as f64; count])
}

fn coefficient_samples(grid: &Grid, f: impl Fn([f64; 2]) -> Tensor) -> Vec<Tensor> {
    sample_quadrature(grid, |qp| f(qp.x))
}

fn column(a: &Tensor, k: usize) -> [f64; 2] {
    [a.0[0][k - 1], a.0[1][k - 1]]
}

/// Zero-mean solution of `-div(a[∇Φ + e_k]) = 0` for coefficient samples
/// at the quadrature points.
fn solve_elliptic(grid: &Grid, samples: &[Tensor], k: usize, opts: &CellOptions) -> Result<ScalarField> {
    let stiffness = assemble_stiffness(grid, |qp| samples[quad_index(grid, qp)])?;
    let load = assemble_flux_load(grid, |qp| column(&samples[quad_index(grid, qp)], k));
    let rhs: Vec<f64> = load.iter().map(|v| -v).collect();
    let mut x = solve_spd(&stiffness, &rhs, opts.tol, opts.max_iter(grid.dof_count()))?;
    project_mean(&mut x);
    ScalarField::new(grid.clone(), x)
}

pub fn solve_cp1(
    coeff: &CoefficientField,
    y_grid: &Grid,
    s_nodes: usize,
    k: usize,
    opts: &CellOptions,
) -> Result<CellSolution> {
    check_inputs(coeff, y_grid, k)?;
    if s_nodes < 1 {
        return Err(Error::Cell("need at least one s-node".into()));
    }
    let (nodes, weights) = trapezoid_nodes(s_nodes);
    let fields = nodes
        .par_iter()
        .map(|&s| {
            let samples = coefficient_samples(y_grid, |y| coeff.eval(y, s));
            solve_elliptic(y_grid, &samples, k, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CellSolution {
        regime: Regime::Sub,
        k,
        theta: None,
        grid: y_grid.clone(),
        s_nodes: nodes,
        s_weights: weights,
        fields,
        periods: 0,
        periodic_defect: 0.0,
    })
}

pub fn solve_cp3(
    coeff: &CoefficientField,
    y_grid: &Grid,
    s_quad: usize,
    k: usize,
    opts: &CellOptions,
) -> Result<CellSolution> {
    check_inputs(coeff, y_grid, k)?;
    if s_quad < 1 {
        return Err(Error::Cell("need at least one s-panel".into()));
    }
    let (nodes, weights) = trapezoid_nodes(s_quad);
    let samples = coefficient_samples(y_grid, |y| {
        nodes
            .iter()
            .zip(&weights)
            .fold(Tensor::ZERO, |acc, (&s, &w)| acc.add(&coeff.eval(y, s).scale(w)))
    });
    let field = solve_elliptic(y_grid, &samples, k, opts)?;
    Ok(CellSolution {
        regime: Regime::Super,
        k,
        theta: None,
        grid: y_grid.clone(),
        s_nodes: nodes,
        s_weights: weights,
        fields: vec![field],
        periods: 0,
        periodic_defect: 0.0,
    })
}

/// One period of implicit Euler for `∂_sΦ = θ div(a(y,s)[∇Φ + e_k])`.
struct PeriodMap<'a> {
    grid: &'a Grid,
    mass: SparseOperator,
    inv_ds: f64,
    systems: Vec<SparseOperator>,
    forcing: Vec<Vec<f64>>,
    tol: f64,
    max_iter: usize,
}

impl<'a> PeriodMap<'a> {
    fn march(&self, x0: &[f64], forced: bool, mut record: Option<&mut Vec<Vec<f64>>>) -> Result<Vec<f64>> {
        let mut x = x0.to_vec();
        for (system, load) in self.systems.iter().zip(&self.forcing) {
            let mut rhs = self.mass.mul(&x);
            for (i, r) in rhs.iter_mut().enumerate() {
                *r *= self.inv_ds;
                if forced {
                    *r -= load[i];
                }
            }
            x = solve_spd_from(system, &rhs, Some(&x), self.tol, self.max_iter)?.0;
            if let Some(rec) = record.as_deref_mut() {
                rec.push(x.clone());
            }
        }
        Ok(x)
    }

    fn mass_norm(&self, v: &[f64]) -> f64 {
        let mv = self.mass.mul(v);
        v.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }

    fn defect(&self, start: &[f64], end: &[f64]) -> f64 {
        let diff: Vec<f64> = end.iter().zip(start).map(|(a, b)| a - b).collect();
        let scale = self.mass_norm(start).max(self.mass_norm(end)).max(1e-12);
        self.mass_norm(&diff) / scale
    }
}

pub fn solve_cp2(
    coeff: &CoefficientField,
    theta: f64,
    y_grid: &Grid,
    s_steps: usize,
    k: usize,
    opts: &CellOptions,
) -> Result<CellSolution> {
    check_inputs(coeff, y_grid, k)?;
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::Cell(format!("theta must be finite and nonnegative, got {theta}")));
    }
    if s_steps < 4 {
        return Err(Error::Cell(format!("need at least 4 s-steps, got {s_steps}")));
    }
    let ds = 1.0 / s_steps as f64;
    let s_nodes: Vec<f64> = (1..=s_steps).map(|j| j as f64 * ds).collect();
    let s_weights = vec![ds; s_steps];
    let n = y_grid.dof_count();

    let solution = |fields: Vec<ScalarField>, periods, defect| CellSolution {
        regime: Regime::Critical,
        k,
        theta: Some(theta),
        grid: y_grid.clone(),
        s_nodes: s_nodes.clone(),
        s_weights: s_weights.clone(),
        fields,
        periods,
        periodic_defect: defect,
    };
    if theta == 0.0 {
        let zeros = vec![ScalarField::zeros(y_grid.clone()); s_steps];
        return Ok(solution(zeros, 0, 0.0));
    }

    let mass = assemble_mass(y_grid);
    let parts = s_nodes
        .par_iter()
        .map(|&s| {
            let samples = coefficient_samples(y_grid, |y| coeff.eval(y, s));
            let stiffness = assemble_stiffness(y_grid, |qp| samples[quad_index(y_grid, qp)])?;
            let load = assemble_flux_load(y_grid, |qp| column(&samples[quad_index(y_grid, qp)], k));
            let system = mass
                .combine(1.0 / ds, &stiffness, theta)?
                .with_constraint(Constraint::ZeroMean);
            Ok((stiffness, system, load.into_iter().map(|v| theta * v).collect::<Vec<_>>()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean_stiffness = parts[0].0.clone();
    for (st, _, _) in &parts[1..] {
        mean_stiffness = mean_stiffness.combine(1.0, st, 1.0)?;
    }
    let mean_stiffness = mean_stiffness.combine(ds, &parts[0].0, 0.0)?;
    let (systems, forcing): (Vec<_>, Vec<_>) = parts.into_iter().map(|(_, sy, f)| (sy, f)).unzip();
    let map = PeriodMap {
        grid: y_grid,
        mass,
        inv_ds: 1.0 / ds,
        systems,
        forcing,
        tol: opts.tol,
        max_iter: opts.max_iter(n),
    };

    let finish = |steps: Vec<Vec<f64>>, periods: usize, defect: f64| -> Result<CellSolution> {
        let fields = steps
            .into_iter()
            .map(|mut phi| {
                project_mean(&mut phi);
                for v in phi.iter_mut() {
                    *v /= theta;
                }
                ScalarField::new(map.grid.clone(), phi)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(solution(fields, periods, defect))
    };

    // plain marching from the zero start
    const PLAIN_PERIODS: usize = 2;
    let mut periods = 0;
    let mut x = vec![0.0; n];
    let mut g = None;
    let mut defect = f64::INFINITY;
    while periods < PLAIN_PERIODS.min(opts.max_periods) {
        let mut steps = Vec::with_capacity(s_steps);
        let y = map.march(&x, true, Some(&mut steps))?;
        periods += 1;
        defect = map.defect(&x, &y);
        if defect <= opts.periodic_tol {
            return finish(steps, periods, defect);
        }
        if g.is_none() {
            g = Some(y.clone());
        }
        x = y;
    }
    let g = g.expect("at least one period marched");
    if periods + 1 >= opts.max_periods {
        return Err(Error::PeriodicityNotReached {
            periods,
            defect,
            tol: opts.periodic_tol,
        });
    }

    // GMRES on (I - P) x = g, one period per operator application
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let precond = |v: &[f64]| -> Result<Vec<f64>> {
        let mv = map.mass.mul(v);
        let w = solve_spd(&mean_stiffness, &mv, map.tol, map.max_iter)?;
        Ok(v.iter().zip(&w).map(|(a, b)| a + b / theta).collect())
    };
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let pv = map.march(v, false, None)?;
        Ok(v.iter().zip(&pv).map(|(a, b)| a - b).collect())
    };
    while periods + 1 < opts.max_periods {
        let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = ((1e-2 * opts.periodic_tol).max(10.0 * opts.tol) * xnorm.max(gnorm) / gnorm).max(1e-14);
        let budget = (opts.max_periods - periods - 1).min(31);
        let out = gmres(
            &g,
            &x,
            &apply,
            &precond,
            GmresOptions {
                tol: target,
                restart: 30,
                max_iter: budget,
            },
        )?;
        periods += out.iterations;
        x = out.x;
        if out.converged {
            break;
        }
    }

    let mut steps = Vec::with_capacity(s_steps);
    let y = map.march(&x, true, Some(&mut steps))?;
    periods += 1;
    defect = map.defect(&x, &y);
    if defect <= opts.periodic_tol {
        finish(steps, periods, defect)
    } else {
        Err(Error::PeriodicityNotReached {
            periods,
            defect,
            tol: opts.periodic_tol,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub cell_n: usize,
    pub s_count: usize,
    pub tol: f64,
    pub periodic_tol: Option<f64>,
}

/// Effective tensor with its regime and bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedMatrix {
    pub dim: usize,
    pub regime: Regime,
    pub theta: Option<f64>,
    /// Row-major entries for the normalized coefficient.
    pub matrix: Vec<Vec<f64>>,
    /// Same matrix for the unnormalized coefficient family
    /// (`amplitude * matrix`).
    pub matrix_unscaled: Vec<Vec<f64>>,
    pub amplitude: f64,
    /// Certified ellipticity floor of the coefficient.
    pub lambda: f64,
    /// `|a12 - a21|` before symmetrization.
    pub symmetry_defect: f64,
    pub eigenvalues: [f64; 2],
    pub provenance: Provenance,
}

impl HomogenizedMatrix {
    pub fn from_tensor(
        dim: usize,
        regime: Regime,
        theta: Option<f64>,
        raw: Tensor,
        coeff: &CoefficientField,
        provenance: Provenance,
    ) -> Self {
        let sym = raw.symmetrized();
        Self {
            dim,
            regime,
            theta,
            matrix: sym.to_rows(dim),
            matrix_unscaled: sym.scale(coeff.amplitude()).to_rows(dim),
            amplitude: coeff.amplitude(),
            lambda: coeff.lambda(),
            symmetry_defect: raw.symmetry_defect(),
            eigenvalues: sym.eigenvalues(dim),
            provenance,
        }
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::from_rows(&self.matrix).expect("matrix has 1x1 or 2x2 shape")
    }

    /// Symmetric with eigenvalues in `[λ - tol, 1 + tol]`.
    pub fn in_spectral_bounds(&self, tol: f64) -> bool {
        let t = self.tensor();
        t.symmetry_defect() <= 1e-10
            && self.eigenvalues[0] >= self.lambda - tol
            && self.eigenvalues[1] <= 1.0 + tol
    }
}

/// Assembles `a_hom` from one cell solution per direction.
pub fn assemble_ahom(coeff: &CoefficientField, solutions: &[CellSolution]) -> Result<HomogenizedMatrix> {
    let dim = coeff.dim();
    if solutions.len() != dim {
        return Err(Error::Cell(format!(
            "need one cell solution per direction ({dim}), got {}",
            solutions.len()
        )));
    }
    let first = &solutions[0];
    for sol in solutions {
        if sol.regime != first.regime {
            return Err(Error::Cell("cell solutions mix regimes".into()));
        }
        if sol.grid != first.grid || sol.s_nodes != first.s_nodes || sol.s_weights != first.s_weights {
            return Err(Error::Cell("cell solutions use different grids".into()));
        }
        if sol.theta != first.theta {
            return Err(Error::Cell("cell solutions use different theta".into()));
        }
    }
    let mut seen = vec![false; dim];
    for sol in solutions {
        if sol.k < 1 || sol.k > dim || seen[sol.k - 1] {
            return Err(Error::Cell(format!("duplicate or invalid direction k = {}", sol.k)));
        }
        seen[sol.k - 1] = true;
    }
    let grid = &first.grid;
    let w = quad_weight(grid);
    let mut raw = Tensor::ZERO;
    for sol in solutions {
        let scale = sol.corrector_scale();
        let mut col = [0.0; 2];
        for (j, (&s, &ws)) in sol.s_nodes.iter().zip(&sol.s_weights).enumerate() {
            let field = sol.field_at(j);
            for cell in 0..grid.cell_count() {
                let idx = grid.cell_index(cell);
                let pts = grid.gauss_points(idx);
                for (g, &y) in pts.iter().enumerate().take(grid.quad_points_per_cell()) {
                    let grad = field.grad_in_cell(idx, reference_gauss(g, grid.dim()));
                    let mut v = [scale * grad[0], scale * grad[1]];
                    v[sol.k - 1] += 1.0;
                    let flux = coeff.eval(y, s).apply(v);
                    col[0] += ws * w * flux[0];
                    col[1] += ws * w * flux[1];
                }
            }
        }
        for (i, c) in col.iter().enumerate().take(dim) {
            raw.0[i][sol.k - 1] = *c;
        }
    }
    Ok(HomogenizedMatrix::from_tensor(
        dim,
        first.regime,
        first.theta,
        raw,
        coeff,
        Provenance {
            cell_n: grid.n(),
            s_count: first.s_nodes.len(),
            tol: 0.0,
            periodic_tol: None,
        },
    ))
}

/// Solves every direction for one regime and assembles `a_hom`.
pub fn homogenize(
    coeff: &CoefficientField,
    regime: Regime,
    y_grid: &Grid,
    s_count: usize,
    theta: f64,
    opts: &CellOptions,
) -> Result<(Vec<CellSolution>, HomogenizedMatrix)> {
    let sols = (1..=coeff.dim())
        .into_par_iter()
        .map(|k| match regime {
            Regime::Sub => solve_cp1(coeff, y_grid, s_count, k, opts),
            Regime::Super => solve_cp3(coeff, y_grid, s_count, k, opts),
            Regime::Critical => solve_cp2(coeff, theta, y_grid, s_count, k, opts),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ahom = assemble_ahom(coeff, &sols)?;
    ahom.provenance.tol = opts.tol;
    if regime == Regime::Critical {
        ahom.provenance.periodic_tol = Some(opts.periodic_tol);
    }
    Ok((sols, ahom))
}

/// Result of a table lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaQuery {
    pub matrix: Tensor,
    /// `θ` exceeded the largest node and the last entry was used.
    pub clamped: bool,
}

/// `θ ↦ a_hom(θ)` for the critical regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaTable {
    pub dim: usize,
    pub thetas: Vec<f64>,
    pub entries: Vec<HomogenizedMatrix>,
    /// Largest entrywise difference between adjacent positive nodes.
    pub max_adjacent_jump: f64,
    /// Entrywise difference between the `θ = 0` entry and the first positive
    /// node. The `θ → 0⁺` limit is the `s`-averaged tensor, not the
    /// arithmetic mean, so this gap does not vanish under refinement.
    pub zero_node_gap: f64,
    #[serde(skip)]
    pub solutions: Option<Vec<Vec<CellSolution>>>,
}

impl ThetaTable {
    pub fn theta_max(&self) -> f64 {
        *self.thetas.last().expect("table has nodes")
    }

    /// Piecewise-linear interpolation in `log(1 + θ)`; clamps beyond the
    /// last node.
    pub fn query(&self, theta: f64) -> ThetaQuery {
        let theta = theta.max(0.0);
        let last = self.thetas.len() - 1;
        if theta >= self.thetas[last] {
            return ThetaQuery {
                matrix: self.entries[last].tensor(),
                clamped: theta > self.thetas[last],
            };
        }
        let (i, t) = self.bracket(theta);
        let a = self.entries[i].tensor();
        let b = self.entries[i + 1].tensor();
        ThetaQuery {
            matrix: a.scale(1.0 - t).add(&b.scale(t)),
            clamped: false,
        }
    }

    /// Like [`ThetaTable::query`] but overflow beyond `θ_max` is an error.
    pub fn query_strict(&self, theta: f64) -> Result<Tensor> {
        let q = self.query(theta);
        if q.clamped {
            Err(Error::ThetaOverflow {
                theta,
                theta_max: self.theta_max(),
            })
        } else {
            Ok(q.matrix)
        }
    }

    /// Node interval containing `θ` and the interpolation weight.
    pub fn bracket(&self, theta: f64) -> (usize, f64) {
        let last = self.thetas.len() - 1;
        let pos = self.thetas.partition_point(|&t| t <= theta);
        let i = pos.saturating_sub(1).min(last - 1);
        let (l0, l1) = (self.thetas[i].ln_1p(), self.thetas[i + 1].ln_1p());
        let t = ((theta.ln_1p() - l0) / (l1 - l0)).clamp(0.0, 1.0);
        (i, t)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        io::write_json(&dir.join("theta_table.json"), self)?;
        if let Some(sols) = &self.solutions {
            for (i, per_k) in sols.iter().enumerate() {
                for sol in per_k {
                    sol.write_dir(&dir.join(format!("node_{i:02}")).join(format!("k{}", sol.k)))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut table: ThetaTable = io::read_json(&dir.join("theta_table.json"))?;
        let first = dir.join("node_00");
        if first.is_dir() {
            let mut sols = Vec::with_capacity(table.thetas.len());
            for i in 0..table.thetas.len() {
                let node = dir.join(format!("node_{i:02}"));
                let per_k = (1..=table.dim)
                    .map(|k| CellSolution::read_dir(&node.join(format!("k{k}"))))
                    .collect::<Result<Vec<_>>>()?;
                sols.push(per_k);
            }
            table.solutions = Some(sols);
        }
        Ok(table)
    }
}

/// Node layout: `θ₀ = 0` followed by `nodes - 1` log-spaced values ending at
/// `theta_max`. The smallest positive node is `10⁻³` (or `theta_max / 10³`
/// when `theta_max ≤ 10⁻³`).
pub fn theta_nodes(theta_max: f64, nodes: usize) -> Result<Vec<f64>> {
    if nodes < 3 {
        return Err(Error::Cell(format!("theta table needs at least 3 nodes, got {nodes}")));
    }
    if !(theta_max > 0.0) || !theta_max.is_finite() {
        return Err(Error::Cell(format!("theta_max must be positive, got {theta_max}")));
    }
    let theta_min = if theta_max > 1e-3 { 1e-3 } else { theta_max * 1e-3 };
    let count = nodes - 1;
    let mut out = vec![0.0];
    let (l0, l1) = (theta_min.ln(), theta_max.ln());
    for i in 0..count {
        let t = i as f64 / (count - 1) as f64;
        out.push((l0 + t * (l1 - l0)).exp());
    }
    *out.last_mut().expect("nonempty") = theta_max;
    Ok(out)
}

pub fn build_theta_table(
    coeff: &CoefficientField,
    theta_max: f64,
    nodes: usize,
    y_grid: &Grid,
    s_steps: usize,
    opts: &CellOptions,
) -> Result<ThetaTable> {
    let thetas = theta_nodes(theta_max, nodes)?;
    let solved = thetas
        .par_iter()
        .map(|&theta| homogenize(coeff, Regime::Critical, y_grid, s_steps, theta, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::with_capacity(solved.len());
    let mut solutions = Vec::with_capacity(solved.len());
    for (sols, ahom) in solved {
        entries.push(ahom);
        solutions.push(sols);
    }
    let mut max_jump: f64 = 0.0;
    for w in entries[1..].windows(2) {
        max_jump = max_jump.max(w[0].tensor().max_abs_diff(&w[1].tensor()));
    }
    let zero_gap = entries[0].tensor().max_abs_diff(&entries[1].tensor());
    Ok(ThetaTable {
        dim: coeff.dim(),
        thetas,
        entries,
        max_adjacent_jump: max_jump,
        zero_node_gap: zero_gap,
        solutions: opts.keep_table_fields.then_some(solutions),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::make_coefficient;

    fn opts() -> CellOptions {
        CellOptions::default()
    }

    #[test]
    fn regime_trichotomy() {
        assert_eq!(Regime::from_r(1.0).unwrap(), Regime::Sub);
        assert_eq!(Regime::from_r(2.0).unwrap(), Regime::Critical);
        assert_eq!(Regime::from_r(2.5).unwrap(), Regime::Super);
        assert!(Regime::from_r(0.0).is_err());
    }

    #[test]
    fn constant_coefficient_has_zero_corrector() {
        let c = make_coefficient("constant", &[1.0, 0.3, 0.6], 2).unwrap();
        let g = Grid::unit_cell(2, 16).unwrap();
        let sol = solve_cp1(&c, &g, 4, 1, &opts()).unwrap();
        assert_eq!(sol.fields.len(), 4);
        for f in &sol.fields {
            assert!(f.max_abs() < 1e-12);
        }
    }

    #[test]
    fn direction_out_of_range() {
        let c = make_coefficient("constant", &[1.0, 0.0, 1.0], 2).unwrap();
        let g = Grid::unit_cell(2, 8).unwrap();
        assert!(matches!(solve_cp3(&c, &g, 4, 3, &opts()), Err(Error::Cell(_))));
        assert!(solve_cp1(&c, &g, 4, 0, &opts()).is_err());
    }

    #[test]
    fn y1_only_coefficient_has_no_second_corrector() {
        let c = make_coefficient("layered_sin", &[2.0, 1.0, 1.0], 2).unwrap();
        let g = Grid::unit_cell(2, 16).unwrap();
        let sol = solve_cp1(&c, &g, 1, 2, &opts()).unwrap();
        assert!(sol.fields[0].max_abs() < 1e-12);
    }

    #[test]
    fn time_average_removes_pure_s_oscillation() {
        // (2 + sin 2πs) I has s-average 2I, so Φ = 0
        let table = crate::coefficients::CoefficientTable::sample(1, [8, 1], 16, |_, s| {
            Tensor::scalar(1, 2.0 + (2.0 * std::f64::consts::PI * s).sin())
        })
        .unwrap();
        let c = CoefficientField::from_coefficient_table(table).unwrap();
        let g = Grid::unit_cell(1, 8).unwrap();
        let sol = solve_cp3(&c, &g, 16, 1, &opts()).unwrap();
        assert!(sol.fields[0].max_abs() < 1e-12);
    }

    #[test]
    fn cp2_zero_theta_is_zero() {
        let c = make_coefficient("separable_sin", &[2.0, 1.0, 1.0], 1).unwrap();
        let g = Grid::unit_cell(1, 16).unwrap();
        let sol = solve_cp2(&c, 0.0, &g, 8, 1, &opts()).unwrap();
        assert!(sol.fields.iter().all(|f| f.max_abs() == 0.0));
        assert_eq!(sol.corrector_scale(), 0.0);
    }

    #[test]
    fn cp2_period_budget_exhausted() {
        let c = make_coefficient("separable_sin", &[2.0, 1.0, 1.0], 1).unwrap();
        let g = Grid::unit_cell(1, 16).unwrap();
        let o = CellOptions {
            max_periods: 1,
            ..opts()
        };
        match solve_cp2(&c, 1e-9, &g, 8, 1, &o) {
            Err(Error::PeriodicityNotReached { periods, defect, .. }) => {
                assert_eq!(periods, 1);
                assert!(defect > 1e-9);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn cp2_is_periodic_and_mean_free() {
        let c = make_coefficient("separable_sin", &[2.0, 1.0, 1.0], 1).unwrap();
        let g = Grid::unit_cell(1, 32).unwrap();
        for theta in [1e-3, 0.1, 10.0] {
            let sol = solve_cp2(&c, theta, &g, 16, 1, &opts()).unwrap();
            assert!(sol.periodic_defect <= 1e-9, "theta {theta}: {}", sol.periodic_defect);
            assert!(sol.max_abs_mean() <= 1e-10);
        }
    }

    #[test]
    fn mixed_regimes_rejected() {
        let c = make_coefficient("layered_sin", &[2.0, 1.0, 1.0], 2).unwrap();
        let g = Grid::unit_cell(2, 8).unwrap();
        let a = solve_cp1(&c, &g, 2, 1, &opts()).unwrap();
        let b = solve_cp3(&c, &g, 2, 2, &opts()).unwrap();
        assert!(assemble_ahom(&c, &[a.clone(), b]).is_err());
        let g2 = Grid::unit_cell(2, 16).unwrap();
        let b2 = solve_cp1(&c, &g2, 2, 2, &opts()).unwrap();
        assert!(assemble_ahom(&c, &[a, b2]).is_err());
    }

    #[test]
    fn theta_nodes_layout() {
        let t = theta_nodes(1e3, 25).unwrap();
        assert_eq!(t.len(), 25);
        assert_eq!(t[0], 0.0);
        assert!((t[1] - 1e-3).abs() < 1e-18);
        assert_eq!(t[24], 1e3);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!(theta_nodes(1.0, 2).is_err());
        assert!(theta_nodes(0.0, 5).is_err());
    }
}
