//! Backward-Euler solver for `∂ₜu = div(a ∇uᵐ)` on a box with homogeneous
//! Dirichlet data.
//!
//! Each step solves `M_L (u - uₙ)/dt + K φ(u) = 0`, `φ(u) = |u|^{m-1}u`,
//! with lumped mass `M_L` and the stiffness `K` of the current coefficient.
//! Newton uses the regularized derivative `D = m(u² + δ²)^{(m-1)/2}` and
//! solves the symmetric system `(M_L D⁻¹/dt + K) w = -F` for `w = D δu`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_stiffness, lumped_mass, quad_index, sample_quadrature};
use crate::cell::ThetaTable;
use crate::coefficients::{sample_oscillating, CoefficientField};
use crate::error::{Error, Result};
use crate::grid::{reference_gauss, BoundaryKind, Grid, ScalarField};
use crate::io;
use crate::norms::{grad_sq_integral, lumped_lp_norm};
use crate::solver::{solve_spd, BandedLdl};
use crate::sparse::SparseOperator;
use crate::tensor::Tensor;

/// Integrability class of `u₀` required by the local gradient estimates:
/// `log u₀ ∈ L¹_loc` for `m = 3`, `u₀^{3-m} ∈ L¹_loc` for `m > 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityClass {
    General,
    LogIntegrable,
    PowerIntegrable,
}

impl PositivityClass {
    pub fn required_for(m: f64) -> Self {
        if m == 3.0 {
            PositivityClass::LogIntegrable
        } else if m > 3.0 {
            PositivityClass::PowerIntegrable
        } else {
            PositivityClass::General
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmeProblem {
    pub m: f64,
    pub r: f64,
    pub t0: f64,
    pub t_final: f64,
    pub u0: ScalarField,
    pub positivity: PositivityClass,
}

impl PmeProblem {
    pub fn new(
        m: f64,
        r: f64,
        t0: f64,
        t_final: f64,
        u0: ScalarField,
        positivity: PositivityClass,
    ) -> Result<Self> {
        if !(m > 1.0) || !m.is_finite() {
            return Err(Error::Hypothesis {
                hypothesis: "H1",
                detail: format!("the exponent must satisfy m > 1, got m = {m}"),
            });
        }
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidArgument(format!("r must be positive, got {r}")));
        }
        if !(t_final > t0) || !t0.is_finite() || !t_final.is_finite() || t0 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= t0 < T, got t0 = {t0}, T = {t_final}"
            )));
        }
        if u0.grid().boundary() != BoundaryKind::Dirichlet {
            return Err(Error::InvalidGrid("the physical grid must be of Dirichlet kind".into()));
        }
        if let Some(i) = u0.values().iter().position(|&v| v < 0.0) {
            return Err(Error::Hypothesis {
                hypothesis: "H1",
                detail: format!("u0 must be nonnegative, got {} at dof {i}", u0.values()[i]),
            });
        }
        Ok(Self {
            m,
            r,
            t0,
            t_final,
            u0,
            positivity,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.u0.grid()
    }

    /// Mismatches between `m`, the declared class and the data.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let need = PositivityClass::required_for(self.m);
        if need != PositivityClass::General && self.positivity != need {
            out.push(format!(
                "m = {} calls for positivity class {need:?}, declared {:?}",
                self.m, self.positivity
            ));
        }
        if self.positivity != PositivityClass::General {
            let zeros = self.u0.values().iter().filter(|&&v| v == 0.0).count();
            if zeros > 0 {
                out.push(format!(
                    "u0 vanishes at {zeros} interior nodes, so the declared class {:?} fails there",
                    self.positivity
                ));
            }
        }
        out
    }
}

/// How the diffusion tensor is obtained at each quadrature point.
#[derive(Debug, Clone, Copy)]
pub enum CoefficientMode<'a> {
    /// `a(x/ε, t/εʳ)` sampled at the new time level.
    Oscillating { field: &'a CoefficientField, eps: f64 },
    ConstantMatrix(Tensor),
    /// `a_hom(θ)` with `θ = m u^{m-1}` from the previous Picard sweep.
    ThetaDependent { table: &'a ThetaTable, m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    /// Residual tolerance relative to `|M_L uₙ / dt|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of step halvings tried by the line search.
    pub damping_levels: usize,
    pub picard_sweeps: usize,
    pub picard_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            damping_levels: 8,
            picard_sweeps: 3,
            picard_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub time: f64,
    pub newton_iterations: usize,
    pub residual: f64,
    pub picard_sweeps: usize,
    /// Nodes below `-tol * max|u|` set to zero after the Newton solve.
    pub clamped: usize,
    /// Negative values within the Newton tolerance of zero, also set to zero.
    pub zeroed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub m: f64,
    pub dt: f64,
    /// Every `stride`-th step is stored.
    pub stride: usize,
    pub times: Vec<f64>,
    pub fields: Vec<ScalarField>,
    pub steps: Vec<StepStats>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryManifest {
    grid: Grid,
    m: f64,
    dt: f64,
    stride: usize,
    times: Vec<f64>,
    files: Vec<String>,
    clamped_total: usize,
    steps: Vec<StepStats>,
}

impl Trajectory {
    pub fn final_field(&self) -> &ScalarField {
        self.fields.last().expect("trajectory holds the initial field")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds the initial time")
    }

    pub fn clamped_total(&self) -> usize {
        self.steps.iter().map(|s| s.clamped).sum()
    }

    /// Largest fraction of nodes clamped in a single step.
    pub fn max_clamped_fraction(&self) -> f64 {
        let n = self.grid.dof_count() as f64;
        self.steps.iter().fold(0.0f64, |m, s| m.max(s.clamped as f64 / n))
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let mut files = Vec::with_capacity(self.fields.len());
        for (i, f) in self.fields.iter().enumerate() {
            let name = format!("u_{i:05}.csv");
            io::write_field_csv(&dir.join(&name), f, "u")?;
            files.push(name);
        }
        let manifest = TrajectoryManifest {
            grid: self.grid.clone(),
            m: self.m,
            dt: self.dt,
            stride: self.stride,
            times: self.times.clone(),
            files,
            clamped_total: self.clamped_total(),
            steps: self.steps.clone(),
        };
        io::write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let m: TrajectoryManifest = io::read_json(&dir.join("manifest.json"))?;
        if m.files.len() != m.times.len() {
            return Err(Error::format(
                dir.join("manifest.json"),
                "number of files and time stamps differ",
            ));
        }
        let fields = m
            .files
            .iter()
            .map(|name| io::read_field_csv(&dir.join(name), &m.grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: m.grid,
            m: m.m,
            dt: m.dt,
            stride: m.stride,
            times: m.times,
            fields,
            steps: m.steps,
        })
    }
}

/// Number of steps of size `dt` covering `[t0, T]`; `dt` must divide the
/// interval.
pub fn step_count(t0: f64, t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let span = t_final - t0;
    let k = (span / dt).round();
    if k < 1.0 || (k * dt - span).abs() > 1e-9 * span {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} does not divide the time interval [{t0}, {t_final}]"
        )));
    }
    Ok(k as usize)
}

pub fn solve_pme(
    problem: &PmeProblem,
    mode: CoefficientMode<'_>,
    grid: &Grid,
    dt: f64,
    newton: &NewtonOptions,
) -> Result<Trajectory> {
    solve_pme_strided(problem, mode, grid, dt, newton, 1)
}

/// [`solve_pme`] storing every `stride`-th step; `stride` must divide the
/// number of steps.
pub fn solve_pme_strided(
    problem: &PmeProblem,
    mode: CoefficientMode<'_>,
    grid: &Grid,
    dt: f64,
    newton: &NewtonOptions,
    stride: usize,
) -> Result<Trajectory> {
    if grid != problem.grid() {
        return Err(Error::InvalidGrid("u0 lives on a different grid".into()));
    }
    if grid.boundary() != BoundaryKind::Dirichlet {
        return Err(Error::InvalidGrid("the physical grid must be of Dirichlet kind".into()));
    }
    let steps = step_count(problem.t0, problem.t_final, dt)?;
    if stride == 0 || steps % stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "storage stride {stride} does not divide the {steps} time steps"
        )));
    }
    match mode {
        CoefficientMode::Oscillating { field, eps } => {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
            }
            if field.dim() != grid.dim() {
                return Err(Error::DimensionMismatch {
                    expected: grid.dim(),
                    got: field.dim(),
                });
            }
        }
        CoefficientMode::ThetaDependent { table, m } => {
            let umax = problem.u0.max_abs();
            let need = m * umax.powf(m - 1.0);
            if table.theta_max() < need {
                return Err(Error::ThetaOverflow {
                    theta: need,
                    theta_max: table.theta_max(),
                });
            }
        }
        CoefficientMode::ConstantMatrix(_) => {}
    }

    let stepper = Stepper {
        grid,
        m: problem.m,
        r: problem.r,
        delta: 1e-8 * problem.u0.max_abs().max(1.0),
        lumped: lumped_mass(grid),
        dt,
        opts: newton,
        mode,
    };
    let frozen = match mode {
        CoefficientMode::ConstantMatrix(_) => Some(stepper.stiffness(problem.t0, &[])?),
        CoefficientMode::Oscillating { field, .. } if field.is_time_independent() => {
            Some(stepper.stiffness(problem.t0, &[])?)
        }
        _ => None,
    };

    let mut u = problem.u0.values().to_vec();
    let mut times = vec![problem.t0];
    let mut fields = vec![problem.u0.clone()];
    let mut stats = Vec::with_capacity(steps);
    for step in 1..=steps {
        let t = if step == steps {
            problem.t_final
        } else {
            problem.t0 + step as f64 * dt
        };
        let (next, st) = stepper.step(step, t, &u, frozen.as_ref())?;
        u = next;
        stats.push(st);
        if step % stride == 0 {
            times.push(t);
            fields.push(ScalarField::new(grid.clone(), u.clone())?);
        }
    }
    Ok(Trajectory {
        grid: grid.clone(),
        m: problem.m,
        dt,
        stride,
        times,
        fields,
        steps: stats,
    })
}

struct Stepper<'a> {
    grid: &'a Grid,
    m: f64,
    r: f64,
    delta: f64,
    lumped: Vec<f64>,
    dt: f64,
    opts: &'a NewtonOptions,
    mode: CoefficientMode<'a>,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Stepper<'_> {
    /// Stiffness at time `t`; `u` feeds `θ` in the θ-dependent mode.
    fn stiffness(&self, t: f64, u: &[f64]) -> Result<SparseOperator> {
        let grid = self.grid;
        match self.mode {
            CoefficientMode::ConstantMatrix(a) => assemble_stiffness(grid, |_| a),
            CoefficientMode::Oscillating { field, eps } => {
                let samples = sample_quadrature(grid, |qp| sample_oscillating(field, qp.x, t, eps, self.r))
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?;
                assemble_stiffness(grid, |qp| samples[quad_index(grid, qp)])
            }
            CoefficientMode::ThetaDependent { table, m } => {
                let field = ScalarField::new(grid.clone(), u.to_vec())?;
                let theta_max = table.theta_max();
                let samples = sample_quadrature(grid, |qp| {
                    let c = grid.cell_index(qp.cell);
                    let uq = field.eval_in_cell(c, reference_gauss(qp.index, grid.dim())).max(0.0);
                    let theta = m * uq.powf(m - 1.0);
                    if theta > theta_max * (1.0 + 1e-9) {
                        Err(Error::ThetaOverflow { theta, theta_max })
                    } else {
                        Ok(table.query(theta.min(theta_max)).matrix)
                    }
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                assemble_stiffness(grid, |qp| samples[quad_index(grid, qp)])
            }
        }
    }

    fn phi(&self, u: f64) -> f64 {
        u.abs().powf(self.m - 1.0) * u
    }

    fn residual(&self, k: &SparseOperator, u: &[f64], u_old: &[f64]) -> Vec<f64> {
        let p: Vec<f64> = u.iter().map(|&v| self.phi(v)).collect();
        let mut f = k.mul(&p);
        for i in 0..f.len() {
            f[i] += self.lumped[i] * (u[i] - u_old[i]) / self.dt;
        }
        f
    }

    /// Rounding level of the residual evaluation at `u`.
    fn residual_floor(&self, k: &SparseOperator, u: &[f64], u_old: &[f64]) -> f64 {
        let mut acc = vec![0.0; u.len()];
        for (i, a) in acc.iter_mut().enumerate() {
            let (cols, vals) = k.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                *a += (v * self.phi(u[j])).abs();
            }
            *a += self.lumped[i] * (u[i].abs() + u_old[i].abs()) / self.dt;
        }
        64.0 * f64::EPSILON * norm2(&acc)
    }

    fn newton(&self, step: usize, t: f64, k: &SparseOperator, u_old: &[f64], start: &[f64]) -> Result<(Vec<f64>, usize, f64)> {
        let reference = norm2(
            &u_old
                .iter()
                .zip(&self.lumped)
                .map(|(u, m)| m * u / self.dt)
                .collect::<Vec<_>>(),
        );
        let mut u = start.to_vec();
        let mut f = self.residual(k, &u, u_old);
        let mut rnorm = norm2(&f);
        let target = self.opts.tol * reference;
        let mut iterations = 0;
        while rnorm > target {
            if iterations >= self.opts.max_iter {
                return Err(Error::NewtonDiverged {
                    step,
                    time: t,
                    residual: rnorm / reference.max(f64::MIN_POSITIVE),
                });
            }
            iterations += 1;
            let d: Vec<f64> = u
                .iter()
                .map(|&v| self.m * (v * v + self.delta * self.delta).powf(0.5 * (self.m - 1.0)))
                .collect();
            let mut jac = k.clone();
            let diag: Vec<f64> = d
                .iter()
                .zip(&self.lumped)
                .map(|(di, mi)| mi / (self.dt * di))
                .collect();
            jac.add_diagonal(&diag);
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            let w = linear_solve(&jac, &rhs)?;
            let du: Vec<f64> = w.iter().zip(&d).map(|(wi, di)| wi / di).collect();

            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=self.opts.damping_levels {
                let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + lambda * b).collect();
                let ft = self.residual(k, &trial, u_old);
                let rt = norm2(&ft);
                if rt < rnorm {
                    u = trial;
                    f = ft;
                    rnorm = rt;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                if rnorm <= self.residual_floor(k, &u, u_old) {
                    break;
                }
                return Err(Error::NewtonDiverged {
                    step,
                    time: t,
                    residual: rnorm / reference.max(f64::MIN_POSITIVE),
                });
            }
        }
        Ok((u, iterations, rnorm / reference.max(f64::MIN_POSITIVE)))
    }

    fn step(&self, step: usize, t: f64, u_old: &[f64], frozen: Option<&SparseOperator>) -> Result<(Vec<f64>, StepStats)> {
        let sweeps = match self.mode {
            CoefficientMode::ThetaDependent { .. } => self.opts.picard_sweeps.max(1),
            _ => 1,
        };
        let mut iterate = u_old.to_vec();
        let mut total_iters = 0;
        let mut residual = 0.0;
        let mut used = 0;
        for _ in 0..sweeps {
            used += 1;
            let owned;
            let k = match frozen {
                Some(k) => k,
                None => {
                    owned = self.stiffness(t, &iterate)?;
                    &owned
                }
            };
            let (next, its, res) = self.newton(step, t, k, u_old, &iterate)?;
            total_iters += its;
            residual = res;
            let change = next
                .iter()
                .zip(&iterate)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let scale = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            iterate = next;
            if sweeps == 1 || change <= self.opts.picard_tol * scale.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        let floor = -self.opts.tol * iterate.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (mut clamped, mut zeroed) = (0, 0);
        for v in iterate.iter_mut() {
            if *v < floor {
                clamped += 1;
            } else if *v < 0.0 {
                zeroed += 1;
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok((
            iterate,
            StepStats {
                step,
                time: t,
                newton_iterations: total_iters,
                residual,
                picard_sweeps: used,
                clamped,
                zeroed,
            },
        ))
    }
}

/// Direct banded solve when the band is narrow, conjugate gradients otherwise.
fn linear_solve(op: &SparseOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = op.dim() as f64;
    let bw = op.bandwidth() as f64;
    if n * (bw + 1.0) * (bw + 1.0) <= 5e7 {
        Ok(BandedLdl::factor(op)?.solve(rhs))
    } else {
        solve_spd(op, rhs, 1e-12, 50 * op.dim())
    }
}

/// `(α, κ)` of the Barenblatt profile in `N` dimensions.
pub fn barenblatt_exponents(dim: usize, m: f64) -> (f64, f64) {
    let n = dim as f64;
    let alpha = n / (n * (m - 1.0) + 2.0);
    let kappa = alpha * (m - 1.0) / (2.0 * n * m);
    (alpha, kappa)
}

/// `B(x,t) = t^{-α}[C - κ(t^{-α/N}|x|)²]₊^{1/(m-1)}`.
pub fn barenblatt(dim: usize, m: f64, c: f64, x: [f64; 2], t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("Barenblatt profile needs t > 0, got {t}")));
    }
    if !(m > 1.0) || !(c > 0.0) || !(1..=2).contains(&dim) {
        return Err(Error::InvalidArgument(format!(
            "Barenblatt profile needs m > 1, C > 0, N in {{1, 2}} (m = {m}, C = {c}, N = {dim})"
        )));
    }
    let (alpha, kappa) = barenblatt_exponents(dim, m);
    let r2: f64 = x[..dim].iter().map(|v| v * v).sum();
    let xi2 = t.powf(-2.0 * alpha / dim as f64) * r2;
    let bracket = c - kappa * xi2;
    // points on the free boundary up to rounding count as outside
    if bracket <= 8.0 * f64::EPSILON * c {
        return Ok(0.0);
    }
    Ok(t.powf(-alpha) * bracket.powf(1.0 / (m - 1.0)))
}

pub fn barenblatt_field(grid: &Grid, m: f64, c: f64, t: f64) -> Result<ScalarField> {
    let values = (0..grid.dof_count())
        .map(|d| barenblatt(grid.dim(), m, c, grid.dof_coord(d), t))
        .collect::<Result<Vec<_>>>()?;
    ScalarField::new(grid.clone(), values)
}

/// Named initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    /// Barenblatt profile at the start time.
    Barenblatt { c: f64 },
    /// `base + amplitude Π_j ½(1 + cos(π(x_j - c_j)/R))` inside the box of
    /// half-width `R` around `center`, `base` outside.
    Bump {
        base: f64,
        amplitude: f64,
        center: Vec<f64>,
        radius: f64,
    },
    ConstantPositive { value: f64 },
    /// Nodal values written by the field CSV writer.
    Csv { path: PathBuf },
}

impl InitialProfile {
    pub fn sample(&self, grid: &Grid, m: f64, t0: f64) -> Result<ScalarField> {
        match self {
            InitialProfile::Barenblatt { c } => barenblatt_field(grid, m, *c, t0),
            InitialProfile::Bump {
                base,
                amplitude,
                center,
                radius,
            } => {
                if center.len() != grid.dim() || !(*radius > 0.0) || *base < 0.0 || *amplitude < 0.0 {
                    return Err(Error::InvalidArgument(
                        "bump needs a center per dimension, radius > 0 and nonnegative levels".into(),
                    ));
                }
                Ok(ScalarField::interpolate(grid.clone(), |x| {
                    let mut prod = 1.0;
                    for (j, cj) in center.iter().enumerate() {
                        let d = (x[j] - cj) / radius;
                        prod *= if d.abs() < 1.0 {
                            0.5 * (1.0 + (std::f64::consts::PI * d).cos())
                        } else {
                            0.0
                        };
                    }
                    base + amplitude * prod
                }))
            }
            InitialProfile::ConstantPositive { value } => {
                if !(*value > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "constant_positive needs a positive value, got {value}"
                    )));
                }
                Ok(ScalarField::interpolate(grid.clone(), |_| *value))
            }
            InitialProfile::Csv { path } => io::read_field_csv(path, grid),
        }
    }
}

/// Time series of the quantities bounded uniformly in `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub m: f64,
    pub times: Vec<f64>,
    /// `‖u(t)‖_{L^{m+1}}`, lumped (nodal) quadrature.
    pub lm1_norm: Vec<f64>,
    /// `‖∇uᵐ(t)‖_{L²}`.
    pub grad_um_norm: Vec<f64>,
    /// `∫₀ᵗ ‖∇uᵐ‖²` by the trapezoid rule over the stored stamps.
    pub dissipation: Vec<f64>,
    pub sup_lm1_norm: f64,
    pub sup_lm1_time: f64,
    pub sup_grad_um_norm: f64,
    pub total_dissipation: f64,
    /// Largest relative increase of the `L^{m+1}` norm between stamps.
    pub max_lm1_increase: f64,
}

pub fn energy_report(traj: &Trajectory, m: f64) -> Result<EnergyLedger> {
    if traj.fields.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let mut lm1 = Vec::with_capacity(traj.fields.len());
    let mut grad = Vec::with_capacity(traj.fields.len());
    for f in &traj.fields {
        lm1.push(lumped_lp_norm(f, m + 1.0));
        let um = f.map(|v| v.max(0.0).powf(m));
        grad.push(grad_sq_integral(&um, None)?.sqrt());
    }
    let mut dissipation = vec![0.0];
    for i in 1..traj.times.len() {
        let dt = traj.times[i] - traj.times[i - 1];
        let inc = 0.5 * dt * (grad[i - 1].powi(2) + grad[i].powi(2));
        dissipation.push(dissipation[i - 1] + inc);
    }
    let (mut sup, mut sup_t) = (lm1[0], traj.times[0]);
    for (v, t) in lm1.iter().zip(&traj.times) {
        if *v > sup {
            sup = *v;
            sup_t = *t;
        }
    }
    let max_increase = lm1
        .windows(2)
        .map(|w| if w[0] > 0.0 { (w[1] - w[0]) / w[0] } else { w[1] })
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    Ok(EnergyLedger {
        m,
        times: traj.times.clone(),
        sup_grad_um_norm: grad.iter().cloned().fold(0.0, f64::max),
        total_dissipation: *dissipation.last().expect("nonempty"),
        lm1_norm: lm1,
        grad_um_norm: grad,
        dissipation,
        sup_lm1_norm: sup,
        sup_lm1_time: sup_t,
        max_lm1_increase: max_increase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Grid {
        Grid::new(1, n, BoundaryKind::Dirichlet, [-1.0, 0.0], 2.0).unwrap()
    }

    #[test]
    fn barenblatt_values() {
        let (alpha, kappa) = barenblatt_exponents(1, 2.0);
        assert!((alpha - 1.0 / 3.0).abs() < 1e-15);
        assert!((kappa - 1.0 / 12.0).abs() < 1e-15);
        let b = barenblatt(1, 2.0, kappa, [0.0, 0.0], 1.0).unwrap();
        assert!((b - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(barenblatt(1, 2.0, kappa, [1.5, 0.0], 1.0).unwrap(), 0.0);
        for t in [0.01f64, 0.3, 0.5, 1.0] {
            let edge = t.powf(1.0 / 3.0);
            assert_eq!(barenblatt(1, 2.0, kappa, [edge, 0.0], t).unwrap(), 0.0);
        }
        assert!(barenblatt(1, 2.0, kappa, [0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = line(32);
        let p = PmeProblem::new(2.0, 1.0, 0.0, 0.1, ScalarField::zeros(g.clone()), PositivityClass::General).unwrap();
        let mode = CoefficientMode::ConstantMatrix(Tensor::identity(1));
        let tr = solve_pme(&p, mode, &g, 0.01, &NewtonOptions::default()).unwrap();
        assert_eq!(tr.times.len(), 11);
        assert!(tr.fields.iter().all(|f| f.max_abs() == 0.0));
        let e = energy_report(&tr, 2.0).unwrap();
        assert!(e.lm1_norm.iter().chain(&e.grad_um_norm).chain(&e.dissipation).all(|v| *v == 0.0));
    }

    #[test]
    fn bad_inputs() {
        let g = line(16);
        let u0 = ScalarField::interpolate(g.clone(), |_| 0.5);
        assert!(matches!(
            PmeProblem::new(0.5, 1.0, 0.0, 1.0, u0.clone(), PositivityClass::General),
            Err(Error::Hypothesis { hypothesis: "H1", .. })
        ));
        let neg = ScalarField::interpolate(g.clone(), |x| x[0]);
        assert!(PmeProblem::new(2.0, 1.0, 0.0, 1.0, neg, PositivityClass::General).is_err());
        let p = PmeProblem::new(2.0, 1.0, 0.0, 0.1, u0, PositivityClass::General).unwrap();
        let mode = CoefficientMode::ConstantMatrix(Tensor::identity(1));
        let o = NewtonOptions::default();
        assert!(solve_pme(&p, mode, &g, 0.0, &o).is_err());
        assert!(solve_pme(&p, mode, &g, 0.03, &o).is_err());
        assert!(solve_pme_strided(&p, mode, &g, 0.01, &o, 3).is_err());
    }

    #[test]
    fn positivity_warnings() {
        let g = line(16);
        let u0 = ScalarField::interpolate(g.clone(), |x| (0.5 - x[0].abs()).max(0.0));
        let p = PmeProblem::new(3.0, 1.0, 0.0, 1.0, u0.clone(), PositivityClass::General).unwrap();
        assert_eq!(p.warnings().len(), 1);
        let p = PmeProblem::new(3.0, 1.0, 0.0, 1.0, u0, PositivityClass::LogIntegrable).unwrap();
        assert_eq!(p.warnings().len(), 1);
        let pos = ScalarField::interpolate(g, |_| 0.2);
        let p = PmeProblem::new(3.0, 1.0, 0.0, 1.0, pos, PositivityClass::LogIntegrable).unwrap();
        assert!(p.warnings().is_empty());
    }

    #[test]
    fn bump_profile_shape() {
        let g = Grid::new(1, 8, BoundaryKind::Dirichlet, [0.0, 0.0], 1.0).unwrap();
        let prof = InitialProfile::Bump {
            base: 0.1,
            amplitude: 1.0,
            center: vec![0.5],
            radius: 0.25,
        };
        let f = prof.sample(&g, 2.0, 0.0).unwrap();
        assert!((f.values()[3] - 1.1).abs() < 1e-15);
        assert!((f.values()[0] - 0.1).abs() < 1e-15);
    }
}
