//! Convergence diagnostics over an `ε`-ladder of oscillating runs and the
//! matching homogenized run.
//!
//! Space integrals use the Gauss rule of the physical grid, time integrals
//! the composite trapezoid rule over the stored stamps.

use serde::{Deserialize, Serialize};

use crate::assembly::quad_weight;
use crate::cell::{CellSolution, Regime, ThetaTable};
use crate::coefficients::{frac, oscillating_point};
use crate::error::{Error, Result};
use crate::grid::{reference_gauss, Grid, ScalarField};
use crate::io;
use crate::norms::{cell_range, cells_in, grad_sq_integral, norm, NormKind, Subdomain};
use crate::pme::{energy_report, Trajectory};

const TIME_TOL: f64 = 1e-12;

/// Oscillating runs for a decreasing `ε`-ladder plus the homogenized run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub eps: Vec<f64>,
    pub runs: Vec<Trajectory>,
    pub homogenized: Trajectory,
    pub m: f64,
    pub r: f64,
}

fn check_compatible(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::Diagnostics("trajectories live on different grids".into()));
    }
    if a.m != b.m {
        return Err(Error::Diagnostics(format!(
            "trajectories use different exponents ({} and {})",
            a.m, b.m
        )));
    }
    if a.times.len() != b.times.len()
        || a.times.iter().zip(&b.times).any(|(s, t)| (s - t).abs() > TIME_TOL)
    {
        return Err(Error::Diagnostics(format!(
            "trajectories have different time stamps (final times {} and {})",
            a.final_time(),
            b.final_time()
        )));
    }
    Ok(())
}

impl SweepResult {
    pub fn new(eps: Vec<f64>, runs: Vec<Trajectory>, homogenized: Trajectory, m: f64, r: f64) -> Result<Self> {
        if eps.is_empty() || eps.len() != runs.len() {
            return Err(Error::Diagnostics(format!(
                "{} eps values for {} runs",
                eps.len(),
                runs.len()
            )));
        }
        if eps.iter().any(|e| !(*e > 0.0)) || eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Diagnostics("eps ladder must be positive and strictly decreasing".into()));
        }
        for run in &runs {
            check_compatible(run, &homogenized)?;
        }
        if homogenized.m != m {
            return Err(Error::Diagnostics(format!(
                "runs use m = {}, sweep declares m = {m}",
                homogenized.m
            )));
        }
        Ok(Self {
            eps,
            runs,
            homogenized,
            m,
            r,
        })
    }

    pub fn run_for(&self, eps: f64) -> Result<&Trajectory> {
        self.eps
            .iter()
            .position(|e| (e - eps).abs() <= 1e-12 * eps)
            .map(|i| &self.runs[i])
            .ok_or_else(|| Error::Diagnostics(format!("no run for eps = {eps}")))
    }
}

/// Trapezoid rule over stamps.
fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

fn power_field(f: &ScalarField, m: f64) -> ScalarField {
    f.map(|v| v.max(0.0).powf(m))
}

/// Cell correctors for one regime.
#[derive(Debug, Clone, Copy)]
pub enum CorrectorCells<'a> {
    /// One solution per direction (sub or super regime).
    Fixed(&'a [CellSolution]),
    /// Table with stored cell fields, interpolated in `θ = m u^{m-1}`.
    Critical { table: &'a ThetaTable, m: f64 },
}

impl CorrectorCells<'_> {
    pub fn regime(&self) -> Result<Regime> {
        match self {
            CorrectorCells::Fixed(sols) => {
                let first = sols
                    .first()
                    .ok_or_else(|| Error::Diagnostics("no cell solutions".into()))?;
                if sols.iter().any(|s| s.regime != first.regime) {
                    return Err(Error::Diagnostics("cell solutions mix regimes".into()));
                }
                Ok(first.regime)
            }
            CorrectorCells::Critical { table, .. } => {
                if table.solutions.is_none() {
                    return Err(Error::Diagnostics(
                        "theta table was built without its cell fields".into(),
                    ));
                }
                Ok(Regime::Critical)
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            CorrectorCells::Fixed(sols) => sols.len(),
            CorrectorCells::Critical { table, .. } => table.dim,
        }
    }

    /// Interpolation nodes and weights in `θ`.
    fn theta_weights(table: &ThetaTable, theta: f64) -> [(usize, f64); 2] {
        let last = table.thetas.len() - 1;
        if theta >= table.thetas[last] {
            return [(last, 1.0), (last, 0.0)];
        }
        let (i, t) = table.bracket(theta.max(0.0));
        [(i, 1.0 - t), (i + 1, t)]
    }

    fn sorted(sols: &[CellSolution], k: usize) -> Result<&CellSolution> {
        sols.iter()
            .find(|s| s.k == k)
            .ok_or_else(|| Error::Diagnostics(format!("missing cell solution for k = {k}")))
    }

    /// Rows `∇_yΦ_k(y, s)` for `k = 1..dim`; `theta` is used in the
    /// critical regime only.
    pub fn gradients(&self, y: [f64; 2], s: f64, theta: f64) -> Result<[[f64; 2]; 2]> {
        let mut out = [[0.0; 2]; 2];
        match self {
            CorrectorCells::Fixed(sols) => {
                for (k, row) in out.iter_mut().enumerate().take(sols.len()) {
                    *row = Self::sorted(sols, k + 1)?.corrector_grad(y, s);
                }
            }
            CorrectorCells::Critical { table, .. } => {
                let all = table.solutions.as_ref().expect("checked by regime()");
                for (node, w) in Self::theta_weights(table, theta) {
                    if w == 0.0 {
                        continue;
                    }
                    for (k, row) in out.iter_mut().enumerate().take(table.dim) {
                        let g = Self::sorted(&all[node], k + 1)?.corrector_grad(y, s);
                        row[0] += w * g[0];
                        row[1] += w * g[1];
                    }
                }
            }
        }
        Ok(out)
    }

    /// `Φ_k(y, s)` for `k = 1..dim`.
    pub fn values(&self, y: [f64; 2], s: f64, theta: f64) -> Result<[f64; 2]> {
        let mut out = [0.0; 2];
        match self {
            CorrectorCells::Fixed(sols) => {
                for (k, v) in out.iter_mut().enumerate().take(sols.len()) {
                    *v = Self::sorted(sols, k + 1)?.corrector_value(y, s);
                }
            }
            CorrectorCells::Critical { table, .. } => {
                let all = table.solutions.as_ref().expect("checked by regime()");
                for (node, w) in Self::theta_weights(table, theta) {
                    if w == 0.0 {
                        continue;
                    }
                    for (k, v) in out.iter_mut().enumerate().take(table.dim) {
                        *v += w * Self::sorted(&all[node], k + 1)?.corrector_value(y, s);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// `∬ |∇u_εᵐ - ∇uᵐ - Σ_k ∂_k uᵐ ∇_yΦ_k(x/ε, t/εʳ)|²`.
pub fn corrector_error(sweep: &SweepResult, cells: CorrectorCells<'_>, eps: f64) -> Result<f64> {
    let regime = cells.regime()?;
    if regime != Regime::from_r(sweep.r)? {
        return Err(Error::Diagnostics(format!(
            "cell solutions are for the {} regime, r = {} needs {}",
            regime.name(),
            sweep.r,
            Regime::from_r(sweep.r)?.name()
        )));
    }
    let run = sweep.run_for(eps)?;
    let hom = &sweep.homogenized;
    check_compatible(run, hom)?;
    let grid = &hom.grid;
    if cells.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: cells.dim(),
        });
    }
    let m = sweep.m;
    let w = quad_weight(grid);
    let range = cell_range(grid, None)?;
    let mut per_stamp = Vec::with_capacity(hom.times.len());
    for (idx, &t) in hom.times.iter().enumerate() {
        let ue = power_field(&run.fields[idx], m);
        let u = &hom.fields[idx];
        let uh = power_field(u, m);
        let s = frac(t / eps.powf(sweep.r));
        let mut total = 0.0;
        for cell in cells_in(&range, grid.dim()) {
            let pts = grid.gauss_points(cell);
            for (g, &x) in pts.iter().enumerate().take(grid.quad_points_per_cell()) {
                let xi = reference_gauss(g, grid.dim());
                let ge = ue.grad_in_cell(cell, xi);
                let gh = uh.grad_in_cell(cell, xi);
                let mut d = [ge[0] - gh[0], ge[1] - gh[1]];
                if gh != [0.0; 2] {
                    let theta = m * u.eval_in_cell(cell, xi).max(0.0).powf(m - 1.0);
                    let phi = cells.gradients(oscillating_point(x, eps), s, theta)?;
                    for k in 0..grid.dim() {
                        d[0] -= gh[k] * phi[k][0];
                        d[1] -= gh[k] * phi[k][1];
                    }
                }
                total += w * (d[0] * d[0] + d[1] * d[1]);
            }
        }
        per_stamp.push(total);
    }
    Ok(trapezoid(&hom.times, &per_stamp))
}

/// Nodal two-scale corrector data at one stored stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorAssembly {
    pub grid: Grid,
    pub time: f64,
    pub eps: f64,
    /// Recovered nodal `∇uᵐ` (average over the adjacent cells).
    pub grad_um: Vec<[f64; 2]>,
    /// `Σ_k ∂_k uᵐ ∇_yΦ_k(x/ε, t/εʳ)`.
    pub corrector_grad: Vec<[f64; 2]>,
    /// `z = Σ_k ∂_k uᵐ Φ_k(x/ε, t/εʳ)`.
    pub z: Vec<f64>,
    /// Critical regime: `w` with `z = m u^{m-1} w`, zero where `u = 0`.
    pub w: Option<Vec<f64>>,
}

fn nodal_gradient(f: &ScalarField) -> Vec<[f64; 2]> {
    let grid = f.grid();
    let mut sum = vec![[0.0; 2]; grid.dof_count()];
    let mut count = vec![0usize; grid.dof_count()];
    for c in 0..grid.cell_count() {
        let cell = grid.cell_index(c);
        let dofs = grid.cell_dofs(cell);
        for (a, dof) in dofs.iter().enumerate().take(grid.nodes_per_cell()) {
            let Some(d) = dof else { continue };
            let xi = [(a & 1) as f64, ((a >> 1) & 1) as f64];
            let g = f.grad_in_cell(cell, xi);
            sum[*d][0] += g[0];
            sum[*d][1] += g[1];
            count[*d] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64])
        .collect()
}

impl CorrectorAssembly {
    pub fn build(u: &ScalarField, t: f64, m: f64, r: f64, eps: f64, cells: CorrectorCells<'_>) -> Result<Self> {
        let regime = cells.regime()?;
        let grid = u.grid();
        let grad_um = nodal_gradient(&power_field(u, m));
        let s = frac(t / eps.powf(r));
        let n = grid.dof_count();
        let mut corrector_grad = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for (dof, g) in grad_um.iter().enumerate() {
            let x = grid.dof_coord(dof);
            let y = oscillating_point(x, eps);
            let uv = u.values()[dof].max(0.0);
            let theta = m * uv.powf(m - 1.0);
            let phi_grad = cells.gradients(y, s, theta)?;
            let phi = cells.values(y, s, theta)?;
            let mut cg = [0.0; 2];
            let mut zv = 0.0;
            for k in 0..grid.dim() {
                cg[0] += g[k] * phi_grad[k][0];
                cg[1] += g[k] * phi_grad[k][1];
                zv += g[k] * phi[k];
            }
            corrector_grad.push(cg);
            if regime == Regime::Critical {
                let wv = if theta > 0.0 { zv / theta } else { 0.0 };
                w.push(wv);
                z.push(theta * wv);
            } else {
                z.push(zv);
            }
        }
        Ok(Self {
            grid: grid.clone(),
            time: t,
            eps,
            grad_um,
            corrector_grad,
            z,
            w: (regime == Regime::Critical).then_some(w),
        })
    }
}

/// Norm of `u_ε - u` over space-time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolutionNorm {
    /// `L²(Ω × (0,T))`.
    L2Spacetime,
    /// `L^ρ(0,T; L^{m+1}(Ω))`.
    LrhoLm1 { rho: f64 },
}

impl SolutionNorm {
    pub fn parse(tag: &str, rho: Option<f64>) -> Result<Self> {
        match tag {
            "l2_spacetime" => Ok(SolutionNorm::L2Spacetime),
            "lrho_lm1" => Ok(SolutionNorm::LrhoLm1 {
                rho: rho.ok_or_else(|| Error::Diagnostics("lrho_lm1 needs rho".into()))?,
            }),
            other => Err(Error::Diagnostics(format!("unknown norm `{other}`"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            SolutionNorm::L2Spacetime => "l2_spacetime".into(),
            SolutionNorm::LrhoLm1 { rho } => format!("l{rho}_lm1"),
        }
    }
}

/// Per-`ε` value of the chosen norm of `u_ε - u`.
pub fn solution_error(sweep: &SweepResult, kind: SolutionNorm) -> Result<Vec<f64>> {
    let hom = &sweep.homogenized;
    let (p, rho) = match kind {
        SolutionNorm::L2Spacetime => (2.0, 2.0),
        SolutionNorm::LrhoLm1 { rho } => {
            if !(rho >= 1.0) || !rho.is_finite() {
                return Err(Error::Diagnostics(format!("rho must lie in [1, inf), got {rho}")));
            }
            (sweep.m + 1.0, rho)
        }
    };
    sweep
        .runs
        .iter()
        .map(|run| {
            check_compatible(run, hom)?;
            let per_stamp = run
                .fields
                .iter()
                .zip(&hom.fields)
                .map(|(a, b)| {
                    let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
                    let d = ScalarField::new(a.grid().clone(), diff)?;
                    Ok(norm(&d, NormKind::Lp(p), None)?.powf(rho))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(trapezoid(&hom.times, &per_stamp).powf(1.0 / rho))
        })
        .collect()
}

/// `constant + Σ a cos(2π ℓ·y)` on the unit cell (or in `s` with one index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineMode {
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<CosineTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineTerm {
    pub amplitude: f64,
    pub freq: Vec<i32>,
}

impl CosineMode {
    pub fn one() -> Self {
        Self {
            constant: 1.0,
            terms: Vec::new(),
        }
    }

    pub fn cosine(freq: Vec<i32>) -> Self {
        Self {
            constant: 0.0,
            terms: vec![CosineTerm { amplitude: 1.0, freq }],
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let mut v = self.constant;
        for term in &self.terms {
            let phase: f64 = term.freq.iter().zip(y).map(|(l, yi)| *l as f64 * yi).sum();
            v += term.amplitude * (2.0 * std::f64::consts::PI * phase).cos();
        }
        v
    }
}

/// Polynomial bump `Π_j (1 - ((x_j - c_j)/R)²)²` supported in a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyBump {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl PolyBump {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for (c, xi) in self.center.iter().zip(x) {
            let d = (xi - c) / self.radius;
            if d.abs() >= 1.0 {
                return 0.0;
            }
            v *= (1.0 - d * d).powi(2);
        }
        v
    }
}

/// Test functions `φ(x) b(x/ε) ψ(t) c(t/εʳ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingTest {
    pub phi: PolyBump,
    pub b: CosineMode,
    pub psi: PolyBump,
    pub c: CosineMode,
}

/// `∬ u φ(x) b(x/ε) ψ(t) c(t/εʳ) dx dt`.
pub fn two_scale_pairing(traj: &Trajectory, test: &PairingTest, eps: f64, r: f64) -> Result<f64> {
    if !(eps > 0.0) || !(r > 0.0) {
        return Err(Error::Diagnostics(format!("eps and r must be positive (eps = {eps}, r = {r})")));
    }
    let grid = &traj.grid;
    if test.phi.center.len() != grid.dim() || test.psi.center.len() != 1 {
        return Err(Error::Diagnostics(
            "phi needs one center coordinate per dimension and psi exactly one".into(),
        ));
    }
    if !(test.phi.radius > 0.0) || !(test.psi.radius > 0.0) {
        return Err(Error::Diagnostics("bump radii must be positive".into()));
    }
    let w = quad_weight(grid);
    let range = cell_range(grid, None)?;
    let dim = grid.dim();
    let mut weights = Vec::new();
    let mut points = Vec::new();
    for cell in cells_in(&range, dim) {
        let pts = grid.gauss_points(cell);
        for (g, &x) in pts.iter().enumerate().take(grid.quad_points_per_cell()) {
            let wx = test.phi.eval(&x[..dim]);
            if wx != 0.0 {
                let y = oscillating_point(x, eps);
                weights.push(w * wx * test.b.eval(&y[..dim]));
                points.push((cell, reference_gauss(g, dim)));
            }
        }
    }
    let per_stamp: Vec<f64> = traj
        .times
        .iter()
        .zip(&traj.fields)
        .map(|(&t, f)| {
            let time_w = test.psi.eval(&[t]) * test.c.eval(&[frac(t / eps.powf(r))]);
            if time_w == 0.0 {
                return 0.0;
            }
            let space: f64 = points
                .iter()
                .zip(&weights)
                .map(|((cell, xi), wq)| wq * f.eval_in_cell(*cell, *xi))
                .sum();
            time_w * space
        })
        .collect();
    Ok(trapezoid(&traj.times, &per_stamp))
}

/// One named per-`ε` (or per-refinement) series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    /// Ladder parameter (`ε` or mesh size), decreasing.
    pub ladder: Vec<f64>,
    pub values: Vec<f64>,
}

/// Rule that turns a series into a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    StrictlyDecreasing,
    /// `max / min ≤ bound`.
    RatioBound { bound: f64 },
    /// Every defined adjacent rate at least `min`; undefined rates fail.
    MinRate { min: f64 },
    /// Every value at most `max`.
    AtMost { max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub series: String,
    pub rule: Rule,
    pub pass: bool,
    pub detail: String,
}

/// `log₂(e_i / e_{i+1})` for a ratio-2 ladder; `None` when undefined.
pub fn rates(series: &Series) -> Option<Vec<Option<f64>>> {
    let ratio2 = series
        .ladder
        .windows(2)
        .all(|w| w[1] > 0.0 && ((w[0] / w[1]) - 2.0).abs() <= 1e-9);
    if !ratio2 {
        return None;
    }
    Some(
        series
            .values
            .windows(2)
            .map(|w| {
                if w[0] > 0.0 && w[1] > 0.0 && w[0].is_finite() && w[1].is_finite() {
                    Some((w[0] / w[1]).log2())
                } else {
                    None
                }
            })
            .collect(),
    )
}

impl Rule {
    pub fn evaluate(&self, series: &Series) -> Verdict {
        let v = &series.values;
        let (pass, detail) = match *self {
            Rule::StrictlyDecreasing => {
                let ok = v.len() >= 2 && v.windows(2).all(|w| w[1] < w[0]);
                (ok, format!("values {v:?}"))
            }
            Rule::RatioBound { bound } => {
                let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let ratio = if min > 0.0 { max / min } else { f64::INFINITY };
                (ratio <= bound, format!("max/min = {ratio} (bound {bound})"))
            }
            Rule::MinRate { min } => match rates(series) {
                None => (false, "ladder is not ratio-2; rates undefined".into()),
                Some(rs) => {
                    let ok = !rs.is_empty() && rs.iter().all(|r| matches!(r, Some(x) if *x >= min));
                    (ok, format!("rates {rs:?} (min {min})"))
                }
            },
            Rule::AtMost { max } => {
                let worst = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (worst <= max, format!("largest value {worst} (max {max})"))
            }
        };
        Verdict {
            series: series.name.clone(),
            rule: *self,
            pass,
            detail,
        }
    }
}

/// Series, rates and verdicts; every verdict is recomputable from the
/// stored series and rules.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub series: Vec<Series>,
    /// Adjacent rates per series (`null` when undefined or not ratio-2).
    pub rates: Vec<(String, Option<Vec<Option<f64>>>)>,
    pub verdicts: Vec<Verdict>,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn add_series(&mut self, series: Series, rules: &[Rule]) {
        self.rates.push((series.name.clone(), rates(&series)));
        for rule in rules {
            self.verdicts.push(rule.evaluate(&series));
        }
        self.series.push(series);
    }

    pub fn merge(&mut self, other: DiagnosticsReport) {
        self.series.extend(other.series);
        self.rates.extend(other.rates);
        self.verdicts.extend(other.verdicts);
        self.warnings.extend(other.warnings);
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    /// Verdicts recomputed from the stored series.
    pub fn recompute_verdicts(&self) -> Result<Vec<Verdict>> {
        self.verdicts
            .iter()
            .map(|v| {
                let s = self
                    .series
                    .iter()
                    .find(|s| s.name == v.series)
                    .ok_or_else(|| Error::Diagnostics(format!("verdict refers to unknown series `{}`", v.series)))?;
                Ok(v.rule.evaluate(s))
            })
            .collect()
    }

    /// Aligned CSV: one row per ladder entry, one column per series.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["series".to_string(), "ladder".to_string(), "value".to_string(), "rate".to_string()];
        header.truncate(4);
        let mut rows = Vec::new();
        for (s, (_, r)) in self.series.iter().zip(&self.rates) {
            for (i, (l, v)) in s.ladder.iter().zip(&s.values).enumerate() {
                let rate = match r {
                    Some(rs) if i > 0 => rs[i - 1].map_or("undefined".to_string(), |x| format!("{x:.4}")),
                    _ => String::new(),
                };
                rows.push(vec![s.name.clone(), format!("{l:e}"), format!("{v:e}"), rate]);
            }
        }
        io::aligned_csv(&header, &rows)
    }

    pub fn write(&self, json: &std::path::Path, csv: &std::path::Path) -> Result<()> {
        io::write_json(json, self)?;
        io::write_text(csv, &self.to_csv())
    }
}

/// Report with rates and strict-decrease verdicts for each series.
pub fn convergence_table(series: Vec<Series>) -> DiagnosticsReport {
    let mut report = DiagnosticsReport::default();
    for s in series {
        report.add_series(s, &[Rule::StrictlyDecreasing]);
    }
    report
}

/// Local bounds on `ω ⋐ Ω`: `∬_ω |∇u_ε|²` and, for `m ≥ 3`, the
/// weight functional required by the positivity class.
pub fn local_gradient_estimate(
    sweep: &SweepResult,
    omega: &Subdomain,
    m: f64,
    u0: &ScalarField,
    bound: f64,
) -> Result<DiagnosticsReport> {
    let grid = &sweep.homogenized.grid;
    if !(omega.margin(grid) > 0.0) {
        return Err(Error::Diagnostics(
            "omega must lie strictly inside the domain (positive margin to the boundary)".into(),
        ));
    }
    if m < 2.0 {
        return Err(Error::Diagnostics(format!(
            "local gradient estimates need m >= 2 (got {m}); use the energy ledger instead"
        )));
    }
    let range = cell_range(grid, Some(omega))?;
    let mut report = DiagnosticsReport::default();
    if m >= 3.0 {
        let zeros = cells_in(&range, grid.dim())
            .flat_map(|c| grid.cell_nodes(c).into_iter().take(grid.nodes_per_cell()))
            .filter(|&node| u0.node_value(node) <= 0.0)
            .count();
        if zeros > 0 {
            report.warnings.push(format!(
                "u0 vanishes at {zeros} node incidences inside omega: {} is not locally integrable there",
                if m == 3.0 { "log u0" } else { "u0^(3-m)" }
            ));
        }
    }
    let mut grad_series = Vec::with_capacity(sweep.runs.len());
    let mut weight_series = Vec::with_capacity(sweep.runs.len());
    for run in &sweep.runs {
        let per_stamp = run
            .fields
            .iter()
            .map(|f| grad_sq_integral(f, Some(omega)))
            .collect::<Result<Vec<_>>>()?;
        grad_series.push(trapezoid(&run.times, &per_stamp));
        if m >= 3.0 {
            let vol = grid.cell_volume();
            let mut sup: f64 = 0.0;
            for f in &run.fields {
                let mut total = 0.0;
                for c in cells_in(&range, grid.dim()) {
                    let u = f.eval_in_cell(c, [0.5, 0.5]).max(f64::MIN_POSITIVE);
                    total += vol
                        * if m == 3.0 {
                            if u <= 1.0 {
                                -u.ln()
                            } else {
                                0.0
                            }
                        } else {
                            u.powf(3.0 - m)
                        };
                }
                sup = sup.max(total);
            }
            weight_series.push(sup);
        }
    }
    report.add_series(
        Series {
            name: "local_grad_sq".into(),
            ladder: sweep.eps.clone(),
            values: grad_series,
        },
        &[Rule::RatioBound { bound }],
    );
    if m >= 3.0 {
        report.add_series(
            Series {
                name: if m == 3.0 { "sup_neg_log_u" } else { "sup_u_pow_3_minus_m" }.into(),
                ladder: sweep.eps.clone(),
                values: weight_series,
            },
            &[Rule::RatioBound { bound }],
        );
    }
    Ok(report)
}

/// Sup-in-time `L^{m+1}` norm and accumulated `∫‖∇uᵐ‖²` across the ladder.
pub fn energy_uniformity(sweep: &SweepResult, bound: f64) -> Result<DiagnosticsReport> {
    let mut sup = Vec::new();
    let mut diss = Vec::new();
    let mut report = DiagnosticsReport::default();
    for (eps, run) in sweep.eps.iter().zip(&sweep.runs) {
        let e = energy_report(run, sweep.m)?;
        if e.max_lm1_increase > 1e-12 {
            report.warnings.push(format!(
                "eps = {eps}: L^(m+1) norm increased by a relative {:e}",
                e.max_lm1_increase
            ));
        }
        sup.push(e.sup_lm1_norm);
        diss.push(e.total_dissipation);
    }
    report.add_series(
        Series {
            name: "sup_lm1_norm".into(),
            ladder: sweep.eps.clone(),
            values: sup,
        },
        &[Rule::RatioBound { bound }],
    );
    report.add_series(
        Series {
            name: "grad_um_sq_integral".into(),
            ladder: sweep.eps.clone(),
            values: diss,
        },
        &[Rule::RatioBound { bound }],
    );
    Ok(report)
}
