//! Experiment configuration: JSON with a fixed schema, unknown keys rejected.

use std::path::{Path, PathBuf};

use pme_homog::cell::{CellOptions, Regime};
use pme_homog::coefficients::{make_coefficient, validate_coefficient, CoefficientField, ValidationReport};
use pme_homog::diagnostics::PairingTest;
use pme_homog::grid::{BoundaryKind, Grid};
use pme_homog::norms::Subdomain;
use pme_homog::pme::{step_count, InitialProfile, NewtonOptions, PmeProblem, PositivityClass};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::RunError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemBlock,
    pub coefficient: CoefficientBlock,
    pub discretization: DiscretizationBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub cell: CellBlock,
    #[serde(default)]
    pub diagnostics: DiagnosticsBlock,
    #[serde(default)]
    pub newton: NewtonOptions,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub m: f64,
    pub r: f64,
    #[serde(default)]
    pub t0: f64,
    pub t_final: f64,
    pub domain: DomainBlock,
    pub u0: InitialProfile,
    /// Defaults to the class required by `m`.
    #[serde(default)]
    pub positivity: Option<PositivityClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBlock {
    pub dim: usize,
    #[serde(default)]
    pub origin: [f64; 2],
    pub side: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientBlock {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
    /// CSV lattice for the `tabulated` family.
    #[serde(default)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationBlock {
    pub n: usize,
    pub n_cell: usize,
    /// Trapezoid nodes in `s` for the sub-critical cell problems.
    #[serde(default = "default_s_nodes")]
    pub s_nodes: usize,
    /// Implicit Euler steps per period for the critical cell problems.
    #[serde(default = "default_s_steps")]
    pub s_steps: usize,
    pub dt: f64,
    #[serde(default = "one")]
    pub stride: usize,
}

fn default_s_nodes() -> usize {
    16
}

fn default_s_steps() -> usize {
    16
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub eps: Vec<f64>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            eps: vec![0.25, 0.125, 0.0625],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellBlock {
    /// Largest `θ` of the table (critical regime only).
    #[serde(default)]
    pub theta_max: Option<f64>,
    #[serde(default = "default_theta_nodes")]
    pub theta_nodes: usize,
    #[serde(default)]
    pub options: CellOptions,
}

fn default_theta_nodes() -> usize {
    9
}

impl Default for CellBlock {
    fn default() -> Self {
        Self {
            theta_max: None,
            theta_nodes: default_theta_nodes(),
            options: CellOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    SolutionError,
    CorrectorError,
    Energy,
    LocalGradient,
    Pairing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsBlock {
    #[serde(default = "default_reports")]
    pub reports: Vec<ReportKind>,
    #[serde(default = "default_energy_ratio")]
    pub energy_ratio: f64,
    #[serde(default = "default_local_ratio")]
    pub local_ratio: f64,
    /// Defaults to the centred box of half the side length.
    #[serde(default)]
    pub omega: Option<Subdomain>,
    /// Time exponent of the `L^ρ(0,T; L^{m+1})` error.
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub pairing: Option<PairingTest>,
}

fn default_reports() -> Vec<ReportKind> {
    vec![
        ReportKind::SolutionError,
        ReportKind::CorrectorError,
        ReportKind::Energy,
        ReportKind::LocalGradient,
    ]
}

fn default_energy_ratio() -> f64 {
    1.5
}

fn default_local_ratio() -> f64 {
    2.0
}

fn default_rho() -> f64 {
    2.0
}

impl Default for DiagnosticsBlock {
    fn default() -> Self {
        Self {
            reports: default_reports(),
            energy_ratio: default_energy_ratio(),
            local_ratio: default_local_ratio(),
            omega: None,
            rho: default_rho(),
            pairing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Outcome of `validate`: hypothesis checks and resolution checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub regime: Regime,
    pub coefficient: ValidationReport,
    pub cells_per_finest_period: f64,
    pub required_theta_max: Option<f64>,
    pub steps: usize,
    pub warnings: Vec<String>,
}

/// Inputs built from a validated configuration.
pub struct Prepared {
    pub coeff: CoefficientField,
    pub problem: PmeProblem,
    pub grid: Grid,
    pub cell_grid: Grid,
    pub summary: ValidationSummary,
}

fn invalid(msg: impl Into<String>) -> RunError {
    RunError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn regime(&self) -> Result<Regime, RunError> {
        Regime::from_r(self.problem.r).map_err(|e| invalid(e.to_string()))
    }

    /// Hash of the blocks that determine the solves; diagnostics settings and
    /// the output location are excluded.
    pub fn solve_hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputBlock::default();
        c.diagnostics = DiagnosticsBlock::default();
        digest(&c)
    }

    pub fn full_hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputBlock::default();
        digest(&c)
    }

    pub fn build_coefficient(&self) -> Result<CoefficientField, RunError> {
        let b = &self.coefficient;
        let field = if b.family == "tabulated" {
            let path = b
                .table
                .as_ref()
                .ok_or_else(|| invalid("the tabulated family needs coefficient.table"))?;
            CoefficientField::from_table(path)
        } else {
            if b.table.is_some() {
                return Err(invalid("coefficient.table is only used by the tabulated family"));
            }
            make_coefficient(&b.family, &b.params, self.problem.domain.dim)
        };
        let field = field.map_err(|e| invalid(e.to_string()))?;
        if field.dim() != self.problem.domain.dim {
            return Err(invalid(format!(
                "coefficient has dimension {}, domain has {}",
                field.dim(),
                self.problem.domain.dim
            )));
        }
        Ok(field)
    }

    /// All checks that must pass before any solve.
    pub fn prepare(&self) -> Result<Prepared, RunError> {
        let regime = self.regime()?;
        let p = &self.problem;
        let d = &self.discretization;
        let coeff = self.build_coefficient()?;
        let report = validate_coefficient(&coeff, 10_000, self.seed);
        if !report.h2_symmetry.pass {
            return Err(invalid(format!("hypothesis H2 violated: {}", report.h2_symmetry.detail)));
        }
        if !report.h3_ellipticity.pass {
            return Err(invalid(format!("hypothesis H3 violated: {}", report.h3_ellipticity.detail)));
        }
        if !report.periodicity.pass {
            return Err(invalid(format!("coefficient is not periodic: {}", report.periodicity.detail)));
        }
        let mut warnings = Vec::new();
        if !report.h4_time_regularity.pass {
            warnings.push(format!("time regularity: {}", report.h4_time_regularity.detail));
        }
        let grid = Grid::new(p.domain.dim, d.n, BoundaryKind::Dirichlet, p.domain.origin, p.domain.side)
            .map_err(|e| invalid(e.to_string()))?;
        let cell_grid = Grid::unit_cell(p.domain.dim, d.n_cell).map_err(|e| invalid(e.to_string()))?;
        let u0 = p.u0.sample(&grid, p.m, p.t0).map_err(|e| invalid(e.to_string()))?;
        let positivity = p.positivity.unwrap_or_else(|| PositivityClass::required_for(p.m));
        let problem = PmeProblem::new(p.m, p.r, p.t0, p.t_final, u0, positivity).map_err(|e| invalid(e.to_string()))?;
        warnings.extend(problem.warnings());

        let eps = &self.sweep.eps;
        if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) || eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(invalid("sweep.eps must be a nonempty, positive, strictly decreasing ladder"));
        }
        let finest = eps[eps.len() - 1];
        let per_period = finest / grid.h();
        if per_period < 8.0 - 1e-9 {
            return Err(invalid(format!(
                "physical grid resolves eps = {finest} with {per_period} cells per period; at least 8 are needed (n >= {})",
                (8.0 * p.domain.side / finest).ceil()
            )));
        }
        let steps_per_period = finest.powf(p.r) / d.dt;
        if steps_per_period < 8.0 {
            warnings.push(format!(
                "the time period eps^r = {} of the finest eps spans only {steps_per_period:.2} steps of dt = {}",
                finest.powf(p.r),
                d.dt
            ));
        }
        let steps = step_count(p.t0, p.t_final, d.dt).map_err(|e| invalid(e.to_string()))?;
        if d.stride == 0 || steps % d.stride != 0 {
            return Err(invalid(format!(
                "storage stride {} must divide the {steps} time steps",
                d.stride
            )));
        }
        if d.s_nodes == 0 || d.s_steps == 0 {
            return Err(invalid("s_nodes and s_steps must be positive"));
        }
        let required_theta_max = if regime == Regime::Critical {
            let umax = problem.u0.values().iter().cloned().fold(0.0f64, f64::max);
            let need = p.m * umax.powf(p.m - 1.0);
            match self.cell.theta_max {
                None => {
                    return Err(invalid(format!(
                        "r = 2 needs cell.theta_max >= m max(u0)^(m-1) = {need}"
                    )))
                }
                Some(t) if t < need => {
                    return Err(invalid(format!(
                        "cell.theta_max = {t} is below the required m max(u0)^(m-1) = {need}"
                    )))
                }
                _ => {}
            }
            if self.cell.theta_nodes < 2 {
                return Err(invalid("cell.theta_nodes must be at least 2"));
            }
            Some(need)
        } else {
            None
        };
        if self.diagnostics.rho < 1.0 {
            return Err(invalid(format!("diagnostics.rho must be at least 1, got {}", self.diagnostics.rho)));
        }
        let summary = ValidationSummary {
            regime,
            coefficient: report,
            cells_per_finest_period: per_period,
            required_theta_max,
            steps,
            warnings,
        };
        Ok(Prepared {
            coeff,
            problem,
            grid,
            cell_grid,
            summary,
        })
    }
}

fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    let hash = Sha256::digest(&bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}
