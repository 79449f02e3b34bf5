//! Refinement study against the Barenblatt profile with `a = I`, `N = 1`.

use pme_homog::diagnostics::{Rule, Series};
use pme_homog::grid::{BoundaryKind, Grid};
use pme_homog::norms::lp_distance;
use pme_homog::pme::{
    barenblatt, barenblatt_exponents, barenblatt_field, solve_pme_strided, CoefficientMode, NewtonOptions, PmeProblem,
    PositivityClass,
};
use pme_homog::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarenblattCase {
    pub m: f64,
    pub t0: f64,
    pub t_final: f64,
    /// `(n, dt)` pairs, each halving both.
    pub levels: Vec<(usize, f64)>,
    pub max_coarse_error: f64,
    pub min_factor: f64,
}

impl Default for BarenblattCase {
    fn default() -> Self {
        Self {
            m: 2.0,
            t0: 0.01,
            t_final: 0.5,
            levels: vec![(256, 1e-3), (512, 5e-4), (1024, 2.5e-4)],
            max_coarse_error: 2e-2,
            min_factor: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarenblattRow {
    pub n: usize,
    pub dt: f64,
    pub l1_error: f64,
    pub factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarenblattOutcome {
    pub rows: Vec<BarenblattRow>,
    pub pass: bool,
}

pub fn run(case: &BarenblattCase) -> Result<BarenblattOutcome, RunError> {
    let (_, kappa) = barenblatt_exponents(1, case.m);
    let errors = case
        .levels
        .par_iter()
        .map(|&(n, dt)| {
            let grid = Grid::new(1, n, BoundaryKind::Dirichlet, [-1.0, 0.0], 2.0)?;
            let u0 = barenblatt_field(&grid, case.m, kappa, case.t0)?;
            let p = PmeProblem::new(case.m, 1.0, case.t0, case.t_final, u0, PositivityClass::General)?;
            let steps = pme_homog::pme::step_count(case.t0, case.t_final, dt)?;
            let tr = solve_pme_strided(
                &p,
                CoefficientMode::ConstantMatrix(Tensor::identity(1)),
                &grid,
                dt,
                &NewtonOptions::default(),
                steps,
            )?;
            lp_distance(tr.final_field(), |x| barenblatt(1, case.m, kappa, x, case.t_final).unwrap_or(0.0), 1.0)
        })
        .collect::<pme_homog::Result<Vec<f64>>>()
        .map_err(|e| RunError::Solver(e.to_string()))?;
    let rows: Vec<BarenblattRow> = case
        .levels
        .iter()
        .zip(&errors)
        .enumerate()
        .map(|(i, (&(n, dt), &e))| BarenblattRow {
            n,
            dt,
            l1_error: e,
            factor: (i > 0).then(|| errors[i - 1] / e),
        })
        .collect();
    let min_rate = case.min_factor.log2();
    let series = Series {
        name: "barenblatt_l1".into(),
        ladder: case.levels.iter().map(|l| 1.0 / l.0 as f64).collect(),
        values: errors.clone(),
    };
    let pass = errors.first().is_some_and(|e| *e <= case.max_coarse_error)
        && Rule::MinRate { min: min_rate }.evaluate(&series).pass;
    Ok(BarenblattOutcome { rows, pass })
}

pub fn table(outcome: &BarenblattOutcome) -> String {
    let mut s = format!("{:>6} {:>10} {:>12} {:>8}\n", "n", "dt", "L1 error", "factor");
    for r in &outcome.rows {
        let f = r.factor.map_or("-".to_string(), |f| format!("{f:.3}"));
        s.push_str(&format!("{:>6} {:>10.2e} {:>12.4e} {:>8}\n", r.n, r.dt, r.l1_error, f));
    }
    s
}
