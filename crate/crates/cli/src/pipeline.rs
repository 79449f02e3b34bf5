//! Stage runner and artifact layout.
//!
//! ```text
//! out/
//!   manifest.json            config echo, version, hashes, wall-clock
//!   validation.json
//!   cells/k1/ ...            sub and super regimes
//!   theta_table/ ...         critical regime
//!   a_hom.json
//!   homogenized/             trajectory of the effective problem
//!   sweep/eps_<ε>_n<n>_dt<dt>/
//!   diagnostics/report.{json,csv}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pme_homog::cell::{build_theta_table, homogenize, CellSolution, HomogenizedMatrix, Regime, ThetaTable};
use pme_homog::diagnostics::{
    corrector_error, energy_uniformity, local_gradient_estimate, solution_error, two_scale_pairing, CorrectorCells,
    DiagnosticsReport, Rule, Series, SolutionNorm, SweepResult,
};
use pme_homog::io;
use pme_homog::norms::Subdomain;
use pme_homog::pme::{solve_pme_strided, CoefficientMode, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Prepared, ReportKind};
use crate::RunError;

pub const STAGES: [&str; 6] = ["validate", "cell", "homogenize", "solve", "sweep", "diagnose"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub hash: String,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMatrix {
    /// Tensor for the normalized coefficient (sub and super regimes).
    pub a_hom: Option<HomogenizedMatrix>,
    /// Table nodes for the critical regime.
    pub theta_table: Option<Vec<HomogenizedMatrix>>,
}

/// Settings that do not belong to the experiment itself.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub strict: bool,
}

pub struct Runner {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub opts: RunOptions,
    prepared: Option<Prepared>,
    manifest: Manifest,
}

fn solver(e: impl std::fmt::Display) -> RunError {
    RunError::Solver(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> RunError {
    RunError::Validation(e.to_string())
}

pub fn eps_dir_name(eps: f64, n: usize, dt: f64) -> String {
    format!("eps_{eps}_n{n}_dt{dt}")
}

impl Runner {
    pub fn new(config: ExperimentConfig, out: PathBuf, opts: RunOptions) -> Result<Self, RunError> {
        let path = out.join("manifest.json");
        let manifest = if path.is_file() {
            let old: Manifest = io::read_json(&path).map_err(io_err)?;
            if old.config.solve_hash() != config.solve_hash() {
                return Err(RunError::Validation(format!(
                    "{} holds artifacts from a different configuration (hash {} vs {}); refusing to mix them",
                    out.display(),
                    old.config.solve_hash(),
                    config.solve_hash()
                )));
            }
            Manifest {
                config: config.clone(),
                ..old
            }
        } else {
            Manifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: config.clone(),
                stages: BTreeMap::new(),
            }
        };
        Ok(Self {
            config,
            out,
            opts,
            prepared: None,
            manifest,
        })
    }

    /// Runner for an existing artifact directory, using its stored config.
    pub fn from_artifacts(out: PathBuf, opts: RunOptions) -> Result<Self, RunError> {
        let m: Manifest = io::read_json(&out.join("manifest.json"))
            .map_err(|e| RunError::Validation(format!("no usable manifest in {}: {e}", out.display())))?;
        Self::new(m.config, out, opts)
    }

    fn stage_hash(&self, stage: &str) -> String {
        if stage == "diagnose" {
            self.config.full_hash()
        } else {
            self.config.solve_hash()
        }
    }

    fn done(&self, stage: &str) -> bool {
        self.manifest
            .stages
            .get(stage)
            .is_some_and(|r| r.hash == self.stage_hash(stage))
    }

    fn record(&mut self, stage: &str, start: Instant) -> Result<(), RunError> {
        let rec = StageRecord {
            hash: self.stage_hash(stage),
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        self.manifest.stages.insert(stage.to_string(), rec);
        io::write_json(&self.out.join("manifest.json"), &self.manifest).map_err(io_err)
    }

    fn prepared(&mut self) -> Result<&Prepared, RunError> {
        if self.prepared.is_none() {
            self.prepared = Some(self.config.prepare()?);
        }
        Ok(self.prepared.as_ref().expect("just set"))
    }

    pub fn run_stage(&mut self, stage: &str) -> Result<(), RunError> {
        let start = Instant::now();
        match stage {
            "validate" => self.validate()?,
            "diagnose" => {
                let report = self.diagnose()?;
                self.record(stage, start)?;
                return self.judge(&report);
            }
            _ if self.done(stage) && self.artifacts_present(stage) => return Ok(()),
            "cell" => self.cell()?,
            "homogenize" => self.homogenize()?,
            "solve" => self.solve()?,
            "sweep" => self.sweep()?,
            other => {
                return Err(RunError::Validation(format!(
                    "unknown stage `{other}` (expected one of {})",
                    STAGES.join(", ")
                )))
            }
        }
        self.record(stage, start)
    }

    pub fn run_all(&mut self) -> Result<(), RunError> {
        for stage in STAGES {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    fn artifacts_present(&self, stage: &str) -> bool {
        match stage {
            "cell" => self.out.join("cells").is_dir() || self.out.join("theta_table").is_dir(),
            "homogenize" => self.out.join("a_hom.json").is_file(),
            "solve" => self.out.join("homogenized/manifest.json").is_file(),
            "sweep" => self.sweep_dirs().iter().all(|d| d.join("manifest.json").is_file()),
            _ => false,
        }
    }

    fn validate(&mut self) -> Result<(), RunError> {
        let strict = self.opts.strict;
        let out = self.out.clone();
        let summary = self.prepared()?.summary.clone();
        io::write_json(&out.join("validation.json"), &summary).map_err(io_err)?;
        for w in &summary.warnings {
            eprintln!("warning: {w}");
        }
        if strict && !summary.warnings.is_empty() {
            return Err(RunError::Validation(format!(
                "{} warning(s) under --strict: {}",
                summary.warnings.len(),
                summary.warnings.join("; ")
            )));
        }
        Ok(())
    }

    fn regime(&self) -> Result<Regime, RunError> {
        self.config.regime()
    }

    fn cell(&mut self) -> Result<(), RunError> {
        let regime = self.regime()?;
        let cfg = self.config.clone();
        let out = self.out.clone();
        let p = self.prepared()?;
        if regime == Regime::Critical {
            let mut opts = cfg.cell.options;
            opts.keep_table_fields = true;
            let theta_max = cfg.cell.theta_max.expect("validated");
            let table = build_theta_table(&p.coeff, theta_max, cfg.cell.theta_nodes, &p.cell_grid, cfg.discretization.s_steps, &opts)
                .map_err(solver)?;
            table.write_dir(&out.join("theta_table")).map_err(io_err)?;
        } else {
            let (sols, _) = homogenize(&p.coeff, regime, &p.cell_grid, cfg.discretization.s_nodes, 0.0, &cfg.cell.options)
                .map_err(solver)?;
            for s in &sols {
                s.write_dir(&out.join("cells").join(format!("k{}", s.k))).map_err(io_err)?;
            }
        }
        Ok(())
    }

    fn load_cells(&self) -> Result<Vec<CellSolution>, RunError> {
        let dim = self.config.problem.domain.dim;
        (1..=dim)
            .map(|k| {
                CellSolution::read_dir(&self.out.join("cells").join(format!("k{k}")))
                    .map_err(|e| RunError::Validation(format!("missing cell solutions: {e}")))
            })
            .collect()
    }

    fn load_table(&self) -> Result<ThetaTable, RunError> {
        ThetaTable::read_dir(&self.out.join("theta_table"))
            .map_err(|e| RunError::Validation(format!("missing theta table: {e}")))
    }

    fn homogenize(&mut self) -> Result<(), RunError> {
        let regime = self.regime()?;
        if !self.done("cell") || !self.artifacts_present("cell") {
            return Err(RunError::Validation("missing cell solutions; run the cell stage first".into()));
        }
        let coeff = self.prepared()?.coeff.clone();
        let eff = if regime == Regime::Critical {
            EffectiveMatrix {
                a_hom: None,
                theta_table: Some(self.load_table()?.entries),
            }
        } else {
            let sols = self.load_cells()?;
            let a = pme_homog::cell::assemble_ahom(&coeff, &sols).map_err(solver)?;
            EffectiveMatrix {
                a_hom: Some(a),
                theta_table: None,
            }
        };
        io::write_json(&self.out.join("a_hom.json"), &eff).map_err(io_err)
    }

    fn load_effective(&self) -> Result<EffectiveMatrix, RunError> {
        io::read_json(&self.out.join("a_hom.json"))
            .map_err(|e| RunError::Validation(format!("missing homogenized matrix: {e}")))
    }

    fn solve(&mut self) -> Result<(), RunError> {
        let regime = self.regime()?;
        let eff = self.load_effective()?;
        let table = if regime == Regime::Critical {
            Some(self.load_table()?)
        } else {
            None
        };
        let cfg = self.config.clone();
        let out = self.out.clone();
        let p = self.prepared()?;
        let mode = match (&eff.a_hom, &table) {
            (Some(a), _) => CoefficientMode::ConstantMatrix(a.tensor()),
            (None, Some(t)) => CoefficientMode::ThetaDependent {
                table: t,
                m: cfg.problem.m,
            },
            _ => return Err(RunError::Validation("a_hom.json holds no matrix".into())),
        };
        let d = &cfg.discretization;
        let tr = solve_pme_strided(&p.problem, mode, &p.grid, d.dt, &cfg.newton, d.stride).map_err(solver)?;
        tr.write_dir(&out.join("homogenized")).map_err(io_err)
    }

    fn sweep_dirs(&self) -> Vec<PathBuf> {
        let d = &self.config.discretization;
        self.config
            .sweep
            .eps
            .iter()
            .map(|&e| self.out.join("sweep").join(eps_dir_name(e, d.n, d.dt)))
            .collect()
    }

    fn sweep(&mut self) -> Result<(), RunError> {
        let cfg = self.config.clone();
        let dirs = self.sweep_dirs();
        let p = self.prepared()?;
        let d = &cfg.discretization;
        cfg.sweep
            .eps
            .par_iter()
            .zip(dirs.par_iter())
            .map(|(&eps, dir)| {
                let tr = solve_pme_strided(
                    &p.problem,
                    CoefficientMode::Oscillating { field: &p.coeff, eps },
                    &p.grid,
                    d.dt,
                    &cfg.newton,
                    d.stride,
                )
                .map_err(solver)?;
                tr.write_dir(dir).map_err(io_err)
            })
            .collect::<Result<Vec<()>, RunError>>()?;
        Ok(())
    }

    fn load_sweep(&self) -> Result<SweepResult, RunError> {
        let missing = |e: pme_homog::Error| RunError::Validation(format!("missing trajectories: {e}"));
        let dirs = self.sweep_dirs();
        if !self.out.join("homogenized/manifest.json").is_file()
            || dirs.iter().any(|d| !d.join("manifest.json").is_file())
        {
            return Err(RunError::Validation(format!(
                "missing trajectories in {}; run the solve and sweep stages first",
                self.out.display()
            )));
        }
        let runs = dirs
            .iter()
            .map(|d| Trajectory::read_dir(d).map_err(missing))
            .collect::<Result<Vec<_>, _>>()?;
        let hom = Trajectory::read_dir(&self.out.join("homogenized")).map_err(missing)?;
        SweepResult::new(self.config.sweep.eps.clone(), runs, hom, self.config.problem.m, self.config.problem.r)
            .map_err(|e| RunError::Validation(e.to_string()))
    }

    /// Builds the report from stored artifacts only.
    pub fn diagnose(&mut self) -> Result<DiagnosticsReport, RunError> {
        let sweep = self.load_sweep()?;
        let cfg = self.config.clone();
        let regime = self.regime()?;
        let diag = &cfg.diagnostics;
        let eps = sweep.eps.clone();
        let mut report = DiagnosticsReport::default();
        let mut kinds = diag.reports.clone();
        kinds.sort();
        kinds.dedup();
        let wants_cells = kinds.contains(&ReportKind::CorrectorError);
        let cells = if wants_cells && regime != Regime::Critical { Some(self.load_cells()?) } else { None };
        let table = if wants_cells && regime == Regime::Critical { Some(self.load_table()?) } else { None };
        for kind in kinds {
            match kind {
                ReportKind::SolutionError => {
                    for norm in [SolutionNorm::L2Spacetime, SolutionNorm::LrhoLm1 { rho: diag.rho }] {
                        let values = solution_error(&sweep, norm).map_err(solver)?;
                        report.add_series(
                            Series {
                                name: format!("solution_error_{}", norm.label()),
                                ladder: eps.clone(),
                                values,
                            },
                            &[Rule::StrictlyDecreasing],
                        );
                    }
                }
                ReportKind::CorrectorError => {
                    let source = match (&table, &cells) {
                        (Some(table), _) => CorrectorCells::Critical {
                            table,
                            m: cfg.problem.m,
                        },
                        (None, Some(cells)) => CorrectorCells::Fixed(cells),
                        _ => unreachable!("loaded above"),
                    };
                    let values = eps
                        .iter()
                        .map(|&e| corrector_error(&sweep, source, e))
                        .collect::<pme_homog::Result<Vec<_>>>()
                        .map_err(solver)?;
                    report.add_series(
                        Series {
                            name: "corrector_error".into(),
                            ladder: eps.clone(),
                            values,
                        },
                        &[Rule::StrictlyDecreasing],
                    );
                }
                ReportKind::Energy => {
                    report.merge(energy_uniformity(&sweep, diag.energy_ratio).map_err(solver)?);
                }
                ReportKind::LocalGradient => {
                    if cfg.problem.m < 2.0 {
                        report.warnings.push(format!(
                            "local gradient estimate skipped: m = {} < 2, see the energy report",
                            cfg.problem.m
                        ));
                        continue;
                    }
                    let grid = &sweep.homogenized.grid;
                    let omega = diag.omega.unwrap_or_else(|| Subdomain::centered_half(grid));
                    let u0 = &sweep.homogenized.fields[0];
                    report.merge(
                        local_gradient_estimate(&sweep, &omega, cfg.problem.m, u0, diag.local_ratio)
                            .map_err(|e| RunError::Validation(e.to_string()))?,
                    );
                }
                ReportKind::Pairing => {
                    let test = diag
                        .pairing
                        .as_ref()
                        .ok_or_else(|| RunError::Validation("the pairing report needs diagnostics.pairing".into()))?;
                    let hom = two_scale_pairing(&sweep.homogenized, test, 1.0, cfg.problem.r).map_err(solver)?;
                    let gaps = eps
                        .iter()
                        .zip(&sweep.runs)
                        .map(|(&e, run)| {
                            let mut v = two_scale_pairing(run, test, e, cfg.problem.r)?;
                            if test.b.constant != 0.0 {
                                v -= hom;
                            }
                            Ok(v.abs())
                        })
                        .collect::<pme_homog::Result<Vec<_>>>()
                        .map_err(solver)?;
                    report.add_series(
                        Series {
                            name: "pairing_gap".into(),
                            ladder: eps.clone(),
                            values: gaps,
                        },
                        &[Rule::StrictlyDecreasing],
                    );
                }
            }
        }
        report
            .write(&self.out.join("diagnostics/report.json"), &self.out.join("diagnostics/report.csv"))
            .map_err(io_err)?;
        Ok(report)
    }

    fn judge(&self, report: &DiagnosticsReport) -> Result<(), RunError> {
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        for v in &report.verdicts {
            println!("{:<32} {:<4} {}", v.series, if v.pass { "pass" } else { "FAIL" }, v.detail);
        }
        if self.opts.strict && !report.warnings.is_empty() {
            return Err(RunError::Validation(format!(
                "{} diagnostics warning(s) under --strict",
                report.warnings.len()
            )));
        }
        if !report.all_pass() {
            let failed: Vec<&str> = report.verdicts.iter().filter(|v| !v.pass).map(|v| v.series.as_str()).collect();
            return Err(RunError::Tolerance(format!("failed verdicts: {}", failed.join(", "))));
        }
        Ok(())
    }
}

/// Output directory from the flag, the config, or `./out`.
pub fn output_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}
