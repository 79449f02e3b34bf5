//! Acceptance suite: one PASS/FAIL line per criterion.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pme_homog::cell::{build_theta_table, homogenize, CellOptions, HomogenizedMatrix, Regime};
use pme_homog::coefficients::{make_coefficient, CoefficientField, CoefficientTable};
use pme_homog::diagnostics::DiagnosticsReport;
use pme_homog::grid::Grid;
use pme_homog::io;
use pme_homog::tensor::Tensor;
use pme_homog_cli::barenblatt::{self, BarenblattCase};
use pme_homog_cli::config::ExperimentConfig;
use pme_homog_cli::pipeline::{RunOptions, Runner};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn opts() -> CellOptions {
    CellOptions::default()
}

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn c1(matrices: &mut Vec<HomogenizedMatrix>) -> Outcome {
    let mut worst = 0.0f64;
    for (params, dim) in [(vec![0.6], 1), (vec![0.8, 0.25, 0.5], 2)] {
        let c = make_coefficient("constant", &params, dim).unwrap();
        for n in [16, 32] {
            let g = Grid::unit_cell(dim, n).unwrap();
            for (regime, theta) in [(Regime::Sub, 0.0), (Regime::Critical, 1.0), (Regime::Super, 0.0)] {
                let (_, a) = homogenize(&c, regime, &g, 4, theta, &opts()).unwrap();
                worst = worst.max(a.tensor().max_abs_diff(&c.eval([0.0; 2], 0.0)));
                matrices.push(a);
            }
        }
    }
    outcome(worst <= 1e-10, format!("max |a_hom - A| = {worst:.2e} (tol 1e-10)"))
}

fn c2(matrices: &mut Vec<HomogenizedMatrix>) -> Outcome {
    let c = make_coefficient("layered_sin", &[2.0, 1.0, 1.0], 1).unwrap();
    let exact = 3f64.sqrt();
    let mut errs = Vec::new();
    for n in [64, 128, 256] {
        let g = Grid::unit_cell(1, n).unwrap();
        let (_, a) = homogenize(&c, Regime::Sub, &g, 1, 0.0, &opts()).unwrap();
        errs.push((a.matrix_unscaled[0][0] - exact).abs());
        matrices.push(a);
    }
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = errs[2] <= 1e-4 && ratios.iter().all(|r| *r >= 3.5);
    outcome(pass, format!("error at n = 256 {:.2e} (tol 1e-4), halving ratios {ratios:.3?} (min 3.5)", errs[2]))
}

fn c3(matrices: &mut Vec<HomogenizedMatrix>) -> Outcome {
    let fixtures = [
        (make_coefficient("checkerboard_smoothed", &[4.0], 2).unwrap(), 24),
        (make_coefficient("layered_sin", &[3.0, -1.0, 2.0], 2).unwrap(), 24),
        (make_coefficient("layered_sin", &[2.0, 1.0, 1.0], 1).unwrap(), 64),
    ];
    let mut worst = 0.0f64;
    for (c, n) in &fixtures {
        let g = Grid::unit_cell(c.dim(), *n).unwrap();
        let (_, sub) = homogenize(c, Regime::Sub, &g, 4, 0.0, &opts()).unwrap();
        let (_, sup) = homogenize(c, Regime::Super, &g, 4, 0.0, &opts()).unwrap();
        worst = worst.max(sub.tensor().max_abs_diff(&sup.tensor()));
        for theta in [0.05, 1.0, 20.0] {
            let (_, crit) = homogenize(c, Regime::Critical, &g, 8, theta, &opts()).unwrap();
            worst = worst.max(sub.tensor().max_abs_diff(&crit.tensor()));
            matrices.push(crit);
        }
        matrices.push(sub);
        matrices.push(sup);
    }
    outcome(worst <= 1e-8, format!("max regime spread {worst:.2e} (tol 1e-8)"))
}

/// `∬ a dy ds` by a midpoint rule independent of the cell grids.
fn arithmetic_mean(c: &CoefficientField, panels: usize) -> Tensor {
    let h = 1.0 / panels as f64;
    let mut sum = Tensor::scalar(c.dim(), 0.0);
    for i in 0..panels {
        for j in 0..panels {
            for k in 0..panels {
                let y = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                sum = sum.add(&c.eval(y, (k as f64 + 0.5) * h));
            }
        }
    }
    sum.scale(h * h * h)
}

fn c4(matrices: &mut Vec<HomogenizedMatrix>) -> Outcome {
    let c = make_coefficient("separable_sin", &[2.0, 1.0, 1.0], 2).unwrap();
    let g = Grid::unit_cell(2, 64).unwrap();
    let table = build_theta_table(&c, 1e3, 7, &g, 16, &opts()).unwrap();
    let mean = arithmetic_mean(&c, 96);
    let at_zero = table.query(0.0).matrix.max_abs_diff(&mean);
    let (_, sub) = homogenize(&c, Regime::Sub, &g, 16, 0.0, &opts()).unwrap();
    let top = table.query(1e3).matrix;
    let mut rel = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            let scale = sub.tensor().get(i, i).abs();
            rel = rel.max((top.get(i, j) - sub.tensor().get(i, j)).abs() / scale);
        }
    }
    matrices.extend(table.entries.iter().cloned());
    matrices.push(sub);
    outcome(
        at_zero <= 1e-8 && rel <= 0.02,
        format!("|A(0) - mean a| = {at_zero:.2e} (tol 1e-8), relative gap at theta = 1e3: {rel:.2e} (tol 0.02)"),
    )
}

fn c5() -> Outcome {
    let out = barenblatt::run(&BarenblattCase::default()).unwrap();
    let errs: Vec<String> = out.rows.iter().map(|r| format!("{:.3e}", r.l1_error)).collect();
    let factors: Vec<String> = out.rows.iter().filter_map(|r| r.factor).map(|f| format!("{f:.3}")).collect();
    outcome(
        out.pass,
        format!("L1 errors [{}] (coarse tol 2e-2), factors [{}] (min 1.5)", errs.join(", "), factors.join(", ")),
    )
}

fn run_config(path: &Path, out: &Path) -> DiagnosticsReport {
    let cfg = ExperimentConfig::load(path).unwrap();
    let mut r = Runner::new(cfg, out.to_path_buf(), RunOptions::default()).unwrap();
    for stage in ["validate", "cell", "homogenize", "solve", "sweep"] {
        r.run_stage(stage).unwrap();
    }
    r.diagnose().unwrap()
}

fn series<'a>(report: &'a DiagnosticsReport, name: &str) -> &'a [f64] {
    &report
        .series
        .iter()
        .find(|s| s.name == name)
        .unwrap_or_else(|| panic!("series {name} missing"))
        .values
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.len() >= 2 && v.windows(2).all(|w| w[1] < w[0])
}

fn ratio(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

fn m3_config(dir: &Path) -> std::path::PathBuf {
    let text = std::fs::read_to_string(configs_dir().join("layered_1d.json")).unwrap();
    let mut cfg = ExperimentConfig::parse(&text).unwrap();
    cfg.problem.m = 3.0;
    let path = dir.join("layered_m3.json");
    io::write_json(&path, &cfg).unwrap();
    path
}

fn main() {
    let mut matrices = Vec::new();
    let mut results: Vec<(usize, &str, Outcome, Duration, Duration)> = Vec::new();
    let mut timed = |n: usize, name: &'static str, budget: u64, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        results.push((n, name, o, t.elapsed(), Duration::from_secs(budget)));
    };
    timed(1, "constant-coefficient identity", 1, &mut || c1(&mut matrices));
    timed(2, "1D harmonic-mean oracle", 5, &mut || c2(&mut matrices));
    timed(3, "regime collapse", 30, &mut || c3(&mut matrices));
    timed(4, "critical-regime limits", 120, &mut || c4(&mut matrices));
    timed(5, "Barenblatt refinement", 60, &mut c5);

    let tmp = tempfile::tempdir().unwrap();
    let mut sweep_report = None;
    timed(6, "eps-convergence of the solution", 300, &mut || {
        let rep = run_config(&configs_dir().join("layered_1d.json"), &tmp.path().join("flagship"));
        let v = series(&rep, "solution_error_l2_spacetime").to_vec();
        sweep_report = Some(rep);
        outcome(strictly_decreasing(&v), format!("L2 space-time errors {}", sci(&v)))
    });
    let rep = sweep_report.expect("criterion 6 ran");
    timed(7, "corrector convergence", 300, &mut || {
        let v = series(&rep, "corrector_error");
        outcome(strictly_decreasing(v), format!("corrector errors {}", sci(v)))
    });
    timed(8, "uniform energy bounds", 300, &mut || {
        let a = ratio(series(&rep, "sup_lm1_norm"));
        let b = ratio(series(&rep, "grad_um_sq_integral"));
        outcome(a <= 1.5 && b <= 1.5, format!("max/min ratios {a:.4} and {b:.4} (bound 1.5)"))
    });
    timed(9, "local gradient bounds", 300, &mut || {
        let r2 = ratio(series(&rep, "local_grad_sq"));
        let rep3 = run_config(&m3_config(tmp.path()), &tmp.path().join("m3"));
        let r3 = ratio(series(&rep3, "local_grad_sq"));
        let w3 = ratio(series(&rep3, "sup_neg_log_u"));
        outcome(
            r2 <= 2.0 && r3 <= 2.0 && rep3.warnings.is_empty(),
            format!("m = 2 ratio {r2:.4}, m = 3 ratio {r3:.4} (bound 2.0); m = 3 log-weight ratio {w3:.4}"),
        )
    });

    timed(10, "spectral sandwich", 60, &mut || {
        let extra = [
            make_coefficient("separable_sin", &[2.0, 1.0, 1.0], 1).unwrap(),
            make_coefficient("layered_sin", &[3.0, -1.0, 2.0], 2).unwrap(),
            make_coefficient("checkerboard_smoothed", &[5.0], 2).unwrap(),
            CoefficientField::from_coefficient_table(
                CoefficientTable::sample(2, [32, 32], 4, |y, s| {
                    let a = 2.0 + (2.0 * std::f64::consts::PI * (y[0] + s)).sin();
                    Tensor::sym(2, a, 0.3, 1.5 + 0.5 * (2.0 * std::f64::consts::PI * y[1]).cos())
                })
                .unwrap(),
            )
            .unwrap(),
        ];
        let mut local = matrices.clone();
        for c in &extra {
            let g = Grid::unit_cell(c.dim(), 32).unwrap();
            for (regime, theta) in [(Regime::Sub, 0.0), (Regime::Critical, 0.5), (Regime::Super, 0.0)] {
                local.push(homogenize(c, regime, &g, 8, theta, &opts()).unwrap().1);
            }
        }
        let a_hom: pme_homog_cli::pipeline::EffectiveMatrix =
            io::read_json(&tmp.path().join("flagship/a_hom.json")).unwrap();
        local.extend(a_hom.a_hom);
        let bad: Vec<&HomogenizedMatrix> = local
            .iter()
            .filter(|a| a.symmetry_defect > 1e-10 || !a.in_spectral_bounds(1e-6))
            .collect();
        let worst = local.iter().fold(0.0f64, |m, a| m.max(a.symmetry_defect));
        outcome(
            bad.is_empty(),
            format!("{} matrices, {} outside bounds, worst symmetry defect {worst:.2e}", local.len(), bad.len()),
        )
    });

    timed(11, "determinism", 300, &mut || {
        let bin = env!("CARGO_BIN_EXE_pmehom");
        let config = configs_dir().join("layered_1d.json");
        let dirs = [tmp.path().join("det_a"), tmp.path().join("det_b")];
        for (i, d) in dirs.iter().enumerate() {
            let status = Command::new(bin)
                .args(["run", "--config"])
                .arg(&config)
                .arg("--out")
                .arg(d)
                .args(["--workers", if i == 0 { "1" } else { "4" }])
                .output()
                .unwrap();
            assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        }
        let files = artifact_files(&dirs[0]);
        let mismatched: Vec<String> = files
            .iter()
            .filter(|rel| std::fs::read(dirs[0].join(rel)).ok() != std::fs::read(dirs[1].join(rel)).ok())
            .cloned()
            .collect();
        let count_b = artifact_files(&dirs[1]).len();
        let va: DiagnosticsReport = io::read_json(&dirs[0].join("diagnostics/report.json")).unwrap();
        let vb: DiagnosticsReport = io::read_json(&dirs[1].join("diagnostics/report.json")).unwrap();
        outcome(
            mismatched.is_empty() && count_b == files.len() && va.verdicts == vb.verdicts,
            format!("{} artifacts compared, {} differ; verdicts identical: {}", files.len(), mismatched.len(), va.verdicts == vb.verdicts),
        )
    });

    let mut failed = 0;
    for (n, name, o, took, budget) in &results {
        let in_time = took <= budget;
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "[criterion {n}] {} {name}: {} [{:.2}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

/// Relative paths of every file except the manifest, which carries
/// wall-clock times.
fn artifact_files(root: &Path) -> Vec<String> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                if rel != "manifest.json" {
                    out.push(rel);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
