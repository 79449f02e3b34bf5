use pme_homog::cell::{build_theta_table, homogenize, CellOptions, Regime};
use pme_homog::coefficients::make_coefficient;
use pme_homog::diagnostics::{
    convergence_table, corrector_error, energy_uniformity, local_gradient_estimate, solution_error,
    two_scale_pairing, CorrectorAssembly, CorrectorCells, CosineMode, CosineTerm, PairingTest, PolyBump, Rule,
    Series, SolutionNorm, SweepResult,
};
use pme_homog::grid::{BoundaryKind, Grid, ScalarField};
use pme_homog::norms::Subdomain;
use pme_homog::pme::{solve_pme_strided, CoefficientMode, InitialProfile, NewtonOptions, PmeProblem, PositivityClass};
use pme_homog::Error;
use proptest::prelude::*;

const LADDER: [f64; 3] = [0.25, 0.125, 0.0625];

struct Fixture {
    sweep: SweepResult,
    cells: Vec<pme_homog::cell::CellSolution>,
    u0: ScalarField,
}

fn fixture(m: f64, n: usize, t_final: f64) -> Fixture {
    let coeff = make_coefficient("layered_sin", &[2.0, 1.0, 1.0], 1).unwrap();
    let grid = Grid::new(1, n, BoundaryKind::Dirichlet, [0.0, 0.0], 1.0).unwrap();
    let prof = InitialProfile::Bump {
        base: 0.1,
        amplitude: 0.9,
        center: vec![0.5],
        radius: 0.3,
    };
    let u0 = prof.sample(&grid, m, 0.0).unwrap();
    let p = PmeProblem::new(m, 1.0, 0.0, t_final, u0.clone(), PositivityClass::General).unwrap();
    let newton = NewtonOptions::default();
    let cell_grid = Grid::unit_cell(1, 256).unwrap();
    let (cells, ahom) = homogenize(&coeff, Regime::Sub, &cell_grid, 1, 0.0, &CellOptions::default()).unwrap();
    let dt = 2e-4;
    let hom = solve_pme_strided(&p, CoefficientMode::ConstantMatrix(ahom.tensor()), &grid, dt, &newton, 1).unwrap();
    let runs = LADDER
        .iter()
        .map(|&eps| {
            solve_pme_strided(&p, CoefficientMode::Oscillating { field: &coeff, eps }, &grid, dt, &newton, 1).unwrap()
        })
        .collect();
    let sweep = SweepResult::new(LADDER.to_vec(), runs, hom, m, 1.0).unwrap();
    Fixture { sweep, cells, u0 }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

#[test]
fn layered_sweep_converges() {
    let f = fixture(2.0, 512, 0.1);
    let l2 = solution_error(&f.sweep, SolutionNorm::L2Spacetime).unwrap();
    assert!(strictly_decreasing(&l2), "solution error {l2:?}");
    let lr = solution_error(&f.sweep, SolutionNorm::LrhoLm1 { rho: 2.0 }).unwrap();
    assert!(strictly_decreasing(&lr), "L^rho(L^(m+1)) error {lr:?}");

    let ce: Vec<f64> = LADDER
        .iter()
        .map(|&e| corrector_error(&f.sweep, CorrectorCells::Fixed(&f.cells), e).unwrap())
        .collect();
    assert!(strictly_decreasing(&ce), "corrector error {ce:?}");
    let with_zero = corrector_error(&f.sweep, CorrectorCells::Fixed(&zeroed(&f.cells)), 0.0625).unwrap();
    assert!(with_zero > ce[2], "corrector term must reduce the error: {with_zero} vs {}", ce[2]);

    let energy = energy_uniformity(&f.sweep, 1.5).unwrap();
    assert!(energy.all_pass(), "{:?}", energy.verdicts);

    let omega = Subdomain::centered_half(&f.sweep.homogenized.grid);
    let local = local_gradient_estimate(&f.sweep, &omega, 2.0, &f.u0, 2.0).unwrap();
    assert!(local.all_pass(), "{:?}", local.verdicts);
    assert!(local.warnings.is_empty());

    let oscillating = PairingTest {
        phi: PolyBump {
            center: vec![0.5],
            radius: 0.4,
        },
        b: CosineMode::cosine(vec![1]),
        psi: PolyBump {
            center: vec![0.05],
            radius: 0.05,
        },
        c: CosineMode::one(),
    };
    let zero_mean: Vec<f64> = LADDER
        .iter()
        .zip(&f.sweep.runs)
        .map(|(&e, run)| two_scale_pairing(run, &oscillating, e, 1.0).unwrap().abs())
        .collect();
    assert!(strictly_decreasing(&zero_mean), "zero-mean pairing {zero_mean:?}");
    let plain = PairingTest {
        b: CosineMode::one(),
        ..oscillating
    };
    let hom_pair = two_scale_pairing(&f.sweep.homogenized, &plain, 1.0, 1.0).unwrap();
    let gaps: Vec<f64> = LADDER
        .iter()
        .zip(&f.sweep.runs)
        .map(|(&e, run)| (two_scale_pairing(run, &plain, e, 1.0).unwrap() - hom_pair).abs())
        .collect();
    assert!(strictly_decreasing(&gaps), "plain pairing gaps {gaps:?}");

    let table = convergence_table(vec![Series {
        name: "corrector".into(),
        ladder: LADDER.to_vec(),
        values: ce,
    }]);
    assert!(table.all_pass());
    assert_eq!(table.recompute_verdicts().unwrap(), table.verdicts);
}

fn zeroed(cells: &[pme_homog::cell::CellSolution]) -> Vec<pme_homog::cell::CellSolution> {
    cells
        .iter()
        .map(|c| {
            let mut c = c.clone();
            for f in &mut c.fields {
                f.values_mut().iter_mut().for_each(|v| *v = 0.0);
            }
            c
        })
        .collect()
}

#[test]
fn m3_local_estimate_and_vanishing_data_warning() {
    let f = fixture(3.0, 256, 0.05);
    let omega = Subdomain::centered_half(&f.sweep.homogenized.grid);
    let rep = local_gradient_estimate(&f.sweep, &omega, 3.0, &f.u0, 2.0).unwrap();
    assert_eq!(rep.series.len(), 2);
    assert!(rep.all_pass(), "{:?}", rep.verdicts);
    assert!(rep.warnings.is_empty());
    let holey = f.u0.map(|_| 0.0);
    let rep = local_gradient_estimate(&f.sweep, &omega, 3.0, &holey, 2.0).unwrap();
    assert_eq!(rep.warnings.len(), 1);

    let whole = Subdomain { lo: [0.0; 2], hi: [1.0; 2] };
    assert!(matches!(
        local_gradient_estimate(&f.sweep, &whole, 3.0, &f.u0, 2.0),
        Err(Error::Diagnostics(_))
    ));
    assert!(local_gradient_estimate(&f.sweep, &omega, 1.5, &f.u0, 2.0).is_err());
}

fn constant_sweep() -> (SweepResult, Vec<pme_homog::cell::CellSolution>) {
    let c = make_coefficient("constant", &[0.7], 1).unwrap();
    let grid = Grid::new(1, 64, BoundaryKind::Dirichlet, [0.0, 0.0], 1.0).unwrap();
    let u0 = ScalarField::interpolate(grid.clone(), |x| (std::f64::consts::PI * x[0]).sin());
    let p = PmeProblem::new(2.0, 1.0, 0.0, 0.02, u0, PositivityClass::General).unwrap();
    let o = NewtonOptions::default();
    let cell = Grid::unit_cell(1, 16).unwrap();
    let (cells, a) = homogenize(&c, Regime::Sub, &cell, 1, 0.0, &CellOptions::default()).unwrap();
    let hom = solve_pme_strided(&p, CoefficientMode::ConstantMatrix(a.tensor()), &grid, 2e-3, &o, 2).unwrap();
    let runs = LADDER
        .iter()
        .map(|&eps| solve_pme_strided(&p, CoefficientMode::Oscillating { field: &c, eps }, &grid, 2e-3, &o, 2).unwrap())
        .collect();
    (SweepResult::new(LADDER.to_vec(), runs, hom, 2.0, 1.0).unwrap(), cells)
}

#[test]
fn constant_coefficient_errors_vanish() {
    let (sweep, cells) = constant_sweep();
    for e in solution_error(&sweep, SolutionNorm::L2Spacetime).unwrap() {
        assert!(e <= 1e-12, "solution error {e}");
    }
    for &eps in &LADDER {
        let ce = corrector_error(&sweep, CorrectorCells::Fixed(&cells), eps).unwrap();
        assert!(ce <= 1e-10, "corrector error {ce}");
    }
    assert!(solution_error(&sweep, SolutionNorm::LrhoLm1 { rho: 0.5 }).is_err());
    assert!(SolutionNorm::parse("h1", None).is_err());
    assert!(corrector_error(&sweep, CorrectorCells::Fixed(&cells), 0.3).is_err());
}

#[test]
fn mismatched_runs_are_rejected() {
    let (sweep, _) = constant_sweep();
    let mut short = sweep.runs[0].clone();
    short.times.pop();
    short.fields.pop();
    assert!(SweepResult::new(vec![0.25], vec![short], sweep.homogenized.clone(), 2.0, 1.0).is_err());
    let mut other = sweep.runs[0].clone();
    other.grid = Grid::new(1, 64, BoundaryKind::Dirichlet, [0.0, 0.0], 2.0).unwrap();
    assert!(SweepResult::new(vec![0.25], vec![other], sweep.homogenized.clone(), 2.0, 1.0).is_err());
    assert!(SweepResult::new(vec![0.125, 0.25], sweep.runs[..2].to_vec(), sweep.homogenized.clone(), 2.0, 1.0).is_err());
}

#[test]
fn regime_of_cells_must_match_r() {
    let (sweep, _) = constant_sweep();
    let c = make_coefficient("constant", &[0.7], 1).unwrap();
    let cell = Grid::unit_cell(1, 16).unwrap();
    let (sup, _) = homogenize(&c, Regime::Super, &cell, 1, 0.0, &CellOptions::default()).unwrap();
    assert!(corrector_error(&sweep, CorrectorCells::Fixed(&sup), 0.25).is_err());
}

#[test]
fn critical_assembly_relation_holds_at_every_node() {
    let c = make_coefficient("separable_sin", &[2.0, 1.0, 1.0], 1).unwrap();
    let cell = Grid::unit_cell(1, 32).unwrap();
    let o = CellOptions {
        keep_table_fields: true,
        ..CellOptions::default()
    };
    let table = build_theta_table(&c, 4.0, 5, &cell, 8, &o).unwrap();
    let grid = Grid::new(1, 64, BoundaryKind::Dirichlet, [0.0, 0.0], 1.0).unwrap();
    let u = ScalarField::interpolate(grid, |x| (1.0 - (4.0 * x[0] - 1.5).powi(2)).max(0.0));
    let m = 2.0;
    let asm = CorrectorAssembly::build(&u, 0.013, m, 2.0, 0.125, CorrectorCells::Critical { table: &table, m }).unwrap();
    let w = asm.w.as_ref().unwrap();
    for (i, &v) in u.values().iter().enumerate() {
        if v > 0.0 {
            assert_eq!(asm.z[i], m * v.powf(m - 1.0) * w[i]);
        } else {
            assert_eq!((asm.z[i], w[i]), (0.0, 0.0));
        }
        if asm.grad_um[i] == [0.0; 2] {
            assert_eq!(asm.corrector_grad[i], [0.0; 2]);
        }
    }
    assert!(w.iter().any(|v| *v != 0.0));
}

#[test]
fn report_serializes_and_rechecks() {
    let mut rep = convergence_table(vec![Series {
        name: "barenblatt".into(),
        ladder: vec![1.0 / 256.0, 1.0 / 512.0, 1.0 / 1024.0],
        values: vec![1e-2, 5e-3, 2.6e-3],
    }]);
    rep.add_series(
        Series {
            name: "energy".into(),
            ladder: LADDER.to_vec(),
            values: vec![1.0, 1.2, 1.1],
        },
        &[Rule::RatioBound { bound: 1.5 }],
    );
    let dir = tempfile::tempdir().unwrap();
    let (json, csv) = (dir.path().join("r.json"), dir.path().join("r.csv"));
    rep.write(&json, &csv).unwrap();
    let back: pme_homog::diagnostics::DiagnosticsReport = pme_homog::io::read_json(&json).unwrap();
    assert_eq!(back, rep);
    assert_eq!(back.recompute_verdicts().unwrap(), rep.verdicts);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 7);
}

fn tiny_traj() -> pme_homog::pme::Trajectory {
    let grid = Grid::new(1, 32, BoundaryKind::Dirichlet, [0.0, 0.0], 1.0).unwrap();
    let u0 = ScalarField::interpolate(grid.clone(), |x| (std::f64::consts::PI * x[0]).sin());
    let p = PmeProblem::new(2.0, 1.0, 0.0, 0.01, u0, PositivityClass::General).unwrap();
    solve_pme_strided(&p, CoefficientMode::ConstantMatrix(pme_homog::tensor::Tensor::identity(1)), &grid, 1e-3, &NewtonOptions::default(), 1)
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pairing_is_linear_in_the_cell_mode(l1 in 0i32..4, l2 in 0i32..4, a1 in -2.0f64..2.0, a2 in -2.0f64..2.0) {
        let traj = tiny_traj();
        let base = PairingTest {
            phi: PolyBump { center: vec![0.5], radius: 0.45 },
            b: CosineMode::one(),
            psi: PolyBump { center: vec![0.005], radius: 0.005 },
            c: CosineMode::cosine(vec![1]),
        };
        let with = |b: CosineMode| two_scale_pairing(&traj, &PairingTest { b, ..base.clone() }, 0.1, 1.0).unwrap();
        let term = |a, l| CosineMode { constant: 0.0, terms: vec![CosineTerm { amplitude: a, freq: vec![l] }] };
        let sum = CosineMode { constant: 0.0, terms: vec![
            CosineTerm { amplitude: a1, freq: vec![l1] },
            CosineTerm { amplitude: a2, freq: vec![l2] },
        ] };
        let lhs = with(sum);
        let rhs = with(term(a1, l1)) + with(term(a2, l2));
        prop_assert!((lhs - rhs).abs() <= 1e-13 * (1.0 + lhs.abs()));
    }
}
