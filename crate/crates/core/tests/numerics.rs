use std::f64::consts::PI;

use pme_homog::assembly::{assemble_mass, assemble_stiffness, quad_index, sample_quadrature};
use pme_homog::coefficients::{make_coefficient, sample_oscillating, validate_coefficient};
use pme_homog::grid::{build_grid, BoundaryKind, Grid, ScalarField};
use pme_homog::norms::{norm, NormKind};
use pme_homog::solver::{solve_spd, solve_spd_from};
use pme_homog::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn grid_examples() {
    let g = build_grid(1, 8, BoundaryKind::Periodic, 1.0).unwrap();
    assert_eq!(g.dof_count(), 8);
    assert_eq!(g.h(), 0.125);
    let g = build_grid(2, 4, BoundaryKind::Dirichlet, 1.0).unwrap();
    assert_eq!(g.dof_count(), 9);
    assert_eq!(g.h(), 0.25);
    assert!(build_grid(3, 8, BoundaryKind::Periodic, 1.0).is_err());
    assert!(build_grid(1, 1, BoundaryKind::Periodic, 1.0).is_err());
    assert!(build_grid(1, 8, BoundaryKind::Periodic, 0.0).is_err());
}

fn poisson_error(n: usize) -> f64 {
    let g = build_grid(1, n, BoundaryKind::Periodic, 1.0).unwrap();
    let k = assemble_stiffness(&g, |_| Tensor::identity(1)).unwrap();
    let f = ScalarField::interpolate(g.clone(), |x| (2.0 * PI * x[0]).sin());
    let rhs = assemble_mass(&g).mul(f.values());
    let u = solve_spd(&k, &rhs, 1e-12, 50 * n).unwrap();
    let err: Vec<f64> = u
        .iter()
        .enumerate()
        .map(|(i, v)| v - (2.0 * PI * g.dof_coord(i)[0]).sin() / (4.0 * PI * PI))
        .collect();
    norm(&ScalarField::new(g, err).unwrap(), NormKind::Lp(2.0), None).unwrap()
}

#[test]
fn periodic_poisson_converges_at_second_order() {
    let errs: Vec<f64> = [16, 32, 64, 128].iter().map(|&n| poisson_error(n)).collect();
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 3.5, "ratio {} in {errs:?}", w[0] / w[1]);
    }
}

#[test]
fn periodic_kernel_and_zero_mean_solution() {
    let g = build_grid(2, 8, BoundaryKind::Periodic, 1.0).unwrap();
    let k = assemble_stiffness(&g, |_| Tensor::identity(2)).unwrap();
    let r = k.mul(&vec![1.0; g.dof_count()]);
    assert!(r.iter().all(|v| v.abs() < 1e-12));
    let rhs: Vec<f64> = (0..g.dof_count()).map(|i| (i as f64).sin()).collect();
    let x = solve_spd(&k, &rhs, 1e-10, 10_000).unwrap();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    assert!(mean.abs() <= 1e-10);
}

#[test]
fn unreachable_tolerance_is_reported() {
    let g = build_grid(1, 16, BoundaryKind::Dirichlet, 1.0).unwrap();
    let k = assemble_stiffness(&g, |qp| Tensor::scalar(1, 1.0 + qp.x[0])).unwrap();
    let rhs = vec![1.0; g.dof_count()];
    assert!(solve_spd(&k, &rhs, 1e-12, 1).is_err());
}

#[test]
fn every_builtin_family_passes_validation() {
    let fams: [(&str, &[f64], usize); 6] = [
        ("constant", &[1.0], 1),
        ("constant", &[1.0, 0.2, 0.7], 2),
        ("layered_sin", &[2.0, 1.0, 1.0], 1),
        ("layered_sin", &[3.0, -1.0, 2.0], 2),
        ("separable_sin", &[2.0, 1.0, 1.0], 2),
        ("checkerboard_smoothed", &[5.0], 2),
    ];
    for (name, params, dim) in fams {
        let c = make_coefficient(name, params, dim).unwrap();
        let rep = validate_coefficient(&c, 10_000, 7);
        assert!(rep.h2_symmetry.pass && rep.h3_ellipticity.pass, "{name}: {rep:?}");
        assert!(rep.eigenvalue_range[1] <= 1.0 + 1e-12);
    }
}

fn spd_sample(lambda: f64, u: f64, v: f64, angle: f64) -> Tensor {
    let (c, s) = (angle.cos(), angle.sin());
    let e1 = lambda + (1.0 - lambda) * u;
    let e2 = lambda + (1.0 - lambda) * v;
    Tensor::sym(2, c * c * e1 + s * s * e2, c * s * (e1 - e2), s * s * e1 + c * c * e2)
}

fn random_samples(grid: &Grid, lambda: f64, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = grid.cell_count() * grid.quad_points_per_cell();
    let draws: Vec<Tensor> = (0..count)
        .map(|_| spd_sample(lambda, rng.gen(), rng.gen(), PI * rng.gen::<f64>()))
        .collect();
    sample_quadrature(grid, |qp| draws[quad_index(grid, qp)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stiffness_is_symmetric(seed in any::<u64>(), n in 2usize..9, periodic in any::<bool>()) {
        let kind = if periodic { BoundaryKind::Periodic } else { BoundaryKind::Dirichlet };
        let g = build_grid(2, n, kind, 1.0).unwrap();
        let samples = random_samples(&g, 0.2, seed);
        let k = assemble_stiffness(&g, |qp| samples[quad_index(&g, qp)]).unwrap();
        let d = k.to_dense();
        let scale = d.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..d.len() {
            for j in 0..d.len() {
                prop_assert!((d[i][j] - d[j][i]).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn energy_is_sandwiched(seed in any::<u64>(), lambda in 0.05f64..1.0, v in prop::collection::vec(-1.0f64..1.0, 36)) {
        let g = build_grid(2, 6, BoundaryKind::Periodic, 1.0).unwrap();
        let samples = random_samples(&g, lambda, seed);
        let ka = assemble_stiffness(&g, |qp| samples[quad_index(&g, qp)]).unwrap();
        let ki = assemble_stiffness(&g, |_| Tensor::identity(2)).unwrap();
        let form = |k: &pme_homog::sparse::SparseOperator| -> f64 {
            k.mul(&v).iter().zip(&v).map(|(a, b)| a * b).sum()
        };
        let (ea, ei) = (form(&ka), form(&ki));
        prop_assert!(ea >= lambda * ei - 1e-12 * ei);
        prop_assert!(ea <= ei + 1e-12 * ei);
    }

    #[test]
    fn cg_residual_meets_tolerance(seed in any::<u64>(), n in 3usize..12) {
        let g = build_grid(2, n, BoundaryKind::Dirichlet, 1.0).unwrap();
        let samples = random_samples(&g, 0.1, seed);
        let k = assemble_stiffness(&g, |qp| samples[quad_index(&g, qp)]).unwrap();
        let rhs: Vec<f64> = (0..g.dof_count()).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let tol = 1e-10;
        let (x, stats) = solve_spd_from(&k, &rhs, None, tol, 10_000).unwrap();
        let ax = k.mul(&x);
        let r: f64 = ax.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let b: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(r / b <= tol);
        prop_assert!(stats.residual <= tol);
    }

    #[test]
    fn oscillating_sample_is_exactly_periodic(
        k in 1u32..6, i in 0i64..4096, j in 0i64..4096, tn in 0i64..4096, r in prop::sample::select(vec![1.0, 2.0, 3.0]),
    ) {
        let c = make_coefficient("separable_sin", &[2.0, 1.0, 3.0], 2).unwrap();
        let eps = 0.5f64.powi(k as i32);
        let x = [i as f64 / 1024.0, j as f64 / 1024.0];
        let t = tn as f64 / 1024.0;
        let base = sample_oscillating(&c, x, t, eps, r).unwrap();
        let shifted_x = sample_oscillating(&c, [x[0] + eps, x[1]], t, eps, r).unwrap();
        let shifted_y = sample_oscillating(&c, [x[0], x[1] + eps], t, eps, r).unwrap();
        let shifted_t = sample_oscillating(&c, x, t + eps.powf(r), eps, r).unwrap();
        prop_assert_eq!(base, shifted_x);
        prop_assert_eq!(base, shifted_y);
        prop_assert_eq!(base, shifted_t);
    }
}

#[test]
fn oscillating_sample_examples() {
    let c = make_coefficient("separable_sin", &[2.0, 1.0, 1.0], 1).unwrap();
    assert_eq!(sample_oscillating(&c, [0.3, 0.0], 0.7, 1.0, 1.0).unwrap(), c.eval([0.3, 0.0], 0.7));
    assert_eq!(sample_oscillating(&c, [0.5, 0.0], 0.0, 0.25, 1.0).unwrap(), c.eval([0.0, 0.0], 0.0));
    let s = sample_oscillating(&c, [0.1, 0.0], 0.08, 0.2, 2.0).unwrap();
    assert!(s.max_abs_diff(&c.eval([0.5, 0.0], 0.0)) < 1e-12);
    assert!(sample_oscillating(&c, [0.1, 0.0], 0.0, 0.0, 1.0).is_err());
    assert!(sample_oscillating(&c, [0.1, 0.0], 0.0, 0.1, 0.0).is_err());
}
