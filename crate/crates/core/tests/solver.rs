use coaglab_core::error::SolveError;
use coaglab_core::smoluchowski::{
    apply_k, apply_r, constant_kernel_exact, constant_kernel_exact_density, solve, uniform_grid, SolverConfig,
    StepControl,
};
use coaglab_core::{DensityVector, Kernel, KernelDecl};
use proptest::prelude::*;

fn monodisperse(truncation: usize) -> DensityVector {
    let mut v = vec![0.0; truncation];
    v[0] = 1.0;
    DensityVector::from_values(v)
}

fn max_error(k: f64, truncation: usize, t: f64, dt: f64) -> f64 {
    let kernel = Kernel::constant(k).unwrap();
    let cfg = SolverConfig::fixed(truncation, dt, vec![t]);
    let tr = solve(&kernel, &monodisperse(truncation), &cfg).unwrap();
    let exact = constant_kernel_exact_density(truncation, t, k);
    tr.states[0]
        .values()
        .iter()
        .zip(exact.values())
        .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()))
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

#[test]
fn operator_examples() {
    let k = Kernel::constant(1.0).unwrap();
    assert_eq!(apply_k(&k, &[1.0, 0.0, 0.0, 0.0]), vec![-2.0, 1.0, 0.0, 0.0]);
    assert_eq!(apply_r(&k, &[1.0, 0.0, 0.0]), vec![2.0, -1.0, 0.0]);
}

#[test]
fn exact_solution_sums_to_number_density() {
    let s: f64 = (1..=200).map(|l| constant_kernel_exact(l, 1.0, 1.0)).sum();
    assert!((s - 0.5).abs() < 1e-12);
    assert!((constant_kernel_exact(2, 1.0, 1.0) - 0.125).abs() < 1e-15);
}

#[test]
fn number_and_mass_along_a_solve() {
    for decl in [KernelDecl::constant(1.0), KernelDecl::capped_brownian(1.0, 10.0)] {
        let k = Kernel::new(decl.clone()).unwrap();
        let grid = uniform_grid(2.0, 40);
        let cfg = SolverConfig::fixed(64, 1e-3, grid.clone());
        let tr = solve(&k, &monodisperse(64), &cfg).unwrap();
        let mut last = f64::INFINITY;
        for (t, s) in grid.iter().zip(&tr.states) {
            assert!((s.mass() + s.leaked_mass() - 1.0).abs() < 1e-12, "{decl:?} t={t}");
            assert!(s.values().iter().all(|&x| x >= 0.0));
            let number = s.number();
            assert!(number <= last + 1e-15, "{decl:?} t={t}: {number} > {last}");
            last = number;
            if matches!(decl, KernelDecl::Constant { .. }) {
                assert!((number + s.leaked_number() - 1.0 / (1.0 + t)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn fixed_step_matches_closed_form() {
    for t in [0.5, 1.0, 2.0] {
        assert!(max_error(1.0, 64, t, 1e-3) <= 1e-8);
    }
}

/// Short horizon keeps the truncated tail negligible, so the discretisation
/// error dominates and the fourth-order gain is visible.
#[test]
fn fourth_order_convergence() {
    let coarse = max_error(1.0, 64, 1.0, 0.04);
    let fine = max_error(1.0, 64, 1.0, 0.02);
    assert!(coarse / fine >= 8.0, "gain {} ({coarse} -> {fine})", coarse / fine);
}

#[test]
fn two_step_sizes_agree() {
    let k = Kernel::capped_brownian(1.0, 10.0).unwrap();
    let grid = vec![0.5, 1.0];
    let a = solve(&k, &monodisperse(48), &SolverConfig::fixed(48, 5e-3, grid.clone())).unwrap();
    let b = solve(&k, &monodisperse(48), &SolverConfig::fixed(48, 2.5e-3, grid.clone())).unwrap();
    let adaptive = SolverConfig {
        truncation: 48,
        step: StepControl::Adaptive { atol: 1e-8 },
        horizon: 1.0,
        grid,
    };
    let c = solve(&k, &monodisperse(48), &adaptive).unwrap();
    for i in 0..2 {
        for l in 0..48 {
            let (x, y, z) = (
                a.states[i].values()[l],
                b.states[i].values()[l],
                c.states[i].values()[l],
            );
            assert!((x - y).abs() < 1e-8, "l={} {x} {y}", l + 1);
            assert!((y - z).abs() < 2e-8, "l={} {y} {z}", l + 1);
        }
    }
}

#[test]
fn adaptive_meets_its_tolerance() {
    let k = Kernel::constant(2.0).unwrap();
    let cfg = SolverConfig {
        truncation: 96,
        step: StepControl::Adaptive { atol: 1e-9 },
        horizon: 1.5,
        grid: vec![0.3, 1.5],
    };
    let tr = solve(&k, &monodisperse(96), &cfg).unwrap();
    for (t, s) in cfg.grid.iter().zip(&tr.states) {
        let exact = constant_kernel_exact_density(96, *t, 2.0);
        for (a, b) in s.values().iter().zip(exact.values()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let k = Kernel::capped_brownian(1.0, 10.0).unwrap();
    let u0 = monodisperse(8);
    let bound = SolverConfig::stability_bound(&k);
    assert!((bound - 1.0 / 60.0).abs() < 1e-15);
    let err = solve(&k, &u0, &SolverConfig::fixed(8, 0.02, vec![1.0])).unwrap_err();
    assert!(matches!(err, SolveError::StepTooLarge { .. }));
    let loose = SolverConfig {
        truncation: 8,
        step: StepControl::Adaptive { atol: 1e-3 },
        horizon: 1.0,
        grid: vec![1.0],
    };
    assert!(matches!(solve(&k, &u0, &loose), Err(SolveError::BadTolerance(_))));
    assert!(solve(&k, &u0, &SolverConfig::fixed(8, 1e-3, vec![1.0, 0.5])).is_err());
    assert!(solve(&k, &monodisperse(4), &SolverConfig::fixed(8, 1e-3, vec![1.0])).is_err());
}

#[test]
fn zero_horizon_returns_the_initial_state() {
    let k = Kernel::constant(1.0).unwrap();
    let tr = solve(&k, &monodisperse(5), &SolverConfig::fixed(5, 1e-3, vec![0.0])).unwrap();
    assert_eq!(tr.states[0], monodisperse(5));
    assert_eq!(tr.steps, 0);
}

fn kernel() -> impl Strategy<Value = Kernel> {
    prop_oneof![
        (0.0f64..5.0).prop_map(|c| Kernel::constant(c).unwrap()),
        (0.1f64..3.0, 1.0f64..20.0).prop_map(|(c, cap)| Kernel::capped_brownian(c, cap).unwrap()),
    ]
}

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn coagulation_operator_is_bounded(k in kernel(), u in vector(24)) {
        let s = k.sup_norm();
        let nu = l1(&u);
        prop_assert!(l1(&apply_k(&k, &u)) <= 3.0 * s * nu * nu * (1.0 + 1e-12));
    }

    #[test]
    fn coagulation_operator_is_locally_lipschitz(k in kernel(), u in vector(24), v in vector(24)) {
        let s = k.sup_norm();
        let du: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let dk: Vec<f64> = apply_k(&k, &u).iter().zip(apply_k(&k, &v)).map(|(a, b)| a - b).collect();
        prop_assert!(l1(&dk) <= 3.0 * s * (l1(&u) + l1(&v)) * l1(&du) * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn finite_n_correction_is_bounded(k in kernel(), u in vector(24)) {
        prop_assert!(l1(&apply_r(&k, &u)) <= 3.0 * k.sup_norm() * l1(&u) * (1.0 + 1e-12));
    }
}
