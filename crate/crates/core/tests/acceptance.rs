//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Every tolerance is pinned here rather than
//! inherited from library defaults.

use std::process::ExitCode;

use coaglab_core::analysis::CltTolerances;
use coaglab_core::validation::{
    clt_variance, conservation, displayed_bounds, exactness_vs_oracle, hydrodynamic_limit, martingale_diagnostics,
    moment_bounds, route_cross_check, solver_correctness, Criterion, Sizes, Tolerances, ValidationConfig,
};
use coaglab_core::KernelDecl;

fn pinned() -> ValidationConfig {
    ValidationConfig {
        seed: 20_240_601,
        threads: None,
        kernels: vec![KernelDecl::constant(1.0), KernelDecl::capped_brownian(1.0, 10.0)],
        sizes: Sizes {
            oracle_n: vec![2, 3, 4, 5],
            oracle_times: vec![0.25, 1.0],
            oracle_replicas: 100_000,
            lln_n: vec![100, 1_000, 10_000],
            lln_replicas: 200,
            lln_horizon: 1.0,
            truncation: 64,
            solver_times: vec![0.5, 1.0, 2.0],
            solver_dt: 1e-3,
            clt_n: 10_000,
            clt_replicas: 2_000,
            clt_time: 1.0,
            clt_ells: vec![1, 2, 3],
            route_time: 1.0,
            route_truncation_other: 128,
            fluctuation_dt: 1e-3,
            martingale_n: 1_000,
            martingale_replicas: 2_000,
            martingale_times: vec![0.5, 1.0],
            martingale_ells: vec![1, 2, 4],
            property_cases: 1_000,
            moment_n: 1_000,
            moment_replicas: 500,
            moment_horizon: 2.0,
            moment_points: 10,
        },
        tolerances: Tolerances {
            oracle_se: 3.0,
            lln_spread: 3.0,
            solver_abs: 1e-8,
            order_gain: 8.0,
            clt: CltTolerances {
                variance_rel: 0.15,
                mean_se: 3.0,
                shape_sigmas: 5.0,
            },
            route_rel: 1e-5,
            martingale_se: 3.0,
            martingale_rel: 0.10,
            property_rel: 1e-12,
        },
    }
}

fn report(c: &Criterion) -> bool {
    println!("{}", c.summary_line());
    for f in c.failures() {
        println!(
            "    FAIL {}: observed {:.6e}, bound {:.6e} ({})",
            f.name, f.observed, f.bound, f.detail
        );
    }
    c.passed()
}

fn main() -> ExitCode {
    let cfg = pinned();
    assert_eq!(
        cfg,
        ValidationConfig::default(),
        "library defaults drifted from the pinned values"
    );
    let mut ok = true;

    ok &= report(&exactness_vs_oracle(&cfg).expect("criterion 1"));
    let (c2, lln) = hydrodynamic_limit(&cfg).expect("criterion 2");
    ok &= report(&c2);
    ok &= report(&solver_correctness(&cfg).expect("criterion 3"));
    ok &= report(&clt_variance(&cfg).expect("criterion 4"));
    ok &= report(&route_cross_check(&cfg).expect("criterion 5"));
    let (c6, mart) = martingale_diagnostics(&cfg).expect("criterion 6");
    ok &= report(&c6);
    ok &= report(&displayed_bounds(&cfg).expect("criterion 7"));
    let (c8, mom) = moment_bounds(&cfg).expect("criterion 8");
    ok &= report(&c8);
    let mut seen: Vec<_> = lln.iter().collect();
    seen.extend([&mart, &mom]);
    ok &= report(&conservation(&cfg, &seen).expect("criterion 9"));

    if ok {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
