use std::collections::BTreeMap;

use coaglab_core::analysis::Moments;
use coaglab_core::rng::replica_rng;
use coaglab_core::simulator::{drift_integrand, qv_integrand, run, run_from, total_rate, IntegrandMode};
use coaglab_core::smoluchowski::{apply_k, apply_r};
use coaglab_core::state::histogram_to_density;
use coaglab_core::{Kernel, KernelDecl, MassHistogram, SimConfig, Simulator, StepOutcome, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_histogram(rng: &mut ChaCha8Rng, max_parts: usize, max_mass: u64) -> MassHistogram {
    let parts = rng.random_range(1..=max_parts);
    let mut counts = BTreeMap::new();
    let mut n = 0;
    for _ in 0..parts {
        let l = rng.random_range(1..=max_mass);
        n += l;
        *counts.entry(l).or_insert(0) += 1;
    }
    MassHistogram::from_counts(n, counts).unwrap()
}

fn table_kernel() -> Kernel {
    let table = vec![
        vec![1.0, 0.5, 2.0, 0.0],
        vec![0.5, 3.0, 0.25, 1.0],
        vec![2.0, 0.25, 0.0, 0.5],
        vec![0.0, 1.0, 0.5, 1.5],
    ];
    Kernel::new(KernelDecl::LookupTable { table, default: 0.75 }).unwrap()
}

/// Every possible merge from `h` with its rate.
fn transitions(h: &MassHistogram, k: &Kernel) -> Vec<(u64, u64, f64)> {
    let n = h.n() as f64;
    let classes: Vec<(u64, u64)> = h.iter().collect();
    let mut out = Vec::new();
    for (a, &(l, nl)) in classes.iter().enumerate() {
        for &(m, nm) in &classes[a..] {
            let rate = if l == m {
                k.evaluate(l, l) * (nl * (nl - 1)) as f64 / n
            } else {
                2.0 * k.evaluate(l, m) * (nl * nm) as f64 / n
            };
            if rate > 0.0 {
                out.push((l, m, rate));
            }
        }
    }
    out
}

/// Generator applied to `π(l)` and `n Γ` of `π(l)`, by summing over jumps.
fn brute_force(h: &MassHistogram, k: &Kernel, truncation: usize) -> (Vec<f64>, Vec<f64>) {
    let n = h.n() as f64;
    let before = histogram_to_density(h, truncation);
    let mut drift = vec![0.0; truncation];
    let mut qv = vec![0.0; truncation];
    for (l, m, rate) in transitions(h, k) {
        let mut after = h.clone();
        after.merge(l, m);
        let after = histogram_to_density(&after, truncation);
        for i in 0..truncation {
            let d = after.values()[i] - before.values()[i];
            drift[i] += rate * d;
            qv[i] += n * rate * d * d;
        }
    }
    (drift, qv)
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "entry {}: {x} vs {y}", i + 1);
    }
}

#[test]
fn integrands_match_jump_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let kernels = [
        Kernel::constant(1.0).unwrap(),
        Kernel::capped_brownian(1.0, 10.0).unwrap(),
        table_kernel(),
    ];
    for _ in 0..300 {
        let h = random_histogram(&mut rng, 30, 12);
        for k in &kernels {
            let truncation = h.n() as usize;
            let (drift, qv) = brute_force(&h, k, truncation);
            assert_close(&drift_integrand(&h, k, truncation), &drift, 1e-12);
            assert_close(&qv_integrand(&h, k, truncation), &qv, 1e-12);
            let rate: f64 = transitions(&h, k).iter().map(|t| t.2).sum();
            assert!((total_rate(&h, k) - rate).abs() <= 1e-12 * (1.0 + rate));
        }
    }
}

#[test]
fn drift_is_mean_field_plus_finite_n_correction() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let h = random_histogram(&mut rng, 25, 10);
        let k = table_kernel();
        let truncation = h.n() as usize;
        let pi = histogram_to_density(&h, truncation);
        let ku = apply_k(&k, pi.values());
        let ru = apply_r(&k, pi.values());
        let expected: Vec<f64> = ku.iter().zip(&ru).map(|(a, b)| a + b / h.n() as f64).collect();
        assert_close(&drift_integrand(&h, &k, truncation), &expected, 1e-12);
    }
}

#[test]
fn every_event_conserves_mass_and_moves_pi_by_at_most_three_over_n() {
    for strategy in [Strategy::Direct, Strategy::Thinning] {
        for (seed, n) in [(1u64, 2u64), (2, 17), (3, 250)] {
            let k = Kernel::capped_brownian(1.0, 10.0).unwrap();
            let truncation = n as usize;
            let mut sim = Simulator::new(
                MassHistogram::monodisperse(n),
                k,
                strategy,
                truncation,
                replica_rng(seed, 0),
            );
            let mut before = sim.density();
            let mut last_time = 0.0;
            let mut events = 0;
            while let StepOutcome::Event(e) = sim.step(f64::INFINITY) {
                events += 1;
                assert!(e.time >= last_time);
                last_time = e.time;
                let h = sim.histogram();
                assert_eq!(h.total_mass(), n as u128);
                assert_eq!(h.particle_count(), n - events);
                let after = sim.density();
                let jump: f64 = after
                    .values()
                    .iter()
                    .zip(before.values())
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                assert!(jump <= 3.0 / n as f64 + 1e-15, "jump {jump}");
                before = after;
            }
            assert_eq!(events, n - 1);
            assert_eq!(sim.event_count(), n - 1);
        }
    }
}

#[test]
fn two_particles_merge_after_unit_exponential_time() {
    let k = Kernel::constant(1.0).unwrap();
    for strategy in [Strategy::Direct, Strategy::Thinning] {
        let mut m = Moments::default();
        for r in 0..100_000 {
            let mut sim = Simulator::new(
                MassHistogram::monodisperse(2),
                k.clone(),
                strategy,
                2,
                replica_rng(5, r),
            );
            let StepOutcome::Event(e) = sim.step(f64::INFINITY) else {
                panic!("no event");
            };
            assert_eq!((e.l, e.m), (1, 1));
            assert_eq!(sim.step(f64::INFINITY), StepOutcome::Absorbed);
            assert_eq!(sim.histogram().count(2), 1);
            m.push(e.time);
        }
        assert!((m.mean() - 1.0).abs() < 0.01, "{}", m.mean());
    }
}

#[test]
fn three_particles_first_event_mean_time() {
    let k = Kernel::constant(1.0).unwrap();
    let mut m = Moments::default();
    for r in 0..100_000 {
        let mut sim = Simulator::new(
            MassHistogram::monodisperse(3),
            k.clone(),
            Strategy::Thinning,
            3,
            replica_rng(6, r),
        );
        let StepOutcome::Event(e) = sim.step(f64::INFINITY) else {
            panic!("no event");
        };
        m.push(e.time);
    }
    assert!((m.mean() - 0.5).abs() < 3.0 * m.standard_error(), "{}", m.mean());
}

#[test]
fn single_particle_is_absorbing() {
    let k = Kernel::constant(1.0).unwrap();
    let mut sim = Simulator::new(
        MassHistogram::monodisperse(1),
        k,
        Strategy::Direct,
        1,
        replica_rng(0, 0),
    );
    assert_eq!(sim.step(3.0), StepOutcome::Absorbed);
    assert_eq!(sim.time(), 3.0);
}

/// From `{1:2, 3:1}` two merge types compete; both samplers must reproduce the
/// exact type probabilities and the mean holding time `1 / Λ`. Eight
/// comparisons share this test, hence 4 standard errors.
#[test]
fn samplers_agree_with_exact_first_event_law() {
    let start = MassHistogram::from_counts(5, [(1, 2), (3, 1)].into_iter().collect()).unwrap();
    for k in [Kernel::capped_brownian(1.0, 10.0).unwrap(), table_kernel()] {
        let trans = transitions(&start, &k);
        let rate: f64 = trans.iter().map(|t| t.2).sum();
        let p11 = trans.iter().find(|t| (t.0, t.1) == (1, 1)).map_or(0.0, |t| t.2) / rate;
        let mut stats = Vec::new();
        for strategy in [Strategy::Direct, Strategy::Thinning] {
            let (mut kind, mut hold) = (Moments::default(), Moments::default());
            for r in 0..100_000 {
                let mut sim = Simulator::new(start.clone(), k.clone(), strategy, 5, replica_rng(7, r));
                let StepOutcome::Event(e) = sim.step(f64::INFINITY) else {
                    panic!("no event");
                };
                kind.push(if (e.l, e.m) == (1, 1) { 1.0 } else { 0.0 });
                hold.push(e.time);
            }
            assert!(
                (kind.mean() - p11).abs() < 4.0 * kind.standard_error() + 1e-12,
                "{strategy:?}: {} vs {p11}",
                kind.mean()
            );
            assert!(
                (hold.mean() - 1.0 / rate).abs() < 4.0 * hold.standard_error(),
                "{strategy:?}: {} vs {}",
                hold.mean(),
                1.0 / rate
            );
            stats.push((kind, hold));
        }
        let (a, b) = (&stats[0], &stats[1]);
        let se = |x: &Moments, y: &Moments| (x.standard_error().powi(2) + y.standard_error().powi(2)).sqrt();
        assert!((a.0.mean() - b.0.mean()).abs() < 4.0 * se(&a.0, &b.0) + 1e-12);
        assert!((a.1.mean() - b.1.mean()).abs() < 4.0 * se(&a.1, &b.1));
    }
}

#[test]
fn incremental_and_full_integrands_agree() {
    let k = Kernel::capped_brownian(1.0, 10.0).unwrap();
    let mut cfg = SimConfig::new(400, k, 3.0, vec![0.5, 1.0, 3.0], 24);
    let a = run(&cfg, 9, 0);
    cfg.integrand_mode = IntegrandMode::Full;
    let b = run(&cfg, 9, 0);
    for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
        assert_eq!(x.density, y.density);
        assert_close(&x.drift_integral, &y.drift_integral, 1e-9);
        assert_close(&x.qv_integral, &y.qv_integral, 1e-9);
    }
}

#[test]
fn zero_horizon_and_zero_kernel_keep_the_initial_state() {
    let cfg = SimConfig::new(50, Kernel::constant(1.0).unwrap(), 0.0, vec![0.0], 8);
    let t = run(&cfg, 1, 0);
    assert_eq!(t.snapshots.len(), 1);
    assert_eq!(t.snapshots[0].density.values()[0], 1.0);
    assert!(t.snapshots[0].martingale.iter().all(|&x| x == 0.0));

    let cfg = SimConfig::new(50, Kernel::constant(0.0).unwrap(), 4.0, vec![1.0, 2.0, 4.0], 8);
    for s in run(&cfg, 1, 0).snapshots {
        assert_eq!(s.density.values()[0], 1.0);
        assert_eq!(s.events, 0);
    }
}

#[test]
fn same_seed_same_trajectory() {
    let k = Kernel::capped_brownian(1.0, 10.0).unwrap();
    for strategy in [Strategy::Direct, Strategy::Thinning] {
        let cfg = SimConfig::new(300, k.clone(), 2.0, vec![1.0, 2.0], 16).with_strategy(strategy);
        assert_eq!(run(&cfg, 42, 3), run(&cfg, 42, 3));
        assert_ne!(run(&cfg, 42, 3), run(&cfg, 42, 4));
    }
}

#[test]
fn large_system_is_close_to_the_deterministic_density() {
    let cfg = SimConfig::new(10_000, Kernel::constant(1.0).unwrap(), 1.0, vec![1.0], 32);
    let t = run(&cfg, 2024, 0);
    assert!((t.snapshots[0].density.values()[0] - 0.25).abs() <= 0.02);
}

#[test]
fn run_from_general_state() {
    let start = MassHistogram::from_counts(10, [(1, 4), (3, 2)].into_iter().collect()).unwrap();
    let cfg = SimConfig::new(10, Kernel::constant(1.0).unwrap(), 50.0, vec![0.0, 50.0], 10);
    let t = run_from(&cfg, start, 1, 0);
    assert_eq!(t.snapshots[0].density.values()[2], 0.2);
    assert_eq!(t.final_histogram.count(10), 1);
    assert_eq!(t.event_count, 5);
}
