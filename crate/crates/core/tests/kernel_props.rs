use coaglab_core::{Kernel, KernelDecl};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernels() -> Vec<Kernel> {
    let table = vec![vec![1.0, 0.5, 2.0], vec![0.5, 3.0, 0.25], vec![2.0, 0.25, 0.0]];
    vec![
        Kernel::constant(1.0).unwrap(),
        Kernel::constant(0.0).unwrap(),
        Kernel::capped_brownian(1.0, 10.0).unwrap(),
        Kernel::capped_brownian(2.5, 3.0).unwrap(),
        Kernel::new(KernelDecl::LookupTable { table, default: 1.5 }).unwrap(),
    ]
}

#[test]
fn symmetric_bounded_and_zero_row_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in kernels() {
        let sup = k.sup_norm();
        for _ in 0..10_000 {
            // mix small masses, masses past the memo ceiling, and huge ones
            let pick = |rng: &mut ChaCha8Rng| match rng.random_range(0..3) {
                0 => rng.random_range(1..20u64),
                1 => rng.random_range(1..2_000u64),
                _ => rng.random_range(1..u64::MAX / 4),
            };
            let (l, m) = (pick(&mut rng), pick(&mut rng));
            let a = k.evaluate(l, m);
            assert_eq!(a.to_bits(), k.evaluate(m, l).to_bits(), "{l} {m}");
            assert!(a >= 0.0 && a <= sup, "K({l},{m}) = {a} > {sup}");
            assert_eq!(k.evaluate(0, m), 0.0);
            assert_eq!(k.evaluate(l, 0), 0.0);
        }
    }
}

#[test]
fn memo_ceiling_does_not_change_values() {
    for decl in [
        KernelDecl::capped_brownian(1.0, 10.0),
        KernelDecl::capped_brownian(0.7, 1.2),
    ] {
        let small = Kernel::with_memo_ceiling(decl.clone(), 4).unwrap();
        let large = Kernel::with_memo_ceiling(decl, 512).unwrap();
        for l in 1..300 {
            for m in (1..300).step_by(7) {
                assert_eq!(small.evaluate(l, m).to_bits(), large.evaluate(l, m).to_bits());
            }
        }
    }
}

#[test]
fn capped_brownian_reaches_its_cap() {
    let k = Kernel::capped_brownian(1.0, 10.0).unwrap();
    assert_eq!(k.sup_norm(), 10.0);
    // (1/l + 1/m)(l^{1/3} + m^{1/3}) = 2 at l = m, unbounded in l/m
    assert!((k.evaluate(5, 5) - 4.0).abs() < 1e-12);
    assert_eq!(k.evaluate(1, 1_000_000), 10.0);
    assert!(k.sup_norm_within(2) <= k.sup_norm());
}

#[test]
fn declarations_round_trip_through_json() {
    for k in kernels() {
        let s = serde_json::to_string(k.decl()).unwrap();
        let back: KernelDecl = serde_json::from_str(&s).unwrap();
        assert_eq!(&back, k.decl());
    }
}

#[test]
fn invalid_declarations_are_rejected() {
    assert!(Kernel::constant(-1.0).is_err());
    assert!(Kernel::constant(f64::NAN).is_err());
    assert!(Kernel::capped_brownian(1.0, f64::INFINITY).is_err());
    let asym = vec![vec![1.0, 2.0], vec![3.0, 1.0]];
    assert!(Kernel::new(KernelDecl::LookupTable {
        table: asym,
        default: 0.0
    })
    .is_err());
    let ragged = vec![vec![1.0, 2.0], vec![2.0]];
    assert!(Kernel::new(KernelDecl::LookupTable {
        table: ragged,
        default: 0.0
    })
    .is_err());
}
