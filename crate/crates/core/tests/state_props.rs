use std::collections::BTreeMap;

use coaglab_core::state::{fluctuation, histogram_to_density};
use coaglab_core::{DensityVector, MassHistogram};
use proptest::prelude::*;

/// A random partition of a random `n`, as mass -> count.
fn histogram() -> impl Strategy<Value = MassHistogram> {
    prop::collection::vec(1u64..40, 1..60).prop_map(|parts| {
        let n = parts.iter().sum();
        let mut counts = BTreeMap::new();
        for p in parts {
            *counts.entry(p).or_insert(0) += 1;
        }
        MassHistogram::from_counts(n, counts).unwrap()
    })
}

proptest! {
    #[test]
    fn density_preserves_mass(h in histogram(), truncation in 1usize..50) {
        let d = histogram_to_density(&h, truncation);
        let total = d.mass() + d.leaked_mass();
        prop_assert!((total - 1.0).abs() <= 1e-12, "{total}");
        let number = d.number() + d.leaked_number();
        prop_assert!((number - h.particle_count() as f64 / h.n() as f64).abs() <= 1e-12);
    }

    #[test]
    fn fluctuation_scales_as_root_n(
        pi in prop::collection::vec(0.0f64..1.0, 1..20),
        n in 1u64..1_000_000,
    ) {
        let u: Vec<f64> = pi.iter().map(|x| 0.5 * x + 0.1).collect();
        let (p, q) = (DensityVector::from_values(pi), DensityVector::from_values(u));
        let a = fluctuation(&p, &q, n).unwrap();
        let b = fluctuation(&p, &q, 4 * n).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((2.0 * x - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn merges_conserve_mass_and_drop_one_particle(h in histogram(), picks in prop::collection::vec(any::<u64>(), 1..10)) {
        let mut h = h;
        for pick in picks {
            if h.particle_count() < 2 {
                break;
            }
            let parts: Vec<u64> = h.iter().flat_map(|(l, c)| std::iter::repeat_n(l, c as usize)).collect();
            let i = (pick % parts.len() as u64) as usize;
            let j = ((pick / 7919) % (parts.len() as u64 - 1)) as usize;
            let j = if j >= i { j + 1 } else { j };
            let before = h.particle_count();
            h.merge(parts[i], parts[j]);
            prop_assert_eq!(h.total_mass(), h.n() as u128);
            prop_assert_eq!(h.particle_count(), before - 1);
        }
    }
}

#[test]
fn json_layouts() {
    let h = MassHistogram::from_counts(4, [(1, 2), (2, 1)].into_iter().collect()).unwrap();
    assert_eq!(serde_json::to_string(&h).unwrap(), r#"{"n":4,"counts":{"1":2,"2":1}}"#);
    let d = DensityVector::from_values(vec![0.5, 0.25]).with_leak(0.0, 0.0);
    let v: serde_json::Value = serde_json::to_value(&d).unwrap();
    assert_eq!(v["L"], 2);
    assert_eq!(v["values"], serde_json::json!([0.5, 0.25]));
    assert!(v.get("leaked_number").is_some() && v.get("leaked_mass").is_some());
}

#[test]
fn invalid_histograms_are_rejected() {
    assert!(MassHistogram::from_counts(5, [(1, 2), (2, 1)].into_iter().collect()).is_err());
    assert!(serde_json::from_str::<MassHistogram>(r#"{"n":3,"counts":{"0":1,"3":1}}"#).is_err());
    assert!(serde_json::from_str::<MassHistogram>(r#"{"n":3,"counts":{"1":3}}"#).is_ok());
}
