//! Microscopic and macroscopic state representations.
//!
//! The site-level configuration is never stored: every observable of the
//! coagulation chain depends on it only through the mass counts `N_l`, and the
//! counts process is itself Markov. [`MassHistogram`] therefore holds the
//! counts alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::StateError;

/// Entries of an ODE output in `(-NEG_TOLERANCE, 0)` are clamped to zero.
pub const NEG_TOLERANCE: f64 = 1e-12;

/// Particle counts per mass for a system of total mass `n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HistogramRepr", into = "HistogramRepr")]
pub struct MassHistogram {
    n: u64,
    counts: BTreeMap<u64, u64>,
    particles: u64,
    mass: u128,
}

#[derive(Serialize, Deserialize)]
struct HistogramRepr {
    n: u64,
    counts: BTreeMap<u64, u64>,
}

impl TryFrom<HistogramRepr> for MassHistogram {
    type Error = StateError;

    fn try_from(r: HistogramRepr) -> Result<Self, Self::Error> {
        MassHistogram::from_counts(r.n, r.counts)
    }
}

impl From<MassHistogram> for HistogramRepr {
    fn from(h: MassHistogram) -> Self {
        HistogramRepr {
            n: h.n,
            counts: h.counts,
        }
    }
}

impl MassHistogram {
    /// `n` particles of mass one.
    pub fn monodisperse(n: u64) -> Self {
        assert!(n >= 1, "n must be positive");
        let mut counts = BTreeMap::new();
        counts.insert(1, n);
        MassHistogram {
            n,
            counts,
            particles: n,
            mass: n as u128,
        }
    }

    /// Builds a histogram from explicit counts; zero counts are dropped.
    pub fn from_counts(n: u64, counts: BTreeMap<u64, u64>) -> Result<Self, StateError> {
        if n == 0 {
            return Err(StateError::ZeroN);
        }
        let mut clean = BTreeMap::new();
        let mut mass: u128 = 0;
        let mut particles = 0;
        for (l, c) in counts {
            if c == 0 {
                continue;
            }
            if l == 0 {
                return Err(StateError::ZeroMass);
            }
            mass += l as u128 * c as u128;
            particles += c;
            clean.insert(l, c);
        }
        if mass != n as u128 {
            return Err(StateError::MassMismatch { mass, n });
        }
        Ok(MassHistogram {
            n,
            counts: clean,
            particles,
            mass,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn count(&self, l: u64) -> u64 {
        self.counts.get(&l).copied().unwrap_or(0)
    }

    pub fn particle_count(&self) -> u64 {
        self.particles
    }

    /// Number of distinct occupied masses.
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    /// `Σ l N_l`, tracked through every update.
    pub fn total_mass(&self) -> u128 {
        self.mass
    }

    /// Occupied `(mass, count)` pairs in increasing mass order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&l, &c)| (l, c))
    }

    pub fn max_mass(&self) -> u64 {
        self.counts.keys().next_back().copied().unwrap_or(0)
    }

    /// `Σ l^p N_l / n`.
    pub fn moment(&self, p: i32) -> f64 {
        let n = self.n as f64;
        self.iter().map(|(l, c)| (l as f64).powi(p) * c as f64).sum::<f64>() / n
    }

    pub(crate) fn remove_one(&mut self, l: u64) {
        let c = self
            .counts
            .get_mut(&l)
            .unwrap_or_else(|| panic!("no particle of mass {l} to remove"));
        *c -= 1;
        if *c == 0 {
            self.counts.remove(&l);
        }
        self.particles -= 1;
        self.mass -= l as u128;
    }

    pub(crate) fn add_one(&mut self, l: u64) {
        *self.counts.entry(l).or_insert(0) += 1;
        self.particles += 1;
        self.mass += l as u128;
    }

    /// Merges one particle of mass `l` with one of mass `m`.
    ///
    /// Panics if the particles are not present or if mass is not conserved.
    pub fn merge(&mut self, l: u64, m: u64) {
        self.remove_one(l);
        self.remove_one(m);
        self.add_one(l + m);
        assert_eq!(self.mass, self.n as u128, "mass conservation violated");
    }
}

/// A truncated subprobability vector `u_1..u_L` with explicit accounting of
/// what lies past the truncation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityVector {
    #[serde(rename = "L")]
    truncation: usize,
    values: Vec<f64>,
    leaked_number: f64,
    leaked_mass: f64,
}

impl DensityVector {
    pub fn zeros(truncation: usize) -> Self {
        DensityVector {
            truncation,
            values: vec![0.0; truncation],
            leaked_number: 0.0,
            leaked_mass: 0.0,
        }
    }

    /// All mass on `l = 1`.
    pub fn monodisperse(truncation: usize) -> Self {
        let mut v = Self::zeros(truncation);
        v.values[0] = 1.0;
        v
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        DensityVector {
            truncation: values.len(),
            values,
            leaked_number: 0.0,
            leaked_mass: 0.0,
        }
    }

    pub fn with_leak(mut self, leaked_number: f64, leaked_mass: f64) -> Self {
        self.leaked_number = leaked_number;
        self.leaked_mass = leaked_mass;
        self
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// `values()[l - 1]` is the density of mass `l`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Density at mass `l`, zero outside `1..=L`.
    pub fn at(&self, l: usize) -> f64 {
        if l == 0 || l > self.truncation {
            0.0
        } else {
            self.values[l - 1]
        }
    }

    pub fn leaked_number(&self) -> f64 {
        self.leaked_number
    }

    pub fn leaked_mass(&self) -> f64 {
        self.leaked_mass
    }

    pub fn number(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `Σ_{l<=L} l u_l`.
    pub fn mass(&self) -> f64 {
        norm_l1_weighted(&self.values)
    }

    /// Zeroes entries in `(-NEG_TOLERANCE, 0)`. Returns the most negative
    /// entry that was *not* clamped, if any.
    pub fn clamp_negatives(&mut self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for v in &mut self.values {
            if *v < 0.0 {
                if *v > -NEG_TOLERANCE {
                    *v = 0.0;
                } else {
                    worst = Some(worst.map_or(*v, |w: f64| w.min(*v)));
                }
            }
        }
        worst
    }

    /// Checks membership in the truncated subprobability simplex.
    pub fn is_subprobability(&self, tol: f64) -> bool {
        self.values.iter().all(|&v| v >= -NEG_TOLERANCE)
            && self.number() + self.leaked_number <= 1.0 + tol
            && self.mass() + self.leaked_mass <= 1.0 + tol
    }
}

/// A signed vector `ξ_1..ξ_L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationVector {
    values: Vec<f64>,
}

impl FluctuationVector {
    pub fn new(values: Vec<f64>) -> Self {
        FluctuationVector { values }
    }

    pub fn truncation(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_l1(&self) -> f64 {
        norm_l1(&self.values)
    }

    pub fn norm_l1_weighted(&self) -> f64 {
        norm_l1_weighted(&self.values)
    }

    pub fn norm_sup(&self) -> f64 {
        norm_sup(&self.values)
    }
}

/// Empirical density `N_l / n` truncated at `truncation`.
pub fn histogram_to_density(h: &MassHistogram, truncation: usize) -> DensityVector {
    assert!(truncation >= 1, "truncation must be at least 1");
    let n = h.n() as f64;
    let mut out = DensityVector::zeros(truncation);
    let mut leaked_count: u64 = 0;
    let mut leaked_mass: u128 = 0;
    for (l, c) in h.iter() {
        if (l as usize) <= truncation {
            out.values[l as usize - 1] = c as f64 / n;
        } else {
            leaked_count += c;
            leaked_mass += l as u128 * c as u128;
        }
    }
    out.leaked_number = leaked_count as f64 / n;
    out.leaked_mass = leaked_mass as f64 / n;
    out
}

/// `ξ_l = √n (π_l − u_l)`.
pub fn fluctuation(pi: &DensityVector, u: &DensityVector, n: u64) -> Result<FluctuationVector, StateError> {
    if pi.truncation != u.truncation {
        return Err(StateError::TruncationMismatch {
            left: pi.truncation,
            right: u.truncation,
        });
    }
    let s = (n as f64).sqrt();
    Ok(FluctuationVector::new(
        pi.values.iter().zip(&u.values).map(|(p, q)| s * (p - q)).collect(),
    ))
}

pub fn norm_l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// `Σ l |v_l|` with `v[0]` holding mass 1.
pub fn norm_l1_weighted(v: &[f64]) -> f64 {
    v.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x.abs()).sum()
}

pub fn norm_sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
