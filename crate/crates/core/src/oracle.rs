//! Exact law of the lumped chain for small `n`.
//!
//! States are the integer partitions of `n`, written as decreasing part
//! lists and numbered by lexicographic rank, so the monodisperse state is
//! index 0 and the single block is the last index. Transient laws come from
//! uniformization of the dense generator.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use crate::error::OracleError;
use crate::kernel::{Kernel, KernelDecl};

pub const MAX_N: u64 = 12;

/// Poisson tail mass discarded per uniformization window; windows add up.
const TAIL: f64 = 1e-14;
/// Largest `Λ Δt` handled in one window; keeps `e^{-Λ Δt}` far from underflow.
const WINDOW: f64 = 32.0;

#[derive(Clone, Debug)]
pub struct PartitionChain {
    n: u64,
    kernel: KernelDecl,
    states: Vec<Vec<u64>>,
    index: HashMap<Vec<u64>, usize>,
    /// Row-major `S x S` generator.
    generator: Vec<f64>,
    max_exit: f64,
}

/// All partitions of `n` as decreasing part lists, in lexicographic order.
pub fn partitions(n: u64) -> Vec<Vec<u64>> {
    fn rec(rest: u64, cap: u64, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if rest == 0 {
            out.push(cur.clone());
            return;
        }
        for p in 1..=cap.min(rest) {
            cur.push(p);
            rec(rest - p, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, n, &mut Vec::new(), &mut out);
    out.sort();
    out
}

fn counts_of(parts: &[u64]) -> BTreeMap<u64, u64> {
    let mut c = BTreeMap::new();
    for &p in parts {
        *c.entry(p).or_insert(0) += 1;
    }
    c
}

fn merged(parts: &[u64], l: u64, m: u64) -> Vec<u64> {
    let mut out = parts.to_vec();
    let i = out.iter().position(|&p| p == l).expect("part present");
    out.remove(i);
    let j = out.iter().position(|&p| p == m).expect("part present");
    out.remove(j);
    out.push(l + m);
    out.sort_unstable_by(|a, b| b.cmp(a));
    out
}

pub fn build_chain(n: u64, k: &Kernel) -> Result<PartitionChain, OracleError> {
    if n == 0 {
        return Err(OracleError::ZeroN);
    }
    if n > MAX_N {
        return Err(OracleError::TooLarge { n, max: MAX_N });
    }
    let states = partitions(n);
    let index: HashMap<Vec<u64>, usize> = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let s = states.len();
    let nf = n as f64;
    let mut generator = vec![0.0; s * s];
    for (i, parts) in states.iter().enumerate() {
        let counts: Vec<(u64, u64)> = counts_of(parts).into_iter().collect();
        for (a, &(l, nl)) in counts.iter().enumerate() {
            for &(m, nm) in &counts[a..] {
                let rate = if l == m {
                    k.evaluate(l, l) * (nl * (nl - 1)) as f64 / nf
                } else {
                    2.0 * k.evaluate(l, m) * (nl * nm) as f64 / nf
                };
                if rate > 0.0 {
                    let j = index[&merged(parts, l, m)];
                    generator[i * s + j] += rate;
                    generator[i * s + i] -= rate;
                }
            }
        }
    }
    let max_exit = (0..s).map(|i| -generator[i * s + i]).fold(0.0, f64::max);
    Ok(PartitionChain {
        n,
        kernel: k.decl().clone(),
        states,
        index,
        generator,
        max_exit,
    })
}

impl PartitionChain {
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn kernel(&self) -> &KernelDecl {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<u64>] {
        &self.states
    }

    pub fn index_of(&self, parts: &[u64]) -> Option<usize> {
        let mut key = parts.to_vec();
        key.sort_unstable_by(|a, b| b.cmp(a));
        self.index.get(&key).copied()
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.generator[from * self.len() + to]
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.max_exit
    }

    pub fn monodisperse_index(&self) -> usize {
        0
    }

    /// Law at time `t` of the chain started from `initial`.
    pub fn evolve(&self, initial: &[f64], t: f64) -> Vec<f64> {
        assert_eq!(initial.len(), self.len());
        assert!(t >= 0.0 && t.is_finite(), "t = {t}");
        let lambda = self.max_exit;
        let mut p = initial.to_vec();
        if lambda == 0.0 || t == 0.0 {
            return p;
        }
        let windows = (lambda * t / WINDOW).ceil().max(1.0) as usize;
        let a = lambda * t / windows as f64;
        for _ in 0..windows {
            p = self.uniformized_window(&p, a, lambda);
        }
        p
    }

    /// `p exp(a G / Λ)` via the Poisson mixture of powers of `I + G / Λ`.
    fn uniformized_window(&self, p: &[f64], a: f64, lambda: f64) -> Vec<f64> {
        let s = self.len();
        let mut term = p.to_vec();
        let mut next = vec![0.0; s];
        let mut weight = (-a).exp();
        let mut mass = weight;
        let mut out: Vec<f64> = term.iter().map(|x| weight * x).collect();
        let mut k = 0u64;
        while 1.0 - mass > TAIL && k < 10_000 {
            k += 1;
            next.iter_mut().for_each(|x| *x = 0.0);
            for (i, &pi) in term.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                let row = &self.generator[i * s..(i + 1) * s];
                for (j, &g) in row.iter().enumerate() {
                    next[j] += pi * g / lambda;
                }
                next[i] += pi;
            }
            std::mem::swap(&mut term, &mut next);
            weight *= a / k as f64;
            mass += weight;
            for (o, x) in out.iter_mut().zip(&term) {
                *o += weight * x;
            }
        }
        out
    }

    /// Law at time `t` from the monodisperse start.
    pub fn distribution(&self, t: f64) -> Vec<f64> {
        let mut p0 = vec![0.0; self.len()];
        p0[self.monodisperse_index()] = 1.0;
        self.evolve(&p0, t)
    }

    /// Row `from` of `exp(t G)`.
    pub fn transition_row(&self, from: usize, t: f64) -> Vec<f64> {
        let mut p0 = vec![0.0; self.len()];
        p0[from] = 1.0;
        self.evolve(&p0, t)
    }

    pub fn expectation(&self, law: &[f64], obs: Observable) -> f64 {
        self.states
            .iter()
            .zip(law)
            .map(|(s, p)| p * obs.evaluate(s, self.n))
            .sum()
    }
}

/// Functions of the state whose exact means the oracle reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Observable {
    /// `N_l`.
    Count { l: u64 },
    /// `π(l) = N_l / n`.
    Density { l: u64 },
    /// `Σ l^p π(l)`.
    Moment { p: u32 },
    /// `N_a N_b`, for second moments.
    Product { a: u64, b: u64 },
    /// Number of clusters.
    Particles,
}

impl Observable {
    pub fn evaluate(&self, parts: &[u64], n: u64) -> f64 {
        let count = |l: u64| parts.iter().filter(|&&p| p == l).count() as f64;
        match *self {
            Observable::Count { l } => count(l),
            Observable::Density { l } => count(l) / n as f64,
            Observable::Moment { p } => parts.iter().map(|&q| (q as f64).powi(p as i32)).sum::<f64>() / n as f64,
            Observable::Product { a, b } => count(a) * count(b),
            Observable::Particles => parts.len() as f64,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Observable::Count { l } => format!("N_{l}"),
            Observable::Density { l } => format!("pi_{l}"),
            Observable::Moment { p } => format!("M_{p}"),
            Observable::Product { a, b } => format!("N_{a}*N_{b}"),
            Observable::Particles => "particles".into(),
        }
    }
}

/// `E[obs(state at t)]` from the monodisperse start.
pub fn exact_expectations(chain: &PartitionChain, t: f64, obs: Observable) -> f64 {
    chain.expectation(&chain.distribution(t), obs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub n: u64,
    pub kernel: KernelDecl,
    pub t: f64,
    pub observable: Observable,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub entries: Vec<OracleEntry>,
}

impl OracleReport {
    /// Exact means of every observable at every time for one chain.
    pub fn extend_from(&mut self, chain: &PartitionChain, times: &[f64], observables: &[Observable]) {
        for &t in times {
            let law = chain.distribution(t);
            for &obs in observables {
                self.entries.push(OracleEntry {
                    n: chain.n(),
                    kernel: chain.kernel().clone(),
                    t,
                    observable: obs,
                    value: chain.expectation(&law, obs),
                });
            }
        }
    }

    pub fn lookup(&self, n: u64, t: f64, obs: Observable) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.n == n && e.t == t && e.observable == obs)
            .map(|e| e.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_counts_and_order() {
        let counts: Vec<usize> = (1..=12).map(|n| partitions(n).len()).collect();
        assert_eq!(counts, vec![1, 2, 3, 5, 7, 11, 15, 22, 30, 42, 56, 77]);
        let p4 = partitions(4);
        assert_eq!(p4[0], vec![1, 1, 1, 1]);
        assert_eq!(p4[4], vec![4]);
    }

    #[test]
    fn two_particle_generator() {
        let c = build_chain(2, &Kernel::constant(1.0).unwrap()).unwrap();
        assert_eq!(c.states(), &[vec![1, 1], vec![2]]);
        assert_eq!(c.rate(0, 0), -1.0);
        assert_eq!(c.rate(0, 1), 1.0);
        assert_eq!(c.rate(1, 0), 0.0);
        assert_eq!(c.rate(1, 1), 0.0);
    }

    #[test]
    fn three_particle_rates() {
        let c = build_chain(3, &Kernel::constant(1.0).unwrap()).unwrap();
        let a = c.index_of(&[1, 1, 1]).unwrap();
        let b = c.index_of(&[2, 1]).unwrap();
        let z = c.index_of(&[3]).unwrap();
        assert!((c.rate(a, b) - 2.0).abs() < 1e-15);
        assert!((c.rate(b, z) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_large_n() {
        let k = Kernel::constant(1.0).unwrap();
        assert_eq!(
            build_chain(13, &k).unwrap_err(),
            OracleError::TooLarge { n: 13, max: 12 }
        );
        assert_eq!(build_chain(0, &k).unwrap_err(), OracleError::ZeroN);
    }

    #[test]
    fn two_state_closed_form() {
        let c = build_chain(2, &Kernel::constant(1.0).unwrap()).unwrap();
        for t in [0.0, 0.3, 1.0, 5.0, 80.0] {
            let e = exact_expectations(&c, t, Observable::Count { l: 2 });
            assert!((e - (1.0 - (-t).exp())).abs() < 1e-12, "t={t}: {e}");
        }
        let e1 = exact_expectations(&c, 1.0, Observable::Count { l: 2 });
        assert!((e1 - 0.6321206).abs() < 1e-7);
    }

    #[test]
    fn zero_kernel_is_frozen() {
        let c = build_chain(6, &Kernel::constant(0.0).unwrap()).unwrap();
        assert!(c.generator.iter().all(|&g| g == 0.0));
        assert_eq!(exact_expectations(&c, 3.0, Observable::Count { l: 1 }), 6.0);
    }
}
