//! The deterministic layer: the coagulation operator, its finite-`n`
//! correction, and a truncated RK4 integrator for the Smoluchowski equation
//!
//! `d/dt u_l = Σ_{i<l} K(i,l−i) u_i u_{l−i} − 2 Σ_i K(l,i) u_l u_i`.
//!
//! The truncated system keeps masses `1..=L`. Gain into masses past `L` is
//! integrated into `leaked_number` and `leaked_mass`, so
//! `Σ l u_l + leaked_mass` is conserved by construction. Merges among
//! clusters past `L` are not resolved, so `leaked_number` counts crossings
//! and bounds the current tail number from above. The loss sum stops at
//! `i <= L`, which leaves an error of order `u_l Σ_{i>L} u_i`.

use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::kernel::Kernel;
use crate::state::DensityVector;

/// `(𝒦u)_l` for `l = 1..=L`, loss sum truncated at `i <= L`.
pub fn apply_k(k: &Kernel, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    apply_k_into(k, u, &mut out);
    out
}

pub(crate) fn apply_k_into(k: &Kernel, u: &[f64], out: &mut [f64]) {
    let len = u.len();
    for l in 1..=len {
        let mut gain = 0.0;
        for i in 1..l {
            gain += k.evaluate(i as u64, (l - i) as u64) * u[i - 1] * u[l - i - 1];
        }
        let ul = u[l - 1];
        let mut loss = 0.0;
        if ul != 0.0 {
            for i in 1..=len {
                loss += k.evaluate(l as u64, i as u64) * u[i - 1];
            }
        }
        out[l - 1] = gain - 2.0 * ul * loss;
    }
}

/// `𝒦u` applied to a [`DensityVector`].
pub fn apply_k_density(k: &Kernel, u: &DensityVector) -> Vec<f64> {
    apply_k(k, u.values())
}

/// `(ℛu)_l = 2 K(l,l) u_l − K(l/2,l/2) u_{l/2}`, the half-mass term present
/// only for even `l`.
pub fn apply_r(k: &Kernel, u: &[f64]) -> Vec<f64> {
    (1..=u.len())
        .map(|l| {
            let own = 2.0 * k.evaluate(l as u64, l as u64) * u[l - 1];
            let half = if l % 2 == 0 {
                let h = l / 2;
                k.evaluate(h as u64, h as u64) * u[h - 1]
            } else {
                0.0
            };
            own - half
        })
        .collect()
}

/// Exact monodisperse solution for `K ≡ c`: `(ct)^{l−1} / (1+ct)^{l+1}`.
pub fn constant_kernel_exact(l: u64, t: f64, c: f64) -> f64 {
    assert!(l >= 1);
    let ct = c * t;
    ct.powi(l as i32 - 1) / (1.0 + ct).powi(l as i32 + 1)
}

/// Exact density vector for `K ≡ c` at time `t`, truncated at `L`, with the
/// tail reported as leak.
pub fn constant_kernel_exact_density(truncation: usize, t: f64, c: f64) -> DensityVector {
    let values: Vec<f64> = (1..=truncation as u64)
        .map(|l| constant_kernel_exact(l, t, c))
        .collect();
    let number = values.iter().sum::<f64>();
    let mass = crate::state::norm_l1_weighted(&values);
    let total_number = 1.0 / (1.0 + c * t);
    DensityVector::from_values(values).with_leak((total_number - number).max(0.0), (1.0 - mass).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum StepControl {
    Fixed {
        dt: f64,
    },
    /// Step doubling with local extrapolation; `atol` is a target for the
    /// global max-abs error over the horizon.
    Adaptive {
        atol: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub truncation: usize,
    pub step: StepControl,
    pub horizon: f64,
    /// Output times, increasing, within `[0, horizon]`.
    pub grid: Vec<f64>,
}

impl SolverConfig {
    pub fn fixed(truncation: usize, dt: f64, grid: Vec<f64>) -> Self {
        let horizon = grid.last().copied().unwrap_or(0.0);
        SolverConfig {
            truncation,
            step: StepControl::Fixed { dt },
            horizon,
            grid,
        }
    }

    /// Largest stable fixed step, `1/(6‖K‖∞)`.
    pub fn stability_bound(k: &Kernel) -> f64 {
        if k.sup_norm() == 0.0 {
            f64::INFINITY
        } else {
            1.0 / (6.0 * k.sup_norm())
        }
    }

    pub fn validate(&self, k: &Kernel) -> Result<(), SolveError> {
        if self.truncation == 0 {
            return Err(SolveError::Invalid("truncation L must be at least 1".into()));
        }
        match self.step {
            StepControl::Fixed { dt } => {
                let bound = Self::stability_bound(k);
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(SolveError::Invalid(format!("step dt must be positive, got {dt}")));
                }
                if dt > bound {
                    return Err(SolveError::StepTooLarge { dt, bound });
                }
            }
            StepControl::Adaptive { atol } => {
                if !(atol > 0.0 && atol <= 1e-6) {
                    return Err(SolveError::BadTolerance(atol));
                }
            }
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(SolveError::Invalid(format!(
                "horizon must be finite and >= 0, got {}",
                self.horizon
            )));
        }
        if self.grid.is_empty() {
            return Err(SolveError::GridMismatch("output grid is empty".into()));
        }
        for w in self.grid.windows(2) {
            if w[1] <= w[0] {
                return Err(SolveError::GridMismatch(format!("grid not increasing at {}", w[1])));
            }
        }
        if self.grid[0] < 0.0 || *self.grid.last().unwrap() > self.horizon {
            return Err(SolveError::GridMismatch(format!(
                "grid must lie within [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Solution sampled on the output grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterministicTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityVector>,
    /// Accepted integration steps.
    pub steps: u64,
}

impl DeterministicTrajectory {
    pub fn truncation(&self) -> usize {
        self.states.first().map_or(0, |s| s.truncation())
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Linear interpolation between grid points; exact at grid points.
    pub fn interpolate_into(&self, t: f64, out: &mut [f64]) -> Result<(), SolveError> {
        let first = self.times[0];
        let last = self.horizon();
        let eps = 1e-12 * last.abs().max(1.0);
        if t < first - eps || t > last + eps {
            return Err(SolveError::BeyondHorizon { t, horizon: last });
        }
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            out.copy_from_slice(self.states[0].values());
            return Ok(());
        }
        if idx >= self.times.len() {
            out.copy_from_slice(self.states[self.times.len() - 1].values());
            return Ok(());
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.states[idx - 1].values(), self.states[idx].values());
        if w == 0.0 {
            out.copy_from_slice(a);
        } else {
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o = x + w * (y - x);
            }
        }
        Ok(())
    }
}

/// Right-hand side of the truncated system. The state is `u_1..u_L` followed
/// by `leaked_number` and `leaked_mass`.
struct Rhs<'a> {
    k: &'a Kernel,
    truncation: usize,
}

impl Rhs<'_> {
    fn eval(&self, y: &[f64], out: &mut [f64]) {
        let len = self.truncation;
        let u = &y[..len];
        apply_k_into(self.k, u, &mut out[..len]);
        let mut number = 0.0;
        let mut mass = 0.0;
        for i in 1..=len {
            let ui = u[i - 1];
            if ui == 0.0 {
                continue;
            }
            for j in (len + 1 - i)..=len {
                let g = self.k.evaluate(i as u64, j as u64) * ui * u[j - 1];
                number += g;
                mass += (i + j) as f64 * g;
            }
        }
        // ordered pairs, as in the gain sum
        out[len] = number;
        out[len + 1] = mass;
    }
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    fn step(&mut self, f: &dyn Fn(&[f64], &mut [f64]), y: &mut [f64], h: f64) {
        self.stages(f, y, h);
        for i in 0..y.len() {
            y[i] += self.increment(i, h);
        }
    }

    /// As [`Rk4::step`], with Kahan-compensated accumulation of `y`. Over
    /// thousands of small steps plain accumulation sets an error floor near
    /// `1e-14`, above the truncation error of the fourth-order scheme.
    fn step_compensated(&mut self, f: &dyn Fn(&[f64], &mut [f64]), y: &mut [f64], carry: &mut [f64], h: f64) {
        self.stages(f, y, h);
        for i in 0..y.len() {
            let inc = self.increment(i, h) - carry[i];
            let next = y[i] + inc;
            carry[i] = (next - y[i]) - inc;
            y[i] = next;
        }
    }

    #[inline]
    fn increment(&self, i: usize, h: f64) -> f64 {
        h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i])
    }

    fn stages(&mut self, f: &dyn Fn(&[f64], &mut [f64]), y: &[f64], h: f64) {
        f(y, &mut self.k1);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        f(&self.tmp, &mut self.k2);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        f(&self.tmp, &mut self.k3);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(&self.tmp, &mut self.k4);
    }
}

fn to_density(y: &[f64], truncation: usize) -> DensityVector {
    let mut d = DensityVector::from_values(y[..truncation].to_vec()).with_leak(y[truncation], y[truncation + 1]);
    d.clamp_negatives();
    d
}

/// Integrates the truncated Smoluchowski equation from `u0`.
pub fn solve(k: &Kernel, u0: &DensityVector, cfg: &SolverConfig) -> Result<DeterministicTrajectory, SolveError> {
    cfg.validate(k)?;
    let len = cfg.truncation;
    if u0.truncation() != len {
        return Err(crate::error::StateError::TruncationMismatch {
            left: u0.truncation(),
            right: len,
        }
        .into());
    }
    let rhs = Rhs { k, truncation: len };
    let f = |y: &[f64], out: &mut [f64]| rhs.eval(y, out);
    let mut y: Vec<f64> = u0.values().to_vec();
    y.push(u0.leaked_number());
    y.push(u0.leaked_mass());
    let mut rk = Rk4::new(len + 2);
    let mut t = 0.0;
    let mut steps = 0u64;
    let mut times = Vec::with_capacity(cfg.grid.len());
    let mut states = Vec::with_capacity(cfg.grid.len());

    match cfg.step {
        StepControl::Fixed { dt } => {
            let mut carry = vec![0.0; len + 2];
            for &target in &cfg.grid {
                let span = target - t;
                if span > 0.0 {
                    let pieces = (span / dt - 1e-9).ceil().max(1.0) as u64;
                    let h = span / pieces as f64;
                    for _ in 0..pieces {
                        rk.step_compensated(&f, &mut y, &mut carry, h);
                        steps += 1;
                    }
                    t = target;
                }
                times.push(target);
                states.push(to_density(&y, len));
            }
        }
        StepControl::Adaptive { atol } => {
            let bound = SolverConfig::stability_bound(k).min(cfg.horizon.max(1e-3));
            let mut h = bound.min(0.01);
            let per_time = atol / cfg.horizon.max(1.0);
            let mut big = y.clone();
            let mut half = y.clone();
            let mut rk2 = Rk4::new(len + 2);
            for &target in &cfg.grid {
                while t < target {
                    let step = h.min(target - t);
                    big.copy_from_slice(&y);
                    half.copy_from_slice(&y);
                    rk.step(&f, &mut big, step);
                    rk2.step(&f, &mut half, 0.5 * step);
                    rk2.step(&f, &mut half, 0.5 * step);
                    let err = big.iter().zip(&half).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / 15.0;
                    let allowed = per_time * step;
                    if err <= allowed || step < 1e-12 {
                        for ((yi, hi), bi) in y.iter_mut().zip(&half).zip(&big) {
                            *yi = hi + (hi - bi) / 15.0;
                        }
                        t += step;
                        steps += 1;
                    }
                    let factor = if err == 0.0 {
                        4.0
                    } else {
                        (0.9 * (allowed / err).powf(0.2)).clamp(0.2, 4.0)
                    };
                    h = (step * factor).min(bound);
                }
                t = target;
                times.push(target);
                states.push(to_density(&y, len));
            }
        }
    }
    Ok(DeterministicTrajectory { times, states, steps })
}

/// `n` equal steps of `[0, horizon]` including both ends.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    if steps == 0 || horizon == 0.0 {
        return vec![0.0];
    }
    (0..=steps)
        .map(|i| {
            if i == steps {
                horizon
            } else {
                horizon * i as f64 / steps as f64
            }
        })
        .collect()
}
