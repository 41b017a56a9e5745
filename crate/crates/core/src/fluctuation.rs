//! Gaussian fluctuation predictions.
//!
//! The limit fluctuation field solves the linear SDE
//! `dξ = 𝒜(u_t, ξ) dt + Q(u_t)^{1/2} dB`, started from `ξ_0 = 0`, where
//! `𝒜(u, ·)` is the linearization of the coagulation operator around `u` and
//! `Q(u; f) = Σ_{i,j} K(i,j) u_i u_j (f_{i+j} − f_i − f_j)²` is the noise form.
//!
//! Two independent routes predict second moments:
//!
//! * the Lyapunov ODE `Σ' = A Σ + Σ Aᵀ + Q(u_t)`, which yields every pair at once;
//! * the backward dual equation `∂_s f + 𝒜*(u_s, f) = 0`, `f_t = g`, after which
//!   `Var ⟨ξ_t, g⟩ = ∫_0^t Q(u_s; f_s) ds`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::kernel::Kernel;
use crate::smoluchowski::{solve, uniform_grid, DeterministicTrajectory, SolverConfig};
use crate::state::{norm_sup, DensityVector};

#[inline]
fn at(v: &[f64], l: usize) -> f64 {
    if l == 0 || l > v.len() {
        0.0
    } else {
        v[l - 1]
    }
}

/// `𝒜(u, v)(l)` for `l = 1..=L` with `L = v.len()`; `u` may be longer or
/// shorter and is read as zero past its end.
///
/// `𝒜(u,v)(l) = Σ_{i<l} K(i,l−i)(u_i v_{l−i} + u_{l−i} v_i) − 2 Σ_i K(l,i)(u_l v_i + v_l u_i)`.
pub fn apply_a(k: &Kernel, u: &[f64], v: &[f64]) -> Vec<f64> {
    let len = v.len();
    let span = len.max(u.len());
    (1..=len)
        .map(|l| {
            let mut gain = 0.0;
            for i in 1..l {
                let j = l - i;
                gain += k.evaluate(i as u64, j as u64) * (at(u, i) * v[j - 1] + at(u, j) * v[i - 1]);
            }
            let (ul, vl) = (at(u, l), v[l - 1]);
            let mut loss = 0.0;
            for i in 1..=span {
                let (ui, vi) = (at(u, i), at(v, i));
                if ui != 0.0 || vi != 0.0 {
                    loss += k.evaluate(l as u64, i as u64) * (ul * vi + vl * ui);
                }
            }
            gain - 2.0 * loss
        })
        .collect()
}

/// `𝒜*(u, f)(l) = 2 Σ_i K(l,i) (f_{l+i} − f_l − f_i) u_i` for `l = 1..=f.len()`,
/// with `f` read as zero past its end.
pub fn apply_a_star(k: &Kernel, u: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    apply_a_star_into(k, u, f, &mut out);
    out
}

fn apply_a_star_into(k: &Kernel, u: &[f64], f: &[f64], out: &mut [f64]) {
    for (l, o) in (1..=f.len()).zip(out.iter_mut()) {
        let fl = f[l - 1];
        let mut s = 0.0;
        for (i, &ui) in (1..).zip(u) {
            if ui != 0.0 {
                s += k.evaluate(l as u64, i as u64) * (at(f, l + i) - fl - at(f, i)) * ui;
            }
        }
        *o = 2.0 * s;
    }
}

/// `Q(u; f)`, summing over `i, j <= u.len()`, `f` zero past its end.
pub fn q_form(k: &Kernel, u: &[f64], f: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, &ui) in (1..).zip(u) {
        if ui == 0.0 {
            continue;
        }
        let fi = at(f, i);
        for (j, &uj) in (1..).zip(u) {
            if uj == 0.0 {
                continue;
            }
            let d = at(f, i + j) - fi - at(f, j);
            total += k.evaluate(i as u64, j as u64) * ui * uj * d * d;
        }
    }
    total
}

/// Coordinate form of `Q(u; ·)` on `{1..L}`:
/// `Q_ab = Σ_{i,j} K(i,j) u_i u_j c_a(i,j) c_b(i,j)` with
/// `c_a(i,j) = 1(i+j=a) − 1(i=a) − 1(j=a)`.
pub fn q_matrix(k: &Kernel, u: &[f64], truncation: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(truncation, truncation);
    q_matrix_into(k, u, &mut q);
    q
}

fn q_matrix_into(k: &Kernel, u: &[f64], q: &mut DMatrix<f64>) {
    let len = q.nrows();
    q.fill(0.0);
    let mut idx = [0usize; 3];
    let mut val = [0.0f64; 3];
    for (i, &ui) in (1..).zip(u) {
        if ui == 0.0 {
            continue;
        }
        for (j, &uj) in (1..).zip(u) {
            if uj == 0.0 {
                continue;
            }
            let w = k.evaluate(i as u64, j as u64) * ui * uj;
            if w == 0.0 {
                continue;
            }
            let mut nz = 0;
            let mut push = |a: usize, c: f64| {
                if a <= len {
                    if let Some(p) = idx[..nz].iter().position(|&x| x == a) {
                        val[p] += c;
                    } else {
                        idx[nz] = a;
                        val[nz] = c;
                        nz += 1;
                    }
                }
            };
            push(i + j, 1.0);
            push(i, -1.0);
            push(j, -1.0);
            for x in 0..nz {
                for y in 0..nz {
                    q[(idx[x] - 1, idx[y] - 1)] += w * val[x] * val[y];
                }
            }
        }
    }
}

/// Matrix of `v ↦ 𝒜(u, v)` restricted to `{1..L}`.
pub fn drift_matrix(k: &Kernel, u: &[f64], truncation: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(truncation, truncation);
    drift_matrix_into(k, u, &mut a);
    a
}

fn drift_matrix_into(k: &Kernel, u: &[f64], a: &mut DMatrix<f64>) {
    let len = a.nrows();
    a.fill(0.0);
    for row in 1..=len {
        for col in 1..row {
            a[(row - 1, col - 1)] += 2.0 * k.evaluate(col as u64, (row - col) as u64) * at(u, row - col);
        }
        let ur = at(u, row);
        if ur != 0.0 {
            for col in 1..=len {
                a[(row - 1, col - 1)] -= 2.0 * k.evaluate(row as u64, col as u64) * ur;
            }
        }
        let mut diag = 0.0;
        for (i, &ui) in (1..).zip(u) {
            diag += k.evaluate(row as u64, i as u64) * ui;
        }
        a[(row - 1, row - 1)] -= 2.0 * diag;
    }
}

/// Predicted `Cov(ξ_t(a), ξ_t(b))` for `a, b <= L`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix {
    pub t: f64,
    pub matrix: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn zeros(t: f64, truncation: usize) -> Self {
        CovarianceMatrix {
            t,
            matrix: DMatrix::zeros(truncation, truncation),
        }
    }

    pub fn truncation(&self) -> usize {
        self.matrix.nrows()
    }

    /// Covariance of masses `a` and `b` (1-based).
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.matrix[(a - 1, b - 1)]
    }

    pub fn variance(&self, l: usize) -> f64 {
        self.get(l, l)
    }

    /// `gᵀ Σ g` with `g` zero past its end.
    pub fn quadratic(&self, g: &[f64]) -> f64 {
        let len = self.truncation().min(g.len());
        let mut s = 0.0;
        for a in 0..len {
            for b in 0..len {
                s += g[a] * self.matrix[(a, b)] * g[b];
            }
        }
        s
    }

    pub fn max_asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).abs().max()
    }

    /// Smallest eigenvalue relative to the trace (0 when the trace is 0).
    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.matrix + self.matrix.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.min()
    }

    pub fn is_psd(&self) -> bool {
        let trace = self.matrix.trace();
        self.min_eigenvalue() >= -1e-9 * trace.abs().max(f64::MIN_POSITIVE)
    }
}

/// A backward dual trajectory and the variance it predicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    /// Increasing times `0 = s_0 < ... < s_K = t`.
    pub times: Vec<f64>,
    /// `f_s` at each time, on `{1..L_f}`.
    pub f: Vec<Vec<f64>>,
    /// `∫_0^t Q(u_s; f_s) ds`.
    pub variance: f64,
    /// `⟨ξ_0, f_0⟩`, zero from the fixed initial condition.
    pub mean: f64,
}

impl DualSolution {
    pub fn f_at_start(&self) -> &[f64] {
        &self.f[0]
    }
}

/// Step sizes, truncations and the reference trajectory for both routes.
#[derive(Clone, Debug)]
pub struct FluctuationModel {
    kernel: Kernel,
    u: DeterministicTrajectory,
    truncation: usize,
    dual_truncation: usize,
    dt: f64,
}

impl FluctuationModel {
    /// Solves the Smoluchowski equation from the monodisperse state on a grid
    /// of spacing `dt / 2`, so every RK4 stage of either route falls on a grid
    /// point. The dual truncation defaults to `2 L`.
    pub fn new(kernel: Kernel, truncation: usize, horizon: f64, dt: f64) -> Result<Self, SolveError> {
        if truncation == 0 {
            return Err(SolveError::Invalid("truncation L must be at least 1".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SolveError::Invalid(format!("step dt must be positive, got {dt}")));
        }
        let pieces = ((horizon / dt).ceil() as usize).max(1) * 2;
        let grid = uniform_grid(horizon, pieces);
        let solver_dt = (dt / 2.0).min(SolverConfig::stability_bound(&kernel));
        let cfg = SolverConfig::fixed(truncation, solver_dt, grid);
        let u = solve(&kernel, &DensityVector::monodisperse(truncation), &cfg)?;
        Ok(FluctuationModel {
            kernel,
            u,
            truncation,
            dual_truncation: 2 * truncation,
            dt,
        })
    }

    /// Uses a caller-supplied trajectory; linear interpolation fills in
    /// between its grid points.
    pub fn from_trajectory(kernel: Kernel, u: DeterministicTrajectory, dt: f64) -> Result<Self, SolveError> {
        let truncation = u.truncation();
        if truncation == 0 || u.times.is_empty() {
            return Err(SolveError::Invalid("empty reference trajectory".into()));
        }
        Ok(FluctuationModel {
            kernel,
            u,
            truncation,
            dual_truncation: 2 * truncation,
            dt,
        })
    }

    pub fn with_dual_truncation(mut self, dual_truncation: usize) -> Self {
        self.dual_truncation = dual_truncation;
        self
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn reference(&self) -> &DeterministicTrajectory {
        &self.u
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn dual_truncation(&self) -> usize {
        self.dual_truncation
    }

    pub fn horizon(&self) -> f64 {
        self.u.horizon()
    }

    fn steps_for(&self, span: f64) -> (usize, f64) {
        if span <= 0.0 {
            return (0, 0.0);
        }
        let pieces = (span / self.dt - 1e-9).ceil().max(1.0) as usize;
        (pieces, span / pieces as f64)
    }

    /// Integrates the Lyapunov equation from `Σ_0 = 0` and returns `Σ` at
    /// each requested time.
    pub fn covariance(&self, grid: &[f64]) -> Result<Vec<CovarianceMatrix>, SolveError> {
        check_grid(grid, self.horizon())?;
        let len = self.truncation;
        let mut sigma = DMatrix::zeros(len, len);
        let mut a = DMatrix::zeros(len, len);
        let mut q = DMatrix::zeros(len, len);
        let mut u = vec![0.0; self.u.truncation()];
        let mut out = Vec::with_capacity(grid.len());
        let mut t = 0.0;

        let mut rhs = |s: f64, sig: &DMatrix<f64>| -> Result<DMatrix<f64>, SolveError> {
            self.u.interpolate_into(s, &mut u)?;
            drift_matrix_into(&self.kernel, &u, &mut a);
            q_matrix_into(&self.kernel, &u, &mut q);
            let asig = &a * sig;
            Ok(&asig + asig.transpose() + &q)
        };

        for &target in grid {
            let (pieces, h) = self.steps_for(target - t);
            for _ in 0..pieces {
                let k1 = rhs(t, &sigma)?;
                let k2 = rhs(t + 0.5 * h, &(&sigma + &k1 * (0.5 * h)))?;
                let k3 = rhs(t + 0.5 * h, &(&sigma + &k2 * (0.5 * h)))?;
                let k4 = rhs(t + h, &(&sigma + &k3 * h))?;
                sigma += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                t += h;
            }
            t = target;
            let sym = (&sigma + sigma.transpose()) * 0.5;
            out.push(CovarianceMatrix { t: target, matrix: sym });
        }
        Ok(out)
    }

    /// Solves `∂_s f + 𝒜*(u_s, f) = 0` backward from `f_t = g` and integrates
    /// `Q(u_s; f_s)` along the way.
    pub fn dual(&self, g: &[f64], t: f64) -> Result<DualSolution, SolveError> {
        let horizon = self.horizon();
        if t > horizon + 1e-12 * horizon.max(1.0) || t < 0.0 {
            return Err(SolveError::BeyondHorizon { t, horizon });
        }
        if g.len() > self.dual_truncation {
            return Err(SolveError::Invalid(format!(
                "test function support {} exceeds dual truncation {}",
                g.len(),
                self.dual_truncation
            )));
        }
        let lf = self.dual_truncation;
        let mut f = vec![0.0; lf];
        f[..g.len()].copy_from_slice(g);
        let mut u = vec![0.0; self.u.truncation()];

        // state is (f, V) in reversed time τ = t − s: df/dτ = 𝒜*(u, f), dV/dτ = Q(u; f)
        let mut eval = |s: f64, f: &[f64], df: &mut [f64]| -> Result<f64, SolveError> {
            self.u.interpolate_into(s, &mut u)?;
            apply_a_star_into(&self.kernel, &u, f, df);
            Ok(q_form(&self.kernel, &u, f))
        };

        let (pieces, h) = self.steps_for(t);
        let mut times = vec![t];
        let mut traj = vec![f.clone()];
        let mut variance = 0.0;
        let mut s = t;
        let mut k1 = vec![0.0; lf];
        let mut k2 = vec![0.0; lf];
        let mut k3 = vec![0.0; lf];
        let mut k4 = vec![0.0; lf];
        let mut tmp = vec![0.0; lf];
        for step in 0..pieces {
            let q1 = eval(s, &f, &mut k1)?;
            for i in 0..lf {
                tmp[i] = f[i] + 0.5 * h * k1[i];
            }
            let q2 = eval(s - 0.5 * h, &tmp, &mut k2)?;
            for i in 0..lf {
                tmp[i] = f[i] + 0.5 * h * k2[i];
            }
            let q3 = eval(s - 0.5 * h, &tmp, &mut k3)?;
            for i in 0..lf {
                tmp[i] = f[i] + h * k3[i];
            }
            let next = if step + 1 == pieces { 0.0 } else { s - h };
            let q4 = eval(next, &tmp, &mut k4)?;
            for i in 0..lf {
                f[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            variance += h / 6.0 * (q1 + 2.0 * q2 + 2.0 * q3 + q4);
            s = next;
            times.push(s);
            traj.push(f.clone());
        }
        times.reverse();
        traj.reverse();
        Ok(DualSolution {
            times,
            f: traj,
            variance,
            mean: 0.0,
        })
    }
}

fn check_grid(grid: &[f64], horizon: f64) -> Result<(), SolveError> {
    if grid.is_empty() {
        return Err(SolveError::GridMismatch("empty output grid".into()));
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(SolveError::GridMismatch(format!("grid not increasing at {}", w[1])));
        }
    }
    let last = *grid.last().unwrap();
    if grid[0] < 0.0 || last > horizon + 1e-12 * horizon.max(1.0) {
        return Err(SolveError::GridMismatch(format!(
            "output grid [{}, {last}] not within reference horizon {horizon}",
            grid[0]
        )));
    }
    Ok(())
}

/// Grönwall envelope for the dual solution: `‖g‖∞ exp(6 ‖K‖∞ ‖u‖₁ (t − s))`
/// with `‖u‖₁ <= 1`.
pub fn dual_envelope(k: &Kernel, g: &[f64], t: f64, s: f64) -> f64 {
    norm_sup(g) * (6.0 * k.sup_norm() * (t - s)).exp()
}
