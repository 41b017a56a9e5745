//! Ensemble statistics and the checks built on them.
//!
//! Replicas are folded one at a time in replica-index order with one-pass
//! central-moment updates, so the summary of a fixed replica set is
//! bit-identical however the replicas were produced.

use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::fluctuation::CovarianceMatrix;
use crate::kernel::Kernel;
use crate::simulator::Trajectory;
use crate::state::{norm_l1, norm_l1_weighted, DensityVector};

/// Running mean and central moments up to order four.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        let n1 = self.count as f64;
        self.count += 1;
        let n = self.count as f64;
        let delta = x - self.mean;
        let dn = delta / n;
        let dn2 = dn * dn;
        let term1 = delta * dn * n1;
        self.mean += dn;
        self.m4 += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3;
        self.m3 += term1 * dn * (n - 2.0) - 3.0 * dn * self.m2;
        self.m2 += term1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn standard_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    /// Zero for a degenerate sample.
    pub fn skewness(&self) -> f64 {
        if self.m2 <= 0.0 {
            return 0.0;
        }
        (self.count as f64).sqrt() * self.m3 / self.m2.powf(1.5)
    }

    /// Zero for a degenerate sample.
    pub fn excess_kurtosis(&self) -> f64 {
        if self.m2 <= 0.0 {
            return 0.0;
        }
        self.count as f64 * self.m4 / (self.m2 * self.m2) - 3.0
    }

    pub fn stat(&self) -> Stat {
        Stat {
            mean: self.mean,
            variance: self.variance(),
            se: self.standard_error(),
            skewness: self.skewness(),
            excess_kurtosis: self.excess_kurtosis(),
        }
    }
}

/// Running co-moment of a pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct CoMoment {
    count: u64,
    mean_a: f64,
    mean_b: f64,
    c: f64,
}

impl CoMoment {
    fn push(&mut self, a: f64, b: f64) {
        self.count += 1;
        let n = self.count as f64;
        let da = a - self.mean_a;
        self.mean_a += da / n;
        self.mean_b += (b - self.mean_b) / n;
        self.c += da * (b - self.mean_b);
    }

    fn covariance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.c / (self.count - 1) as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub variance: f64,
    pub se: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCovariance {
    pub a: usize,
    pub b: usize,
    /// One estimate per grid time.
    pub covariance: Vec<f64>,
}

/// Per-time, per-mass statistics of an ensemble. Mass index `l` is stored at
/// position `l - 1`; moment `p` at position `p - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub replicas: usize,
    pub n: u64,
    pub truncation: usize,
    pub times: Vec<f64>,
    pub pi: Vec<Vec<Stat>>,
    pub xi: Vec<Vec<Stat>>,
    pub martingale: Vec<Vec<Stat>>,
    /// Replica statistics of `∫ n Γ ds`.
    pub qv: Vec<Vec<Stat>>,
    pub moments: Vec<[Stat; 4]>,
    /// `‖ξ‖₁²` over the truncated vector.
    pub xi_l1_sq: Vec<Stat>,
    /// `Σ l |ξ(l)|` over the truncated vector.
    pub xi_l11: Vec<Stat>,
    /// `√n |π − u|` on the mass beyond the truncation.
    pub xi_tail: Vec<Stat>,
    /// `‖π − u‖₁` over masses `1..=L`.
    pub lln_error: Vec<Stat>,
    pub covariances: Vec<PairCovariance>,
    /// Largest `|Σ l N_l − n|` seen at any snapshot.
    pub max_mass_defect: u128,
    /// Largest `|Σ l ξ(l)|` over full histograms.
    pub max_mass_functional: f64,
}

/// Folds trajectories into an [`EnsembleSummary`].
#[derive(Clone, Debug)]
pub struct EnsembleAccumulator {
    n: u64,
    truncation: usize,
    times: Vec<f64>,
    reference: Vec<DensityVector>,
    pairs: Vec<(usize, usize)>,
    replicas: usize,
    pi: Vec<Vec<Moments>>,
    xi: Vec<Vec<Moments>>,
    martingale: Vec<Vec<Moments>>,
    qv: Vec<Vec<Moments>>,
    moments: Vec<[Moments; 4]>,
    xi_l1_sq: Vec<Moments>,
    xi_l11: Vec<Moments>,
    xi_tail: Vec<Moments>,
    lln_error: Vec<Moments>,
    co: Vec<Vec<CoMoment>>,
    max_mass_defect: u128,
    max_mass_functional: f64,
    xi_buf: Vec<f64>,
}

impl EnsembleAccumulator {
    /// `reference[i]` is the deterministic density at `times[i]`; fluctuations
    /// are measured against it.
    pub fn new(
        n: u64,
        times: Vec<f64>,
        reference: Vec<DensityVector>,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self, AnalysisError> {
        if times.len() != reference.len() {
            return Err(AnalysisError::Invalid(format!(
                "{} grid times but {} reference densities",
                times.len(),
                reference.len()
            )));
        }
        let truncation = reference.first().map_or(0, |r| r.truncation());
        if reference.iter().any(|r| r.truncation() != truncation) {
            return Err(AnalysisError::Invalid("reference truncations differ".into()));
        }
        for &(a, b) in &pairs {
            if a == 0 || b == 0 || a > truncation || b > truncation {
                return Err(AnalysisError::Invalid(format!(
                    "covariance pair ({a}, {b}) outside 1..={truncation}"
                )));
            }
        }
        let g = times.len();
        let grid = || vec![vec![Moments::default(); truncation]; g];
        Ok(EnsembleAccumulator {
            n,
            truncation,
            reference,
            replicas: 0,
            pi: grid(),
            xi: grid(),
            martingale: grid(),
            qv: grid(),
            moments: vec![[Moments::default(); 4]; g],
            xi_l1_sq: vec![Moments::default(); g],
            xi_l11: vec![Moments::default(); g],
            xi_tail: vec![Moments::default(); g],
            lln_error: vec![Moments::default(); g],
            co: vec![vec![CoMoment::default(); g]; pairs.len()],
            pairs,
            times,
            max_mass_defect: 0,
            max_mass_functional: 0.0,
            xi_buf: vec![0.0; truncation],
        })
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn push(&mut self, traj: &Trajectory) -> Result<(), AnalysisError> {
        let index = traj.replica as usize;
        let bad = |reason: String| Err(AnalysisError::Inconsistent { index, reason });
        if traj.n != self.n {
            return bad(format!("n = {} but the ensemble has n = {}", traj.n, self.n));
        }
        if traj.truncation != self.truncation {
            return bad(format!("truncation {} vs {}", traj.truncation, self.truncation));
        }
        if traj.snapshots.len() != self.times.len() {
            return bad(format!(
                "{} snapshots vs {} grid times",
                traj.snapshots.len(),
                self.times.len()
            ));
        }
        let sqrt_n = (self.n as f64).sqrt();
        for (i, snap) in traj.snapshots.iter().enumerate() {
            if (snap.t - self.times[i]).abs() > 1e-12 * self.times[i].abs().max(1.0) {
                return bad(format!("snapshot {i} at t = {} vs grid {}", snap.t, self.times[i]));
            }
            let u = &self.reference[i];
            let pi = snap.density.values();
            for l in 0..self.truncation {
                let x = sqrt_n * (pi[l] - u.values()[l]);
                self.xi_buf[l] = x;
                self.pi[i][l].push(pi[l]);
                self.xi[i][l].push(x);
                self.martingale[i][l].push(snap.martingale[l]);
                self.qv[i][l].push(snap.qv_integral[l]);
            }
            for (p, m) in self.moments[i].iter_mut().enumerate() {
                m.push(snap.moments[p]);
            }
            let l1 = norm_l1(&self.xi_buf);
            self.xi_l1_sq[i].push(l1 * l1);
            self.xi_l11[i].push(norm_l1_weighted(&self.xi_buf));
            // leaked mass means the same for histograms and solves: mass past
            // L never returns, whereas solver leaked_number counts crossings
            let tail = (snap.density.leaked_mass() - u.leaked_mass()).abs();
            self.xi_tail[i].push(sqrt_n * tail);
            self.lln_error[i].push(l1 / sqrt_n);
            for (c, &(a, b)) in self.co.iter_mut().zip(&self.pairs) {
                c[i].push(self.xi_buf[a - 1], self.xi_buf[b - 1]);
            }
            let defect = snap.mass_defect.unsigned_abs();
            self.max_mass_defect = self.max_mass_defect.max(defect);
            // Σ l ξ(l) over the full histogram is √n (Σ l N_l − n) / n
            let functional = sqrt_n * snap.mass_defect as f64 / self.n as f64;
            self.max_mass_functional = self.max_mass_functional.max(functional.abs());
        }
        self.replicas += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<EnsembleSummary, AnalysisError> {
        if self.replicas == 0 {
            return Err(AnalysisError::Empty);
        }
        let stats = |g: &Vec<Vec<Moments>>| -> Vec<Vec<Stat>> {
            g.iter().map(|row| row.iter().map(Moments::stat).collect()).collect()
        };
        let flat = |g: &Vec<Moments>| -> Vec<Stat> { g.iter().map(Moments::stat).collect() };
        Ok(EnsembleSummary {
            replicas: self.replicas,
            n: self.n,
            truncation: self.truncation,
            pi: stats(&self.pi),
            xi: stats(&self.xi),
            martingale: stats(&self.martingale),
            qv: stats(&self.qv),
            moments: self
                .moments
                .iter()
                .map(|m| [m[0].stat(), m[1].stat(), m[2].stat(), m[3].stat()])
                .collect(),
            xi_l1_sq: flat(&self.xi_l1_sq),
            xi_l11: flat(&self.xi_l11),
            xi_tail: flat(&self.xi_tail),
            lln_error: flat(&self.lln_error),
            covariances: self
                .pairs
                .iter()
                .zip(&self.co)
                .map(|(&(a, b), c)| PairCovariance {
                    a,
                    b,
                    covariance: c.iter().map(CoMoment::covariance).collect(),
                })
                .collect(),
            max_mass_defect: self.max_mass_defect,
            max_mass_functional: self.max_mass_functional,
            times: self.times,
        })
    }
}

/// Reduces trajectories given in replica-index order.
pub fn reduce<'a, I>(
    trajectories: I,
    times: Vec<f64>,
    reference: Vec<DensityVector>,
    n: u64,
) -> Result<EnsembleSummary, AnalysisError>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let mut acc = EnsembleAccumulator::new(n, times, reference, Vec::new())?;
    for t in trajectories {
        acc.push(t)?;
    }
    acc.finish()
}

/// Outcome of one check, with the numbers that decided it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub bound: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, observed: f64, bound: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            observed,
            bound,
            detail: detail.into(),
        }
    }

    /// Passes when `observed <= bound`.
    pub fn at_most(name: impl Into<String>, observed: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self::new(name, observed <= bound, observed, bound, detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report {
            title: title.into(),
            checks: Vec::new(),
        }
    }

    pub fn push(&mut self, c: CheckResult) {
        self.checks.push(c);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// `C(p) = (2^p − 2)/(p − 1)`.
pub fn moment_constant(p: u32) -> f64 {
    assert!(p >= 2);
    ((1u64 << p) - 2) as f64 / (p - 1) as f64
}

/// `(1 + C(p) ‖K‖∞ t)^{p−1}`, a bound on the expected `p`-th moment.
pub fn moment_bound(p: u32, sup: f64, t: f64) -> f64 {
    (1.0 + moment_constant(p) * sup * t).powi(p as i32 - 1)
}

/// One check per `p ∈ {2, 3, 4}`, each reported at its worst grid time.
pub fn check_moment_bounds(s: &EnsembleSummary, k: &Kernel) -> Report {
    let mut report = Report::new("moment bounds");
    let sup = k.sup_norm();
    for p in 2..=4u32 {
        let mut worst: Option<(f64, f64, f64)> = None;
        for (i, &t) in s.times.iter().enumerate() {
            let st = s.moments[i][p as usize - 1];
            let allowed = moment_bound(p, sup, t) + 3.0 * st.se;
            let excess = st.mean - allowed;
            if worst.is_none_or(|(_, e, _)| excess > e) {
                worst = Some((t, excess, allowed));
            }
        }
        let Some((t, excess, allowed)) = worst else {
            continue;
        };
        report.push(CheckResult::at_most(
            format!("M{p}(t) <= (1 + {:.4} |K| t)^{} + 3 SE", moment_constant(p), p - 1),
            allowed + excess,
            allowed,
            format!("worst grid time t = {t}"),
        ));
    }
    report
}

/// Tolerances of [`clt_report`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltTolerances {
    /// Allowed relative deviation of empirical from predicted variance.
    pub variance_rel: f64,
    /// Standard errors allowed for the mean.
    pub mean_se: f64,
    /// Multiplier on the asymptotic standard errors of skewness and kurtosis.
    pub shape_sigmas: f64,
}

impl Default for CltTolerances {
    fn default() -> Self {
        CltTolerances {
            variance_rel: 0.15,
            mean_se: 3.0,
            shape_sigmas: 5.0,
        }
    }
}

/// Compares fluctuation statistics with predicted covariances at every grid
/// time where a prediction is supplied, for each mass in `ells`.
pub fn clt_report(s: &EnsembleSummary, predicted: &[CovarianceMatrix], ells: &[usize], tol: CltTolerances) -> Report {
    let mut report = Report::new("fluctuation CLT");
    let r = s.replicas as f64;
    let skew_bound = tol.shape_sigmas * (6.0 / r).sqrt();
    let kurt_bound = tol.shape_sigmas * (24.0 / r).sqrt();
    for cov in predicted {
        let Some(i) = s
            .times
            .iter()
            .position(|&t| (t - cov.t).abs() <= 1e-12 * t.abs().max(1.0))
        else {
            report.push(CheckResult::new(
                format!("prediction at t = {}", cov.t),
                false,
                cov.t,
                f64::NAN,
                "no matching grid time in the ensemble",
            ));
            continue;
        };
        let t = cov.t;
        for &l in ells {
            if l == 0 || l > s.truncation || l > cov.truncation() {
                report.push(CheckResult::new(
                    format!("xi({l}) at t = {t}"),
                    false,
                    l as f64,
                    s.truncation.min(cov.truncation()) as f64,
                    "mass outside the truncation",
                ));
                continue;
            }
            let st = s.xi[i][l - 1];
            let pred = cov.variance(l);
            report.push(CheckResult::at_most(
                format!("|mean xi({l})| at t = {t}"),
                st.mean.abs(),
                tol.mean_se * st.se,
                format!("{} SE", tol.mean_se),
            ));
            // sampling sd of a variance estimate relative to itself
            let chi = ((st.excess_kurtosis + 2.0).max(0.0) / r).sqrt();
            let (rel, passed) = if pred == 0.0 {
                (if st.variance == 0.0 { 0.0 } else { f64::INFINITY }, st.variance == 0.0)
            } else {
                let rel = (st.variance / pred - 1.0).abs();
                (rel, rel <= tol.variance_rel)
            };
            report.push(CheckResult::new(
                format!("Var xi({l}) at t = {t}"),
                passed,
                rel,
                tol.variance_rel,
                format!(
                    "empirical {:.6e}, predicted {:.6e}, sampling sd of the ratio {:.3}",
                    st.variance, pred, chi
                ),
            ));
            report.push(CheckResult::at_most(
                format!("|skewness xi({l})| at t = {t}"),
                st.skewness.abs(),
                skew_bound,
                format!("{} sqrt(6/R)", tol.shape_sigmas),
            ));
            report.push(CheckResult::at_most(
                format!("|excess kurtosis xi({l})| at t = {t}"),
                st.excess_kurtosis.abs(),
                kurt_bound,
                format!("{} sqrt(24/R)", tol.shape_sigmas),
            ));
        }
        for pc in &s.covariances {
            if pc.a > cov.truncation() || pc.b > cov.truncation() {
                continue;
            }
            let emp = pc.covariance[i];
            let pred = cov.get(pc.a, pc.b);
            let scale = (cov.variance(pc.a) * cov.variance(pc.b)).sqrt();
            let dev = (emp - pred).abs();
            report.push(CheckResult::new(
                format!("Cov xi({}) xi({}) at t = {t}", pc.a, pc.b),
                if scale == 0.0 {
                    emp == 0.0
                } else {
                    dev <= tol.variance_rel * scale
                },
                dev,
                tol.variance_rel * scale,
                format!("empirical {emp:.6e}, predicted {pred:.6e}"),
            ));
        }
    }
    report.push(CheckResult::new(
        "sum_l l xi(l) == 0 on full histograms",
        s.max_mass_functional == 0.0,
        s.max_mass_functional,
        0.0,
        "exact",
    ));
    report
}

/// `E‖ξ‖₁²` and `E Σ l|ξ(l)|` stay bounded over the grid and change by at most
/// `factor` between consecutive ensembles, which should be ordered by `n`.
pub fn check_apriori_fluctuation_bounds(summaries: &[EnsembleSummary], factor: f64) -> Report {
    let mut report = Report::new("a priori fluctuation bounds");
    let sup = |v: &[Stat]| v.iter().map(|s| s.mean).fold(0.0, f64::max);
    type Curve = fn(&EnsembleSummary) -> &[Stat];
    let curves: [(&str, Curve); 2] = [("E|xi|_1^2", |s| &s.xi_l1_sq), ("E|xi|_{1,1}", |s| &s.xi_l11)];
    for (name, curve) in curves {
        let sups: Vec<f64> = summaries.iter().map(|s| sup(curve(s))).collect();
        for (s, &m) in summaries.iter().zip(&sups) {
            report.push(CheckResult::new(
                format!("{name} bounded over the grid, n = {}", s.n),
                m.is_finite(),
                m,
                f64::INFINITY,
                "supremum over grid times",
            ));
        }
        for (w, pair) in sups.windows(2).zip(summaries.windows(2)) {
            let (a, b) = (w[0], w[1]);
            let ratio = if a == 0.0 && b == 0.0 { 1.0 } else { (a / b).max(b / a) };
            report.push(CheckResult::at_most(
                format!("{name} stable from n = {} to n = {}", pair[0].n, pair[1].n),
                ratio,
                factor,
                format!("suprema {a:.4e} and {b:.4e}"),
            ));
        }
    }
    report
}

/// Law-of-large-numbers scaling at grid index `time_index`: the mean
/// `‖π − u‖₁` decreases strictly along the ensembles, which should be ordered
/// by increasing `n`, and `√n` times it varies by less than `factor`.
pub fn check_lln_scaling(summaries: &[EnsembleSummary], time_index: usize, factor: f64) -> Report {
    let mut report = Report::new("LLN scaling");
    let errs: Vec<(u64, f64)> = summaries.iter().map(|s| (s.n, s.lln_error[time_index].mean)).collect();
    for w in errs.windows(2) {
        report.push(CheckResult::new(
            format!("err(n = {}) > err(n = {})", w[0].0, w[1].0),
            w[0].1 > w[1].1,
            w[1].1,
            w[0].1,
            "mean l1 distance to the deterministic density",
        ));
    }
    let scaled: Vec<f64> = errs.iter().map(|&(n, e)| (n as f64).sqrt() * e).collect();
    let hi = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    report.push(CheckResult::new(
        "sqrt(n) err(n) spread",
        hi / lo < factor,
        hi / lo,
        factor,
        format!("sqrt(n) err(n) = {scaled:?}"),
    ));
    report
}
