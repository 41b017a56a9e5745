//! The acceptance suite as library code, shared by the `acceptance` test
//! target and the `validate` command.
//!
//! Every criterion returns a [`Criterion`] holding one [`CheckResult`] per
//! comparison, so a failure always names the exact quantity, its observed
//! value and the bound it broke.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    check_lln_scaling, check_moment_bounds, clt_report, CheckResult, CltTolerances, EnsembleSummary, Moments,
};
use crate::ensemble::{for_each_replica, summarize};
use crate::error::{ConfigError, EnsembleError};
use crate::fluctuation::{apply_a, apply_a_star, q_form, FluctuationModel};
use crate::kernel::{Kernel, KernelDecl};
use crate::oracle::{build_chain, Observable};
use crate::simulator::{qv_integrand, SimConfig, Strategy};
use crate::smoluchowski::{apply_k, apply_r, constant_kernel_exact, solve, SolverConfig};
use crate::state::{norm_l1, norm_sup, DensityVector, MassHistogram};

/// Pass thresholds. Defaults are the acceptance values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub oracle_se: f64,
    pub lln_spread: f64,
    pub solver_abs: f64,
    pub order_gain: f64,
    pub clt: CltTolerances,
    pub route_rel: f64,
    pub martingale_se: f64,
    pub martingale_rel: f64,
    /// Relative slack for the randomized inequality checks, to absorb roundoff.
    pub property_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            oracle_se: 3.0,
            lln_spread: 3.0,
            solver_abs: 1e-8,
            order_gain: 8.0,
            clt: CltTolerances::default(),
            route_rel: 1e-5,
            martingale_se: 3.0,
            martingale_rel: 0.10,
            property_rel: 1e-12,
        }
    }
}

/// Problem sizes. Defaults are the acceptance values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sizes {
    pub oracle_n: Vec<u64>,
    pub oracle_times: Vec<f64>,
    pub oracle_replicas: u64,
    pub lln_n: Vec<u64>,
    pub lln_replicas: u64,
    pub lln_horizon: f64,
    pub truncation: usize,
    pub solver_times: Vec<f64>,
    pub solver_dt: f64,
    pub clt_n: u64,
    pub clt_replicas: u64,
    pub clt_time: f64,
    pub clt_ells: Vec<usize>,
    pub route_time: f64,
    /// Truncation for the route cross-check of kernels other than the first.
    pub route_truncation_other: usize,
    pub fluctuation_dt: f64,
    pub martingale_n: u64,
    pub martingale_replicas: u64,
    pub martingale_times: Vec<f64>,
    pub martingale_ells: Vec<usize>,
    pub property_cases: usize,
    pub moment_n: u64,
    pub moment_replicas: u64,
    pub moment_horizon: f64,
    pub moment_points: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Sizes {
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
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    /// The first kernel must be constant: several checks need its closed form.
    pub kernels: Vec<KernelDecl>,
    pub sizes: Sizes,
    pub tolerances: Tolerances,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            seed: 20_240_601,
            threads: None,
            kernels: vec![KernelDecl::constant(1.0), KernelDecl::capped_brownian(1.0, 10.0)],
            sizes: Sizes::default(),
            tolerances: Tolerances::default(),
        }
    }
}

impl ValidationConfig {
    pub fn primary(&self) -> Result<(Kernel, f64), ConfigError> {
        let decl = self
            .kernels
            .first()
            .ok_or_else(|| ConfigError::Invalid("validation needs at least one kernel".into()))?;
        let KernelDecl::Constant { c } = *decl else {
            return Err(ConfigError::Invalid(
                "the first validation kernel must be constant (closed-form reference)".into(),
            ));
        };
        Ok((Kernel::new(decl.clone())?, c))
    }

    pub fn kernels(&self) -> Result<Vec<Kernel>, ConfigError> {
        self.kernels
            .iter()
            .map(|d| Kernel::new(d.clone()).map_err(Into::into))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.primary()?;
        self.kernels()?;
        let s = &self.sizes;
        let positive = [
            ("oracle_replicas", s.oracle_replicas),
            ("lln_replicas", s.lln_replicas),
            ("clt_replicas", s.clt_replicas),
            ("martingale_replicas", s.martingale_replicas),
            ("moment_replicas", s.moment_replicas),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("sizes.{name} must be at least 1")));
            }
        }
        if s.truncation == 0 || s.route_truncation_other == 0 {
            return Err(ConfigError::Invalid("truncations must be at least 1".into()));
        }
        if s.oracle_n.iter().any(|&n| n == 0 || n > crate::oracle::MAX_N) {
            return Err(ConfigError::Invalid(format!(
                "sizes.oracle_n entries must lie in 1..={}",
                crate::oracle::MAX_N
            )));
        }
        for &l in s.clt_ells.iter().chain(&s.martingale_ells) {
            if l == 0 || l > s.truncation {
                return Err(ConfigError::Invalid(format!("mass {l} outside 1..={}", s.truncation)));
            }
        }
        if !(s.solver_dt > 0.0 && s.fluctuation_dt > 0.0) {
            return Err(ConfigError::Invalid("step sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u32,
    pub title: String,
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl Criterion {
    fn new(id: u32, title: &str) -> Self {
        Criterion {
            id,
            title: title.into(),
            checks: Vec::new(),
            seconds: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line: id, verdict, pass count, runtime, first failure if any.
    pub fn summary_line(&self) -> String {
        let ok = self.checks.iter().filter(|c| c.passed).count();
        let mut line = format!(
            "criterion {} [{}] {}: {}/{} checks passed in {:.1}s",
            self.id,
            if self.passed() { "PASS" } else { "FAIL" },
            self.title,
            ok,
            self.checks.len(),
            self.seconds
        );
        if let Some(f) = self.failures().next() {
            line.push_str(&format!(
                "; first failure: {} (observed {:.6e}, bound {:.6e}; {})",
                f.name, f.observed, f.bound, f.detail
            ));
        }
        line
    }

    fn timed(mut self, start: Instant, limit: f64) -> Self {
        self.seconds = start.elapsed().as_secs_f64();
        self.checks.push(CheckResult::at_most(
            "runtime in seconds",
            self.seconds,
            limit,
            "wall clock",
        ));
        self
    }

    fn extend(&mut self, checks: impl IntoIterator<Item = CheckResult>) {
        self.checks.extend(checks);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config: ValidationConfig,
    pub criteria: Vec<Criterion>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(Criterion::passed)
    }
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::Direct => "direct",
        Strategy::Thinning => "thinning",
    }
}

fn kernel_name(k: &Kernel) -> String {
    match k.decl() {
        KernelDecl::Constant { c } => format!("constant({c})"),
        KernelDecl::CappedBrownian { c0, cap } => format!("capped-brownian({c0}, {cap})"),
        KernelDecl::LookupTable { table, .. } => format!("table({}x{})", table.len(), table.len()),
    }
}

/// Simulator ensemble means of `N_l(t)` against the exact chain, for every
/// kernel, `n`, time, mass and both samplers.
pub fn exactness_vs_oracle(cfg: &ValidationConfig) -> Result<Criterion, EnsembleError> {
    let start = Instant::now();
    let mut out = Criterion::new(1, "simulator means vs exact chain");
    let s = &cfg.sizes;
    let horizon = s.oracle_times.iter().copied().fold(0.0, f64::max);
    let mut tag = 0;
    for k in cfg.kernels()? {
        for &n in &s.oracle_n {
            let chain = build_chain(n, &k).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let laws: Vec<Vec<f64>> = s.oracle_times.iter().map(|&t| chain.distribution(t)).collect();
            for strategy in [Strategy::Direct, Strategy::Thinning] {
                tag += 1;
                let sim =
                    SimConfig::new(n, k.clone(), horizon, s.oracle_times.clone(), n as usize).with_strategy(strategy);
                let mut acc = vec![vec![Moments::default(); n as usize]; s.oracle_times.len()];
                for_each_replica::<EnsembleError, _>(
                    &sim,
                    s.oracle_replicas,
                    sub_seed(cfg.seed, 100 + tag),
                    cfg.threads,
                    |traj| {
                        for (row, snap) in acc.iter_mut().zip(&traj.snapshots) {
                            for (m, &p) in row.iter_mut().zip(snap.density.values()) {
                                m.push((p * n as f64).round());
                            }
                        }
                        Ok(())
                    },
                )?;
                for (i, &t) in s.oracle_times.iter().enumerate() {
                    for l in 1..=n {
                        let exact = chain.expectation(&laws[i], Observable::Count { l });
                        let m = acc[i][l as usize - 1];
                        out.checks.push(CheckResult::at_most(
                            format!(
                                "E N_{l}({t}), n = {n}, {}, {}",
                                kernel_name(&k),
                                strategy_name(strategy)
                            ),
                            (m.mean() - exact).abs(),
                            cfg.tolerances.oracle_se * m.standard_error() + 1e-10,
                            format!(
                                "empirical {:.6}, exact {:.6}, SE {:.2e}",
                                m.mean(),
                                exact,
                                m.standard_error()
                            ),
                        ));
                    }
                }
            }
        }
    }
    Ok(out.timed(start, 60.0))
}

fn summary(
    cfg: &ValidationConfig,
    n: u64,
    grid: Vec<f64>,
    replicas: u64,
    tag: u64,
    pairs: Vec<(usize, usize)>,
) -> Result<EnsembleSummary, EnsembleError> {
    let (k, _) = cfg.primary()?;
    let horizon = grid.last().copied().unwrap_or(0.0);
    let sim = SimConfig::new(n, k, horizon, grid, cfg.sizes.truncation);
    summarize(&sim, replicas, sub_seed(cfg.seed, tag), cfg.threads, pairs)
}

/// Mean `‖π_T − u(T)‖₁` decreases in `n` at the `n^{-1/2}` rate.
pub fn hydrodynamic_limit(cfg: &ValidationConfig) -> Result<(Criterion, Vec<EnsembleSummary>), EnsembleError> {
    let start = Instant::now();
    let mut out = Criterion::new(2, "hydrodynamic limit");
    let s = &cfg.sizes;
    let summaries = s
        .lln_n
        .iter()
        .map(|&n| summary(cfg, n, vec![s.lln_horizon], s.lln_replicas, 200 + n, Vec::new()))
        .collect::<Result<Vec<_>, _>>()?;
    let errs: Vec<f64> = summaries.iter().map(|x| x.lln_error[0].mean).collect();
    if errs.iter().all(|&e| e == 0.0) {
        out.checks.push(CheckResult::new(
            "err(n) identically zero",
            true,
            0.0,
            0.0,
            "deterministic dynamics",
        ));
    } else {
        out.extend(check_lln_scaling(&summaries, 0, cfg.tolerances.lln_spread).checks);
    }
    Ok((out.timed(start, 300.0), summaries))
}

/// Max-abs error of the fixed-step solver against the closed form, over the
/// configured times and masses `1..=L`.
pub fn solver_error(c: f64, truncation: usize, times: &[f64], dt: f64) -> Result<f64, EnsembleError> {
    let k = Kernel::constant(c).map_err(ConfigError::from)?;
    let traj = solve(
        &k,
        &DensityVector::monodisperse(truncation),
        &SolverConfig::fixed(truncation, dt, times.to_vec()),
    )?;
    let mut err: f64 = 0.0;
    for (t, u) in traj.times.iter().zip(&traj.states) {
        for (l, &x) in (1..).zip(u.values()) {
            err = err.max((x - constant_kernel_exact(l, *t, c)).abs());
        }
    }
    Ok(err)
}

fn order_check(name: &str, coarse: f64, fine: f64, gain: f64) -> CheckResult {
    let (observed, passed) = if coarse == 0.0 && fine == 0.0 {
        (f64::INFINITY, true)
    } else {
        let g = coarse / fine;
        (g, g >= gain)
    };
    CheckResult::new(
        name,
        passed,
        observed,
        gain,
        format!("errors {coarse:.3e} and {fine:.3e}"),
    )
}

/// Solver accuracy at the configured step and fourth-order convergence.
pub fn solver_correctness(cfg: &ValidationConfig) -> Result<Criterion, EnsembleError> {
    let start = Instant::now();
    let mut out = Criterion::new(3, "solver vs closed form");
    let (_, c) = cfg.primary()?;
    let s = &cfg.sizes;
    let tol = &cfg.tolerances;
    let coarse = solver_error(c, s.truncation, &s.solver_times, s.solver_dt)?;
    let fine = solver_error(c, s.truncation, &s.solver_times, s.solver_dt / 2.0)?;
    out.checks.push(CheckResult::at_most(
        format!("max |u - exact| at dt = {}", s.solver_dt),
        coarse,
        tol.solver_abs,
        format!("L = {}, times {:?}", s.truncation, s.solver_times),
    ));
    out.checks.push(order_check(
        "error reduction when halving dt",
        coarse,
        fine,
        tol.order_gain,
    ));
    // Past t = 1 the loss sum truncated at L leaves a step-independent error
    // that can mask the fourth-order term; this check isolates the integrator.
    let early: Vec<f64> = s.solver_times.iter().copied().filter(|&t| t <= 1.0).collect();
    if !early.is_empty() {
        let coarse = solver_error(c, s.truncation, &early, s.solver_dt)?;
        let fine = solver_error(c, s.truncation, &early, s.solver_dt / 2.0)?;
        out.checks.push(order_check(
            &format!("error reduction when halving dt, times {early:?}"),
            coarse,
            fine,
            tol.order_gain,
        ));
    }
    Ok(out.timed(start, 60.0))
}

/// Fluctuation variance, mean and shape against the Lyapunov prediction.
pub fn clt_variance(cfg: &ValidationConfig) -> Result<Criterion, EnsembleError> {
    let start = Instant::now();
    let mut out = Criterion::new(4, "fluctuation variance vs Lyapunov");
    let s = &cfg.sizes;
    let (k, _) = cfg.primary()?;
    let model = FluctuationModel::new(k, s.truncation, s.clt_time, s.fluctuation_dt)?;
    let predicted = model.covariance(&[s.clt_time])?;
    let sum = summary(cfg, s.clt_n, vec![s.clt_time], s.clt_replicas, 400, Vec::new())?;
    out.extend(clt_report(&sum, &predicted, &s.clt_ells, cfg.tolerances.clt).checks);
    Ok(out.timed(start, 600.0))
}

/// Dual-route variance against `gᵀ Σ g` from the Lyapunov route.
pub fn route_cross_check(cfg: &ValidationConfig) -> Result<Criterion, EnsembleError> {
    let start = Instant::now();
    let mut out = Criterion::new(5, "dual route vs Lyapunov route");
    let s = &cfg.sizes;
    let t = s.route_time;
    for (i, k) in cfg.kernels()?.into_iter().enumerate() {
        let truncation = if i == 0 { s.truncation } else { s.route_truncation_other };
        let name = kernel_name(&k);
        let model = FluctuationModel::new(k, truncation, t, s.fluctuation_dt)?;
        let sigma = model.covariance(&[t])?.pop().expect("one grid time");
        let mut functionals: Vec<(String, Vec<f64>)> = (1..=3)
            .map(|l| {
                let mut g = vec![0.0; l];
                g[l - 1] = 1.0;
                (format!("1{{l = {l}}}"), g)
            })
            .collect();
        functionals.push(("1{l <= 5}".into(), vec![1.0; 5]));
        for (label, g) in functionals {
            let lyapunov = sigma.quadratic(&g);
            let dual = model.dual(&g, t)?.variance;
            let rel = if lyapunov == 0.0 && dual == 0.0 {
                0.0
            } else {
                (dual - lyapunov).abs() / lyapunov.abs().max(dual.abs())
            };
            out.checks.push(CheckResult::at_most(
                format!("g = {label}, {name}"),
                rel,
                cfg.tolerances.route_rel,
                format!("dual {dual:.10e}, Lyapunov {lyapunov:.10e}, L = {truncation}"),
            ));
        }
    }
    Ok(out.timed(start, 60.0))
}

/// The Dynkin martingale is centred and its variance matches the integrated
/// carré du champ.
pub fn martingale_diagnostics(cfg: &ValidationConfig) -> Result<(Criterion, EnsembleSummary), EnsembleError> {
    let start = Instant::now();
    let mut out = Criterion::new(6, "martingale and quadratic variation");
    let s = &cfg.sizes;
    let tol = &cfg.tolerances;
    let sum = summary(
        cfg,
        s.martingale_n,
        s.martingale_times.clone(),
        s.martingale_replicas,
        600,
        Vec::new(),
    )?;
    for (i, &t) in sum.times.iter().enumerate() {
        for &l in &s.martingale_ells {
            let m = sum.martingale[i][l - 1];
            let qv = sum.qv[i][l - 1].mean;
            out.checks.push(CheckResult::at_most(
                format!("|mean M({l})| at t = {t}"),
                m.mean.abs(),
                tol.martingale_se * m.se,
                format!("{} SE", tol.martingale_se),
            ));
            let (rel, passed) = if qv == 0.0 {
                (0.0, m.variance == 0.0)
            } else {
                let r = (m.variance / qv - 1.0).abs();
                (r, r <= tol.martingale_rel)
            };
            out.checks.push(CheckResult::new(
                format!("Var M({l}) vs E int n Gamma at t = {t}"),
                passed,
                rel,
                tol.martingale_rel,
                format!("variance {:.6e}, integrated qv {:.6e}", m.variance, qv),
            ));
        }
    }
    Ok((out.timed(start, 300.0), sum))
}

fn random_kernel(rng: &mut ChaCha8Rng) -> Kernel {
    match rng.random_range(0..3) {
        0 => Kernel::constant(rng.random_range(0.0..5.0)).unwrap(),
        1 => Kernel::capped_brownian(rng.random_range(0.0..3.0), rng.random_range(0.5..20.0)).unwrap(),
        _ => {
            let size = rng.random_range(1..12);
            let mut table = vec![vec![0.0; size]; size];
            for i in 0..size {
                for j in i..size {
                    let v = rng.random_range(0.0..4.0);
                    table[i][j] = v;
                    table[j][i] = v;
                }
            }
            let default = rng.random_range(0.0..4.0);
            Kernel::new(KernelDecl::LookupTable { table, default }).unwrap()
        }
    }
}

/// Signed vector supported on `1..=support`, zero-padded to `len`.
fn random_signed(rng: &mut ChaCha8Rng, support: usize, len: usize) -> Vec<f64> {
    let scale = rng.random_range(0.01..10.0);
    let mut v: Vec<f64> = (0..support).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    v.resize(len, 0.0);
    v
}

/// Subprobability vector supported on `1..=support`, zero-padded to `len`.
fn random_subprobability(rng: &mut ChaCha8Rng, support: usize, len: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..support).map(|_| rng.random::<f64>()).collect();
    let total: f64 = v.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let mass = rng.random_range(0.0..=1.0);
    v.iter_mut().for_each(|x| *x *= mass / total);
    v.resize(len, 0.0);
    v
}

/// A state of the chain: half the time a few merges away from monodisperse,
/// otherwise a random partition of `n`.
fn random_histogram(rng: &mut ChaCha8Rng) -> MassHistogram {
    let n = rng.random_range(2..3_000u64);
    let mut h = MassHistogram::monodisperse(n);
    let merges = if rng.random::<bool>() {
        rng.random_range(0..4.min(n - 1))
    } else {
        rng.random_range(0..n - 1)
    };
    for _ in 0..merges {
        let parts: Vec<u64> = h
            .iter()
            .flat_map(|(l, c)| std::iter::repeat_n(l, c.min(2) as usize))
            .collect();
        let a = parts[rng.random_range(0..parts.len())];
        let mut b = parts[rng.random_range(0..parts.len())];
        if a == b && h.count(a) < 2 {
            if let Some(&other) = parts.iter().find(|&&p| p != a) {
                b = other;
            } else {
                break;
            }
        }
        h.merge(a, b);
    }
    h
}

struct Tally {
    name: String,
    worst: f64,
    violations: usize,
    cases: usize,
    bound_label: String,
}

impl Tally {
    fn new(name: &str, bound_label: &str) -> Self {
        Tally {
            name: name.into(),
            worst: 0.0,
            violations: 0,
            cases: 0,
            bound_label: bound_label.into(),
        }
    }

    /// Records `lhs <= rhs`, allowing relative slack `rel`.
    fn record(&mut self, lhs: f64, rhs: f64, rel: f64) {
        self.cases += 1;
        let ratio = if rhs == 0.0 {
            if lhs == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            lhs / rhs
        };
        self.worst = self.worst.max(ratio);
        if lhs > rhs * (1.0 + rel) + f64::MIN_POSITIVE {
            self.violations += 1;
        }
    }

    fn result(self) -> CheckResult {
        CheckResult::new(
            self.name,
            self.violations == 0,
            self.worst,
            1.0,
            format!(
                "largest lhs / ({}) over {} cases; {} violations",
                self.bound_label, self.cases, self.violations
            ),
        )
    }
}

/// Randomized checks of the operator bounds and identities. Cases cycle
/// through the configured kernels with random vectors and states.
pub fn displayed_bounds(cfg: &ValidationConfig) -> Result<Criterion, EnsembleError> {
    let start = Instant::now();
    let kernels = cfg.kernels()?;
    let mut out = Criterion::new(7, "operator bounds and identities");
    let rel = cfg.tolerances.property_rel;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 700));
    let mut k_bound = Tally::new("|Ku|_1 <= 3 |K| |u|_1^2", "3 |K| |u|_1^2");
    let mut k_lipschitz = Tally::new(
        "|Ku - Kv|_1 <= 3 |K| (|u|_1 + |v|_1) |u - v|_1",
        "3 |K| (|u|_1 + |v|_1) |u - v|_1",
    );
    let mut a_bound = Tally::new("|A(u,v)|_1 <= 6 |K| |u|_1 |v|_1", "6 |K| |u|_1 |v|_1");
    let mut q_bound = Tally::new("|Q(u;f)| <= 9 |K| |u|_1^2 |f|_inf^2", "9 |K| |u|_1^2 |f|_inf^2");
    let mut r_bound = Tally::new("|Ru|_1 <= 3 |K| |u|_1", "3 |K| |u|_1");
    let mut gamma_bound = Tally::new("n Gamma_n pi(l) <= 3 |K|", "3 |K|");
    let mut gamma_sharp = Tally::new("n Gamma_n pi(l) <= 4 |K|", "4 |K|");
    let mut identity = Tally::new("A(u,u) = 2 Ku", "1e-12 (1 + |K| |u|_1^2)");
    let mut duality = Tally::new("<A(u,v), f> = <v, A*(u,f)>", "1e-12 (1 + |K| |u|_1 |v|_1 |f|_inf)");
    for case in 0..cfg.sizes.property_cases {
        let k = &kernels[case % kernels.len()];
        let sup = k.sup_norm();
        let m = rng.random_range(1..24);
        let len = 2 * m;
        let u = random_signed(&mut rng, m, len);
        let v = random_signed(&mut rng, m, len);
        let (nu, nv) = (norm_l1(&u), norm_l1(&v));

        let ku = apply_k(k, &u);
        k_bound.record(norm_l1(&ku), 3.0 * sup * nu * nu, rel);

        let kv = apply_k(k, &v);
        let diff: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let dk: Vec<f64> = ku.iter().zip(&kv).map(|(a, b)| a - b).collect();
        k_lipschitz.record(norm_l1(&dk), 3.0 * sup * (nu + nv) * norm_l1(&diff), rel);

        let a = apply_a(k, &u, &v);
        a_bound.record(norm_l1(&a), 6.0 * sup * nu * nv, rel);

        let f: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let fs = norm_sup(&f);
        q_bound.record(q_form(k, &u, &f).abs(), 9.0 * sup * nu * nu * fs * fs, rel);

        let p = random_subprobability(&mut rng, m, len);
        r_bound.record(norm_l1(&apply_r(k, &p)), 3.0 * sup * norm_l1(&p), rel);

        let auu = apply_a(k, &u, &u);
        let gap = auu.iter().zip(&ku).fold(0.0f64, |g, (x, y)| g.max((x - 2.0 * y).abs()));
        identity.record(gap, 1e-12 * (1.0 + sup * nu * nu), 0.0);

        let lhs: f64 = a.iter().zip(&f).map(|(x, y)| x * y).sum();
        let rhs: f64 = v.iter().zip(apply_a_star(k, &u, &f)).map(|(x, y)| x * y).sum();
        duality.record((lhs - rhs).abs(), 1e-12 * (1.0 + sup * nu * nv * fs), 0.0);

        let h = random_histogram(&mut rng);
        let qv = qv_integrand(&h, k, h.n() as usize);
        let worst = qv.iter().copied().fold(0.0, f64::max);
        gamma_bound.record(worst, 3.0 * sup, rel);
        gamma_sharp.record(worst, 4.0 * sup, rel);
    }
    out.extend(
        [
            k_bound,
            k_lipschitz,
            a_bound,
            q_bound,
            r_bound,
            gamma_bound,
            gamma_sharp,
            identity,
            duality,
        ]
        .into_iter()
        .map(Tally::result),
    );
    Ok(out.timed(start, 60.0))
}

/// Empirical moments stay below their a priori bounds at every grid time.
pub fn moment_bounds(cfg: &ValidationConfig) -> Result<(Criterion, EnsembleSummary), EnsembleError> {
    let start = Instant::now();
    let mut out = Criterion::new(8, "moment bounds");
    let s = &cfg.sizes;
    let (k, _) = cfg.primary()?;
    let grid: Vec<f64> = (1..=s.moment_points)
        .map(|i| s.moment_horizon * i as f64 / s.moment_points as f64)
        .collect();
    let sum = summary(cfg, s.moment_n, grid, s.moment_replicas, 800, Vec::new())?;
    out.extend(check_moment_bounds(&sum, &k).checks);
    Ok((out.timed(start, 120.0), sum))
}

/// Exact conservation: integer mass after every event (enforced by a hard
/// assertion in the simulator), the mass functional of the fluctuation field,
/// and the null space of the noise form.
pub fn conservation(cfg: &ValidationConfig, ensembles: &[&EnsembleSummary]) -> Result<Criterion, EnsembleError> {
    let start = Instant::now();
    let mut out = Criterion::new(9, "conservation invariants");
    let mut defect = 0u128;
    let mut functional = 0.0f64;
    for s in ensembles {
        defect = defect.max(s.max_mass_defect);
        functional = functional.max(s.max_mass_functional);
    }
    let mut tag = 900;
    for k in cfg.kernels()? {
        for strategy in [Strategy::Direct, Strategy::Thinning] {
            for n in [10u64, 100, 1_000] {
                tag += 1;
                let sim = SimConfig::new(n, k.clone(), 5.0, vec![0.5, 1.0, 2.0, 5.0], 8).with_strategy(strategy);
                for_each_replica::<EnsembleError, _>(&sim, 20, sub_seed(cfg.seed, tag), cfg.threads, |t| {
                    for snap in &t.snapshots {
                        defect = defect.max(snap.mass_defect.unsigned_abs());
                    }
                    let mass: u128 = t.final_histogram.iter().map(|(l, c)| l as u128 * c as u128).sum();
                    defect = defect.max(mass.abs_diff(n as u128));
                    Ok(())
                })?;
            }
        }
    }
    out.checks.push(CheckResult::new(
        "sum_l l N_l == n",
        defect == 0,
        defect as f64,
        0.0,
        "largest defect over every snapshot checked; each event also asserts it",
    ));
    out.checks.push(CheckResult::new(
        "sum_l l xi(l) == 0 on full histograms",
        functional == 0.0,
        functional,
        0.0,
        "largest value over all replicas",
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 999));
    let mut worst = 0.0f64;
    let mut violations = 0;
    for _ in 0..cfg.sizes.property_cases {
        let k = random_kernel(&mut rng);
        let m = rng.random_range(1..24);
        let u = random_signed(&mut rng, m, m);
        let slope = rng.random_range(-5.0..5.0);
        let f: Vec<f64> = (1..=2 * m).map(|l| slope * l as f64).collect();
        let scale = 9.0 * k.sup_norm() * norm_l1(&u).powi(2) * norm_sup(&f).powi(2);
        let q = q_form(&k, &u, &f).abs();
        let r = if scale == 0.0 { q } else { q / scale };
        worst = worst.max(r);
        if r > 1e-12 {
            violations += 1;
        }
    }
    out.checks.push(CheckResult::new(
        "Q(u; linear f) == 0",
        violations == 0,
        worst,
        1e-12,
        format!("largest |Q| relative to its a priori scale; {violations} violations"),
    ));
    Ok(out.timed(start, 60.0))
}

/// Runs every criterion in order.
pub fn run_all(cfg: &ValidationConfig) -> Result<ValidationReport, EnsembleError> {
    cfg.validate()?;
    let c1 = exactness_vs_oracle(cfg)?;
    let (c2, lln) = hydrodynamic_limit(cfg)?;
    let c3 = solver_correctness(cfg)?;
    let c4 = clt_variance(cfg)?;
    let c5 = route_cross_check(cfg)?;
    let (c6, mart) = martingale_diagnostics(cfg)?;
    let c7 = displayed_bounds(cfg)?;
    let (c8, mom) = moment_bounds(cfg)?;
    let mut seen: Vec<&EnsembleSummary> = lln.iter().collect();
    seen.extend([&mart, &mom]);
    let c9 = conservation(cfg, &seen)?;
    Ok(ValidationReport {
        config: cfg.clone(),
        criteria: vec![c1, c2, c3, c4, c5, c6, c7, c8, c9],
    })
}
