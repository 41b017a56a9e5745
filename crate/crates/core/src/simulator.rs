//! Exact simulation of the lumped Marcus–Lushnikov chain.
//!
//! The chain on site configurations is simulated through its mass counts.
//! Two particles of distinct masses `l < m` merge at rate
//! `(2/n) K(l, m) N_l N_m`; two of equal mass at rate `(1/n) K(l, l) N_l (N_l - 1)`.
//!
//! Alongside the state the simulator integrates the exact finite-`n` drift
//! `L_n π(l)` and the scaled carré du champ `n Γ_n π(l)` over time, which gives
//! the Dynkin martingale `M_t(l) = √n (π_t(l) − π_0(l) − ∫ L_n π_s(l) ds)` and
//! its predictable quadratic variation.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::kernel::Kernel;
use crate::rng::{below, exponential, replica_rng, uniform, ReplicaRng};
use crate::state::{histogram_to_density, DensityVector, MassHistogram};

/// How the next event is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Gillespie over all pairs of occupied mass classes.
    Direct,
    /// Uniform ordered particle pairs at the bounding clock rate, accepted
    /// with probability `K / bound`.
    #[default]
    Thinning,
}

/// How the martingale integrands are kept up to date.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrandMode {
    /// `O(L)` update per count change.
    #[default]
    Incremental,
    /// Recompute from the histogram after every event.
    Full,
}

/// Total jump rate `Λ = (1/n) Σ_{l,m} K(l,m)(N_l N_m − 1(l=m) N_l)`.
pub fn total_rate(h: &MassHistogram, k: &Kernel) -> f64 {
    let classes: Vec<(u64, u64)> = h.iter().collect();
    let mut sum = 0.0;
    for (a, &(l, nl)) in classes.iter().enumerate() {
        let nl = nl as f64;
        sum += k.evaluate(l, l) * nl * (nl - 1.0);
        for &(m, nm) in &classes[a + 1..] {
            sum += 2.0 * k.evaluate(l, m) * nl * nm as f64;
        }
    }
    sum / h.n() as f64
}

/// Gain sums `G_l`, row sums `S_l = Σ_i K(l,i) N_i` and counts `N_l` for
/// `l <= L`, from which both integrands follow.
#[derive(Clone, Debug)]
struct IntegrandParts {
    gain: Vec<f64>,
    row: Vec<f64>,
    counts: Vec<f64>,
    diag: Vec<f64>,
}

impl IntegrandParts {
    fn new(k: &Kernel, truncation: usize) -> Self {
        IntegrandParts {
            gain: vec![0.0; truncation + 1],
            row: vec![0.0; truncation + 1],
            counts: vec![0.0; truncation + 1],
            diag: (0..=truncation as u64).map(|l| k.evaluate(l, l)).collect(),
        }
    }

    fn truncation(&self) -> usize {
        self.gain.len() - 1
    }

    fn from_histogram(h: &MassHistogram, k: &Kernel, truncation: usize) -> Self {
        let mut p = Self::new(k, truncation);
        for (l, c) in h.iter() {
            if (l as usize) <= truncation {
                p.counts[l as usize] = c as f64;
            }
        }
        for l in 1..=truncation {
            let mut row = 0.0;
            for (i, c) in h.iter() {
                row += k.evaluate(l as u64, i) * c as f64;
            }
            p.row[l] = row;
            let mut gain = 0.0;
            for i in 1..l {
                let j = l - i;
                let ni = p.counts[i];
                let nj = p.counts[j] - if i == j { 1.0 } else { 0.0 };
                if ni > 0.0 && nj > 0.0 {
                    gain += k.evaluate(i as u64, j as u64) * ni * nj;
                }
            }
            p.gain[l] = gain;
        }
        p
    }

    /// Applies `N_m += delta` with `delta = ±1`.
    fn change(&mut self, k: &Kernel, m: u64, delta: f64) {
        let truncation = self.truncation();
        for l in 1..=truncation {
            self.row[l] += k.evaluate(l as u64, m) * delta;
        }
        let mu = m as usize;
        if mu < truncation {
            for l in (mu + 1)..=truncation {
                let j = l - mu;
                if j == mu {
                    let nm = self.counts[mu];
                    let after = nm + delta;
                    self.gain[l] += self.diag[mu] * (after * (after - 1.0) - nm * (nm - 1.0));
                } else {
                    let nj = self.counts[j];
                    if nj != 0.0 {
                        self.gain[l] += 2.0 * k.evaluate(m, j as u64) * delta * nj;
                    }
                }
            }
        }
        if mu <= truncation {
            self.counts[mu] += delta;
        }
    }

    fn write_drift(&self, n: f64, out: &mut [f64]) {
        let inv = 1.0 / (n * n);
        for (l, o) in out.iter_mut().enumerate().map(|(i, o)| (i + 1, o)) {
            let nl = self.counts[l];
            let loss = nl * (self.row[l] - self.diag[l]);
            *o = (self.gain[l] - 2.0 * loss) * inv;
        }
    }

    fn write_qv(&self, n: f64, out: &mut [f64]) {
        let inv = 1.0 / (n * n);
        for (l, o) in out.iter_mut().enumerate().map(|(i, o)| (i + 1, o)) {
            let nl = self.counts[l];
            let loss = nl * (self.row[l] - self.diag[l]);
            let pair = self.diag[l] * nl * (nl - 1.0);
            *o = (self.gain[l] + 2.0 * loss + 2.0 * pair) * inv;
        }
    }
}

/// Exact finite-`n` drift `L_n π(l)` for `l = 1..=L`:
///
/// `(1/n²) ( Σ_{i<l} K(i,l−i) N_i (N_{l−i} − δ(2i=l)) − 2 Σ_i K(i,l) N_l (N_i − δ(i=l)) )`.
pub fn drift_integrand(h: &MassHistogram, k: &Kernel, truncation: usize) -> Vec<f64> {
    let mut out = vec![0.0; truncation];
    IntegrandParts::from_histogram(h, k, truncation).write_drift(h.n() as f64, &mut out);
    out
}

/// `n Γ_n π(l)` for `l = 1..=L`, with `Γ_n` the carré du champ of the chain.
///
/// A merge of two particles of mass `l` lowers `N_l` by two, so that pair type
/// enters with weight `4 K(l,l) N_l (N_l − 1)`; all other pair types change
/// `N_l` by one.
pub fn qv_integrand(h: &MassHistogram, k: &Kernel, truncation: usize) -> Vec<f64> {
    let mut out = vec![0.0; truncation];
    IntegrandParts::from_histogram(h, k, truncation).write_qv(h.n() as f64, &mut out);
    out
}

/// Running integrals of the drift and quadratic-variation integrands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleAccumulator {
    pub drift_integral: Vec<f64>,
    pub qv_integral: Vec<f64>,
    pub initial_density: DensityVector,
}

impl MartingaleAccumulator {
    pub fn new(initial_density: DensityVector) -> Self {
        let l = initial_density.truncation();
        MartingaleAccumulator {
            drift_integral: vec![0.0; l],
            qv_integral: vec![0.0; l],
            initial_density,
        }
    }

    pub fn truncation(&self) -> usize {
        self.drift_integral.len()
    }

    /// `√n (π(l) − π_0(l) − ∫ L_n π(l))`.
    pub fn martingale(&self, current: &DensityVector, n: u64) -> Vec<f64> {
        let s = (n as f64).sqrt();
        current
            .values()
            .iter()
            .zip(self.initial_density.values())
            .zip(&self.drift_integral)
            .map(|((p, p0), d)| s * (p - p0 - d))
            .collect()
    }
}

/// One merge event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub l: u64,
    pub m: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Event(Event),
    /// No event before the horizon; time now equals the horizon.
    Horizon,
    /// No event can ever occur again; time now equals the horizon.
    Absorbed,
}

/// A single replica of the chain together with its martingale accumulators.
pub struct Simulator {
    kernel: Kernel,
    strategy: Strategy,
    mode: IntegrandMode,
    hist: MassHistogram,
    time: f64,
    rng: ReplicaRng,
    event_count: u64,
    particles: Vec<u64>,
    bound: f64,
    parts: IntegrandParts,
    drift: Vec<f64>,
    qv: Vec<f64>,
    integrated_until: f64,
    acc: MartingaleAccumulator,
}

impl Simulator {
    pub fn new(initial: MassHistogram, kernel: Kernel, strategy: Strategy, truncation: usize, rng: ReplicaRng) -> Self {
        assert!(truncation >= 1, "truncation must be at least 1");
        let n = initial.n();
        let parts = IntegrandParts::from_histogram(&initial, &kernel, truncation);
        let mut drift = vec![0.0; truncation];
        let mut qv = vec![0.0; truncation];
        parts.write_drift(n as f64, &mut drift);
        parts.write_qv(n as f64, &mut qv);
        let particles = match strategy {
            Strategy::Thinning => initial
                .iter()
                .flat_map(|(l, c)| std::iter::repeat_n(l, c as usize))
                .collect(),
            Strategy::Direct => Vec::new(),
        };
        let acc = MartingaleAccumulator::new(histogram_to_density(&initial, truncation));
        Simulator {
            bound: kernel.sup_norm_within(n),
            kernel,
            strategy,
            mode: IntegrandMode::Incremental,
            hist: initial,
            time: 0.0,
            rng,
            event_count: 0,
            particles,
            parts,
            drift,
            qv,
            integrated_until: 0.0,
            acc,
        }
    }

    pub fn with_integrand_mode(mut self, mode: IntegrandMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn histogram(&self) -> &MassHistogram {
        &self.hist
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    pub fn truncation(&self) -> usize {
        self.drift.len()
    }

    /// Current `L_n π(l)` as tracked by the simulator.
    pub fn current_drift(&self) -> &[f64] {
        &self.drift
    }

    /// Current `n Γ_n π(l)` as tracked by the simulator.
    pub fn current_qv(&self) -> &[f64] {
        &self.qv
    }

    /// Accumulator state, integrated up to the current time.
    pub fn accumulator(&mut self) -> &MartingaleAccumulator {
        self.integrate_to(self.time);
        &self.acc
    }

    pub fn density(&self) -> DensityVector {
        histogram_to_density(&self.hist, self.truncation())
    }

    fn integrate_to(&mut self, t: f64) {
        let dt = t - self.integrated_until;
        if dt > 0.0 {
            for (a, d) in self.acc.drift_integral.iter_mut().zip(&self.drift) {
                *a += dt * d;
            }
            for (a, q) in self.acc.qv_integral.iter_mut().zip(&self.qv) {
                *a += dt * q;
            }
            self.integrated_until = t;
        }
    }

    fn clock_rate(&self) -> f64 {
        match self.strategy {
            Strategy::Direct => total_rate(&self.hist, &self.kernel),
            Strategy::Thinning => {
                let p = self.particles.len() as f64;
                self.bound * p * (p - 1.0) / self.hist.n() as f64
            }
        }
    }

    fn apply(&mut self, l: u64, m: u64) {
        self.integrate_to(self.time);
        self.hist.merge(l, m);
        match self.mode {
            IntegrandMode::Incremental => {
                self.parts.change(&self.kernel, l, -1.0);
                self.parts.change(&self.kernel, m, -1.0);
                self.parts.change(&self.kernel, l + m, 1.0);
            }
            IntegrandMode::Full => {
                self.parts = IntegrandParts::from_histogram(&self.hist, &self.kernel, self.truncation());
            }
        }
        let n = self.hist.n() as f64;
        self.parts.write_drift(n, &mut self.drift);
        self.parts.write_qv(n, &mut self.qv);
        self.event_count += 1;
    }

    fn pick_direct(&mut self, rate: f64) -> (u64, u64) {
        let n = self.hist.n() as f64;
        let classes: Vec<(u64, u64)> = self.hist.iter().collect();
        let target = uniform(&mut self.rng) * rate;
        let mut acc = 0.0;
        let mut last = None;
        for (a, &(l, nl)) in classes.iter().enumerate() {
            let nlf = nl as f64;
            let w = self.kernel.evaluate(l, l) * nlf * (nlf - 1.0) / n;
            if w > 0.0 {
                acc += w;
                last = Some((l, l));
                if target < acc {
                    return (l, l);
                }
            }
            for &(m, nm) in &classes[a + 1..] {
                let w = 2.0 * self.kernel.evaluate(l, m) * nlf * nm as f64 / n;
                if w > 0.0 {
                    acc += w;
                    last = Some((l, m));
                    if target < acc {
                        return (l, m);
                    }
                }
            }
        }
        // rounding put the target past the final cumulative weight
        last.expect("positive rate with no admissible pair")
    }

    /// Advances to the next merge event if it happens no later than
    /// `horizon`; otherwise moves the clock to `horizon`.
    pub fn step(&mut self, horizon: f64) -> StepOutcome {
        loop {
            let rate = self.clock_rate();
            if rate <= 0.0 {
                self.time = self.time.max(horizon);
                self.integrate_to(self.time);
                return StepOutcome::Absorbed;
            }
            let next = self.time + exponential(&mut self.rng, rate);
            if next > horizon {
                self.time = horizon;
                self.integrate_to(horizon);
                return StepOutcome::Horizon;
            }
            self.time = next;
            let (l, m) = match self.strategy {
                Strategy::Direct => self.pick_direct(rate),
                Strategy::Thinning => {
                    let p = self.particles.len() as u64;
                    let x = below(&mut self.rng, p) as usize;
                    let mut y = below(&mut self.rng, p - 1) as usize;
                    if y >= x {
                        y += 1;
                    }
                    let (l, m) = (self.particles[x], self.particles[y]);
                    let k = self.kernel.evaluate(l, m);
                    if uniform(&mut self.rng) * self.bound >= k {
                        continue;
                    }
                    self.particles[x] = l + m;
                    self.particles.swap_remove(y);
                    (l, m)
                }
            };
            self.apply(l, m);
            return StepOutcome::Event(Event {
                time: self.time,
                l: l.min(m),
                m: l.max(m),
            });
        }
    }

    /// Takes a snapshot of the current state.
    pub fn snapshot(&mut self) -> Snapshot {
        self.integrate_to(self.time);
        let density = self.density();
        let n = self.hist.n();
        Snapshot {
            t: self.time,
            martingale: self.acc.martingale(&density, n),
            drift_integral: self.acc.drift_integral.clone(),
            qv_integral: self.acc.qv_integral.clone(),
            density,
            moments: [
                self.hist.moment(1),
                self.hist.moment(2),
                self.hist.moment(3),
                self.hist.moment(4),
            ],
            mass_defect: self.hist.total_mass() as i128 - n as i128,
            particles: self.hist.particle_count(),
            events: self.event_count,
        }
    }
}

/// State of one replica at one grid time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub density: DensityVector,
    pub drift_integral: Vec<f64>,
    pub qv_integral: Vec<f64>,
    pub martingale: Vec<f64>,
    /// `Σ l^p π(l)` over the full histogram for `p = 1..=4`.
    pub moments: [f64; 4],
    /// `Σ l N_l − n`, computed in integer arithmetic.
    pub mass_defect: i128,
    pub particles: u64,
    pub events: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n: u64,
    pub truncation: usize,
    pub replica: u64,
    pub snapshots: Vec<Snapshot>,
    pub final_histogram: MassHistogram,
    pub event_count: u64,
}

/// Parameters of a simulation run.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n: u64,
    pub kernel: Kernel,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub truncation: usize,
    pub strategy: Strategy,
    pub integrand_mode: IntegrandMode,
}

impl SimConfig {
    pub fn new(n: u64, kernel: Kernel, horizon: f64, grid: Vec<f64>, truncation: usize) -> Self {
        SimConfig {
            n,
            kernel,
            horizon,
            grid,
            truncation,
            strategy: Strategy::default(),
            integrand_mode: IntegrandMode::default(),
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |s: String| Err(ConfigError::Invalid(s));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.truncation == 0 {
            return bad("truncation L must be at least 1".into());
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return bad(format!("horizon T must be finite and >= 0, got {}", self.horizon));
        }
        if self.grid.is_empty() {
            return bad("snapshot grid is empty".into());
        }
        for w in self.grid.windows(2) {
            if w[1] <= w[0] {
                return bad(format!("snapshot grid not strictly increasing at {}", w[1]));
            }
        }
        if self.grid[0] < 0.0 || *self.grid.last().unwrap() > self.horizon {
            return bad(format!("snapshot grid must lie within [0, {}]", self.horizon));
        }
        Ok(())
    }
}

/// Runs replica `replica` of the configured experiment from the monodisperse
/// state. Snapshots are càdlàg: the state at grid time `t` includes every
/// event at time `<= t`.
pub fn run(cfg: &SimConfig, master_seed: u64, replica: u64) -> Trajectory {
    run_from(cfg, MassHistogram::monodisperse(cfg.n), master_seed, replica)
}

pub fn run_from(cfg: &SimConfig, initial: MassHistogram, master_seed: u64, replica: u64) -> Trajectory {
    let mut sim = Simulator::new(
        initial,
        cfg.kernel.clone(),
        cfg.strategy,
        cfg.truncation,
        replica_rng(master_seed, replica),
    )
    .with_integrand_mode(cfg.integrand_mode);
    let mut snapshots = Vec::with_capacity(cfg.grid.len());
    for &t in &cfg.grid {
        while let StepOutcome::Event(_) = sim.step(t) {}
        snapshots.push(sim.snapshot());
    }
    while let StepOutcome::Event(_) = sim.step(cfg.horizon) {}
    Trajectory {
        n: cfg.n,
        truncation: cfg.truncation,
        replica,
        snapshots,
        event_count: sim.event_count(),
        final_histogram: sim.hist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(n: u64, pairs: &[(u64, u64)]) -> MassHistogram {
        MassHistogram::from_counts(n, pairs.iter().copied().collect()).unwrap()
    }

    #[test]
    fn total_rate_examples() {
        let k = Kernel::constant(1.0).unwrap();
        assert!((total_rate(&MassHistogram::monodisperse(2), &k) - 1.0).abs() < 1e-15);
        assert_eq!(total_rate(&hist(5, &[(5, 1)]), &k), 0.0);
        assert!((total_rate(&hist(3, &[(1, 1), (2, 1)]), &k) - 2.0 / 3.0).abs() < 1e-15);
        assert!((total_rate(&MassHistogram::monodisperse(3), &k) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn drift_two_particles() {
        let k = Kernel::constant(1.0).unwrap();
        let d = drift_integrand(&MassHistogram::monodisperse(2), &k, 2);
        assert_eq!(d, vec![-1.0, 0.5]);
        assert_eq!(drift_integrand(&hist(6, &[(6, 1)]), &k, 8), vec![0.0; 8]);
    }

    #[test]
    fn qv_two_particles() {
        // the single possible jump moves π(1) by −1 and π(2) by +1/2 at rate 1
        let k = Kernel::constant(1.0).unwrap();
        let q = qv_integrand(&MassHistogram::monodisperse(2), &k, 2);
        assert_eq!(q, vec![2.0, 0.5]);
        let zero = Kernel::constant(0.0).unwrap();
        assert_eq!(qv_integrand(&MassHistogram::monodisperse(7), &zero, 3), vec![0.0; 3]);
    }

    #[test]
    fn single_particle_is_absorbing() {
        let k = Kernel::constant(1.0).unwrap();
        for strategy in [Strategy::Direct, Strategy::Thinning] {
            let mut sim = Simulator::new(
                MassHistogram::monodisperse(1),
                k.clone(),
                strategy,
                2,
                replica_rng(0, 0),
            );
            assert_eq!(sim.step(3.0), StepOutcome::Absorbed);
            assert_eq!(sim.time(), 3.0);
        }
    }

    #[test]
    fn zero_horizon_gives_initial_snapshot() {
        let k = Kernel::constant(1.0).unwrap();
        let cfg = SimConfig::new(50, k, 0.0, vec![0.0], 4);
        let tr = run(&cfg, 1, 0);
        assert_eq!(tr.snapshots.len(), 1);
        assert_eq!(tr.snapshots[0].density.values(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(tr.snapshots[0].martingale.iter().all(|&m| m == 0.0));
        assert_eq!(tr.event_count, 0);
    }

    #[test]
    fn zero_kernel_never_moves() {
        let k = Kernel::constant(0.0).unwrap();
        for strategy in [Strategy::Direct, Strategy::Thinning] {
            let cfg = SimConfig::new(30, k.clone(), 2.0, vec![0.5, 1.0, 2.0], 3).with_strategy(strategy);
            let tr = run(&cfg, 1, 0);
            for s in &tr.snapshots {
                assert_eq!(s.density.values(), &[1.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn incremental_matches_full_recompute() {
        let k = Kernel::capped_brownian(1.0, 10.0).unwrap();
        let mut a = Simulator::new(
            MassHistogram::monodisperse(400),
            k.clone(),
            Strategy::Thinning,
            24,
            replica_rng(9, 1),
        );
        let mut steps = 0;
        while let StepOutcome::Event(_) = a.step(1e9) {
            let d = drift_integrand(a.histogram(), &k, 24);
            let q = qv_integrand(a.histogram(), &k, 24);
            for l in 0..24 {
                assert!((a.current_drift()[l] - d[l]).abs() < 1e-9);
                assert!((a.current_qv()[l] - q[l]).abs() < 1e-9);
            }
            steps += 1;
        }
        assert_eq!(steps, 399);
    }

    #[test]
    fn config_validation() {
        let k = Kernel::constant(1.0).unwrap();
        assert!(SimConfig::new(10, k.clone(), 1.0, vec![0.0, 1.0], 4).validate().is_ok());
        assert!(SimConfig::new(10, k.clone(), 1.0, vec![1.0, 0.5], 4)
            .validate()
            .is_err());
        assert!(SimConfig::new(10, k.clone(), 1.0, vec![2.0], 4).validate().is_err());
        assert!(SimConfig::new(10, k.clone(), 1.0, vec![1.0], 0).validate().is_err());
        assert!(SimConfig::new(0, k, 1.0, vec![1.0], 2).validate().is_err());
    }
}
