//! Run configuration: one TOML file, command-line overrides on top, checks
//! that point at the offending line, and the content hash naming the run.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use coaglab_core::analysis::CltTolerances;
use coaglab_core::oracle::MAX_N;
use coaglab_core::smoluchowski::{uniform_grid, SolverConfig, StepControl};
use coaglab_core::validation::ValidationConfig;
use coaglab_core::{Kernel, KernelDecl, SimConfig, Strategy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Fixed RK4 step; ignored when `atol` is set.
    pub dt: f64,
    /// Switches to the adaptive integrator with this global target.
    pub atol: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { dt: 1e-3, atol: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluctSettings {
    /// Masses whose fluctuations are predicted and compared.
    pub ells: Vec<usize>,
    /// Step of the Lyapunov and dual integrators.
    pub dt: f64,
    /// Truncation of the dual test functions, `2 L` when absent.
    pub dual_truncation: Option<usize>,
    /// Largest allowed relative gap between the two prediction routes.
    pub route_rel: f64,
    pub clt: CltTolerances,
}

impl Default for FluctSettings {
    fn default() -> Self {
        FluctSettings {
            ells: vec![1, 2, 3],
            dt: 1e-3,
            dual_truncation: None,
            route_rel: 1e-5,
            clt: CltTolerances::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub n: Vec<u64>,
    pub times: Vec<f64>,
    /// Standard errors allowed between ensemble and exact means.
    pub se: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            n: vec![2, 3, 4, 5],
            times: vec![0.25, 1.0],
            se: 3.0,
        }
    }
}

/// Everything a run depends on. `threads` and `out` do not change results
/// and are left out of the run id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelDecl,
    pub n: u64,
    #[serde(alias = "T")]
    pub horizon: f64,
    /// Snapshot times; `grid_points` equal steps of `[0, T]` when absent.
    pub grid: Option<Vec<f64>>,
    pub grid_points: usize,
    #[serde(alias = "L")]
    pub truncation: usize,
    #[serde(alias = "R")]
    pub replicas: u64,
    pub seed: u64,
    pub strategy: Strategy,
    pub write_trajectories: bool,
    pub solver: SolverSettings,
    pub fluct: FluctSettings,
    pub oracle: OracleSettings,
    pub validation: ValidationConfig,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kernel: KernelDecl::constant(1.0),
            n: 1_000,
            horizon: 1.0,
            grid: None,
            grid_points: 10,
            truncation: 64,
            replicas: 100,
            seed: 1,
            strategy: Strategy::default(),
            write_trajectories: true,
            solver: SolverSettings::default(),
            fluct: FluctSettings::default(),
            oracle: OracleSettings::default(),
            validation: ValidationConfig::default(),
            threads: None,
            out: PathBuf::from("out"),
        }
    }
}

/// Flags that override the config file, usable after any subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML config file; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Base directory for run outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `constant:C`, `capped-brownian:C0,CAP`, or a JSON declaration.
    #[arg(long, global = true, value_parser = parse_kernel)]
    pub kernel: Option<KernelDecl>,
    #[arg(long, global = true)]
    pub n: Option<u64>,
    /// Horizon T.
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Comma-separated snapshot times.
    #[arg(long, global = true, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Truncation level L.
    #[arg(long, global = true)]
    pub truncation: Option<usize>,
    #[arg(long, global = true)]
    pub replicas: Option<u64>,
    #[arg(long, global = true, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    /// Fixed solver step.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Adaptive solver tolerance.
    #[arg(long, global = true)]
    pub atol: Option<f64>,
    /// Comma-separated masses for fluctuation output.
    #[arg(long, global = true, value_delimiter = ',')]
    pub ells: Option<Vec<usize>>,
    /// Skip per-replica trajectory files.
    #[arg(long, global = true)]
    pub no_trajectories: bool,
}

pub fn parse_kernel(s: &str) -> Result<KernelDecl, String> {
    if s.trim_start().starts_with('{') {
        return serde_json::from_str(s).map_err(|e| e.to_string());
    }
    let (kind, args) = s.split_once(':').unwrap_or((s, ""));
    let nums = args
        .split(',')
        .filter(|a| !a.trim().is_empty())
        .map(|a| a.trim().parse::<f64>().map_err(|e| format!("`{a}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let decl = match (kind, nums.as_slice()) {
        ("constant", [c]) => KernelDecl::constant(*c),
        ("capped-brownian", [c0, cap]) => KernelDecl::capped_brownian(*c0, *cap),
        _ => return Err(format!("expected constant:C or capped-brownian:C0,CAP, got `{s}`")),
    };
    Kernel::new(decl.clone()).map_err(|e| e.to_string())?;
    Ok(decl)
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s {
        "direct" => Ok(Strategy::Direct),
        "thinning" => Ok(Strategy::Thinning),
        _ => Err(format!("expected `direct` or `thinning`, got `{s}`")),
    }
}

/// A config after overrides, with the source text kept for error locations.
pub struct Loaded {
    pub config: RunConfig,
    source: Option<(PathBuf, String)>,
}

impl Loaded {
    pub fn load(o: &Overrides) -> Result<Self, CliError> {
        let (mut config, source) = match &o.config {
            Some(path) => {
                let text =
                    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let cfg: RunConfig =
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                (cfg, Some((path.clone(), text)))
            }
            None => (RunConfig::default(), None),
        };
        let c = &mut config;
        if let Some(v) = o.seed {
            c.seed = v;
            c.validation.seed = v;
        }
        if let Some(v) = &o.out {
            c.out = v.clone();
        }
        if let Some(v) = o.threads {
            c.threads = Some(v);
            c.validation.threads = Some(v);
        }
        if let Some(v) = &o.kernel {
            c.kernel = v.clone();
        }
        if let Some(v) = o.n {
            c.n = v;
        }
        if let Some(v) = o.horizon {
            c.horizon = v;
        }
        if let Some(v) = &o.grid {
            c.grid = Some(v.clone());
        }
        if let Some(v) = o.truncation {
            c.truncation = v;
        }
        if let Some(v) = o.replicas {
            c.replicas = v;
        }
        if let Some(v) = o.strategy {
            c.strategy = v;
        }
        if let Some(v) = o.dt {
            c.solver.dt = v;
        }
        if let Some(v) = o.atol {
            c.solver.atol = Some(v);
        }
        if let Some(v) = &o.ells {
            c.fluct.ells = v.clone();
        }
        if o.no_trajectories {
            c.write_trajectories = false;
        }
        if c.grid.is_none() {
            c.grid = Some(uniform_grid(c.horizon, c.grid_points));
        }
        Ok(Loaded { config, source })
    }

    /// `file:line: key: message`, or `key: message` when the value did not
    /// come from the file.
    fn fault(&self, key: &str, message: impl std::fmt::Display) -> CliError {
        let last = key.rsplit('.').next().unwrap_or(key);
        if let Some((path, text)) = &self.source {
            for (i, line) in text.lines().enumerate() {
                let t = line.trim_start();
                let hit = t
                    .strip_prefix(last)
                    .is_some_and(|rest| rest.trim_start().starts_with('='))
                    || t.starts_with(&format!("[{last}]"));
                if hit {
                    return CliError::Config(format!("{}:{}: {key}: {message}", path.display(), i + 1));
                }
            }
        }
        CliError::Config(format!("{key}: {message}"))
    }

    /// Checks shared by every simulation-backed command.
    pub fn check_run(&self) -> Result<(), CliError> {
        let c = &self.config;
        Kernel::new(c.kernel.clone()).map_err(|e| self.fault("kernel", e))?;
        if c.n == 0 {
            return Err(self.fault("n", "must be at least 1"));
        }
        if c.truncation == 0 {
            return Err(self.fault("truncation", "must be at least 1"));
        }
        if c.replicas == 0 {
            return Err(self.fault("replicas", "must be at least 1"));
        }
        if !(c.horizon.is_finite() && c.horizon >= 0.0) {
            return Err(self.fault("horizon", format!("must be finite and >= 0, got {}", c.horizon)));
        }
        if c.threads == Some(0) {
            return Err(self.fault("threads", "must be at least 1"));
        }
        let grid = self.grid();
        if grid.is_empty() {
            return Err(self.fault("grid", "is empty"));
        }
        if let Some(w) = grid.windows(2).find(|w| w[1] <= w[0]) {
            return Err(self.fault("grid", format!("not strictly increasing at {}", w[1])));
        }
        if grid[0] < 0.0 || grid[grid.len() - 1] > c.horizon {
            return Err(self.fault("grid", format!("must lie within [0, {}]", c.horizon)));
        }
        Ok(())
    }

    pub fn check_solver(&self) -> Result<(), CliError> {
        self.check_run()?;
        let cfg = self.solver_config();
        let k = self.kernel();
        cfg.validate(&k).map_err(|e| match self.config.solver.atol {
            Some(_) => self.fault("atol", e),
            None => self.fault("dt", e),
        })
    }

    pub fn check_fluct(&self) -> Result<(), CliError> {
        self.check_run()?;
        let f = &self.config.fluct;
        if f.ells.is_empty() {
            return Err(self.fault("fluct.ells", "is empty"));
        }
        if let Some(&l) = f.ells.iter().find(|&&l| l == 0 || l > self.config.truncation) {
            return Err(self.fault("fluct.ells", format!("mass {l} outside 1..={}", self.config.truncation)));
        }
        let bound = SolverConfig::stability_bound(&self.kernel());
        if !(f.dt > 0.0 && f.dt <= bound) {
            return Err(self.fault("fluct.dt", format!("must lie in (0, {bound}], got {}", f.dt)));
        }
        if f.dual_truncation.is_some_and(|d| d < self.config.truncation) {
            return Err(self.fault("fluct.dual_truncation", "must be at least the truncation L"));
        }
        if f.route_rel.is_nan() || f.route_rel < 0.0 {
            return Err(self.fault("fluct.route_rel", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn check_oracle(&self) -> Result<(), CliError> {
        self.check_run()?;
        let o = &self.config.oracle;
        if o.n.is_empty() || o.n.iter().any(|&n| n == 0 || n > MAX_N) {
            return Err(self.fault("oracle.n", format!("entries must lie in 1..={MAX_N}")));
        }
        if o.times.is_empty() || o.times.windows(2).any(|w| w[1] <= w[0]) || o.times[0] < 0.0 {
            return Err(self.fault("oracle.times", "must be nonempty, nonnegative and increasing"));
        }
        Ok(())
    }

    pub fn check_validation(&self) -> Result<(), CliError> {
        self.config
            .validation
            .validate()
            .map_err(|e| self.fault("validation", e))
    }

    pub fn kernel(&self) -> Kernel {
        Kernel::new(self.config.kernel.clone()).expect("checked kernel")
    }

    pub fn grid(&self) -> &[f64] {
        self.config.grid.as_deref().unwrap_or(&[])
    }

    pub fn sim_config(&self) -> SimConfig {
        let c = &self.config;
        SimConfig::new(c.n, self.kernel(), c.horizon, self.grid().to_vec(), c.truncation).with_strategy(c.strategy)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let c = &self.config;
        let step = match c.solver.atol {
            Some(atol) => StepControl::Adaptive { atol },
            None => StepControl::Fixed { dt: c.solver.dt },
        };
        SolverConfig {
            truncation: c.truncation,
            step,
            horizon: c.horizon,
            grid: self.grid().to_vec(),
        }
    }

    /// First 16 hex digits of SHA-256 over the command, code version and
    /// effective config minus `threads` and `out`.
    pub fn run_id(&self, command: &str) -> String {
        let mut c = self.config.clone();
        c.threads = None;
        c.validation.threads = None;
        c.out = PathBuf::new();
        let body = serde_json::json!({ "command": command, "code_version": CODE_VERSION, "config": c });
        let digest = Sha256::digest(body.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out
    }
}
