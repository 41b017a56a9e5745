//! Parallel replica execution with scheduling-independent results.
//!
//! Replicas run on a rayon pool in fixed-size blocks. Each block is
//! collected in replica order and handed to the consumer before the next
//! block starts, so memory stays bounded and the consumer always sees
//! replicas `0, 1, 2, ...` regardless of thread count.

use rayon::prelude::*;

use crate::analysis::{EnsembleAccumulator, EnsembleSummary};
use crate::error::{ConfigError, EnsembleError, SolveError};
use crate::kernel::{Kernel, KernelDecl};
use crate::simulator::{run, SimConfig, Trajectory};
use crate::smoluchowski::{constant_kernel_exact_density, solve, SolverConfig};
use crate::state::DensityVector;

const BLOCK: u64 = 256;

/// Builds a pool with `threads` workers (default: all cores), capped by `replicas`.
pub fn thread_pool(threads: Option<usize>, replicas: u64) -> Result<rayon::ThreadPool, ConfigError> {
    let want = threads.unwrap_or_else(rayon::current_num_threads).max(1);
    let cap = replicas.clamp(1, usize::MAX as u64) as usize;
    rayon::ThreadPoolBuilder::new()
        .num_threads(want.min(cap))
        .build()
        .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))
}

/// Runs replicas `0..replicas` and feeds them to `sink` in replica order.
pub fn for_each_replica<E, F>(
    cfg: &SimConfig,
    replicas: u64,
    master_seed: u64,
    threads: Option<usize>,
    mut sink: F,
) -> Result<(), E>
where
    E: From<ConfigError>,
    F: FnMut(Trajectory) -> Result<(), E>,
{
    cfg.validate()?;
    let pool = thread_pool(threads, replicas)?;
    let mut start = 0;
    while start < replicas {
        let end = (start + BLOCK).min(replicas);
        let block: Vec<Trajectory> =
            pool.install(|| (start..end).into_par_iter().map(|r| run(cfg, master_seed, r)).collect());
        for t in block {
            sink(t)?;
        }
        start = end;
    }
    Ok(())
}

/// Deterministic density on `grid`, used as the centre of fluctuations.
///
/// Constant kernels use the closed form; other kernels are integrated with
/// fixed RK4 steps of at most `1e-3`.
pub fn reference_densities(k: &Kernel, truncation: usize, grid: &[f64]) -> Result<Vec<DensityVector>, SolveError> {
    if let KernelDecl::Constant { c } = *k.decl() {
        return Ok(grid
            .iter()
            .map(|&t| constant_kernel_exact_density(truncation, t, c))
            .collect());
    }
    let dt = SolverConfig::stability_bound(k).min(1e-3);
    let cfg = SolverConfig::fixed(truncation, dt, grid.to_vec());
    Ok(solve(k, &DensityVector::monodisperse(truncation), &cfg)?.states)
}

/// Runs an ensemble and reduces it against the deterministic reference,
/// tracking covariances of the given mass pairs.
pub fn summarize(
    cfg: &SimConfig,
    replicas: u64,
    master_seed: u64,
    threads: Option<usize>,
    pairs: Vec<(usize, usize)>,
) -> Result<EnsembleSummary, EnsembleError> {
    let reference = reference_densities(&cfg.kernel, cfg.truncation, &cfg.grid)?;
    let mut acc = EnsembleAccumulator::new(cfg.n, cfg.grid.clone(), reference, pairs)?;
    for_each_replica::<EnsembleError, _>(cfg, replicas, master_seed, threads, |t| {
        acc.push(&t).map_err(Into::into)
    })?;
    Ok(acc.finish()?)
}
