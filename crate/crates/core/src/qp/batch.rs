use rayon::prelude::*;

use super::{solve_qp, QpError, QpSolution, SolverConfig, ValidatedProblem};

/// Environment variable capping batch concurrency.
pub const THREADS_ENV: &str = "OPTLAYER_THREADS";

/// Thread count for batch solves: `OPTLAYER_THREADS` if set to a positive
/// integer, otherwise the machine's available parallelism.
pub fn batch_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Solves every problem in the batch; equivalent to mapping [`solve_qp`]
/// sequentially. Per-element failures are reported in each status.
pub fn solve_batch(
    ps: &[ValidatedProblem],
    cfg: &SolverConfig,
) -> Result<Vec<QpSolution>, QpError> {
    solve_batch_with_threads(ps, cfg, batch_threads())
}

pub fn solve_batch_with_threads(
    ps: &[ValidatedProblem],
    cfg: &SolverConfig,
    threads: usize,
) -> Result<Vec<QpSolution>, QpError> {
    cfg.validate()?;
    if let Some(first) = ps.first() {
        let dims = first.dims();
        if let Some((i, bad)) = ps.iter().enumerate().find(|(_, p)| p.dims() != dims) {
            return Err(QpError::DimensionMismatch(format!(
                "batch element {i} has dims {:?}, expected {dims:?}",
                bad.dims()
            )));
        }
    }
    let threads = threads.max(1);
    if threads == 1 || ps.len() <= 1 {
        return ps.iter().map(|p| solve_qp(p, cfg)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| QpError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| ps.par_iter().map(|p| solve_qp(p, cfg)).collect())
}
