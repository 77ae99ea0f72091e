//! Wall-clock scaling of the synthesis pipeline in the horizon.

use std::time::Instant;

use serde::Serialize;

use crate::centralized::solve_centralized;
use crate::error::{Error, Result};
use crate::problem::{random_instance, BlockDims};
use crate::synthesis::{synthesize, recursion_residuals};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub horizon: usize,
    /// Best observed time for the full two-player synthesis.
    pub synth_seconds: f64,
    /// Best observed time for the centralized recursions alone.
    pub centralized_seconds: f64,
    pub residual: f64,
}

/// Minimum over at least `repeats` runs, continuing until `BUDGET` seconds
/// have been spent (at most `MAX_RUNS` runs).
fn best_of<F: FnMut() -> Result<()>>(repeats: usize, mut f: F) -> Result<f64> {
    const BUDGET: f64 = 0.25;
    const MAX_RUNS: usize = 100;
    let (mut best, mut spent, mut runs) = (f64::INFINITY, 0.0, 0);
    while runs < repeats.max(1) || (spent < BUDGET && runs < MAX_RUNS) {
        let start = Instant::now();
        f()?;
        let elapsed = start.elapsed().as_secs_f64();
        best = best.min(elapsed);
        spent += elapsed;
        runs += 1;
    }
    Ok(best)
}

/// Times synthesis on `random_instance(seed, dims, T, 1)` for each horizon.
pub fn bench_horizons(dims: BlockDims, horizons: &[usize], seed: u64, repeats: usize) -> Result<Vec<BenchRow>> {
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(Error::InvalidArgument("horizons must be positive".into()));
    }
    horizons
        .iter()
        .map(|&horizon| {
            let spec = random_instance(seed, dims, horizon, 1.0);
            let synth_seconds = best_of(repeats, || synthesize(&spec).map(drop))?;
            let centralized_seconds = best_of(repeats, || solve_centralized(&spec.plant).map(drop))?;
            let syn = synthesize(&spec)?;
            let residual = recursion_residuals(&spec, &syn.centralized, &syn.gains).max();
            Ok(BenchRow { horizon, synth_seconds, centralized_seconds, residual })
        })
        .collect()
}

/// Growth factor of the synthesis time between the two largest horizons,
/// rescaled to a doubling of the horizon. `None` with fewer than two
/// distinct horizons.
pub fn doubling_ratio(rows: &[BenchRow]) -> Option<f64> {
    let mut sorted: Vec<&BenchRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.horizon);
    sorted.dedup_by_key(|r| r.horizon);
    let [.., small, big] = sorted.as_slice() else {
        return None;
    };
    let growth = big.synth_seconds / small.synth_seconds;
    Some(growth * 2.0 * small.horizon as f64 / big.horizon as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(horizon: usize, synth_seconds: f64) -> BenchRow {
        BenchRow { horizon, synth_seconds, centralized_seconds: 0.0, residual: 0.0 }
    }

    #[test]
    fn ratio_uses_largest_pair() {
        let rows = [row(250, 1.0), row(1000, 4.0), row(500, 2.0), row(2000, 9.0)];
        assert_eq!(doubling_ratio(&rows), Some(9.0 / 4.0));
        assert_eq!(doubling_ratio(&rows[..1]), None);
        assert_eq!(doubling_ratio(&[row(100, 1.0), row(400, 4.0)]), Some(2.0));
    }

    #[test]
    fn bench_rejects_zero_horizon() {
        let dims = BlockDims::new(1, 1, 1, 1, 1, 1).unwrap();
        assert!(bench_horizons(dims, &[0], 0, 1).is_err());
        let rows = bench_horizons(dims, &[5, 10], 0, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.residual <= 1e-9));
    }
}
