use rayon::prelude::*;

use super::accumulator::Merge;
use crate::error::Result;

/// Paths per work unit. Blocks are merged in index order, so results do not
/// depend on the number of threads.
pub const BLOCK_PATHS: u64 = 64;

/// Runs `body(acc, scratch, path_id)` for every path in `0..paths` on the
/// current rayon pool and merges the per-block accumulators in block order.
/// The first error in path order is returned.
pub fn run_paths<A, W, I, S, F>(paths: u64, init: I, scratch: S, body: F) -> Result<A>
where
    A: Merge + Send,
    I: Fn() -> A + Sync,
    S: Fn() -> W + Sync,
    F: Fn(&mut A, &mut W, u64) -> Result<()> + Sync,
{
    let blocks = paths.div_ceil(BLOCK_PATHS);
    let parts: Vec<Result<A>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            let mut w = scratch();
            let end = ((b + 1) * BLOCK_PATHS).min(paths);
            for p in b * BLOCK_PATHS..end {
                body(&mut acc, &mut w, p)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = init();
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::MomentAccumulator;
    use crate::Error;

    fn run(paths: u64) -> MomentAccumulator {
        run_paths(
            paths,
            MomentAccumulator::new,
            || (),
            |acc, _, p| {
                acc.push((p as f64).sin());
                Ok(())
            },
        )
        .unwrap()
    }

    #[test]
    fn same_result_for_any_pool_size() {
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = serial.install(|| run(1000));
        let b = wide.install(|| run(1000));
        assert_eq!(a, b);
        assert_eq!(a.count(), 1000);
    }

    #[test]
    fn first_error_in_path_order() {
        let r: Result<MomentAccumulator> = run_paths(
            500,
            MomentAccumulator::new,
            || (),
            |_, _, p| {
                if p == 130 || p == 400 {
                    Err(Error::BlowUp { time: p as f64 })
                } else {
                    Ok(())
                }
            },
        );
        assert_eq!(r.unwrap_err(), Error::BlowUp { time: 130.0 });
    }
}
