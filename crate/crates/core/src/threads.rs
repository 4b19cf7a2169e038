//! Coarse-grained parallelism with a bounded, env-configurable pool.
//!
//! Only whole work items (snippets, table rows) run in parallel; every
//! numeric kernel below them is sequential. Results are collected in input
//! order, so the values produced are identical for any pool size and
//! `FEATFLOW_THREADS=1` degenerates to a plain sequential loop.

use rayon::prelude::*;
use std::sync::OnceLock;

pub const ENV_VAR: &str = "FEATFLOW_THREADS";

fn parse_limit(raw: Option<&str>) -> usize {
    let fallback = || {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    };
    match raw {
        Some(s) => match s.trim().parse::<usize>() {
            Ok(0) | Err(_) => fallback(),
            Ok(n) => n,
        },
        None => fallback(),
    }
}

pub fn thread_limit() -> usize {
    parse_limit(std::env::var(ENV_VAR).ok().as_deref())
}

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(thread_limit())
            .build()
            .expect("thread pool construction")
    })
}

/// Map `f` over `items` on the shared pool, keeping input order. Errors
/// short-circuit; which error wins under contention is unspecified, but the
/// success value is schedule-independent.
pub fn try_map_ordered<T, U, F, E>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync,
{
    pool().install(|| items.par_iter().map(&f).collect())
}
