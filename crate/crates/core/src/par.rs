//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature the work is spread over a rayon pool; without it,
//! or with [`ExecMode::Sequential`], items run one after another. Output order
//! always matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How independent items (documents or segments) are processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    /// Use the global rayon pool, or a dedicated pool of `threads` when set.
    #[default]
    Parallel,
    Threads(usize),
}

impl ExecMode {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && !matches!(self, ExecMode::Sequential | ExecMode::Threads(0 | 1))
    }
}

pub fn ordered_map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if !mode.is_parallel() {
        return items.iter().map(f).collect();
    }
    parallel_map(mode, items, f)
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        ExecMode::Threads(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(err) => {
                log::warn!("could not build a {n}-thread pool ({err}); using the global pool");
                items.par_iter().map(&f).collect()
            }
        },
        _ => items.par_iter().map(&f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(_mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_input_order() {
        let items: Vec<u32> = (0..1000).collect();
        for mode in [ExecMode::Sequential, ExecMode::Parallel, ExecMode::Threads(3)] {
            let out = ordered_map(mode, &items, |x| x * 2);
            assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_thread_is_sequential() {
        assert!(!ExecMode::Threads(1).is_parallel());
        assert!(!ExecMode::Sequential.is_parallel());
    }
}
