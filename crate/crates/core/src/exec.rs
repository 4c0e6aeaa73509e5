//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (on by default) [`ExecMode::Parallel`] maps
//! over a rayon pool; without it every mode runs sequentially. Results are
//! always returned in input order, so callers that reduce them afterwards get
//! the same floating-point sums either way.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// True when this mode will actually use more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }

    pub fn map<T, R, F>(self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self == ExecMode::Parallel {
            use rayon::prelude::*;
            return items.into_par_iter().map(f).collect();
        }
        items.into_iter().map(f).collect()
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Send + Sync,
    {
        #[cfg(feature = "parallel")]
        if self == ExecMode::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = ExecMode::Sequential.map(items.clone(), |x| x * x);
        let par = ExecMode::Parallel.map(items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(
            ExecMode::Sequential.map_range(50, |i| i + 1),
            ExecMode::Parallel.map_range(50, |i| i + 1)
        );
    }
}
