//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature, [`ExecMode::Parallel`] runs on the rayon
//! global pool; without it every mode runs sequentially. Results are always
//! returned in input order, so both modes produce identical output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Mode that actually runs: parallel requests degrade to sequential
    /// when the crate was built without rayon.
    pub fn effective(self) -> ExecMode {
        if cfg!(feature = "parallel") {
            self
        } else {
            ExecMode::Sequential
        }
    }
}

/// Ordered map over a slice.
pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Ordered map over `0..n`.
pub fn map_range<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<u64> = (0..257).collect();
        let a = map(ExecMode::Sequential, &xs, |x| x * x + 1);
        let b = map(ExecMode::Parallel, &xs, |x| x * x + 1);
        assert_eq!(a, b);
        let c = map_range(ExecMode::Parallel, 10, |i| i * 2);
        assert_eq!(c, (0..10).map(|i| i * 2).collect::<Vec<_>>());
    }
}
