//! Data-parallel execution with a sequential fallback.
//!
//! Work is always split into the same fixed shards and the shard results are
//! combined in index order, so both modes return bit-identical values.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for sharded work.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Exec::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Maps `f` over `0..count`, returning results in index order.
    pub fn map<T, F>(self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..count).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..count).into_par_iter().map(f).collect(),
        }
    }
}

/// Sets the size of the global worker pool. Returns `false` when the pool was
/// already initialized or the crate is built without the `parallel` feature.
pub fn set_workers(count: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(count).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = count;
        false
    }
}

/// Splits `total` items into shards of at most `shard` items.
pub fn shard_sizes(total: usize, shard: usize) -> Vec<usize> {
    let shard = shard.max(1);
    let full = total / shard;
    let mut sizes = vec![shard; full];
    if total % shard != 0 {
        sizes.push(total % shard);
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shards_cover_total() {
        assert_eq!(shard_sizes(10, 4), vec![4, 4, 2]);
        assert_eq!(shard_sizes(8, 4), vec![4, 4]);
        assert!(shard_sizes(0, 4).is_empty());
    }

    #[test]
    fn modes_agree() {
        let seq = Exec::Sequential.map(50, |i| (i as f64).sqrt());
        let def = Exec::default().map(50, |i| (i as f64).sqrt());
        assert_eq!(seq, def);
    }
}
