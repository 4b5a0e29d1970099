//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the closures run on the rayon global pool;
//! without it they run in order on the calling thread. Results are always
//! returned in index order, so outputs are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Evaluate `f(i)` for `i in 0..n` and collect in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Run `f(chunk_index, chunk)` over consecutive `chunk_len`-sized pieces of
/// `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0, "chunk length must be positive");
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Number of worker threads the helpers above will use.
pub fn current_num_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Run `f` with the helpers restricted to a single worker. Used to compare
/// parallel and sequential execution inside one process.
pub fn run_sequential<R: Send, F: FnOnce() -> R + Send>(f: F) -> R {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool")
            .install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_keeps_order() {
        let v = map_range(1000, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }

    #[test]
    fn chunks_cover_everything() {
        let mut v = vec![0usize; 103];
        for_each_chunk_mut(&mut v, 10, |ci, c| {
            for (k, x) in c.iter_mut().enumerate() {
                *x = ci * 10 + k;
            }
        });
        assert!(v.iter().enumerate().all(|(i, &x)| x == i));
    }

    #[test]
    fn sequential_matches_parallel() {
        let a = map_range(500, |i| (i as f64).sqrt());
        let b = run_sequential(|| map_range(500, |i| (i as f64).sqrt()));
        assert_eq!(a, b);
    }
}
