//! Data-parallel helpers.
//!
//! With the `parallel` feature the closures run on the rayon pool, otherwise
//! they run in order on the calling thread. Every helper hands each closure a
//! disjoint output region, so results are bitwise identical in both modes and
//! for any thread count.

/// Below this many scalar operations a kernel stays on the calling thread.
pub const MIN_PARALLEL_WORK: usize = 1 << 14;

#[cfg(feature = "parallel")]
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    use rayon::prelude::*;
    if chunk == 0 {
        return;
    }
    if work < MIN_PARALLEL_WORK || data.len() <= chunk {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, _work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk == 0 {
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Maps `0..n` through `f`, preserving index order in the result.
#[cfg(feature = "parallel")]
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    (0..n).map(f).collect()
}

/// Number of worker threads the helpers may use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
