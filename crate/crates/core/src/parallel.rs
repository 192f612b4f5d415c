//! Data-parallel dispatch helpers.
//!
//! Every hot kernel in this crate is written against these helpers so the
//! whole crate can be built with or without rayon (`parallel` feature).
//! Work is always split into disjoint output chunks with a fixed sequential
//! order inside each chunk, so results are bit-identical regardless of
//! thread count. The `*_seq` variants exist for benchmark comparison and as
//! the fallback when the feature is disabled.

/// Apply `f` to equal `chunk_size` slices of `data`, passing the chunk index.
pub fn chunks_mut_indexed<T, F>(data: &mut [T], chunk_size: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_size)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    chunks_mut_indexed_seq(data, chunk_size, f);
}

/// Sequential twin of [`chunks_mut_indexed`].
pub fn chunks_mut_indexed_seq<T, F>(data: &mut [T], chunk_size: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    for (i, chunk) in data.chunks_mut(chunk_size).enumerate() {
        f(i, chunk);
    }
}

/// Map each index in `0..n` to a value, collecting in order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of [`map_indexed`].
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
