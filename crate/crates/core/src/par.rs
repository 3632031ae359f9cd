//! Data-parallel helpers.
//!
//! With the `parallel` feature, [`Execution::Parallel`] fans work out over the
//! rayon pool. Without it every call runs sequentially. Reductions always fold
//! fixed-size chunks in index order, so both modes give bit-identical results.

/// How a data-parallel loop is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Order-preserving map.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Order-preserving map over indices `0..n`.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Map every item and fold the results with `combine`.
///
/// Items are grouped into chunks of `chunk` consecutive elements; each chunk is
/// folded left to right, then chunk results are folded in chunk order. The
/// association is independent of thread count.
pub fn map_reduce_chunked<T, A, M, C>(
    exec: Execution,
    items: &[T],
    chunk: usize,
    map_one: M,
    combine: C,
) -> Option<A>
where
    T: Sync,
    A: Send,
    M: Fn(&T) -> A + Sync + Send,
    C: Fn(A, A) -> A + Sync + Send,
{
    let chunk = chunk.max(1);
    let fold_chunk = |c: &[T]| -> Option<A> {
        let mut it = c.iter();
        let first = map_one(it.next()?);
        Some(it.fold(first, |acc, x| combine(acc, map_one(x))))
    };
    let partials: Vec<Option<A>> = match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_chunks(chunk).map(fold_chunk).collect()
        }
        _ => items.chunks(chunk).map(fold_chunk).collect(),
    };
    partials.into_iter().flatten().reduce(combine)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_reduction_matches_across_modes() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin() * 1e3).collect();
        let a = map_reduce_chunked(Execution::Sequential, &xs, 16, |x| *x * 1.1, |a, b| a + b);
        let b = map_reduce_chunked(Execution::Parallel, &xs, 16, |x| *x * 1.1, |a, b| a + b);
        assert_eq!(a.unwrap().to_bits(), b.unwrap().to_bits());
    }

    #[test]
    fn empty_input_reduces_to_none() {
        let xs: Vec<f64> = vec![];
        assert!(map_reduce_chunked(Execution::default(), &xs, 4, |x| *x, |a, b| a + b).is_none());
    }

    #[test]
    fn map_preserves_order() {
        let xs: Vec<usize> = (0..100).collect();
        assert_eq!(map(Execution::Parallel, &xs, |x| x * 2), map(Execution::Sequential, &xs, |x| x * 2));
        assert_eq!(map_range(Execution::Parallel, 5, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
