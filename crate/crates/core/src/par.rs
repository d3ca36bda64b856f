//! Data-parallel primitives.
//!
//! With the `parallel` feature every helper dispatches to rayon; without it the
//! same closures run on the calling thread. Reductions are always formed as
//! per-block partial sums added in block order, so parallel and sequential
//! builds return bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Block length used by the ordered reductions.
const BLOCK: usize = 256;

/// `out[i] = f(i)` for every index.
pub fn fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
    #[cfg(not(feature = "parallel"))]
    out.iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
}

/// Build a vector of length `len` from `f(i)`.
pub fn collect<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Apply `f(row_index, row)` to consecutive rows of length `row_len`, giving each
/// worker its own scratch value built by `init`.
pub fn rows_with_scratch<T, S, I, F>(data: &mut [T], row_len: usize, init: I, f: F)
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(row_len)
        .enumerate()
        .for_each_init(init, |s, (r, row)| f(s, r, row));
    #[cfg(not(feature = "parallel"))]
    {
        let mut s = init();
        data.chunks_mut(row_len)
            .enumerate()
            .for_each(|(r, row)| f(&mut s, r, row));
    }
}

/// Ordered sum of `f(i)` for `i < len`.
pub fn sum<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let blocks = len.div_ceil(BLOCK);
    let partial = collect(blocks, |b| {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(len);
        (lo..hi).map(&f).sum::<f64>()
    });
    partial.into_iter().sum()
}

/// Minimum of `f(i)` over `i < len` together with the first index attaining it.
/// NaN entries win, so a poisoned field is never reported as healthy.
pub fn min_by<F>(len: usize, f: F) -> (f64, usize)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let blocks = len.div_ceil(BLOCK);
    let pick = |a: (f64, usize), b: (f64, usize)| {
        if a.0.is_nan() {
            a
        } else if b.0.is_nan() || b.0 < a.0 {
            b
        } else {
            a
        }
    };
    let partial = collect(blocks, |b| {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(len);
        (lo..hi)
            .map(|i| (f(i), i))
            .fold((f64::INFINITY, usize::MAX), pick)
    });
    partial.into_iter().fold((f64::INFINITY, usize::MAX), pick)
}

/// Map a vector of independent jobs, preserving order.
pub fn map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Run two closures, concurrently when the `parallel` feature is on.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::join(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (a(), b())
    }
}
