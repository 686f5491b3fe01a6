//! Execution policy for the data-parallel loops.
//!
//! Every hot loop in the crate goes through [`Exec`], so the same build can
//! run a loop sequentially or on the rayon pool. Without the `parallel`
//! feature both variants run sequentially. Reductions are blocked with a
//! fixed block size and summed in block order, so results are bitwise
//! identical regardless of the variant or thread count.

use std::marker::PhantomData;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Block length used by the deterministic reductions.
pub const REDUCE_BLOCK: usize = 2048;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    pub fn for_each<F>(self, n: usize, f: F)
    where
        F: Fn(usize) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            (0..n).into_par_iter().for_each(f);
            return;
        }
        (0..n).for_each(f)
    }

    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
            return;
        }
        items.iter_mut().enumerate().for_each(|(i, x)| f(i, x))
    }

    /// Visits `items` in chunks of `chunk` elements; the closure receives the
    /// chunk index.
    pub fn for_each_chunk_mut<T, F>(self, items: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            items.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
        items.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c))
    }

    /// Deterministic blocked dot product.
    pub fn dot(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let nblocks = a.len().div_ceil(REDUCE_BLOCK);
        let partial = |blk: usize| {
            let lo = blk * REDUCE_BLOCK;
            let hi = (lo + REDUCE_BLOCK).min(a.len());
            a[lo..hi]
                .iter()
                .zip(&b[lo..hi])
                .fold(0.0, |acc, (x, y)| acc + x * y)
        };
        if nblocks <= 4 || !self.is_parallel() {
            return (0..nblocks).map(partial).fold(0.0, |acc, p| acc + p);
        }
        self.map(nblocks, partial).into_iter().fold(0.0, |acc, p| acc + p)
    }

    pub fn norm(self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }
}

/// A named worker pool standing in for one compute tier.
pub struct WorkerPool {
    name: String,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl WorkerPool {
    /// `threads == 0` uses the global rayon pool.
    pub fn new(name: impl Into<String>, threads: usize) -> Self {
        let name = name.into();
        #[cfg(feature = "parallel")]
        {
            let pool = if threads == 0 {
                None
            } else {
                let prefix = name.clone();
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .thread_name(move |i| format!("{prefix}-{i}"))
                    .build()
                    .ok()
            };
            WorkerPool { name, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            WorkerPool { name }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn install<R, F>(&self, f: F) -> R
    where
        R: Send,
        F: FnOnce() -> R + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(f);
        }
        f()
    }
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool").field("name", &self.name).finish()
    }
}

/// Shared mutable view of a slice for writers that touch provably disjoint
/// indices (element colouring guarantees this for nodal scatter).
pub(crate) struct DisjointSlice<'a, T> {
    ptr: *mut T,
    len: usize,
    _marker: PhantomData<&'a mut [T]>,
}

unsafe impl<T: Send> Send for DisjointSlice<'_, T> {}
unsafe impl<T: Send> Sync for DisjointSlice<'_, T> {}

impl<'a, T> DisjointSlice<'a, T> {
    pub(crate) fn new(slice: &'a mut [T]) -> Self {
        DisjointSlice {
            ptr: slice.as_mut_ptr(),
            len: slice.len(),
            _marker: PhantomData,
        }
    }

    /// # Safety
    /// No two threads may hold a reference to the same index at once.
    #[allow(clippy::mut_from_ref)]
    pub(crate) unsafe fn get(&self, i: usize) -> &mut T {
        assert!(i < self.len);
        &mut *self.ptr.add(i)
    }
}

/// f64 accumulator with atomic compare-and-swap adds; summation order is
/// scheduling dependent.
pub(crate) struct AtomicF64Vec {
    bits: Vec<AtomicU64>,
}

impl AtomicF64Vec {
    pub(crate) fn zeros(n: usize) -> Self {
        AtomicF64Vec {
            bits: (0..n).map(|_| AtomicU64::new(0f64.to_bits())).collect(),
        }
    }

    pub(crate) fn add(&self, i: usize, v: f64) {
        let cell = &self.bits[i];
        let mut cur = cell.load(Ordering::Relaxed);
        loop {
            let next = (f64::from_bits(cur) + v).to_bits();
            match cell.compare_exchange_weak(cur, next, Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => break,
                Err(actual) => cur = actual,
            }
        }
    }

    pub(crate) fn into_vec(self) -> Vec<f64> {
        self.bits
            .into_iter()
            .map(|b| f64::from_bits(b.into_inner()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_dot_is_identical_across_policies() {
        let a: Vec<f64> = (0..50_000u64)
            .map(|i| ((i * 7919) % 1013) as f64 * 1e-3 - 0.4)
            .collect();
        let b: Vec<f64> = (0..50_000u64)
            .map(|i| ((i * 104_729) % 977) as f64 * 1e-2 + 0.1)
            .collect();
        let s = Exec::Sequential.dot(&a, &b);
        let p = Exec::Parallel.dot(&a, &b);
        assert_eq!(s.to_bits(), p.to_bits());
    }

    #[test]
    fn atomic_accumulator_sums() {
        let acc = AtomicF64Vec::zeros(3);
        Exec::Parallel.for_each(300, |i| acc.add(i % 3, 1.0));
        assert_eq!(acc.into_vec(), vec![100.0, 100.0, 100.0]);
    }
}
