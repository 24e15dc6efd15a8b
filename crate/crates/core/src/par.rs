//! Deterministic parallel helpers.
//!
//! Reductions collect per-index (or per-chunk) partial results and combine
//! them in a fixed order, so outputs are bitwise identical regardless of
//! the rayon thread count.

use rayon::prelude::*;

/// Maps `f` over `0..n` in parallel, preserving order.
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_and_is_deterministic() {
        let a = map_indexed(10_001, |i| (i as f64).sin());
        let b = map_indexed(10_001, |i| (i as f64).sin());
        assert_eq!(a, b);
        assert_eq!(a[7], (7f64).sin());
    }
}
