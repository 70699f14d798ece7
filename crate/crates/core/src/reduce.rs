//! Deterministic tree reductions.

/// Combines `items` in a fixed binary-tree order (left half, right half).
/// The result depends only on the order of `items`.
pub fn pairwise_reduce<T, F>(items: Vec<T>, combine: &F) -> Option<T>
where
    F: Fn(T, T) -> T,
{
    fn rec<T, F: Fn(T, T) -> T>(mut items: Vec<T>, combine: &F) -> T {
        if items.len() == 1 {
            return items.pop().unwrap();
        }
        let hi = items.split_off(items.len() / 2);
        let a = rec(items, combine);
        let b = rec(hi, combine);
        combine(a, b)
    }
    if items.is_empty() {
        None
    } else {
        Some(rec(items, combine))
    }
}

/// Pairwise sum of `f(0) + ... + f(n - 1)`.
pub fn pairwise_sum_by<T, F>(n: usize, f: &F) -> T
where
    T: Copy + std::ops::Add<Output = T> + Default,
    F: Fn(usize) -> T,
{
    fn rec<T, F>(lo: usize, hi: usize, f: &F) -> T
    where
        T: Copy + std::ops::Add<Output = T> + Default,
        F: Fn(usize) -> T,
    {
        match hi - lo {
            0 => T::default(),
            1 => f(lo),
            len => {
                let mid = lo + len / 2;
                rec(lo, mid, f) + rec(mid, hi, f)
            }
        }
    }
    rec(0, n, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_order_is_fixed() {
        let v: Vec<f64> = (0..1000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let a = pairwise_reduce(v.clone(), &|x, y| x + y).unwrap();
        let b = pairwise_sum_by(v.len(), &|i| v[i]);
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(pairwise_reduce(Vec::<f64>::new(), &|x, y| x + y).is_none());
    }
}
