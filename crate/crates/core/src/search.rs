//! One-dimensional search helpers.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Maximize `f` on `[a, b]` by golden-section search until the bracket is
/// narrower than `tol`. Returns the best evaluated point and its value,
/// endpoints included, so maxima sitting on the boundary are found.
pub fn golden_max<F>(mut f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut best = (lo, f(lo));
    let fb = f(hi);
    if fb > best.1 {
        best = (hi, fb);
    }
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    for (x, v) in [(x1, f1), (x2, f2)] {
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Smallest point of `[lo, hi]` where a monotone predicate turns true, to
/// within `tol`. Assumes `pred(hi)` holds and `pred(lo)` does not.
pub fn bisect_first_true<P>(mut pred: P, mut lo: f64, mut hi: f64, tol: f64) -> f64
where
    P: FnMut(f64) -> bool,
{
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Largest point where a predicate that is true at `lo` and false at `hi`
/// is still true, to within `tol`.
pub fn bisect_last_true<P>(mut pred: P, mut lo: f64, mut hi: f64, tol: f64) -> f64
where
    P: FnMut(f64) -> bool,
{
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `n + 1` evenly spaced points from `a` to `b`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_interior_and_boundary_maxima() {
        let (x, v) = golden_max(|x| -(x - 1.3) * (x - 1.3), 0.0, 3.0, 1e-10, 200);
        assert!((x - 1.3).abs() < 1e-8 && v.abs() < 1e-15);
        let (x, _) = golden_max(|x| -x, 2.0, 5.0, 1e-10, 200);
        assert_eq!(x, 2.0);
    }

    #[test]
    fn bisection_locates_threshold() {
        let t = bisect_first_true(|x| x >= 0.3, 0.0, 1.0, 1e-12);
        assert!((t - 0.3).abs() < 1e-12);
        let t = bisect_last_true(|x| x < 0.7, 0.0, 1.0, 1e-12);
        assert!((t - 0.7).abs() < 1e-12);
    }

    #[test]
    fn linspace_endpoints() {
        let g = linspace(1.0, 2.0, 4);
        assert_eq!(g, vec![1.0, 1.25, 1.5, 1.75, 2.0]);
    }
}
