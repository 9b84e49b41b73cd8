//! Savitzky–Golay reference by direct least squares, one point at a time.

/// Least-squares polynomial value at each point over its (edge-truncated)
/// window, via SVD on an unscaled Vandermonde matrix.
pub fn savgol_reference(filled: &[f64], window: usize, order: usize) -> Vec<f64> {
    let n = filled.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let m = hi - lo + 1;
            let p = order.min(m - 1) + 1;
            let a = nalgebra::DMatrix::from_fn(m, p, |r, c| {
                ((lo + r) as f64 - i as f64).powi(c as i32)
            });
            let b = nalgebra::DVector::from_iterator(m, filled[lo..=hi].iter().copied());
            let svd = a.svd(true, true);
            let coef = svd.solve(&b, 1e-14).unwrap();
            coef[0]
        })
        .collect()
}
