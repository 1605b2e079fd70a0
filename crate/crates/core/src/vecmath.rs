//! Small dense-vector helpers shared across the crate.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// L2-normalize in place. Returns false (leaving the vector untouched)
/// when the norm is below `1e-12`.
pub fn normalize(a: &mut [f64]) -> bool {
    let n = norm(a);
    if n < 1e-12 {
        return false;
    }
    for x in a.iter_mut() {
        *x /= n;
    }
    true
}

pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let mut v = a.to_vec();
    if normalize(&mut v) {
        Some(v)
    } else {
        None
    }
}

pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
