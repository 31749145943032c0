//! Small dense vector helpers shared by the model, index, and metrics.
//!
//! All accumulation loops run in index order so results are bit-reproducible;
//! the same `dot` is used by training, brute-force search, and the HNSW index,
//! which keeps their similarity values bitwise comparable.

/// Norm floor used when normalizing: vectors shorter than this are scaled by
/// `1 / EPS_NORM` instead of their true norm to avoid division blow-up.
pub const EPS_NORM: f64 = 1e-12;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `a` to unit L2 norm in place, with the [`EPS_NORM`] floor on the
/// divisor. Returns the pre-scaling norm.
pub fn normalize_in_place(a: &mut [f64]) -> f64 {
    let n = norm(a);
    let div = n.max(EPS_NORM);
    for x in a.iter_mut() {
        *x /= div;
    }
    n
}

pub fn normalized(mut a: Vec<f64>) -> Vec<f64> {
    normalize_in_place(&mut a);
    a
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_and_norm() {
        assert_eq!(dot(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]), 32.0);
        assert_eq!(norm(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn normalize_regular_vector() {
        let v = normalized(vec![3.0, 4.0]);
        assert_eq!(v, vec![0.6, 0.8]);
    }

    #[test]
    fn normalize_zero_vector_uses_floor() {
        let mut v = vec![0.0, 0.0];
        let n = normalize_in_place(&mut v);
        assert_eq!(n, 0.0);
        assert!(v.iter().all(|x| x.is_finite()));
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn sigmoid_reference_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((sigmoid(-4.0) - 0.017_986_209_962_091_56).abs() < 1e-15);
        // Stable in both tails.
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
    }
}
