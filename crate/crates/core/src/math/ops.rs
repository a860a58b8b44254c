//! Kernel operations: products, softmax, sigmoid, order statistics.
//!
//! Summation orders are fixed and documented per routine. `median`, `mean`,
//! and `stddev` sort their input internally, which makes them exactly
//! permutation-invariant.

use crate::error::{Error, Result};
use crate::math::matrix::{Matrix, Vector};
use crate::scalar::Scalar;

// ─── Products ────────────────────────────────────────────────────────────────

/// `a · b`. Each output entry sums its products left-to-right (ascending
/// inner index), with output entries produced in row-major order.
pub fn matmul<F: Scalar>(a: &Matrix<F>, b: &Matrix<F>) -> Result<Matrix<F>> {
    if a.cols() != b.rows() {
        return Err(Error::DimMismatch(format!(
            "matmul: {}x{} times {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut c = Matrix::zeros(a.rows(), b.cols());
    matmul_acc(&mut c, a, b);
    Ok(c)
}

/// `c += a · b`. Shapes must already agree.
///
/// Loop order is (row, inner, col): per output entry the inner index still
/// accumulates in ascending order, identical to a naive left-to-right dot,
/// while the inner loop runs over contiguous rows of `b` and `c`.
pub fn matmul_acc<F: Scalar>(c: &mut Matrix<F>, a: &Matrix<F>, b: &Matrix<F>) {
    debug_assert_eq!(a.cols(), b.rows());
    debug_assert_eq!((c.rows(), c.cols()), (a.rows(), b.cols()));
    for i in 0..a.rows() {
        let a_row = a.row(i);
        let c_row = c.row_mut(i);
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = b.row(k);
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    }
}

/// `c += aᵀ · b`, used for weight-gradient accumulation.
///
/// Sums over rows of `a`/`b` in ascending order, so the result is
/// bit-identical to `matmul_acc(c, transpose(a), b)`.
pub fn matmul_tn_acc<F: Scalar>(c: &mut Matrix<F>, a: &Matrix<F>, b: &Matrix<F>) {
    debug_assert_eq!(a.rows(), b.rows());
    debug_assert_eq!((c.rows(), c.cols()), (a.cols(), b.cols()));
    for k in 0..a.rows() {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            let c_row = c.row_mut(i);
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aki * bv;
            }
        }
    }
}

/// Dot product, summed left-to-right.
#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `w · x` for a row-major `w`, each output entry a left-to-right dot.
pub fn matvec<F: Scalar>(w: &Matrix<F>, x: &[F]) -> Result<Vector<F>> {
    if w.cols() != x.len() {
        return Err(Error::DimMismatch(format!(
            "matvec: {}x{} times vector of dim {}",
            w.rows(),
            w.cols(),
            x.len()
        )));
    }
    let mut out = Vector::zeros(w.rows());
    for i in 0..w.rows() {
        out[i] = dot(w.row(i), x);
    }
    Ok(out)
}

/// `out += scale * (w · x)`.
pub fn matvec_acc<F: Scalar>(out: &mut [F], w: &Matrix<F>, x: &[F], scale: F) {
    debug_assert_eq!(w.cols(), x.len());
    debug_assert_eq!(w.rows(), out.len());
    for (i, o) in out.iter_mut().enumerate() {
        *o += scale * dot(w.row(i), x);
    }
}

/// Row-vector times matrix, `x · w`. Per output entry the row index of `w`
/// accumulates in ascending order, matching [`matmul`] on a 1-row left factor.
pub fn vecmat<F: Scalar>(x: &[F], w: &Matrix<F>) -> Result<Vector<F>> {
    if x.len() != w.rows() {
        return Err(Error::DimMismatch(format!(
            "vecmat: vector of dim {} times {}x{}",
            x.len(),
            w.rows(),
            w.cols()
        )));
    }
    let mut out = Vector::zeros(w.cols());
    for (k, &xk) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.row(k)) {
            *o += xk * wv;
        }
    }
    Ok(out)
}

// ─── Pointwise nonlinearities ────────────────────────────────────────────────

/// Numerically stable softmax with max-subtraction.
///
/// Output entries are positive and sum to 1 within 1e-12 for any finite
/// input of length ≤ 4096.
pub fn softmax<F: Scalar>(v: &Vector<F>) -> Result<Vector<F>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let mut out = v.clone();
    softmax_in_place(out.as_mut_slice());
    Ok(out)
}

/// In-place softmax over a slice; used for attention rows.
///
/// The caller guarantees a non-empty slice of finite values.
pub fn softmax_in_place<F: Scalar>(xs: &mut [F]) {
    debug_assert!(!xs.is_empty());
    let mut max = xs[0];
    for &x in xs.iter() {
        if x > max {
            max = x;
        }
    }
    let mut sum = F::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Logistic sigmoid, stable in both tails.
#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

// ─── Order statistics ────────────────────────────────────────────────────────

fn sorted_copy<F: Scalar>(xs: &[F]) -> Vec<F> {
    let mut v = xs.to_vec();
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    v
}

/// Middle order statistic; for even cardinality, the mean of the two middle
/// values. Exactly permutation-invariant.
pub fn median<F: Scalar>(xs: &[F]) -> Result<F> {
    if xs.is_empty() {
        return Err(Error::Empty("median input"));
    }
    let v = sorted_copy(xs);
    let n = v.len();
    if n % 2 == 1 {
        Ok(v[n / 2])
    } else {
        Ok((v[n / 2 - 1] + v[n / 2]) / F::from_f64(2.0))
    }
}

/// Arithmetic mean, summed in ascending value order (permutation-invariant).
pub fn mean<F: Scalar>(xs: &[F]) -> Result<F> {
    if xs.is_empty() {
        return Err(Error::Empty("mean input"));
    }
    let v = sorted_copy(xs);
    let mut sum = F::zero();
    for &x in &v {
        sum += x;
    }
    Ok(sum / F::from_f64(v.len() as f64))
}

/// Population standard deviation (divide by n). Exactly permutation-invariant
/// because accumulation runs over the sorted values.
pub fn stddev<F: Scalar>(xs: &[F]) -> Result<F> {
    if xs.is_empty() {
        return Err(Error::Empty("stddev input"));
    }
    let v = sorted_copy(xs);
    let n = F::from_f64(v.len() as f64);
    let mut sum = F::zero();
    for &x in &v {
        sum += x;
    }
    let mu = sum / n;
    let mut var = F::zero();
    for &x in &v {
        let d = x - mu;
        var += d * d;
    }
    Ok((var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // ── matmul oracles ──

    #[test]
    fn matmul_identity_passes_through() {
        let m = Matrix::from_rows(&[&[1.0, -2.5, 3.0], &[0.5, 4.0, -1.0], &[7.0, 0.0, 2.0]])
            .unwrap();
        let i = Matrix::identity(3);
        assert_eq!(matmul(&i, &m).unwrap(), m);
        assert_eq!(matmul(&m, &i).unwrap(), m);
    }

    #[test]
    fn matmul_hand_evaluated_case() {
        // [[1,2],[3,4]] x [[1],[1]] = [[3],[7]]
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[&[1.0], &[1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), (2, 1));
        assert_eq!(c[(0, 0)], 3.0);
        assert_eq!(c[(1, 0)], 7.0);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Matrix::<f64>::zeros(2, 3);
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        let c = matmul(&z, &m).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_rejects_dimension_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 2);
        assert!(matches!(matmul(&a, &b), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn transposed_accumulate_matches_explicit_transpose() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        let b = Matrix::from_rows(&[&[0.5, -1.0], &[2.0, 0.25], &[-3.0, 1.5]]).unwrap();
        let mut c = Matrix::zeros(2, 2);
        matmul_tn_acc(&mut c, &a, &b);
        let reference = matmul(&a.transposed(), &b).unwrap();
        assert_eq!(c, reference); // bit-identical: same summation order
    }

    #[test]
    fn vecmat_matches_single_row_matmul() {
        let w = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        let x = [2.0, -1.0];
        let y = vecmat(&x, &w).unwrap();
        let xm = Matrix::from_vec(1, 2, x.to_vec()).unwrap();
        let reference = matmul(&xm, &w).unwrap();
        assert_eq!(y.as_slice(), reference.row(0));
        assert!(vecmat(&[1.0], &w).is_err());
    }

    #[test]
    fn matvec_matches_matmul_column() {
        let w = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        let x = [1.0, 0.5, -1.0];
        let y = matvec(&w, &x).unwrap();
        assert_eq!(y.as_slice(), &[1.0 + 1.0 - 3.0, 4.0 + 2.5 - 6.0]);
        assert!(matvec(&w, &[1.0, 2.0]).is_err());
    }

    // ── softmax oracles ──

    #[test]
    fn softmax_uniform_on_constant_input() {
        let v = Vector::from_vec(vec![0.0f64, 0.0, 0.0]);
        let s = softmax(&v).unwrap();
        for &x in s.iter() {
            assert_eq!(x, 1.0 / 3.0);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let v = Vector::from_vec(vec![1000.0f64, 0.0]);
        let s = softmax(&v).unwrap();
        assert!(s[0].is_finite() && s[1].is_finite());
        assert!(s[0] > 1.0 - 1e-12);
        assert!(s[1] >= 0.0 && s[1] < 1e-300);
    }

    #[test]
    fn softmax_closed_form_two_to_one() {
        let v = Vector::from_vec(vec![2.0f64.ln(), 0.0]);
        let s = softmax(&v).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_empty_input() {
        assert!(matches!(softmax(&Vector::<f64>::zeros(0)), Err(Error::Empty(_))));
    }

    #[test]
    fn softmax_normalizes_at_max_supported_length() {
        let data: Vec<f64> = (0..4096).map(|i| ((i * 2654435761_usize) % 997) as f64 / 99.7 - 5.0).collect();
        let s = softmax(&Vector::from_vec(data)).unwrap();
        let sum: f64 = s.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    // ── sigmoid oracles ──

    #[test]
    fn sigmoid_fixed_points() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(3.0f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_symmetry_and_monotonicity() {
        for &x in &[0.1f64, 1.0, 3.5, 20.0, 700.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
        let xs = [-5.0f64, -1.0, 0.0, 0.5, 2.0, 10.0];
        for w in xs.windows(2) {
            assert!(sigmoid(w[0]) < sigmoid(w[1]));
        }
    }

    // ── median / stddev oracles ──

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[0.2f64, 0.9, 0.4]).unwrap(), 0.4);
        assert_eq!(median(&[1.0f64, 3.0]).unwrap(), 2.0);
        assert!(matches!(median::<f64>(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn stddev_closed_forms() {
        assert_eq!(stddev(&[2.0f64, 2.0, 2.0]).unwrap(), 0.0);
        assert!(stddev(&[0.7f64, 0.7, 0.7]).unwrap() < 1e-15);
        assert_eq!(stddev(&[-1.0f64, 1.0]).unwrap(), 1.0);
        // {0.8, 0.9, 1.0}: population std = sqrt(0.02/3)
        let s = stddev(&[0.8f64, 0.9, 1.0]).unwrap();
        assert!((s - 0.081_649_658_092_772_6).abs() < 1e-12);
        assert!(matches!(stddev::<f64>(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn mean_matches_naive_on_sorted_input() {
        let xs = [1.0f64, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs).unwrap(), 2.5);
    }

    // ── properties ──

    proptest! {
        #[test]
        fn softmax_sums_to_one(data in proptest::collection::vec(-30.0f64..30.0, 1..512)) {
            let s = softmax(&Vector::from_vec(data)).unwrap();
            let sum: f64 = s.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.iter().all(|&x| x > 0.0));
        }

        #[test]
        fn matmul_is_associative_within_tolerance(
            a in proptest::collection::vec(-1.0f64..1.0, 12),
            b in proptest::collection::vec(-1.0f64..1.0, 12),
            c in proptest::collection::vec(-1.0f64..1.0, 12),
        ) {
            let a = Matrix::from_vec(3, 4, a).unwrap();
            let b = Matrix::from_vec(4, 3, b).unwrap();
            let c = Matrix::from_vec(3, 4, c).unwrap();
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (l, r) in left.data().iter().zip(right.data()) {
                let denom = l.abs().max(r.abs()).max(1.0);
                prop_assert!((l - r).abs() / denom < 1e-9);
            }
        }

        #[test]
        fn median_and_stddev_are_permutation_invariant(
            mut data in proptest::collection::vec(-100.0f64..100.0, 1..64),
            rot in 0usize..64,
        ) {
            let m0 = median(&data).unwrap();
            let s0 = stddev(&data).unwrap();
            let k = rot % data.len();
            data.rotate_left(k);
            data.reverse();
            prop_assert_eq!(median(&data).unwrap(), m0); // exact
            prop_assert_eq!(stddev(&data).unwrap(), s0); // exact
        }

        #[test]
        fn median_lies_between_extremes(data in proptest::collection::vec(0.0f64..1.0, 1..100)) {
            let m = median(&data).unwrap();
            let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo && m <= hi);
        }
    }
}
