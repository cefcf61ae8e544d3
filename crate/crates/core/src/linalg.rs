//! Dense and sparse vector arithmetic.
//!
//! Summation is always left to right so results are bit-reproducible.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// A dense real vector of fixed dimension.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn zeros(d: usize) -> Self {
        DenseVector(vec![0.0; d])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        DenseVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn norm_sq(&self) -> f64 {
        dot_slices(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Returns `self - other`.
    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        check_len(self.len(), other.len())?;
        Ok(DenseVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scaled(&self, alpha: f64) -> DenseVector {
        DenseVector(self.0.iter().map(|v| alpha * v).collect())
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        DenseVector(v)
    }
}

/// One data point `(a_i, b_i)` with a sparse feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseExample {
    indices: Vec<usize>,
    values: Vec<f64>,
    pub label: f64,
}

impl SparseExample {
    /// Builds an example, checking that indices are strictly ascending and
    /// pair up with the values.
    pub fn new(indices: Vec<usize>, values: Vec<f64>, label: f64) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Dimension {
                expected: indices.len(),
                got: values.len(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "sparse indices must be strictly ascending".into(),
            ));
        }
        Ok(SparseExample {
            indices,
            values,
            label,
        })
    }

    pub fn empty(label: f64) -> Self {
        SparseExample {
            indices: Vec::new(),
            values: Vec::new(),
            label,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// One past the largest stored index, or 0 when empty.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i + 1)
    }

    pub fn norm_sq(&self) -> f64 {
        dot_slices(&self.values, &self.values)
    }

    pub fn to_dense(&self, d: usize) -> Result<DenseVector> {
        check_index_bound(self, d)?;
        let mut out = DenseVector::zeros(d);
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        Ok(out)
    }

    pub(crate) fn dot_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            acc += v * x[i];
        }
        acc
    }

    /// `out += alpha * a`
    pub(crate) fn add_scaled_to(&self, alpha: f64, out: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] += alpha * v;
        }
    }

    pub(crate) fn scale_features(&mut self, scale: &[f64]) {
        for (&i, v) in self.indices.iter().zip(self.values.iter_mut()) {
            *v *= scale[i];
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::Dimension { expected, got })
    } else {
        Ok(())
    }
}

fn check_index_bound(e: &SparseExample, d: usize) -> Result<()> {
    if e.min_dim() > d {
        Err(Error::Dimension {
            expected: d,
            got: e.min_dim(),
        })
    } else {
        Ok(())
    }
}

pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `y += alpha * x` in place.
pub(crate) fn axpy_in_place(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn dot(a: &DenseVector, b: &DenseVector) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(dot_slices(a, b))
}

/// `<a, x>` for a sparse example `a`.
pub fn sparse_dot(e: &SparseExample, x: &DenseVector) -> Result<f64> {
    check_index_bound(e, x.len())?;
    Ok(e.dot_unchecked(x))
}

/// Returns `y + alpha * x`.
pub fn axpy(alpha: f64, x: &DenseVector, y: &DenseVector) -> Result<DenseVector> {
    check_len(y.len(), x.len())?;
    let mut out = y.clone();
    axpy_in_place(alpha, x, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut i = 0;
        while i < a.len() {
            s += a[i] * b[i];
            i += 1;
        }
        s
    }

    #[test]
    fn dot_examples() {
        let a = DenseVector::from_vec(vec![1.0, 2.0, 3.0]);
        let ones = DenseVector::from_vec(vec![1.0; 3]);
        assert_eq!(dot(&a, &ones).unwrap(), 6.0);
        assert_eq!(dot(&a, &DenseVector::zeros(3)).unwrap(), 0.0);
        assert!(matches!(
            dot(&a, &DenseVector::zeros(2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn dot_matches_naive_loop() {
        let mut rng = crate::rng::run_rng(1);
        for _ in 0..50 {
            let d = rng.gen_range(1..200);
            let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let got = dot(&a.clone().into(), &b.clone().into()).unwrap();
            let want = naive_dot(&a, &b);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300));
        }
    }

    #[test]
    fn sparse_dot_examples() {
        let e = SparseExample::new(vec![0, 2], vec![0.5, 2.0], 1.0).unwrap();
        let x = DenseVector::from_vec(vec![1.0; 3]);
        assert_eq!(sparse_dot(&e, &x).unwrap(), 2.5);
        assert_eq!(sparse_dot(&SparseExample::empty(1.0), &x).unwrap(), 0.0);
        let short = DenseVector::from_vec(vec![1.0; 2]);
        assert!(sparse_dot(&e, &short).is_err());
    }

    #[test]
    fn sparse_example_rejects_bad_indices() {
        assert!(SparseExample::new(vec![2, 1], vec![1.0, 1.0], 1.0).is_err());
        assert!(SparseExample::new(vec![1, 1], vec![1.0, 1.0], 1.0).is_err());
        assert!(SparseExample::new(vec![1], vec![1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn axpy_examples() {
        let y = DenseVector::from_vec(vec![1.0, -2.0, 3.5]);
        let x = DenseVector::from_vec(vec![7.0, 8.0, 9.0]);
        assert_eq!(axpy(0.0, &x, &y).unwrap(), y);
        let neg = y.scaled(-1.0);
        assert_eq!(axpy(1.0, &neg, &y).unwrap(), DenseVector::zeros(3));
        assert!(axpy(1.0, &DenseVector::zeros(2), &y).is_err());
    }

    proptest! {
        #[test]
        fn sparse_dot_equals_densified_dot(
            entries in prop::collection::btree_map(0usize..40, -10.0f64..10.0, 0..20),
            xs in prop::collection::vec(-10.0f64..10.0, 40),
        ) {
            let (idx, vals): (Vec<usize>, Vec<f64>) = entries.into_iter().unzip();
            let e = SparseExample::new(idx, vals, 1.0).unwrap();
            let x = DenseVector::from_vec(xs);
            let dense = e.to_dense(40).unwrap();
            // zero entries add exact zeros, so the two sums agree bitwise
            prop_assert_eq!(sparse_dot(&e, &x).unwrap(), dot(&dense, &x).unwrap());
        }

        #[test]
        fn axpy_matches_elementwise(
            alpha in -3.0f64..3.0,
            pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64),
        ) {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let out = axpy(alpha, &xs.clone().into(), &ys.clone().into()).unwrap();
            for i in 0..xs.len() {
                prop_assert!((out[i] - (ys[i] + alpha * xs[i])).abs() <= 1e-15);
            }
        }

        #[test]
        fn dot_is_symmetric(pairs in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 0..64)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (a, b) = (DenseVector::from_vec(a), DenseVector::from_vec(b));
            prop_assert_eq!(dot(&a, &b).unwrap(), dot(&b, &a).unwrap());
        }
    }
}
