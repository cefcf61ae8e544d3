//! SPIDER gradient estimator.
//!
//! At an epoch boundary (`k mod q == 0`) the estimate is refreshed: the exact
//! full gradient for finite sums, or the mean over a large fresh batch in the
//! online setting. In between it is advanced recursively,
//!
//! ```text
//! v_k = grad f_B(x_k) - grad f_B(x_{k-1}) + v_{k-1}
//! ```
//!
//! with one minibatch `B` evaluated at both points.

use rand::Rng;

use crate::error::{config, Error, Result};
use crate::linalg::DenseVector;
use crate::objectives::{CountedOracle, Objective, OracleCounter, SampleSource, StreamingOracle};
use crate::rng::RunRng;

/// Where gradients come from: a finite sum or a stream.
pub trait GradientSource {
    type Batch;

    fn dim(&self) -> usize;

    /// Estimate used at epoch boundaries.
    fn refresh_grad(&mut self, x: &DenseVector, rng: &mut RunRng) -> Result<DenseVector>;

    fn draw_batch(&mut self, size: usize, rng: &mut RunRng) -> Self::Batch;

    fn batch_grad(&mut self, batch: &Self::Batch, x: &DenseVector) -> Result<DenseVector>;

    /// Gradient of a batch already charged in this step, at another point.
    fn batch_grad_repeat(&mut self, batch: &Self::Batch, x: &DenseVector) -> Result<DenseVector>;

    /// Gradients of the same batch at two points.
    fn batch_grad_pair(
        &mut self,
        batch: &Self::Batch,
        x: &DenseVector,
        x_prev: &DenseVector,
    ) -> Result<(DenseVector, DenseVector)>;

    #[doc(hidden)]
    fn mismatched_pair(
        &mut self,
        batch: &Self::Batch,
        other: &Self::Batch,
        x: &DenseVector,
        x_prev: &DenseVector,
    ) -> Result<(DenseVector, DenseVector)>;

    fn counter(&self) -> OracleCounter;

    /// Objective value for monitoring; never counted.
    fn value(&self, x: &DenseVector) -> f64;

    /// True gradient (or its best available estimate) for monitoring; never
    /// counted.
    fn monitor_grad(&self, x: &DenseVector) -> DenseVector;
}

/// Finite-sum source: uniform sampling with replacement from `{0..n-1}`.
pub struct FiniteSum<'a, O: Objective> {
    oracle: CountedOracle<'a, O>,
}

impl<'a, O: Objective> FiniteSum<'a, O> {
    pub fn new(oracle: CountedOracle<'a, O>) -> Self {
        FiniteSum { oracle }
    }

    pub fn oracle(&self) -> &CountedOracle<'a, O> {
        &self.oracle
    }
}

impl<O: Objective> GradientSource for FiniteSum<'_, O> {
    type Batch = Vec<usize>;

    fn dim(&self) -> usize {
        self.oracle.objective().dim()
    }

    fn refresh_grad(&mut self, x: &DenseVector, _rng: &mut RunRng) -> Result<DenseVector> {
        self.oracle.full_grad(x)
    }

    fn draw_batch(&mut self, size: usize, rng: &mut RunRng) -> Vec<usize> {
        let n = self.oracle.objective().num_components();
        (0..size).map(|_| rng.gen_range(0..n)).collect()
    }

    fn batch_grad(&mut self, batch: &Vec<usize>, x: &DenseVector) -> Result<DenseVector> {
        self.oracle.batch_grad(batch, x)
    }

    fn batch_grad_repeat(&mut self, batch: &Vec<usize>, x: &DenseVector) -> Result<DenseVector> {
        self.oracle.batch_grad_repeat(batch, x)
    }

    fn batch_grad_pair(
        &mut self,
        batch: &Vec<usize>,
        x: &DenseVector,
        x_prev: &DenseVector,
    ) -> Result<(DenseVector, DenseVector)> {
        self.oracle.batch_grad_pair(batch, x, x_prev)
    }

    fn mismatched_pair(
        &mut self,
        batch: &Vec<usize>,
        other: &Vec<usize>,
        x: &DenseVector,
        x_prev: &DenseVector,
    ) -> Result<(DenseVector, DenseVector)> {
        self.oracle.mismatched_pair(batch, other, x, x_prev)
    }

    fn counter(&self) -> OracleCounter {
        self.oracle.counter()
    }

    fn value(&self, x: &DenseVector) -> f64 {
        self.oracle.value(x)
    }

    fn monitor_grad(&self, x: &DenseVector) -> DenseVector {
        crate::objectives::objective_grad(self.oracle.objective(), x, self.oracle.exec())
    }
}

/// Online source: every sample is a fresh draw; refreshes use
/// `refresh_batch` draws.
pub struct Online<'a, S: SampleSource> {
    oracle: &'a mut StreamingOracle<S>,
    refresh_batch: usize,
    baseline: OracleCounter,
}

impl<'a, S: SampleSource> Online<'a, S> {
    pub fn new(oracle: &'a mut StreamingOracle<S>, refresh_batch: usize) -> Result<Self> {
        if refresh_batch == 0 {
            return config("refresh batch must be >= 1");
        }
        let baseline = oracle.counter();
        Ok(Online {
            oracle,
            refresh_batch,
            baseline,
        })
    }
}

impl<S: SampleSource> GradientSource for Online<'_, S> {
    type Batch = Vec<S::Sample>;

    fn dim(&self) -> usize {
        self.oracle.dim()
    }

    fn refresh_grad(&mut self, x: &DenseVector, rng: &mut RunRng) -> Result<DenseVector> {
        let batch = self.oracle.draw_batch(self.refresh_batch, rng);
        self.oracle.batch_grad(&batch, x)
    }

    fn draw_batch(&mut self, size: usize, rng: &mut RunRng) -> Vec<S::Sample> {
        self.oracle.draw_batch(size, rng)
    }

    fn batch_grad(&mut self, batch: &Vec<S::Sample>, x: &DenseVector) -> Result<DenseVector> {
        self.oracle.batch_grad(batch, x)
    }

    fn batch_grad_repeat(&mut self, batch: &Vec<S::Sample>, x: &DenseVector) -> Result<DenseVector> {
        self.oracle.batch_grad_repeat(batch, x)
    }

    fn batch_grad_pair(
        &mut self,
        batch: &Vec<S::Sample>,
        x: &DenseVector,
        x_prev: &DenseVector,
    ) -> Result<(DenseVector, DenseVector)> {
        self.oracle.batch_grad_pair(batch, x, x_prev)
    }

    fn mismatched_pair(
        &mut self,
        batch: &Vec<S::Sample>,
        other: &Vec<S::Sample>,
        x: &DenseVector,
        x_prev: &DenseVector,
    ) -> Result<(DenseVector, DenseVector)> {
        self.oracle.mismatched_pair(batch, other, x, x_prev)
    }

    fn counter(&self) -> OracleCounter {
        let c = self.oracle.counter();
        OracleCounter {
            component_grad_evals: c.component_grad_evals - self.baseline.component_grad_evals,
            paper_sfo: c.paper_sfo - self.baseline.paper_sfo,
            full_grad_evals: c.full_grad_evals - self.baseline.full_grad_evals,
        }
    }

    fn value(&self, x: &DenseVector) -> f64 {
        self.oracle.value(x)
    }

    fn monitor_grad(&self, x: &DenseVector) -> DenseVector {
        self.oracle.grad(x)
    }
}

/// Running SPIDER estimate.
#[derive(Clone, Debug)]
pub struct SpiderState {
    v: DenseVector,
    prev_point: DenseVector,
    k: usize,
    q: usize,
    batch: usize,
    mismatched_batches: bool,
}

impl SpiderState {
    pub fn new(dim: usize, q: usize, batch: usize) -> Result<Self> {
        if q == 0 {
            return config("epoch length q must be >= 1");
        }
        if batch == 0 {
            return config("minibatch size must be >= 1");
        }
        Ok(SpiderState {
            v: DenseVector::zeros(dim),
            prev_point: DenseVector::zeros(dim),
            k: 0,
            q,
            batch,
            mismatched_batches: false,
        })
    }

    /// Fault injection: evaluate the two points on independent batches.
    #[doc(hidden)]
    pub fn with_mismatched_batches(mut self, on: bool) -> Self {
        self.mismatched_batches = on;
        self
    }

    /// Current estimate `v_{k-1}` (after `k` steps).
    pub fn v(&self) -> &DenseVector {
        &self.v
    }

    pub fn prev_point(&self) -> &DenseVector {
        &self.prev_point
    }

    /// Number of steps taken so far; the next step has this index.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn at_epoch_boundary(&self) -> bool {
        self.k.is_multiple_of(self.q)
    }

    pub fn refresh<G: GradientSource>(
        &mut self,
        src: &mut G,
        point: &DenseVector,
        rng: &mut RunRng,
    ) -> Result<&DenseVector> {
        if !self.at_epoch_boundary() {
            return Err(Error::Contract(format!(
                "refresh at k = {} is off the epoch boundary (q = {})",
                self.k, self.q
            )));
        }
        self.v = src.refresh_grad(point, rng)?;
        self.prev_point = point.clone();
        self.k += 1;
        Ok(&self.v)
    }

    pub fn advance<G: GradientSource>(
        &mut self,
        src: &mut G,
        point: &DenseVector,
        rng: &mut RunRng,
    ) -> Result<&DenseVector> {
        if self.at_epoch_boundary() {
            return Err(Error::Contract(format!(
                "advance at k = {} must be a refresh (q = {})",
                self.k, self.q
            )));
        }
        let batch = src.draw_batch(self.batch, rng);
        let (g_now, g_prev) = if self.mismatched_batches {
            let other = src.draw_batch(self.batch, rng);
            src.mismatched_pair(&batch, &other, point, &self.prev_point)?
        } else {
            src.batch_grad_pair(&batch, point, &self.prev_point)?
        };
        for j in 0..self.v.len() {
            self.v[j] += g_now[j] - g_prev[j];
        }
        self.prev_point = point.clone();
        self.k += 1;
        Ok(&self.v)
    }

    /// Refresh or advance, whichever step `k` calls for.
    pub fn step<G: GradientSource>(
        &mut self,
        src: &mut G,
        point: &DenseVector,
        rng: &mut RunRng,
    ) -> Result<&DenseVector> {
        if self.at_epoch_boundary() {
            self.refresh(src, point, rng)
        } else {
            self.advance(src, point, rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::linalg::SparseExample;
    use crate::objectives::{GaussianLinearStream, QuadraticFamily, SvmSigmoidObjective};
    use crate::rng::run_rng;

    #[test]
    fn refresh_gives_full_gradient_and_guards_schedule() {
        let fam = QuadraticFamily::random(10, 3, 1.0, 2);
        let mut src = FiniteSum::new(CountedOracle::new(&fam));
        let mut st = SpiderState::new(3, 4, 2).unwrap();
        let mut rng = run_rng(0);
        let x = DenseVector::from_vec(vec![0.1, 0.2, -0.3]);
        let want = crate::objectives::objective_grad(&fam, &x, crate::objectives::Exec::Sequential);
        assert_eq!(st.refresh(&mut src, &x, &mut rng).unwrap(), &want);
        assert_eq!(src.counter().paper_sfo, 10);
        assert!(matches!(st.refresh(&mut src, &x, &mut rng), Err(Error::Contract(_))));
        st.advance(&mut src, &x, &mut rng).unwrap();
        assert_eq!(src.counter().paper_sfo, 12);
        assert_eq!(src.counter().component_grad_evals, 14);
        st.advance(&mut src, &x, &mut rng).unwrap();
        st.advance(&mut src, &x, &mut rng).unwrap();
        assert!(matches!(st.advance(&mut src, &x, &mut rng), Err(Error::Contract(_))));
        assert!(SpiderState::new(3, 0, 1).is_err());
        assert!(SpiderState::new(3, 1, 0).is_err());
    }

    #[test]
    fn unchanged_point_leaves_estimate_unchanged() {
        let fam = QuadraticFamily::random(10, 2, 1.0, 5);
        let mut src = FiniteSum::new(CountedOracle::new(&fam));
        let mut st = SpiderState::new(2, 100, 3).unwrap();
        let mut rng = run_rng(1);
        let x = DenseVector::from_vec(vec![0.5, -0.5]);
        let v0 = st.step(&mut src, &x, &mut rng).unwrap().clone();
        for _ in 0..10 {
            assert_eq!(st.step(&mut src, &x, &mut rng).unwrap(), &v0);
        }
    }

    #[test]
    fn identical_components_track_the_true_gradient() {
        let same = vec![SparseExample::new(vec![0, 1], vec![0.3, 0.8], 1.0).unwrap(); 7];
        let obj = SvmSigmoidObjective::new(Dataset::new(same, 2).unwrap(), 0.01);
        let mut src = FiniteSum::new(CountedOracle::new(&obj));
        let mut st = SpiderState::new(2, 50, 2).unwrap();
        let mut rng = run_rng(2);
        let mut x = DenseVector::from_vec(vec![0.1, 0.1]);
        for k in 0..20 {
            let v = st.step(&mut src, &x, &mut rng).unwrap().clone();
            let g = src.monitor_grad(&x);
            for j in 0..2 {
                assert!((v[j] - g[j]).abs() <= 1e-14 * (1.0 + g[j].abs()), "k={k}");
            }
            x[0] -= 0.05 * v[0];
            x[1] += 0.03;
        }
    }

    #[test]
    fn zero_variance_stream_refresh() {
        let s = GaussianLinearStream::new(vec![1.0, 3.0], vec![0.5, -1.0], 0.0);
        let mut so = StreamingOracle::new(s, 1.0, 1, 0).unwrap();
        let mut src = Online::new(&mut so, 16).unwrap();
        let mut st = SpiderState::new(2, 3, 4).unwrap();
        let mut rng = run_rng(3);
        let x = DenseVector::from_vec(vec![2.0, 1.0]);
        let v = st.refresh(&mut src, &x, &mut rng).unwrap().clone();
        assert_eq!(v, src.monitor_grad(&x));
        assert_eq!(src.counter().paper_sfo, 16);
    }

    #[test]
    fn mismatched_batches_change_the_estimate() {
        let fam = QuadraticFamily::random(10, 2, 1.0, 5);
        let mut src = FiniteSum::new(CountedOracle::new(&fam));
        let mut st = SpiderState::new(2, 100, 3).unwrap().with_mismatched_batches(true);
        let mut rng = run_rng(1);
        let x = DenseVector::from_vec(vec![0.5, -0.5]);
        let v0 = st.step(&mut src, &x, &mut rng).unwrap().clone();
        let moved = (0..10).any(|_| st.step(&mut src, &x, &mut rng).unwrap() != &v0);
        assert!(moved);
    }
}
