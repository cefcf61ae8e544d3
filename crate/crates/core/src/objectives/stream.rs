//! Streaming (online) oracles: `f(x) = E_u[f_u(x)]`, sampled on demand.

use rand_distr::{Distribution, StandardNormal};

use super::linear::{MarginLoss, Regularizer};
use super::OracleCounter;
use crate::data::SyntheticGenerator;
use crate::error::{Error, Result};
use crate::linalg::{DenseVector, SparseExample};
use crate::rng::{derived_rng, RunRng};

/// A distribution over component functions.
pub trait SampleSource: Sync {
    type Sample: Send + Sync;

    fn dim(&self) -> usize;

    fn draw(&self, rng: &mut RunRng) -> Self::Sample;

    fn sample_value(&self, s: &Self::Sample, x: &[f64]) -> f64;

    /// `out += scale * grad f_s(x)` excluding the shared term.
    fn add_sample_grad(&self, s: &Self::Sample, x: &[f64], scale: f64, out: &mut [f64]);

    fn shared_value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn add_shared_grad(&self, _x: &[f64], _out: &mut [f64]) {}

    /// Exact population objective, when it has a closed form.
    fn population_value(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    fn population_grad(&self, _x: &[f64]) -> Option<DenseVector> {
        None
    }
}

/// `f_u(x) = 1/2 sum_j h_j x_j^2 - <u, x>` with `u ~ N(mu, s^2 I)`.
///
/// Component gradients are affine in `x` and their deviation from the mean
/// gradient is `mu - u`, so `sigma_1^2 = d s^2` exactly.
#[derive(Clone, Debug)]
pub struct GaussianLinearStream {
    pub curvature: Vec<f64>,
    pub mean: Vec<f64>,
    pub noise: f64,
}

impl GaussianLinearStream {
    pub fn new(curvature: Vec<f64>, mean: Vec<f64>, noise: f64) -> Self {
        assert_eq!(curvature.len(), mean.len());
        GaussianLinearStream {
            curvature,
            mean,
            noise,
        }
    }

    pub fn sigma1(&self) -> f64 {
        self.noise * (self.mean.len() as f64).sqrt()
    }
}

impl SampleSource for GaussianLinearStream {
    type Sample = Vec<f64>;

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn draw(&self, rng: &mut RunRng) -> Vec<f64> {
        self.mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.noise * z
            })
            .collect()
    }

    fn sample_value(&self, u: &Vec<f64>, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..x.len() {
            acc += 0.5 * self.curvature[j] * x[j] * x[j] - u[j] * x[j];
        }
        acc
    }

    fn add_sample_grad(&self, u: &Vec<f64>, x: &[f64], scale: f64, out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] += scale * (self.curvature[j] * x[j] - u[j]);
        }
    }

    fn population_value(&self, x: &[f64]) -> Option<f64> {
        Some(self.sample_value(&self.mean, x))
    }

    fn population_grad(&self, x: &[f64]) -> Option<DenseVector> {
        let mut g = DenseVector::zeros(x.len());
        self.add_sample_grad(&self.mean, x, 1.0, &mut g);
        Some(g)
    }
}

/// Fresh synthetic examples from the same generator as the finite-sum
/// synthetic datasets, scored with a linear-model loss.
#[derive(Clone, Debug)]
pub struct LinearModelStream<L> {
    generator: SyntheticGenerator,
    loss: L,
    reg: Regularizer,
}

impl<L: MarginLoss> LinearModelStream<L> {
    pub fn new(generator: SyntheticGenerator, loss: L, reg: Regularizer) -> Self {
        LinearModelStream {
            generator,
            loss,
            reg,
        }
    }
}

impl<L: MarginLoss> SampleSource for LinearModelStream<L> {
    type Sample = SparseExample;

    fn dim(&self) -> usize {
        self.generator.dim()
    }

    fn draw(&self, rng: &mut RunRng) -> SparseExample {
        self.generator.draw_example(rng)
    }

    fn sample_value(&self, e: &SparseExample, x: &[f64]) -> f64 {
        self.loss.value(e.label, e.dot_unchecked(x))
    }

    fn add_sample_grad(&self, e: &SparseExample, x: &[f64], scale: f64, out: &mut [f64]) {
        let c = self.loss.deriv(e.label, e.dot_unchecked(x));
        e.add_scaled_to(scale * c, out);
    }

    fn shared_value(&self, x: &[f64]) -> f64 {
        self.reg.value(x)
    }

    fn add_shared_grad(&self, x: &[f64], out: &mut [f64]) {
        self.reg.add_grad(x, out);
    }
}

/// Counted access to a [`SampleSource`].
///
/// `sigma1` is the caller's bound on the per-sample gradient standard
/// deviation; it is used only by parameter recipes. Objective values for
/// monitoring use the closed form when the source has one, otherwise the
/// mean over a held-out sample drawn once at construction.
pub struct StreamingOracle<S: SampleSource> {
    source: S,
    sigma1: f64,
    counter: OracleCounter,
    holdout: Vec<S::Sample>,
}

impl<S: SampleSource> StreamingOracle<S> {
    pub fn new(source: S, sigma1: f64, holdout_size: usize, seed: u64) -> Result<Self> {
        if !(sigma1 > 0.0) {
            return Err(Error::Config(format!("sigma1 must be > 0, got {sigma1}")));
        }
        let mut rng = derived_rng(seed, 0x5eed_0001);
        let holdout = if source.population_value(&vec![0.0; source.dim()]).is_some() {
            Vec::new()
        } else {
            (0..holdout_size.max(1)).map(|_| source.draw(&mut rng)).collect()
        };
        Ok(StreamingOracle {
            source,
            sigma1,
            counter: OracleCounter::default(),
            holdout,
        })
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn counter(&self) -> OracleCounter {
        self.counter
    }

    pub fn draw_batch(&self, size: usize, rng: &mut RunRng) -> Vec<S::Sample> {
        (0..size).map(|_| self.source.draw(rng)).collect()
    }

    fn mean_grad(&self, batch: &[S::Sample], x: &[f64]) -> DenseVector {
        let mut out = DenseVector::zeros(self.dim());
        for s in batch {
            self.source.add_sample_grad(s, x, 1.0, &mut out);
        }
        let m = batch.len() as f64;
        for o in out.iter_mut() {
            *o /= m;
        }
        self.source.add_shared_grad(x, &mut out);
        out
    }

    fn check(&self, batch_len: usize, x: &[f64]) -> Result<()> {
        if batch_len == 0 {
            return Err(Error::Config("empty minibatch".into()));
        }
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn batch_grad(&mut self, batch: &[S::Sample], x: &DenseVector) -> Result<DenseVector> {
        self.check(batch.len(), x)?;
        self.counter.charge(batch.len(), batch.len());
        Ok(self.mean_grad(batch, x))
    }

    /// Re-evaluates an already charged batch; counts evaluations only.
    pub fn batch_grad_repeat(&mut self, batch: &[S::Sample], x: &DenseVector) -> Result<DenseVector> {
        self.check(batch.len(), x)?;
        self.counter.charge(batch.len(), 0);
        Ok(self.mean_grad(batch, x))
    }

    pub fn batch_grad_pair(
        &mut self,
        batch: &[S::Sample],
        x: &DenseVector,
        x_prev: &DenseVector,
    ) -> Result<(DenseVector, DenseVector)> {
        self.check(batch.len(), x)?;
        self.check(batch.len(), x_prev)?;
        self.counter.charge(2 * batch.len(), batch.len());
        Ok((self.mean_grad(batch, x), self.mean_grad(batch, x_prev)))
    }

    pub(crate) fn mismatched_pair(
        &mut self,
        batch: &[S::Sample],
        other: &[S::Sample],
        x: &DenseVector,
        x_prev: &DenseVector,
    ) -> Result<(DenseVector, DenseVector)> {
        self.check(batch.len(), x)?;
        self.check(other.len(), x_prev)?;
        self.counter.charge(batch.len() + other.len(), batch.len());
        Ok((self.mean_grad(batch, x), self.mean_grad(other, x_prev)))
    }

    /// Population value (exact or held-out estimate); uncounted.
    pub fn value(&self, x: &DenseVector) -> f64 {
        if let Some(v) = self.source.population_value(x) {
            return v;
        }
        let mut acc = 0.0;
        for s in &self.holdout {
            acc += self.source.sample_value(s, x);
        }
        acc / self.holdout.len() as f64 + self.source.shared_value(x)
    }

    /// Population gradient (exact or held-out estimate); uncounted.
    pub fn grad(&self, x: &DenseVector) -> DenseVector {
        if let Some(g) = self.source.population_grad(x) {
            return g;
        }
        self.mean_grad(&self.holdout, x)
    }
}
