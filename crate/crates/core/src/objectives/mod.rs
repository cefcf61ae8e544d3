//! Finite-sum objective oracles `f(x) = (1/n) sum_i f_i(x)`.
//!
//! An [`Objective`] evaluates components; a [`CountedOracle`] wraps one and
//! charges every gradient evaluation to an [`OracleCounter`]. Batch gradients
//! are evaluated in two phases: per-component partials (embarrassingly
//! parallel, pure reads) followed by a left-to-right accumulation. The
//! accumulation order never depends on the execution mode, so sequential and
//! parallel runs are bitwise identical.

mod linear;
mod quadratic;
mod stream;

pub use linear::{
    LinearModelObjective, LogisticCrossEntropy, MarginLoss, NonconvexLogisticObjective,
    Regularizer, RobustRegressionObjective, RobustLog, SigmoidLoss, SvmSigmoidObjective,
};
pub use quadratic::{QuadraticComponent, QuadraticFamily};
pub use stream::{
    GaussianLinearStream, LinearModelStream, SampleSource, StreamingOracle,
};

use crate::error::{Error, Result};
use crate::linalg::DenseVector;

/// Below this many components a batch is always evaluated sequentially.
pub const PARALLEL_MIN_BATCH: usize = 256;

/// How batch evaluations are scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled; falls back
    /// to sequential evaluation otherwise.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Tally of oracle calls made by one run.
///
/// `component_grad_evals` counts every single-component gradient evaluated.
/// `paper_sfo` charges a SPIDER/SVRG difference step `|batch|` rather than
/// `2|batch|`, so `component_grad_evals >= paper_sfo` always.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OracleCounter {
    pub component_grad_evals: u64,
    pub paper_sfo: u64,
    pub full_grad_evals: u64,
}

impl OracleCounter {
    pub(crate) fn charge(&mut self, evals: usize, sfo: usize) {
        self.component_grad_evals += evals as u64;
        self.paper_sfo += sfo as u64;
    }
}

/// A smooth finite-sum objective.
pub trait Objective: Sync {
    /// Result of the parallelizable per-component phase of a gradient.
    type Partial: Send;

    fn dim(&self) -> usize;

    fn num_components(&self) -> usize;

    /// Component loss without the shared term.
    fn data_value(&self, i: usize, x: &[f64]) -> f64;

    /// Term common to every component (e.g. a regularizer).
    fn shared_value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn partial(&self, i: usize, x: &[f64]) -> Self::Partial;

    /// `out += scale * grad(data_value_i)(x)` given the partial for `i`.
    fn accumulate(&self, i: usize, partial: &Self::Partial, scale: f64, out: &mut [f64]);

    /// `out += grad(shared_value)(x)`
    fn add_shared_grad(&self, _x: &[f64], _out: &mut [f64]) {}

    /// A bound on `||hess f_i(x)||` valid for all `i` and `x`, if known.
    fn curvature_bound(&self) -> Option<f64> {
        None
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        self.data_value(i, x) + self.shared_value(x)
    }
}

fn partials<O: Objective>(obj: &O, idx: &[usize], x: &[f64], exec: Exec) -> Vec<O::Partial> {
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && idx.len() >= PARALLEL_MIN_BATCH {
        use rayon::prelude::*;
        return idx.par_iter().map(|&i| obj.partial(i, x)).collect();
    }
    let _ = exec;
    idx.iter().map(|&i| obj.partial(i, x)).collect()
}

/// Mean gradient over a non-empty index multiset, uncounted.
pub(crate) fn mean_grad<O: Objective>(obj: &O, idx: &[usize], x: &[f64], exec: Exec) -> DenseVector {
    let ps = partials(obj, idx, x, exec);
    let mut out = DenseVector::zeros(obj.dim());
    for (&i, p) in idx.iter().zip(&ps) {
        obj.accumulate(i, p, 1.0, &mut out);
    }
    let m = idx.len() as f64;
    for o in out.iter_mut() {
        *o /= m;
    }
    obj.add_shared_grad(x, &mut out);
    out
}

/// Full objective value `(1/n) sum_i f_i(x)`, uncounted.
pub fn objective_value<O: Objective>(obj: &O, x: &[f64], exec: Exec) -> f64 {
    let n = obj.num_components();
    let vals: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            if exec.is_parallel() && n >= PARALLEL_MIN_BATCH {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(|i| obj.data_value(i, x)).collect()
            } else {
                (0..n).map(|i| obj.data_value(i, x)).collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = exec;
            (0..n).map(|i| obj.data_value(i, x)).collect()
        }
    };
    let mut acc = 0.0;
    for v in vals {
        acc += v;
    }
    acc / n as f64 + obj.shared_value(x)
}

/// Exact full gradient, uncounted.
pub fn objective_grad<O: Objective>(obj: &O, x: &[f64], exec: Exec) -> DenseVector {
    let all: Vec<usize> = (0..obj.num_components()).collect();
    mean_grad(obj, &all, x, exec)
}

/// An objective together with the oracle counter of one run.
pub struct CountedOracle<'a, O: Objective> {
    obj: &'a O,
    counter: OracleCounter,
    exec: Exec,
}

impl<'a, O: Objective> CountedOracle<'a, O> {
    pub fn new(obj: &'a O) -> Self {
        CountedOracle {
            obj,
            counter: OracleCounter::default(),
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn objective(&self) -> &'a O {
        self.obj
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn counter(&self) -> OracleCounter {
        self.counter
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.obj.dim() {
            return Err(Error::Dimension {
                expected: self.obj.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[usize]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Config("empty minibatch".into()));
        }
        let n = self.obj.num_components();
        if let Some(&index) = batch.iter().find(|&&i| i >= n) {
            return Err(Error::Oracle { index, n });
        }
        Ok(())
    }

    /// `grad f_i(x)`; one SFO.
    pub fn component_grad(&mut self, i: usize, x: &DenseVector) -> Result<DenseVector> {
        self.batch_grad(&[i], x)
    }

    /// Mean of component gradients over a multiset; `|batch|` SFO.
    pub fn batch_grad(&mut self, batch: &[usize], x: &DenseVector) -> Result<DenseVector> {
        self.check_point(x)?;
        self.check_batch(batch)?;
        self.counter.charge(batch.len(), batch.len());
        Ok(mean_grad(self.obj, batch, x, self.exec))
    }

    /// `grad f_B(x)` for a batch already charged in the current step: the
    /// evaluations are counted but no further SFO.
    pub fn batch_grad_repeat(&mut self, batch: &[usize], x: &DenseVector) -> Result<DenseVector> {
        self.check_point(x)?;
        self.check_batch(batch)?;
        self.counter.charge(batch.len(), 0);
        Ok(mean_grad(self.obj, batch, x, self.exec))
    }

    /// `(grad f_B(x), grad f_B(x_prev))` for one minibatch `B`.
    ///
    /// Costs `2|B|` evaluations but only `|B|` SFO under the difference
    /// convention.
    pub fn batch_grad_pair(
        &mut self,
        batch: &[usize],
        x: &DenseVector,
        x_prev: &DenseVector,
    ) -> Result<(DenseVector, DenseVector)> {
        self.check_point(x)?;
        self.check_point(x_prev)?;
        self.check_batch(batch)?;
        self.counter.charge(2 * batch.len(), batch.len());
        Ok(self.pair_uncounted(batch, batch, x, x_prev))
    }

    /// Like [`batch_grad_pair`](Self::batch_grad_pair) but with distinct
    /// batches at the two points. Used only for fault injection.
    pub(crate) fn mismatched_pair(
        &mut self,
        batch: &[usize],
        other: &[usize],
        x: &DenseVector,
        x_prev: &DenseVector,
    ) -> Result<(DenseVector, DenseVector)> {
        self.check_batch(batch)?;
        self.check_batch(other)?;
        self.counter.charge(batch.len() + other.len(), batch.len());
        Ok(self.pair_uncounted(batch, other, x, x_prev))
    }

    fn pair_uncounted(
        &self,
        b1: &[usize],
        b2: &[usize],
        x: &DenseVector,
        x_prev: &DenseVector,
    ) -> (DenseVector, DenseVector) {
        #[cfg(feature = "parallel")]
        if self.exec.is_parallel() && b1.len() >= PARALLEL_MIN_BATCH {
            return rayon::join(
                || mean_grad(self.obj, b1, x, self.exec),
                || mean_grad(self.obj, b2, x_prev, self.exec),
            );
        }
        (
            mean_grad(self.obj, b1, x, self.exec),
            mean_grad(self.obj, b2, x_prev, self.exec),
        )
    }

    /// Exact `(1/n) sum_i grad f_i(x)`; `n` SFO and one full-gradient call.
    pub fn full_grad(&mut self, x: &DenseVector) -> Result<DenseVector> {
        self.check_point(x)?;
        let n = self.obj.num_components();
        self.counter.charge(n, n);
        self.counter.full_grad_evals += 1;
        Ok(objective_grad(self.obj, x, self.exec))
    }

    /// Full objective value; not an SFO charge (monitoring only).
    pub fn value(&self, x: &DenseVector) -> f64 {
        objective_value(self.obj, x, self.exec)
    }
}

/// Largest central-difference discrepancy of the full gradient:
/// `max_j |(f(x+h e_j) - f(x-h e_j)) / 2h - g_j| / (1 + |g_j|)`.
pub fn grad_check<O: Objective>(obj: &O, x: &DenseVector, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let g = objective_grad(obj, x, Exec::Sequential);
    grad_check_against(obj, x, &g, h)
}

/// [`grad_check`] against a caller-supplied gradient.
pub fn grad_check_against<O: Objective>(
    obj: &O,
    x: &DenseVector,
    grad: &DenseVector,
    h: f64,
) -> Result<f64> {
    if x.len() != obj.dim() || grad.len() != obj.dim() {
        return Err(Error::Dimension {
            expected: obj.dim(),
            got: x.len().min(grad.len()),
        });
    }
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        let orig = probe[j];
        probe[j] = orig + h;
        let fp = objective_value(obj, &probe, Exec::Sequential);
        probe[j] = orig - h;
        let fm = objective_value(obj, &probe, Exec::Sequential);
        probe[j] = orig;
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - grad[j]).abs() / (1.0 + grad[j].abs()));
    }
    Ok(worst)
}
