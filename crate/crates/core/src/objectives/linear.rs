//! Linear-model objectives `f_i(x) = phi(b_i, <a_i, x>) + R(x)`.

use super::Objective;
use crate::data::Dataset;

/// A loss of the margin `t = <a, x>` given label `b`.
pub trait MarginLoss: Sync + Send + Clone {
    fn value(&self, b: f64, t: f64) -> f64;
    /// `d/dt value(b, t)`
    fn deriv(&self, b: f64, t: f64) -> f64;
    /// `sup_t |d^2/dt^2 value(b, t)|` for `|b| <= b_max`.
    fn curvature(&self, b_max: f64) -> f64;
}

/// `1 - tanh(b t)`
#[derive(Clone, Copy, Debug, Default)]
pub struct SigmoidLoss;

impl MarginLoss for SigmoidLoss {
    fn value(&self, b: f64, t: f64) -> f64 {
        1.0 - (b * t).tanh()
    }

    fn deriv(&self, b: f64, t: f64) -> f64 {
        let th = (b * t).tanh();
        -b * (1.0 - th * th)
    }

    fn curvature(&self, b_max: f64) -> f64 {
        // max |2 tanh sech^2| = 4 / (3 sqrt 3)
        b_max * b_max * 4.0 / (3.0 * 3f64.sqrt())
    }
}

/// `log((b - t)^2 / 2 + 1)`
#[derive(Clone, Copy, Debug, Default)]
pub struct RobustLog;

impl MarginLoss for RobustLog {
    fn value(&self, b: f64, t: f64) -> f64 {
        let r = b - t;
        (0.5 * r * r).ln_1p()
    }

    fn deriv(&self, b: f64, t: f64) -> f64 {
        let r = b - t;
        -r / (0.5 * r * r + 1.0)
    }

    fn curvature(&self, _b_max: f64) -> f64 {
        // l''(r) = (1 - r^2/2) / (1 + r^2/2)^2, largest magnitude at r = 0
        1.0
    }
}

/// Cross-entropy of `sigmoid(t)` against `y = 1` if `b > 0` else `y = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LogisticCrossEntropy;

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl MarginLoss for LogisticCrossEntropy {
    fn value(&self, b: f64, t: f64) -> f64 {
        // -[y log s(t) + (1 - y) log(1 - s(t))] = softplus(t) - y t
        if b > 0.0 {
            softplus(-t)
        } else {
            softplus(t)
        }
    }

    fn deriv(&self, b: f64, t: f64) -> f64 {
        if b > 0.0 {
            sigmoid(t) - 1.0
        } else {
            sigmoid(t)
        }
    }

    fn curvature(&self, _b_max: f64) -> f64 {
        0.25
    }
}

/// Term shared by every component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularizer {
    None,
    /// `r ||x||^2`
    Ridge(f64),
    /// `r sum_j x_j^2 / (1 + x_j^2)`
    Nonconvex(f64),
}

impl Regularizer {
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::Ridge(r) => r * crate::linalg::dot_slices(x, x),
            Regularizer::Nonconvex(r) => {
                let mut acc = 0.0;
                for &xj in x {
                    let s = xj * xj;
                    acc += s / (1.0 + s);
                }
                r * acc
            }
        }
    }

    pub fn add_grad(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            Regularizer::None => {}
            Regularizer::Ridge(r) => {
                for (o, &xj) in out.iter_mut().zip(x) {
                    *o += 2.0 * r * xj;
                }
            }
            Regularizer::Nonconvex(r) => {
                for (o, &xj) in out.iter_mut().zip(x) {
                    let den = 1.0 + xj * xj;
                    *o += r * 2.0 * xj / (den * den);
                }
            }
        }
    }

    /// `sup_x ||hess R(x)||`
    pub fn curvature(&self) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::Ridge(r) => 2.0 * r.abs(),
            // d^2/dx^2 x^2/(1+x^2) = 2(1 - 3x^2)/(1+x^2)^3, peak |.| = 2 at 0
            Regularizer::Nonconvex(r) => 2.0 * r.abs(),
        }
    }
}

/// Finite-sum objective over a sparse dataset.
#[derive(Clone, Debug)]
pub struct LinearModelObjective<L> {
    data: Dataset,
    loss: L,
    reg: Regularizer,
}

/// `f_i(x) = 1 - tanh(b_i <x, a_i>) + r ||x||^2`
pub type SvmSigmoidObjective = LinearModelObjective<SigmoidLoss>;
/// `f_i(x) = log((b_i - <x, a_i>)^2 / 2 + 1)`
pub type RobustRegressionObjective = LinearModelObjective<RobustLog>;
/// `f_i(x) = CE(b_i, sigmoid(<x, a_i>)) + r sum_j x_j^2 / (1 + x_j^2)`
pub type NonconvexLogisticObjective = LinearModelObjective<LogisticCrossEntropy>;

impl<L: MarginLoss> LinearModelObjective<L> {
    pub fn with_loss(data: Dataset, loss: L, reg: Regularizer) -> Self {
        LinearModelObjective { data, loss, reg }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn loss(&self) -> &L {
        &self.loss
    }

    pub fn regularizer(&self) -> Regularizer {
        self.reg
    }
}

impl SvmSigmoidObjective {
    pub fn new(data: Dataset, r: f64) -> Self {
        Self::with_loss(data, SigmoidLoss, Regularizer::Ridge(r))
    }
}

impl RobustRegressionObjective {
    pub fn new(data: Dataset) -> Self {
        Self::with_loss(data, RobustLog, Regularizer::None)
    }
}

impl NonconvexLogisticObjective {
    pub fn new(data: Dataset, r: f64) -> Self {
        Self::with_loss(data, LogisticCrossEntropy, Regularizer::Nonconvex(r))
    }
}

impl<L: MarginLoss> Objective for LinearModelObjective<L> {
    type Partial = f64;

    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn num_components(&self) -> usize {
        self.data.len()
    }

    fn data_value(&self, i: usize, x: &[f64]) -> f64 {
        let e = &self.data.examples()[i];
        self.loss.value(e.label, e.dot_unchecked(x))
    }

    fn shared_value(&self, x: &[f64]) -> f64 {
        self.reg.value(x)
    }

    fn partial(&self, i: usize, x: &[f64]) -> f64 {
        let e = &self.data.examples()[i];
        self.loss.deriv(e.label, e.dot_unchecked(x))
    }

    fn accumulate(&self, i: usize, partial: &f64, scale: f64, out: &mut [f64]) {
        self.data.examples()[i].add_scaled_to(scale * partial, out);
    }

    fn add_shared_grad(&self, x: &[f64], out: &mut [f64]) {
        self.reg.add_grad(x, out);
    }

    fn curvature_bound(&self) -> Option<f64> {
        let ex = self.data.examples();
        let b_max = ex.iter().map(|e| e.label.abs()).fold(0.0, f64::max);
        let a_max = ex.iter().map(|e| e.norm_sq()).fold(0.0, f64::max);
        Some(self.loss.curvature(b_max) * a_max + self.reg.curvature())
    }
}
