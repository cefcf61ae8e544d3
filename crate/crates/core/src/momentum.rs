//! Momentum schedules and the three-sequence `(x, y, z)` update.
//!
//! Each iteration evaluates the gradient estimator at
//! `z_k = (1 - a_{k+1}) y_k + a_{k+1} x_k`, then moves
//! `x_{k+1} = x_k - lambda_k d_k` and `y_{k+1} = z_k - beta_k d_k`.

use crate::error::{config, Result};
use crate::linalg::DenseVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentumKind {
    /// No momentum: the evaluation point is `x` itself.
    None,
    /// `a_k = 2 / (k + 1)`.
    Vanilla,
    /// `a_k = 2 / (k mod q + 1)`.
    EpochRestart,
    /// `a_k = 2 / (ceil(k / q) + 1)`.
    EpochDiminishing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MomentumSchedule {
    pub kind: MomentumKind,
    pub q: usize,
}

impl MomentumSchedule {
    pub fn new(kind: MomentumKind, q: usize) -> Result<Self> {
        if q == 0 && matches!(kind, MomentumKind::EpochRestart | MomentumKind::EpochDiminishing) {
            return config("epochwise momentum needs q >= 1");
        }
        Ok(MomentumSchedule { kind, q })
    }

    pub fn none() -> Self {
        MomentumSchedule {
            kind: MomentumKind::None,
            q: 1,
        }
    }

    /// `a_k` as the exact fraction `2 / denominator`; `None` when the
    /// schedule is off.
    pub fn alpha_ratio(&self, k: usize) -> Option<(u64, u64)> {
        let den = match self.kind {
            MomentumKind::None => return None,
            MomentumKind::Vanilla => k + 1,
            MomentumKind::EpochRestart => k % self.q + 1,
            MomentumKind::EpochDiminishing => k.div_ceil(self.q) + 1,
        };
        Some((2, den as u64))
    }

    pub fn alpha(&self, k: usize) -> Option<f64> {
        self.alpha_ratio(k).map(|(n, d)| n as f64 / d as f64)
    }
}

/// How `lambda_k` is chosen inside `[beta, (1 + a) beta]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LambdaRule {
    Min,
    Mid,
    #[default]
    Max,
}

impl LambdaRule {
    /// With momentum off there is no interval and `lambda = beta`.
    pub fn lambda(&self, beta: f64, alpha: Option<f64>) -> f64 {
        match (self, alpha) {
            (_, None) | (LambdaRule::Min, _) => beta,
            (LambdaRule::Mid, Some(a)) => (1.0 + 0.5 * a) * beta,
            (LambdaRule::Max, Some(a)) => (1.0 + a) * beta,
        }
    }
}

/// `(1 - alpha) y + alpha x`, written as `y + alpha (x - y)` so that equal
/// endpoints give back the endpoint exactly.
pub fn interpolate(x: &DenseVector, y: &DenseVector, alpha: f64) -> DenseVector {
    if alpha == 1.0 {
        return x.clone();
    }
    x.iter()
        .zip(y.iter())
        .map(|(xi, yi)| yi + alpha * (xi - yi))
        .collect::<Vec<f64>>()
        .into()
}

#[derive(Clone, Debug)]
pub struct ThreeSequenceState {
    pub x: DenseVector,
    pub y: DenseVector,
    pub z: DenseVector,
    pub beta: f64,
    pub lambda: f64,
}

impl ThreeSequenceState {
    pub fn new(x0: DenseVector, beta: f64) -> Self {
        ThreeSequenceState {
            y: x0.clone(),
            z: x0.clone(),
            x: x0,
            beta,
            lambda: beta,
        }
    }

    /// Set `z` for the coming iteration from `a_{k+1}` (or `z = x` when
    /// momentum is off) and pick `lambda` with the matching rule.
    pub fn prepare(&mut self, alpha_next: Option<f64>, rule: LambdaRule) {
        self.z = match alpha_next {
            Some(a) => interpolate(&self.x, &self.y, a),
            None => self.x.clone(),
        };
        self.lambda = rule.lambda(self.beta, alpha_next);
    }

    pub fn dual_update(&mut self, d: &DenseVector) {
        for j in 0..d.len() {
            self.x[j] -= self.lambda * d[j];
            self.y[j] = self.z[j] - self.beta * d[j];
        }
    }
}
