//! Stochastic damped L-BFGS.
//!
//! [`LbfgsMemory`] keeps the last `m` damped curvature pairs and realizes the
//! inverse-Hessian approximation
//!
//! ```text
//! H_0 = I                                   (no pairs yet)
//! H_0 = I / gamma,  gamma = max(y'y / s'y, delta)
//! H_i = (I - rho_j s_j yh_j') H_{i-1} (I - rho_j yh_j s_j') + rho_j s_j s_j'
//! ```
//!
//! without ever forming a matrix. Each incoming gradient difference `y` is
//! blended with `gamma * s` so that `s'yh >= 0.25 gamma s's`, which keeps
//! every `H_i` positive definite on nonconvex problems.

use std::collections::VecDeque;

use crate::error::{config, Error, Result};
use crate::linalg::{axpy_in_place, dot_slices, DenseVector};

/// Deliberate defects for exercising the invariant audit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DampingFaults {
    /// Always take `theta = 1`.
    pub damping_off: bool,
    /// Use `gamma = y'y / s'y` without the `delta` floor.
    pub gamma_floor_off: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvaturePair {
    /// Iterate difference.
    pub s: DenseVector,
    /// Damped gradient difference.
    pub y_hat: DenseVector,
    /// `1 / s'y_hat`
    pub rho: f64,
}

/// What one [`LbfgsMemory::update`] call did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairUpdate {
    pub accepted: bool,
    pub s_dot_y: f64,
    pub s_dot_y_hat: f64,
    pub s_norm_sq: f64,
    pub gamma: f64,
    pub theta: f64,
}

impl PairUpdate {
    fn skipped() -> Self {
        PairUpdate {
            accepted: false,
            s_dot_y: 0.0,
            s_dot_y_hat: 0.0,
            s_norm_sq: 0.0,
            gamma: f64::NAN,
            theta: f64::NAN,
        }
    }

    /// `s'y_hat / (0.25 gamma s's)`; at least 1 for every damped pair.
    pub fn damping_margin(&self) -> f64 {
        self.s_dot_y_hat / (0.25 * self.gamma * self.s_norm_sq)
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsMemory {
    pairs: VecDeque<CurvaturePair>,
    capacity: usize,
    delta: f64,
    gamma: Option<f64>,
    theta_last: f64,
    faults: DampingFaults,
}

impl LbfgsMemory {
    /// A memory of `capacity` pairs. Capacity 0 disables curvature entirely
    /// and every direction is the input vector itself.
    pub fn new(capacity: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return config(format!("delta must be a positive finite number, got {delta}"));
        }
        Ok(LbfgsMemory {
            pairs: VecDeque::with_capacity(capacity),
            capacity,
            delta,
            gamma: None,
            theta_last: 1.0,
            faults: DampingFaults::default(),
        })
    }

    pub fn with_faults(mut self, faults: DampingFaults) -> Self {
        self.faults = faults;
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Scaling of the current initial matrix `H_0 = I / gamma`; `None` until
    /// the first pair is stored.
    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn theta_last(&self) -> f64 {
        self.theta_last
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Stored pairs, oldest first.
    pub fn pairs(&self) -> impl Iterator<Item = &CurvaturePair> {
        self.pairs.iter()
    }

    /// Damps and stores the pair `(s, y)`.
    ///
    /// `point_norm` is the norm of the current iterate; pairs with
    /// `||s|| <= 1e-14 (1 + point_norm)` are skipped.
    pub fn update(
        &mut self,
        s: &DenseVector,
        y: &DenseVector,
        point_norm: f64,
    ) -> Result<PairUpdate> {
        if s.len() != y.len() {
            return Err(Error::Dimension {
                expected: s.len(),
                got: y.len(),
            });
        }
        if !s.is_finite() || !y.is_finite() {
            return Err(Error::Numerical("non-finite curvature pair".into()));
        }
        if self.capacity == 0 {
            return Ok(PairUpdate::skipped());
        }
        let ss = dot_slices(s, s);
        let s_norm = ss.sqrt();
        if s_norm <= 1e-14 * (1.0 + point_norm) {
            return Ok(PairUpdate::skipped());
        }
        let sy = dot_slices(s, y);
        let yy = dot_slices(y, y);
        let curvature_eps = 1e-12 * (1.0 + s_norm * yy.sqrt());

        let gamma = if sy > curvature_eps {
            let ratio = yy / sy;
            if self.faults.gamma_floor_off {
                ratio
            } else {
                ratio.max(self.delta)
            }
        } else {
            self.delta
        };
        let sigma = gamma * ss;
        let theta = if !self.faults.damping_off && sy < 0.25 * sigma {
            0.75 * sigma / (sigma - sy)
        } else {
            1.0
        };
        let y_hat = if theta == 1.0 {
            y.clone()
        } else {
            let mut yh = y.scaled(theta);
            axpy_in_place((1.0 - theta) * gamma, s, &mut yh);
            yh
        };
        let s_dot_y_hat = dot_slices(s, &y_hat);
        let rho = 1.0 / s_dot_y_hat;
        if !rho.is_finite() {
            return Err(Error::Numerical(format!(
                "curvature s'y_hat = {s_dot_y_hat} cannot be inverted"
            )));
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back(CurvaturePair {
            s: s.clone(),
            y_hat,
            rho,
        });
        self.gamma = Some(gamma);
        self.theta_last = theta;
        Ok(PairUpdate {
            accepted: true,
            s_dot_y: sy,
            s_dot_y_hat,
            s_norm_sq: ss,
            gamma,
            theta,
        })
    }

    /// `H v` by the two-loop recursion, `O(m d)`.
    pub fn direction(&self, v: &DenseVector) -> DenseVector {
        let Some(gamma) = self.gamma.filter(|_| !self.pairs.is_empty()) else {
            return v.clone();
        };
        let mut q = v.clone();
        let mut mu = vec![0.0; self.pairs.len()];
        for (j, p) in self.pairs.iter().enumerate().rev() {
            mu[j] = p.rho * dot_slices(&p.s, &q);
            axpy_in_place(-mu[j], &p.y_hat, &mut q);
        }
        for qi in q.iter_mut() {
            *qi /= gamma;
        }
        for (j, p) in self.pairs.iter().enumerate() {
            let nu = p.rho * dot_slices(&p.y_hat, &q);
            axpy_in_place(mu[j] - nu, &p.s, &mut q);
        }
        q
    }
}

/// Materializes `H` (row-major `d x d`) by the dense product recursion.
/// Test-scale only.
pub fn dense_hessian_oracle(mem: &LbfgsMemory, d: usize) -> Result<Vec<f64>> {
    if d > 64 {
        return config(format!("dense oracle is limited to d <= 64, got {d}"));
    }
    if let Some(p) = mem.pairs().next() {
        if p.s.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: p.s.len(),
            });
        }
    }
    let h0 = match mem.gamma() {
        Some(g) if !mem.is_empty() => 1.0 / g,
        _ => 1.0,
    };
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        h[i * d + i] = h0;
    }
    for p in mem.pairs() {
        // A = I - rho s yh'
        let mut a = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                a[r * d + c] = if r == c { 1.0 } else { 0.0 } - p.rho * p.s[r] * p.y_hat[c];
            }
        }
        let ah = matmul(&a, &h, d, false);
        let mut next = matmul(&ah, &a, d, true);
        for r in 0..d {
            for c in 0..d {
                next[r * d + c] += p.rho * p.s[r] * p.s[c];
            }
        }
        h = next;
    }
    Ok(h)
}

/// `a * b` or `a * b'`.
fn matmul(a: &[f64], b: &[f64], d: usize, transpose_b: bool) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                let bk = if transpose_b { b[c * d + k] } else { b[k * d + c] };
                acc += a[r * d + k] * bk;
            }
            out[r * d + c] = acc;
        }
    }
    out
}

/// Eigenvalue bounds for `H` when every component Hessian has norm at most
/// `kappa`:
///
/// ```text
/// lower = 1 / (4 m kappa^2 / delta + (4m + 1)(kappa + delta))
/// upper = (a^(2m) - 1) / (a^2 - 1) * 4 / delta + a^(2m) / delta,  a = (4 kappa + 5 delta) / delta
/// ```
pub fn theoretical_eig_bounds(delta: f64, kappa: f64, m: usize) -> Result<(f64, f64)> {
    if !(delta > 0.0) || !(kappa > 0.0) || m == 0 {
        return config(format!(
            "eigenvalue bounds need delta > 0, kappa > 0, m >= 1 (got {delta}, {kappa}, {m})"
        ));
    }
    let mf = m as f64;
    let lower = 1.0 / (4.0 * mf * kappa * kappa / delta + (4.0 * mf + 1.0) * (kappa + delta));
    let a = (4.0 * kappa + 5.0 * delta) / delta;
    let a2m = a.powi(2 * m as i32);
    let upper = (a2m - 1.0) / (a * a - 1.0) * 4.0 / delta + a2m / delta;
    Ok((lower, upper))
}
