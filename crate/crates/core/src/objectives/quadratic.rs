//! Dense quadratic components `f_i(x) = 1/2 (x - c_i)^T A_i (x - c_i)`.
//!
//! Small, possibly indefinite, with exactly known gradients and curvature.
//! Used for the estimator Monte Carlo checks and the invariant audit.

use rand::Rng;

use super::Objective;
use crate::rng::run_rng;

#[derive(Clone, Debug)]
pub struct QuadraticComponent {
    /// Row-major symmetric `d x d`.
    pub hessian: Vec<f64>,
    pub center: Vec<f64>,
}

impl QuadraticComponent {
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let d = self.center.len();
        let diff: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        (0..d)
            .map(|r| {
                let row = &self.hessian[r * d..(r + 1) * d];
                crate::linalg::dot_slices(row, &diff)
            })
            .collect()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = self.center.len();
        let diff: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let g = self.grad(x);
        debug_assert_eq!(g.len(), d);
        0.5 * crate::linalg::dot_slices(&diff, &g)
    }

    /// Gershgorin bound on the spectral norm.
    fn norm_bound(&self) -> f64 {
        let d = self.center.len();
        (0..d)
            .map(|r| self.hessian[r * d..(r + 1) * d].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct QuadraticFamily {
    dim: usize,
    components: Vec<QuadraticComponent>,
}

impl QuadraticFamily {
    pub fn new(dim: usize, components: Vec<QuadraticComponent>) -> Self {
        assert!(components
            .iter()
            .all(|c| c.center.len() == dim && c.hessian.len() == dim * dim));
        QuadraticFamily { dim, components }
    }

    /// `n` components with symmetric Hessian entries uniform in
    /// `[-scale, scale]` and centers uniform in `[-1, 1]^d`.
    pub fn random(n: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = run_rng(seed);
        let components = (0..n)
            .map(|_| {
                let mut h = vec![0.0; dim * dim];
                for r in 0..dim {
                    for c in r..dim {
                        let v = rng.gen_range(-scale..=scale);
                        h[r * dim + c] = v;
                        h[c * dim + r] = v;
                    }
                }
                let center = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                QuadraticComponent { hessian: h, center }
            })
            .collect();
        QuadraticFamily { dim, components }
    }

    pub fn components(&self) -> &[QuadraticComponent] {
        &self.components
    }
}

impl Objective for QuadraticFamily {
    type Partial = Vec<f64>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn num_components(&self) -> usize {
        self.components.len()
    }

    fn data_value(&self, i: usize, x: &[f64]) -> f64 {
        self.components[i].value(x)
    }

    fn partial(&self, i: usize, x: &[f64]) -> Vec<f64> {
        self.components[i].grad(x)
    }

    fn accumulate(&self, _i: usize, partial: &Vec<f64>, scale: f64, out: &mut [f64]) {
        crate::linalg::axpy_in_place(scale, partial, out);
    }

    fn curvature_bound(&self) -> Option<f64> {
        Some(
            self.components
                .iter()
                .map(QuadraticComponent::norm_bound)
                .fold(0.0, f64::max),
        )
    }
}
