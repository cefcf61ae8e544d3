//! Runtime checks of the structural invariants of the damped L-BFGS engine
//! and the SPIDER estimator, with measured margins.
//!
//! Every check runs on self-contained synthetic instances derived from one
//! seed. [`Faults`] switches on deliberate defects so that the checks can be
//! shown to catch them.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::generate_synthetic;
use crate::error::Result;
use crate::linalg::{dot_slices, DenseVector};
use crate::objectives::{
    CountedOracle, GaussianLinearStream, NonconvexLogisticObjective, Objective, QuadraticFamily,
    RobustRegressionObjective, StreamingOracle, SvmSigmoidObjective,
};
use crate::rng::{derived_rng, RunRng};
use crate::sdlbfgs::{dense_hessian_oracle, theoretical_eig_bounds, LbfgsMemory, PairUpdate};
use crate::solvers::{
    expected_grad_evals, expected_paper_sfo, solve, solve_observed, Algorithm, Checkpointing,
    Faults, RunObserver, SolverConfig, StepRule,
};
use crate::spider::{FiniteSum, GradientSource, Online, SpiderState};

/// Relative slack allowed on the damping floor.
pub const DAMPING_SLACK: f64 = 1e-12;
/// Absolute slack on the spectral bounds.
pub const SPECTRAL_SLACK: f64 = 1e-8;
/// Tolerance of the two-loop / dense comparison.
pub const TWO_LOOP_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct AuditCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for AuditCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:<26} {}", self.name, self.detail)
    }
}

#[derive(Clone, Debug, Default)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Sizes of the audit workloads.
#[derive(Clone, Debug)]
pub struct AuditOptions {
    pub seed: u64,
    pub faults: Faults,
    /// Random histories for the two-loop comparison.
    pub histories: usize,
    /// Desk instance: components, dimension, iterations.
    pub n: usize,
    pub d: usize,
    pub iterations: usize,
    /// Random probes per iteration for the spectral check.
    pub probes: usize,
    /// Monte Carlo resamples for the estimator checks.
    pub trials: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            seed: 2024,
            faults: Faults::default(),
            histories: 1000,
            n: 2000,
            d: 100,
            iterations: 2000,
            probes: 100,
            trials: 10_000,
        }
    }
}

pub fn run_audit(opts: &AuditOptions) -> AuditReport {
    let mut checks = vec![check_two_loop_dense(opts)];
    checks.extend(check_pair_invariants(opts));
    checks.push(check_spectral_sandwich(opts));
    checks.extend(check_spider_variance(opts));
    checks.push(check_online_refresh_variance(opts));
    checks.push(check_sfo_accounting(opts));
    AuditReport { checks }
}

fn gauss(rng: &mut RunRng) -> f64 {
    StandardNormal.sample(rng)
}

fn gauss_vec(rng: &mut RunRng, d: usize) -> DenseVector {
    (0..d).map(|_| gauss(rng)).collect::<Vec<f64>>().into()
}

/// A memory filled with pairs `(s, A s + noise)` for a random symmetric,
/// possibly indefinite `A`, so that damping is regularly triggered.
fn random_history(rng: &mut RunRng, faults: Faults) -> Result<(LbfgsMemory, Vec<PairUpdate>, usize)> {
    let d = rng.gen_range(1..=5);
    let m = rng.gen_range(1..=3);
    let delta = rng.gen_range(0.1..2.0);
    let mut mem = LbfgsMemory::new(m, delta)?.with_faults(faults.damping);
    let mut a = vec![0.0; d * d];
    for r in 0..d {
        for c in r..d {
            let v = gauss(rng);
            a[r * d + c] = v;
            a[c * d + r] = v;
        }
    }
    let mut updates = Vec::new();
    for _ in 0..rng.gen_range(1..=2 * m + 1) {
        let s = gauss_vec(rng, d);
        let scale = if rng.gen_bool(0.2) { 0.05 } else { 1.0 };
        let y: Vec<f64> = (0..d)
            .map(|r| scale * dot_slices(&a[r * d..(r + 1) * d], &s) + 0.1 * gauss(rng))
            .collect();
        updates.push(mem.update(&s, &y.into(), 0.0)?);
    }
    Ok((mem, updates, d))
}

fn mat_vec(h: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|r| dot_slices(&h[r * d..(r + 1) * d], v)).collect()
}

/// Two-loop directions against the dense product recursion.
pub fn check_two_loop_dense(opts: &AuditOptions) -> AuditCheck {
    let mut rng = derived_rng(opts.seed, 1);
    let mut worst = 0.0f64;
    let mut error = None;
    for _ in 0..opts.histories {
        let (mem, _, d) = match random_history(&mut rng, opts.faults) {
            Ok(h) => h,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        let h = match dense_hessian_oracle(&mem, d) {
            Ok(h) => h,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        let v = gauss_vec(&mut rng, d);
        let got = mem.direction(&v);
        let want = mat_vec(&h, &v);
        let diff: f64 = got.iter().zip(&want).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm = dot_slices(&want, &want).sqrt().max(f64::MIN_POSITIVE);
        let rel = diff / norm;
        worst = if rel.is_nan() { f64::INFINITY } else { worst.max(rel) };
    }
    match error {
        Some(e) => AuditCheck {
            name: "two_loop_dense",
            passed: false,
            detail: format!("history construction failed: {e}"),
        },
        None => AuditCheck {
            name: "two_loop_dense",
            passed: worst <= TWO_LOOP_TOL,
            detail: format!(
                "max rel. error {worst:.3e} (<= {TWO_LOOP_TOL:.0e}) over {} histories",
                opts.histories
            ),
        },
    }
}

#[derive(Default)]
struct PairStats {
    pairs: u64,
    damped: u64,
    min_margin: f64,
    min_gamma_ratio: f64,
    directions: u64,
    non_descent: u64,
    error: Option<String>,
}

impl PairStats {
    fn new() -> Self {
        PairStats {
            min_margin: f64::INFINITY,
            min_gamma_ratio: f64::INFINITY,
            ..Default::default()
        }
    }

    fn record(&mut self, upd: &PairUpdate, delta: f64) {
        if !upd.accepted {
            return;
        }
        self.pairs += 1;
        if upd.theta != 1.0 {
            self.damped += 1;
        }
        let m = upd.damping_margin();
        self.min_margin = if m.is_nan() { f64::NEG_INFINITY } else { self.min_margin.min(m) };
        self.min_gamma_ratio = self.min_gamma_ratio.min(upd.gamma / delta);
    }

    fn record_direction(&mut self, v: &DenseVector, d: &DenseVector) {
        if v.norm_sq() == 0.0 {
            return;
        }
        self.directions += 1;
        if !(dot_slices(d, v) > 0.0) {
            self.non_descent += 1;
        }
    }
}

struct PairObserver<'a> {
    stats: &'a mut PairStats,
    delta: f64,
}

impl RunObserver for PairObserver<'_> {
    fn on_pair(&mut self, _k: usize, upd: &PairUpdate) {
        self.stats.record(upd, self.delta);
    }

    fn on_direction(
        &mut self,
        _k: usize,
        memory: &LbfgsMemory,
        v: &DenseVector,
        d: &DenseVector,
    ) -> Result<()> {
        if !memory.is_empty() {
            self.stats.record_direction(v, d);
        }
        Ok(())
    }
}

/// The desk configuration shared by the solver-based checks.
pub fn desk_config(algorithm: Algorithm, n: usize, iterations: usize, seed: u64, faults: Faults) -> SolverConfig {
    let mut c = SolverConfig::practical(algorithm, n);
    c.batch = 64;
    c.q = crate::solvers::practical_epoch(n, 64);
    c.iterations = iterations;
    c.seed = seed;
    c.step = StepRule::Practical {
        eta: 0.001,
        beta: 0.001,
    };
    c.checkpoints = Checkpointing::Iterations(iterations.max(1));
    c.faults = faults;
    c
}

/// Damping floor, `gamma >= delta` and descent, on adversarial random
/// histories and on full solver runs over the three objectives.
pub fn check_pair_invariants(opts: &AuditOptions) -> Vec<AuditCheck> {
    let mut stats = PairStats::new();
    let mut rng = derived_rng(opts.seed, 2);
    for _ in 0..opts.histories {
        match random_history(&mut rng, opts.faults) {
            Ok((mem, updates, d)) => {
                for u in &updates {
                    stats.record(u, mem.delta());
                }
                for _ in 0..10 {
                    let v = gauss_vec(&mut rng, d);
                    stats.record_direction(&v, &mem.direction(&v));
                }
            }
            Err(e) => {
                stats.error = Some(e.to_string());
                break;
            }
        }
    }
    let synthetic_pairs = stats.pairs;

    if stats.error.is_none() {
        match generate_synthetic(opts.n, opts.d, 0.05, opts.seed) {
            Ok(data) => {
                let svm = SvmSigmoidObjective::new(data.clone(), 0.001);
                let robust = RobustRegressionObjective::new(data.clone());
                let logistic = NonconvexLogisticObjective::new(data, 0.001);
                for algo in [Algorithm::SpiderSqn, Algorithm::SpiderSqnMed] {
                    let cfg = desk_config(algo, opts.n, opts.iterations, opts.seed, opts.faults);
                    let mut obs = PairObserver {
                        stats: &mut stats,
                        delta: cfg.delta,
                    };
                    let runs = [
                        solve_observed(&cfg, &svm, &mut obs).map(|_| ()),
                        solve_observed(&cfg, &robust, &mut obs).map(|_| ()),
                        solve_observed(&cfg, &logistic, &mut obs).map(|_| ()),
                    ];
                    if let Some(Err(e)) = runs.into_iter().find(|r| r.is_err()) {
                        stats.error = Some(e.to_string());
                        break;
                    }
                }
            }
            Err(e) => stats.error = Some(e.to_string()),
        }
    }

    if let Some(e) = &stats.error {
        let fail = |name| AuditCheck {
            name,
            passed: false,
            detail: format!("run failed: {e}"),
        };
        return vec![fail("damping_floor"), fail("gamma_floor"), fail("descent_direction")];
    }
    let solver_pairs = stats.pairs - synthetic_pairs;
    vec![
        AuditCheck {
            name: "damping_floor",
            passed: stats.min_margin >= 1.0 - DAMPING_SLACK,
            detail: format!(
                "min s'y_hat / (0.25 gamma s's) = {:.6} (>= 1 - {DAMPING_SLACK:.0e}) over {} pairs \
                 ({} random, {} from solver runs; {} damped)",
                stats.min_margin, stats.pairs, synthetic_pairs, solver_pairs, stats.damped
            ),
        },
        AuditCheck {
            name: "gamma_floor",
            passed: stats.min_gamma_ratio >= 1.0,
            detail: format!("min gamma / delta = {:.6} (>= 1)", stats.min_gamma_ratio),
        },
        AuditCheck {
            name: "descent_direction",
            passed: stats.non_descent == 0,
            detail: format!(
                "{} of {} directions with d'v <= 0",
                stats.non_descent, stats.directions
            ),
        },
    ]
}

struct SpectralObserver {
    rng: RunRng,
    probes: usize,
    lower: f64,
    upper: f64,
    min_rq: f64,
    max_rq: f64,
    violations: u64,
    evaluated: u64,
}

impl RunObserver for SpectralObserver {
    fn on_direction(
        &mut self,
        _k: usize,
        memory: &LbfgsMemory,
        v: &DenseVector,
        _d: &DenseVector,
    ) -> Result<()> {
        if memory.is_empty() {
            return Ok(());
        }
        let d = v.len();
        for _ in 0..self.probes {
            let z = gauss_vec(&mut self.rng, d);
            let hz = memory.direction(&z);
            let rq = dot_slices(&z, &hz) / z.norm_sq();
            self.evaluated += 1;
            self.min_rq = self.min_rq.min(rq);
            self.max_rq = self.max_rq.max(rq);
            if !(rq >= self.lower - SPECTRAL_SLACK && rq <= self.upper + SPECTRAL_SLACK) {
                self.violations += 1;
            }
        }
        Ok(())
    }
}

/// Rayleigh quotients of `H_k` on the desk SVM instance against the
/// theoretical eigenvalue bounds with `kappa` the instance's curvature bound.
pub fn check_spectral_sandwich(opts: &AuditOptions) -> AuditCheck {
    let name = "spectral_sandwich";
    let run = || -> Result<AuditCheck> {
        let data = generate_synthetic(opts.n, opts.d, 0.05, opts.seed)?;
        let svm = SvmSigmoidObjective::new(data, 0.001);
        let kappa = svm.curvature_bound().expect("linear models have a curvature bound");
        let cfg = desk_config(Algorithm::SpiderSqn, opts.n, opts.iterations, opts.seed, opts.faults);
        let (lower, upper) = theoretical_eig_bounds(cfg.delta, kappa, cfg.memory)?;
        let mut obs = SpectralObserver {
            rng: derived_rng(opts.seed, 3),
            probes: opts.probes,
            lower,
            upper,
            min_rq: f64::INFINITY,
            max_rq: f64::NEG_INFINITY,
            violations: 0,
            evaluated: 0,
        };
        solve_observed(&cfg, &svm, &mut obs)?;
        Ok(AuditCheck {
            name,
            passed: obs.violations == 0 && obs.evaluated > 0,
            detail: format!(
                "{} violations over {} probes; Rayleigh quotients in [{:.4e}, {:.4e}] vs bounds \
                 [{lower:.4e}, {upper:.4e}] (kappa {kappa:.4})",
                obs.violations, obs.evaluated, obs.min_rq, obs.max_rq
            ),
        })
    };
    run().unwrap_or_else(|e| AuditCheck {
        name,
        passed: false,
        detail: format!("run failed: {e}"),
    })
}

/// Largest spectral norm over a quadratic family's components (2 x 2 only).
pub fn quadratic_family_smoothness(fam: &QuadraticFamily) -> f64 {
    fam.components()
        .iter()
        .map(|c| {
            assert_eq!(c.center.len(), 2);
            let (a, b, d) = (c.hessian[0], c.hessian[1], c.hessian[3]);
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            mid.abs() + rad
        })
        .fold(0.0, f64::max)
}

/// Monte Carlo summary of SPIDER steps after one exact refresh.
#[derive(Clone, Debug)]
pub struct SpiderMonteCarlo {
    /// `E ||v_k - grad f(x_k)||^2` for `k = 1..=steps`.
    pub mse: Vec<f64>,
    /// `sum_{i<=k} (L^2 / |xi|) E ||x_i - x_{i-1}||^2`.
    pub bound: Vec<f64>,
    /// Mean error per step and coordinate, and its standard error.
    pub mean_error: Vec<[f64; 2]>,
    pub std_error: Vec<[f64; 2]>,
}

/// Runs `trials` independent SPIDER trajectories on a 10-component, 2-d
/// quadratic family: refresh at `x_0`, then `steps` advances along
/// `x_{k+1} = x_k - eta v_k`.
pub fn spider_monte_carlo(
    seed: u64,
    trials: usize,
    steps: usize,
    batch: usize,
    eta: f64,
    mismatched: bool,
) -> Result<SpiderMonteCarlo> {
    let fam = QuadraticFamily::random(10, 2, 1.0, seed);
    let l = quadratic_family_smoothness(&fam);
    let mut rng = derived_rng(seed, 4);
    let x0 = DenseVector::from_vec(vec![0.8, -0.6]);
    let mut err_sq = vec![0.0; steps];
    let mut step_sq = vec![0.0; steps];
    let mut err_sum = vec![[0.0; 2]; steps];
    let mut err_sum_sq = vec![[0.0; 2]; steps];
    for _ in 0..trials {
        let mut src = FiniteSum::new(CountedOracle::new(&fam));
        let mut st = SpiderState::new(2, steps + 1, batch)?.with_mismatched_batches(mismatched);
        let mut x = x0.clone();
        let mut v = st.step(&mut src, &x, &mut rng)?.clone();
        for k in 0..steps {
            let mut next = x.clone();
            for j in 0..2 {
                next[j] -= eta * v[j];
            }
            step_sq[k] += next.sub(&x)?.norm_sq();
            x = next;
            v = st.step(&mut src, &x, &mut rng)?.clone();
            let e = v.sub(&src.monitor_grad(&x))?;
            err_sq[k] += e.norm_sq();
            for j in 0..2 {
                err_sum[k][j] += e[j];
                err_sum_sq[k][j] += e[j] * e[j];
            }
        }
    }
    let t = trials as f64;
    let mut bound = Vec::with_capacity(steps);
    let mut acc = 0.0;
    for s in &step_sq {
        acc += l * l / batch as f64 * s / t;
        bound.push(acc);
    }
    let mean_error: Vec<[f64; 2]> = err_sum.iter().map(|m| [m[0] / t, m[1] / t]).collect();
    let std_error = err_sum_sq
        .iter()
        .zip(&mean_error)
        .map(|(sq, m)| {
            let se = |j: usize| ((sq[j] / t - m[j] * m[j]).max(0.0) / t).sqrt();
            [se(0), se(1)]
        })
        .collect();
    Ok(SpiderMonteCarlo {
        mse: err_sq.iter().map(|e| e / t).collect(),
        bound,
        mean_error,
        std_error,
    })
}

/// Variance bound and unbiasedness of SPIDER steps by Monte Carlo.
pub fn check_spider_variance(opts: &AuditOptions) -> Vec<AuditCheck> {
    match spider_monte_carlo(opts.seed, opts.trials, 5, 2, 0.1, opts.faults.spider_batch_mismatch) {
        Ok(mc) => {
            let worst_ratio = mc
                .mse
                .iter()
                .zip(&mc.bound)
                .map(|(m, b)| m / b)
                .fold(0.0, f64::max);
            let worst_z = mc
                .mean_error
                .iter()
                .zip(&mc.std_error)
                .flat_map(|(m, s)| (0..2).map(move |j| (m[j] / s[j]).abs()))
                .fold(0.0, f64::max);
            vec![
                AuditCheck {
                    name: "spider_variance_bound",
                    passed: worst_ratio <= 1.05,
                    detail: format!(
                        "max E||v - grad f||^2 / bound = {worst_ratio:.4} (<= 1.05) over 5 steps, \
                         {} trials",
                        opts.trials
                    ),
                },
                AuditCheck {
                    name: "spider_conditional_mean",
                    passed: worst_z <= 4.0,
                    detail: format!("max |mean error| / std. error = {worst_z:.3} (<= 4)"),
                },
            ]
        }
        Err(e) => vec![AuditCheck {
            name: "spider_variance_bound",
            passed: false,
            detail: format!("run failed: {e}"),
        }],
    }
}

/// `E ||v_refresh - grad f||^2 = sigma_1^2 / |xi_0|` on a Gaussian stream.
pub fn check_online_refresh_variance(opts: &AuditOptions) -> AuditCheck {
    let name = "online_refresh_variance";
    let run = || -> Result<(f64, f64)> {
        let stream = GaussianLinearStream::new(vec![1.0, 0.5, 2.0], vec![0.3, -0.2, 1.0], 0.5);
        let sigma1 = stream.sigma1();
        let mut so = StreamingOracle::new(stream, sigma1, 1, opts.seed)?;
        let refresh = 16;
        let mut src = Online::new(&mut so, refresh)?;
        let mut rng = derived_rng(opts.seed, 5);
        let x = DenseVector::from_vec(vec![0.5, -1.0, 0.25]);
        let g = src.monitor_grad(&x);
        let mut acc = 0.0;
        for _ in 0..opts.trials {
            acc += src.refresh_grad(&x, &mut rng)?.sub(&g)?.norm_sq();
        }
        Ok((acc / opts.trials as f64, sigma1 * sigma1 / refresh as f64))
    };
    match run() {
        Ok((mse, want)) => AuditCheck {
            name,
            passed: (mse - want).abs() <= 0.1 * want,
            detail: format!("E||v - grad f||^2 = {mse:.5e} vs sigma_1^2/|xi_0| = {want:.5e} (within 10%)"),
        },
        Err(e) => AuditCheck {
            name,
            passed: false,
            detail: format!("run failed: {e}"),
        },
    }
}

/// Oracle counts of full runs against the closed-form schedule.
pub fn check_sfo_accounting(opts: &AuditOptions) -> AuditCheck {
    let name = "sfo_accounting";
    let cases = [(1024usize, 32usize, 32usize, 320usize), (100, 10, 10, 100), (2000, 125, 64, 1000)];
    let mut mismatches = Vec::new();
    for (n, q, b, k) in cases {
        let run = || -> Result<(u64, u64)> {
            let data = generate_synthetic(n, 20, 0.2, opts.seed)?;
            let svm = SvmSigmoidObjective::new(data, 0.001);
            let mut cfg = desk_config(Algorithm::SpiderSqn, n, k, opts.seed, opts.faults);
            cfg.q = q;
            cfg.batch = b;
            let t = solve(&cfg, &svm)?;
            Ok((t.counter.paper_sfo, t.counter.component_grad_evals))
        };
        let (n64, q64, b64, k64) = (n as u64, q as u64, b as u64, k as u64);
        let want = (
            expected_paper_sfo(n64, q64, b64, k64),
            expected_grad_evals(n64, q64, b64, k64),
        );
        match run() {
            Ok(got) if got == want => {}
            Ok(got) => mismatches.push(format!("({n},{q},{b},{k}): got {got:?}, want {want:?}")),
            Err(e) => mismatches.push(format!("({n},{q},{b},{k}): {e}")),
        }
    }
    AuditCheck {
        name,
        passed: mismatches.is_empty(),
        detail: if mismatches.is_empty() {
            format!("{} configurations match the closed form exactly", cases.len())
        } else {
            mismatches.join("; ")
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdlbfgs::DampingFaults;

    fn quick() -> AuditOptions {
        AuditOptions {
            histories: 200,
            n: 300,
            d: 30,
            iterations: 300,
            probes: 5,
            trials: 2000,
            ..AuditOptions::default()
        }
    }

    #[test]
    fn clean_audit_passes() {
        let r = run_audit(&quick());
        for c in &r.checks {
            assert!(c.passed, "{c}");
        }
    }

    fn failing(faults: Faults) -> Vec<&'static str> {
        let r = run_audit(&AuditOptions { faults, ..quick() });
        r.failed().map(|c| c.name).collect()
    }

    #[test]
    fn faults_are_detected() {
        let damping = failing(Faults {
            damping: DampingFaults {
                damping_off: true,
                gamma_floor_off: false,
            },
            ..Faults::default()
        });
        assert!(damping.contains(&"damping_floor"), "{damping:?}");
        let gamma = failing(Faults {
            damping: DampingFaults {
                damping_off: false,
                gamma_floor_off: true,
            },
            ..Faults::default()
        });
        assert!(gamma.contains(&"gamma_floor"), "{gamma:?}");
        let spider = failing(Faults {
            spider_batch_mismatch: true,
            ..Faults::default()
        });
        assert!(spider.contains(&"spider_variance_bound"), "{spider:?}");
    }
}
