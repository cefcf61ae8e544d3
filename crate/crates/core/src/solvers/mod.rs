//! The solver family.
//!
//! Every algorithm runs through one engine parameterized by three choices:
//! the gradient estimator (SPIDER, SVRG or a plain minibatch), whether
//! directions go through the damped L-BFGS memory, and the momentum
//! schedule. With momentum off the evaluation point is the iterate itself,
//! so the momentum variants reduce exactly to their plain counterparts.
//!
//! Curvature pairs are built at the evaluation points:
//! `s = p_k - p_{k-1}`, `y = v_k - v_{k-1}`, stored before the direction
//! `d_k = H_k v_k` is formed.

mod recipes;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;

pub use recipes::{
    online_descent_constant, online_refresh_batch, practical_epoch, theoretical_epoch,
    theoretical_stepsize, StepVariant,
};

use crate::error::{config, Error, Result};
use crate::linalg::{dot_slices, DenseVector};
use crate::momentum::{LambdaRule, MomentumKind, MomentumSchedule, ThreeSequenceState};
use crate::objectives::{CountedOracle, Exec, Objective, OracleCounter, SampleSource, StreamingOracle};
use crate::rng::{derived_rng, run_rng, RunRng};
use crate::sdlbfgs::{DampingFaults, LbfgsMemory, PairUpdate};
use crate::spider::{FiniteSum, GradientSource, Online, SpiderState};

/// Objective values above this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

const OUTPUT_STREAM: u64 = 0x6f75_7470;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    SpiderSqn,
    SpiderSqnM,
    SpiderSqnMer,
    SpiderSqnMed,
    Sgd,
    SpiderBoost,
    SpiderMed,
    SdlbfgsVr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EstimatorKind {
    Spider,
    Svrg,
    Minibatch,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::SpiderSqn,
        Algorithm::SpiderSqnM,
        Algorithm::SpiderSqnMer,
        Algorithm::SpiderSqnMed,
        Algorithm::Sgd,
        Algorithm::SpiderBoost,
        Algorithm::SpiderMed,
        Algorithm::SdlbfgsVr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SpiderSqn => "spider_sqn",
            Algorithm::SpiderSqnM => "spider_sqn_m",
            Algorithm::SpiderSqnMer => "spider_sqn_mer",
            Algorithm::SpiderSqnMed => "spider_sqn_med",
            Algorithm::Sgd => "sgd",
            Algorithm::SpiderBoost => "spider_boost",
            Algorithm::SpiderMed => "spider_med",
            Algorithm::SdlbfgsVr => "sdlbfgs_vr",
        }
    }

    /// The momentum schedule the algorithm uses unless overridden.
    pub fn default_schedule(self) -> MomentumKind {
        match self {
            Algorithm::SpiderSqnM => MomentumKind::Vanilla,
            Algorithm::SpiderSqnMer => MomentumKind::EpochRestart,
            Algorithm::SpiderSqnMed | Algorithm::SpiderMed => MomentumKind::EpochDiminishing,
            _ => MomentumKind::None,
        }
    }

    /// Momentum variants step with `beta` (and `lambda`); the rest with `eta`.
    pub fn is_momentum_family(self) -> bool {
        self.default_schedule() != MomentumKind::None
    }

    pub fn uses_quasi_newton(self) -> bool {
        matches!(
            self,
            Algorithm::SpiderSqn
                | Algorithm::SpiderSqnM
                | Algorithm::SpiderSqnMer
                | Algorithm::SpiderSqnMed
                | Algorithm::SdlbfgsVr
        )
    }

    fn estimator(self) -> EstimatorKind {
        match self {
            Algorithm::Sgd => EstimatorKind::Minibatch,
            Algorithm::SdlbfgsVr => EstimatorKind::Svrg,
            _ => EstimatorKind::Spider,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown algorithm {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    /// Fixed `eta` for plain variants and `beta` for momentum variants.
    Practical { eta: f64, beta: f64 },
    /// Step sizes from the convergence analysis.
    Theoretical {
        l: f64,
        sigma_min: f64,
        sigma_max: f64,
    },
}

impl StepRule {
    /// `(eta, beta)`
    pub fn resolve(&self) -> Result<(f64, f64)> {
        match *self {
            StepRule::Practical { eta, beta } => {
                for (name, v) in [("eta", eta), ("beta", beta)] {
                    if !(v > 0.0 && v.is_finite()) {
                        return config(format!("{name} must be positive and finite, got {v}"));
                    }
                }
                Ok((eta, beta))
            }
            StepRule::Theoretical {
                l,
                sigma_min,
                sigma_max,
            } => Ok((
                theoretical_stepsize(StepVariant::Eta, l, sigma_min, sigma_max)?,
                theoretical_stepsize(StepVariant::Beta, l, sigma_min, sigma_max)?,
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputRule {
    #[default]
    LastIterate,
    UniformRandomIterate,
}

/// When checkpoints are recorded (in addition to the one at `k = 0`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Checkpointing {
    /// After every `n`-th iteration.
    Iterations(usize),
    /// Whenever `paper_sfo` crosses a multiple of `n`, and after the last
    /// iteration.
    Sfo(u64),
}

/// Deliberate defects for exercising the invariant audit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    pub damping: DampingFaults,
    /// SPIDER differences evaluated on two independent batches.
    pub spider_batch_mismatch: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Epoch length.
    pub q: usize,
    /// Minibatch size `|xi_k|`.
    pub batch: usize,
    /// Refresh batch `|xi_0|`; online runs only.
    pub refresh_batch: Option<usize>,
    /// L-BFGS memory; 0 turns the quasi-Newton engine off.
    pub memory: usize,
    pub delta: f64,
    /// Iteration budget `K`.
    pub iterations: usize,
    pub seed: u64,
    pub step: StepRule,
    pub lambda_rule: LambdaRule,
    /// Overrides the algorithm's own momentum schedule.
    pub schedule: Option<MomentumKind>,
    pub output_rule: OutputRule,
    pub checkpoints: Checkpointing,
    pub faults: Faults,
    pub exec: Exec,
    /// Starting point; zeros when absent.
    pub x0: Option<DenseVector>,
}

impl SolverConfig {
    /// Practical defaults: batch 256, `q = 2n/256`, `m = 5`,
    /// `eta = beta = 0.001`, `delta = 1`, 20 epochs.
    pub fn practical(algorithm: Algorithm, n: usize) -> Self {
        let batch = 256;
        let q = practical_epoch(n, batch);
        SolverConfig {
            algorithm,
            q,
            batch,
            refresh_batch: None,
            memory: 5,
            delta: 1.0,
            iterations: 20 * q,
            seed: 0,
            step: StepRule::Practical {
                eta: 0.001,
                beta: 0.001,
            },
            lambda_rule: LambdaRule::default(),
            schedule: None,
            output_rule: OutputRule::default(),
            checkpoints: Checkpointing::Iterations(q),
            faults: Faults::default(),
            exec: Exec::default(),
            x0: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return config("q must be >= 1");
        }
        if self.batch == 0 {
            return config("batch must be >= 1");
        }
        if self.refresh_batch == Some(0) {
            return config("refresh batch must be >= 1");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return config(format!("delta must be positive, got {}", self.delta));
        }
        match self.checkpoints {
            Checkpointing::Iterations(0) | Checkpointing::Sfo(0) => {
                return config("checkpoint interval must be >= 1")
            }
            _ => {}
        }
        self.step.resolve()?;
        Ok(())
    }

    pub fn schedule_kind(&self) -> MomentumKind {
        self.schedule.unwrap_or(self.algorithm.default_schedule())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Checkpoint {
    pub k: usize,
    pub paper_sfo: u64,
    pub grad_evals: u64,
    pub f: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunStats {
    pub pairs_accepted: u64,
    pub pairs_skipped: u64,
    pub pairs_damped: u64,
    /// Smallest `s'y_hat / (0.25 gamma s's)` over accepted pairs.
    pub min_damping_margin: Option<f64>,
    /// Quasi-Newton directions with `d'v <= 0` for nonzero `v`.
    pub non_descent_directions: u64,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub checkpoints: Vec<Checkpoint>,
    pub final_x: DenseVector,
    /// Last evaluation point; equals the final `x` input of the last
    /// iteration when momentum is off.
    pub final_z: DenseVector,
    pub output_x: DenseVector,
    /// Iterate index (1-based) of `output_x`.
    pub output_index: usize,
    pub final_f: f64,
    pub final_grad_norm: f64,
    pub counter: OracleCounter,
    pub stats: RunStats,
}

impl RunTrace {
    /// Bitwise equality of everything except wall-clock times.
    pub fn same_path(&self, other: &RunTrace) -> bool {
        let bits = |v: &DenseVector| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.checkpoints.len() == other.checkpoints.len()
            && self.checkpoints.iter().zip(&other.checkpoints).all(|(a, b)| {
                a.k == b.k
                    && a.paper_sfo == b.paper_sfo
                    && a.grad_evals == b.grad_evals
                    && a.f.to_bits() == b.f.to_bits()
                    && a.grad_norm.to_bits() == b.grad_norm.to_bits()
            })
            && bits(&self.final_x) == bits(&other.final_x)
            && bits(&self.output_x) == bits(&other.output_x)
            && self.final_f.to_bits() == other.final_f.to_bits()
            && self.counter == other.counter
    }
}

/// Hooks into a running solver, for audits and diagnostics.
pub trait RunObserver {
    fn on_pair(&mut self, _k: usize, _update: &PairUpdate) {}

    fn on_direction(
        &mut self,
        _k: usize,
        _memory: &LbfgsMemory,
        _v: &DenseVector,
        _d: &DenseVector,
    ) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

/// Uniform choice among iterates `x_1..x_K` in `O(d)` memory.
#[derive(Clone, Debug)]
pub struct ReservoirSampler {
    rng: RunRng,
    chosen: Option<(usize, DenseVector)>,
}

impl ReservoirSampler {
    pub fn new(seed: u64) -> Self {
        ReservoirSampler {
            rng: derived_rng(seed, OUTPUT_STREAM),
            chosen: None,
        }
    }

    /// Offer the `i`-th item (1-based, consecutive).
    pub fn offer(&mut self, i: usize, x: &DenseVector) {
        if self.rng.gen_range(0..i) == 0 {
            self.chosen = Some((i, x.clone()));
        }
    }

    pub fn choice(&self) -> Option<(usize, &DenseVector)> {
        self.chosen.as_ref().map(|(i, x)| (*i, x))
    }
}

struct SvrgState {
    anchor: DenseVector,
    mu: DenseVector,
    k: usize,
    q: usize,
    batch: usize,
}

/// What the curvature pair's gradient difference should be.
enum CurvatureSignal {
    /// `v_k - v_{k-1}`.
    Estimates,
    Given(DenseVector),
    Skip,
}

impl SvrgState {
    /// Besides the estimate, returns the same-batch gradient difference
    /// between `point` and `prev_point`; consecutive SVRG estimates use
    /// unrelated batches and their difference carries little curvature.
    fn step<G: GradientSource>(
        &mut self,
        src: &mut G,
        point: &DenseVector,
        prev_point: Option<&DenseVector>,
        rng: &mut RunRng,
    ) -> Result<(DenseVector, CurvatureSignal)> {
        let out = if self.k.is_multiple_of(self.q) {
            self.anchor = point.clone();
            self.mu = src.refresh_grad(point, rng)?;
            (self.mu.clone(), CurvatureSignal::Skip)
        } else {
            let b = src.draw_batch(self.batch, rng);
            let (g, g_anchor) = src.batch_grad_pair(&b, point, &self.anchor)?;
            let v: Vec<f64> = (0..g.len()).map(|j| (g[j] - g_anchor[j]) + self.mu[j]).collect();
            let signal = match prev_point {
                Some(p) => {
                    let g_prev = src.batch_grad_repeat(&b, p)?;
                    CurvatureSignal::Given(g.sub(&g_prev)?)
                }
                None => CurvatureSignal::Skip,
            };
            (v.into(), signal)
        };
        self.k += 1;
        Ok(out)
    }
}

enum Estimator {
    Spider(SpiderState),
    Svrg(SvrgState),
    Minibatch(usize),
}

impl Estimator {
    fn new(cfg: &SolverConfig, dim: usize) -> Result<Self> {
        Ok(match cfg.algorithm.estimator() {
            EstimatorKind::Spider => Estimator::Spider(
                SpiderState::new(dim, cfg.q, cfg.batch)?
                    .with_mismatched_batches(cfg.faults.spider_batch_mismatch),
            ),
            EstimatorKind::Svrg => Estimator::Svrg(SvrgState {
                anchor: DenseVector::zeros(dim),
                mu: DenseVector::zeros(dim),
                k: 0,
                q: cfg.q,
                batch: cfg.batch,
            }),
            EstimatorKind::Minibatch => Estimator::Minibatch(cfg.batch),
        })
    }

    fn step<G: GradientSource>(
        &mut self,
        src: &mut G,
        point: &DenseVector,
        prev_point: Option<&DenseVector>,
        rng: &mut RunRng,
    ) -> Result<(DenseVector, CurvatureSignal)> {
        match self {
            Estimator::Spider(s) => Ok((s.step(src, point, rng)?.clone(), CurvatureSignal::Estimates)),
            Estimator::Svrg(s) => s.step(src, point, prev_point, rng),
            Estimator::Minibatch(b) => {
                let batch = src.draw_batch(*b, rng);
                Ok((src.batch_grad(&batch, point)?, CurvatureSignal::Estimates))
            }
        }
    }
}

struct Recorder {
    rule: Checkpointing,
    next_sfo: u64,
    start: Instant,
    checkpoints: Vec<Checkpoint>,
}

impl Recorder {
    fn new(rule: Checkpointing) -> Self {
        Recorder {
            rule,
            next_sfo: match rule {
                Checkpointing::Sfo(e) => e,
                Checkpointing::Iterations(_) => 0,
            },
            start: Instant::now(),
            checkpoints: Vec::new(),
        }
    }

    fn due(&mut self, k_done: usize, last: bool, sfo: u64) -> bool {
        match self.rule {
            Checkpointing::Iterations(e) => k_done.is_multiple_of(e),
            Checkpointing::Sfo(e) => {
                if sfo >= self.next_sfo || last {
                    self.next_sfo = (sfo / e + 1) * e;
                    true
                } else {
                    false
                }
            }
        }
    }

    fn record<G: GradientSource>(&mut self, src: &G, k: usize, x: &DenseVector) -> Result<Checkpoint> {
        let f = src.value(x);
        let grad_norm = src.monitor_grad(x).norm();
        if !f.is_finite() || f > DIVERGENCE_LIMIT || !grad_norm.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                reason: format!("objective {f:e}, gradient norm {grad_norm:e}"),
            });
        }
        let c = src.counter();
        let cp = Checkpoint {
            k,
            paper_sfo: c.paper_sfo,
            grad_evals: c.component_grad_evals,
            f,
            grad_norm,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        };
        self.checkpoints.push(cp);
        Ok(cp)
    }
}

fn run_engine<G: GradientSource>(
    cfg: &SolverConfig,
    src: &mut G,
    obs: &mut dyn RunObserver,
) -> Result<RunTrace> {
    cfg.validate()?;
    let dim = src.dim();
    let x0 = match &cfg.x0 {
        Some(x) if x.len() != dim => {
            return Err(Error::Dimension {
                expected: dim,
                got: x.len(),
            })
        }
        Some(x) => x.clone(),
        None => DenseVector::zeros(dim),
    };
    let (eta, beta) = cfg.step.resolve()?;
    let step = if cfg.algorithm.is_momentum_family() {
        beta
    } else {
        eta
    };
    let schedule = MomentumSchedule::new(cfg.schedule_kind(), cfg.q)?;
    let qn = cfg.algorithm.uses_quasi_newton();
    let mut memory = LbfgsMemory::new(if qn { cfg.memory } else { 0 }, cfg.delta)?
        .with_faults(cfg.faults.damping);
    let mut estimator = Estimator::new(cfg, dim)?;
    let mut state = ThreeSequenceState::new(x0, step);
    let mut rng = run_rng(cfg.seed);
    let mut reservoir = ReservoirSampler::new(cfg.seed);
    let mut stats = RunStats::default();
    let mut recorder = Recorder::new(cfg.checkpoints);
    let mut last = recorder.record(src, 0, &state.x)?;
    let mut prev: Option<(DenseVector, DenseVector)> = None;

    for k in 0..cfg.iterations {
        state.prepare(schedule.alpha(k + 1), cfg.lambda_rule);
        let prev_point = if memory.capacity() > 0 {
            prev.as_ref().map(|(p, _)| p)
        } else {
            None
        };
        let (v, signal) = estimator.step(src, &state.z, prev_point, &mut rng)?;
        if let Some((p_prev, v_prev)) = &prev {
            let y = match signal {
                CurvatureSignal::Estimates => Some(v.sub(v_prev)?),
                CurvatureSignal::Given(y) => Some(y),
                CurvatureSignal::Skip => None,
            };
            if let (Some(y), true) = (y, memory.capacity() > 0) {
                let s = state.z.sub(p_prev)?;
                let upd = memory.update(&s, &y, state.z.norm())?;
                if upd.accepted {
                    stats.pairs_accepted += 1;
                    if upd.theta != 1.0 {
                        stats.pairs_damped += 1;
                    }
                    let m = upd.damping_margin();
                    stats.min_damping_margin =
                        Some(stats.min_damping_margin.map_or(m, |old| old.min(m)));
                } else {
                    stats.pairs_skipped += 1;
                }
                obs.on_pair(k, &upd);
            }
        }
        let d = memory.direction(&v);
        if qn && !memory.is_empty() && v.norm_sq() > 0.0 && !(dot_slices(&d, &v) > 0.0) {
            stats.non_descent_directions += 1;
        }
        obs.on_direction(k, &memory, &v, &d)?;
        state.dual_update(&d);
        if !state.x.is_finite() || !state.y.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                reason: "non-finite iterate".into(),
            });
        }
        prev = Some((state.z.clone(), v));
        if cfg.output_rule == OutputRule::UniformRandomIterate {
            reservoir.offer(k + 1, &state.x);
        }
        let sfo = src.counter().paper_sfo;
        if recorder.due(k + 1, k + 1 == cfg.iterations, sfo) {
            last = recorder.record(src, k + 1, &state.x)?;
        }
    }

    let (final_f, final_grad_norm) = if last.k == cfg.iterations {
        (last.f, last.grad_norm)
    } else {
        let f = src.value(&state.x);
        let g = src.monitor_grad(&state.x).norm();
        if !f.is_finite() || f > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                iteration: cfg.iterations,
                reason: format!("objective {f:e}"),
            });
        }
        (f, g)
    };
    let (output_index, output_x) = match reservoir.choice() {
        Some((i, x)) => (i, x.clone()),
        None => (cfg.iterations, state.x.clone()),
    };
    Ok(RunTrace {
        algorithm: cfg.algorithm,
        seed: cfg.seed,
        checkpoints: recorder.checkpoints,
        final_x: state.x,
        final_z: state.z,
        output_x,
        output_index,
        final_f,
        final_grad_norm,
        counter: src.counter(),
        stats,
    })
}

/// Runs `cfg` on a finite-sum objective.
pub fn solve<O: Objective>(cfg: &SolverConfig, obj: &O) -> Result<RunTrace> {
    solve_observed(cfg, obj, &mut ())
}

pub fn solve_observed<O: Objective>(
    cfg: &SolverConfig,
    obj: &O,
    obs: &mut dyn RunObserver,
) -> Result<RunTrace> {
    let mut src = FiniteSum::new(CountedOracle::new(obj).with_exec(cfg.exec));
    run_engine(cfg, &mut src, obs)
}

/// Runs `cfg` on a stream; `cfg.refresh_batch` must be set.
pub fn solve_online<S: SampleSource>(
    cfg: &SolverConfig,
    stream: &mut StreamingOracle<S>,
) -> Result<RunTrace> {
    solve_online_observed(cfg, stream, &mut ())
}

pub fn solve_online_observed<S: SampleSource>(
    cfg: &SolverConfig,
    stream: &mut StreamingOracle<S>,
    obs: &mut dyn RunObserver,
) -> Result<RunTrace> {
    let Some(refresh) = cfg.refresh_batch else {
        return config("online runs need a refresh batch size");
    };
    let mut src = Online::new(stream, refresh)?;
    run_engine(cfg, &mut src, obs)
}

/// `ceil(K/q) n + (K - ceil(K/q)) |xi|`: the oracle cost of a SPIDER-type run
/// counting each difference step once per sampled component, with `n` the refresh cost.
pub fn expected_paper_sfo(n: u64, q: u64, batch: u64, iterations: u64) -> u64 {
    let refreshes = iterations.div_ceil(q);
    refreshes * n + (iterations - refreshes) * batch
}

/// Same schedule counting both evaluations of each difference step.
pub fn expected_grad_evals(n: u64, q: u64, batch: u64, iterations: u64) -> u64 {
    let refreshes = iterations.div_ceil(q);
    refreshes * n + (iterations - refreshes) * 2 * batch
}
