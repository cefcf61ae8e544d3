//! Turning merged settings into a problem instance and a list of runs.

use std::fs::File;
use std::io::BufReader;

use spider_sqn::data::{generate_synthetic, parse_libsvm, Dataset, LabelMap, ParseOptions, SyntheticGenerator};
use spider_sqn::momentum::LambdaRule;
use spider_sqn::objectives::{
    Exec, LinearModelObjective, LinearModelStream, LogisticCrossEntropy, MarginLoss, Objective,
    Regularizer, RobustLog, SigmoidLoss, StreamingOracle,
};
use spider_sqn::sdlbfgs::theoretical_eig_bounds;
use spider_sqn::solvers::{
    online_refresh_batch, practical_epoch, solve, solve_online, theoretical_epoch, Algorithm,
    Checkpointing, RunTrace, SolverConfig, StepRule, StepVariant,
};

use crate::settings::{Problem, Settings, StepMode};
use crate::CliError;

const DEFAULT_REG: f64 = 0.001;
const DEFAULT_STEP: f64 = 0.001;
const DEFAULT_BATCH: usize = 256;
const DEFAULT_EPOCHS: usize = 20;

/// Which checkpoint grid a command records on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grid {
    /// Every `q` iterations unless `--checkpoint-every` says otherwise.
    Iterations,
    /// Every `n` SFO calls unless `--checkpoint-every` says otherwise.
    Sfo,
}

fn regularizer(problem: Problem, r: f64) -> Regularizer {
    match problem {
        Problem::Svm => Regularizer::Ridge(r),
        Problem::Robust => Regularizer::None,
        Problem::Logistic => Regularizer::Nonconvex(r),
    }
}

/// A finite-sum instance of one of the three problems.
pub enum Instance {
    Svm(LinearModelObjective<SigmoidLoss>),
    Robust(LinearModelObjective<RobustLog>),
    Logistic(LinearModelObjective<LogisticCrossEntropy>),
}

impl Instance {
    pub fn new(problem: Problem, data: Dataset, r: f64) -> Self {
        let reg = regularizer(problem, r);
        match problem {
            Problem::Svm => Instance::Svm(LinearModelObjective::with_loss(data, SigmoidLoss, reg)),
            Problem::Robust => Instance::Robust(LinearModelObjective::with_loss(data, RobustLog, reg)),
            Problem::Logistic => {
                Instance::Logistic(LinearModelObjective::with_loss(data, LogisticCrossEntropy, reg))
            }
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Instance::Svm(o) => o.num_components(),
            Instance::Robust(o) => o.num_components(),
            Instance::Logistic(o) => o.num_components(),
        }
    }

    pub fn curvature_bound(&self) -> f64 {
        let b = match self {
            Instance::Svm(o) => o.curvature_bound(),
            Instance::Robust(o) => o.curvature_bound(),
            Instance::Logistic(o) => o.curvature_bound(),
        };
        b.unwrap_or(1.0)
    }

    pub fn solve(&self, cfg: &SolverConfig) -> spider_sqn::Result<RunTrace> {
        match self {
            Instance::Svm(o) => solve(cfg, o),
            Instance::Robust(o) => solve(cfg, o),
            Instance::Logistic(o) => solve(cfg, o),
        }
    }
}

/// A synthetic distribution sampled afresh by every run.
pub struct OnlineSource {
    pub generator: SyntheticGenerator,
    pub problem: Problem,
    pub reg: f64,
    pub holdout: usize,
    pub sigma1: f64,
    /// Seeds the shared hold-out sample used for monitoring.
    pub seed: u64,
}

impl OnlineSource {
    fn run<L: MarginLoss>(&self, loss: L, cfg: &SolverConfig) -> spider_sqn::Result<RunTrace> {
        let stream = LinearModelStream::new(self.generator.clone(), loss, regularizer(self.problem, self.reg));
        let mut oracle = StreamingOracle::new(stream, self.sigma1, self.holdout, self.seed)?;
        solve_online(cfg, &mut oracle)
    }

    pub fn solve(&self, cfg: &SolverConfig) -> spider_sqn::Result<RunTrace> {
        match self.problem {
            Problem::Svm => self.run(SigmoidLoss, cfg),
            Problem::Robust => self.run(RobustLog, cfg),
            Problem::Logistic => self.run(LogisticCrossEntropy, cfg),
        }
    }

    /// Features lie in `[0, 1]^d` and labels in `{-1, +1}`.
    pub fn curvature_bound(&self) -> f64 {
        let d = self.generator.dim() as f64;
        let loss = match self.problem {
            Problem::Svm => SigmoidLoss.curvature(1.0),
            Problem::Robust => RobustLog.curvature(1.0),
            Problem::Logistic => LogisticCrossEntropy.curvature(1.0),
        };
        loss * d + regularizer(self.problem, self.reg).curvature()
    }
}

pub enum Source {
    Fixed(Instance),
    Online(OnlineSource),
}

impl Source {
    pub fn solve(&self, cfg: &SolverConfig) -> spider_sqn::Result<RunTrace> {
        match self {
            Source::Fixed(inst) => inst.solve(cfg),
            Source::Online(src) => src.solve(cfg),
        }
    }

    fn curvature_bound(&self) -> f64 {
        match self {
            Source::Fixed(inst) => inst.curvature_bound(),
            Source::Online(src) => src.curvature_bound(),
        }
    }
}

/// The problem and every (algorithm, seed) run, algorithm-major.
pub struct Plan {
    pub source: Source,
    pub runs: Vec<SolverConfig>,
}

pub fn load_dataset(s: &Settings) -> Result<Dataset, CliError> {
    let mut data = match (&s.data, s.synthetic_spec()?) {
        (Some(path), _) => {
            let file = File::open(path)
                .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
            let label_map = match s.positive_class {
                Some(c) => LabelMap::OneVsRest(c),
                None => LabelMap::Sign,
            };
            parse_libsvm(BufReader::new(file), ParseOptions { label_map, dim: None })?
        }
        (None, Some((n, d, density))) => generate_synthetic(n, d, density, s.seed())?,
        (None, None) => {
            return Err(CliError::Usage("need --data PATH or --synthetic n,d,density".into()))
        }
    };
    if s.normalize.unwrap_or(false) {
        data.scale_max_abs();
    }
    Ok(data)
}

fn build_source(s: &Settings) -> Result<Source, CliError> {
    let problem = s.problem.unwrap_or(Problem::Svm);
    let reg = s.reg.unwrap_or(DEFAULT_REG);
    if !s.online.unwrap_or(false) {
        return Ok(Source::Fixed(Instance::new(problem, load_dataset(s)?, reg)));
    }
    if s.data.is_some() {
        return Err(CliError::Usage("--online samples a synthetic distribution; use --synthetic".into()));
    }
    let Some((n, d, density)) = s.synthetic_spec()? else {
        return Err(CliError::Usage("--online needs --synthetic n,d,density".into()));
    };
    Ok(Source::Online(OnlineSource {
        generator: SyntheticGenerator::new(d, density, s.seed())?,
        problem,
        reg,
        holdout: n,
        sigma1: s.sigma1.unwrap_or(1.0),
        seed: s.seed(),
    }))
}

/// `(L, sigma_min, sigma_max)`; missing sigmas come from the eigenvalue
/// bounds of the damped L-BFGS matrices.
fn curvature_constants(s: &Settings, source: &Source) -> Result<(f64, f64, f64), CliError> {
    let l = s.l.unwrap_or_else(|| source.curvature_bound());
    let delta = s.delta.unwrap_or(1.0);
    let m = s.m.unwrap_or(5);
    let (lo, hi) = if m == 0 {
        (1.0, 1.0)
    } else if s.sigma_min.is_some() && s.sigma_max.is_some() {
        (0.0, 0.0)
    } else {
        theoretical_eig_bounds(delta, s.kappa.unwrap_or(l), m)?
    };
    Ok((l, s.sigma_min.unwrap_or(lo), s.sigma_max.unwrap_or(hi)))
}

pub fn build_plan(s: &Settings, default_algos: &[Algorithm], grid: Grid, exec: Exec) -> Result<Plan, CliError> {
    let source = build_source(s)?;
    let algos = match &s.algo {
        Some(_) => s.algorithms()?,
        None => default_algos.to_vec(),
    };
    let seeds = s.run_seeds()?;
    let theoretical = s.step == Some(StepMode::Theoretical);
    let consts = if theoretical || matches!(source, Source::Online(_)) {
        Some(curvature_constants(s, &source)?)
    } else {
        None
    };

    let mut runs = Vec::with_capacity(algos.len() * seeds.len());
    for &algorithm in &algos {
        let (n, refresh_batch) = match &source {
            Source::Fixed(inst) => (inst.n(), None),
            Source::Online(_) => {
                let r = match s.refresh_batch {
                    Some(r) => r,
                    None => {
                        let Some(eps) = s.eps else {
                            return Err(CliError::Usage("--online needs --refresh-batch or --eps".into()));
                        };
                        let (l, lo, hi) = consts.expect("online constants");
                        let variant = if algorithm.is_momentum_family() {
                            StepVariant::Beta
                        } else {
                            StepVariant::Eta
                        };
                        online_refresh_batch(variant, l, lo, hi, s.sigma1.unwrap_or(1.0), eps)?
                    }
                };
                (r, Some(r))
            }
        };
        let online = refresh_batch.is_some();
        let batch = s.batch.unwrap_or(if online { theoretical_epoch(n) } else { DEFAULT_BATCH });
        let q = s.q.unwrap_or(if online { theoretical_epoch(n) } else { practical_epoch(n, batch) });
        let step = match (theoretical, consts) {
            (true, Some((l, sigma_min, sigma_max))) => StepRule::Theoretical { l, sigma_min, sigma_max },
            _ => StepRule::Practical {
                eta: s.eta.unwrap_or(DEFAULT_STEP),
                beta: s.beta.unwrap_or(DEFAULT_STEP),
            },
        };
        let checkpoints = match grid {
            Grid::Iterations => Checkpointing::Iterations(s.checkpoint_every.map_or(q, |c| c as usize)),
            Grid::Sfo => Checkpointing::Sfo(s.checkpoint_every.unwrap_or(n as u64)),
        };
        for &seed in &seeds {
            let mut cfg = SolverConfig::practical(algorithm, n);
            cfg.q = q;
            cfg.batch = batch;
            cfg.refresh_batch = refresh_batch;
            cfg.memory = s.m.unwrap_or(5);
            cfg.delta = s.delta.unwrap_or(1.0);
            cfg.iterations = s.k.unwrap_or(DEFAULT_EPOCHS * q);
            cfg.seed = seed;
            cfg.step = step;
            cfg.lambda_rule = s.lambda_rule.map_or(LambdaRule::default(), Into::into);
            cfg.checkpoints = checkpoints;
            cfg.exec = exec;
            cfg.validate()?;
            runs.push(cfg);
        }
    }
    Ok(Plan { source, runs })
}
