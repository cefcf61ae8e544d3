//! Flags shared by `run` and `bench`, plan files, and precedence merging.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use spider_sqn::momentum::LambdaRule;
use spider_sqn::solvers::Algorithm;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Problem {
    /// Sigmoid-loss SVM with a ridge term.
    Svm,
    /// Robust regression, `log(r^2 / 2 + 1)` loss.
    Robust,
    /// Logistic loss with a nonconvex regularizer.
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StepMode {
    Practical,
    Theoretical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LambdaArg {
    Min,
    Mid,
    Max,
}

impl From<LambdaArg> for LambdaRule {
    fn from(a: LambdaArg) -> Self {
        match a {
            LambdaArg::Min => LambdaRule::Min,
            LambdaArg::Mid => LambdaRule::Mid,
            LambdaArg::Max => LambdaRule::Max,
        }
    }
}

/// Every field is optional so that flags, plan values and defaults can be
/// layered.
#[derive(Parser, Clone, Debug, Default)]
#[command(name = "plan")]
pub struct Settings {
    /// Plan file of `key=value` lines; explicit flags take precedence.
    #[arg(long)]
    pub plan: Option<PathBuf>,

    /// LIBSVM-format dataset.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Synthetic dataset `n,d,density`, generated from `--seed`.
    #[arg(long, value_name = "N,D,DENSITY")]
    pub synthetic: Option<String>,
    /// Rescale every feature to `[-1, 1]` by its largest magnitude.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub normalize: Option<bool>,
    /// Map this class to +1 and every other label to -1.
    #[arg(long)]
    pub positive_class: Option<i64>,

    #[arg(long, value_enum)]
    pub problem: Option<Problem>,
    /// Regularization weight `r`.
    #[arg(long)]
    pub reg: Option<f64>,

    /// Algorithm name, or a comma-separated list.
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long, value_enum)]
    pub step: Option<StepMode>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Smoothness constant; defaults to the instance's curvature bound.
    #[arg(long = "L")]
    pub l: Option<f64>,
    #[arg(long)]
    pub sigma_min: Option<f64>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    /// Curvature bound used for the eigenvalue bounds; defaults to `L`.
    #[arg(long)]
    pub kappa: Option<f64>,

    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub refresh_batch: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub lambda_rule: Option<LambdaArg>,

    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated run seeds; defaults to `--seed`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Iterations between checkpoints for `run`, SFO units for `bench`.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Sample from the synthetic distribution instead of a fixed dataset.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub online: Option<bool>,
    /// Bound on the per-sample gradient deviation, for the online recipe.
    #[arg(long)]
    pub sigma1: Option<f64>,
    /// Target accuracy for the online recipe.
    #[arg(long)]
    pub eps: Option<f64>,

    /// Worker threads for `bench`.
    #[arg(long)]
    pub jobs: Option<usize>,
}

macro_rules! layer {
    ($hi:expr, $lo:expr; $($f:ident),*) => {
        Settings { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Settings {
    /// Fields set here win over those set in `lower`.
    /// The dataset source is taken whole: `--data` and `--synthetic` from
    /// the higher layer both hide either one below.
    pub fn over(self, mut lower: Settings) -> Settings {
        if self.data.is_some() || self.synthetic.is_some() {
            lower.data = None;
            lower.synthetic = None;
        }
        layer!(self, lower; plan, data, synthetic, normalize, positive_class, problem, reg,
            algo, step, eta, beta, l, sigma_min, sigma_max, kappa, q, batch, refresh_batch,
            m, delta, k, lambda_rule, seed, seeds, checkpoint_every, out, online, sigma1,
            eps, jobs)
    }

    /// Applies the plan file named by `--plan`, if any.
    pub fn with_plan(self) -> Result<Settings, CliError> {
        match &self.plan {
            None => Ok(self),
            Some(path) => {
                let mut plan = read_plan(path)?;
                if let (Some(data), Some(dir)) = (&plan.data, path.parent()) {
                    plan.data = Some(dir.join(data));
                }
                Ok(self.over(plan))
            }
        }
    }

    pub fn algorithms(&self) -> Result<Vec<Algorithm>, CliError> {
        match &self.algo {
            None => Ok(vec![Algorithm::SpiderSqn]),
            Some(list) => split_list(list)
                .map(|s| s.parse::<Algorithm>().map_err(CliError::from))
                .collect(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn run_seeds(&self) -> Result<Vec<u64>, CliError> {
        match &self.seeds {
            None => Ok(vec![self.seed()]),
            Some(list) => {
                let seeds = split_list(list)
                    .map(|s| {
                        s.parse::<u64>()
                            .map_err(|_| CliError::Usage(format!("bad seed {s:?}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if seeds.is_empty() {
                    return Err(CliError::Usage("--seeds is empty".into()));
                }
                Ok(seeds)
            }
        }
    }

    /// `(n, d, density)` from `--synthetic`.
    pub fn synthetic_spec(&self) -> Result<Option<(usize, usize, f64)>, CliError> {
        let Some(spec) = &self.synthetic else {
            return Ok(None);
        };
        let parts: Vec<&str> = split_list(spec).collect();
        let bad = || CliError::Usage(format!("--synthetic expects n,d,density, got {spec:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n = parts[0].parse().map_err(|_| bad())?;
        let d = parts[1].parse().map_err(|_| bad())?;
        let density = parts[2].parse().map_err(|_| bad())?;
        Ok(Some((n, d, density)))
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty())
}

/// Turns `key=value` lines into a flag list and parses it like the command
/// line.
pub fn parse_plan(text: &str) -> Result<Settings, CliError> {
    let mut argv = vec!["plan".to_string()];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "plan line {}: expected key=value, got {line:?}",
                i + 1
            )));
        };
        let key = match key.trim() {
            "k" | "K" => "K".to_string(),
            "l" | "L" => "L".to_string(),
            other => other.replace('_', "-"),
        };
        if key == "plan" {
            return Err(CliError::Usage("plan files cannot include other plans".into()));
        }
        argv.push(format!("--{key}"));
        argv.push(value.trim().to_string());
    }
    Settings::try_parse_from(argv).map_err(|e| CliError::Usage(format!("plan file: {e}")))
}

pub fn read_plan(path: &Path) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read plan {}: {e}", path.display())))?;
    parse_plan(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_keys_and_precedence() {
        let plan = parse_plan(
            "# comment\nalgo = spider_boost,sgd\nK=7\nsigma_min=0.5\nnormalize=true\nL=3\n",
        )
        .unwrap();
        assert_eq!(plan.k, Some(7));
        assert_eq!(plan.l, Some(3.0));
        assert_eq!(plan.sigma_min, Some(0.5));
        assert_eq!(plan.normalize, Some(true));

        let flags = Settings {
            k: Some(9),
            ..Default::default()
        };
        let merged = flags.over(plan);
        assert_eq!(merged.k, Some(9));
        assert_eq!(
            merged.algorithms().unwrap(),
            vec![Algorithm::SpiderBoost, Algorithm::Sgd]
        );

        let plan = parse_plan("data=train.svm\nseed=4").unwrap();
        let flags = Settings {
            synthetic: Some("10,2,1".into()),
            ..Default::default()
        };
        let merged = flags.over(plan);
        assert_eq!(merged.data, None);
        assert_eq!(merged.seed, Some(4));
    }

    #[test]
    fn plan_errors() {
        assert!(parse_plan("K 7").is_err());
        assert!(parse_plan("nosuchkey=1").is_err());
        assert!(parse_plan("K=x").is_err());
        assert!(parse_plan("plan=other.txt").is_err());
    }

    #[test]
    fn lists() {
        let s = Settings {
            seeds: Some("3, 1,2".into()),
            synthetic: Some("100,5,0.5".into()),
            ..Default::default()
        };
        assert_eq!(s.run_seeds().unwrap(), vec![3, 1, 2]);
        assert_eq!(s.synthetic_spec().unwrap(), Some((100, 5, 0.5)));
        assert_eq!(Settings::default().run_seeds().unwrap(), vec![1]);
        let bad = Settings {
            synthetic: Some("100,5".into()),
            ..Default::default()
        };
        assert!(bad.synthetic_spec().is_err());
    }
}
