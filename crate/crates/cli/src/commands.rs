use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use spider_sqn::audit::{run_audit, AuditOptions};
use spider_sqn::data::{generate_synthetic, write_libsvm};
use spider_sqn::objectives::Exec;
use spider_sqn::solvers::{Algorithm, Faults, RunTrace};

use crate::output::{median, trace_writer, write_summary, write_trace_rows, Outcome};
use crate::problem::{build_plan, Grid};
use crate::settings::Settings;
use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "ssqn", version, about = "Stochastic quasi-Newton optimizers with SPIDER variance reduction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic LIBSVM dataset.
    GenData(GenDataArgs),
    /// Run algorithms and write one trace per (algorithm, seed).
    Run(Settings),
    /// Run a plan of algorithms and seeds; write traces and summary.csv.
    Bench(Settings),
    /// Check the solver invariants on self-contained instances.
    Audit(AuditArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 0.05)]
    pub density: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Accept curvature pairs undamped.
    DampingOff,
    /// Drop the `delta` floor on the initial scaling.
    GammaFloorOff,
    /// Evaluate SPIDER differences on two independent batches.
    SpiderBatchMismatch,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Deliberately break an invariant; may be repeated.
    #[arg(long)]
    pub inject: Vec<Fault>,
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Run(s) => run(s.with_plan()?),
        Command::Bench(s) => bench(s.with_plan()?),
        Command::Audit(a) => audit(&a),
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let data = generate_synthetic(a.n, a.d, a.density, a.seed)?;
    let mut out = BufWriter::new(File::create(&a.out)?);
    write_libsvm(&data, &mut out)?;
    out.flush()?;
    println!(
        "wrote {}: n = {}, d = {}, density = {:.6} ({} nonzeros)",
        a.out.display(),
        data.len(),
        data.dim(),
        data.density(),
        data.nnz()
    );
    Ok(())
}

fn trace_path(dir: &Path, t: &RunTrace) -> PathBuf {
    dir.join(format!("{}_seed{}.csv", t.algorithm.name(), t.seed))
}

fn write_trace_file(dir: &Path, t: &RunTrace) -> Result<(), CliError> {
    let mut w = trace_writer(File::create(trace_path(dir, t))?)?;
    write_trace_rows(&mut w, t)?;
    w.flush()?;
    Ok(())
}

/// Runs are sequential and use the data-parallel batch evaluator. With no
/// `--out` every trace goes to stdout under one header.
pub fn run(s: Settings) -> Result<(), CliError> {
    let plan = build_plan(&s, &[Algorithm::SpiderSqn], Grid::Iterations, Exec::Parallel)?;
    match &s.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for cfg in &plan.runs {
                let trace = plan.source.solve(cfg)?;
                write_trace_file(dir, &trace)?;
            }
        }
        None => {
            let mut w = trace_writer(io::stdout().lock())?;
            for cfg in &plan.runs {
                let trace = plan.source.solve(cfg)?;
                write_trace_rows(&mut w, &trace)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Runs fan out over a worker pool, one sequential solver each; results are
/// written in plan order.
pub fn bench(s: Settings) -> Result<(), CliError> {
    let Some(dir) = s.out.clone() else {
        return Err(CliError::Usage("bench needs --out DIR".into()));
    };
    let plan = build_plan(&s, &Algorithm::ALL, Grid::Sfo, Exec::Sequential)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(s.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        plan.runs
            .par_iter()
            .map(|cfg| Outcome {
                algorithm: cfg.algorithm,
                seed: cfg.seed,
                result: plan.source.solve(cfg).map_err(|e| e.to_string()),
            })
            .collect()
    });

    fs::create_dir_all(&dir)?;
    for o in &outcomes {
        match &o.result {
            Ok(t) => write_trace_file(&dir, t)?,
            Err(e) => eprintln!("{} seed {}: {e}", o.algorithm, o.seed),
        }
    }
    write_summary(BufWriter::new(File::create(dir.join("summary.csv"))?), &outcomes)?;

    println!("{:<16} {:>8} {:>24} {:>24}", "algorithm", "ok", "median final f", "median grad norm");
    let mut seen: Vec<Algorithm> = Vec::new();
    for o in &outcomes {
        if seen.contains(&o.algorithm) {
            continue;
        }
        seen.push(o.algorithm);
        let ok: Vec<&RunTrace> = outcomes
            .iter()
            .filter(|p| p.algorithm == o.algorithm)
            .filter_map(|p| p.result.as_ref().ok())
            .collect();
        let total = outcomes.iter().filter(|p| p.algorithm == o.algorithm).count();
        let f: Vec<f64> = ok.iter().map(|t| t.final_f).collect();
        let g: Vec<f64> = ok.iter().map(|t| t.final_grad_norm).collect();
        let show = |m: Option<f64>| m.map_or("-".to_string(), |v| format!("{v:.10e}"));
        println!(
            "{:<16} {:>8} {:>24} {:>24}",
            o.algorithm.name(),
            format!("{}/{total}", ok.len()),
            show(median(&f)),
            show(median(&g))
        );
    }

    if outcomes.iter().all(|o| o.result.is_err()) {
        return Err(CliError::AllFailed(outcomes.len()));
    }
    Ok(())
}

pub fn audit(a: &AuditArgs) -> Result<(), CliError> {
    let mut faults = Faults::default();
    for f in &a.inject {
        match f {
            Fault::DampingOff => faults.damping.damping_off = true,
            Fault::GammaFloorOff => faults.damping.gamma_floor_off = true,
            Fault::SpiderBatchMismatch => faults.spider_batch_mismatch = true,
        }
    }
    let opts = AuditOptions {
        seed: a.seed,
        faults,
        ..AuditOptions::default()
    };
    let report = run_audit(&opts);
    for c in &report.checks {
        println!("{c}");
    }
    if report.all_passed() {
        println!("audit passed: {} checks", report.checks.len());
        Ok(())
    } else {
        let names: Vec<&str> = report.failed().map(|c| c.name).collect();
        println!("audit failed: {}", names.join(", "));
        Err(CliError::AuditFailed)
    }
}
