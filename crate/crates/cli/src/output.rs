//! CSV traces and the bench summary.

use std::io::Write;

use spider_sqn::solvers::{Algorithm, RunTrace};

use crate::CliError;

pub const TRACE_HEADER: [&str; 8] = [
    "algorithm", "seed", "k", "paper_sfo", "grad_evals", "f", "grad_norm", "wall_ms",
];

pub const SUMMARY_HEADER: [&str; 9] = [
    "algorithm", "seed", "status", "k", "paper_sfo", "grad_evals", "final_f", "final_grad_norm",
    "wall_ms",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trace_writer<W: Write>(out: W) -> Result<csv::Writer<W>, CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    Ok(w)
}

pub fn write_trace_rows<W: Write>(w: &mut csv::Writer<W>, trace: &RunTrace) -> Result<(), CliError> {
    let alg = trace.algorithm.name();
    let seed = trace.seed.to_string();
    for c in &trace.checkpoints {
        w.write_record([
            alg,
            &seed,
            &c.k.to_string(),
            &c.paper_sfo.to_string(),
            &c.grad_evals.to_string(),
            &num(c.f),
            &num(c.grad_norm),
            &num(c.wall_ms),
        ])?;
    }
    Ok(())
}

/// Mean of the two middle values for even counts; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// One bench run: its trace, or the error that ended it.
pub struct Outcome {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub result: Result<RunTrace, String>,
}

struct Finals {
    k: f64,
    sfo: f64,
    evals: f64,
    f: f64,
    grad_norm: f64,
    wall_ms: f64,
}

fn finals(t: &RunTrace) -> Finals {
    let last = t.checkpoints.last();
    Finals {
        k: last.map_or(0.0, |c| c.k as f64),
        sfo: t.counter.paper_sfo as f64,
        evals: t.counter.component_grad_evals as f64,
        f: t.final_f,
        grad_norm: t.final_grad_norm,
        wall_ms: last.map_or(0.0, |c| c.wall_ms),
    }
}

/// Per-run rows in plan order, then one `median` row per algorithm over its
/// successful runs.
pub fn write_summary<W: Write>(out: W, outcomes: &[Outcome]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    let mut order: Vec<Algorithm> = Vec::new();
    for o in outcomes {
        if !order.contains(&o.algorithm) {
            order.push(o.algorithm);
        }
        let seed = o.seed.to_string();
        match &o.result {
            Ok(t) => {
                let f = finals(t);
                w.write_record([
                    o.algorithm.name(),
                    &seed,
                    "ok",
                    &(f.k as u64).to_string(),
                    &t.counter.paper_sfo.to_string(),
                    &t.counter.component_grad_evals.to_string(),
                    &num(f.f),
                    &num(f.grad_norm),
                    &num(f.wall_ms),
                ])?;
            }
            Err(_) => {
                w.write_record([o.algorithm.name(), &seed, "diverged", "", "", "", "", "", ""])?;
            }
        }
    }
    for alg in order {
        let runs: Vec<&Outcome> = outcomes.iter().filter(|o| o.algorithm == alg).collect();
        let ok: Vec<Finals> = runs.iter().filter_map(|o| o.result.as_ref().ok()).map(finals).collect();
        let status = match ok.len() {
            0 => "diverged",
            n if n == runs.len() => "ok",
            _ => "partial",
        };
        let col = |pick: fn(&Finals) -> f64| {
            let v: Vec<f64> = ok.iter().map(pick).collect();
            median(&v).map_or(String::new(), num)
        };
        w.write_record([
            alg.name(),
            "median",
            status,
            &col(|f| f.k),
            &col(|f| f.sfo),
            &col(|f| f.evals),
            &col(|f| f.f),
            &col(|f| f.grad_norm),
            &col(|f| f.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
