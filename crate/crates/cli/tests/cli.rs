use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssqn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssqn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Rows of a CSV file without the header, `wall_ms` column dropped.
fn rows_without_wall(text: &str, wall_col: usize) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != wall_col)
                .map(|(_, v)| v.to_string())
                .collect()
        })
        .collect()
}

#[test]
fn gen_data_line_count_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.svm");
    let b = dir.path().join("b.svm");
    for f in [&a, &b] {
        let o = ssqn(&["gen-data", "--n", "1000", "--d", "50", "--density", "0.05", "--seed", "7", "--out", p(f)]);
        assert_eq!(code(&o), 0, "{o:?}");
        assert!(stdout(&o).contains("n = 1000"));
    }
    let text = fs::read(&a).unwrap();
    assert_eq!(text.iter().filter(|&&c| c == b'\n').count(), 1000);
    assert_eq!(text, fs::read(&b).unwrap());
}

#[test]
fn gen_data_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.svm");
    let o = ssqn(&["gen-data", "--n", "10", "--d", "5", "--density", "0", "--out", p(&f)]);
    assert_eq!(code(&o), 2);
    let o = ssqn(&["gen-data", "--n", "10", "--d", "5", "--out", p(&dir.path().join("no/such/dir/x.svm"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn run_with_zero_iterations_gives_initial_row() {
    let o = ssqn(&["run", "--synthetic", "200,10,0.3", "--K", "0"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "algorithm,seed,k,paper_sfo,grad_evals,f,grad_norm,wall_ms");
    assert_eq!(lines.len(), 2);
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&cols[..5], &["spider_sqn", "1", "0", "0", "0"]);
    // 1 - tanh(0) at the origin
    assert_eq!(cols[5].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn run_is_deterministic_and_counts_rows() {
    let args = [
        "run", "--synthetic", "400,20,0.2", "--algo", "spider_sqn_med", "--batch", "32", "--K", "95",
        "--checkpoint-every", "10", "--seed", "3",
    ];
    let a = ssqn(&args);
    let b = ssqn(&args);
    assert_eq!(code(&a), 0);
    let (ta, tb) = (stdout(&a), stdout(&b));
    assert_eq!(ta.lines().count(), 1 + 95 / 10 + 1);
    assert_eq!(rows_without_wall(&ta, 7), rows_without_wall(&tb, 7));
}

#[test]
fn run_reads_libsvm_files_and_writes_to_dir() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.svm");
    fs::write(&data, "+1 1:0.5 3:1\n-1 2:1\n+1 1:1 2:0.25\n-1 3:0.75\n").unwrap();
    let out = dir.path().join("out");
    let o = ssqn(&[
        "run", "--data", p(&data), "--problem", "logistic", "--algo", "sgd,spider_boost", "--seeds", "1,2",
        "--batch", "2", "--K", "12", "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    for name in ["sgd_seed1", "sgd_seed2", "spider_boost_seed1", "spider_boost_seed2"] {
        let text = fs::read_to_string(out.join(format!("{name}.csv"))).unwrap();
        // q = ceil(2 * 4 / 2) = 4
        assert_eq!(text.lines().count(), 1 + 12 / 4 + 1);
    }
}

#[test]
fn run_errors_map_to_exit_codes() {
    assert_eq!(code(&ssqn(&["run"])), 2);
    assert_eq!(code(&ssqn(&["run", "--synthetic", "10,2"])), 2);
    assert_eq!(code(&ssqn(&["run", "--synthetic", "10,2,0.5", "--algo", "newton"])), 2);
    assert_eq!(code(&ssqn(&["run", "--data", "/no/such/file"])), 2);
    assert_eq!(code(&ssqn(&["run", "--synthetic", "10,2,0.5", "--batch", "0"])), 2);
    let o = ssqn(&["run", "--synthetic", "300,10,0.3", "--algo", "sgd", "--eta", "1e8", "--K", "20"]);
    assert_eq!(code(&o), 3);
}

fn bench_plan(dir: &Path) -> std::path::PathBuf {
    let plan = dir.join("plan.txt");
    fs::write(
        &plan,
        "# two algorithms, three seeds\nsynthetic=300,20,0.2\nproblem=svm\nalgo=spider_sqn,spider_boost\n\
         seeds=1,2,3\nbatch=32\nK=60\nseed=9\n",
    )
    .unwrap();
    plan
}

#[test]
fn bench_enumerates_runs_and_medians() {
    let dir = tempfile::tempdir().unwrap();
    let plan = bench_plan(dir.path());
    let out = dir.path().join("out");
    let o = ssqn(&["bench", "--plan", p(&plan), "--out", p(&out), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{o:?}");

    let traces = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() != "summary.csv")
        .count();
    assert_eq!(traces, 6);

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    let per_run: Vec<&Vec<&str>> = rows.iter().filter(|r| r[1] != "median").collect();
    assert_eq!(per_run.len(), 6);
    for algo in ["spider_sqn", "spider_boost"] {
        let mut finals: Vec<f64> = per_run
            .iter()
            .filter(|r| r[0] == algo)
            .map(|r| r[6].parse().unwrap())
            .collect();
        finals.sort_by(f64::total_cmp);
        let med = rows.iter().find(|r| r[0] == algo && r[1] == "median").unwrap();
        assert_eq!(med[6].parse::<f64>().unwrap(), finals[1]);
        assert_eq!(med[2], "ok");
    }
    // every trace ends at K on the SFO grid
    for r in &per_run {
        assert_eq!(r[3], "60");
    }
}

#[test]
fn bench_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let plan = bench_plan(dir.path());
    let mut summaries = Vec::new();
    for (i, jobs) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let o = ssqn(&["bench", "--plan", p(&plan), "--out", p(&out), "--jobs", jobs]);
        assert_eq!(code(&o), 0);
        summaries.push(fs::read_to_string(out.join("summary.csv")).unwrap());
    }
    assert_eq!(rows_without_wall(&summaries[0], 8), rows_without_wall(&summaries[1], 8));
}

#[test]
fn flags_override_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.txt");
    fs::write(&plan, "synthetic=200,10,0.3\nK=40\ncheckpoint_every=10\nalgo=sgd\n").unwrap();
    let o = ssqn(&["run", "--plan", p(&plan)]);
    assert_eq!(stdout(&o).lines().count(), 1 + 4 + 1);
    let o = ssqn(&["run", "--plan", p(&plan), "--K", "20"]);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1 + 2 + 1);
    assert!(text.lines().nth(1).unwrap().starts_with("sgd,"));
    fs::write(&plan, "K=oops\n").unwrap();
    assert_eq!(code(&ssqn(&["run", "--plan", p(&plan)])), 2);
}

#[test]
fn bench_records_divergence_and_fails_only_when_all_do() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let common = ["bench", "--synthetic", "300,10,0.3", "--batch", "16", "--K", "20", "--seeds", "1,2", "--out", p(&out)];
    let mut args = common.to_vec();
    args.extend(["--algo", "sgd,spider_sqn_m", "--eta", "1e8"]);
    let o = ssqn(&args);
    assert_eq!(code(&o), 0);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("sgd,1,diverged"));
    assert!(summary.contains("sgd,median,diverged"));
    assert!(summary.contains("spider_sqn_m,median,ok"));

    let mut args = common.to_vec();
    args.extend(["--algo", "sgd", "--eta", "1e8"]);
    assert_eq!(code(&ssqn(&args)), 3);
}

#[test]
fn online_run() {
    let o = ssqn(&[
        "run", "--online", "--synthetic", "500,20,0.3", "--refresh-batch", "400", "--K", "40", "--algo", "spider_sqn",
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let text = stdout(&o);
    let f: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(5).unwrap().parse().unwrap()).collect();
    assert!(f.last().unwrap() <= &f[0]);
    // the plain-variant recipe has no positive descent constant
    let o = ssqn(&["run", "--online", "--synthetic", "500,20,0.3", "--eps", "0.1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn audit_exit_codes() {
    let o = ssqn(&["audit"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("[PASS] damping_floor"));
    for fault in ["damping-off", "gamma-floor-off", "spider-batch-mismatch"] {
        let o = ssqn(&["audit", "--inject", fault]);
        assert_eq!(code(&o), 1, "{fault}");
        assert!(stdout(&o).contains("[FAIL]"));
    }
    assert_eq!(code(&ssqn(&["audit", "--inject", "nonsense"])), 2);
}
