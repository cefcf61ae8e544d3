use spider_sqn::data::generate_synthetic;
use spider_sqn::objectives::{
    objective_grad, Exec, GaussianLinearStream, NonconvexLogisticObjective, Objective, QuadraticComponent,
    QuadraticFamily, RobustRegressionObjective, StreamingOracle, SvmSigmoidObjective,
};
use spider_sqn::solvers::{
    expected_paper_sfo, solve, solve_online, Algorithm, Checkpointing, OutputRule, SolverConfig, StepRule,
};

fn cfg(algo: Algorithm, n: usize, batch: usize, epochs: usize, step: f64) -> SolverConfig {
    let mut c = SolverConfig::practical(algo, n);
    c.batch = batch;
    c.q = (2 * n).div_ceil(batch);
    c.iterations = epochs * c.q;
    c.checkpoints = Checkpointing::Iterations(c.q);
    c.step = StepRule::Practical { eta: step, beta: step };
    c.exec = Exec::Sequential;
    c
}

fn decreases_on<O: Objective>(obj: &O, name: &str) {
    for algo in Algorithm::ALL {
        let t = solve(&cfg(algo, obj.num_components(), 32, 5, 0.05), obj).unwrap();
        let first = t.checkpoints[0].f;
        assert!(t.final_f < first, "{name} {algo}: {} !< {first}", t.final_f);
    }
}

#[test]
fn every_algorithm_decreases_every_objective() {
    let data = generate_synthetic(600, 30, 0.2, 8).unwrap();
    decreases_on(&SvmSigmoidObjective::new(data.clone(), 0.001), "svm");
    decreases_on(&RobustRegressionObjective::new(data.clone()), "robust");
    decreases_on(&NonconvexLogisticObjective::new(data, 0.001), "logistic");
}

#[test]
fn parallel_batches_reproduce_sequential_runs() {
    let data = generate_synthetic(1500, 40, 0.1, 3).unwrap();
    let obj = SvmSigmoidObjective::new(data, 0.001);
    for algo in [Algorithm::SpiderSqnMed, Algorithm::SdlbfgsVr, Algorithm::Sgd] {
        let seq = cfg(algo, 1500, 512, 2, 0.01);
        let mut par = seq.clone();
        par.exec = Exec::Parallel;
        assert!(solve(&seq, &obj).unwrap().same_path(&solve(&par, &obj).unwrap()), "{algo}");
    }
}

#[test]
fn converges_to_the_minimizer_of_a_separable_quadratic() {
    // f = mean_i 1/2 sum_j h_ij (x_j - c_ij)^2, minimized at x_j = sum_i h_ij c_ij / sum_i h_ij
    let (n, d) = (40, 3);
    let comps: Vec<QuadraticComponent> = (0..n)
        .map(|i| {
            let mut h = vec![0.0; d * d];
            for j in 0..d {
                h[j * d + j] = 0.5 + ((i * 7 + j * 3) % 5) as f64 * 0.25;
            }
            let center = (0..d).map(|j| ((i * 13 + j * 5) % 9) as f64 / 4.0 - 1.0).collect();
            QuadraticComponent { hessian: h, center }
        })
        .collect();
    let star: Vec<f64> = (0..d)
        .map(|j| {
            let num: f64 = comps.iter().map(|c| c.hessian[j * d + j] * c.center[j]).sum();
            let den: f64 = comps.iter().map(|c| c.hessian[j * d + j]).sum();
            num / den
        })
        .collect();
    let fam = QuadraticFamily::new(d, comps);
    for algo in [Algorithm::SpiderSqn, Algorithm::SpiderBoost, Algorithm::SpiderSqnMed] {
        let t = solve(&cfg(algo, n, 8, 150, 0.2), &fam).unwrap();
        let err: f64 = t.final_x.iter().zip(&star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-6, "{algo}: {err}");
        assert!(objective_grad(&fam, &t.final_x, Exec::Sequential).norm() < 1e-6);
    }
}

#[test]
fn online_runs_approach_the_population_minimizer() {
    let h = vec![1.0, 2.0, 4.0];
    let mu = vec![0.5, -1.0, 2.0];
    let star: Vec<f64> = mu.iter().zip(&h).map(|(m, c)| m / c).collect();
    let stream = GaussianLinearStream::new(h, mu, 0.3);
    let mut oracle = StreamingOracle::new(stream.clone(), stream.sigma1(), 1, 0).unwrap();
    let mut c = cfg(Algorithm::SpiderSqn, 400, 20, 1, 0.1);
    c.refresh_batch = Some(400);
    c.q = 20;
    c.iterations = 400;
    c.checkpoints = Checkpointing::Sfo(400);
    let t = solve_online(&c, &mut oracle).unwrap();
    let err = |x: &[f64]| x.iter().zip(&star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let start = err(&[0.0, 0.0, 0.0]);
    assert!(err(&t.final_x) < 0.1 * start, "{} vs {start}", err(&t.final_x));
    assert_eq!(t.counter.paper_sfo, expected_paper_sfo(400, 20, 20, 400));
    assert_eq!(t.checkpoints.last().unwrap().k, 400);
}

#[test]
fn random_output_iterate_is_one_of_the_iterates() {
    let data = generate_synthetic(300, 10, 0.3, 1).unwrap();
    let obj = SvmSigmoidObjective::new(data, 0.001);
    let mut c = cfg(Algorithm::SpiderSqnM, 300, 16, 2, 0.05);
    c.output_rule = OutputRule::UniformRandomIterate;
    let t = solve(&c, &obj).unwrap();
    assert!((1..=c.iterations).contains(&t.output_index));
    let mut c_short = c.clone();
    c_short.iterations = t.output_index;
    c_short.output_rule = OutputRule::LastIterate;
    let prefix = solve(&c_short, &obj).unwrap();
    assert_eq!(prefix.final_x, t.output_x);
}
