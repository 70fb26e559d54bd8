use multitree::experiments::{
    bound_experiment, bound_trial_time, run_batch, BatchSpec, BoundTrialResult, Metric, Scenario,
};
use multitree::sim::{run_indexed, DegreeProfile, SimConfig};

fn desk_spec(repeats: u32) -> BatchSpec {
    let base = SimConfig { n: 120, horizon: 15.0, seed: 21, ..SimConfig::default() };
    let mut spec = BatchSpec::new(base, repeats);
    spec.metrics = Metric::ALL.to_vec();
    spec
}

#[test]
fn single_repeat_curves_equal_the_run() {
    let spec = desk_spec(1);
    let batch = run_batch(&spec).unwrap();
    let run = run_indexed(&spec.base, 0).unwrap();
    for metric in Metric::ALL {
        for curve in &batch.curves[&metric] {
            let expected: Vec<(f64, f64)> = run.samples.iter().map(|s| (s.time, metric.value(s))).collect();
            assert_eq!(curve.points, expected, "{metric} p{}", curve.percentile);
        }
    }
}

#[test]
fn extreme_percentiles_are_pointwise_worst_and_best() {
    let spec = desk_spec(40);
    let batch = run_batch(&spec).unwrap();
    let worst = batch.curve(Metric::Coverage, 0.2).unwrap();
    let best = batch.curve(Metric::Coverage, 100.0).unwrap();
    for (row, (&(_, lo), &(_, hi))) in worst.points.iter().zip(&best.points).enumerate() {
        let column: Vec<f64> = batch.samples.iter().map(|s| s[row].fraction_fully_covered).collect();
        assert_eq!(lo, column.iter().copied().fold(f64::INFINITY, f64::min));
        assert_eq!(hi, column.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
}

#[test]
fn curves_are_monotone_in_the_percentile() {
    let batch = run_batch(&desk_spec(30)).unwrap();
    for metric in Metric::ALL {
        let curves = &batch.curves[&metric];
        for pair in curves.windows(2) {
            for (a, b) in pair[0].points.iter().zip(&pair[1].points) {
                if metric.smaller_is_worse() {
                    assert!(a.1 <= b.1, "{metric}");
                } else {
                    assert!(a.1 >= b.1, "{metric}");
                }
            }
        }
    }
}

#[test]
fn parallelism_does_not_change_results() {
    let mut one = desk_spec(12);
    one.jobs = 1;
    let mut four = one.clone();
    four.jobs = 4;
    let a = run_batch(&one).unwrap();
    let b = run_batch(&four).unwrap();
    assert_eq!(a.curves, b.curves);
    assert_eq!(a.summary.runs, b.summary.runs);
    assert_eq!(a.csv(Metric::Coverage), b.csv(Metric::Coverage));
}

#[test]
fn csv_layout() {
    let batch = run_batch(&desk_spec(5)).unwrap();
    let csv = batch.csv(Metric::MaxDepth).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,p0.2,p1,p5,p50,p100"));
    assert_eq!(lines.count(), 16);
}

#[test]
fn infeasible_config_is_reported() {
    let mut spec = desk_spec(2);
    spec.base.k = 3;
    assert!(run_batch(&spec).is_err());
}

#[test]
fn scenario_profiles() {
    let loose = Scenario::Loose { k: 2, m: 2, alpha: 0.1 }.batch_spec(0).unwrap();
    assert_eq!(loose.base.degree_profile, DegreeProfile::Loose { alpha: 0.1 });
    let sc = Scenario::ServerClient { k: 2, m: 2, r: 2, alpha: 0.0 }.batch_spec(0).unwrap();
    assert_eq!(sc.base.degree_profile, DegreeProfile::ServerClient { r: 2, alpha: 0.0 });
    let pol = Scenario::Polarized { k: 2, m: 2, r: 2, alpha: 0.2 }.batch_spec(0).unwrap();
    assert_eq!(pol.base.n, 1000);
}

#[test]
fn three_node_bound_trial() {
    let mut times = Vec::new();
    for trial in 0..400 {
        let t = bound_trial_time(3, 17, trial);
        assert!(t.is_finite() && t > 0.0);
        times.push(t);
    }
    // either target covers the loose node within depth 2, so T is its first tick: Exp(1)
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    assert!((mean - 1.0).abs() < 0.15, "mean {mean}");
}

#[test]
fn tail_fractions_are_probabilities() {
    let res = bound_experiment(64, 1, 5, &[1.0, 2.0]).unwrap();
    assert_eq!(res.t_samples.len(), 1);
    for &(_, f) in &res.empirical_tail {
        assert!(f == 0.0 || f == 1.0);
    }
    assert!(bound_experiment(1, 5, 0, &[1.0]).is_err());
}

#[test]
fn median_time_grows_with_log_n() {
    let sizes = [64u32, 256, 1024];
    let medians: Vec<f64> = sizes.iter().map(|&n| bound_experiment(n, 60, 8, &[1.0]).unwrap().median()).collect();
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).log2()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = medians.iter().sum::<f64>() / 3.0;
    let slope = xs.iter().zip(&medians).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(slope > 0.0 && slope.is_finite(), "medians {medians:?}");
    for (&n, &m) in sizes.iter().zip(&medians) {
        assert!(m < BoundTrialResult::threshold(n, 0.0));
    }
}
