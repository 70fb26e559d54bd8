//! Repeated-run percentile curves and the single-tree convergence-time study.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Depth;
use crate::metrics::{fraction_fully_covered, is_converged};
use crate::protocol::DepthMode;
use crate::sim::{run_indexed, run_rng, ConfigError, DegreeProfile, MetricSample, SimConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("repeats must be at least 1")]
    NoRepeats,
    #[error("percentile {0} outside (0, 100]")]
    Percentile(f64),
    #[error("at least one percentile is required")]
    NoPercentiles,
    #[error("at least one metric is required")]
    NoMetrics,
    #[error("unknown scenario `{0}` (expected tight|source_coding|loose|server_client|polarized)")]
    UnknownScenario(String),
    #[error("source_coding uses K=3 and M in {{3, 4, 9}}, got K={k}, M={m}")]
    SourceCoding { k: u32, m: u32 },
    #[error("bound experiment needs N >= 2 and at least one trial")]
    BoundShape,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// A recorded observable and the direction in which it gets worse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Coverage,
    MaxDepth,
    Cycles,
    BufferedDepthError,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Coverage, Metric::MaxDepth, Metric::Cycles, Metric::BufferedDepthError];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Coverage => "coverage",
            Metric::MaxDepth => "max_depth",
            Metric::Cycles => "cycles",
            Metric::BufferedDepthError => "buffered_depth_error",
        }
    }

    /// Coverage is worse when smaller; everything else when larger.
    pub fn smaller_is_worse(self) -> bool {
        matches!(self, Metric::Coverage)
    }

    pub fn value(self, sample: &MetricSample) -> f64 {
        match self {
            Metric::Coverage => sample.fraction_fully_covered,
            Metric::MaxDepth => match sample.max_tree_depth {
                Depth::Finite(d) => d as f64,
                Depth::Infinite => f64::INFINITY,
            },
            Metric::Cycles => sample.cycle_count as f64,
            Metric::BufferedDepthError => sample.buffered_depth_error as f64,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// 1-based rank, counted from the worst run, of the `a`% worst run out of `runs`.
pub fn percentile_rank(a: f64, runs: usize) -> usize {
    ((a * runs as f64 / 100.0 - 1e-9).ceil() as usize).clamp(1, runs)
}

/// Value such that `a`% of `values` are at least as bad.
pub fn worst_percentile(metric: Metric, values: &mut [f64], a: f64) -> f64 {
    assert!(!values.is_empty());
    if metric.smaller_is_worse() {
        values.sort_by(|x, y| x.total_cmp(y));
    } else {
        values.sort_by(|x, y| y.total_cmp(x));
    }
    values[percentile_rank(a, values.len()) - 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub base: SimConfig,
    pub repeats: u32,
    pub percentiles: Vec<f64>,
    pub metrics: Vec<Metric>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Also test each final state for convergence. Costs `O(N^2)` rule probes per run.
    pub check_convergence: bool,
}

pub const DEFAULT_PERCENTILES: [f64; 5] = [0.2, 1.0, 5.0, 50.0, 100.0];

impl BatchSpec {
    pub fn new(base: SimConfig, repeats: u32) -> Self {
        BatchSpec {
            base,
            repeats,
            percentiles: DEFAULT_PERCENTILES.to_vec(),
            metrics: vec![Metric::Coverage, Metric::MaxDepth],
            jobs: 0,
            check_convergence: false,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.repeats == 0 {
            return Err(ExperimentError::NoRepeats);
        }
        if self.percentiles.is_empty() {
            return Err(ExperimentError::NoPercentiles);
        }
        if let Some(&p) = self.percentiles.iter().find(|&&p| !(p > 0.0 && p <= 100.0)) {
            return Err(ExperimentError::Percentile(p));
        }
        if self.metrics.is_empty() {
            return Err(ExperimentError::NoMetrics);
        }
        self.base.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PercentileCurve {
    pub metric: Metric,
    pub percentile: f64,
    pub points: Vec<(f64, f64)>,
}

impl PercentileCurve {
    pub fn at(&self, t: f64) -> Option<f64> {
        self.points.iter().find(|(pt, _)| (pt - t).abs() < 1e-9).map(|&(_, y)| y)
    }
}

/// Per-run outcome kept by the reducer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_index: u64,
    pub events: u64,
    pub final_coverage: f64,
    pub final_cycles: usize,
    pub converged: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchSummary {
    pub config: SimConfig,
    pub repeats: u32,
    pub percentiles: Vec<f64>,
    pub seed: u64,
    /// Run `i` draws from stream `i` of `seed`.
    pub run_streams: Vec<u64>,
    pub wall_time_secs: f64,
    pub fully_covered_fraction: f64,
    pub converged_fraction: Option<f64>,
    pub runs: Vec<RunSummary>,
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub curves: BTreeMap<Metric, Vec<PercentileCurve>>,
    /// Every run's samples, in run order.
    pub samples: Vec<Vec<MetricSample>>,
    pub summary: BatchSummary,
}

impl BatchResult {
    pub fn curve(&self, metric: Metric, percentile: f64) -> Option<&PercentileCurve> {
        self.curves.get(&metric)?.iter().find(|c| (c.percentile - percentile).abs() < 1e-12)
    }

    /// `t,p0.2,p1,...` table for one metric.
    pub fn csv(&self, metric: Metric) -> Option<String> {
        let curves = self.curves.get(&metric)?;
        let mut out = String::from("t");
        for c in curves {
            out.push_str(&format!(",p{}", c.percentile));
        }
        out.push('\n');
        for (row, &(t, _)) in curves[0].points.iter().enumerate() {
            out.push_str(&t.to_string());
            for c in curves {
                out.push_str(&format!(",{}", c.points[row].1));
            }
            out.push('\n');
        }
        Some(out)
    }
}

fn with_pool<T: Send>(jobs: usize, work: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    Ok(pool.install(work))
}

/// Runs every repeat and reduces them, in run order, to percentile curves.
pub fn run_batch(spec: &BatchSpec) -> Result<BatchResult, ExperimentError> {
    spec.validate()?;
    let started = Instant::now();
    let outcomes: Vec<Result<(Vec<MetricSample>, RunSummary), ConfigError>> = with_pool(spec.jobs, || {
        (0..spec.repeats as u64)
            .into_par_iter()
            .map(|i| {
                let res = run_indexed(&spec.base, i)?;
                let converged = spec.check_convergence.then(|| is_converged(&res.final_state, spec.base.depth_mode));
                let summary = RunSummary {
                    run_index: i,
                    events: res.events,
                    final_coverage: fraction_fully_covered(&res.final_state),
                    final_cycles: res.final_state.colors().map(|c| res.final_state.detect_cycles(c).count()).sum(),
                    converged,
                };
                Ok((res.samples, summary))
            })
            .collect()
    })?;
    let mut samples = Vec::with_capacity(outcomes.len());
    let mut runs = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (s, r) = outcome?;
        samples.push(s);
        runs.push(r);
    }

    let times = spec.base.record_times();
    let mut curves = BTreeMap::new();
    let mut column = vec![0.0; samples.len()];
    for &metric in &spec.metrics {
        let mut per_metric: Vec<PercentileCurve> = spec
            .percentiles
            .iter()
            .map(|&a| PercentileCurve { metric, percentile: a, points: Vec::with_capacity(times.len()) })
            .collect();
        for (row, &t) in times.iter().enumerate() {
            for curve in per_metric.iter_mut() {
                for (slot, run) in column.iter_mut().zip(&samples) {
                    *slot = metric.value(&run[row]);
                }
                curve.points.push((t, worst_percentile(metric, &mut column, curve.percentile)));
            }
        }
        curves.insert(metric, per_metric);
    }

    let r = runs.len() as f64;
    let fully_covered_fraction = runs.iter().filter(|s| s.final_coverage >= 1.0).count() as f64 / r;
    let converged_fraction = spec
        .check_convergence
        .then(|| runs.iter().filter(|s| s.converged == Some(true)).count() as f64 / r);
    let summary = BatchSummary {
        config: spec.base.clone(),
        repeats: spec.repeats,
        percentiles: spec.percentiles.clone(),
        seed: spec.base.seed,
        run_streams: (0..spec.repeats as u64).collect(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        fully_covered_fraction,
        converged_fraction,
        runs,
    };
    Ok(BatchResult { curves, samples, summary })
}

/// Named experiment setups with their published parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Scenario {
    Tight { k: u32, m: u32 },
    SourceCoding { k: u32, m: u32 },
    Loose { k: u32, m: u32, alpha: f64 },
    ServerClient { k: u32, m: u32, r: u32, alpha: f64 },
    Polarized { k: u32, m: u32, r: u32, alpha: f64 },
}

pub const SCENARIO_NAMES: [&str; 5] = ["tight", "source_coding", "loose", "server_client", "polarized"];

impl Scenario {
    /// Builds a scenario by name. Parameters a scenario does not use are ignored.
    pub fn from_name(name: &str, k: u32, m: u32, alpha: f64, r: u32) -> Result<Self, ExperimentError> {
        Ok(match name {
            "tight" => Scenario::Tight { k, m },
            "source_coding" => Scenario::SourceCoding { k, m },
            "loose" => Scenario::Loose { k, m, alpha },
            "server_client" => Scenario::ServerClient { k, m, r, alpha },
            "polarized" => Scenario::Polarized { k, m, r, alpha },
            other => return Err(ExperimentError::UnknownScenario(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Tight { .. } => "tight",
            Scenario::SourceCoding { .. } => "source_coding",
            Scenario::Loose { .. } => "loose",
            Scenario::ServerClient { .. } => "server_client",
            Scenario::Polarized { .. } => "polarized",
        }
    }

    pub fn profile(&self) -> DegreeProfile {
        match *self {
            Scenario::Tight { .. } | Scenario::SourceCoding { .. } => DegreeProfile::TightHomogeneous,
            Scenario::Loose { alpha, .. } => DegreeProfile::Loose { alpha },
            Scenario::ServerClient { r, alpha, .. } => DegreeProfile::ServerClient { r, alpha },
            Scenario::Polarized { r, alpha, .. } => DegreeProfile::ServerClientPolarized { r, alpha },
        }
    }

    fn km(&self) -> (u32, u32) {
        match *self {
            Scenario::Tight { k, m }
            | Scenario::SourceCoding { k, m }
            | Scenario::Loose { k, m, .. }
            | Scenario::ServerClient { k, m, .. }
            | Scenario::Polarized { k, m, .. } => (k, m),
        }
    }

    /// N=1000, horizon 100, unit record interval, 500 repeats.
    pub fn batch_spec(&self, seed: u64) -> Result<BatchSpec, ExperimentError> {
        let (k, m) = self.km();
        if matches!(self, Scenario::SourceCoding { .. }) && !(k == 3 && [3, 4, 9].contains(&m)) {
            return Err(ExperimentError::SourceCoding { k, m });
        }
        let base = SimConfig {
            n: 1000,
            m,
            k,
            degree_profile: self.profile(),
            depth_mode: DepthMode::Distributed,
            horizon: 100.0,
            record_interval: 1.0,
            seed,
            clock_rate: 1.0,
        };
        base.validate()?;
        Ok(BatchSpec::new(base, 500))
    }
}

/// Convergence times of the single-tree dynamics at one `N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundTrialResult {
    pub n: u32,
    pub trials: u32,
    /// `f64::INFINITY` marks a trial that hit the time cap.
    pub t_samples: Vec<f64>,
    pub epsilon_grid: Vec<f64>,
    /// `(epsilon, fraction of trials with T above the threshold)`.
    pub empirical_tail: Vec<(f64, f64)>,
}

impl BoundTrialResult {
    /// `21 log2(N+1) + 16 epsilon`.
    pub fn threshold(n: u32, epsilon: f64) -> f64 {
        21.0 * ((n + 1) as f64).log2() + 16.0 * epsilon
    }

    pub fn median(&self) -> f64 {
        let mut t = self.t_samples.clone();
        t.sort_by(|a, b| a.total_cmp(b));
        let mid = t.len() / 2;
        if t.len() % 2 == 1 {
            t[mid]
        } else {
            (t[mid - 1] + t[mid]) / 2.0
        }
    }

    pub fn tail(&self, epsilon: f64) -> Option<f64> {
        self.empirical_tail.iter().find(|(e, _)| (e - epsilon).abs() < 1e-12).map(|&(_, f)| f)
    }
}

/// Single tree with every cap 2 and only re-parenting moves.
///
/// Depths are maintained incrementally together with a histogram, so the
/// stopping test costs `O(1)` per event.
pub struct BoundTrial {
    n: u32,
    parent: Vec<Option<u32>>,
    children: Vec<Vec<u32>>,
    depth: Vec<Option<u32>>,
    histogram: Vec<u32>,
    uncovered: u32,
    target: u32,
}

impl BoundTrial {
    pub const CAP: usize = 2;

    /// Root 0 with one child drawn uniformly from the other nodes.
    pub fn new<R: Rng + ?Sized>(n: u32, rng: &mut R) -> Self {
        assert!(n >= 2);
        let nu = n as usize;
        let mut trial = BoundTrial {
            n,
            parent: vec![None; nu],
            children: vec![Vec::with_capacity(Self::CAP); nu],
            depth: vec![None; nu],
            histogram: vec![0; nu + 1],
            uncovered: n,
            target: ((n + 1) as f64).log2().ceil() as u32,
        };
        trial.set_depth(0, Some(0));
        let child = rng.random_range(1..n);
        trial.attach(child, 0);
        trial
    }

    fn set_depth(&mut self, u: u32, d: Option<u32>) {
        match self.depth[u as usize] {
            Some(old) => self.histogram[old as usize] -= 1,
            None => self.uncovered -= 1,
        }
        match d {
            Some(new) => self.histogram[new as usize] += 1,
            None => self.uncovered += 1,
        }
        self.depth[u as usize] = d;
    }

    fn attach(&mut self, u: u32, v: u32) {
        if let Some(old) = self.parent[u as usize].take() {
            self.children[old as usize].retain(|&c| c != u);
        }
        self.parent[u as usize] = Some(v);
        self.children[v as usize].push(u);
        let base = self.depth[v as usize].expect("target is covered") + 1;
        let mut stack = vec![(u, base)];
        while let Some((x, d)) = stack.pop() {
            self.set_depth(x, Some(d));
            for &c in &self.children[x as usize] {
                stack.push((c, d + 1));
            }
        }
    }

    pub fn depth(&self, u: u32) -> Depth {
        self.depth[u as usize].map_or(Depth::Infinite, Depth::Finite)
    }

    /// Covered and under the cap.
    pub fn is_available(&self, u: u32) -> bool {
        self.depth[u as usize].is_some() && self.children[u as usize].len() < Self::CAP
    }

    pub fn max_depth(&self) -> Depth {
        if self.uncovered > 0 {
            return Depth::Infinite;
        }
        let d = self.histogram.iter().rposition(|&c| c > 0).expect("root is covered");
        Depth::Finite(d as u32)
    }

    pub fn done(&self) -> bool {
        self.uncovered == 0 && self.max_depth() <= Depth::Finite(self.target)
    }

    /// `u` samples `v`; returns whether `u` moved.
    pub fn sample(&mut self, u: u32, v: u32) -> bool {
        if u == v || !self.is_available(v) || !self.depth(u).exceeds_by_two(self.depth(v)) {
            return false;
        }
        self.attach(u, v);
        true
    }

    pub fn n(&self) -> u32 {
        self.n
    }
}

/// Time cap after which a trial reports `T = inf`.
pub fn bound_time_cap(n: u32) -> f64 {
    20.0 * BoundTrialResult::threshold(n, 4.0)
}

/// First event time at which every node has depth at most `ceil(log2(N+1))`.
pub fn bound_trial_time(n: u32, seed: u64, trial: u64) -> f64 {
    let mut rng = run_rng(seed, ((n as u64) << 32) | trial);
    let mut state = BoundTrial::new(n, &mut rng);
    if state.done() {
        return 0.0;
    }
    let clock = Exp::new(n as f64).expect("positive rate");
    let cap = bound_time_cap(n);
    let mut t = 0.0;
    loop {
        t += clock.sample(&mut rng);
        if t > cap {
            return f64::INFINITY;
        }
        let u = rng.random_range(0..n);
        let mut v = rng.random_range(0..n - 1);
        if v >= u {
            v += 1;
        }
        if state.sample(u, v) && state.done() {
            return t;
        }
    }
}

pub fn bound_experiment(n: u32, trials: u32, seed: u64, epsilons: &[f64]) -> Result<BoundTrialResult, ExperimentError> {
    if n < 2 || trials == 0 {
        return Err(ExperimentError::BoundShape);
    }
    let t_samples: Vec<f64> = (0..trials as u64).into_par_iter().map(|i| bound_trial_time(n, seed, i)).collect();
    let empirical_tail = epsilons
        .iter()
        .map(|&e| {
            let limit = BoundTrialResult::threshold(n, e);
            let above = t_samples.iter().filter(|&&t| t > limit).count();
            (e, above as f64 / trials as f64)
        })
        .collect();
    Ok(BoundTrialResult { n, trials, t_samples, epsilon_grid: epsilons.to_vec(), empirical_tail })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_rules() {
        assert_eq!(percentile_rank(0.2, 500), 1);
        assert_eq!(percentile_rank(1.0, 500), 5);
        assert_eq!(percentile_rank(50.0, 500), 250);
        assert_eq!(percentile_rank(100.0, 500), 500);
        assert_eq!(percentile_rank(0.2, 50), 1);
        assert_eq!(percentile_rank(2.0, 50), 1);
        assert_eq!(percentile_rank(5.0, 50), 3);
    }

    #[test]
    fn worst_percentile_direction() {
        let mut v = vec![0.5, 0.9, 0.1, 0.7];
        assert_eq!(worst_percentile(Metric::Coverage, &mut v, 25.0), 0.1);
        assert_eq!(worst_percentile(Metric::Coverage, &mut v, 100.0), 0.9);
        assert_eq!(worst_percentile(Metric::MaxDepth, &mut v, 25.0), 0.9);
        assert_eq!(worst_percentile(Metric::MaxDepth, &mut v, 100.0), 0.1);
    }

    #[test]
    fn spec_validation() {
        let base = SimConfig { n: 20, horizon: 2.0, ..SimConfig::default() };
        let mut spec = BatchSpec::new(base, 0);
        assert_eq!(spec.validate(), Err(ExperimentError::NoRepeats));
        spec.repeats = 3;
        spec.percentiles = vec![0.0];
        assert_eq!(spec.validate(), Err(ExperimentError::Percentile(0.0)));
        spec.percentiles = vec![100.5];
        assert_eq!(spec.validate(), Err(ExperimentError::Percentile(100.5)));
        spec.percentiles = vec![1.0];
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn scenario_specs() {
        let spec = Scenario::Tight { k: 2, m: 2 }.batch_spec(1).unwrap();
        assert_eq!((spec.base.n, spec.repeats, spec.base.horizon, spec.base.record_interval), (1000, 500, 100.0, 1.0));
        assert_eq!(spec.base.degree_profile, DegreeProfile::TightHomogeneous);
        assert!(Scenario::SourceCoding { k: 3, m: 4 }.batch_spec(1).is_ok());
        assert!(matches!(
            Scenario::SourceCoding { k: 3, m: 5 }.batch_spec(1),
            Err(ExperimentError::SourceCoding { .. })
        ));
        assert!(matches!(
            Scenario::from_name("bogus", 2, 2, 0.0, 2),
            Err(ExperimentError::UnknownScenario(_))
        ));
    }

    #[test]
    fn trial_moves_follow_depth_gap() {
        let mut rng = run_rng(4, 0);
        let mut t = BoundTrial::new(3, &mut rng);
        let child = (1..3).find(|&u| t.depth(u) == Depth::Finite(1)).unwrap();
        let loose = 3 - child;
        assert_eq!(t.max_depth(), Depth::Infinite);
        // an uncovered node cannot host
        assert!(!t.sample(child, loose));
        assert!(t.sample(loose, child));
        assert_eq!(t.depth(loose), Depth::Finite(2));
        assert!(t.done());
    }

    #[test]
    fn trial_reparent_moves_subtree() {
        let mut rng = run_rng(0, 0);
        let mut t = BoundTrial::new(6, &mut rng);
        let first = (1..6).find(|&u| t.depth(u).is_finite() && u != 0).unwrap();
        let mut chain = vec![first];
        for u in (1..6).filter(|&u| u != first) {
            let tail = *chain.last().unwrap();
            assert!(t.sample(u, tail));
            chain.push(u);
        }
        assert_eq!(t.depth(chain[4]), Depth::Finite(5));
        // chain[2] at depth 3 jumps under the root, taking its two descendants along
        assert!(t.sample(chain[2], 0));
        assert_eq!(t.depth(chain[2]), Depth::Finite(1));
        assert_eq!(t.depth(chain[4]), Depth::Finite(3));
        assert_eq!(t.max_depth(), Depth::Finite(3));
        assert!(t.done());
    }
}
