//! Poisson-clock sampling process.
//!
//! Every node owns a rate-`mu` clock. The superposition of `N` such clocks
//! is a single rate-`N*mu` clock whose ticks are assigned to a uniformly
//! chosen node, which is what [`Simulation::step`] draws.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Color, Depth, GraphState, NodeId};
use crate::metrics::{
    all_true_depths, buffered_error_from, fraction_from, potential_from, tree_depths_from, PotentialTriple,
};
use crate::protocol::{on_sample, DepthMode, RuleOutcome};

/// Random stream for one run. ChaCha8 with the run index as stream id, so
/// `(seed, run_index)` pairs give independent, reproducible streams.
pub type SimRng = ChaCha8Rng;

pub fn run_rng(seed: u64, run_index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    rng
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("need K={k} must satisfy 1 <= K <= M={m}")]
    Need { k: u32, m: u32 },
    #[error("color count M={m} must satisfy 1 <= M < N={n}")]
    Colors { m: u32, n: u32 },
    #[error("at least two nodes are required, got N={0}")]
    TooFewNodes(u32),
    #[error("horizon must be a finite non-negative time, got {0}")]
    Horizon(f64),
    #[error("record interval must be positive, got {0}")]
    RecordInterval(f64),
    #[error("clock rate must be positive, got {0}")]
    ClockRate(f64),
    #[error("alpha must be a finite non-negative number, got {0}")]
    Alpha(f64),
    #[error("r must be at least 1, got {0}")]
    Ratio(u32),
    #[error("profile yields {servers} server nodes, which must lie in M={m}..=N={n}")]
    ServerCount { servers: u64, m: u32, n: u32 },
    #[error("explicit profile lists {got} caps for N={n} nodes")]
    CapCount { got: usize, n: u32 },
    #[error("root {0} has degree cap 0 and cannot feed its substream")]
    RootWithoutCapacity(NodeId),
    #[error("{0}")]
    Invalid(String),
}

/// Rule that assigns outgoing degree caps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegreeProfile {
    /// Roots `K-1`, everyone else `K`; total exactly `KN - M`.
    TightHomogeneous,
    /// `K` everywhere plus `floor(alpha*N*K)` unit increments to random nodes.
    Loose { alpha: f64 },
    /// `N/r` servers (roots included) with cap `rK`, clients 0, plus
    /// `floor(alpha*N*K)` unit increments to random servers.
    ServerClient { r: u32, alpha: f64 },
    /// `(1+alpha)N/r` servers (roots included) with cap `rK`, clients 0.
    ServerClientPolarized { r: u32, alpha: f64 },
    Explicit { caps: Vec<u32> },
}

impl DegreeProfile {
    pub fn name(&self) -> &'static str {
        match self {
            DegreeProfile::TightHomogeneous => "tight",
            DegreeProfile::Loose { .. } => "loose",
            DegreeProfile::ServerClient { .. } => "server_client",
            DegreeProfile::ServerClientPolarized { .. } => "polarized",
            DegreeProfile::Explicit { .. } => "explicit",
        }
    }

    fn validate(&self, n: u32, m: u32) -> Result<(), ConfigError> {
        let check_alpha = |a: f64| {
            if a.is_finite() && a >= 0.0 {
                Ok(())
            } else {
                Err(ConfigError::Alpha(a))
            }
        };
        match self {
            DegreeProfile::TightHomogeneous => Ok(()),
            DegreeProfile::Loose { alpha } => check_alpha(*alpha),
            DegreeProfile::ServerClient { r, alpha } | DegreeProfile::ServerClientPolarized { r, alpha } => {
                check_alpha(*alpha)?;
                if *r == 0 {
                    return Err(ConfigError::Ratio(*r));
                }
                let servers = self.server_count(n);
                if servers < m as u64 || servers > n as u64 {
                    return Err(ConfigError::ServerCount { servers, m, n });
                }
                Ok(())
            }
            DegreeProfile::Explicit { caps } => {
                if caps.len() != n as usize {
                    Err(ConfigError::CapCount { got: caps.len(), n })
                } else {
                    Ok(())
                }
            }
        }
    }

    fn server_count(&self, n: u32) -> u64 {
        match self {
            DegreeProfile::ServerClient { r, .. } => (n / r) as u64,
            DegreeProfile::ServerClientPolarized { r, alpha } => {
                ((1.0 + alpha) * n as f64 / *r as f64 + 1e-9).floor() as u64
            }
            _ => n as u64,
        }
    }

    /// Degree caps for nodes `1..=N`. Random choices consume `rng`.
    pub fn caps<R: Rng + ?Sized>(&self, n: u32, m: u32, k: u32, rng: &mut R) -> Result<Vec<u32>, ConfigError> {
        self.validate(n, m)?;
        let increments = |alpha: f64| (alpha * n as f64 * k as f64 + 1e-9).floor() as u64;
        let caps = match self {
            DegreeProfile::TightHomogeneous => {
                (1..=n).map(|id| if id <= m { k - 1 } else { k }).collect()
            }
            DegreeProfile::Loose { alpha } => {
                let mut caps = vec![k; n as usize];
                for _ in 0..increments(*alpha) {
                    caps[rng.random_range(0..n as usize)] += 1;
                }
                caps
            }
            DegreeProfile::ServerClient { r, alpha } | DegreeProfile::ServerClientPolarized { r, alpha } => {
                let servers = self.server_count(n) as usize;
                let mut server_ids: Vec<usize> = (0..m as usize).collect();
                let others = index::sample(rng, (n - m) as usize, servers - m as usize);
                server_ids.extend(others.iter().map(|i| i + m as usize));
                let mut caps = vec![0; n as usize];
                for &s in &server_ids {
                    caps[s] = r * k;
                }
                if matches!(self, DegreeProfile::ServerClient { .. }) {
                    for _ in 0..increments(*alpha) {
                        caps[server_ids[rng.random_range(0..server_ids.len())]] += 1;
                    }
                }
                caps
            }
            DegreeProfile::Explicit { caps } => caps.clone(),
        };
        Ok(caps)
    }
}

impl fmt::Display for DegreeProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegreeProfile::TightHomogeneous => f.write_str("tight"),
            DegreeProfile::Loose { alpha } => write!(f, "loose(alpha={alpha})"),
            DegreeProfile::ServerClient { r, alpha } => write!(f, "server_client(r={r}, alpha={alpha})"),
            DegreeProfile::ServerClientPolarized { r, alpha } => write!(f, "polarized(r={r}, alpha={alpha})"),
            DegreeProfile::Explicit { caps } => write!(f, "explicit({} caps)", caps.len()),
        }
    }
}

/// Profile kinds selectable by name; parameters are supplied separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileKind {
    Tight,
    Loose,
    ServerClient,
    Polarized,
}

impl FromStr for ProfileKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tight" => Ok(ProfileKind::Tight),
            "loose" => Ok(ProfileKind::Loose),
            "server_client" | "server-client" => Ok(ProfileKind::ServerClient),
            "polarized" => Ok(ProfileKind::Polarized),
            other => Err(format!("unknown profile `{other}` (expected tight|loose|server_client|polarized)")),
        }
    }
}

impl ProfileKind {
    pub fn with_params(self, alpha: f64, r: u32) -> DegreeProfile {
        match self {
            ProfileKind::Tight => DegreeProfile::TightHomogeneous,
            ProfileKind::Loose => DegreeProfile::Loose { alpha },
            ProfileKind::ServerClient => DegreeProfile::ServerClient { r, alpha },
            ProfileKind::Polarized => DegreeProfile::ServerClientPolarized { r, alpha },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: u32,
    pub m: u32,
    pub k: u32,
    pub degree_profile: DegreeProfile,
    pub depth_mode: DepthMode,
    pub horizon: f64,
    pub record_interval: f64,
    pub seed: u64,
    /// Sampling rate of each node's clock.
    pub clock_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 1000,
            m: 2,
            k: 2,
            degree_profile: DegreeProfile::TightHomogeneous,
            depth_mode: DepthMode::Distributed,
            horizon: 100.0,
            record_interval: 1.0,
            seed: 0,
            clock_rate: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 2 {
            return Err(ConfigError::TooFewNodes(self.n));
        }
        if self.m == 0 || self.m >= self.n {
            return Err(ConfigError::Colors { m: self.m, n: self.n });
        }
        if self.k == 0 || self.k > self.m {
            return Err(ConfigError::Need { k: self.k, m: self.m });
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(ConfigError::Horizon(self.horizon));
        }
        if !(self.record_interval.is_finite() && self.record_interval > 0.0) {
            return Err(ConfigError::RecordInterval(self.record_interval));
        }
        if !(self.clock_rate.is_finite() && self.clock_rate > 0.0) {
            return Err(ConfigError::ClockRate(self.clock_rate));
        }
        self.degree_profile.validate(self.n, self.m)
    }

    /// `0, interval, 2*interval, ...` up to and including the horizon.
    pub fn record_times(&self) -> Vec<f64> {
        let steps = (self.horizon / self.record_interval + 1e-9).floor() as u64;
        (0..=steps).map(|s| s as f64 * self.record_interval).collect()
    }
}

/// Empty overlay plus one link from each root to a random non-root.
///
/// Two roots may pick the same child; a pick that would give the child more
/// than `K` incoming links is redrawn.
pub fn init_state<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<GraphState, ConfigError> {
    config.validate()?;
    let (n, m, k) = (config.n, config.m, config.k);
    if ((n - m) as u64) * (k as u64) < m as u64 {
        return Err(ConfigError::Invalid(format!(
            "{} non-roots with need {k} cannot host {m} initial root children",
            n - m
        )));
    }
    let caps = config.degree_profile.caps(n, m, k, rng)?;
    let mut state = GraphState::new(m, k, caps).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    for root in 1..=m {
        let root = NodeId::new(root);
        if state.node(root).degree_cap() == 0 {
            return Err(ConfigError::RootWithoutCapacity(root));
        }
        let child = loop {
            let pick = NodeId::new(rng.random_range(m + 1..=n));
            if state.node(pick).in_degree() < k {
                break pick;
            }
        };
        state
            .build_link(root, child, Color::new(root.get()))
            .expect("fresh child has no incoming link of this color");
    }
    state.sync_buffered_depths();
    Ok(state)
}

/// One sampling event.
#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub sampler: NodeId,
    pub target: NodeId,
    pub outcome: RuleOutcome,
}

/// System state measured at one record time.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSample {
    pub time: f64,
    pub fraction_fully_covered: f64,
    /// Deepest covered node over all trees.
    pub max_tree_depth: Depth,
    pub potential: PotentialTriple,
    pub cycle_count: usize,
    pub buffered_depth_error: u32,
}

impl MetricSample {
    pub const CSV_HEADER: &'static str = "t,fraction_covered,max_depth,edges,Y,S,cycles,buffered_depth_error";

    pub fn measure(state: &GraphState, time: f64) -> Self {
        let depths = all_true_depths(state);
        let tree = tree_depths_from(&depths);
        MetricSample {
            time,
            fraction_fully_covered: fraction_from(state, &depths),
            max_tree_depth: Depth::Finite(tree.overall),
            potential: potential_from(state, &depths),
            cycle_count: state.colors().map(|c| state.detect_cycles(c).count()).sum(),
            buffered_depth_error: buffered_error_from(state, &depths),
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.time,
            self.fraction_fully_covered,
            self.max_tree_depth,
            self.potential.edges,
            self.potential.y,
            self.potential.s,
            self.cycle_count,
            self.buffered_depth_error
        )
    }
}

pub fn samples_to_csv(samples: &[MetricSample]) -> String {
    let mut out = String::with_capacity(64 * (samples.len() + 1));
    out.push_str(MetricSample::CSV_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&s.csv_row());
        out.push('\n');
    }
    out
}

/// A running sampling process over one overlay.
#[derive(Clone, Debug)]
pub struct Simulation {
    state: GraphState,
    rng: SimRng,
    clock: Exp<f64>,
    mode: DepthMode,
    time: f64,
    next_event: f64,
    events: u64,
}

impl Simulation {
    /// Initializes run `run_index` of `config`.
    pub fn new(config: &SimConfig, run_index: u64) -> Result<Self, ConfigError> {
        let mut rng = run_rng(config.seed, run_index);
        let state = init_state(config, &mut rng)?;
        Ok(Self::from_state(state, config.depth_mode, config.clock_rate, rng))
    }

    /// Continues the process from an arbitrary state at time 0.
    pub fn from_state(state: GraphState, mode: DepthMode, clock_rate: f64, mut rng: SimRng) -> Self {
        assert!(state.n() >= 2, "sampling needs at least two nodes");
        let clock = Exp::new(state.n() as f64 * clock_rate).expect("positive rate");
        let next_event = clock.sample(&mut rng);
        Simulation { state, rng, clock, mode, time: 0.0, next_event, events: 0 }
    }

    pub fn state(&self) -> &GraphState {
        &self.state
    }

    pub fn into_state(self) -> GraphState {
        self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn next_event_time(&self) -> f64 {
        self.next_event
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn mode(&self) -> DepthMode {
        self.mode
    }

    /// Fires the next clock tick: a uniform sampler picks a uniform target
    /// among the other nodes and the combined rule runs.
    pub fn step(&mut self) -> EventRecord {
        self.time = self.next_event;
        let n = self.state.n();
        let sampler = self.rng.random_range(1..=n);
        let mut target = self.rng.random_range(1..n);
        if target >= sampler {
            target += 1;
        }
        let (sampler, target) = (NodeId::new(sampler), NodeId::new(target));
        let outcome = on_sample(&mut self.state, sampler, target, self.mode);
        self.events += 1;
        self.next_event = self.time + self.clock.sample(&mut self.rng);
        EventRecord { time: self.time, sampler, target, outcome }
    }

    /// Executes every event with time `<= until`, handing each to `observe`.
    pub fn advance_to<F>(&mut self, until: f64, mut observe: F)
    where
        F: FnMut(&EventRecord, &GraphState),
    {
        while self.next_event <= until {
            let event = self.step();
            observe(&event, &self.state);
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub samples: Vec<MetricSample>,
    pub final_state: GraphState,
    pub events: u64,
}

pub fn run(config: &SimConfig) -> Result<RunResult, ConfigError> {
    run_indexed(config, 0)
}

/// Runs to the horizon, measuring at every record time.
pub fn run_indexed(config: &SimConfig, run_index: u64) -> Result<RunResult, ConfigError> {
    let mut sim = Simulation::new(config, run_index)?;
    let mut samples = Vec::new();
    for t in config.record_times() {
        sim.advance_to(t, |_, _| {});
        samples.push(MetricSample::measure(sim.state(), t));
    }
    sim.advance_to(config.horizon, |_, _| {});
    let events = sim.events();
    Ok(RunResult { samples, final_state: sim.into_state(), events })
}
