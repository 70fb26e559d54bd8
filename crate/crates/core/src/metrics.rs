//! Reported metrics, the lexicographic potential and the convergence detector.
//!
//! All coverage and depth figures come from breadth-first depths, whatever
//! the depth mode of the run; buffered estimates are only compared against
//! them in [`buffered_depth_error`].

use std::cmp::Reverse;
use std::fmt;

use crate::graph::{Color, Depth, DepthMap, GraphState, NodeId};
use crate::protocol::{plan_update, DepthMode, Update};

/// `(|E|, Y, S)`. Progress means `(-edges, y, -s)` decreases lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PotentialTriple {
    pub edges: u64,
    /// Sum over nodes and colors of depth clamped at `N`.
    pub y: u64,
    /// `sum_u u * sum_i i * d_i(u)`.
    pub s: u64,
}

impl PotentialTriple {
    fn key(&self) -> (Reverse<u64>, u64, Reverse<u64>) {
        (Reverse(self.edges), self.y, Reverse(self.s))
    }

    /// True when `after` is lexicographically smaller in `(-edges, y, -s)`.
    pub fn decreases_to(&self, after: &PotentialTriple) -> bool {
        after.key() < self.key()
    }
}

impl fmt::Display for PotentialTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(|E|={}, Y={}, S={})", self.edges, self.y, self.s)
    }
}

/// Maximum depth over each tree's covered nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeDepths {
    pub per_color: Vec<u32>,
    pub overall: u32,
    /// Nodes not reached by each color.
    pub uncovered: Vec<u32>,
}

pub(crate) fn all_true_depths(state: &GraphState) -> Vec<DepthMap> {
    state.colors().map(|c| state.true_depths(c)).collect()
}

fn covered_count(depths: &[DepthMap], node: NodeId) -> u32 {
    depths.iter().filter(|d| d.get(node).is_finite()).count() as u32
}

pub(crate) fn fraction_from(state: &GraphState, depths: &[DepthMap]) -> f64 {
    let full = state.node_ids().filter(|&u| covered_count(depths, u) >= state.k()).count();
    full as f64 / state.n() as f64
}

pub(crate) fn tree_depths_from(depths: &[DepthMap]) -> TreeDepths {
    let mut per_color = Vec::with_capacity(depths.len());
    let mut uncovered = Vec::with_capacity(depths.len());
    for map in depths {
        let mut max = 0;
        let mut missing = 0;
        for &d in map.as_slice() {
            match d {
                Depth::Finite(x) => max = max.max(x),
                Depth::Infinite => missing += 1,
            }
        }
        per_color.push(max);
        uncovered.push(missing);
    }
    let overall = per_color.iter().copied().max().unwrap_or(0);
    TreeDepths { per_color, overall, uncovered }
}

pub(crate) fn potential_from(state: &GraphState, depths: &[DepthMap]) -> PotentialTriple {
    let n = state.n();
    let y = depths
        .iter()
        .flat_map(|m| m.as_slice().iter())
        .map(|d| d.clamped(n) as u64)
        .sum();
    let s = state
        .nodes()
        .iter()
        .map(|node| {
            let weighted: u64 = state
                .colors()
                .map(|c| c.get() as u64 * node.out_degree_in(c) as u64)
                .sum();
            node.id().get() as u64 * weighted
        })
        .sum();
    PotentialTriple { edges: state.edge_count(), y, s }
}

pub(crate) fn buffered_error_from(state: &GraphState, depths: &[DepthMap]) -> u32 {
    let mut worst = 0;
    for (ci, map) in depths.iter().enumerate() {
        let color = Color::new(ci as u32 + 1);
        for (node, truth) in map.iter() {
            if let (Some(t), Some(b)) = (truth.finite(), state.buffered_depth(node, color).finite()) {
                worst = worst.max(t.abs_diff(b));
            }
        }
    }
    worst
}

/// Share of nodes covered by at least `K` trees.
pub fn fraction_fully_covered(state: &GraphState) -> f64 {
    fraction_from(state, &all_true_depths(state))
}

pub fn max_tree_depth(state: &GraphState) -> TreeDepths {
    tree_depths_from(&all_true_depths(state))
}

pub fn potential(state: &GraphState) -> PotentialTriple {
    potential_from(state, &all_true_depths(state))
}

/// Largest `|l - L|` over node/color pairs where both are finite.
pub fn buffered_depth_error(state: &GraphState) -> u32 {
    buffered_error_from(state, &all_true_depths(state))
}

pub fn cycle_count(state: &GraphState) -> usize {
    state.colors().map(|c| state.detect_cycles(c).count()).sum()
}

/// First ordered pair `(sampler, target)` for which a rule would fire, after
/// all buffered depths are refreshed to their fixed point.
///
/// The refresh makes buffered and true depths coincide, so both modes probe
/// the same predicates.
pub fn find_firing_pair(state: &GraphState, _mode: DepthMode) -> Option<(NodeId, NodeId, Update)> {
    let mut probe = state.clone();
    probe.sync_buffered_depths();
    for u in probe.node_ids() {
        for v in probe.node_ids() {
            if u == v {
                continue;
            }
            if let Some(update) = plan_update(&probe, u, v, DepthMode::Distributed) {
                return Some((u, v, update));
            }
        }
    }
    None
}

/// True iff no ordered pair of nodes would trigger any rule.
pub fn is_converged(state: &GraphState, mode: DepthMode) -> bool {
    find_firing_pair(state, mode).is_none()
}

/// Smallest `c >= 1` such that, for every color, the tree cut at depth `c`
/// has at least `M` leaves. `None` when some tree has fewer than `M` leaves.
pub fn shower_head_constant(state: &GraphState) -> Option<u32> {
    let depths = all_true_depths(state);
    shower_head_from(state, &depths)
}

fn shower_head_from(state: &GraphState, depths: &[DepthMap]) -> Option<u32> {
    let m = state.m() as u64;
    let mut worst = 1;
    for (ci, map) in depths.iter().enumerate() {
        let color = Color::new(ci as u32 + 1);
        let max = map.as_slice().iter().filter_map(|d| d.finite()).max().unwrap_or(0) as usize;
        let mut level = vec![0u64; max + 1];
        let mut leaves = vec![0u64; max + 1];
        for (node, d) in map.iter() {
            if let Some(d) = d.finite() {
                level[d as usize] += 1;
                if state.children(node, color).is_empty() {
                    leaves[d as usize] += 1;
                }
            }
        }
        let mut leaves_above = leaves[0];
        let mut found = None;
        for c in 1..=max.max(1) {
            let at_cut = level.get(c).copied().unwrap_or(0);
            if at_cut + leaves_above >= m {
                found = Some(c as u32);
                break;
            }
            leaves_above += leaves.get(c).copied().unwrap_or(0);
        }
        worst = worst.max(found?);
    }
    Some(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvergedCheck {
    /// (a) every node is covered by K trees.
    Coverage,
    /// (b) leaf depths within a tree differ by at most one.
    LeafBalance,
    /// (c) internal nodes are saturated and have a child in that tree.
    InternalSaturated,
    /// (d) depth pairs of (i,j)-mixed nodes are strictly ordered.
    MixedChain,
    /// (e) each tree's depth is at most log2(N+1) + c.
    DepthBound,
}

impl ConvergedCheck {
    pub fn label(self) -> &'static str {
        match self {
            ConvergedCheck::Coverage => "(a) K-coverage",
            ConvergedCheck::LeafBalance => "(b) leaf balance",
            ConvergedCheck::InternalSaturated => "(c) internal nodes saturated",
            ConvergedCheck::MixedChain => "(d) mixed-node chain",
            ConvergedCheck::DepthBound => "(e) depth bound",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub check: ConvergedCheck,
    pub passed: bool,
    pub witnesses: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    /// Whether the state was converged when inspected. The checks are only
    /// guaranteed for converged states.
    pub converged: bool,
    pub shower_head: Option<u32>,
    pub depth_bound: Option<f64>,
    pub checks: Vec<CheckResult>,
}

impl ConvergenceReport {
    pub fn check(&self, which: ConvergedCheck) -> &CheckResult {
        self.checks.iter().find(|c| c.check == which).expect("every check is reported")
    }

    pub fn all_passed(&self) -> bool {
        self.converged && self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for ConvergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.converged {
            writeln!(f, "contract violation: state is not converged; checks are informational")?;
        }
        for check in &self.checks {
            let verdict = if check.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{verdict} {}", check.check.label())?;
            for w in &check.witnesses {
                writeln!(f, "    {w}")?;
            }
        }
        match (self.shower_head, self.depth_bound) {
            (Some(c), Some(b)) => write!(f, "shower-head c = {c}, depth bound = {b:.3}"),
            _ => write!(f, "shower-head condition not met"),
        }
    }
}

const MAX_WITNESSES: usize = 8;

fn push_witness(list: &mut Vec<String>, w: impl FnOnce() -> String) {
    if list.len() < MAX_WITNESSES {
        list.push(w());
    }
}

fn result(check: ConvergedCheck, failures: usize, witnesses: Vec<String>) -> CheckResult {
    CheckResult { check, passed: failures == 0, witnesses }
}

/// Structural properties every converged state must have, with witnesses
/// for each failure.
pub fn converged_state_report(state: &GraphState) -> ConvergenceReport {
    let converged = is_converged(state, DepthMode::Instantaneous);
    let depths = all_true_depths(state);
    let n = state.n();
    let mut checks = Vec::with_capacity(5);

    let mut w = Vec::new();
    let mut fails = 0;
    for u in state.node_ids() {
        let covered = covered_count(&depths, u);
        if covered != state.k() {
            fails += 1;
            push_witness(&mut w, || format!("node {u} covered by {covered} trees"));
        }
    }
    checks.push(result(ConvergedCheck::Coverage, fails, w));

    let tree = tree_depths_from(&depths);

    let (mut w, mut fails) = (Vec::new(), 0);
    for (ci, map) in depths.iter().enumerate() {
        let color = Color::new(ci as u32 + 1);
        let leaf_depths = map
            .iter()
            .filter(|&(u, d)| d.is_finite() && state.children(u, color).is_empty())
            .map(|(u, d)| (d.finite().unwrap(), u));
        let (lo, hi) = leaf_depths.fold((None, None), |(lo, hi), x| {
            (Some(lo.map_or(x, |l: (u32, NodeId)| l.min(x))), Some(hi.map_or(x, |h: (u32, NodeId)| h.max(x))))
        });
        if let (Some(lo), Some(hi)) = (lo, hi) {
            if hi.0 > lo.0 + 1 {
                fails += 1;
                push_witness(&mut w, || {
                    format!("color {color}: leaf {} at depth {} vs leaf {} at depth {}", lo.1, lo.0, hi.1, hi.0)
                });
            }
        }
    }
    checks.push(result(ConvergedCheck::LeafBalance, fails, w));

    let (mut w, mut fails) = (Vec::new(), 0);
    for (ci, map) in depths.iter().enumerate() {
        let color = Color::new(ci as u32 + 1);
        let max = tree.per_color[ci];
        for (u, d) in map.iter() {
            let Some(d) = d.finite() else { continue };
            if d + 2 > max {
                continue;
            }
            let node = state.node(u);
            if node.is_available() || node.out_degree_in(color) == 0 {
                fails += 1;
                push_witness(&mut w, || {
                    format!(
                        "color {color}: internal node {u} at depth {d} has {} of {} slots used, {} children in this color",
                        node.out_degree(),
                        node.degree_cap(),
                        node.out_degree_in(color)
                    )
                });
            }
        }
    }
    checks.push(result(ConvergedCheck::InternalSaturated, fails, w));

    let (mut w, mut fails) = (Vec::new(), 0);
    for i in state.colors() {
        for j in state.colors().filter(|&j| j > i) {
            let mixed: Vec<(NodeId, Depth, Depth)> = state
                .nodes()
                .iter()
                .filter(|node| node.out_degree_in(i) > 0 && node.out_degree_in(j) > 0)
                .map(|node| (node.id(), depths[i.index()].get(node.id()), depths[j.index()].get(node.id())))
                .collect();
            for (a, x) in mixed.iter().enumerate() {
                for y in &mixed[a + 1..] {
                    let ordered = (x.1 < y.1 && x.2 < y.2) || (y.1 < x.1 && y.2 < x.2);
                    if !ordered {
                        fails += 1;
                        push_witness(&mut w, || {
                            format!(
                                "({i},{j})-mixed nodes {} ({}, {}) and {} ({}, {}) are not strictly ordered",
                                x.0, x.1, x.2, y.0, y.1, y.2
                            )
                        });
                    }
                }
            }
        }
    }
    checks.push(result(ConvergedCheck::MixedChain, fails, w));

    let shower_head = shower_head_from(state, &depths);
    let depth_bound = shower_head.map(|c| ((n + 1) as f64).log2() + c as f64);
    let (mut w, mut fails) = (Vec::new(), 0);
    match depth_bound {
        Some(bound) => {
            for (ci, &max) in tree.per_color.iter().enumerate() {
                if max as f64 > bound {
                    fails += 1;
                    push_witness(&mut w, || format!("color {}: depth {max} exceeds {bound:.3}", ci + 1));
                }
            }
        }
        None => {
            fails += 1;
            w.push("shower-head condition not met; no bound applies".to_string());
        }
    }
    checks.push(result(ConvergedCheck::DepthBound, fails, w));

    ConvergenceReport { converged, shower_head, depth_bound, checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Depth::Finite;

    fn id(n: u32) -> NodeId {
        NodeId::new(n)
    }

    fn c(n: u32) -> Color {
        Color::new(n)
    }

    /// Single color, caps 2 everywhere, heap-shaped: node k feeds 2k and 2k+1.
    pub(crate) fn perfect_binary(levels: u32) -> GraphState {
        let n = (1u32 << levels) - 1;
        let mut g = GraphState::new(1, 1, vec![2; n as usize]).unwrap();
        for k in 1..=n {
            for child in [2 * k, 2 * k + 1] {
                if child <= n {
                    g.build_link(id(k), id(child), c(1)).unwrap();
                }
            }
        }
        g.sync_buffered_depths();
        g
    }

    #[test]
    fn potential_of_bare_graph() {
        let g = GraphState::new(1, 1, vec![1; 4]).unwrap();
        assert_eq!(potential(&g), PotentialTriple { edges: 0, y: 12, s: 0 });
    }

    #[test]
    fn lexicographic_order() {
        let base = PotentialTriple { edges: 3, y: 10, s: 5 };
        assert!(base.decreases_to(&PotentialTriple { edges: 4, y: 99, s: 0 }));
        assert!(base.decreases_to(&PotentialTriple { edges: 3, y: 9, s: 0 }));
        assert!(base.decreases_to(&PotentialTriple { edges: 3, y: 10, s: 6 }));
        assert!(!base.decreases_to(&base));
        assert!(!base.decreases_to(&PotentialTriple { edges: 3, y: 11, s: 99 }));
    }

    #[test]
    fn coverage_of_server_links_only() {
        let g = GraphState::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        assert_eq!(fraction_fully_covered(&g), 0.0);
        let g = GraphState::new(1, 1, vec![1, 2, 2, 2]).unwrap();
        assert_eq!(fraction_fully_covered(&g), 0.25);
    }

    /// Seven nodes, two trees, everyone holding both colors.
    fn double_tree() -> GraphState {
        let caps = vec![1, 1, 2, 2, 2, 2, 2];
        let mut g = GraphState::new(2, 2, caps).unwrap();
        for (color, p, ch) in [
            (1, 1, 3), (1, 3, 4), (1, 3, 5), (1, 4, 6), (1, 4, 7), (1, 5, 2),
            (2, 2, 6), (2, 6, 5), (2, 6, 7), (2, 5, 1), (2, 7, 3), (2, 7, 4),
        ] {
            g.build_link(id(p), id(ch), c(color)).unwrap();
        }
        g.sync_buffered_depths();
        g
    }

    #[test]
    fn double_tree_fully_covered() {
        let g = double_tree();
        assert!(g.check_assumption1().is_ok());
        // independent check: every node reaches both roots by walking parents
        for u in g.node_ids() {
            for color in g.colors() {
                assert!(g.chain_depth(u, color).is_finite(), "node {u} color {color}");
            }
        }
        assert_eq!(fraction_fully_covered(&g), 1.0);
    }

    #[test]
    fn depth_of_perfect_binary_tree() {
        let g = perfect_binary(7);
        assert_eq!(g.n(), 127);
        let depths = max_tree_depth(&g);
        assert_eq!(depths.overall, 6);
        assert_eq!(depths.uncovered, vec![0]);
    }

    #[test]
    fn perfect_binary_is_converged() {
        let g = perfect_binary(4);
        assert!(is_converged(&g, DepthMode::Instantaneous));
        assert!(is_converged(&g, DepthMode::Distributed));
        let report = converged_state_report(&g);
        assert!(report.all_passed(), "{report}");
        assert!(report.check(ConvergedCheck::MixedChain).witnesses.is_empty());
    }

    #[test]
    fn leaf_imbalance_is_not_converged() {
        // 1 -> 2 -> 3 -> 4 -> 5 with caps 2: leaf depths 4 vs a leaf at 1
        let mut g = GraphState::new(1, 1, vec![2, 1, 1, 1, 0, 0]).unwrap();
        for (p, ch) in [(1, 2), (2, 3), (3, 4), (4, 5), (1, 6)] {
            g.build_link(id(p), id(ch), c(1)).unwrap();
        }
        assert!(!is_converged(&g, DepthMode::Instantaneous));
        let report = converged_state_report(&g);
        assert!(!report.converged);
        assert!(!report.check(ConvergedCheck::LeafBalance).passed);
    }

    #[test]
    fn available_internal_node_is_not_converged() {
        // 1 -> 2 -> {3 -> 5, 4}; node 2 has cap 3 and only two children; node 5 is at depth 3
        let mut g = GraphState::new(1, 1, vec![1, 3, 1, 0, 0]).unwrap();
        for (p, ch) in [(1, 2), (2, 3), (2, 4), (3, 5)] {
            g.build_link(id(p), id(ch), c(1)).unwrap();
        }
        assert!(!is_converged(&g, DepthMode::Instantaneous));
        let (u, v, _) = find_firing_pair(&g, DepthMode::Instantaneous).unwrap();
        assert_eq!((u, v), (id(5), id(2)));
        assert!(!converged_state_report(&g).check(ConvergedCheck::InternalSaturated).passed);
    }

    #[test]
    fn equal_mixed_depth_pairs_fail_chain_check() {
        // nodes 3 and 4 are both (1,2)-mixed at depth 1 in both colors
        let caps = vec![2, 2, 2, 2, 0, 0, 0, 0];
        let mut g = GraphState::new(2, 2, caps).unwrap();
        for (color, p, ch) in [
            (1, 1, 3), (1, 1, 4), (2, 2, 3), (2, 2, 4),
            (1, 3, 5), (2, 3, 6), (1, 4, 7), (2, 4, 8),
        ] {
            g.build_link(id(p), id(ch), c(color)).unwrap();
        }
        let report = converged_state_report(&g);
        let chain = report.check(ConvergedCheck::MixedChain);
        assert!(!chain.passed);
        assert!(chain.witnesses[0].contains("3") && chain.witnesses[0].contains("4"));
    }

    #[test]
    fn shower_head_of_binary_tree() {
        let g = perfect_binary(4);
        assert_eq!(shower_head_constant(&g), Some(1));
        assert_eq!(max_tree_depth(&g).per_color, vec![3]);
        assert_eq!(g.chain_depth(id(15), c(1)), Finite(3));
    }

    #[test]
    fn buffered_error_tracks_stale_estimates() {
        let mut g = perfect_binary(3);
        assert_eq!(buffered_depth_error(&g), 0);
        g.set_buffered_depth(id(7), c(1), Finite(5));
        assert_eq!(buffered_depth_error(&g), 3);
    }
}
