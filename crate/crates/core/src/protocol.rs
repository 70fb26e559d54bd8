//! Local link updates run when one node samples another.
//!
//! Each rule comes in two halves: a read-only planner (`plan_*`) that decides
//! whether and how the rule fires, and [`apply`] which performs the link
//! mutations and the depth updates that follow new incoming links. The
//! convergence detector probes the planners directly, so sampling and
//! probing can never disagree.
//!
//! Ties are broken deterministically: lowest color first, then lowest node id.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::{Color, Depth, GraphState, Link, NodeId, Parent};

/// Where rules read depths from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthMode {
    /// Rules see true depths at all times.
    Instantaneous,
    /// Rules see only the buffered estimates maintained by [`depth_update`].
    Distributed,
}

impl DepthMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DepthMode::Instantaneous => "instantaneous",
            DepthMode::Distributed => "distributed",
        }
    }
}

impl fmt::Display for DepthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DepthMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "instantaneous" | "instant" => Ok(DepthMode::Instantaneous),
            "distributed" => Ok(DepthMode::Distributed),
            other => Err(format!("unknown depth mode `{other}` (expected instantaneous|distributed)")),
        }
    }
}

/// Which MixSwap condition fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MixClause {
    /// At least one of the two depth comparisons is strict.
    Strict,
    /// Depths equal in both colors; lower-id parent takes the lower color.
    TieBreak,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    None,
    Add,
    Insert,
    Jump,
    LeafSwap,
    MixSwap(MixClause),
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::None => "none",
            Rule::Add => "add",
            Rule::Insert => "insert",
            Rule::Jump => "jump",
            Rule::LeafSwap => "leafswap",
            Rule::MixSwap(MixClause::Strict) => "mixswap-a",
            Rule::MixSwap(MixClause::TieBreak) => "mixswap-b",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LinkChange {
    Built,
    Removed,
}

/// Effect of one sampling. `rule == Rule::None` exactly when nothing changed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleOutcome {
    pub rule: Rule,
    pub affected: Vec<(Link, LinkChange)>,
}

impl RuleOutcome {
    pub fn none() -> Self {
        RuleOutcome { rule: Rule::None, affected: Vec::new() }
    }

    pub fn changed(&self) -> bool {
        self.rule != Rule::None
    }
}

/// A planned link update. Field names follow the rule's roles: `node` is the
/// sampler that moves, `parent`/`target` the sampled node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Update {
    /// `parent -> child` built.
    Add { color: Color, parent: NodeId, child: NodeId },
    /// `parent -> displaced` replaced by `parent -> child -> displaced`.
    Insert { color: Color, parent: NodeId, child: NodeId, displaced: NodeId },
    /// `node` re-parents from `old_parent` to `new_parent`.
    Jump { color: Color, node: NodeId, old_parent: NodeId, new_parent: NodeId },
    /// Internal `node` and `leaf` exchange parents.
    LeafSwap { color: Color, node: NodeId, node_parent: NodeId, leaf: NodeId, leaf_parent: NodeId },
    /// `sampler` (an i-child of `sampler_parent`) and `target_child` (a
    /// j-child of `target`) exchange parents: afterwards `target` feeds
    /// `sampler` on color i and `sampler_parent` feeds `target_child` on j.
    MixSwap {
        clause: MixClause,
        color_i: Color,
        color_j: Color,
        sampler: NodeId,
        sampler_parent: NodeId,
        target: NodeId,
        target_child: NodeId,
    },
}

impl Update {
    pub fn rule(&self) -> Rule {
        match self {
            Update::Add { .. } => Rule::Add,
            Update::Insert { .. } => Rule::Insert,
            Update::Jump { .. } => Rule::Jump,
            Update::LeafSwap { .. } => Rule::LeafSwap,
            Update::MixSwap { clause, .. } => Rule::MixSwap(*clause),
        }
    }
}

/// Depth of `node` in `color` as seen by rules in `mode`.
pub fn depth_view(state: &GraphState, node: NodeId, color: Color, mode: DepthMode) -> Depth {
    match mode {
        DepthMode::Instantaneous => state.chain_depth(node, color),
        DepthMode::Distributed => state.buffered_depth(node, color),
    }
}

/// Refreshes `node`'s buffered depth to `color`.
///
/// Distributed: root gets 0, a node without an incoming link gets infinity,
/// otherwise its parent's buffered depth plus one. Instantaneous: the true
/// depth is written.
pub fn depth_update(state: &mut GraphState, node: NodeId, color: Color, mode: DepthMode) {
    let depth = match mode {
        DepthMode::Instantaneous => state.chain_depth(node, color),
        DepthMode::Distributed => match state.parent(node, color) {
            Some(Parent::Server) => Depth::ZERO,
            None => Depth::Infinite,
            Some(Parent::Node(p)) => state.buffered_depth(p, color).succ(),
        },
    };
    state.set_buffered_depth(node, color, depth);
}

pub fn depth_update_all(state: &mut GraphState, node: NodeId, mode: DepthMode) {
    for color in 1..=state.m() {
        depth_update(state, node, Color::new(color), mode);
    }
}

/// GreedyCover planner: `u` (sampler, fewer than K incoming links) takes a
/// color it lacks from `v`, by Add when `v` has spare capacity, otherwise by
/// Insert above one of `v`'s children when `u` itself has spare capacity.
pub fn plan_greedy_cover(state: &GraphState, u: NodeId, v: NodeId) -> Option<Update> {
    if u == v {
        return None;
    }
    let sampler = state.node(u);
    if sampler.in_degree() >= state.k() {
        return None;
    }
    let target = state.node(v);
    let target_has_room = target.out_degree() < target.degree_cap();
    let sampler_has_room = sampler.out_degree() < sampler.degree_cap();
    for color in state.colors() {
        if sampler.parent(color).is_some() || target.parent(color).is_none() {
            continue;
        }
        if target_has_room {
            return Some(Update::Add { color, parent: v, child: u });
        }
        if sampler_has_room {
            if let Some(&displaced) = target.children(color).iter().next() {
                return Some(Update::Insert { color, parent: v, child: u, displaced });
            }
        }
    }
    None
}

/// SingleTreeBalance planner. For the lowest color where both nodes have an
/// incoming link: Jump moves `u` under an available `v` that is at least two
/// levels shallower; LeafSwap exchanges the parents of internal `u` and
/// shallower leaf `v`.
pub fn plan_single_tree_balance(
    state: &GraphState,
    u: NodeId,
    v: NodeId,
    mode: DepthMode,
) -> Option<Update> {
    if u == v {
        return None;
    }
    let target = state.node(v);
    let target_has_room = target.out_degree() < target.degree_cap();
    for color in state.colors() {
        // the root of this color never moves
        let Some(Parent::Node(u_parent)) = state.parent(u, color) else {
            continue;
        };
        let Some(v_parent) = state.parent(v, color) else {
            continue;
        };
        let du = depth_view(state, u, color, mode);
        let dv = depth_view(state, v, color, mode);
        if target_has_room && dv.succ() < du && u_parent != v {
            return Some(Update::Jump { color, node: u, old_parent: u_parent, new_parent: v });
        }
        if let Parent::Node(leaf_parent) = v_parent {
            let v_is_leaf = target.children(color).is_empty();
            let u_is_leaf = state.children(u, color).is_empty();
            if v_is_leaf && !u_is_leaf && du > dv && leaf_parent != u && leaf_parent != u_parent {
                return Some(Update::LeafSwap {
                    color,
                    node: u,
                    node_parent: u_parent,
                    leaf: v,
                    leaf_parent,
                });
            }
        }
    }
    None
}

/// MixSwap planner. `u_c` samples `v`; for colors `i != j` where `u_c` has an
/// i-parent `u` and `v` has a j-child `v_c`, the two children exchange
/// parents when `u` is no shallower than `v` in `i` and no deeper in `j`,
/// with a strict improvement (clause a) or an id/color tie-break (clause b).
pub fn plan_mix_swap(state: &GraphState, u_c: NodeId, v: NodeId, mode: DepthMode) -> Option<Update> {
    if u_c == v {
        return None;
    }
    for color_i in state.colors() {
        let Some(Parent::Node(u)) = state.parent(u_c, color_i) else {
            continue;
        };
        if u == v {
            continue;
        }
        let li_u = depth_view(state, u, color_i, mode);
        let li_v = depth_view(state, v, color_i, mode);
        if li_u < li_v {
            continue;
        }
        for color_j in state.colors() {
            if color_j == color_i {
                continue;
            }
            let Some(&v_c) = state.children(v, color_j).iter().find(|&&c| c != u) else {
                continue;
            };
            let lj_u = depth_view(state, u, color_j, mode);
            let lj_v = depth_view(state, v, color_j, mode);
            if lj_u > lj_v {
                continue;
            }
            let clause = if li_u != li_v || lj_u != lj_v {
                MixClause::Strict
            } else {
                let id_gap = u.get() as i64 - v.get() as i64;
                let color_gap = color_j.get() as i64 - color_i.get() as i64;
                if id_gap * color_gap > 0 {
                    MixClause::TieBreak
                } else {
                    continue;
                }
            };
            return Some(Update::MixSwap {
                clause,
                color_i,
                color_j,
                sampler: u_c,
                sampler_parent: u,
                target: v,
                target_child: v_c,
            });
        }
    }
    None
}

/// The combined rule with short-circuit order Cover, Balance, MixSwap.
/// Reads depths as they are; callers refresh buffered depths first.
pub fn plan_update(state: &GraphState, u: NodeId, v: NodeId, mode: DepthMode) -> Option<Update> {
    plan_greedy_cover(state, u, v)
        .or_else(|| plan_single_tree_balance(state, u, v, mode))
        .or_else(|| plan_mix_swap(state, u, v, mode))
}

fn link(color: Color, parent: NodeId, child: NodeId) -> Link {
    Link { color, parent, child }
}

/// Executes a planned update. Removals precede builds so that freed
/// capacity is reusable; every node that gains an incoming link then runs a
/// depth update for that link's color.
pub fn apply(state: &mut GraphState, update: Update, mode: DepthMode) -> RuleOutcome {
    use LinkChange::{Built, Removed};
    let (removed, built): (Vec<Link>, Vec<Link>) = match update {
        Update::Add { color, parent, child } => (vec![], vec![link(color, parent, child)]),
        Update::Insert { color, parent, child, displaced } => (
            vec![link(color, parent, displaced)],
            vec![link(color, parent, child), link(color, child, displaced)],
        ),
        Update::Jump { color, node, old_parent, new_parent } => {
            (vec![link(color, old_parent, node)], vec![link(color, new_parent, node)])
        }
        Update::LeafSwap { color, node, node_parent, leaf, leaf_parent } => (
            vec![link(color, node_parent, node), link(color, leaf_parent, leaf)],
            vec![link(color, node_parent, leaf), link(color, leaf_parent, node)],
        ),
        Update::MixSwap { color_i, color_j, sampler, sampler_parent, target, target_child, .. } => (
            vec![link(color_i, sampler_parent, sampler), link(color_j, target, target_child)],
            vec![link(color_j, sampler_parent, target_child), link(color_i, target, sampler)],
        ),
    };
    let mut affected = Vec::with_capacity(removed.len() + built.len());
    for l in removed {
        state
            .remove_link(l.parent, l.child, l.color)
            .unwrap_or_else(|e| panic!("{update:?}: {e}"));
        affected.push((l, Removed));
    }
    for l in &built {
        state
            .build_link(l.parent, l.child, l.color)
            .unwrap_or_else(|e| panic!("{update:?}: {e}"));
        affected.push((*l, Built));
    }
    for l in built {
        depth_update(state, l.child, l.color, mode);
    }
    RuleOutcome { rule: update.rule(), affected }
}

fn run(state: &mut GraphState, update: Option<Update>, mode: DepthMode) -> RuleOutcome {
    match update {
        Some(update) => apply(state, update, mode),
        None => RuleOutcome::none(),
    }
}

pub fn greedy_cover(state: &mut GraphState, u: NodeId, v: NodeId, mode: DepthMode) -> RuleOutcome {
    let plan = plan_greedy_cover(state, u, v);
    run(state, plan, mode)
}

pub fn single_tree_balance(state: &mut GraphState, u: NodeId, v: NodeId, mode: DepthMode) -> RuleOutcome {
    let plan = plan_single_tree_balance(state, u, v, mode);
    run(state, plan, mode)
}

pub fn mix_swap(state: &mut GraphState, u_c: NodeId, v: NodeId, mode: DepthMode) -> RuleOutcome {
    let plan = plan_mix_swap(state, u_c, v, mode);
    run(state, plan, mode)
}

/// Everything that happens when `u` samples `v`: both refresh all buffered
/// depths, then at most one rule fires.
pub fn on_sample(state: &mut GraphState, u: NodeId, v: NodeId, mode: DepthMode) -> RuleOutcome {
    debug_assert_ne!(u, v, "sampler never targets itself");
    depth_update_all(state, u, mode);
    depth_update_all(state, v, mode);
    let plan = plan_update(state, u, v, mode);
    run(state, plan, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Depth::{Finite, Infinite};

    fn id(n: u32) -> NodeId {
        NodeId::new(n)
    }

    fn c(n: u32) -> Color {
        Color::new(n)
    }

    fn links(g: &mut GraphState, spec: &[(u32, u32, u32)]) {
        for &(color, p, ch) in spec {
            g.build_link(id(p), id(ch), c(color)).unwrap();
        }
        g.sync_buffered_depths();
    }

    #[test]
    fn depth_update_cases() {
        let mut g = GraphState::new(1, 1, vec![2; 6]).unwrap();
        g.set_buffered_depth(id(1), c(1), Finite(9));
        depth_update(&mut g, id(1), c(1), DepthMode::Distributed);
        assert_eq!(g.buffered_depth(id(1), c(1)), Finite(0));

        g.set_buffered_depth(id(4), c(1), Finite(2));
        depth_update(&mut g, id(4), c(1), DepthMode::Distributed);
        assert_eq!(g.buffered_depth(id(4), c(1)), Infinite);

        g.build_link(id(1), id(2), c(1)).unwrap();
        g.build_link(id(2), id(3), c(1)).unwrap();
        g.set_buffered_depth(id(2), c(1), Finite(3));
        depth_update(&mut g, id(3), c(1), DepthMode::Distributed);
        assert_eq!(g.buffered_depth(id(3), c(1)), Finite(4));
        // instantaneous ignores the stale parent estimate
        depth_update(&mut g, id(3), c(1), DepthMode::Instantaneous);
        assert_eq!(g.buffered_depth(id(3), c(1)), Finite(2));

        g.set_buffered_depth(id(2), c(1), Infinite);
        depth_update(&mut g, id(3), c(1), DepthMode::Distributed);
        assert_eq!(g.buffered_depth(id(3), c(1)), Infinite);
    }

    #[test]
    fn cover_refuses_saturated_sampler() {
        let mut g = GraphState::new(2, 2, vec![2, 2, 2, 2]).unwrap();
        links(&mut g, &[(1, 1, 3), (2, 2, 3), (1, 3, 4)]);
        assert_eq!(plan_greedy_cover(&g, id(3), id(4)), None);
    }

    #[test]
    fn cover_add() {
        let mut g = GraphState::new(2, 2, vec![1, 1, 2, 2, 2]).unwrap();
        links(&mut g, &[(1, 1, 3)]);
        let out = greedy_cover(&mut g, id(4), id(3), DepthMode::Distributed);
        assert_eq!(out.rule, Rule::Add);
        assert_eq!(out.affected, vec![(link(c(1), id(3), id(4)), LinkChange::Built)]);
        assert_eq!(g.buffered_depth(id(4), c(1)), Finite(2));
    }

    #[test]
    fn cover_insert() {
        let mut g = GraphState::new(1, 1, vec![2, 1, 2, 2]).unwrap();
        links(&mut g, &[(1, 1, 2), (1, 2, 3)]);
        let out = greedy_cover(&mut g, id(4), id(2), DepthMode::Instantaneous);
        assert_eq!(out.rule, Rule::Insert);
        assert_eq!(g.parent(id(4), c(1)), Some(Parent::Node(id(2))));
        assert_eq!(g.parent(id(3), c(1)), Some(Parent::Node(id(4))));
        assert!(!g.children(id(2), c(1)).contains(&id(3)));
        assert_eq!(g.buffered_depth(id(3), c(1)), Finite(3));
        assert!(g.check_assumption1().is_ok());
    }

    #[test]
    fn cover_insert_needs_sampler_capacity() {
        let mut g = GraphState::new(1, 1, vec![2, 1, 2, 0]).unwrap();
        links(&mut g, &[(1, 1, 2), (1, 2, 3)]);
        assert_eq!(plan_greedy_cover(&g, id(4), id(2)), None);
    }

    #[test]
    fn cover_no_shared_color() {
        let mut g = GraphState::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        links(&mut g, &[(1, 1, 3), (1, 3, 4)]);
        // 4 lacks color 2 but 3 only holds color 1
        assert_eq!(plan_greedy_cover(&g, id(4), id(3)), None);
    }

    /// Color-1 tree: 1 -> 2 -> 3 -> 4 -> 5 -> 6, plus 1 -> 7 -> 8.
    fn deep_chain() -> GraphState {
        let mut g = GraphState::new(1, 1, vec![3, 1, 1, 1, 1, 1, 2, 2]).unwrap();
        links(&mut g, &[(1, 1, 2), (1, 2, 3), (1, 3, 4), (1, 4, 5), (1, 5, 6), (1, 1, 7), (1, 7, 8)]);
        g
    }

    #[test]
    fn jump_under_shallower_available_target() {
        let mut g = deep_chain();
        // node 6 at depth 5 samples node 8 at depth 2 (cap 2, one free slot)
        assert_eq!(g.chain_depth(id(6), c(1)), Finite(5));
        let out = single_tree_balance(&mut g, id(6), id(8), DepthMode::Instantaneous);
        assert_eq!(out.rule, Rule::Jump);
        assert_eq!(g.chain_depth(id(6), c(1)), Finite(3));

        // depth 5 under an available node at depth 3 ends at depth 4
        let mut g = GraphState::new(1, 1, vec![1, 1, 1, 2, 0, 1, 1]).unwrap();
        links(&mut g, &[(1, 1, 2), (1, 2, 3), (1, 3, 4), (1, 4, 7), (1, 7, 6)]);
        assert_eq!(g.chain_depth(id(6), c(1)), Finite(5));
        assert_eq!(g.chain_depth(id(4), c(1)), Finite(3));
        let out = single_tree_balance(&mut g, id(6), id(4), DepthMode::Instantaneous);
        assert_eq!(out.rule, Rule::Jump);
        assert_eq!(g.chain_depth(id(6), c(1)), Finite(4));

        // a saturated target blocks the jump
        let mut g = GraphState::new(1, 1, vec![1, 1, 1, 1, 0, 1, 1]).unwrap();
        links(&mut g, &[(1, 1, 2), (1, 2, 3), (1, 3, 4), (1, 4, 7), (1, 7, 6)]);
        assert_eq!(plan_single_tree_balance(&g, id(6), id(4), DepthMode::Instantaneous), None);
    }

    #[test]
    fn jump_boundary_is_none() {
        // u at depth 4, v at depth 3 with spare room: 3+1 < 4 fails
        let mut g = GraphState::new(1, 1, vec![1, 1, 1, 2, 1]).unwrap();
        links(&mut g, &[(1, 1, 2), (1, 2, 3), (1, 3, 4), (1, 4, 5)]);
        assert_eq!(g.chain_depth(id(5), c(1)), Finite(4));
        assert_eq!(g.chain_depth(id(4), c(1)), Finite(3));
        assert_eq!(plan_single_tree_balance(&g, id(5), id(4), DepthMode::Instantaneous), None);
        assert_eq!(plan_single_tree_balance(&g, id(4), id(5), DepthMode::Instantaneous), None);
    }

    #[test]
    fn leaf_swap_exchanges_parents() {
        // 1 -> 2 -> 3 -> 8 -> 4 -> 5 and 1 -> 6 -> 7, where 7 is a leaf
        let mut g = GraphState::new(1, 1, vec![2, 1, 1, 1, 1, 1, 0, 1, 0]).unwrap();
        links(&mut g, &[(1, 1, 2), (1, 2, 3), (1, 3, 8), (1, 8, 4), (1, 4, 5), (1, 1, 6), (1, 6, 7)]);
        assert_eq!(g.chain_depth(id(4), c(1)), Finite(4));
        assert_eq!(g.chain_depth(id(7), c(1)), Finite(2));
        let out = single_tree_balance(&mut g, id(4), id(7), DepthMode::Instantaneous);
        assert_eq!(out.rule, Rule::LeafSwap);
        assert_eq!(g.parent(id(4), c(1)), Some(Parent::Node(id(6))));
        assert_eq!(g.parent(id(7), c(1)), Some(Parent::Node(id(8))));
        assert_eq!(g.chain_depth(id(5), c(1)), Finite(3));
        assert!(g.check_assumption1().is_ok());
    }

    #[test]
    fn leaf_swap_eliminates_detached_cycle() {
        // tree: 1 -> 2 -> 3 -> 4 (leaf at depth 3); detached cycle 5 -> 6 -> 7 -> 5
        let mut g = GraphState::new(1, 1, vec![1, 1, 1, 0, 1, 1, 1]).unwrap();
        links(&mut g, &[(1, 1, 2), (1, 2, 3), (1, 3, 4), (1, 5, 6), (1, 6, 7), (1, 7, 5)]);
        assert_eq!(g.detect_cycles(c(1)).count(), 1);
        let out = single_tree_balance(&mut g, id(5), id(4), DepthMode::Instantaneous);
        assert_eq!(out.rule, Rule::LeafSwap);
        assert_eq!(g.detect_cycles(c(1)).count(), 0);
        for node in [5, 6, 7] {
            assert!(g.chain_depth(id(node), c(1)).is_finite());
        }
        assert_eq!(g.chain_depth(id(4), c(1)), Finite(6));
    }

    #[test]
    fn mix_swap_strict_clause() {
        // color 1 tree: 1 -> 3 -> 4 -> 5 -> u(6) -> u_c(10); 1 -> 7 -> v(8)
        // color 2 tree: 2 -> u(6); 2 -> 9 -> 11 -> v(8) -> v_c(12)
        let caps = vec![2, 2, 1, 1, 1, 2, 1, 2, 1, 0, 1, 0];
        let mut g = GraphState::new(2, 2, caps).unwrap();
        links(
            &mut g,
            &[
                (1, 1, 3), (1, 3, 4), (1, 4, 5), (1, 5, 6), (1, 6, 10), (1, 1, 7), (1, 7, 8),
                (2, 2, 6), (2, 2, 9), (2, 9, 11), (2, 11, 8), (2, 8, 12),
            ],
        );
        let (u, v, u_c, v_c) = (id(6), id(8), id(10), id(12));
        assert_eq!(g.chain_depth(u, c(1)), Finite(4));
        assert_eq!(g.chain_depth(v, c(1)), Finite(2));
        assert_eq!(g.chain_depth(u, c(2)), Finite(1));
        assert_eq!(g.chain_depth(v, c(2)), Finite(3));
        assert_eq!(g.chain_depth(u_c, c(1)), Finite(5));
        let out = mix_swap(&mut g, u_c, v, DepthMode::Instantaneous);
        assert_eq!(out.rule, Rule::MixSwap(MixClause::Strict));
        assert_eq!(g.chain_depth(u_c, c(1)), Finite(3));
        assert_eq!(g.parent(v_c, c(2)), Some(Parent::Node(u)));
        assert_eq!(g.chain_depth(v_c, c(2)), Finite(2));
        assert!(g.check_assumption1().is_ok());
    }

    #[test]
    fn mix_swap_tie_break_clause() {
        // u=3 and v=7 both sit at depth 1 in both colors. u_c=8 hangs off u in
        // both colors, v_c=9 off v in both colors. For i=1, j=2 the sign
        // (3-7)(2-1) is negative; for i=2, j=1 it is (3-7)(1-2) = 4 > 0.
        let caps = vec![2, 2, 2, 2, 2, 2, 2, 0, 0];
        let mut g = GraphState::new(2, 2, caps).unwrap();
        links(
            &mut g,
            &[(1, 1, 3), (1, 1, 7), (2, 2, 3), (2, 2, 7), (2, 3, 8), (1, 7, 9), (1, 3, 8), (2, 7, 9)],
        );
        let plan = plan_mix_swap(&g, id(8), id(7), DepthMode::Instantaneous);
        assert!(matches!(
            plan,
            Some(Update::MixSwap { clause: MixClause::TieBreak, color_i, color_j, .. })
                if color_i == c(2) && color_j == c(1)
        ));
        let out = mix_swap(&mut g, id(8), id(7), DepthMode::Instantaneous);
        assert_eq!(out.rule, Rule::MixSwap(MixClause::TieBreak));
        assert_eq!(g.parent(id(8), c(2)), Some(Parent::Node(id(7))));
        assert_eq!(g.parent(id(9), c(1)), Some(Parent::Node(id(3))));
        assert!(g.check_assumption1().is_ok());
    }

    #[test]
    fn mix_swap_none_without_parent() {
        let mut g = GraphState::new(2, 2, vec![1, 1, 2, 2]).unwrap();
        links(&mut g, &[(1, 1, 3), (1, 3, 4)]);
        // 4 has only a 1-parent and root 1 has only 1-children
        assert_eq!(plan_mix_swap(&g, id(4), id(1), DepthMode::Instantaneous), None);
    }

    #[test]
    fn cover_short_circuits_balance() {
        // u=6 lacks color 2 and sits deep in color 1; v=3 is shallow, available
        // and holds color 2: both Add and Jump would fire, Add wins.
        let caps = vec![2, 2, 3, 1, 1, 1];
        let mut g = GraphState::new(2, 2, caps).unwrap();
        links(&mut g, &[(1, 1, 3), (1, 3, 4), (1, 4, 5), (1, 5, 6), (2, 2, 3)]);
        assert!(plan_single_tree_balance(&g, id(6), id(3), DepthMode::Instantaneous).is_some());
        let out = on_sample(&mut g, id(6), id(3), DepthMode::Instantaneous);
        assert_eq!(out.rule, Rule::Add);
        assert_eq!(g.parent(id(6), c(1)), Some(Parent::Node(id(5))));
    }

    #[test]
    fn outcome_shape() {
        let out = RuleOutcome::none();
        assert!(!out.changed());
        assert!(out.affected.is_empty());
    }
}
