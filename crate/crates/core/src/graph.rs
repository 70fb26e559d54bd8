//! Colored-link overlay state.
//!
//! Every link carries exactly one substream ("color"). Color `i` is fed by
//! the server into root node `i`, so nodes `1..=M` are the roots. Each node
//! keeps at most one incoming link per color and a bounded number of
//! outgoing links regardless of color. Adjacency is stored in both
//! directions so that every protocol rule can read both endpoints'
//! neighborhoods in constant time.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 1-based node identifier. Ids `1..=M` are the roots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(u32);

impl NodeId {
    pub const fn new(id: u32) -> Self {
        NodeId(id)
    }

    pub const fn get(self) -> u32 {
        self.0
    }

    pub(crate) fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub(crate) fn from_index(index: usize) -> Self {
        NodeId(index as u32 + 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Substream label in `1..=M`, equal to the id of the root it originates from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Color(u32);

impl Color {
    pub const fn new(color: u32) -> Self {
        Color(color)
    }

    pub const fn get(self) -> u32 {
        self.0
    }

    /// The root that receives this substream from the server.
    pub const fn root(self) -> NodeId {
        NodeId(self.0)
    }

    pub(crate) fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Hop count from a root, or `Infinite` when no path exists.
///
/// `Infinite` is a dedicated variant: arithmetic on it saturates
/// (`Infinite.succ() == Infinite`) and it orders above every finite depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Depth {
    Finite(u32),
    Infinite,
}

impl Depth {
    pub const ZERO: Depth = Depth::Finite(0);

    pub fn succ(self) -> Depth {
        match self {
            Depth::Finite(d) => Depth::Finite(d + 1),
            Depth::Infinite => Depth::Infinite,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Depth::Finite(_))
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Depth::Finite(d) => Some(d),
            Depth::Infinite => None,
        }
    }

    /// `min(depth, cap)`; used by the potential, where unreachable nodes count as `N`.
    pub fn clamped(self, cap: u32) -> u32 {
        match self {
            Depth::Finite(d) => d.min(cap),
            Depth::Infinite => cap,
        }
    }

    /// True when `self` is at least two hops deeper than `other`, with
    /// `Infinite` exceeding every finite depth by at least two.
    pub fn exceeds_by_two(self, other: Depth) -> bool {
        match (self, other) {
            (_, Depth::Infinite) => false,
            (Depth::Infinite, Depth::Finite(_)) => true,
            (Depth::Finite(a), Depth::Finite(b)) => a >= b + 2,
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Depth::Finite(d) => write!(f, "{d}"),
            Depth::Infinite => f.write_str("inf"),
        }
    }
}

/// Tail of an incoming link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parent {
    /// The streaming server; only ever the parent of root `i` on color `i`.
    Server,
    Node(NodeId),
}

impl Parent {
    pub fn node(self) -> Option<NodeId> {
        match self {
            Parent::Server => None,
            Parent::Node(p) => Some(p),
        }
    }
}

/// A directed colored link `parent -> child`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Link {
    pub color: Color,
    pub parent: NodeId,
    pub child: NodeId,
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}->{} on {})", self.parent, self.child, self.color)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeState {
    id: NodeId,
    degree_cap: u32,
    incoming: Vec<Option<Parent>>,
    outgoing: Vec<BTreeSet<NodeId>>,
    buffered_depth: Vec<Depth>,
    out_total: u32,
    in_total: u32,
}

impl NodeState {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn degree_cap(&self) -> u32 {
        self.degree_cap
    }

    /// Total outgoing links, `d(u)`.
    pub fn out_degree(&self) -> u32 {
        self.out_total
    }

    /// Incoming links including the server link of a root.
    pub fn in_degree(&self) -> u32 {
        self.in_total
    }

    pub fn parent(&self, color: Color) -> Option<Parent> {
        self.incoming[color.index()]
    }

    pub fn children(&self, color: Color) -> &BTreeSet<NodeId> {
        &self.outgoing[color.index()]
    }

    /// `d_i(u)`.
    pub fn out_degree_in(&self, color: Color) -> u32 {
        self.outgoing[color.index()].len() as u32
    }

    pub fn buffered_depth(&self, color: Color) -> Depth {
        self.buffered_depth[color.index()]
    }

    /// Has at least one incoming link and spare outgoing capacity.
    pub fn is_available(&self) -> bool {
        self.in_total > 0 && self.out_total < self.degree_cap
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("need K={k} must satisfy 1 <= K <= M={m}")]
    BadNeed { k: u32, m: u32 },
    #[error("color count M={m} must satisfy 1 <= M <= N={n}")]
    BadColorCount { m: u32, n: u32 },
    #[error("expected {expected} degree caps, got {got}")]
    CapCount { expected: usize, got: usize },
}

/// Precondition failures of the primitive link mutations. Composite
/// transforms never trigger these; seeing one means internal misuse.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("color {0} does not exist")]
    UnknownColor(Color),
    #[error("self-loop on node {node} color {color}")]
    SelfLoop { node: NodeId, color: Color },
    #[error("node {child} already has an incoming {color}-link")]
    ParentOccupied { child: NodeId, color: Color },
    #[error("node {node} is at its degree cap {cap}")]
    CapacityExhausted { node: NodeId, cap: u32 },
    #[error("link {0} does not exist")]
    Missing(Link),
}

/// What a state violates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    TooManyIncoming { count: u32, need: u32 },
    OverCapacity { out: u32, cap: u32 },
    DuplicateIncoming,
    SelfLoop,
    AsymmetricLink { other: NodeId },
    ServerLinkMisplaced,
    RootMissingServerLink,
    NotATree,
    UnknownNode { other: u32 },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::TooManyIncoming { count, need } => {
                write!(f, "{count} incoming links exceed K={need}")
            }
            ViolationKind::OverCapacity { out, cap } => {
                write!(f, "{out} outgoing links exceed degree cap {cap}")
            }
            ViolationKind::DuplicateIncoming => f.write_str("more than one incoming link of this color"),
            ViolationKind::SelfLoop => f.write_str("self-loop"),
            ViolationKind::AsymmetricLink { other } => {
                write!(f, "parent/child records disagree with node {other}")
            }
            ViolationKind::ServerLinkMisplaced => f.write_str("server link on a non-root color"),
            ViolationKind::RootMissingServerLink => f.write_str("root lacks its server link"),
            ViolationKind::NotATree => f.write_str("reachable subgraph is not a tree"),
            ViolationKind::UnknownNode { other } => write!(f, "references unknown node {other}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub node: NodeId,
    pub color: Option<Color>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.color {
            Some(c) => write!(f, "node {} color {}: {}", self.node, c, self.kind),
            None => write!(f, "node {}: {}", self.node, self.kind),
        }
    }
}

/// Result of [`GraphState::check_assumption1`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InvariantReport {
    pub violations: Vec<Violation>,
}

impl InvariantReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("no violations");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Directed cycles in the part of a color's subgraph not reachable from its root.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CycleReport {
    /// Each cycle's members, sorted by id. Cycles are disjoint.
    pub cycles: Vec<Vec<NodeId>>,
}

impl CycleReport {
    pub fn count(&self) -> usize {
        self.cycles.len()
    }
}

/// Per-node depths for one color, indexed by [`NodeId`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthMap(Vec<Depth>);

impl DepthMap {
    pub fn get(&self, node: NodeId) -> Depth {
        self.0[node.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, Depth)> + '_ {
        self.0.iter().enumerate().map(|(i, d)| (NodeId::from_index(i), *d))
    }

    pub fn as_slice(&self) -> &[Depth] {
        &self.0
    }
}

/// The full overlay: `N` nodes, `M` colors, need `K`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphState {
    nodes: Vec<NodeState>,
    m: u32,
    k: u32,
}

impl GraphState {
    /// Empty overlay: only the server links into the roots exist.
    pub fn new(m: u32, k: u32, caps: Vec<u32>) -> Result<Self, GraphError> {
        let n = caps.len() as u32;
        if m == 0 || m > n {
            return Err(GraphError::BadColorCount { m, n });
        }
        if k == 0 || k > m {
            return Err(GraphError::BadNeed { k, m });
        }
        let nodes = caps
            .into_iter()
            .enumerate()
            .map(|(idx, cap)| {
                let id = NodeId::from_index(idx);
                let mut incoming = vec![None; m as usize];
                let mut buffered = vec![Depth::Infinite; m as usize];
                let mut in_total = 0;
                if id.get() <= m {
                    incoming[idx] = Some(Parent::Server);
                    buffered[idx] = Depth::ZERO;
                    in_total = 1;
                }
                NodeState {
                    id,
                    degree_cap: cap,
                    incoming,
                    outgoing: vec![BTreeSet::new(); m as usize],
                    buffered_depth: buffered,
                    out_total: 0,
                    in_total,
                }
            })
            .collect();
        Ok(GraphState { nodes, m, k })
    }

    pub fn n(&self) -> u32 {
        self.nodes.len() as u32
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + Clone {
        (1..=self.n()).map(NodeId::new)
    }

    pub fn colors(&self) -> impl Iterator<Item = Color> + Clone {
        (1..=self.m).map(Color::new)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.get() >= 1 && node.get() <= self.n()
    }

    pub fn is_root(&self, node: NodeId) -> bool {
        node.get() >= 1 && node.get() <= self.m
    }

    pub fn node(&self, node: NodeId) -> &NodeState {
        &self.nodes[node.index()]
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn parent(&self, node: NodeId, color: Color) -> Option<Parent> {
        self.node(node).parent(color)
    }

    /// The i-parent when it is a node (not the server).
    pub fn node_parent(&self, node: NodeId, color: Color) -> Option<NodeId> {
        self.parent(node, color).and_then(Parent::node)
    }

    pub fn children(&self, node: NodeId, color: Color) -> &BTreeSet<NodeId> {
        self.node(node).children(color)
    }

    pub fn buffered_depth(&self, node: NodeId, color: Color) -> Depth {
        self.node(node).buffered_depth(color)
    }

    pub fn set_buffered_depth(&mut self, node: NodeId, color: Color, depth: Depth) {
        self.nodes[node.index()].buffered_depth[color.index()] = depth;
    }

    /// Number of node-to-node links, `|E|`. Server links are not counted.
    pub fn edge_count(&self) -> u64 {
        self.nodes.iter().map(|n| n.out_total as u64).sum()
    }

    pub fn links(&self) -> impl Iterator<Item = Link> + '_ {
        self.nodes.iter().flat_map(move |node| {
            node.outgoing.iter().enumerate().flat_map(move |(ci, kids)| {
                kids.iter().map(move |&child| Link {
                    color: Color::new(ci as u32 + 1),
                    parent: node.id,
                    child,
                })
            })
        })
    }

    fn check_ids(&self, u: NodeId, v: NodeId, color: Color) -> Result<(), LinkError> {
        for node in [u, v] {
            if !self.contains(node) {
                return Err(LinkError::UnknownNode(node));
            }
        }
        if color.get() == 0 || color.get() > self.m {
            return Err(LinkError::UnknownColor(color));
        }
        if u == v {
            return Err(LinkError::SelfLoop { node: u, color });
        }
        Ok(())
    }

    /// Builds `u -> v` in `E_color`. Requires `v` to lack an incoming link
    /// of that color and `u` to have spare outgoing capacity.
    pub fn build_link(&mut self, u: NodeId, v: NodeId, color: Color) -> Result<(), LinkError> {
        self.check_ids(u, v, color)?;
        let tail = self.node(u);
        if tail.out_total >= tail.degree_cap {
            return Err(LinkError::CapacityExhausted { node: u, cap: tail.degree_cap });
        }
        self.insert_link(u, v, color)
    }

    /// Structural insertion without the capacity check. Used by loaders so
    /// that over-capacity states can still be represented and reported.
    pub(crate) fn insert_link(&mut self, u: NodeId, v: NodeId, color: Color) -> Result<(), LinkError> {
        self.check_ids(u, v, color)?;
        if self.node(v).incoming[color.index()].is_some() {
            return Err(LinkError::ParentOccupied { child: v, color });
        }
        let head = &mut self.nodes[v.index()];
        head.incoming[color.index()] = Some(Parent::Node(u));
        head.in_total += 1;
        let tail = &mut self.nodes[u.index()];
        tail.outgoing[color.index()].insert(v);
        tail.out_total += 1;
        Ok(())
    }

    /// Removes `u -> v` from `E_color`. `v`'s buffered depth is left alone.
    pub fn remove_link(&mut self, u: NodeId, v: NodeId, color: Color) -> Result<(), LinkError> {
        self.check_ids(u, v, color)?;
        let link = Link { color, parent: u, child: v };
        if self.node(v).incoming[color.index()] != Some(Parent::Node(u)) {
            return Err(LinkError::Missing(link));
        }
        let tail = &mut self.nodes[u.index()];
        if !tail.outgoing[color.index()].remove(&v) {
            return Err(LinkError::Missing(link));
        }
        tail.out_total -= 1;
        let head = &mut self.nodes[v.index()];
        head.incoming[color.index()] = None;
        head.in_total -= 1;
        Ok(())
    }

    /// Breadth-first depths from root `color` over `E_color`; unreachable
    /// nodes are `Infinite`.
    pub fn true_depths(&self, color: Color) -> DepthMap {
        let mut depths = vec![Depth::Infinite; self.nodes.len()];
        let root = color.root();
        depths[root.index()] = Depth::ZERO;
        let mut queue = VecDeque::from([(root, 0u32)]);
        while let Some((u, d)) = queue.pop_front() {
            for &child in self.children(u, color) {
                if depths[child.index()] == Depth::Infinite {
                    depths[child.index()] = Depth::Finite(d + 1);
                    queue.push_back((child, d + 1));
                }
            }
        }
        DepthMap(depths)
    }

    /// Depth of a single node found by walking up its unique parent chain.
    /// Agrees with [`GraphState::true_depths`] because in-degree per color is
    /// at most one.
    pub fn chain_depth(&self, node: NodeId, color: Color) -> Depth {
        let mut current = node;
        let mut hops = 0u32;
        loop {
            match self.parent(current, color) {
                Some(Parent::Server) => return Depth::Finite(hops),
                None => return Depth::Infinite,
                Some(Parent::Node(p)) => {
                    hops += 1;
                    // a longer chain must have revisited a node
                    if hops > self.n() {
                        return Depth::Infinite;
                    }
                    current = p;
                }
            }
        }
    }

    /// Overwrites every buffered depth with its true depth.
    pub fn sync_buffered_depths(&mut self) {
        for color in self.colors() {
            let depths = self.true_depths(color);
            for (node, d) in depths.iter() {
                self.set_buffered_depth(node, color, d);
            }
        }
    }

    /// All directed cycles of `E_color` among nodes unreachable from the root.
    ///
    /// With in-degree at most one per color the cycles are disjoint, so
    /// chasing parent pointers with visitation marks finds each exactly once.
    pub fn detect_cycles(&self, color: Color) -> CycleReport {
        const UNSEEN: u32 = 0;
        const DONE: u32 = u32::MAX;
        let n = self.nodes.len();
        // mark = walk number (1-based) while on the current walk
        let mut mark = vec![UNSEEN; n];
        let mut cycles = Vec::new();
        let mut path = Vec::new();
        for start in 0..n {
            if mark[start] != UNSEEN {
                continue;
            }
            let walk = start as u32 + 1;
            path.clear();
            let mut cur = start;
            loop {
                if mark[cur] == walk {
                    let pos = path.iter().position(|&p| p == cur).expect("node on walk");
                    let mut cycle: Vec<NodeId> =
                        path[pos..].iter().map(|&p| NodeId::from_index(p)).collect();
                    cycle.sort();
                    cycles.push(cycle);
                    break;
                }
                if mark[cur] != UNSEEN {
                    break;
                }
                mark[cur] = walk;
                path.push(cur);
                match self.nodes[cur].incoming[color.index()] {
                    Some(Parent::Node(p)) => cur = p.index(),
                    _ => break,
                }
            }
            for &p in &path {
                mark[p] = DONE;
            }
        }
        cycles.sort();
        CycleReport { cycles }
    }

    /// Verifies the structural tree invariants: at most `K` incoming links,
    /// at most one per color, at most `cap` outgoing, symmetric adjacency,
    /// server links only on the roots' own colors, and each color's
    /// reachable subgraph forming a tree.
    pub fn check_assumption1(&self) -> InvariantReport {
        let mut violations = Vec::new();
        for node in &self.nodes {
            let u = node.id;
            if node.in_total > self.k {
                violations.push(Violation {
                    node: u,
                    color: None,
                    kind: ViolationKind::TooManyIncoming { count: node.in_total, need: self.k },
                });
            }
            if node.out_total > node.degree_cap {
                violations.push(Violation {
                    node: u,
                    color: None,
                    kind: ViolationKind::OverCapacity { out: node.out_total, cap: node.degree_cap },
                });
            }
            let counted_in = node.incoming.iter().filter(|p| p.is_some()).count() as u32;
            let counted_out: u32 = node.outgoing.iter().map(|s| s.len() as u32).sum();
            if counted_in != node.in_total || counted_out != node.out_total {
                violations.push(Violation {
                    node: u,
                    color: None,
                    kind: ViolationKind::AsymmetricLink { other: u },
                });
            }
            for color in self.colors() {
                let is_own_root = color.root() == u;
                match node.parent(color) {
                    Some(Parent::Server) if !is_own_root => violations.push(Violation {
                        node: u,
                        color: Some(color),
                        kind: ViolationKind::ServerLinkMisplaced,
                    }),
                    Some(Parent::Server) => {}
                    _ if is_own_root => violations.push(Violation {
                        node: u,
                        color: Some(color),
                        kind: ViolationKind::RootMissingServerLink,
                    }),
                    Some(Parent::Node(p)) => {
                        if p == u {
                            violations.push(Violation {
                                node: u,
                                color: Some(color),
                                kind: ViolationKind::SelfLoop,
                            });
                        } else if !self.contains(p) || !self.children(p, color).contains(&u) {
                            violations.push(Violation {
                                node: u,
                                color: Some(color),
                                kind: ViolationKind::AsymmetricLink { other: p },
                            });
                        }
                    }
                    None => {}
                }
                for &child in node.children(color) {
                    if !self.contains(child) {
                        violations.push(Violation {
                            node: u,
                            color: Some(color),
                            kind: ViolationKind::UnknownNode { other: child.get() },
                        });
                    } else if self.parent(child, color) != Some(Parent::Node(u)) {
                        violations.push(Violation {
                            node: u,
                            color: Some(color),
                            kind: ViolationKind::AsymmetricLink { other: child },
                        });
                    }
                }
            }
        }
        for color in self.colors() {
            if let Some(node) = self.tree_violation(color) {
                violations.push(Violation { node, color: Some(color), kind: ViolationKind::NotATree });
            }
        }
        InvariantReport { violations }
    }

    /// First node reached twice by a traversal from the root over child sets.
    fn tree_violation(&self, color: Color) -> Option<NodeId> {
        let mut seen = vec![false; self.nodes.len()];
        let root = color.root();
        seen[root.index()] = true;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &child in self.children(u, color) {
                if !self.contains(child) {
                    continue;
                }
                if seen[child.index()] {
                    return Some(child);
                }
                seen[child.index()] = true;
                stack.push(child);
            }
        }
        None
    }
}
