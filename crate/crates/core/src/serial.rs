//! Line-based text format for [`GraphState`].
//!
//! ```text
//! N M K
//! id cap        (exactly N lines)
//! color parent child
//! ...
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Server links into the
//! roots are implicit. Buffered depths are not stored; a loaded state has
//! them synchronized to the true depths.

use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::{
    Color, GraphState, InvariantReport, LinkError, NodeId, Violation, ViolationKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    /// The file is well-formed but describes links no state can hold
    /// (two parents of one color, self-loops).
    #[error("state violates link structure:\n{0}")]
    Structure(InvariantReport),
}

pub fn write_state(state: &GraphState) -> String {
    let mut out = String::new();
    writeln!(out, "{} {} {}", state.n(), state.m(), state.k()).unwrap();
    for node in state.nodes() {
        writeln!(out, "{} {}", node.id(), node.degree_cap()).unwrap();
    }
    let mut links: Vec<_> = state.links().collect();
    links.sort();
    for link in links {
        writeln!(out, "{} {} {}", link.color, link.parent, link.child).unwrap();
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> LoadError {
    LoadError::Parse { line, message: message.into() }
}

fn fields(line_no: usize, text: &str) -> Result<Vec<u32>, LoadError> {
    text.split_whitespace()
        .map(|f| f.parse::<u32>().map_err(|_| parse_err(line_no, format!("`{f}` is not a non-negative integer"))))
        .collect()
}

pub fn parse_state(text: &str) -> Result<GraphState, LoadError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines.next().ok_or_else(|| parse_err(1, "missing `N M K` header"))?;
    let header = fields(header_line, header)?;
    let [n, m, k] = header[..] else {
        return Err(parse_err(header_line, "header must be `N M K`"));
    };
    if n == 0 {
        return Err(parse_err(header_line, "N must be positive"));
    }

    let mut caps = vec![None; n as usize];
    let mut last_line = header_line;
    for _ in 0..n {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| parse_err(last_line + 1, format!("truncated: expected {n} node lines")))?;
        last_line = line_no;
        let vals = fields(line_no, line)?;
        let [id, cap] = vals[..] else {
            return Err(parse_err(line_no, "expected node line `id cap`"));
        };
        if id == 0 || id > n {
            return Err(parse_err(line_no, format!("node id {id} outside 1..={n}")));
        }
        if caps[id as usize - 1].replace(cap).is_some() {
            return Err(parse_err(line_no, format!("node {id} listed twice")));
        }
    }
    let caps: Vec<u32> = caps.into_iter().map(|c| c.expect("all ids listed")).collect();
    let mut state =
        GraphState::new(m, k, caps).map_err(|e| parse_err(header_line, e.to_string()))?;

    let mut violations = Vec::new();
    for (line_no, line) in lines {
        let vals = fields(line_no, line)?;
        let [color, parent, child] = vals[..] else {
            return Err(parse_err(line_no, "expected link line `color parent child`"));
        };
        if color == 0 || color > m {
            return Err(parse_err(line_no, format!("color {color} outside 1..={m}")));
        }
        for id in [parent, child] {
            if id == 0 || id > n {
                return Err(parse_err(line_no, format!("node id {id} outside 1..={n}")));
            }
        }
        let (color, parent, child) = (Color::new(color), NodeId::new(parent), NodeId::new(child));
        match state.insert_link(parent, child, color) {
            Ok(()) => {}
            Err(LinkError::ParentOccupied { child, color }) => violations.push(Violation {
                node: child,
                color: Some(color),
                kind: ViolationKind::DuplicateIncoming,
            }),
            Err(LinkError::SelfLoop { node, color }) => violations.push(Violation {
                node,
                color: Some(color),
                kind: ViolationKind::SelfLoop,
            }),
            Err(e) => return Err(parse_err(line_no, e.to_string())),
        }
    }
    if !violations.is_empty() {
        return Err(LoadError::Structure(InvariantReport { violations }));
    }
    state.sync_buffered_depths();
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "4 2 2\n1 1\n2 1\n3 2\n4 2\n1 1 3\n1 3 4\n2 2 4\n2 4 3\n";

    #[test]
    fn round_trip() {
        let state = parse_state(SMALL).unwrap();
        assert_eq!(state.edge_count(), 4);
        assert_eq!(write_state(&state), SMALL);
        assert!(state.check_assumption1().is_ok());
    }

    #[test]
    fn truncated_node_section() {
        let err = parse_state("4 1 1\n1 2\n2 2\n").unwrap_err();
        assert!(matches!(err, LoadError::Parse { line: 4, .. }), "{err:?}");
    }

    #[test]
    fn duplicate_incoming_color_names_node() {
        let err = parse_state("3 1 1\n1 2\n2 2\n3 2\n1 1 3\n1 2 3\n").unwrap_err();
        let LoadError::Structure(report) = err else { panic!("expected structure error") };
        assert_eq!(report.violations[0].node, NodeId::new(3));
        assert_eq!(report.violations[0].color, Some(Color::new(1)));
        assert_eq!(report.violations[0].kind, ViolationKind::DuplicateIncoming);
    }

    #[test]
    fn garbage_is_a_parse_error() {
        assert!(matches!(parse_state("3 x 1\n"), Err(LoadError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_state("2 1 1\n1 2\n2 2\n1 1 7\n"),
            Err(LoadError::Parse { line: 4, .. })
        ));
        assert!(matches!(parse_state(""), Err(LoadError::Parse { .. })));
    }
}
