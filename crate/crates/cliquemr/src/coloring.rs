//! Partial and total node colorings, the properness checker every run goes
//! through before any report is emitted, and the text dump format.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::Graph;
use crate::{NodeId, Word};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ColoringError {
    #[error("edge {{{0}, {1}}} has both endpoints colored {2}")]
    Conflict(NodeId, NodeId, Word),
    #[error("node {0} is uncolored")]
    Uncolored(NodeId),
    #[error("node {0} has color 0")]
    ZeroColor(NodeId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ColoringParseError {
    #[error("line {line}: expected \"node color\"")]
    BadLine { line: usize },
    #[error("line {line}: duplicate node")]
    DuplicateNode { line: usize },
}

/// Map node -> color (positive). Absent nodes are uncolored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Coloring {
    assignment: BTreeMap<NodeId, Word>,
    palette_count: Word,
}

impl Coloring {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, node: NodeId, color: Word) {
        assert!(color >= 1, "colors are positive");
        self.assignment.insert(node, color);
        self.palette_count = self.palette_count.max(color);
    }

    pub fn get(&self, node: NodeId) -> Option<Word> {
        self.assignment.get(&node).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, Word)> + '_ {
        self.assignment.iter().map(|(&u, &c)| (u, c))
    }

    /// Largest color the producer committed to; at least the max assigned.
    pub fn palette_count(&self) -> Word {
        self.palette_count
    }

    /// Number of distinct colors actually used.
    pub fn colors_used(&self) -> usize {
        let distinct: std::collections::BTreeSet<Word> =
            self.assignment.values().copied().collect();
        distinct.len()
    }

    pub fn max_color(&self) -> Word {
        self.assignment.values().copied().max().unwrap_or(0)
    }

    /// Proper on its domain: the assigned endpoints of every edge differ.
    pub fn check_proper(&self, g: &Graph) -> Result<(), ColoringError> {
        for (u, v) in g.edges() {
            if let (Some(cu), Some(cv)) = (self.get(u), self.get(v)) {
                if cu == cv {
                    return Err(ColoringError::Conflict(u, v, cu));
                }
            }
        }
        Ok(())
    }

    /// Proper and total: every node of `g` carries a positive color.
    pub fn check_total_proper(&self, g: &Graph) -> Result<(), ColoringError> {
        for u in g.nodes() {
            match self.get(u) {
                None => return Err(ColoringError::Uncolored(u)),
                Some(0) => return Err(ColoringError::ZeroColor(u)),
                Some(_) => {}
            }
        }
        self.check_proper(g)
    }

    /// Text dump, one `node color` line per assigned node, ascending.
    pub fn write_dump(&self) -> String {
        let mut out = String::new();
        for (u, c) in self.iter() {
            let _ = writeln!(out, "{u} {c}");
        }
        out
    }

    pub fn read_dump(text: &str) -> Result<Self, ColoringParseError> {
        let mut coloring = Coloring::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let mut it = raw.split_ascii_whitespace();
            let u: NodeId = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(ColoringParseError::BadLine { line })?;
            let c: Word = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(ColoringParseError::BadLine { line })?;
            if it.next().is_some() || u == 0 || c == 0 {
                return Err(ColoringParseError::BadLine { line });
            }
            if coloring.get(u).is_some() {
                return Err(ColoringParseError::DuplicateNode { line });
            }
            coloring.set(u, c);
        }
        Ok(coloring)
    }
}
