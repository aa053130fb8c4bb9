//! Immutable undirected simple graphs with 1-based contiguous node ids,
//! a seeded random generator, edge-list text serialization and the
//! connected-components oracle used throughout the test suites.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::rng::DetRng;
use crate::NodeId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("node id {0} out of range 1..={1}")]
    IdOutOfRange(NodeId, u32),
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {{{0}, {1}}}")]
    DuplicateEdge(NodeId, NodeId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EdgeListParseError {
    #[error("line {line}: expected header \"n m\"")]
    BadHeader { line: usize },
    #[error("line {line}: malformed edge line")]
    BadLine { line: usize },
    #[error("line {line}: node id out of range")]
    OutOfRange { line: usize },
    #[error("line {line}: self-loop")]
    SelfLoop { line: usize },
    #[error("line {line}: endpoints not in increasing order")]
    NotIncreasing { line: usize },
    #[error("line {line}: duplicate edge")]
    DuplicateEdge { line: usize },
    #[error("expected {expected} edges, found {found}")]
    EdgeCountMismatch { expected: usize, found: usize },
    #[error("node count too large")]
    TooLarge,
}

/// Immutable undirected simple graph. Nodes are exactly `1..=n`; adjacency
/// lists are sorted ascending and symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: u32,
    m: usize,
    adj: Vec<Vec<NodeId>>, // index 0 unused
}

impl Graph {
    /// Builds a graph from undirected edges, validating simplicity.
    pub fn from_edges(n: u32, edges: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n as usize + 1];
        let mut seen: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        for &(u, v) in edges {
            if u == 0 || u > n {
                return Err(GraphError::IdOutOfRange(u, n));
            }
            if v == 0 || v > n {
                return Err(GraphError::IdOutOfRange(v, n));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(GraphError::DuplicateEdge(key.0, key.1));
            }
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
        }
        Ok(Graph {
            n,
            m: seen.len(),
            adj,
        })
    }

    pub fn empty(n: u32) -> Self {
        Graph {
            n,
            m: 0,
            adj: vec![Vec::new(); n as usize + 1],
        }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.m
    }

    pub fn degree(&self, u: NodeId) -> u32 {
        self.adj[u as usize].len() as u32
    }

    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.adj[u as usize]
    }

    pub fn max_degree(&self) -> u32 {
        (1..=self.n).map(|u| self.degree(u)).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adj[u as usize].binary_search(&v).is_ok()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        1..=self.n
    }

    /// Edges as `(u, v)` with `u < v`, ascending.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::with_capacity(self.m);
        for u in 1..=self.n {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Erdős–Rényi G(n, p), deterministic for a fixed `(n, p, seed)`.
    pub fn generate(n: u32, edge_prob: f64, seed: u64) -> Self {
        Self::generate_capped(n, edge_prob, u32::MAX, seed)
    }

    /// G(n, p) with a per-node degree cap: an edge draw is kept only while
    /// both endpoints are below `max_degree`. Deterministic single pass over
    /// pairs in lexicographic order.
    pub fn generate_capped(n: u32, edge_prob: f64, max_degree: u32, seed: u64) -> Self {
        assert!(
            (0.0..=1.0).contains(&edge_prob),
            "edge_prob must be in [0, 1]"
        );
        assert!(n >= 1);
        let mut rng = DetRng::for_label(seed, "graph-gen");
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n as usize + 1];
        let mut m = 0usize;
        for u in 1..n {
            for v in (u + 1)..=n {
                let draw = rng.next_f64();
                if draw < edge_prob
                    && adj[u as usize].len() < max_degree as usize
                    && adj[v as usize].len() < max_degree as usize
                {
                    adj[u as usize].push(v);
                    adj[v as usize].push(u);
                    m += 1;
                }
            }
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
        }
        Graph { n, m, adj }
    }

    /// Parses the edge-list text format: header `n m`, then `m` lines `u v`
    /// with `1 <= u < v <= n`. Errors name the offending line (1-based).
    pub fn read_edge_list(text: &str) -> Result<Self, EdgeListParseError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(EdgeListParseError::BadHeader { line: 1 })?;
        let mut parts = header.split_ascii_whitespace();
        let n: u32 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(EdgeListParseError::BadHeader { line: 1 })?;
        let m: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(EdgeListParseError::BadHeader { line: 1 })?;
        if parts.next().is_some() {
            return Err(EdgeListParseError::BadHeader { line: 1 });
        }
        // cap up-front allocation: a two-word header must not reserve
        // gigabytes of adjacency
        if n > 1 << 20 {
            return Err(EdgeListParseError::TooLarge);
        }
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n as usize + 1];
        let mut seen: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        for (idx, raw) in lines {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let mut it = raw.split_ascii_whitespace();
            let u: NodeId = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(EdgeListParseError::BadLine { line })?;
            let v: NodeId = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(EdgeListParseError::BadLine { line })?;
            if it.next().is_some() {
                return Err(EdgeListParseError::BadLine { line });
            }
            if u == 0 || v == 0 || u > n || v > n {
                return Err(EdgeListParseError::OutOfRange { line });
            }
            if u == v {
                return Err(EdgeListParseError::SelfLoop { line });
            }
            if u > v {
                return Err(EdgeListParseError::NotIncreasing { line });
            }
            if !seen.insert((u, v)) {
                return Err(EdgeListParseError::DuplicateEdge { line });
            }
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        if seen.len() != m {
            return Err(EdgeListParseError::EdgeCountMismatch {
                expected: m,
                found: seen.len(),
            });
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
        }
        Ok(Graph { n, m, adj })
    }

    /// Canonical edge-list text: edges sorted, LF line endings.
    pub fn write_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n, self.m);
        for (u, v) in self.edges() {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }

    /// Connected components of the subgraph induced by `subset`, each a
    /// maximal connected node set, ordered by smallest member.
    pub fn components(&self, subset: &BTreeSet<NodeId>) -> Vec<BTreeSet<NodeId>> {
        let mut unvisited: BTreeSet<NodeId> = subset.clone();
        let mut out = Vec::new();
        while let Some(&start) = unvisited.iter().next() {
            unvisited.remove(&start);
            let mut comp = BTreeSet::new();
            comp.insert(start);
            let mut queue = vec![start];
            while let Some(u) = queue.pop() {
                for &v in self.neighbors(u) {
                    if unvisited.remove(&v) {
                        comp.insert(v);
                        queue.push(v);
                    }
                }
            }
            out.push(comp);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_probability_gives_empty_graph() {
        let g = Graph::generate(4, 0.0, 7);
        assert_eq!(g.n(), 4);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn unit_probability_gives_complete_graph() {
        let g = Graph::generate(3, 1.0, 1);
        assert_eq!(g.edge_count(), 3);
        assert!(g.has_edge(1, 2) && g.has_edge(2, 3) && g.has_edge(1, 3));
    }

    #[test]
    fn seeded_generation_pins_edge_count() {
        let g = Graph::generate(256, 0.25, 42);
        // Frozen regression value for this exact (n, p, seed); expectation is
        // p * n(n-1)/2 = 8160, sigma = sqrt(8160 * 0.75) ≈ 78.2.
        let expected = 8160.0_f64;
        let sigma = (expected * 0.75).sqrt();
        assert!((g.edge_count() as f64 - expected).abs() <= 4.0 * sigma);
        assert_eq!(g.edge_count(), 8152);
    }

    #[test]
    fn degree_cap_is_respected() {
        let g = Graph::generate_capped(64, 0.5, 5, 3);
        assert!(g.max_degree() <= 5);
        assert!(g.edge_count() > 0);
    }

    #[test]
    fn edge_list_parses_path() {
        let g = Graph::read_edge_list("3 2\n1 2\n2 3\n").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edges(), vec![(1, 2), (2, 3)]);
    }

    #[test]
    fn edge_list_rejects_self_loop() {
        let err = Graph::read_edge_list("2 1\n1 1\n").unwrap_err();
        assert_eq!(err, EdgeListParseError::SelfLoop { line: 2 });
    }

    #[test]
    fn edge_list_rejects_junk() {
        assert_eq!(
            Graph::read_edge_list("2 1\n1 2 3\n").unwrap_err(),
            EdgeListParseError::BadLine { line: 2 }
        );
        assert_eq!(
            Graph::read_edge_list("2 1\n2 1\n").unwrap_err(),
            EdgeListParseError::NotIncreasing { line: 2 }
        );
        assert_eq!(
            Graph::read_edge_list("2 1\n1 9\n").unwrap_err(),
            EdgeListParseError::OutOfRange { line: 2 }
        );
        assert_eq!(
            Graph::read_edge_list("3 2\n1 2\n1 2\n").unwrap_err(),
            EdgeListParseError::DuplicateEdge { line: 3 }
        );
    }

    #[test]
    fn components_examples() {
        let path = Graph::from_edges(3, &[(1, 2), (2, 3)]).unwrap();
        let comps = path.components(&BTreeSet::from([1, 3]));
        assert_eq!(comps, vec![BTreeSet::from([1]), BTreeSet::from([3])]);

        let k3 = Graph::generate(3, 1.0, 0);
        let comps = k3.components(&BTreeSet::from([1, 2, 3]));
        assert_eq!(comps, vec![BTreeSet::from([1, 2, 3])]);
    }

    /// Independent union-find pass, kept separate from the BFS implementation
    /// on purpose: it is the oracle the BFS answer is checked against.
    fn union_find_components(g: &Graph, subset: &BTreeSet<NodeId>) -> Vec<BTreeSet<NodeId>> {
        let mut parent: std::collections::BTreeMap<NodeId, NodeId> =
            subset.iter().map(|&u| (u, u)).collect();
        fn find(parent: &mut std::collections::BTreeMap<NodeId, NodeId>, u: NodeId) -> NodeId {
            let mut root = u;
            while parent[&root] != root {
                root = parent[&root];
            }
            let mut cur = u;
            while parent[&cur] != root {
                let next = parent[&cur];
                parent.insert(cur, root);
                cur = next;
            }
            root
        }
        for &u in subset {
            for &v in g.neighbors(u) {
                if subset.contains(&v) {
                    let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
                    if ru != rv {
                        parent.insert(ru.max(rv), ru.min(rv));
                    }
                }
            }
        }
        let mut groups: std::collections::BTreeMap<NodeId, BTreeSet<NodeId>> = Default::default();
        for &u in subset {
            let r = find(&mut parent, u);
            groups.entry(r).or_default().insert(u);
        }
        groups.into_values().collect()
    }

    #[test]
    fn components_match_union_find_oracle() {
        for seed in 0..20 {
            let g = Graph::generate(64, 0.05, seed);
            let mut rng = DetRng::for_label(seed, "subset");
            let subset: BTreeSet<NodeId> = (1..=64).filter(|_| rng.next_f64() < 0.6).collect();
            let got = g.components(&subset);
            let want = union_find_components(&g, &subset);
            assert_eq!(got, want, "seed {seed}");
        }
    }

    #[test]
    fn components_partition_the_subset() {
        let g = Graph::generate(128, 0.03, 5);
        let subset: BTreeSet<NodeId> = (1..=128).filter(|u| u % 3 != 0).collect();
        let comps = g.components(&subset);
        let mut union = BTreeSet::new();
        for c in &comps {
            assert!(!c.is_empty());
            for &u in c {
                assert!(union.insert(u), "node {u} in two components");
            }
        }
        assert_eq!(union, subset);
    }

    proptest! {
        #[test]
        fn generated_graphs_satisfy_invariants(seed in 0u64..500, n in 1u32..40, p in 0.0f64..1.0) {
            let g = Graph::generate(n, p, seed);
            let mut m = 0usize;
            for u in 1..=n {
                let nbrs = g.neighbors(u);
                prop_assert!(nbrs.windows(2).all(|w| w[0] < w[1]), "sorted, no dups");
                for &v in nbrs {
                    prop_assert!(v >= 1 && v <= n && v != u);
                    prop_assert!(g.neighbors(v).contains(&u), "symmetry");
                }
                prop_assert_eq!(g.degree(u) as usize, nbrs.len());
                m += nbrs.len();
            }
            prop_assert_eq!(m, 2 * g.edge_count());
        }

        #[test]
        fn edge_list_roundtrip(seed in 0u64..200, n in 1u32..30, p in 0.0f64..0.7) {
            let g = Graph::generate(n, p, seed);
            let text = g.write_edge_list();
            let back = Graph::read_edge_list(&text).unwrap();
            prop_assert_eq!(&back, &g);
            // write(read(s)) is canonical
            prop_assert_eq!(back.write_edge_list(), text);
        }
    }
}
