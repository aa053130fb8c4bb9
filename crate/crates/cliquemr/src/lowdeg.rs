//! (Δ+1)-coloring for low-degree graphs.
//!
//! Stage 1 is the classic randomized palette procedure: every uncolored node
//! tentatively draws a color from its palette and keeps it unless a neighbor
//! drew the same color, in which case both try again next iteration. Instead
//! of running the iterations over the network, every node gathers the
//! labeled ball of radius `t` around itself (doubling the radius per routed
//! super-step) and replays all `t` iterations locally from the members'
//! pre-committed random bit strings — the replay of the center is exact
//! because corrupt state at the ball boundary needs one hop per iteration to
//! travel inward.
//!
//! Stage 2 gathers the leftover uncolored components: a cluster merge on the
//! complete two-weight graph (weight 1 on uncolored-to-uncolored edges of
//! the input graph, weight n elsewhere) grows the minimum cluster size
//! quadratically per phase, after which every uncolored component lies
//! inside a single cluster; the components are shipped to per-component
//! recipients and colored greedily from the surviving palettes.

use std::collections::{BTreeMap, BTreeSet};

use crate::cc::{segment_base, Action, CcProgram, ProgramFault, StepCtx, ADJ_SEGMENT};
use crate::coloring::Coloring;
use crate::graph::Graph;
use crate::rng::DetRng;
use crate::{NodeId, Word};

/// Round at which nodes commit their random bit strings; the table used by
/// local replay and by the global oracle derives from the same stream.
pub const RS_GEN_ROUND: u32 = 2;

fn ceil_log2(x: u32) -> u32 {
    if x <= 1 {
        0
    } else {
        32 - (x - 1).leading_zeros()
    }
}

/// Bits consumed per tentative draw: enough to index a palette of size
/// `delta + 1`, at least one.
pub fn bits_per_draw(delta: u32) -> u32 {
    ceil_log2(delta + 1).max(1)
}

/// Words needed to hold `t` draws worth of bits.
pub fn rs_words(delta: u32, t: u32) -> usize {
    ((t as u64 * bits_per_draw(delta) as u64).div_ceil(64)).max(1) as usize
}

/// Pre-committed random bit strings, one per node.
#[derive(Debug, Clone)]
pub struct RsTable {
    pub delta: u32,
    pub t: u32,
    pub words_per_node: usize,
    pub rs: BTreeMap<NodeId, Vec<Word>>,
}

impl RsTable {
    /// The table every node of an n-node run seeded with `seed` generates at
    /// [`RS_GEN_ROUND`].
    pub fn generate(n: u32, delta: u32, t: u32, seed: u64) -> Self {
        let words_per_node = rs_words(delta, t);
        let mut rs = BTreeMap::new();
        for u in 1..=n {
            rs.insert(u, generate_rs_words(seed, u, words_per_node));
        }
        RsTable {
            delta,
            t,
            words_per_node,
            rs,
        }
    }

    /// Raw draw value for `node` at `iteration` (0-based): bits
    /// `[iteration * b, (iteration + 1) * b)`.
    pub fn draw(&self, node: NodeId, iteration: u32) -> Option<Word> {
        let words = self.rs.get(&node)?;
        extract_draw(words, bits_per_draw(self.delta), iteration)
    }
}

pub fn generate_rs_words(seed: u64, node: NodeId, words: usize) -> Vec<Word> {
    let mut rng = DetRng::for_node_round(seed, node, RS_GEN_ROUND);
    (0..words).map(|_| rng.next_u64()).collect()
}

/// Bit-slice extraction; `None` if the string is too short.
pub fn extract_draw(words: &[Word], bits: u32, iteration: u32) -> Option<Word> {
    let lo = iteration as u64 * bits as u64;
    let hi = lo + bits as u64;
    if hi > words.len() as u64 * 64 {
        return None;
    }
    let mut value: Word = 0;
    for (k, bit) in (lo..hi).enumerate() {
        let w = words[(bit / 64) as usize];
        if (w >> (bit % 64)) & 1 == 1 {
            value |= 1 << k;
        }
    }
    Some(value)
}

/// Palette/color state over an explicit member set (the whole graph for the
/// global run, a ball for local replay).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaletteState {
    pub delta: u32,
    /// member -> permanent color (absent while uncolored)
    pub colors: BTreeMap<NodeId, Word>,
    /// member -> remaining palette
    pub palettes: BTreeMap<NodeId, BTreeSet<Word>>,
}

impl PaletteState {
    pub fn fresh(members: impl IntoIterator<Item = NodeId>, delta: u32) -> Self {
        let full: BTreeSet<Word> = (1..=delta as Word + 1).collect();
        PaletteState {
            delta,
            colors: BTreeMap::new(),
            palettes: members.into_iter().map(|u| (u, full.clone())).collect(),
        }
    }

    pub fn uncolored(&self) -> BTreeSet<NodeId> {
        self.palettes
            .keys()
            .filter(|u| !self.colors.contains_key(u))
            .copied()
            .collect()
    }

    /// State invariants: a colored node's color is absent from every
    /// uncolored neighbor's palette, and an uncolored node retains at least
    /// `delta + 1 - (colored neighbors)` colors.
    pub fn check_invariants(
        &self,
        adjacency: &BTreeMap<NodeId, Vec<NodeId>>,
    ) -> Result<(), String> {
        for (&u, nbrs) in adjacency {
            if let Some(&cu) = self.colors.get(&u) {
                for v in nbrs {
                    if !self.colors.contains_key(v) && self.palettes[v].contains(&cu) {
                        return Err(format!("color {cu} of {u} still in palette of {v}"));
                    }
                }
            } else {
                let colored = nbrs.iter().filter(|v| self.colors.contains_key(v)).count();
                let floor = (self.delta as usize + 1).saturating_sub(colored);
                if self.palettes[&u].len() < floor {
                    return Err(format!(
                        "palette of {u} has {} colors, floor {floor}",
                        self.palettes[&u].len()
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One randomized coloring iteration over `adjacency`, with tentative draws
/// supplied per node as raw words (reduced modulo the palette size; using
/// the same rule everywhere is what makes local replay exact).
pub fn rand_col_step(
    state: &mut PaletteState,
    adjacency: &BTreeMap<NodeId, Vec<NodeId>>,
    draw: &mut dyn FnMut(NodeId) -> Word,
) {
    let mut tentative: BTreeMap<NodeId, Word> = BTreeMap::new();
    for (&u, palette) in &state.palettes {
        if state.colors.contains_key(&u) || palette.is_empty() {
            continue;
        }
        let idx = (draw(u) % palette.len() as Word) as usize;
        let c = *palette.iter().nth(idx).expect("index in range");
        tentative.insert(u, c);
    }
    let empty = Vec::new();
    let mut kept: Vec<(NodeId, Word)> = Vec::new();
    for (&u, &c) in &tentative {
        let nbrs = adjacency.get(&u).unwrap_or(&empty);
        if !nbrs.iter().any(|v| tentative.get(v) == Some(&c)) {
            kept.push((u, c));
        }
    }
    for (u, c) in kept {
        state.colors.insert(u, c);
        for v in adjacency.get(&u).unwrap_or(&empty) {
            if let Some(p) = state.palettes.get_mut(v) {
                p.remove(&c);
            }
        }
    }
}

/// `t` global iterations over the whole graph using the RS table; the
/// reference execution that local replay must match.
pub fn run_global(g: &Graph, rs: &RsTable, t: u32) -> PaletteState {
    let adjacency: BTreeMap<NodeId, Vec<NodeId>> =
        g.nodes().map(|u| (u, g.neighbors(u).to_vec())).collect();
    let mut state = PaletteState::fresh(g.nodes(), rs.delta);
    for i in 0..t {
        let mut draw = |u: NodeId| rs.draw(u, i).expect("rs long enough");
        rand_col_step(&mut state, &adjacency, &mut draw);
    }
    state
}

/// Labeled ball: members with their bit strings plus every edge incident to
/// a member strictly inside the boundary (exactly what a depth-limited
/// search from the center discovers, and all that replay needs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledBall {
    pub center: NodeId,
    pub radius: u32,
    pub members: BTreeMap<NodeId, Vec<Word>>,
    pub edges: BTreeSet<(NodeId, NodeId)>,
}

impl LabeledBall {
    /// Depth of every member from the center over the ball's edges.
    pub fn depths(&self) -> BTreeMap<NodeId, u32> {
        let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for &(a, b) in &self.edges {
            adjacency.entry(a).or_default().push(b);
            adjacency.entry(b).or_default().push(a);
        }
        let mut depth = BTreeMap::from([(self.center, 0u32)]);
        let mut frontier = vec![self.center];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for u in frontier {
                let d = depth[&u];
                for &v in adjacency.get(&u).into_iter().flatten() {
                    depth.entry(v).or_insert_with(|| {
                        next.push(v);
                        d + 1
                    });
                }
            }
            frontier = next;
        }
        depth
    }
}

/// Direct breadth-first oracle: members within `radius` hops of `center`,
/// edges with an endpoint within `radius - 1`.
pub fn bfs_ball(g: &Graph, center: NodeId, radius: u32, rs: &RsTable) -> LabeledBall {
    let mut depth: BTreeMap<NodeId, u32> = BTreeMap::from([(center, 0)]);
    let mut frontier = vec![center];
    for d in 1..=radius {
        let mut next = Vec::new();
        for u in std::mem::take(&mut frontier) {
            for &v in g.neighbors(u) {
                depth.entry(v).or_insert_with(|| {
                    next.push(v);
                    d
                });
            }
        }
        frontier = next;
    }
    let mut edges = BTreeSet::new();
    for (&u, &du) in &depth {
        if du + 1 > radius {
            continue;
        }
        for &v in g.neighbors(u) {
            if depth.contains_key(&v) {
                edges.insert((u.min(v), u.max(v)));
            }
        }
    }
    LabeledBall {
        center,
        radius,
        members: depth.keys().map(|&u| (u, rs.rs[&u].clone())).collect(),
        edges,
    }
}

/// Hop radius needed to replay `t` iterations exactly: every iteration
/// moves information two hops (the tentative draws, then the keep/palette
/// updates), so both the center's color and its palette after `t`
/// iterations are functions of the radius-`2t` ball and its bit strings.
pub fn replay_radius(t: u32) -> u32 {
    2 * t
}

/// Replays `t` iterations locally from a ball of radius >= `replay_radius(t)`
/// and returns the center's final color (`None` = still uncolored) and
/// palette. The ball boundary may simulate incorrectly, but the corruption
/// travels two hops per iteration and never reaches the center.
pub fn replay_locally(
    ball: &LabeledBall,
    t: u32,
    delta: u32,
) -> Result<(Option<Word>, BTreeSet<Word>), String> {
    if ball.radius < replay_radius(t) {
        return Err(format!(
            "ball radius {} below {}",
            ball.radius,
            replay_radius(t)
        ));
    }
    let bits = bits_per_draw(delta);
    for (u, words) in &ball.members {
        if (words.len() as u64) * 64 < t as u64 * bits as u64 {
            return Err(format!("node {u}: bit string too short for {t} draws"));
        }
    }
    let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> =
        ball.members.keys().map(|&u| (u, Vec::new())).collect();
    for &(a, b) in &ball.edges {
        adjacency
            .get_mut(&a)
            .expect("edge endpoint is member")
            .push(b);
        adjacency
            .get_mut(&b)
            .expect("edge endpoint is member")
            .push(a);
    }
    let mut state = PaletteState::fresh(ball.members.keys().copied(), delta);
    for i in 0..t {
        let mut draw =
            |u: NodeId| extract_draw(&ball.members[&u], bits, i).expect("length checked");
        rand_col_step(&mut state, &adjacency, &mut draw);
    }
    let color = state.colors.get(&ball.center).copied();
    let palette = state.palettes[&ball.center].clone();
    Ok((color, palette))
}

/// Cluster partition produced by the phase-squaring merge.
#[derive(Debug, Clone)]
pub struct ClusterPartition {
    pub phases_run: u32,
    pub clusters: Vec<BTreeSet<NodeId>>,
    /// Spanning tree per cluster: `(u, v, weight)`.
    pub trees: Vec<Vec<(NodeId, NodeId, u64)>>,
    /// Minimum cluster size after each phase (index 0 = before phase 1).
    pub min_size_history: Vec<usize>,
}

impl ClusterPartition {
    pub fn cluster_of(&self, u: NodeId) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&u))
    }

    /// Splits every cluster along its weight-1 (unit) edges: the connected
    /// pieces of `unit_edges` restricted to each cluster, covering exactly
    /// the nodes of `in_unit_graph`. Under containment these are the
    /// uncolored components, ordered by smallest member.
    pub fn split_unit_components(
        &self,
        unit_edges: &BTreeSet<(NodeId, NodeId)>,
        in_unit_graph: &BTreeSet<NodeId>,
    ) -> Vec<BTreeSet<NodeId>> {
        let mut out = Vec::new();
        for cluster in &self.clusters {
            let mut unvisited: BTreeSet<NodeId> =
                cluster.intersection(in_unit_graph).copied().collect();
            let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
            for &(a, b) in unit_edges {
                if cluster.contains(&a) && cluster.contains(&b) {
                    adjacency.entry(a).or_default().push(b);
                    adjacency.entry(b).or_default().push(a);
                }
            }
            while let Some(&start) = unvisited.iter().next() {
                unvisited.remove(&start);
                let mut comp = BTreeSet::from([start]);
                let mut stack = vec![start];
                while let Some(u) = stack.pop() {
                    for &v in adjacency.get(&u).into_iter().flatten() {
                        if unvisited.remove(&v) {
                            comp.insert(v);
                            stack.push(v);
                        }
                    }
                }
                out.push(comp);
            }
        }
        out.sort_by_key(|c| *c.iter().next().expect("components are nonempty"));
        out
    }
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Phase-squaring cluster merge on the complete two-weight graph over nodes
/// `1..=n`: weight 1 on `unit_edges`, weight n elsewhere. Each phase, every
/// cluster selects up to (its size) minimum-weight outgoing edges to
/// distinct clusters — ties broken by (weight, smaller endpoint, larger
/// endpoint) — and the selected edges are merged cheapest first, so a
/// weight-n edge never joins two clusters while a selected weight-1 edge
/// could. The minimum cluster size at least squares every phase until a
/// single cluster remains.
pub fn cluster_merge(
    n: u32,
    unit_edges: &BTreeSet<(NodeId, NodeId)>,
    phases: u32,
) -> ClusterPartition {
    let heavy: u64 = n as u64;
    let mut dsu = Dsu::new(n as usize + 1);
    let mut tree_edges: Vec<(NodeId, NodeId, u64)> = Vec::new();
    let mut min_size_history = vec![1usize];
    let mut phases_run = 0;

    // unit adjacency for outgoing-edge scans
    let mut unit_adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &(a, b) in unit_edges {
        unit_adj.entry(a).or_default().push(b);
        unit_adj.entry(b).or_default().push(a);
    }

    for _ in 0..phases {
        let mut members: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
        for u in 1..=n {
            members.entry(dsu.find(u as usize)).or_default().push(u);
        }
        if members.len() <= 1 {
            min_size_history.push(n as usize);
            phases_run += 1;
            continue;
        }

        // Per cluster: best outgoing edge to every weight-1-reachable other
        // cluster, then canonical weight-n edges to the rest, up to quota.
        let mut selected: Vec<(u64, NodeId, NodeId)> = Vec::new();
        for (&root, nodes) in &members {
            let quota = nodes.len();
            let mut best_unit: BTreeMap<usize, (NodeId, NodeId)> = BTreeMap::new();
            for &u in nodes {
                for &v in unit_adj.get(&u).into_iter().flatten() {
                    let other = dsu.find(v as usize);
                    if other == root {
                        continue;
                    }
                    let cand = (u.min(v), u.max(v));
                    let slot = best_unit.entry(other).or_insert(cand);
                    if cand < *slot {
                        *slot = cand;
                    }
                }
            }
            let mut candidates: Vec<(u64, NodeId, NodeId)> =
                best_unit.values().map(|&(a, b)| (1u64, a, b)).collect();
            candidates.sort_unstable();
            if candidates.len() < quota {
                // canonical weight-n edge to a cluster joins the two minima
                let my_min = nodes[0];
                let mut heavy_cands: Vec<(u64, NodeId, NodeId)> = Vec::new();
                for (&other_root, other_nodes) in &members {
                    if other_root == root || best_unit.contains_key(&other_root) {
                        continue;
                    }
                    let o_min = other_nodes[0];
                    heavy_cands.push((heavy, my_min.min(o_min), my_min.max(o_min)));
                }
                heavy_cands.sort_unstable();
                candidates.extend(heavy_cands);
            }
            selected.extend(candidates.into_iter().take(quota));
        }

        selected.sort_unstable();
        selected.dedup();
        for (w, a, b) in selected {
            if dsu.union(a as usize, b as usize) {
                tree_edges.push((a, b, w));
            }
        }

        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        for u in 1..=n {
            *sizes.entry(dsu.find(u as usize)).or_insert(0) += 1;
        }
        min_size_history.push(sizes.values().copied().min().unwrap_or(0));
        phases_run += 1;
    }

    let mut clusters_map: BTreeMap<usize, BTreeSet<NodeId>> = BTreeMap::new();
    for u in 1..=n {
        clusters_map
            .entry(dsu.find(u as usize))
            .or_default()
            .insert(u);
    }
    let clusters: Vec<BTreeSet<NodeId>> = clusters_map.into_values().collect();
    let trees: Vec<Vec<(NodeId, NodeId, u64)>> = clusters
        .iter()
        .map(|c| {
            let mut t: Vec<(NodeId, NodeId, u64)> = tree_edges
                .iter()
                .filter(|(a, _, _)| c.contains(a))
                .copied()
                .collect();
            t.sort_unstable();
            t
        })
        .collect();
    ClusterPartition {
        phases_run,
        clusters,
        trees,
        min_size_history,
    }
}

/// Phases for the minimum cluster size to pass `target` under squaring
/// growth, plus one settling phase.
pub fn default_phases(target: u64) -> u32 {
    let mut size = 1u64;
    let mut phases = 0;
    while size < target && phases < 32 {
        size = (size * size).max(size + 1);
        phases += 1;
    }
    phases + 1
}

/// Greedy per-component coloring from surviving palettes, ascending id.
/// Always succeeds: an uncolored node's palette is larger than its count of
/// uncolored neighbors.
pub fn color_component(
    members: &BTreeSet<NodeId>,
    edges: &BTreeSet<(NodeId, NodeId)>,
    palettes: &BTreeMap<NodeId, BTreeSet<Word>>,
) -> Result<BTreeMap<NodeId, Word>, String> {
    let mut colors: BTreeMap<NodeId, Word> = BTreeMap::new();
    for &u in members {
        let taken: BTreeSet<Word> = edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == u {
                    colors.get(&b).copied()
                } else if b == u {
                    colors.get(&a).copied()
                } else {
                    None
                }
            })
            .collect();
        let palette = palettes
            .get(&u)
            .ok_or_else(|| format!("no palette for {u}"))?;
        let c = palette
            .iter()
            .find(|c| !taken.contains(c))
            .ok_or_else(|| format!("palette of {u} exhausted"))?;
        colors.insert(u, *c);
    }
    Ok(colors)
}

// Scalar addresses.
const L_DELTA: u64 = 1; // +1 shifted
const L_MY_COLOR: u64 = 2; // stage-1 result, stored color+1 (1 = uncolored)
const L_FINAL_COLOR: u64 = 3; // assigned in stage 2
const L_N_COMP: u64 = 4; // node 1 stats, +1 shifted
const L_MAX_COMP: u64 = 5; // +1 shifted
const L_HIST_LEN: u64 = 6;
const L_HIST_BASE: u64 = 8; // min-size history (node 1), +1 shifted

// Fixed-stride segments.
const SEG_NBR_COLOR: u32 = 2; // stage-1 color of i-th neighbor, +1 shifted
const SEG_PALETTE: u32 = 3; // own palette bitmask after stage 1
const SEG_RS: u32 = 4; // own bit string, +1 wrapped
const SEG_UNCOLORED: u32 = 5; // node 1: uncolored node list

// Routed message tags.
const TAG_BMEM: Word = 1; // [tag, id, rs_idx, rs_word]
const TAG_BEDGE: Word = 2; // [tag, x, y]
const TAG_UNODE: Word = 3; // [tag, u]
const TAG_UEDGE: Word = 4; // [tag, u, v]
const TAG_UPAL: Word = 5; // [tag, u, idx, word]
const TAG_CNODE: Word = 6;
const TAG_CEDGE: Word = 7;
const TAG_CPAL: Word = 8;

#[derive(Debug, Clone)]
pub struct LowDegProgram {
    pub n: u32,
    /// Stage-1 iterations.
    pub t_iters: u32,
    /// Cluster-merge phases.
    pub phases: u32,
    /// Fault threshold on uncolored component size.
    pub component_cap: u64,
    pub msg_word_budget: usize,
    pub route_rounds: u32,
    /// Probe mode: halt after ball gathering, outputting the serialized
    /// ball instead of running the coloring stages.
    pub emit_balls: bool,
}

impl LowDegProgram {
    pub fn new(n: u32, config: &crate::cc::CcConfig) -> Self {
        let log2n = crate::highdeg::default_beta(n) as u64;
        let cap = (log2n * log2n * log2n).max(1);
        LowDegProgram {
            n,
            t_iters: default_t_iters(n),
            phases: default_phases(cap.min(n as u64)),
            component_cap: cap,
            msg_word_budget: config.msg_word_budget,
            route_rounds: config.route_rounds,
            emit_balls: false,
        }
    }

    fn fault(&self, ctx: &StepCtx<'_>, message: impl Into<String>) -> ProgramFault {
        ProgramFault {
            node: ctx.node,
            round: ctx.round,
            message: message.into(),
        }
    }

    // Dynamic layout beyond the fixed segments: the ball member table
    // ((1 + rs_words)-stride entries) and the ball edge list after it.
    fn ball_members_base(&self) -> u64 {
        segment_base(self.n, 6)
    }
    fn ball_edges_base(&self, rs_w: u64) -> u64 {
        self.ball_members_base() + 8 + self.n as u64 * (1 + rs_w)
    }

    fn schedule(&self, delta: u32) -> Schedule {
        let rs_w = rs_words(delta, self.t_iters);
        let rs_chunks = (rs_w as u64).div_ceil(self.msg_word_budget as u64) as u32;
        let target = replay_radius(self.t_iters.max(1));
        let doubling_steps = ceil_log2(target);
        let ball_done = 2 + rs_chunks + doubling_steps * self.route_rounds;
        let u_route = ball_done + 1;
        let comp_route = u_route + self.route_rounds;
        let color_round = comp_route + self.route_rounds;
        Schedule {
            rs_w,
            rs_chunks,
            doubling_steps,
            ball_done,
            u_route,
            comp_route,
            color_round,
        }
    }

    fn store_ball(&self, ctx: &mut StepCtx<'_>, ball: &BallData, rs_w: u64) {
        let mbase = self.ball_members_base();
        let prev = ctx.memory.get(mbase);
        for i in 0..prev {
            for k in 0..=rs_w {
                ctx.memory.set(mbase + 1 + i * (1 + rs_w) + k, 0);
            }
        }
        ctx.memory.set(mbase, ball.members.len() as Word);
        for (i, (&id, words)) in ball.members.iter().enumerate() {
            let entry = mbase + 1 + i as u64 * (1 + rs_w);
            ctx.memory.set(entry, id as Word);
            for (k, &w) in words.iter().enumerate() {
                ctx.memory.set(entry + 1 + k as u64, w.wrapping_add(1));
            }
        }
        let ebase = self.ball_edges_base(rs_w);
        ctx.memory.clear_slice(ebase);
        let flat: Vec<Word> = ball
            .edges
            .iter()
            .flat_map(|&(a, b)| [a as Word, b as Word])
            .collect();
        ctx.memory.write_slice(ebase, &flat);
    }

    fn load_ball(&self, ctx: &mut StepCtx<'_>, rs_w: u64) -> BallData {
        let mbase = self.ball_members_base();
        let count = ctx.memory.get(mbase);
        let mut members = BTreeMap::new();
        for i in 0..count {
            let entry = mbase + 1 + i * (1 + rs_w);
            let id = ctx.memory.get(entry) as NodeId;
            let words: Vec<Word> = (0..rs_w)
                .map(|k| ctx.memory.get(entry + 1 + k).wrapping_sub(1))
                .collect();
            members.insert(id, words);
        }
        let flat = ctx.memory.read_slice(self.ball_edges_base(rs_w));
        let edges: BTreeSet<(NodeId, NodeId)> = flat
            .chunks(2)
            .map(|p| (p[0] as NodeId, p[1] as NodeId))
            .collect();
        BallData { members, edges }
    }

    fn clear_ball(&self, ctx: &mut StepCtx<'_>, rs_w: u64) {
        let mbase = self.ball_members_base();
        let count = ctx.memory.get(mbase);
        for i in 0..count {
            for k in 0..=rs_w {
                ctx.memory.set(mbase + 1 + i * (1 + rs_w) + k, 0);
            }
        }
        ctx.memory.set(mbase, 0);
        ctx.memory.clear_slice(self.ball_edges_base(rs_w));
    }

    fn truncate(&self, center: NodeId, ball: &BallData, radius: u32) -> BallData {
        let full = LabeledBall {
            center,
            radius,
            members: ball.members.clone(),
            edges: ball.edges.clone(),
        };
        let depth = full.depths();
        let members: BTreeMap<NodeId, Vec<Word>> = ball
            .members
            .iter()
            .filter(|(u, _)| depth.get(u).is_some_and(|&d| d <= radius))
            .map(|(&u, w)| (u, w.clone()))
            .collect();
        let edges: BTreeSet<(NodeId, NodeId)> = ball
            .edges
            .iter()
            .filter(|&&(a, b)| match (depth.get(&a), depth.get(&b)) {
                (Some(&da), Some(&db)) => da <= radius && db <= radius && da.min(db) < radius,
                _ => false,
            })
            .copied()
            .collect();
        BallData { members, edges }
    }

    fn route_ball(&self, ctx: &StepCtx<'_>, ball: &BallData) -> Action {
        let mut batch: Vec<(NodeId, Vec<Word>)> = Vec::new();
        for &dst in ball.members.keys() {
            if dst == ctx.node {
                continue;
            }
            for (&id, words) in &ball.members {
                for (k, &w) in words.iter().enumerate() {
                    batch.push((dst, vec![TAG_BMEM, id as Word, k as Word, w]));
                }
            }
            for &(a, b) in &ball.edges {
                batch.push((dst, vec![TAG_BEDGE, a as Word, b as Word]));
            }
        }
        Action::Route(batch)
    }

    fn absorb_ball_messages(
        &self,
        ctx: &mut StepCtx<'_>,
        ball: &mut BallData,
        rs_w: u64,
    ) -> Result<(), ProgramFault> {
        let mut incoming: BTreeMap<NodeId, BTreeMap<Word, Word>> = BTreeMap::new();
        let mut bad: Option<Vec<Word>> = None;
        for msgs in ctx.inbox.unicast.values() {
            for payload in msgs {
                match payload.first().copied() {
                    Some(TAG_BMEM) if payload.len() == 4 => {
                        incoming
                            .entry(payload[1] as NodeId)
                            .or_default()
                            .insert(payload[2], payload[3]);
                    }
                    Some(TAG_BEDGE) if payload.len() == 3 => {
                        ball.edges
                            .insert((payload[1] as NodeId, payload[2] as NodeId));
                    }
                    _ => bad = Some(payload.clone()),
                }
            }
        }
        if let Some(payload) = bad {
            return Err(self.fault(ctx, format!("bad ball message {payload:?}")));
        }
        for (id, words) in incoming {
            let mut rs = vec![0 as Word; rs_w as usize];
            for (idx, w) in words {
                if (idx as usize) < rs.len() {
                    rs[idx as usize] = w;
                } else {
                    return Err(self.fault(ctx, "rs chunk index out of range"));
                }
            }
            ball.members.insert(id, rs);
        }
        Ok(())
    }

    fn ball_output(&self, ball: &BallData, rs_w: u64) -> Vec<Word> {
        let mut out = vec![ball.members.len() as Word];
        for (&id, words) in &ball.members {
            out.push(id as Word);
            out.extend_from_slice(&words[..rs_w as usize]);
        }
        out.push(ball.edges.len() as Word);
        for &(a, b) in &ball.edges {
            out.push(a as Word);
            out.push(b as Word);
        }
        out
    }
}

fn default_t_iters(n: u32) -> u32 {
    // 2 * ceil(log2(log2(n))), at least 1
    (2 * ceil_log2(ceil_log2(n.max(2)).max(1))).max(1)
}

struct Schedule {
    rs_w: usize,
    rs_chunks: u32,
    doubling_steps: u32,
    ball_done: u32,
    u_route: u32,
    comp_route: u32,
    color_round: u32,
}

#[derive(Debug, Clone, Default)]
struct BallData {
    members: BTreeMap<NodeId, Vec<Word>>,
    edges: BTreeSet<(NodeId, NodeId)>,
}

impl CcProgram for LowDegProgram {
    fn step(&self, ctx: &mut StepCtx<'_>) -> Result<Action, ProgramFault> {
        let n = ctx.n;
        debug_assert_eq!(n, self.n);

        if n == 1 {
            return Ok(Action::Halt(vec![1, 0, 0, 0]));
        }

        if ctx.round == 1 {
            let deg = ctx.memory.get(segment_base(n, ADJ_SEGMENT));
            return Ok(Action::Broadcast(vec![deg]));
        }

        if ctx.round == 2 {
            let mut delta = ctx.memory.get(segment_base(n, ADJ_SEGMENT));
            for payload in ctx.inbox.broadcast.values() {
                delta = delta.max(payload[0]);
            }
            ctx.memory.set(L_DELTA, delta + 1);
            let sched = self.schedule(delta as u32);
            // Commit the bit string; this stream is the one the global
            // oracle reproduces.
            let rs: Vec<Word> = (0..sched.rs_w).map(|_| ctx.rng.next_u64()).collect();
            let stored: Vec<Word> = rs.iter().map(|w| w.wrapping_add(1)).collect();
            ctx.memory.write_slice(segment_base(n, SEG_RS), &stored);
            let nbrs = ctx.memory.read_slice(segment_base(n, ADJ_SEGMENT));
            if nbrs.is_empty() {
                return Ok(Action::Idle);
            }
            let chunk: Vec<Word> = rs.iter().take(self.msg_word_budget).copied().collect();
            return Ok(Action::Unicast(
                nbrs.iter().map(|&v| (v as NodeId, chunk.clone())).collect(),
            ));
        }

        let delta = (ctx.memory.get(L_DELTA) - 1) as u32;
        let sched = self.schedule(delta);
        let rs_w = sched.rs_w as u64;
        let round = ctx.round;

        // Bit-string chunk rounds: absorb the chunk received this round into
        // the radius-1 ball, emit the next chunk if any remain.
        if round <= 2 + sched.rs_chunks {
            let chunk_idx = (round - 3) as usize;
            let nbrs = ctx.memory.read_slice(segment_base(n, ADJ_SEGMENT));
            let mbase = self.ball_members_base();
            if chunk_idx == 0 {
                let own_rs = ctx.memory.read_slice(segment_base(n, SEG_RS));
                let mut ball = BallData::default();
                ball.members
                    .insert(ctx.node, own_rs.iter().map(|w| w.wrapping_sub(1)).collect());
                for &v in &nbrs {
                    ball.members.insert(v as NodeId, vec![0; rs_w as usize]);
                    let (a, b) = (ctx.node.min(v as NodeId), ctx.node.max(v as NodeId));
                    ball.edges.insert((a, b));
                }
                self.store_ball(ctx, &ball, rs_w);
            }
            let count = ctx.memory.get(mbase);
            for i in 0..count {
                let entry = mbase + 1 + i * (1 + rs_w);
                let id = ctx.memory.get(entry) as NodeId;
                if id == ctx.node {
                    continue;
                }
                if let Some(payload) = ctx.inbox.single_from(id) {
                    let payload = payload.to_vec();
                    for (k, &w) in payload.iter().enumerate() {
                        let pos = chunk_idx * self.msg_word_budget + k;
                        ctx.memory.set(entry + 1 + pos as u64, w.wrapping_add(1));
                    }
                }
            }
            let emit_idx = (round - 2) as usize;
            if emit_idx < sched.rs_chunks as usize && !nbrs.is_empty() {
                let own_rs = ctx.memory.read_slice(segment_base(n, SEG_RS));
                let lo = emit_idx * self.msg_word_budget;
                let hi = (lo + self.msg_word_budget).min(own_rs.len());
                let chunk: Vec<Word> = own_rs[lo..hi].iter().map(|w| w.wrapping_sub(1)).collect();
                return Ok(Action::Unicast(
                    nbrs.iter().map(|&v| (v as NodeId, chunk.clone())).collect(),
                ));
            }
            if round < 2 + sched.rs_chunks {
                return Ok(Action::Idle);
            }
            // round == 2 + rs_chunks falls through to the doubling phase
        }

        // Ball doubling super-steps: absorb at the start of each, route out.
        let a0 = 2 + sched.rs_chunks;
        if round >= a0 && round < sched.ball_done {
            let off = round - a0;
            if !off.is_multiple_of(self.route_rounds) {
                return Ok(Action::Idle);
            }
            let step = off / self.route_rounds;
            let mut ball = self.load_ball(ctx, rs_w);
            if step > 0 {
                self.absorb_ball_messages(ctx, &mut ball, rs_w)?;
                let target = replay_radius(self.t_iters.max(1));
                let radius = (1u32 << step).min(target);
                ball = self.truncate(ctx.node, &ball, radius);
                self.store_ball(ctx, &ball, rs_w);
            }
            return Ok(self.route_ball(ctx, &ball));
        }

        // Final assembly, local replay, stage-1 color broadcast.
        if round == sched.ball_done {
            let target = replay_radius(self.t_iters.max(1));
            let mut ball = self.load_ball(ctx, rs_w);
            if sched.doubling_steps > 0 {
                self.absorb_ball_messages(ctx, &mut ball, rs_w)?;
                ball = self.truncate(ctx.node, &ball, target);
                self.store_ball(ctx, &ball, rs_w);
            }
            let labeled = LabeledBall {
                center: ctx.node,
                radius: target,
                members: ball.members.clone(),
                edges: ball.edges.clone(),
            };
            if self.emit_balls {
                return Ok(Action::Halt(self.ball_output(&ball, rs_w)));
            }
            let (color, palette) =
                replay_locally(&labeled, self.t_iters, delta).map_err(|e| self.fault(ctx, e))?;
            ctx.memory.set(L_MY_COLOR, color.unwrap_or(0) + 1);
            let pw = (delta as u64 + 1).div_ceil(64);
            let mut mask = vec![0 as Word; pw as usize];
            for c in palette {
                let bit = c - 1;
                mask[(bit / 64) as usize] |= 1 << (bit % 64);
            }
            ctx.memory.write_slice(segment_base(n, SEG_PALETTE), &mask);
            self.clear_ball(ctx, rs_w);
            return Ok(Action::Broadcast(vec![color.unwrap_or(0)]));
        }

        // Stage-1 colors received: uncolored nodes ship their uncolored
        // edges and palettes to node 1.
        if round == sched.u_route {
            let nbrs = ctx.memory.read_slice(segment_base(n, ADJ_SEGMENT));
            let mut nbr_colors = Vec::with_capacity(nbrs.len());
            for &v in &nbrs {
                let c = ctx
                    .inbox
                    .broadcast
                    .get(&(v as NodeId))
                    .ok_or_else(|| self.fault(ctx, format!("no stage-1 color from {v}")))?[0];
                nbr_colors.push(c + 1);
            }
            ctx.memory
                .write_slice(segment_base(n, SEG_NBR_COLOR), &nbr_colors);
            if ctx.node == 1 {
                let mut uncolored = Vec::new();
                for u in 1..=n {
                    let c = if u == ctx.node {
                        ctx.memory.get(L_MY_COLOR) - 1
                    } else {
                        ctx.inbox
                            .broadcast
                            .get(&u)
                            .ok_or_else(|| self.fault(ctx, format!("no color from {u}")))?[0]
                    };
                    if c == 0 {
                        uncolored.push(u as Word);
                    }
                }
                ctx.memory
                    .write_slice(segment_base(n, SEG_UNCOLORED), &uncolored);
            }
            if ctx.memory.get(L_MY_COLOR) != 1 {
                return Ok(Action::Route(vec![]));
            }
            let mut batch: Vec<(NodeId, Vec<Word>)> = vec![(1, vec![TAG_UNODE, ctx.node as Word])];
            let ncolors = ctx.memory.read_slice(segment_base(n, SEG_NBR_COLOR));
            for (i, &v) in nbrs.iter().enumerate() {
                let v = v as NodeId;
                if ncolors[i] == 1 && ctx.node < v {
                    batch.push((1, vec![TAG_UEDGE, ctx.node as Word, v as Word]));
                }
            }
            let mask = ctx.memory.read_slice(segment_base(n, SEG_PALETTE));
            for (idx, &w) in mask.iter().enumerate() {
                batch.push((1, vec![TAG_UPAL, ctx.node as Word, idx as Word, w]));
            }
            return Ok(Action::Route(batch));
        }

        if round > sched.u_route && round < sched.comp_route {
            return Ok(Action::Idle);
        }

        // Node 1: cluster-merge the uncolored set, split into components,
        // ship each component to its smallest member.
        if round == sched.comp_route {
            if ctx.node != 1 {
                return Ok(Action::Idle);
            }
            let uset: BTreeSet<NodeId> = ctx
                .memory
                .read_slice(segment_base(n, SEG_UNCOLORED))
                .iter()
                .map(|&w| w as NodeId)
                .collect();
            let mut unit_edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
            let mut palettes: BTreeMap<NodeId, Vec<Word>> = BTreeMap::new();
            let mut announced: BTreeSet<NodeId> = BTreeSet::new();
            for msgs in ctx.inbox.unicast.values() {
                for payload in msgs {
                    match payload.first().copied() {
                        Some(TAG_UNODE) if payload.len() == 2 => {
                            announced.insert(payload[1] as NodeId);
                        }
                        Some(TAG_UEDGE) if payload.len() == 3 => {
                            unit_edges.insert((payload[1] as NodeId, payload[2] as NodeId));
                        }
                        Some(TAG_UPAL) if payload.len() == 4 => {
                            let entry = palettes.entry(payload[1] as NodeId).or_default();
                            let idx = payload[2] as usize;
                            if entry.len() <= idx {
                                entry.resize(idx + 1, 0);
                            }
                            entry[idx] = payload[3];
                        }
                        _ => return Err(self.fault(ctx, format!("bad gather message {payload:?}"))),
                    }
                }
            }
            if announced != uset {
                return Err(self.fault(ctx, "uncolored announcements disagree with broadcasts"));
            }
            let partition = cluster_merge(n, &unit_edges, self.phases);
            // Containment: no unit edge may cross clusters at termination.
            for &(a, b) in &unit_edges {
                if partition.cluster_of(a) != partition.cluster_of(b) {
                    return Err(self.fault(
                        ctx,
                        format!("uncolored edge ({a}, {b}) crosses clusters after merging"),
                    ));
                }
            }
            let comps = partition.split_unit_components(&unit_edges, &uset);
            ctx.memory.set(L_N_COMP, comps.len() as Word + 1);
            let max_comp = comps.iter().map(|c| c.len()).max().unwrap_or(0);
            ctx.memory.set(L_MAX_COMP, max_comp as Word + 1);
            if max_comp as u64 > self.component_cap {
                return Err(self.fault(
                    ctx,
                    format!(
                        "uncolored component of size {max_comp} exceeds cap {}",
                        self.component_cap
                    ),
                ));
            }
            ctx.memory
                .set(L_HIST_LEN, partition.min_size_history.len() as Word);
            for (i, &s) in partition.min_size_history.iter().enumerate() {
                ctx.memory.set(L_HIST_BASE + i as u64, s as Word + 1);
            }
            let mut batch: Vec<(NodeId, Vec<Word>)> = Vec::new();
            for comp in &comps {
                let recipient = *comp.iter().next().expect("nonempty component");
                for &v in comp {
                    batch.push((recipient, vec![TAG_CNODE, v as Word]));
                    let empty = Vec::new();
                    let mask = palettes.get(&v).unwrap_or(&empty);
                    for (idx, &w) in mask.iter().enumerate() {
                        batch.push((recipient, vec![TAG_CPAL, v as Word, idx as Word, w]));
                    }
                }
                for &(a, b) in &unit_edges {
                    if comp.contains(&a) && comp.contains(&b) {
                        batch.push((recipient, vec![TAG_CEDGE, a as Word, b as Word]));
                    }
                }
            }
            return Ok(Action::Route(batch));
        }

        if round > sched.comp_route && round < sched.color_round {
            return Ok(Action::Idle);
        }

        // Recipients color their components and notify the members.
        if round == sched.color_round {
            if ctx.inbox.unicast.is_empty() {
                return Ok(Action::Idle);
            }
            let mut members: BTreeSet<NodeId> = BTreeSet::new();
            let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
            let mut masks: BTreeMap<NodeId, Vec<Word>> = BTreeMap::new();
            for msgs in ctx.inbox.unicast.values() {
                for payload in msgs {
                    match payload.first().copied() {
                        Some(TAG_CNODE) if payload.len() == 2 => {
                            members.insert(payload[1] as NodeId);
                        }
                        Some(TAG_CEDGE) if payload.len() == 3 => {
                            edges.insert((payload[1] as NodeId, payload[2] as NodeId));
                        }
                        Some(TAG_CPAL) if payload.len() == 4 => {
                            let entry = masks.entry(payload[1] as NodeId).or_default();
                            let idx = payload[2] as usize;
                            if entry.len() <= idx {
                                entry.resize(idx + 1, 0);
                            }
                            entry[idx] = payload[3];
                        }
                        _ => {
                            return Err(
                                self.fault(ctx, format!("bad component message {payload:?}"))
                            )
                        }
                    }
                }
            }
            let palettes: BTreeMap<NodeId, BTreeSet<Word>> = masks
                .iter()
                .map(|(&u, mask)| {
                    let mut p = BTreeSet::new();
                    for (idx, &w) in mask.iter().enumerate() {
                        for bit in 0..64u64 {
                            if (w >> bit) & 1 == 1 {
                                p.insert(idx as u64 * 64 + bit + 1);
                            }
                        }
                    }
                    (u, p)
                })
                .collect();
            let colors =
                color_component(&members, &edges, &palettes).map_err(|e| self.fault(ctx, e))?;
            let mut msgs: Vec<(NodeId, Vec<Word>)> = Vec::new();
            for (&m, &c) in &colors {
                if m == ctx.node {
                    ctx.memory.set(L_FINAL_COLOR, c);
                } else {
                    msgs.push((m, vec![c]));
                }
            }
            if msgs.is_empty() {
                return Ok(Action::Idle);
            }
            return Ok(Action::Unicast(msgs));
        }

        // Halt: everyone reports a color.
        if round == sched.color_round + 1 {
            let stage1 = ctx.memory.get(L_MY_COLOR);
            let mut color = if stage1 > 1 {
                stage1 - 1
            } else {
                ctx.memory.get(L_FINAL_COLOR)
            };
            if color == 0 {
                for msgs in ctx.inbox.unicast.values() {
                    for payload in msgs {
                        if payload.len() == 1 {
                            color = payload[0];
                        }
                    }
                }
            }
            if color == 0 {
                return Err(self.fault(ctx, "halting uncolored"));
            }
            if ctx.node == 1 {
                let mut out = vec![
                    color,
                    ctx.memory.get(L_N_COMP).max(1) - 1,
                    ctx.memory.get(L_MAX_COMP).max(1) - 1,
                    ctx.memory.get(L_HIST_LEN),
                ];
                let hist_len = ctx.memory.get(L_HIST_LEN);
                for i in 0..hist_len {
                    out.push(ctx.memory.get(L_HIST_BASE + i).max(1) - 1);
                }
                return Ok(Action::Halt(out));
            }
            return Ok(Action::Halt(vec![color]));
        }

        Err(self.fault(ctx, format!("unexpected round {round}")))
    }
}

/// Decoded result of a completed run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LowDegOutcome {
    pub coloring: Coloring,
    pub components: u64,
    pub max_component: u64,
    /// Minimum cluster size after each merge phase (index 0 = initial).
    pub min_size_history: Vec<u64>,
}

impl LowDegOutcome {
    pub fn from_outputs(outputs: &BTreeMap<NodeId, Vec<Word>>) -> Result<Self, String> {
        let mut coloring = Coloring::new();
        let mut components = 0;
        let mut max_component = 0;
        let mut min_size_history = Vec::new();
        for (&u, words) in outputs {
            let color = *words
                .first()
                .ok_or_else(|| format!("node {u}: empty output"))?;
            if color == 0 {
                return Err(format!("node {u}: zero color"));
            }
            coloring.set(u, color);
            if u == 1 && words.len() >= 4 {
                components = words[1];
                max_component = words[2];
                let hist_len = words[3] as usize;
                min_size_history = words.iter().skip(4).take(hist_len).copied().collect();
            }
        }
        Ok(LowDegOutcome {
            coloring,
            components,
            max_component,
            min_size_history,
        })
    }
}

/// Parses the probe-mode ball output back into a [`LabeledBall`].
pub fn decode_ball_output(center: NodeId, radius: u32, words: &[Word], rs_w: usize) -> LabeledBall {
    let mut members = BTreeMap::new();
    let count = words[0] as usize;
    let mut pos = 1;
    for _ in 0..count {
        let id = words[pos] as NodeId;
        let rs = words[pos + 1..pos + 1 + rs_w].to_vec();
        members.insert(id, rs);
        pos += 1 + rs_w;
    }
    let ecount = words[pos] as usize;
    pos += 1;
    let mut edges = BTreeSet::new();
    for _ in 0..ecount {
        edges.insert((words[pos] as NodeId, words[pos + 1] as NodeId));
        pos += 2;
    }
    LabeledBall {
        center,
        radius,
        members,
        edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cc::{run_cc, CcConfig};

    fn adjacency_of(g: &Graph) -> BTreeMap<NodeId, Vec<NodeId>> {
        g.nodes().map(|u| (u, g.neighbors(u).to_vec())).collect()
    }

    #[test]
    fn isolated_node_colors_immediately() {
        let g = Graph::empty(1);
        let adj = adjacency_of(&g);
        let mut state = PaletteState::fresh(g.nodes(), 0);
        rand_col_step(&mut state, &adj, &mut |_| 17);
        assert_eq!(state.colors.get(&1), Some(&1));
    }

    #[test]
    fn forced_conflict_leaves_both_uncolored() {
        let g = Graph::from_edges(2, &[(1, 2)]).unwrap();
        let adj = adjacency_of(&g);
        let mut state = PaletteState::fresh(g.nodes(), 1);
        // Shrink both palettes to the same singleton: guaranteed conflict.
        state.palettes.get_mut(&1).unwrap().remove(&2);
        state.palettes.get_mut(&2).unwrap().remove(&2);
        rand_col_step(&mut state, &adj, &mut |_| 5);
        assert!(state.colors.is_empty());
    }

    /// Independent oracle: a from-scratch implementation with a different
    /// representation, used to cross-check `rand_col_step`.
    fn oracle_step(
        colors: &mut [Option<Word>],
        palettes: &mut [Vec<Word>],
        g: &Graph,
        draws: &BTreeMap<NodeId, Word>,
    ) {
        let n = g.n() as usize;
        let mut tentative: Vec<Option<Word>> = vec![None; n + 1];
        for u in 1..=n {
            if colors[u].is_none() && !palettes[u].is_empty() {
                let idx = (draws[&(u as NodeId)] % palettes[u].len() as Word) as usize;
                tentative[u] = Some(palettes[u][idx]);
            }
        }
        let mut newly: Vec<(usize, Word)> = Vec::new();
        for u in 1..=n {
            let Some(c) = tentative[u] else { continue };
            let clash = g
                .neighbors(u as NodeId)
                .iter()
                .any(|&v| tentative[v as usize] == Some(c));
            if !clash {
                newly.push((u, c));
            }
        }
        for (u, c) in newly {
            colors[u] = Some(c);
            for &v in g.neighbors(u as NodeId) {
                palettes[v as usize].retain(|&x| x != c);
            }
        }
    }

    #[test]
    fn step_matches_independent_oracle_on_k4() {
        let g = Graph::generate(4, 1.0, 0);
        let adj = adjacency_of(&g);
        for seed in 0..50 {
            let delta = 3;
            let mut state = PaletteState::fresh(g.nodes(), delta);
            let mut colors: Vec<Option<Word>> = vec![None; 5];
            let mut palettes: Vec<Vec<Word>> =
                (0..5).map(|_| (1..=delta as Word + 1).collect()).collect();
            let mut rng = DetRng::new(seed);
            for _ in 0..6 {
                let draws: BTreeMap<NodeId, Word> = (1..=4).map(|u| (u, rng.next_u64())).collect();
                let mut draw = |u: NodeId| draws[&u];
                rand_col_step(&mut state, &adj, &mut draw);
                oracle_step(&mut colors, &mut palettes, &g, &draws);
                for u in 1..=4u32 {
                    assert_eq!(
                        state.colors.get(&u).copied(),
                        colors[u as usize],
                        "seed {seed} node {u}"
                    );
                    let want: BTreeSet<Word> = palettes[u as usize].iter().copied().collect();
                    assert_eq!(state.palettes[&u], want, "seed {seed} node {u}");
                }
            }
        }
    }

    #[test]
    fn palette_invariants_hold_across_iterations() {
        for seed in 0..20 {
            let g = Graph::generate_capped(48, 0.1, 6, seed);
            let adj = adjacency_of(&g);
            let delta = g.max_degree();
            let rs = RsTable::generate(g.n(), delta, 8, seed);
            let mut state = PaletteState::fresh(g.nodes(), delta);
            for i in 0..8 {
                let mut draw = |u: NodeId| rs.draw(u, i).unwrap();
                rand_col_step(&mut state, &adj, &mut draw);
                state.check_invariants(&adj).unwrap();
            }
        }
    }

    #[test]
    fn bfs_ball_examples() {
        let path = Graph::from_edges(3, &[(1, 2), (2, 3)]).unwrap();
        let rs = RsTable::generate(3, path.max_degree(), 2, 1);
        let ball = bfs_ball(&path, 2, 1, &rs);
        assert_eq!(ball.members.len(), 3);
        assert_eq!(ball.edges, BTreeSet::from([(1, 2), (2, 3)]));

        let ball0 = bfs_ball(&path, 2, 0, &rs);
        assert_eq!(ball0.members.len(), 1);
        assert!(ball0.edges.is_empty());
    }

    #[test]
    fn replay_trivial_cases() {
        let g = Graph::empty(2);
        let rs = RsTable::generate(2, 0, 1, 3);
        let ball = bfs_ball(&g, 1, replay_radius(1), &rs);
        // t = 0: still uncolored, full palette
        let (c, palette) = replay_locally(&ball, 0, 0).unwrap();
        assert_eq!(c, None);
        assert_eq!(palette, BTreeSet::from([1]));
        // isolated center, t = 1: colored by its first draw
        let (c, _) = replay_locally(&ball, 1, 0).unwrap();
        assert_eq!(c, Some(1));
    }

    #[test]
    fn replay_rejects_short_bit_strings() {
        let g = Graph::empty(1);
        let rs = RsTable::generate(1, 0, 1, 3);
        let mut ball = bfs_ball(&g, 1, replay_radius(1), &rs);
        ball.members.insert(1, vec![]);
        assert!(replay_locally(&ball, 1, 0).is_err());
    }

    #[test]
    fn replay_needs_two_hops_per_iteration() {
        // Path 1-2-3-4: from node 1's radius-1 ball, node 2 looks free to
        // keep any draw, but globally it may collide with node 3. The
        // radius-2 ball settles node 1's palette after one iteration.
        let g = Graph::from_edges(4, &[(1, 2), (2, 3), (3, 4)]).unwrap();
        let delta = g.max_degree();
        for seed in 0..200u64 {
            let rs = RsTable::generate(4, delta, 1, seed);
            let global = run_global(&g, &rs, 1);
            let ball = bfs_ball(&g, 1, replay_radius(1), &rs);
            let (c, palette) = replay_locally(&ball, 1, delta).unwrap();
            assert_eq!(c, global.colors.get(&1).copied(), "seed {seed}");
            assert_eq!(palette, global.palettes[&1], "seed {seed}");
        }
    }

    #[test]
    fn replay_equals_global_iterations() {
        for seed in 0..12 {
            let g = Graph::generate_capped(128, 0.05, 6, seed);
            let delta = g.max_degree();
            for t in 1..=3u32 {
                let rs = RsTable::generate(g.n(), delta, t, seed);
                let global = run_global(&g, &rs, t);
                for u in g.nodes() {
                    let ball = bfs_ball(&g, u, replay_radius(t), &rs);
                    let (c, palette) = replay_locally(&ball, t, delta).unwrap();
                    assert_eq!(
                        c,
                        global.colors.get(&u).copied(),
                        "seed {seed} t {t} node {u}"
                    );
                    assert_eq!(palette, global.palettes[&u], "seed {seed} t {t} node {u}");
                }
            }
        }
    }

    #[test]
    fn cluster_merge_empty_uncolored_set() {
        let partition = cluster_merge(6, &BTreeSet::new(), 3);
        for tree in &partition.trees {
            assert!(tree.iter().all(|&(_, _, w)| w == 6));
        }
        let total: usize = partition.clusters.iter().map(|c| c.len()).sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn cluster_merge_single_unit_edge() {
        let unit = BTreeSet::from([(2, 5)]);
        let partition = cluster_merge(6, &unit, 1);
        let c2 = partition.cluster_of(2).unwrap();
        assert_eq!(partition.cluster_of(5).unwrap(), c2);
        assert!(partition.trees[c2].contains(&(2, 5, 1)));
    }

    #[test]
    fn squaring_invariant_holds() {
        for seed in 0..10 {
            let g = Graph::generate_capped(64, 0.08, 5, seed);
            let unit: BTreeSet<(NodeId, NodeId)> = g.edges().into_iter().collect();
            let partition = cluster_merge(64, &unit, 4);
            let hist = &partition.min_size_history;
            for k in 0..hist.len() - 1 {
                let bound = (hist[k] * hist[k]).min(64);
                assert!(
                    hist[k + 1] >= bound.max(hist[k]),
                    "seed {seed}: history {hist:?} violates squaring at {k}"
                );
            }
        }
    }

    #[test]
    fn containment_against_component_oracle() {
        for seed in 0..20 {
            let g = Graph::generate_capped(96, 0.04, 6, seed);
            let delta = g.max_degree();
            let rs = RsTable::generate(g.n(), delta, 2, seed);
            let state = run_global(&g, &rs, 2);
            let uncolored = state.uncolored();
            let unit: BTreeSet<(NodeId, NodeId)> = g
                .edges()
                .into_iter()
                .filter(|(u, v)| uncolored.contains(u) && uncolored.contains(v))
                .collect();
            let phases = default_phases(96);
            let partition = cluster_merge(g.n(), &unit, phases);
            for comp in g.components(&uncolored) {
                let clusters: BTreeSet<usize> = comp
                    .iter()
                    .map(|&u| partition.cluster_of(u).unwrap())
                    .collect();
                assert_eq!(clusters.len(), 1, "seed {seed}: component split {comp:?}");
            }
            let split = partition.split_unit_components(&unit, &uncolored);
            assert_eq!(split, g.components(&uncolored), "seed {seed}");
        }
    }

    #[test]
    fn color_component_trivial_cases() {
        assert!(
            color_component(&BTreeSet::new(), &BTreeSet::new(), &BTreeMap::new())
                .unwrap()
                .is_empty()
        );
        let members = BTreeSet::from([7]);
        let palettes = BTreeMap::from([(7, BTreeSet::from([3]))]);
        let colors = color_component(&members, &BTreeSet::new(), &palettes).unwrap();
        assert_eq!(colors[&7], 3);
    }

    fn run_lowdeg(g: &Graph, t: u32, seed: u64) -> (LowDegOutcome, u32) {
        let config = CcConfig {
            route_capacity_factor: 128,
            ..CcConfig::default()
        };
        let mut program = LowDegProgram::new(g.n(), &config);
        program.t_iters = t;
        let run = run_cc(&program, g, seed, &config).expect("lowdeg run completes");
        (
            LowDegOutcome::from_outputs(&run.outputs).expect("decode"),
            run.rounds_used,
        )
    }

    #[test]
    fn end_to_end_sparse_graphs_use_delta_plus_one_colors() {
        for seed in 0..15 {
            let g = Graph::generate_capped(96, 0.03, 5, seed);
            let (outcome, _) = run_lowdeg(&g, 2, seed);
            outcome.coloring.check_total_proper(&g).unwrap();
            assert!(
                outcome.coloring.max_color() <= g.max_degree() as Word + 1,
                "seed {seed}"
            );
            let hist = &outcome.min_size_history;
            for k in 0..hist.len().saturating_sub(1) {
                let bound = (hist[k] * hist[k]).min(g.n() as u64);
                assert!(
                    hist[k + 1] >= bound.max(hist[k]),
                    "seed {seed} hist {hist:?}"
                );
            }
        }
    }

    #[test]
    fn end_to_end_empty_graph() {
        let g = Graph::empty(9);
        let (outcome, _) = run_lowdeg(&g, 1, 4);
        outcome.coloring.check_total_proper(&g).unwrap();
        assert_eq!(outcome.coloring.max_color(), 1);
        assert_eq!(outcome.components, 0);
    }

    #[test]
    fn program_balls_match_bfs_oracle() {
        let config = CcConfig {
            route_capacity_factor: 128,
            ..CcConfig::default()
        };
        for seed in [3u64, 11] {
            let g = Graph::generate_capped(64, 0.05, 4, seed);
            let delta = g.max_degree();
            for t in [1u32, 2] {
                let mut program = LowDegProgram::new(g.n(), &config);
                program.t_iters = t;
                program.emit_balls = true;
                let run = run_cc(&program, &g, seed, &config).expect("probe run");
                let rs = RsTable::generate(g.n(), delta, t, seed);
                let rs_w = rs_words(delta, t);
                let radius = replay_radius(t);
                for u in g.nodes() {
                    let got = decode_ball_output(u, radius, &run.outputs[&u], rs_w);
                    let want = bfs_ball(&g, u, radius, &rs);
                    assert_eq!(got, want, "seed {seed} t {t} node {u}");
                }
            }
        }
    }

    #[test]
    fn determinism_double_execution() {
        let g = Graph::generate_capped(48, 0.06, 5, 2);
        let config = CcConfig {
            route_capacity_factor: 128,
            ..CcConfig::default()
        };
        let mut program = LowDegProgram::new(g.n(), &config);
        program.t_iters = 2;
        let a = run_cc(&program, &g, 31, &config).unwrap();
        let b = run_cc(&program, &g, 31, &config).unwrap();
        assert_eq!(a.outputs, b.outputs);
        assert_eq!(a.profile, b.profile);
    }
}
