//! Random color-group coloring for dense graphs.
//!
//! The program repeats a random trial: every node picks one of
//! `max(1, ceil(delta / beta))` color groups uniformly at random, nodes
//! report `(group, in-group degree)` to node 1, and node 1 declares the
//! trial successful when at most `2 * beta` group graphs are *bad* (more
//! than n induced edges). On success node 1 broadcasts the set of groups
//! that will be colored locally (good groups whose maximum in-group degree
//! fits the per-group palette window), each such group is shipped through
//! the routing primitive to its own recipient node for greedy coloring in a
//! disjoint palette window, and the residual — everything else — is shipped
//! to a collector node and colored from one final `delta + 1` window. The
//! parameter `beta` stands in for `log n` in every threshold so both degree
//! regimes are exercisable at small n.
//!
//! All state lives in word memory and every step is pure given (memory,
//! inbox, round stream), so the program runs unchanged on either backend.

use std::collections::{BTreeMap, BTreeSet};

use crate::cc::{segment_base, Action, CcProgram, ProgramFault, StepCtx, ADJ_SEGMENT};
use crate::coloring::Coloring;
use crate::{NodeId, Word};

/// Smallest beta such that group count, thresholds and caps behave: one
/// group at minimum, `2 * beta` failure allowance, `5 * beta` degree cap.
pub fn default_beta(n: u32) -> u32 {
    if n <= 1 {
        1
    } else {
        (32 - (n - 1).leading_zeros()).max(1)
    }
}

/// Step-9 predicate: the trial succeeded iff at most `2 * beta` group
/// graphs are not good.
pub fn trial_succeeded(bad_count: u32, beta: u32) -> bool {
    bad_count <= 2 * beta
}

/// Per-group statistics assembled from per-node `(group, in-group degree)`
/// reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupStats {
    pub group: u32,
    pub nodes: u32,
    pub edges: u64,
    pub max_igdeg: u32,
    pub good: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupReport {
    pub groups: Vec<GroupStats>,
    pub bad_count: u32,
}

/// Aggregates reports into per-group edge counts. The edge count of a group
/// is half the sum of in-group degrees of its members; an odd sum means the
/// reports are inconsistent.
pub fn classify_groups(
    reports: &[(NodeId, u32, u32)],
    n: u32,
    group_count: u32,
) -> Result<GroupReport, String> {
    let mut sum: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cnt: BTreeMap<u32, u32> = BTreeMap::new();
    let mut max: BTreeMap<u32, u32> = BTreeMap::new();
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    for &(node, group, igdeg) in reports {
        if !seen.insert(node) {
            return Err(format!("node {node} reported twice"));
        }
        if group == 0 || group > group_count {
            return Err(format!(
                "node {node} reported group {group} of {group_count}"
            ));
        }
        *sum.entry(group).or_insert(0) += igdeg as u64;
        *cnt.entry(group).or_insert(0) += 1;
        let m = max.entry(group).or_insert(0);
        *m = (*m).max(igdeg);
    }
    let mut groups = Vec::with_capacity(group_count as usize);
    let mut bad_count = 0;
    for group in 1..=group_count {
        let s = sum.get(&group).copied().unwrap_or(0);
        if s % 2 != 0 {
            return Err(format!("group {group} has odd in-group degree sum {s}"));
        }
        let edges = s / 2;
        let good = edges <= n as u64;
        if !good {
            bad_count += 1;
        }
        groups.push(GroupStats {
            group,
            nodes: cnt.get(&group).copied().unwrap_or(0),
            edges,
            max_igdeg: max.get(&group).copied().unwrap_or(0),
            good,
        });
    }
    Ok(GroupReport { groups, bad_count })
}

/// A subgraph shipped to one node for local coloring: member list plus the
/// edges among members.
#[derive(Debug, Clone, Default)]
pub struct SubgraphFragment {
    pub members: Vec<NodeId>,
    pub edges: Vec<(NodeId, NodeId)>,
}

impl SubgraphFragment {
    pub fn max_degree(&self) -> u32 {
        let mut deg: BTreeMap<NodeId, u32> = BTreeMap::new();
        for &(u, v) in &self.edges {
            *deg.entry(u).or_insert(0) += 1;
            *deg.entry(v).or_insert(0) += 1;
        }
        deg.values().copied().max().unwrap_or(0)
    }
}

/// Greedy coloring by ascending node id, colors drawn from
/// `palette_base + 1 ..= palette_base + max_degree + 1`.
pub fn color_subgraph_greedy(
    fragment: &SubgraphFragment,
    palette_base: Word,
) -> BTreeMap<NodeId, Word> {
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &u in &fragment.members {
        adj.entry(u).or_default();
    }
    for &(u, v) in &fragment.edges {
        adj.entry(u).or_default().push(v);
        adj.entry(v).or_default().push(u);
    }
    let mut colors: BTreeMap<NodeId, Word> = BTreeMap::new();
    for (&u, nbrs) in &adj {
        let used: BTreeSet<Word> = nbrs.iter().filter_map(|v| colors.get(v).copied()).collect();
        let mut c = palette_base + 1;
        while used.contains(&c) {
            c += 1;
        }
        colors.insert(u, c);
    }
    colors
}

// Scalar addresses (segment 0).
const PHASE_TRIAL_ROUND: u64 = 1; // round at which the current trial sent group choices
const PHASE_BREAK_ROUND: u64 = 2; // round at which the break verdict was read (0 = still looping)
const S_DELTA: u64 = 3;
const S_MY_GROUP: u64 = 5;
const S_MY_IGDEG: u64 = 6;
const S_TRIALS: u64 = 7;
const S_RESTARTS: u64 = 8;
const S_N_COLORABLE: u64 = 9;
const S_MY_BASE: u64 = 10; // +1 shifted; 0 = not a recipient
const S_RES_BASE: u64 = 11; // +1 shifted
const S_MY_COLOR: u64 = 12;
const S_RES_EDGES: u64 = 13; // collector: received residual edge count (+1 shifted)
const S_MAX_IGDEG: u64 = 14; // node 1: max in-group degree of the final trial
const S_GO: u64 = 15; // collector: go/restart decision (+1 shifted)

// Segments (see cc::segment_base; segment 1 is the adjacency).
const SEG_NBR_GROUP: u32 = 2; // group of i-th neighbor, parallel to adjacency
const SEG_GOODSTREAM: u32 = 3; // broadcast stream: [count, colorable group indices...], words stored +1
const SEG_BASES: u32 = 4; // node 1: palette base of j-th colorable group, stored +1
const SEG_SHIP: u32 = 5; // transient fragment scratch (cleared within the step)

// Routed message tags.
const TAG_MEMBER: Word = 1;
const TAG_EDGE: Word = 2;

// Verdict words.
const VERDICT_CONTINUE: Word = 0;
const VERDICT_BREAK: Word = 1;
const VERDICT_RESTART: Word = 0;
const VERDICT_GO: Word = 1;

/// Algorithm parameters plus the engine constants the choreography depends
/// on. Build with [`HighDegProgram::new`] so the message budget and routing
/// cost match the engine configuration.
#[derive(Debug, Clone)]
pub struct HighDegProgram {
    pub n: u32,
    pub beta: u32,
    pub max_trials: u32,
    pub msg_word_budget: usize,
    pub route_rounds: u32,
    pub route_capacity_factor: u64,
    /// Residual edge cap; exceeding it restarts the trial loop.
    pub residual_cap: u64,
}

impl HighDegProgram {
    pub fn new(n: u32, beta: u32, config: &crate::cc::CcConfig) -> Self {
        assert!(beta >= 1);
        HighDegProgram {
            n,
            beta,
            max_trials: 64,
            msg_word_budget: config.msg_word_budget,
            route_rounds: config.route_rounds,
            route_capacity_factor: config.route_capacity_factor,
            residual_cap: 0, // 0 = derive from delta once known
        }
    }

    fn group_count(&self, delta: u32) -> u32 {
        (delta.div_ceil(self.beta)).max(1)
    }

    /// Default residual cap `100 * n * beta^4 / delta`.
    fn residual_cap(&self, delta: u32) -> u64 {
        if self.residual_cap != 0 {
            return self.residual_cap;
        }
        let b = self.beta as u64;
        (100 * self.n as u64 * b * b * b * b) / (delta.max(1) as u64)
    }

    /// Chunks needed to broadcast the colorable-group stream: the stream is
    /// at most `1 + group_count` words, the budget is per message.
    fn chunk_rounds(&self, delta: u32) -> u32 {
        let stream_max = 1 + self.group_count(delta) as u64;
        stream_max.div_ceil(self.msg_word_budget as u64) as u32
    }

    fn collector(&self) -> NodeId {
        self.n
    }

    fn fault(&self, ctx: &StepCtx<'_>, message: impl Into<String>) -> ProgramFault {
        ProgramFault {
            node: ctx.node,
            round: ctx.round,
            message: message.into(),
        }
    }

    /// Clears per-trial state and starts a new trial: pick a group uniformly
    /// at random and tell every neighbor.
    fn start_trial(&self, ctx: &mut StepCtx<'_>) -> Action {
        let n = ctx.n;
        ctx.memory.clear_slice(segment_base(n, SEG_NBR_GROUP));
        ctx.memory.clear_slice(segment_base(n, SEG_GOODSTREAM));
        ctx.memory.clear_slice(segment_base(n, SEG_BASES));
        ctx.memory.set(S_MY_IGDEG, 0);
        ctx.memory.set(S_N_COLORABLE, 0);
        ctx.memory.set(S_MY_BASE, 0);
        ctx.memory.set(S_RES_BASE, 0);
        ctx.memory.set(S_RES_EDGES, 0);
        ctx.memory.set(S_GO, 0);
        ctx.memory.set(PHASE_BREAK_ROUND, 0);
        ctx.memory.set(PHASE_TRIAL_ROUND, ctx.round as Word);
        let trials = ctx.memory.get(S_TRIALS);
        ctx.memory.set(S_TRIALS, trials + 1);

        let delta = ctx.memory.get(S_DELTA) as u32;
        let groups = self.group_count(delta) as u64;
        let my_group = 1 + ctx.rng.below(groups);
        ctx.memory.set(S_MY_GROUP, my_group);

        let nbrs = ctx.memory.read_slice(segment_base(n, ADJ_SEGMENT));
        if nbrs.is_empty() {
            Action::Idle
        } else {
            Action::Unicast(
                nbrs.iter()
                    .map(|&v| (v as NodeId, vec![my_group]))
                    .collect(),
            )
        }
    }

    /// Reads the colorable stream assembled in memory: `(indices, count)`.
    fn read_stream(&self, ctx: &mut StepCtx<'_>) -> Vec<u32> {
        let base = segment_base(ctx.n, SEG_GOODSTREAM);
        let len = ctx.memory.get(base);
        let mut words = Vec::with_capacity(len as usize);
        for i in 0..len {
            words.push(ctx.memory.get(base + 1 + i) - 1); // stored +1
        }
        let count = words.first().copied().unwrap_or(0) as usize;
        words
            .iter()
            .skip(1)
            .take(count)
            .map(|&w| w as u32)
            .collect()
    }

    fn append_stream(&self, ctx: &mut StepCtx<'_>, payload: &[Word]) {
        let base = segment_base(ctx.n, SEG_GOODSTREAM);
        let mut len = ctx.memory.get(base);
        for &w in payload {
            ctx.memory.set(base + 1 + len, w + 1);
            len += 1;
        }
        ctx.memory.set(base, len);
    }

    /// My group's position in the colorable list, if colorable.
    fn colorable_index(colorable: &[u32], group: u32) -> Option<usize> {
        colorable.iter().position(|&k| k == group)
    }

    /// Residual-internal edges owned by this node (counting each edge at its
    /// smaller endpoint).
    fn my_residual_edges(&self, ctx: &mut StepCtx<'_>, colorable: &[u32]) -> Vec<(NodeId, NodeId)> {
        let n = ctx.n;
        let my_group = ctx.memory.get(S_MY_GROUP) as u32;
        if Self::colorable_index(colorable, my_group).is_some() {
            return Vec::new();
        }
        let nbrs = ctx.memory.read_slice(segment_base(n, ADJ_SEGMENT));
        let ngroups = ctx.memory.read_slice(segment_base(n, SEG_NBR_GROUP));
        let mut edges = Vec::new();
        for (i, &v) in nbrs.iter().enumerate() {
            let vg = ngroups[i] as u32;
            if ctx.node < v as NodeId && Self::colorable_index(colorable, vg).is_none() {
                edges.push((ctx.node, v as NodeId));
            }
        }
        edges
    }

    /// In-group edges owned by this node.
    fn my_group_edges(&self, ctx: &mut StepCtx<'_>) -> Vec<(NodeId, NodeId)> {
        let n = ctx.n;
        let my_group = ctx.memory.get(S_MY_GROUP);
        let nbrs = ctx.memory.read_slice(segment_base(n, ADJ_SEGMENT));
        let ngroups = ctx.memory.read_slice(segment_base(n, SEG_NBR_GROUP));
        let mut edges = Vec::new();
        for (i, &v) in nbrs.iter().enumerate() {
            if ngroups[i] == my_group && ctx.node < v as NodeId {
                edges.push((ctx.node, v as NodeId));
            }
        }
        edges
    }

    /// Collects a shipped fragment from the routed inbox, materializing it
    /// in the scratch segment so the memory accounting sees the working set,
    /// then clears the scratch.
    fn read_fragment(&self, ctx: &mut StepCtx<'_>) -> Result<SubgraphFragment, ProgramFault> {
        let ship = segment_base(ctx.n, SEG_SHIP);
        let mut cursor = 0u64;
        let mut members = Vec::new();
        let mut edges = Vec::new();
        for msgs in ctx.inbox.unicast.values() {
            for payload in msgs {
                for &w in payload {
                    ctx.memory.set(ship + 1 + cursor, w + 1);
                    cursor += 1;
                }
                match payload.first().copied() {
                    Some(TAG_MEMBER) if payload.len() == 2 => {
                        members.push(payload[1] as NodeId);
                    }
                    Some(TAG_EDGE) if payload.len() == 3 => {
                        edges.push((payload[1] as NodeId, payload[2] as NodeId));
                    }
                    _ => {
                        return Err(self.fault(ctx, format!("bad fragment message {payload:?}")));
                    }
                }
            }
        }
        ctx.memory.set(ship, cursor);
        ctx.memory.clear_slice(ship);
        members.sort_unstable();
        members.dedup();
        edges.sort_unstable();
        Ok(SubgraphFragment { members, edges })
    }
}

impl CcProgram for HighDegProgram {
    fn step(&self, ctx: &mut StepCtx<'_>) -> Result<Action, ProgramFault> {
        let n = ctx.n;
        debug_assert_eq!(n, self.n);

        if n == 1 {
            // Single node: color 1, no communication.
            return Ok(Action::Halt(vec![1, 1, 0, 0, 0]));
        }

        // Round 1: everyone broadcasts its degree.
        if ctx.round == 1 {
            let deg = ctx.memory.get(segment_base(n, ADJ_SEGMENT));
            return Ok(Action::Broadcast(vec![deg]));
        }

        // Round 2: learn the maximum degree, then start the first trial.
        if ctx.round == 2 {
            let mut delta = ctx.memory.get(segment_base(n, ADJ_SEGMENT));
            for payload in ctx.inbox.broadcast.values() {
                delta = delta.max(payload[0]);
            }
            ctx.memory.set(S_DELTA, delta);
            return Ok(self.start_trial(ctx));
        }

        let break_round = ctx.memory.get(PHASE_BREAK_ROUND) as u32;
        let delta = ctx.memory.get(S_DELTA) as u32;
        let group_count = self.group_count(delta);

        if break_round == 0 {
            let trial_round = ctx.memory.get(PHASE_TRIAL_ROUND) as u32;
            match ctx.round - trial_round {
                // Store neighbor groups, compute in-group degree, report to
                // node 1.
                1 => {
                    let adj = segment_base(n, ADJ_SEGMENT);
                    let nbrs = ctx.memory.read_slice(adj);
                    let my_group = ctx.memory.get(S_MY_GROUP);
                    let mut groups = Vec::with_capacity(nbrs.len());
                    let mut igdeg = 0u64;
                    for &v in &nbrs {
                        let g = ctx
                            .inbox
                            .single_from(v as NodeId)
                            .ok_or_else(|| self.fault(ctx, format!("no group from {v}")))?[0];
                        groups.push(g);
                        if g == my_group {
                            igdeg += 1;
                        }
                    }
                    ctx.memory
                        .write_slice(segment_base(n, SEG_NBR_GROUP), &groups);
                    ctx.memory.set(S_MY_IGDEG, igdeg);
                    if ctx.node == 1 {
                        Ok(Action::Idle)
                    } else {
                        Ok(Action::Unicast(vec![(1, vec![my_group, igdeg])]))
                    }
                }
                // Node 1 classifies the trial and broadcasts the verdict.
                2 => {
                    if ctx.node != 1 {
                        return Ok(Action::Idle);
                    }
                    let mut reports: Vec<(NodeId, u32, u32)> = vec![(
                        1,
                        ctx.memory.get(S_MY_GROUP) as u32,
                        ctx.memory.get(S_MY_IGDEG) as u32,
                    )];
                    for u in 2..=n {
                        let payload = ctx
                            .inbox
                            .single_from(u)
                            .ok_or_else(|| self.fault(ctx, format!("no report from {u}")))?;
                        reports.push((u, payload[0] as u32, payload[1] as u32));
                    }
                    let report = classify_groups(&reports, n, group_count)
                        .map_err(|e| self.fault(ctx, e))?;

                    if !trial_succeeded(report.bad_count, self.beta) {
                        if ctx.memory.get(S_TRIALS) >= self.max_trials as u64 {
                            return Err(self.fault(ctx, "trial limit exceeded"));
                        }
                        return Ok(Action::Broadcast(vec![VERDICT_CONTINUE]));
                    }

                    // Success: groups that are good *and* fit the palette
                    // window get colored locally; everything else joins the
                    // residual. Palette windows are packed tightly from the
                    // exact per-group maximum degrees.
                    ctx.memory.set(S_MAX_IGDEG, {
                        report.groups.iter().map(|g| g.max_igdeg).max().unwrap_or(0) as Word
                    });
                    let colorable: Vec<&GroupStats> = report
                        .groups
                        .iter()
                        .filter(|g| g.good && g.max_igdeg <= 5 * self.beta)
                        .collect();
                    let mut stream = vec![colorable.len() as Word];
                    stream.extend(colorable.iter().map(|g| g.group as Word));
                    let sbase = segment_base(n, SEG_GOODSTREAM);
                    ctx.memory.set(sbase, stream.len() as Word);
                    for (i, &w) in stream.iter().enumerate() {
                        ctx.memory.set(sbase + 1 + i as u64, w + 1);
                    }
                    let bbase = segment_base(n, SEG_BASES);
                    let mut running: Word = 0;
                    let mut bases = Vec::with_capacity(colorable.len());
                    for g in &colorable {
                        bases.push(running);
                        running += g.max_igdeg as Word + 1;
                    }
                    ctx.memory.set(bbase, bases.len() as Word);
                    for (i, &b) in bases.iter().enumerate() {
                        ctx.memory.set(bbase + 1 + i as u64, b + 1);
                    }
                    ctx.memory.set(S_RES_BASE, running + 1);
                    ctx.memory.set(S_N_COLORABLE, colorable.len() as Word);
                    Ok(Action::Broadcast(vec![VERDICT_BREAK]))
                }
                // Verdict read: continue the loop or enter the break path.
                3 => {
                    let verdict = if ctx.node == 1 {
                        if ctx.memory.get(S_N_COLORABLE) != 0 || ctx.memory.get(S_RES_BASE) != 0 {
                            VERDICT_BREAK
                        } else {
                            VERDICT_CONTINUE
                        }
                    } else {
                        ctx.inbox
                            .broadcast
                            .get(&1)
                            .ok_or_else(|| self.fault(ctx, "no verdict"))?[0]
                    };
                    if verdict == VERDICT_CONTINUE {
                        return Ok(self.start_trial(ctx));
                    }
                    ctx.memory.set(PHASE_BREAK_ROUND, ctx.round as Word);
                    if ctx.node == 1 {
                        // First stream chunk goes out immediately.
                        let stream_len = ctx.memory.get(segment_base(n, SEG_GOODSTREAM)) as usize;
                        let take = stream_len.min(self.msg_word_budget);
                        let mut payload = Vec::with_capacity(take);
                        for i in 0..take {
                            let w = ctx
                                .memory
                                .get(segment_base(n, SEG_GOODSTREAM) + 1 + i as u64);
                            payload.push(w - 1);
                        }
                        Ok(Action::Broadcast(payload))
                    } else {
                        Ok(Action::Idle)
                    }
                }
                d => Err(self.fault(ctx, format!("unexpected trial offset {d}"))),
            }
        } else {
            let e = ctx.round - break_round;
            let chunks = self.chunk_rounds(delta);
            let route_rounds = self.route_rounds;

            // Chunk relay: node 1 emits chunk e, everyone else appends the
            // chunk received this round.
            if e < chunks {
                if ctx.node == 1 {
                    let sbase = segment_base(n, SEG_GOODSTREAM);
                    let stream_len = ctx.memory.get(sbase) as usize;
                    let lo = e as usize * self.msg_word_budget;
                    let hi = ((e as usize + 1) * self.msg_word_budget).min(stream_len);
                    let mut payload = Vec::new();
                    for i in lo..hi.max(lo) {
                        payload.push(ctx.memory.get(sbase + 1 + i as u64) - 1);
                    }
                    return Ok(Action::Broadcast(payload));
                }
                if let Some(chunk) = ctx.inbox.broadcast.get(&1) {
                    let chunk = chunk.clone();
                    self.append_stream(ctx, &chunk);
                }
                return Ok(Action::Idle);
            }

            // Stream complete: residual members report their edge counts to
            // the collector, node 1 hands palette bases to the recipients.
            if e == chunks {
                if ctx.node != 1 {
                    if let Some(chunk) = ctx.inbox.broadcast.get(&1) {
                        let chunk = chunk.clone();
                        self.append_stream(ctx, &chunk);
                    }
                }
                let colorable = self.read_stream(ctx);
                let my_group = ctx.memory.get(S_MY_GROUP) as u32;
                let is_residual = Self::colorable_index(&colorable, my_group).is_none();
                let collector = self.collector();

                let mut msgs: Vec<(NodeId, Vec<Word>)> = Vec::new();
                if ctx.node == 1 {
                    // Bases to recipients; residual base (and node 1's own
                    // residual count, merged to keep one message per pair)
                    // to the collector.
                    let bbase = segment_base(n, SEG_BASES);
                    let count = ctx.memory.get(bbase);
                    for j in 0..count {
                        let base = ctx.memory.get(bbase + 1 + j) - 1;
                        let recipient = (j + 1) as NodeId;
                        if recipient == 1 {
                            ctx.memory.set(S_MY_BASE, base + 1);
                        } else {
                            msgs.push((recipient, vec![base]));
                        }
                    }
                    let res_base = ctx.memory.get(S_RES_BASE) - 1;
                    let own_res = if is_residual {
                        self.my_residual_edges(ctx, &colorable).len() as Word
                    } else {
                        0
                    };
                    let has_own = if is_residual { 1 } else { 0 };
                    msgs.push((collector, vec![res_base, has_own, own_res]));
                } else if is_residual {
                    let count = self.my_residual_edges(ctx, &colorable).len() as Word;
                    if ctx.node == collector {
                        ctx.memory.set(S_RES_EDGES, count + 1);
                    } else {
                        msgs.push((collector, vec![count]));
                    }
                }
                if msgs.is_empty() {
                    return Ok(Action::Idle);
                }
                return Ok(Action::Unicast(msgs));
            }

            // Recipients store their palette base; the collector checks the
            // residual size against the cap and the routing capacity and
            // broadcasts go/restart.
            if e == chunks + 1 {
                let collector = self.collector();
                if ctx.node == collector {
                    let mut res_edges: u64 = 0;
                    let mut res_nodes: u64 = 0;
                    if ctx.memory.get(S_RES_EDGES) != 0 {
                        res_edges += ctx.memory.get(S_RES_EDGES) - 1;
                        res_nodes += 1;
                    }
                    for (&src, msgs) in ctx.inbox.unicast.iter() {
                        for payload in msgs {
                            if src == 1 && payload.len() == 3 {
                                ctx.memory.set(S_RES_BASE, payload[0] + 1);
                                if payload[1] == 1 {
                                    res_edges += payload[2];
                                    res_nodes += 1;
                                }
                            } else if payload.len() == 1 {
                                res_edges += payload[0];
                                res_nodes += 1;
                            } else {
                                return Err(
                                    self.fault(ctx, format!("bad residual report {payload:?}"))
                                );
                            }
                        }
                    }
                    ctx.memory.set(S_RES_EDGES, res_edges + 1);
                    let capacity = self.route_capacity_factor * n as u64;
                    // Member announcements are 2 words, edge messages 3.
                    let inbound_words = 2 * res_nodes + 3 * res_edges;
                    let ok = res_edges <= self.residual_cap(delta) && inbound_words <= capacity;
                    let verdict = if ok { VERDICT_GO } else { VERDICT_RESTART };
                    ctx.memory.set(S_GO, verdict + 1);
                    return Ok(Action::Broadcast(vec![verdict]));
                }
                if ctx.node == 1 {
                    // Node 1's own base arrived locally at the previous step.
                } else if let Some(payload) = ctx.inbox.single_from(1) {
                    ctx.memory.set(S_MY_BASE, payload[0] + 1);
                }
                return Ok(Action::Idle);
            }

            // Go/restart read; on go, ship fragments through the router.
            if e == chunks + 2 {
                let collector = self.collector();
                let verdict = if ctx.node == collector {
                    ctx.memory.get(S_GO) - 1
                } else {
                    ctx.inbox
                        .broadcast
                        .get(&collector)
                        .ok_or_else(|| self.fault(ctx, "no go/restart verdict"))?[0]
                };
                if verdict == VERDICT_RESTART {
                    if ctx.node == 1 {
                        let restarts = ctx.memory.get(S_RESTARTS);
                        ctx.memory.set(S_RESTARTS, restarts + 1);
                    }
                    if ctx.memory.get(S_TRIALS) >= self.max_trials as u64 {
                        return Err(self.fault(ctx, "trial limit exceeded after restart"));
                    }
                    return Ok(self.start_trial(ctx));
                }
                let colorable = self.read_stream(ctx);
                let my_group = ctx.memory.get(S_MY_GROUP) as u32;
                let (dst, edges) = match Self::colorable_index(&colorable, my_group) {
                    Some(j) => ((j + 1) as NodeId, self.my_group_edges(ctx)),
                    None => (collector, self.my_residual_edges(ctx, &colorable)),
                };
                let mut batch: Vec<(NodeId, Vec<Word>)> =
                    vec![(dst, vec![TAG_MEMBER, ctx.node as Word])];
                for (u, v) in edges {
                    batch.push((dst, vec![TAG_EDGE, u as Word, v as Word]));
                }
                return Ok(Action::Route(batch));
            }

            // In-flight rounds while the router delivers.
            if e < chunks + 2 + route_rounds {
                return Ok(Action::Idle);
            }

            // Fragments delivered: recipients and the collector color their
            // subgraphs and notify every member.
            if e == chunks + 2 + route_rounds {
                let collector = self.collector();
                let colorable = self.read_stream(ctx);
                let n_colorable = colorable.len() as u64;
                let is_recipient = (ctx.node as u64) <= n_colorable;
                let is_collector = ctx.node == collector;
                if !is_recipient && !is_collector {
                    return Ok(Action::Idle);
                }
                let fragment = self.read_fragment(ctx)?;
                if !is_collector && fragment.edges.len() > n as usize {
                    // a group shipped for local coloring must be good
                    return Err(self.fault(
                        ctx,
                        format!("shipped group has {} edges on {n} nodes", fragment.edges.len()),
                    ));
                }
                let base = if is_collector && !is_recipient {
                    ctx.memory.get(S_RES_BASE) - 1
                } else if ctx.memory.get(S_MY_BASE) != 0 {
                    ctx.memory.get(S_MY_BASE) - 1
                } else {
                    return Err(self.fault(ctx, "recipient without palette base"));
                };
                let colors = color_subgraph_greedy(&fragment, base);
                let mut msgs: Vec<(NodeId, Vec<Word>)> = Vec::new();
                let mut sent_to_one = false;
                for (&m, &c) in &colors {
                    if m == ctx.node {
                        ctx.memory.set(S_MY_COLOR, c);
                    } else if is_collector && m == 1 {
                        let res_edges = ctx.memory.get(S_RES_EDGES) - 1;
                        msgs.push((1, vec![res_edges, 1, c]));
                        sent_to_one = true;
                    } else {
                        msgs.push((m, vec![c]));
                    }
                }
                if is_collector && !sent_to_one && ctx.node != 1 {
                    let res_edges = ctx.memory.get(S_RES_EDGES).max(1) - 1;
                    msgs.push((1, vec![res_edges, 0, 0]));
                }
                if msgs.is_empty() {
                    return Ok(Action::Idle);
                }
                return Ok(Action::Unicast(msgs));
            }

            // Final round: read the assigned color and halt.
            if e == chunks + 3 + route_rounds {
                let collector = self.collector();
                let mut color = ctx.memory.get(S_MY_COLOR);
                let mut res_edges = 0;
                if ctx.node == 1 {
                    if ctx.node == collector {
                        res_edges = ctx.memory.get(S_RES_EDGES).max(1) - 1;
                    }
                    for (&src, msgs) in ctx.inbox.unicast.iter() {
                        for payload in msgs {
                            if src == collector && payload.len() == 3 {
                                res_edges = payload[0];
                                if payload[1] == 1 {
                                    color = payload[2];
                                }
                            } else if payload.len() == 1 {
                                color = payload[0];
                            } else {
                                return Err(
                                    self.fault(ctx, format!("bad color message {payload:?}"))
                                );
                            }
                        }
                    }
                } else if color == 0 {
                    let mut found = None;
                    for msgs in ctx.inbox.unicast.values() {
                        for payload in msgs {
                            if payload.len() == 1 {
                                found = Some(payload[0]);
                            }
                        }
                    }
                    color = found.ok_or_else(|| self.fault(ctx, "no color assigned"))?;
                }
                if color == 0 {
                    return Err(self.fault(ctx, "halting uncolored"));
                }
                if ctx.node == 1 {
                    let trials = ctx.memory.get(S_TRIALS);
                    let restarts = ctx.memory.get(S_RESTARTS);
                    let max_igdeg = ctx.memory.get(S_MAX_IGDEG);
                    return Ok(Action::Halt(vec![
                        color, trials, restarts, res_edges, max_igdeg,
                    ]));
                }
                return Ok(Action::Halt(vec![color]));
            }

            Err(self.fault(ctx, format!("unexpected break offset {e}")))
        }
    }
}

/// Decoded result of a completed run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HighDegOutcome {
    pub coloring: Coloring,
    pub trials: u64,
    pub restarts: u64,
    pub residual_edges: u64,
    pub max_igdeg: u64,
}

impl HighDegOutcome {
    pub fn from_outputs(outputs: &BTreeMap<NodeId, Vec<Word>>) -> Result<Self, String> {
        let mut coloring = Coloring::new();
        let mut trials = 0;
        let mut restarts = 0;
        let mut residual_edges = 0;
        let mut max_igdeg = 0;
        for (&u, words) in outputs {
            let color = *words
                .first()
                .ok_or_else(|| format!("node {u}: empty output"))?;
            if color == 0 {
                return Err(format!("node {u}: zero color"));
            }
            coloring.set(u, color);
            if u == 1 {
                if words.len() != 5 {
                    return Err(format!(
                        "node 1: expected 5 output words, got {}",
                        words.len()
                    ));
                }
                trials = words[1];
                restarts = words[2];
                residual_edges = words[3];
                max_igdeg = words[4];
            } else if words.len() != 1 {
                return Err(format!("node {u}: expected 1 output word"));
            }
        }
        Ok(HighDegOutcome {
            coloring,
            trials,
            restarts,
            residual_edges,
            max_igdeg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cc::{run_cc, CcConfig};
    use crate::graph::Graph;

    fn run(g: &Graph, beta: u32, seed: u64) -> HighDegOutcome {
        let config = CcConfig::default();
        let program = HighDegProgram::new(g.n(), beta, &config);
        let run = run_cc(&program, g, seed, &config).expect("run completes");
        HighDegOutcome::from_outputs(&run.outputs).expect("outputs decode")
    }

    #[test]
    fn trial_predicate_boundaries() {
        assert!(trial_succeeded(0, 1));
        assert!(trial_succeeded(0, 9));
        assert!(trial_succeeded(18, 9));
        assert!(!trial_succeeded(19, 9));
        assert!(trial_succeeded(2, 1));
        assert!(!trial_succeeded(3, 1));
    }

    #[test]
    fn classify_single_edge_group() {
        let reports = vec![(1, 1, 1), (2, 1, 1)];
        let report = classify_groups(&reports, 8, 1).unwrap();
        assert_eq!(report.groups[0].edges, 1);
        assert_eq!(report.groups[0].nodes, 2);
        assert!(report.groups[0].good);
    }

    #[test]
    fn classify_threshold_group() {
        // Sum of in-group degrees 2(n+1) -> n+1 edges -> not good.
        let n = 4u32;
        let reports = vec![(1, 1, 4), (2, 1, 2), (3, 1, 2), (4, 1, 2)];
        let report = classify_groups(&reports, n, 1).unwrap();
        assert_eq!(report.groups[0].edges, (n as u64) + 1);
        assert!(!report.groups[0].good);
        assert_eq!(report.bad_count, 1);
    }

    #[test]
    fn classify_rejects_odd_sum() {
        let reports = vec![(1, 1, 1)];
        assert!(classify_groups(&reports, 4, 1).is_err());
    }

    #[test]
    fn classify_matches_bruteforce_on_random_partitions() {
        use crate::rng::DetRng;
        for seed in 0..30 {
            let g = Graph::generate(128, 0.3, seed);
            let mut rng = DetRng::for_label(seed, "partition");
            let group_count = 8u32;
            let groups: BTreeMap<NodeId, u32> = g
                .nodes()
                .map(|u| (u, 1 + rng.below(group_count as u64) as u32))
                .collect();
            let reports: Vec<(NodeId, u32, u32)> = g
                .nodes()
                .map(|u| {
                    let igdeg = g
                        .neighbors(u)
                        .iter()
                        .filter(|&&v| groups[&v] == groups[&u])
                        .count();
                    (u, groups[&u], igdeg as u32)
                })
                .collect();
            let report = classify_groups(&reports, g.n(), group_count).unwrap();
            // Brute-force oracle: build each induced subgraph directly.
            for k in 1..=group_count {
                let members: BTreeSet<NodeId> = g.nodes().filter(|u| groups[u] == k).collect();
                let edges = g
                    .edges()
                    .iter()
                    .filter(|(u, v)| members.contains(u) && members.contains(v))
                    .count() as u64;
                let stats = &report.groups[(k - 1) as usize];
                assert_eq!(stats.edges, edges, "seed {seed} group {k}");
                assert_eq!(stats.nodes, members.len() as u32);
                assert_eq!(stats.good, edges <= g.n() as u64);
            }
        }
    }

    #[test]
    fn greedy_path_uses_two_colors() {
        let frag = SubgraphFragment {
            members: vec![1, 2, 3],
            edges: vec![(1, 2), (2, 3)],
        };
        let colors = color_subgraph_greedy(&frag, 0);
        assert_eq!(colors[&1], 1);
        assert_eq!(colors[&2], 2);
        assert_eq!(colors[&3], 1);
    }

    #[test]
    fn greedy_clique_uses_window() {
        let frag = SubgraphFragment {
            members: vec![1, 2, 3, 4],
            edges: vec![(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)],
        };
        let colors = color_subgraph_greedy(&frag, 10);
        let got: BTreeSet<Word> = colors.values().copied().collect();
        assert_eq!(got, BTreeSet::from([11, 12, 13, 14]));
    }

    #[test]
    fn empty_graph_exits_first_trial() {
        let g = Graph::empty(16);
        let outcome = run(&g, 4, 3);
        assert_eq!(outcome.trials, 1);
        assert_eq!(outcome.residual_edges, 0);
        outcome.coloring.check_total_proper(&g).unwrap();
        assert_eq!(outcome.coloring.colors_used(), 1);
    }

    #[test]
    fn complete_graph_k5_with_beta_one() {
        let g = Graph::generate(5, 1.0, 1);
        for seed in 0..10 {
            let outcome = run(&g, 1, seed);
            outcome.coloring.check_total_proper(&g).unwrap();
        }
    }

    #[test]
    fn dense_graph_respects_palette_bound() {
        let g = Graph::generate(256, 0.5, 3);
        let beta = 8u32;
        let outcome = run(&g, beta, 3);
        outcome.coloring.check_total_proper(&g).unwrap();
        let delta = g.max_degree();
        let bound = (5 * beta as u64 + 1) * delta.div_ceil(beta) as u64 + delta as u64 + 1;
        assert!(outcome.coloring.max_color() <= bound);
        assert!((outcome.coloring.colors_used() as u64) <= bound);
    }

    #[test]
    fn determinism_across_reruns() {
        let g = Graph::generate(64, 0.4, 9);
        let config = CcConfig::default();
        let program = HighDegProgram::new(g.n(), 6, &config);
        let a = run_cc(&program, &g, 42, &config).unwrap();
        let b = run_cc(&program, &g, 42, &config).unwrap();
        assert_eq!(a.outputs, b.outputs);
        assert_eq!(a.rounds_used, b.rounds_used);
        assert_eq!(a.profile, b.profile);
    }

    #[test]
    fn round_count_is_affine_in_trials() {
        let config = CcConfig::default();
        // Collect (trials, rounds) pairs and check rounds = a + 3 * trials
        // for the implementation constants.
        let g = Graph::generate(64, 0.5, 17);
        let program = HighDegProgram::new(g.n(), 6, &config);
        for seed in 0..20 {
            let run = run_cc(&program, &g, seed, &config).unwrap();
            let outcome = HighDegOutcome::from_outputs(&run.outputs).unwrap();
            if outcome.restarts > 0 {
                continue;
            }
            let delta = g.max_degree();
            let chunks = program.chunk_rounds(delta);
            let expected = 3 * outcome.trials as u32 + chunks + config.route_rounds + 4;
            assert_eq!(run.rounds_used, expected, "seed {seed}");
        }
    }

    #[test]
    fn single_node_graph() {
        let g = Graph::empty(1);
        let outcome = run(&g, 1, 0);
        assert_eq!(outcome.coloring.get(1), Some(1));
    }
}
