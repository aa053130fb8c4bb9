//! Synchronous round-based execution engine on a complete n-node network.
//!
//! Each round, every live node reads the messages delivered to it, performs
//! local computation against its word-addressable memory, and emits one
//! action: per-destination messages, a broadcast, a routed batch, an idle
//! step or a halt. The engine enforces per-message word budgets, the
//! one-message-per-ordered-pair rule, routing capacities, and records a
//! per-round traffic/memory profile.
//!
//! Programs keep *all* state in [`WordMemory`]; the step function must be a
//! pure function of (memory, inbox, per-round random stream). That is the
//! contract that lets the MapReduce backend re-execute the same program from
//! serialized state with bit-identical results.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::graph::Graph;
use crate::rng::DetRng;
use crate::{NodeId, Word};

/// Engine configuration. Word budgets and the routing constants are fixed per
/// run and shared with the MapReduce backend.
#[derive(Debug, Clone)]
pub struct CcConfig {
    /// Hard cap on simulated rounds; exceeding it is an engine fault.
    pub max_rounds: u32,
    /// Per-message payload budget in words (direct sends, broadcasts and
    /// individual routed messages alike).
    pub msg_word_budget: usize,
    /// Rounds charged per routed-batch invocation; payloads become readable
    /// exactly this many rounds after emission.
    pub route_rounds: u32,
    /// Per-invocation routing capacity: each node may source and sink at most
    /// `route_capacity_factor * n` payload words.
    pub route_capacity_factor: u64,
    /// Ceiling on per-step memory operations; a proxy bound on local
    /// computation to catch runaway programs.
    pub max_mem_ops_per_step: u64,
}

impl Default for CcConfig {
    fn default() -> Self {
        CcConfig {
            max_rounds: 10_000,
            msg_word_budget: 4,
            route_rounds: 2,
            route_capacity_factor: 8,
            max_mem_ops_per_step: 200_000_000,
        }
    }
}

/// Segment arithmetic for program memory layouts. Segment 0 is scalar space
/// (32 slots even at n = 1), segment 1 holds the engine-injected adjacency,
/// programs lay out their own tables from segment 2 upward.
pub fn segment_base(n: u32, k: u32) -> u64 {
    1 + k as u64 * (n as u64 + 32)
}

/// Segment index where the engine writes each node's adjacency before round
/// one: `[base] = degree`, `[base + 1 + i]` = i-th neighbor, ascending.
pub const ADJ_SEGMENT: u32 = 1;

/// Sparse word-addressable memory. A word that is zero is absent: writing
/// zero erases, reading an absent address yields zero. This makes state
/// snapshots canonical across backends.
#[derive(Debug, Clone, Default)]
pub struct WordMemory {
    live: BTreeMap<u64, Word>,
    touched: BTreeSet<u64>,
    ops: u64,
}

impl WordMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, addr: u64) -> Word {
        self.ops += 1;
        self.touched.insert(addr);
        self.live.get(&addr).copied().unwrap_or(0)
    }

    /// Read without marking the address as used; for engine/diagnostic code,
    /// not for programs.
    pub fn peek(&self, addr: u64) -> Word {
        self.live.get(&addr).copied().unwrap_or(0)
    }

    pub fn set(&mut self, addr: u64, value: Word) {
        self.ops += 1;
        self.touched.insert(addr);
        if value == 0 {
            self.live.remove(&addr);
        } else {
            self.live.insert(addr, value);
        }
    }

    pub fn begin_round(&mut self) {
        self.touched.clear();
        self.ops = 0;
    }

    pub fn ops(&self) -> u64 {
        self.ops
    }

    /// Addresses used this round: everything touched plus everything still
    /// live (live state must ship between rounds, so it counts as used).
    pub fn used_addresses(&self) -> BTreeSet<u64> {
        let mut all = self.touched.clone();
        all.extend(self.live.keys().copied());
        all
    }

    pub fn live_len(&self) -> usize {
        self.live.len()
    }

    /// Sorted `(address, word)` pairs of live state — the unit shipped
    /// between MapReduce rounds.
    pub fn snapshot(&self) -> Vec<(u64, Word)> {
        self.live.iter().map(|(&a, &w)| (a, w)).collect()
    }

    pub fn from_snapshot(entries: impl IntoIterator<Item = (u64, Word)>) -> Self {
        let mut mem = WordMemory::new();
        for (a, w) in entries {
            if w != 0 {
                mem.live.insert(a, w);
            }
        }
        mem
    }

    // Convenience accessors for length-prefixed arrays.

    pub fn write_slice(&mut self, base: u64, values: &[Word]) {
        self.set(base, values.len() as Word);
        for (i, &v) in values.iter().enumerate() {
            self.set(base + 1 + i as u64, v);
        }
    }

    pub fn read_slice(&mut self, base: u64) -> Vec<Word> {
        let len = self.get(base);
        (0..len).map(|i| self.get(base + 1 + i)).collect()
    }

    pub fn clear_slice(&mut self, base: u64) {
        let len = self.get(base);
        for i in 0..len {
            self.set(base + 1 + i, 0);
        }
        self.set(base, 0);
    }
}

/// Messages readable by a node this round, grouped by sender. Multiple
/// payloads from one sender (routed batches) keep emission order.
#[derive(Debug, Clone, Default)]
pub struct Inbox {
    pub unicast: BTreeMap<NodeId, Vec<Vec<Word>>>,
    pub broadcast: BTreeMap<NodeId, Vec<Word>>,
}

impl Inbox {
    pub fn is_empty(&self) -> bool {
        self.unicast.is_empty() && self.broadcast.is_empty()
    }

    /// Total unicast payload words — the received-message volume that the
    /// lightweight accounting sums (broadcasts are excluded by definition).
    pub fn unicast_words(&self) -> u64 {
        self.unicast
            .values()
            .map(|msgs| msgs.iter().map(|p| p.len() as u64).sum::<u64>())
            .sum()
    }

    /// The single payload sent by `src` this round, if any. Panics if `src`
    /// sent more than one message (use `unicast` directly for routed data).
    pub fn single_from(&self, src: NodeId) -> Option<&[Word]> {
        self.unicast.get(&src).map(|msgs| {
            assert_eq!(msgs.len(), 1, "multiple messages from {src}");
            msgs[0].as_slice()
        })
    }
}

/// What a node does at the end of its local computation for the round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Idle,
    /// At most one message per destination; payloads within the word budget.
    Unicast(Vec<(NodeId, Vec<Word>)>),
    /// Same payload to every other node.
    Broadcast(Vec<Word>),
    /// Batch handed to the routing primitive: many small messages, arbitrary
    /// destinations, delivered `route_rounds` later, capacity-checked.
    Route(Vec<(NodeId, Vec<Word>)>),
    /// Stop participating; `0` words is a valid output.
    Halt(Vec<Word>),
}

/// Execution context handed to a program step.
pub struct StepCtx<'a> {
    pub node: NodeId,
    pub n: u32,
    pub round: u32,
    pub memory: &'a mut WordMemory,
    pub inbox: &'a Inbox,
    pub rng: &'a mut DetRng,
}

/// Fault raised by a program that detected an internal inconsistency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramFault {
    pub node: NodeId,
    pub round: u32,
    pub message: String,
}

/// A program: one pure step function run at every live node every round.
pub trait CcProgram {
    fn step(&self, ctx: &mut StepCtx<'_>) -> Result<Action, ProgramFault>;
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("round limit {0} exceeded before all nodes halted")]
    RoundLimit(u32),
    #[error("node {node} round {round}: message of {words} words exceeds budget {budget}")]
    MessageBudget {
        node: NodeId,
        round: u32,
        words: usize,
        budget: usize,
    },
    #[error("node {node} round {round}: message to self")]
    SelfMessage { node: NodeId, round: u32 },
    #[error("node {node} round {round}: destination {dst} out of range")]
    BadDestination {
        node: NodeId,
        round: u32,
        dst: NodeId,
    },
    #[error("round {round}: two messages for pair ({src}, {dst})")]
    DuplicateMessage {
        src: NodeId,
        dst: NodeId,
        round: u32,
    },
    #[error("round {round}: message from {src} to node {dst}, which already halted")]
    UnicastToHalted {
        src: NodeId,
        dst: NodeId,
        round: u32,
    },
    #[error(
        "node {node} round {round}: routed source volume {words} words exceeds capacity {capacity}"
    )]
    RouteSourceCapacity {
        node: NodeId,
        round: u32,
        words: u64,
        capacity: u64,
    },
    #[error(
        "node {node} round {round}: routed sink volume {words} words exceeds capacity {capacity}"
    )]
    RouteSinkCapacity {
        node: NodeId,
        round: u32,
        words: u64,
        capacity: u64,
    },
    #[error("node {node} round {round}: direct sends mixed into a routed round")]
    MixedRouteRound { node: NodeId, round: u32 },
    #[error("node {node} round {round}: local memory-op ceiling exceeded")]
    LocalOpsExceeded { node: NodeId, round: u32 },
    #[error("node {node} round {round}: {message}")]
    Program {
        node: NodeId,
        round: u32,
        message: String,
    },
}

impl From<ProgramFault> for EngineError {
    fn from(f: ProgramFault) -> Self {
        EngineError::Program {
            node: f.node,
            round: f.round,
            message: f.message,
        }
    }
}

/// Per-round profile record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundProfile {
    pub round: u32,
    /// Sum over nodes of unicast payload words readable this round.
    pub sum_inbox: u64,
    /// Sum over nodes of addresses used this round.
    pub sum_memory: u64,
    /// Largest memory address used by any node this round.
    pub max_node_memory: u64,
    /// Number of broadcast sends this round.
    pub broadcasts: u64,
}

/// Complete run profile, one record per round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LightweightProfile {
    pub rounds: Vec<RoundProfile>,
}

impl LightweightProfile {
    pub fn total_inbox_words(&self) -> u64 {
        self.rounds.iter().map(|r| r.sum_inbox).sum()
    }

    /// JSON lines, one record per round.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rounds {
            out.push_str(&serde_json::to_string(r).expect("profile serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LightweightViolation {
    /// sum_inbox + sum_memory exceeded c_k * k at this round.
    TotalVolume {
        round: u32,
        observed: u64,
        bound: u64,
    },
    /// max_node_memory exceeded c_n * n_bound at this round.
    NodeMemory {
        round: u32,
        observed: u64,
        bound: u64,
    },
}

/// Result of checking a profile against the (K, N) conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LightweightReport {
    pub pass: bool,
    pub first_violation: Option<LightweightViolation>,
    pub k_bound: u64,
    pub n_bound: u64,
}

/// Checks per round that `sum_inbox + sum_memory <= c_k * k` and
/// `max_node_memory <= c_n * n_bound`, reporting the first violation.
pub fn check_lightweight(
    profile: &LightweightProfile,
    k: u64,
    n_bound: u64,
    c_k: u64,
    c_n: u64,
) -> LightweightReport {
    let k_bound = c_k.saturating_mul(k);
    let nb = c_n.saturating_mul(n_bound);
    for r in &profile.rounds {
        let total = r.sum_inbox + r.sum_memory;
        if total > k_bound {
            return LightweightReport {
                pass: false,
                first_violation: Some(LightweightViolation::TotalVolume {
                    round: r.round,
                    observed: total,
                    bound: k_bound,
                }),
                k_bound,
                n_bound: nb,
            };
        }
        if r.max_node_memory > nb {
            return LightweightReport {
                pass: false,
                first_violation: Some(LightweightViolation::NodeMemory {
                    round: r.round,
                    observed: r.max_node_memory,
                    bound: nb,
                }),
                k_bound,
                n_bound: nb,
            };
        }
    }
    LightweightReport {
        pass: true,
        first_violation: None,
        k_bound,
        n_bound: nb,
    }
}

/// Outcome of a completed run.
#[derive(Debug, Clone)]
pub struct CcRun {
    /// Per-node output words, for every node.
    pub outputs: BTreeMap<NodeId, Vec<Word>>,
    /// Completed communication rounds: the final halting step (which only
    /// reads) is not counted, so a program that broadcasts once and then
    /// halts on the reply uses one round.
    pub rounds_used: u32,
    pub profile: LightweightProfile,
}

struct PendingMessage {
    deliver_round: u32,
    src: NodeId,
    dst: NodeId,
    seq: u32,
    payload: Vec<Word>,
}

struct PendingBroadcast {
    deliver_round: u32,
    src: NodeId,
    payload: Vec<Word>,
}

/// Validates the messages of a routed batch from one source and accumulates
/// per-source / per-sink word totals; capacity checks happen once all
/// batches of the round are in (sinks first, then sources).
fn scan_route_batch(
    n: u32,
    src: NodeId,
    round: u32,
    batch: &[(NodeId, Vec<Word>)],
    budget: usize,
    source_words: &mut BTreeMap<NodeId, u64>,
    sink_words: &mut BTreeMap<NodeId, u64>,
) -> Result<(), EngineError> {
    for (dst, payload) in batch {
        if *dst == 0 || *dst > n {
            return Err(EngineError::BadDestination {
                node: src,
                round,
                dst: *dst,
            });
        }
        if payload.len() > budget {
            return Err(EngineError::MessageBudget {
                node: src,
                round,
                words: payload.len(),
                budget,
            });
        }
        *source_words.entry(src).or_insert(0) += payload.len() as u64;
        *sink_words.entry(*dst).or_insert(0) += payload.len() as u64;
    }
    Ok(())
}

fn check_route_capacities(
    round: u32,
    capacity: u64,
    source_words: &BTreeMap<NodeId, u64>,
    sink_words: &BTreeMap<NodeId, u64>,
) -> Result<(), EngineError> {
    for (dst, words) in sink_words {
        if *words > capacity {
            return Err(EngineError::RouteSinkCapacity {
                node: *dst,
                round,
                words: *words,
                capacity,
            });
        }
    }
    for (src, words) in source_words {
        if *words > capacity {
            return Err(EngineError::RouteSourceCapacity {
                node: *src,
                round,
                words: *words,
                capacity,
            });
        }
    }
    Ok(())
}

/// Delivery map of a routed batch: destination -> `(src, payload)` list.
pub type RouteDelivery = BTreeMap<NodeId, Vec<(NodeId, Vec<Word>)>>;

/// Standalone batch-routing primitive: validates the information-distribution
/// capacity precondition and returns the delivery map plus the round cost.
/// `batch` entries are `(src, dst, payload)`.
pub fn lenzen_route(
    n: u32,
    batch: &[(NodeId, NodeId, Vec<Word>)],
    config: &CcConfig,
) -> Result<(RouteDelivery, u32), EngineError> {
    let capacity = config.route_capacity_factor * n as u64;
    let mut by_src: BTreeMap<NodeId, Vec<(NodeId, Vec<Word>)>> = BTreeMap::new();
    for (src, dst, payload) in batch {
        by_src
            .entry(*src)
            .or_default()
            .push((*dst, payload.clone()));
    }
    let mut source_words: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut sink_words: BTreeMap<NodeId, u64> = BTreeMap::new();
    for (src, msgs) in &by_src {
        scan_route_batch(
            n,
            *src,
            0,
            msgs,
            config.msg_word_budget,
            &mut source_words,
            &mut sink_words,
        )?;
    }
    check_route_capacities(0, capacity, &source_words, &sink_words)?;
    let mut delivered = RouteDelivery::new();
    for (src, msgs) in by_src {
        for (dst, payload) in msgs {
            delivered.entry(dst).or_default().push((src, payload));
        }
    }
    Ok((delivered, config.route_rounds))
}

/// Post-computation memory snapshots, one map per round: node -> sorted
/// `(address, word)` pairs of live state.
pub type StateTrace = Vec<BTreeMap<NodeId, Vec<(u64, Word)>>>;

/// Runs `program` on `graph` to completion. Deterministic for fixed
/// `(program, graph, seed, config)`.
pub fn run_cc(
    program: &dyn CcProgram,
    graph: &Graph,
    seed: u64,
    config: &CcConfig,
) -> Result<CcRun, EngineError> {
    run_cc_impl(program, graph, seed, config, None)
}

/// As [`run_cc`], also recording each node's live memory after every
/// round's local computation — the reference the MapReduce backend's
/// shipped state is compared against.
pub fn run_cc_traced(
    program: &dyn CcProgram,
    graph: &Graph,
    seed: u64,
    config: &CcConfig,
) -> Result<(CcRun, StateTrace), EngineError> {
    let mut trace = StateTrace::new();
    let run = run_cc_impl(program, graph, seed, config, Some(&mut trace))?;
    Ok((run, trace))
}

fn run_cc_impl(
    program: &dyn CcProgram,
    graph: &Graph,
    seed: u64,
    config: &CcConfig,
    mut trace: Option<&mut StateTrace>,
) -> Result<CcRun, EngineError> {
    let n = graph.n();
    let mut memories: BTreeMap<NodeId, WordMemory> = BTreeMap::new();
    for u in graph.nodes() {
        let mut mem = WordMemory::new();
        let base = segment_base(n, ADJ_SEGMENT);
        let nbrs: Vec<Word> = graph.neighbors(u).iter().map(|&v| v as Word).collect();
        mem.write_slice(base, &nbrs);
        mem.begin_round();
        memories.insert(u, mem);
    }

    let mut halted: BTreeSet<NodeId> = BTreeSet::new();
    let mut outputs: BTreeMap<NodeId, Vec<Word>> = BTreeMap::new();
    let mut pending_msgs: Vec<PendingMessage> = Vec::new();
    let mut pending_bcasts: Vec<PendingBroadcast> = Vec::new();
    let mut profile = LightweightProfile::default();
    let mut last_halt_round = 0u32;

    let mut round = 0u32;
    while halted.len() < n as usize {
        round += 1;
        if round > config.max_rounds {
            return Err(EngineError::RoundLimit(config.max_rounds));
        }

        // Deliverable messages for this round, grouped per destination.
        let mut inboxes: BTreeMap<NodeId, Inbox> = BTreeMap::new();
        let mut due: Vec<PendingMessage> = Vec::new();
        let mut rest = Vec::with_capacity(pending_msgs.len());
        for m in pending_msgs.drain(..) {
            if m.deliver_round == round {
                due.push(m);
            } else {
                rest.push(m);
            }
        }
        pending_msgs = rest;
        due.sort_by_key(|m| (m.dst, m.src, m.seq));
        for m in due {
            if halted.contains(&m.dst) {
                return Err(EngineError::UnicastToHalted {
                    src: m.src,
                    dst: m.dst,
                    round,
                });
            }
            inboxes
                .entry(m.dst)
                .or_default()
                .unicast
                .entry(m.src)
                .or_default()
                .push(m.payload);
        }
        let mut due_b: Vec<PendingBroadcast> = Vec::new();
        let mut rest_b = Vec::with_capacity(pending_bcasts.len());
        for b in pending_bcasts.drain(..) {
            if b.deliver_round == round {
                due_b.push(b);
            } else {
                rest_b.push(b);
            }
        }
        pending_bcasts = rest_b;
        due_b.sort_by_key(|b| b.src);
        for b in due_b {
            for u in graph.nodes() {
                if u != b.src && !halted.contains(&u) {
                    inboxes
                        .entry(u)
                        .or_default()
                        .broadcast
                        .insert(b.src, b.payload.clone());
                }
            }
        }

        // Step every live node.
        let mut actions: Vec<(NodeId, Action)> = Vec::new();
        let mut sum_inbox = 0u64;
        let mut sum_memory = 0u64;
        let mut max_node_memory = 0u64;
        let mut round_trace: BTreeMap<NodeId, Vec<(u64, Word)>> = BTreeMap::new();
        let empty = Inbox::default();
        for u in graph.nodes() {
            if halted.contains(&u) {
                continue;
            }
            let inbox = inboxes.get(&u).unwrap_or(&empty);
            sum_inbox += inbox.unicast_words();
            let mem = memories.get_mut(&u).expect("live node has memory");
            mem.begin_round();
            let mut rng = DetRng::for_node_round(seed, u, round);
            let mut ctx = StepCtx {
                node: u,
                n,
                round,
                memory: mem,
                inbox,
                rng: &mut rng,
            };
            let action = program.step(&mut ctx)?;
            if mem.ops() > config.max_mem_ops_per_step {
                return Err(EngineError::LocalOpsExceeded { node: u, round });
            }
            let used = mem.used_addresses();
            sum_memory += used.len() as u64;
            if let Some(&max_addr) = used.iter().next_back() {
                max_node_memory = max_node_memory.max(max_addr);
            }
            if trace.is_some() && !matches!(action, Action::Halt(_)) {
                round_trace.insert(u, mem.snapshot());
            }
            actions.push((u, action));
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(round_trace);
        }

        // Apply actions: validate, enqueue deliveries, process halts.
        let route_round = actions.iter().any(|(_, a)| matches!(a, Action::Route(_)));
        let mut broadcasts = 0u64;
        let mut pair_seen: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        let mut source_words: BTreeMap<NodeId, u64> = BTreeMap::new();
        let mut sink_words: BTreeMap<NodeId, u64> = BTreeMap::new();
        let capacity = config.route_capacity_factor * n as u64;
        for (u, action) in actions {
            match action {
                Action::Idle => {}
                Action::Halt(words) => {
                    outputs.insert(u, words);
                    halted.insert(u);
                    memories.remove(&u);
                    last_halt_round = last_halt_round.max(round);
                }
                Action::Unicast(msgs) => {
                    if route_round {
                        return Err(EngineError::MixedRouteRound { node: u, round });
                    }
                    let mut sorted = msgs;
                    sorted.sort_by_key(|(dst, _)| *dst);
                    for (seq, (dst, payload)) in sorted.into_iter().enumerate() {
                        if dst == 0 || dst > n {
                            return Err(EngineError::BadDestination {
                                node: u,
                                round,
                                dst,
                            });
                        }
                        if dst == u {
                            return Err(EngineError::SelfMessage { node: u, round });
                        }
                        if payload.len() > config.msg_word_budget {
                            return Err(EngineError::MessageBudget {
                                node: u,
                                round,
                                words: payload.len(),
                                budget: config.msg_word_budget,
                            });
                        }
                        if !pair_seen.insert((u, dst)) {
                            return Err(EngineError::DuplicateMessage { src: u, dst, round });
                        }
                        pending_msgs.push(PendingMessage {
                            deliver_round: round + 1,
                            src: u,
                            dst,
                            seq: seq as u32,
                            payload,
                        });
                    }
                }
                Action::Broadcast(payload) => {
                    if route_round {
                        return Err(EngineError::MixedRouteRound { node: u, round });
                    }
                    if payload.len() > config.msg_word_budget {
                        return Err(EngineError::MessageBudget {
                            node: u,
                            round,
                            words: payload.len(),
                            budget: config.msg_word_budget,
                        });
                    }
                    broadcasts += 1;
                    pending_bcasts.push(PendingBroadcast {
                        deliver_round: round + 1,
                        src: u,
                        payload,
                    });
                }
                Action::Route(batch) => {
                    scan_route_batch(
                        n,
                        u,
                        round,
                        &batch,
                        config.msg_word_budget,
                        &mut source_words,
                        &mut sink_words,
                    )?;
                    for (seq, (dst, payload)) in batch.into_iter().enumerate() {
                        pending_msgs.push(PendingMessage {
                            deliver_round: round + config.route_rounds,
                            src: u,
                            dst,
                            seq: seq as u32,
                            payload,
                        });
                    }
                }
            }
        }
        check_route_capacities(round, capacity, &source_words, &sink_words)?;

        profile.rounds.push(RoundProfile {
            round,
            sum_inbox,
            sum_memory,
            max_node_memory,
            broadcasts,
        });
    }

    Ok(CcRun {
        outputs,
        rounds_used: last_halt_round.saturating_sub(1),
        profile,
    })
}
