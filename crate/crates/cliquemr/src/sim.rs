//! Mechanical re-execution of clique programs on the MapReduce engine.
//!
//! An initialization stage (four MapReduce rounds) turns the unordered
//! node/edge input into per-node packages placed by a partition function
//! computed from node degrees. From then on each clique round costs exactly
//! three MapReduce rounds: the local computations run once to measure state
//! sizes and per-destination message volumes, the measurements are
//! aggregated and replicated so every reducer can evaluate the next
//! partition function, and the local computations run a second time to emit
//! the re-keyed state, message and broadcast tuples. Outputs are
//! bit-identical to the clique engine because node steps are pure functions
//! of (memory, inbox, per-round stream), and all three are reconstructed
//! exactly from tuples.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::cc::{
    segment_base, Action, CcProgram, Inbox, ProgramFault, StepCtx, WordMemory, ADJ_SEGMENT,
};
use crate::graph::Graph;
use crate::mr::{run_mr_round, KVTuple, MrConfig, MrError, ReduceCtx, RoundMetrics};
use crate::rng::{derive_subseed, DetRng};
use crate::words::{pack_pair, pack_route, unpack_pair, unpack_route};
use crate::{NodeId, Word};

// Tuple kinds, always the first value word.
const T_NODE: Word = 1;
const T_EDGE: Word = 2;
const T_DEGREE: Word = 3;
const T_PARTIAL: Word = 4;
const T_STATE: Word = 5;
const T_MSG: Word = 6;
const T_BCAST: Word = 7;
const T_SIZE: Word = 8;
const T_COUNT: Word = 9;
const T_AGG: Word = 10;
const T_META: Word = 11;
const T_OUTPUT: Word = 12;
/// Routing prefix: `[FWD, final_key, inner tuple...]`; the next map phase
/// strips it and re-keys the tuple to `final_key`.
const T_FWD: Word = 13;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] MrError),
    #[error("node {0} carries load {1}, above the part budget")]
    SingleLoadExceedsBudget(NodeId, u64),
    #[error("partition needs {needed} parts, only {machines} machines")]
    InfeasiblePartition { needed: u32, machines: u32 },
    #[error("initialization balancing failed after {0} attempts")]
    InitRetriesExhausted(u32),
    #[error("node {node} round {round}: {message}")]
    Program {
        node: NodeId,
        round: u32,
        message: String,
    },
    #[error("simulation fault: {0}")]
    Fault(String),
}

impl From<ProgramFault> for SimError {
    fn from(f: ProgramFault) -> Self {
        SimError::Program {
            node: f.node,
            round: f.round,
            message: f.message,
        }
    }
}

/// Monotone node-to-part assignment with contiguous ranges and per-part
/// loads within the budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionFunction {
    assignment: Vec<u32>, // index 0 unused
    parts: u32,
}

impl PartitionFunction {
    pub fn part_of(&self, node: NodeId) -> u32 {
        self.assignment[node as usize]
    }

    pub fn parts(&self) -> u32 {
        self.parts
    }

    pub fn n(&self) -> u32 {
        self.assignment.len() as u32 - 1
    }
}

/// Evaluates the defining recurrence: nodes in id order, node x joins the
/// current part iff adding its load keeps the part within `budget`,
/// otherwise it opens the next part.
pub fn compute_partition(
    loads: &[u64],
    budget: u64,
    machines: u32,
) -> Result<PartitionFunction, SimError> {
    let n = loads.len();
    let mut assignment = Vec::with_capacity(n + 1);
    assignment.push(0);
    let mut part = 1u32;
    let mut part_load = 0u64;
    for (i, &load) in loads.iter().enumerate() {
        let node = i as NodeId + 1;
        if load > budget {
            return Err(SimError::SingleLoadExceedsBudget(node, load));
        }
        if part_load + load > budget && part_load > 0 {
            part += 1;
            part_load = 0;
        }
        part_load += load;
        assignment.push(part);
    }
    if part > machines {
        return Err(SimError::InfeasiblePartition {
            needed: part,
            machines,
        });
    }
    Ok(PartitionFunction {
        assignment,
        parts: part,
    })
}

/// Graph as unordered MapReduce input: `([], [NODE, u])` and
/// `([], [EDGE, u, v])` tuples.
pub fn graph_to_tuples(g: &Graph) -> Vec<KVTuple> {
    let mut tuples = Vec::with_capacity(g.n() as usize + g.edge_count());
    for u in g.nodes() {
        tuples.push(KVTuple::new(vec![], vec![T_NODE, u as Word]));
    }
    for (u, v) in g.edges() {
        tuples.push(KVTuple::new(vec![], vec![T_EDGE, u as Word, v as Word]));
    }
    tuples
}

/// Deterministic per-tuple balancing key for the randomized load-balance
/// rounds: pure in (salt, round, tuple).
fn balance_key(salt: u64, round: u32, t: &KVTuple, machines: u32) -> Word {
    let mut rng = DetRng::for_node_round(salt, round, 0x5a17);
    let mut h = rng.next_u64();
    for w in t.key.iter().chain(t.value.iter()) {
        h ^= w.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
        h = h.wrapping_mul(0xD134_2543_DE82_EF95).rotate_left(31);
    }
    1 + h % machines as u64
}

fn mod_key(id: Word, machines: u32) -> Word {
    1 + (id - 1) % machines as u64
}

/// Initialization rounds 1..3: randomized balancing with partial degrees,
/// degree aggregation, then degree replication and the first partition
/// function. After round 3 every node/edge tuple carries a routing prefix
/// keyed for its part under the degree partition, and every reducer holds
/// full degree and partition metadata.
fn init_rounds_1_to_3(
    input: Vec<KVTuple>,
    config: &MrConfig,
    salt: u64,
) -> Result<(Vec<KVTuple>, Vec<RoundMetrics>), SimError> {
    let machines = config.machines;
    let mut metrics = Vec::new();

    let map1 = |t: &KVTuple| -> Result<Vec<KVTuple>, MrError> {
        Ok(vec![KVTuple::new(
            vec![balance_key(salt, 1, t, machines)],
            t.value.clone(),
        )])
    };
    let reduce1 = |key: &[Word], values: &[Vec<Word>], _ctx: &mut ReduceCtx| {
        let mut out: Vec<KVTuple> = Vec::new();
        let mut partial: BTreeMap<Word, Word> = BTreeMap::new();
        for v in values {
            out.push(KVTuple::new(key.to_vec(), v.clone()));
            if v[0] == T_EDGE {
                *partial.entry(v[1]).or_insert(0) += 1;
                *partial.entry(v[2]).or_insert(0) += 1;
            }
        }
        for (u, d) in partial {
            out.push(KVTuple::new(key.to_vec(), vec![T_PARTIAL, u, d]));
        }
        Ok(out)
    };
    let (tuples, m) = run_mr_round(input, 1, &map1, &reduce1, config)?;
    metrics.push(m);

    let map2 = |t: &KVTuple| -> Result<Vec<KVTuple>, MrError> {
        let key = match t.value[0] {
            T_PARTIAL => mod_key(t.value[1], machines),
            _ => balance_key(salt, 2, t, machines),
        };
        Ok(vec![KVTuple::new(vec![key], t.value.clone())])
    };
    let reduce2 = |key: &[Word], values: &[Vec<Word>], _ctx: &mut ReduceCtx| {
        let mut out: Vec<KVTuple> = Vec::new();
        let mut degree: BTreeMap<Word, Word> = BTreeMap::new();
        for v in values {
            if v[0] == T_PARTIAL {
                *degree.entry(v[1]).or_insert(0) += v[2];
            } else {
                out.push(KVTuple::new(key.to_vec(), v.clone()));
            }
        }
        for (u, d) in degree {
            out.push(KVTuple::new(key.to_vec(), vec![T_DEGREE, u, d]));
        }
        Ok(out)
    };
    let (tuples, m) = run_mr_round(tuples, 2, &map2, &reduce2, config)?;
    metrics.push(m);

    let n = config.n;
    let part_budget = config.part_budget;
    let partition_err: RefCell<Option<SimError>> = RefCell::new(None);
    let map3 = |t: &KVTuple| -> Result<Vec<KVTuple>, MrError> {
        if t.value[0] == T_DEGREE {
            Ok((1..=machines as Word)
                .map(|r| KVTuple::new(vec![r], t.value.clone()))
                .collect())
        } else {
            Ok(vec![KVTuple::new(
                vec![balance_key(salt, 3, t, machines)],
                t.value.clone(),
            )])
        }
    };
    let reduce3 = |key: &[Word], values: &[Vec<Word>], _ctx: &mut ReduceCtx| {
        let mut loads = vec![0u64; n as usize];
        for v in values {
            if v[0] == T_DEGREE {
                loads[v[1] as usize - 1] = v[2];
            }
        }
        let f0 = match compute_partition(&loads, part_budget, machines) {
            Ok(f0) => f0,
            Err(e) => {
                let msg = e.to_string();
                *partition_err.borrow_mut() = Some(e);
                return Err(MrError::Job {
                    round: 3,
                    message: msg,
                });
            }
        };
        let mut out: Vec<KVTuple> = Vec::new();
        for v in values {
            match v[0] {
                T_NODE => {
                    let fk = f0.part_of(v[1] as NodeId) as Word;
                    out.push(KVTuple::new(key.to_vec(), vec![T_FWD, fk, T_NODE, v[1]]));
                }
                T_EDGE => {
                    for end in [v[1], v[2]] {
                        let fk = f0.part_of(end as NodeId) as Word;
                        out.push(KVTuple::new(
                            key.to_vec(),
                            vec![T_FWD, fk, T_EDGE, v[1], v[2]],
                        ));
                    }
                }
                T_DEGREE => out.push(KVTuple::new(key.to_vec(), v.clone())),
                other => {
                    return Err(MrError::Job {
                        round: 3,
                        message: format!("unexpected tuple kind {other}"),
                    })
                }
            }
        }
        for u in 1..=n {
            out.push(KVTuple::new(
                key.to_vec(),
                vec![T_META, u as Word, f0.part_of(u) as Word],
            ));
        }
        Ok(out)
    };
    let (tuples, m) = match run_mr_round(tuples, 3, &map3, &reduce3, config) {
        Ok(ok) => ok,
        Err(e) => {
            if let Some(pe) = partition_err.into_inner() {
                return Err(pe);
            }
            return Err(e.into());
        }
    };
    metrics.push(m);
    Ok((tuples, metrics))
}

/// The strip map shared by round 4 and every later block boundary: routing
/// prefixes are removed and the tuple re-keyed to its final part; broadcast
/// tuples are expanded to one copy per machine; everything else passes
/// through unchanged.
fn strip_map(t: &KVTuple, machines: u32) -> Result<Vec<KVTuple>, MrError> {
    match t.value[0] {
        T_FWD => Ok(vec![KVTuple::new(vec![t.value[1]], t.value[2..].to_vec())]),
        T_BCAST => Ok((1..=machines as Word)
            .map(|r| KVTuple::new(vec![r], t.value.clone()))
            .collect()),
        _ => Ok(vec![t.clone()]),
    }
}

/// Standalone initialization stage, exactly four MapReduce rounds: after
/// round 4's map every node/edge tuple is keyed by the degree partition,
/// with degree and partition metadata present once per reducer. Retries the
/// randomized balancing with a derived salt if a round overflows a machine.
pub fn init_stage(
    g: &Graph,
    config: &MrConfig,
    seed: u64,
) -> Result<(Vec<KVTuple>, Vec<RoundMetrics>), SimError> {
    let mut last = None;
    for attempt in 0..3 {
        let salt = derive_subseed(seed, attempt);
        match init_rounds_1_to_3(graph_to_tuples(g), config, salt) {
            Ok((tuples, mut metrics)) => {
                let machines = config.machines;
                let map4 = |t: &KVTuple| strip_map(t, machines);
                let reduce4 = |key: &[Word], values: &[Vec<Word>], _c: &mut ReduceCtx| {
                    Ok(values
                        .iter()
                        .map(|v| KVTuple::new(key.to_vec(), v.clone()))
                        .collect())
                };
                let (tuples, m) = run_mr_round(tuples, 4, &map4, &reduce4, config)?;
                metrics.push(m);
                return Ok((tuples, metrics));
            }
            Err(e @ SimError::Engine(MrError::MemoryCap { .. })) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or(SimError::InitRetriesExhausted(3)))
}

/// Per-node data reconstructed from a reducer's tuple group.
#[derive(Debug, Default, Clone)]
struct NodePackage {
    present: bool,
    halted: bool,
    state: Vec<(u64, Word)>,
    edges: BTreeSet<NodeId>,
    /// (src, seq) -> payload words by index, for messages due this round.
    inbox_msgs: BTreeMap<(NodeId, u32), BTreeMap<u32, Word>>,
}

/// One node's emissions from a simulated local step.
struct StepOutcome {
    new_state: Vec<(u64, Word)>,
    halted: Option<Vec<Word>>,
    /// (dst, deliver_round, seq, payload)
    messages: Vec<(NodeId, u32, u32, Vec<Word>)>,
    broadcast: Option<Vec<Word>>,
}

/// Per-run constants shared by every simulated step.
struct SimEnv<'a> {
    program: &'a dyn CcProgram,
    n: u32,
    seed: u64,
    route_rounds: u32,
}

/// Runs the program step for one node from reconstructed memory and inbox.
fn simulate_node_step(
    env: &SimEnv<'_>,
    node: NodeId,
    cc_round: u32,
    package: &NodePackage,
    broadcasts: &BTreeMap<NodeId, Vec<Word>>,
) -> Result<StepOutcome, SimError> {
    let n = env.n;
    let mut memory = if cc_round == 1 {
        // Initial knowledge: the adjacency segment, exactly as the clique
        // engine injects it.
        let mut mem = WordMemory::new();
        let nbrs: Vec<Word> = package.edges.iter().map(|&v| v as Word).collect();
        mem.write_slice(segment_base(n, ADJ_SEGMENT), &nbrs);
        mem
    } else {
        WordMemory::from_snapshot(package.state.iter().copied())
    };
    memory.begin_round();

    let mut inbox = Inbox::default();
    for (&(src, _seq), words) in &package.inbox_msgs {
        let len = words.len();
        let mut payload = vec![0; len];
        for (&idx, &w) in words {
            if (idx as usize) < len {
                payload[idx as usize] = w;
            } else {
                return Err(SimError::Fault(format!(
                    "message word index {idx} out of range for node {node}"
                )));
            }
        }
        inbox.unicast.entry(src).or_default().push(payload);
    }
    for (&src, payload) in broadcasts {
        if src != node {
            inbox.broadcast.insert(src, payload.clone());
        }
    }

    let mut rng = DetRng::for_node_round(env.seed, node, cc_round);
    let mut ctx = StepCtx {
        node,
        n,
        round: cc_round,
        memory: &mut memory,
        inbox: &inbox,
        rng: &mut rng,
    };
    let action = env.program.step(&mut ctx)?;

    let mut outcome = StepOutcome {
        new_state: memory.snapshot(),
        halted: None,
        messages: Vec::new(),
        broadcast: None,
    };
    match action {
        Action::Idle => {}
        Action::Halt(words) => outcome.halted = Some(words),
        Action::Unicast(mut msgs) => {
            msgs.sort_by_key(|(dst, _)| *dst);
            for (seq, (dst, payload)) in msgs.into_iter().enumerate() {
                outcome
                    .messages
                    .push((dst, cc_round + 1, seq as u32, payload));
            }
        }
        Action::Broadcast(payload) => {
            // zero-word messages deliver nothing on either backend
            if !payload.is_empty() {
                outcome.broadcast = Some(payload);
            }
        }
        Action::Route(batch) => {
            for (seq, (dst, payload)) in batch.into_iter().enumerate() {
                outcome
                    .messages
                    .push((dst, cc_round + env.route_rounds, seq as u32, payload));
            }
        }
    }
    Ok(outcome)
}

/// A reducer's tuple group split into per-node packages plus shared data.
#[derive(Debug, Default)]
struct ReducerView {
    nodes: BTreeMap<NodeId, NodePackage>,
    broadcasts: BTreeMap<NodeId, Vec<Word>>,
    sizes: BTreeMap<NodeId, u64>,
    aggs: BTreeMap<NodeId, u64>,
    /// messages not yet due: (packed src/dst, deliver, seq, widx, word)
    in_flight: Vec<(Word, u32, u32, u32, Word)>,
    outputs: BTreeMap<NodeId, BTreeMap<u32, Word>>,
    output_empty: BTreeSet<NodeId>,
    degrees: Vec<(Word, Word)>,
}

fn parse_group(values: &[Vec<Word>], cc_round: u32) -> Result<ReducerView, SimError> {
    let mut view = ReducerView::default();
    for v in values {
        match v[0] {
            T_NODE => {
                view.nodes.entry(v[1] as NodeId).or_default().present = true;
            }
            T_EDGE => {
                let (a, b) = (v[1] as NodeId, v[2] as NodeId);
                view.nodes.entry(a).or_default().edges.insert(b);
                view.nodes.entry(b).or_default().edges.insert(a);
            }
            T_STATE => {
                view.nodes
                    .entry(v[1] as NodeId)
                    .or_default()
                    .state
                    .push((v[2], v[3]));
            }
            T_MSG => {
                let (src, dst) = unpack_pair(v[1]);
                let (deliver, seq, widx) = unpack_route(v[2]);
                if deliver == cc_round {
                    view.nodes
                        .entry(dst)
                        .or_default()
                        .inbox_msgs
                        .entry((src, seq))
                        .or_default()
                        .insert(widx, v[3]);
                } else {
                    view.in_flight.push((v[1], deliver, seq, widx, v[3]));
                }
            }
            T_BCAST => {
                let src = v[1] as NodeId;
                let entry = view.broadcasts.entry(src).or_default();
                let idx = (v[2] - 1) as usize;
                if entry.len() <= idx {
                    entry.resize(idx + 1, 0);
                }
                entry[idx] = v[3];
            }
            T_SIZE => {
                view.sizes.insert(v[1] as NodeId, v[2]);
            }
            T_AGG => {
                view.aggs.insert(v[1] as NodeId, v[2]);
            }
            T_COUNT => {}
            T_META => {}
            T_DEGREE => view.degrees.push((v[1], v[2])),
            T_OUTPUT => {
                let u = v[1] as NodeId;
                view.nodes.entry(u).or_default().halted = true;
                if v[2] == 0 {
                    view.output_empty.insert(u);
                } else {
                    view.outputs
                        .entry(u)
                        .or_default()
                        .insert(v[2] as u32 - 1, v[3]);
                }
            }
            other => return Err(SimError::Fault(format!("unknown tuple kind {other}"))),
        }
    }
    for pkg in view.nodes.values_mut() {
        pkg.state.sort_unstable();
    }
    Ok(view)
}

fn output_tuples(key: &[Word], u: NodeId, words: &[Word], fwd_key: Option<Word>) -> Vec<KVTuple> {
    let mk = |value: Vec<Word>| match fwd_key {
        Some(fk) => {
            let mut v = vec![T_FWD, fk];
            v.extend(value);
            KVTuple::new(key.to_vec(), v)
        }
        None => KVTuple::new(key.to_vec(), value),
    };
    if words.is_empty() {
        vec![mk(vec![T_OUTPUT, u as Word, 0, 0])]
    } else {
        words
            .iter()
            .enumerate()
            .map(|(i, &w)| mk(vec![T_OUTPUT, u as Word, i as Word + 1, w]))
            .collect()
    }
}

fn decode_output(u: NodeId, view: &ReducerView) -> Result<Vec<Word>, SimError> {
    if view.output_empty.contains(&u) {
        return Ok(Vec::new());
    }
    let words = view
        .outputs
        .get(&u)
        .ok_or_else(|| SimError::Fault(format!("halted node {u} without output words")))?;
    let len = words.len();
    let mut out = vec![0; len];
    for (&idx, &w) in words {
        if (idx as usize) < len {
            out[idx as usize] = w;
        } else {
            return Err(SimError::Fault(format!(
                "output word index gap for node {u}"
            )));
        }
    }
    Ok(out)
}

fn collect_outputs(tuples: &[KVTuple]) -> Result<BTreeMap<NodeId, Vec<Word>>, SimError> {
    let mut words: BTreeMap<NodeId, BTreeMap<u32, Word>> = BTreeMap::new();
    let mut empties: BTreeSet<NodeId> = BTreeSet::new();
    for t in tuples {
        let v: &[Word] = if t.value[0] == T_FWD {
            &t.value[2..]
        } else {
            &t.value
        };
        if v[0] != T_OUTPUT {
            continue;
        }
        let u = v[1] as NodeId;
        if v[2] == 0 {
            empties.insert(u);
        } else {
            words.entry(u).or_default().insert(v[2] as u32 - 1, v[3]);
        }
    }
    let mut out = BTreeMap::new();
    for u in empties {
        out.insert(u, Vec::new());
    }
    for (u, map) in words {
        let len = map.len();
        let mut buf = vec![0; len];
        for (idx, w) in map {
            if (idx as usize) < len {
                buf[idx as usize] = w;
            } else {
                return Err(SimError::Fault(format!("output gap for node {u}")));
            }
        }
        out.insert(u, buf);
    }
    Ok(out)
}

/// Result of a full simulation.
#[derive(Debug)]
pub struct SimRun {
    pub outputs: BTreeMap<NodeId, Vec<Word>>,
    pub mr_rounds_used: u32,
    /// Completed clique communication rounds, matching `CcRun::rounds_used`.
    pub cc_rounds: u32,
    pub metrics: Vec<RoundMetrics>,
    /// Post-step state snapshots per simulated clique round (from the
    /// emitting pass), comparable against [`crate::cc::run_cc_traced`].
    pub state_trace: crate::cc::StateTrace,
}

/// Simulates `program` on the MapReduce engine. Outputs equal
/// `run_cc(program, g, seed, ...)` word for word and the round count is
/// exactly `4 + 3 * T` where `T` is the clique engine's `rounds_used`.
/// `route_rounds` must match the clique configuration the program was built
/// for.
pub fn simulate(
    program: &dyn CcProgram,
    g: &Graph,
    config: &MrConfig,
    seed: u64,
    route_rounds: u32,
) -> Result<SimRun, SimError> {
    let n = g.n();
    let machines = config.machines;
    let env = SimEnv { program, n, seed, route_rounds };
    let mut metrics: Vec<RoundMetrics> = Vec::new();

    let mut init = None;
    let mut last_err = None;
    for attempt in 0..3 {
        let salt = derive_subseed(seed, attempt);
        match init_rounds_1_to_3(graph_to_tuples(g), config, salt) {
            Ok((t, m)) => {
                init = Some(t);
                metrics.extend(m);
                break;
            }
            Err(e @ SimError::Engine(MrError::MemoryCap { .. })) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let mut tuples = match init {
        Some(t) => t,
        None => return Err(last_err.unwrap_or(SimError::InitRetriesExhausted(3))),
    };

    let sim_err: RefCell<Option<SimError>> = RefCell::new(None);
    let record = |e: SimError, round: u32| -> MrError {
        let msg = e.to_string();
        *sim_err.borrow_mut() = Some(e);
        MrError::Job {
            round,
            message: msg,
        }
    };
    let mut state_trace = crate::cc::StateTrace::new();

    let mut mr_round = 4;
    let mut cc_round = 0u32;
    loop {
        cc_round += 1;
        let i = cc_round;

        // Engine round 3i+1: strip/expand, then the measuring pass. Sizes
        // and per-destination word counts are emitted; halting nodes emit
        // their outputs; data tuples are re-emitted unchanged.
        let map_a = |t: &KVTuple| strip_map(t, machines);
        let reduce_a = |key: &[Word], values: &[Vec<Word>], ctx: &mut ReduceCtx| {
            let view = parse_group(values, i).map_err(|e| record(e, mr_round))?;
            let mut out: Vec<KVTuple> = Vec::new();
            for v in values {
                match v[0] {
                    T_SIZE | T_COUNT | T_AGG => {}
                    _ => out.push(KVTuple::new(key.to_vec(), v.clone())),
                }
            }
            let mut dest_words: BTreeMap<NodeId, u64> = BTreeMap::new();
            for &(packed, _, _, _, _) in &view.in_flight {
                let (_, dst) = unpack_pair(packed);
                *dest_words.entry(dst).or_insert(0) += 1;
            }
            let mut working = 0u64;
            for (&u, pkg) in &view.nodes {
                if pkg.halted || !pkg.present {
                    // absent packages are shadows of edge tuples duplicated
                    // to the other endpoint's part
                    continue;
                }
                let outcome =
                    simulate_node_step(&env, u, i, pkg, &view.broadcasts)
                        .map_err(|e| record(e, mr_round))?;
                working += outcome.new_state.len() as u64;
                match outcome.halted {
                    Some(words) => out.extend(output_tuples(key, u, &words, None)),
                    None => {
                        out.push(KVTuple::new(
                            key.to_vec(),
                            vec![T_SIZE, u as Word, outcome.new_state.len() as Word],
                        ));
                        for (dst, _, _, payload) in &outcome.messages {
                            *dest_words.entry(*dst).or_insert(0) += payload.len() as u64;
                        }
                    }
                }
            }
            ctx.record_working_words(working);
            for (dst, words) in dest_words {
                out.push(KVTuple::new(
                    key.to_vec(),
                    vec![T_COUNT, dst as Word, words],
                ));
            }
            Ok(out)
        };
        let step = run_mr_round(tuples, mr_round, &map_a, &reduce_a, config);
        let (t, m) =
            step.map_err(|e| sim_err.borrow_mut().take().unwrap_or(SimError::Engine(e)))?;
        tuples = t;
        metrics.push(m);

        // Outputs for all n nodes mean the final read-only steps just ran.
        let mut halted_now: BTreeSet<NodeId> = BTreeSet::new();
        for t in &tuples {
            let v: &[Word] = if t.value[0] == T_FWD {
                &t.value[2..]
            } else {
                &t.value
            };
            if v[0] == T_OUTPUT {
                halted_now.insert(v[1] as NodeId);
            }
        }
        if halted_now.len() == n as usize {
            let outputs = collect_outputs(&tuples)?;
            return Ok(SimRun {
                outputs,
                mr_rounds_used: mr_round,
                cc_rounds: cc_round - 1,
                metrics,
                state_trace,
            });
        }

        // Engine round 3i+2: route counts by destination id, replicate
        // sizes everywhere; aggregate counts into per-node inbox volumes.
        mr_round += 1;
        let map_b = |t: &KVTuple| -> Result<Vec<KVTuple>, MrError> {
            match t.value[0] {
                T_COUNT => Ok(vec![KVTuple::new(
                    vec![mod_key(t.value[1], machines)],
                    t.value.clone(),
                )]),
                T_SIZE => Ok((1..=machines as Word)
                    .map(|r| KVTuple::new(vec![r], t.value.clone()))
                    .collect()),
                _ => Ok(vec![t.clone()]),
            }
        };
        let reduce_b = |key: &[Word], values: &[Vec<Word>], _ctx: &mut ReduceCtx| {
            let mut out: Vec<KVTuple> = Vec::new();
            let mut agg: BTreeMap<Word, u64> = BTreeMap::new();
            for v in values {
                if v[0] == T_COUNT {
                    *agg.entry(v[1]).or_insert(0) += v[2];
                } else {
                    out.push(KVTuple::new(key.to_vec(), v.clone()));
                }
            }
            for (u, words) in agg {
                out.push(KVTuple::new(key.to_vec(), vec![T_AGG, u, words]));
            }
            Ok(out)
        };
        let (t, m) = run_mr_round(tuples, mr_round, &map_b, &reduce_b, config)?;
        tuples = t;
        metrics.push(m);

        // Engine round 3i+3: replicate aggregates; every reducer evaluates
        // the next partition; the emitting pass packages new state, message
        // and broadcast tuples behind routing prefixes.
        mr_round += 1;
        let map_c = |t: &KVTuple| -> Result<Vec<KVTuple>, MrError> {
            match t.value[0] {
                T_AGG => Ok((1..=machines as Word)
                    .map(|r| KVTuple::new(vec![r], t.value.clone()))
                    .collect()),
                _ => Ok(vec![t.clone()]),
            }
        };
        let trace_slot: RefCell<BTreeMap<NodeId, Vec<(u64, Word)>>> = RefCell::new(BTreeMap::new());
        let reduce_c = |key: &[Word], values: &[Vec<Word>], ctx: &mut ReduceCtx| {
            let view = parse_group(values, i).map_err(|e| record(e, mr_round))?;
            let mut loads = vec![0u64; n as usize];
            for (&u, &s) in &view.sizes {
                loads[u as usize - 1] += s;
            }
            for (&u, &mwords) in &view.aggs {
                loads[u as usize - 1] += mwords;
            }
            let f = compute_partition(&loads, config.part_budget, machines)
                .map_err(|e| record(e, mr_round))?;
            let mut out: Vec<KVTuple> = Vec::new();
            let mut working = 0u64;
            for (&u, pkg) in &view.nodes {
                if pkg.halted {
                    let fk = f.part_of(u) as Word;
                    let words = decode_output(u, &view).map_err(|e| record(e, mr_round))?;
                    out.extend(output_tuples(key, u, &words, Some(fk)));
                    continue;
                }
                if !pkg.present {
                    continue;
                }
                let outcome =
                    simulate_node_step(&env, u, i, pkg, &view.broadcasts)
                        .map_err(|e| record(e, mr_round))?;
                working += outcome.new_state.len() as u64;
                if let Some(words) = outcome.halted {
                    let fk = f.part_of(u) as Word;
                    out.extend(output_tuples(key, u, &words, Some(fk)));
                    continue;
                }
                trace_slot.borrow_mut().insert(u, outcome.new_state.clone());
                let fk = f.part_of(u) as Word;
                out.push(KVTuple::new(
                    key.to_vec(),
                    vec![T_FWD, fk, T_NODE, u as Word],
                ));
                for (addr, word) in outcome.new_state {
                    out.push(KVTuple::new(
                        key.to_vec(),
                        vec![T_FWD, fk, T_STATE, u as Word, addr, word],
                    ));
                }
                for (dst, deliver, seq, payload) in outcome.messages {
                    let dk = f.part_of(dst) as Word;
                    for (widx, &w) in payload.iter().enumerate() {
                        out.push(KVTuple::new(
                            key.to_vec(),
                            vec![
                                T_FWD,
                                dk,
                                T_MSG,
                                pack_pair(u, dst),
                                pack_route(deliver, seq, widx as u32),
                                w,
                            ],
                        ));
                    }
                }
                if let Some(payload) = outcome.broadcast {
                    for (widx, &w) in payload.iter().enumerate() {
                        out.push(KVTuple::new(
                            key.to_vec(),
                            vec![T_BCAST, u as Word, widx as Word + 1, w],
                        ));
                    }
                }
            }
            ctx.record_working_words(working);
            // in-flight messages keep following their destinations
            for &(packed, deliver, seq, widx, w) in &view.in_flight {
                let (_, dst) = unpack_pair(packed);
                let dk = f.part_of(dst) as Word;
                out.push(KVTuple::new(
                    key.to_vec(),
                    vec![T_FWD, dk, T_MSG, packed, pack_route(deliver, seq, widx), w],
                ));
            }
            // fresh partition metadata, one full copy per reducer
            for u in 1..=n {
                out.push(KVTuple::new(
                    key.to_vec(),
                    vec![T_META, u as Word, f.part_of(u) as Word],
                ));
            }
            for &(u, d) in &view.degrees {
                out.push(KVTuple::new(key.to_vec(), vec![T_DEGREE, u, d]));
            }
            Ok(out)
        };
        let step = run_mr_round(tuples, mr_round, &map_c, &reduce_c, config);
        let (t, m) =
            step.map_err(|e| sim_err.borrow_mut().take().unwrap_or(SimError::Engine(e)))?;
        tuples = t;
        metrics.push(m);
        state_trace.push(trace_slot.into_inner());

        mr_round += 1;
        if cc_round > 100_000 {
            return Err(SimError::Fault("simulation round limit exceeded".into()));
        }
    }
}
