//! MapReduce-model execution engine.
//!
//! Enforces the classic model constraints: keys and values capped at a
//! constant number of words, stateless one-tuple mappers, reducers that keep
//! their input key, a per-machine memory cap and a bounded machine count.
//! Rounds are map - shuffle - reduce; the shuffle groups by exact key and
//! hands every reducer its value multiset in canonical sorted order, which
//! makes whole jobs insensitive to input tuple order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::Word;

/// Key-value pair, the sole data unit. Word caps are enforced by the engine,
/// not the constructor, so oversize tuples are reportable faults.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct KVTuple {
    pub key: Vec<Word>,
    pub value: Vec<Word>,
}

impl KVTuple {
    pub fn new(key: Vec<Word>, value: Vec<Word>) -> Self {
        KVTuple { key, value }
    }

    pub fn words(&self) -> u64 {
        (self.key.len() + self.value.len()) as u64
    }
}

/// Model parameters. `machines` and the memory caps are derived from
/// `(n, eps, c)` by [`MrConfig::for_graph_scale`] with pinned constants.
#[derive(Debug, Clone)]
pub struct MrConfig {
    /// Problem scale (node count of the input graph).
    pub n: u32,
    pub eps: f64,
    pub c: f64,
    /// Number of machines (reducers), `ceil(4 * n^(c-eps))`, at least 1.
    pub machines: u32,
    /// Partition-recurrence threshold in logical words: `ceil(32 * n^(1+eps))`.
    pub part_budget: u64,
    /// Enforced per-machine memory in actual tuple words:
    /// `ceil(512 * n^(1+eps))`. The headroom over the partition budget
    /// covers the per-word tuple framing plus replicated metadata.
    pub memory_cap: u64,
    pub key_word_cap: usize,
    pub value_word_cap: usize,
    /// Seed for randomized balancing mappers (derived per tuple).
    pub seed: u64,
}

impl MrConfig {
    pub const MACHINE_FACTOR: f64 = 4.0;
    pub const PART_BUDGET_FACTOR: f64 = 32.0;
    pub const MEMORY_FACTOR: f64 = 512.0;

    /// Standard configuration for an n-node instance with exponents
    /// `0 <= eps <= c`. At `eps == c` the system degenerates to a single
    /// machine, which is legal.
    pub fn for_graph_scale(n: u32, eps: f64, c: f64, seed: u64) -> Self {
        assert!(n >= 1);
        assert!(eps >= 0.0 && c >= 0.0 && eps <= c, "need 0 <= eps <= c");
        let nf = n as f64;
        let machines = (Self::MACHINE_FACTOR * nf.powf(c - eps)).ceil().max(1.0) as u32;
        let per_machine = nf.powf(1.0 + eps);
        MrConfig {
            n,
            eps,
            c,
            machines: machines.min(1 << 24),
            part_budget: (Self::PART_BUDGET_FACTOR * per_machine).ceil() as u64,
            memory_cap: (Self::MEMORY_FACTOR * per_machine).ceil() as u64,
            key_word_cap: 4,
            value_word_cap: 6,
            seed,
        }
    }

    /// Exponent `c` measured from an edge count so that `n^(1+c) = m`
    /// (clamped at 0 for near-empty graphs).
    pub fn measure_c(n: u32, edge_count: usize) -> f64 {
        if n <= 1 || edge_count <= 1 {
            return 0.0;
        }
        ((edge_count as f64).ln() / (n as f64).ln() - 1.0).max(0.0)
    }
}

/// Reducer-to-machine assignment, fixed and versioned (v1): a single-word
/// key already naming a machine in `1..=machines` maps to itself, anything
/// else is FNV-hashed over its words. The identity fast path keeps
/// partition-function keys on their own machines.
pub fn machine_for_key(key: &[Word], machines: u32) -> u32 {
    if key.len() == 1 && key[0] >= 1 && key[0] <= machines as u64 {
        return key[0] as u32;
    }
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in key {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    1 + (h % machines as u64) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Map,
    Reduce,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Map => write!(f, "map"),
            Phase::Reduce => write!(f, "reduce"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MrError {
    #[error("round {round} {phase}: key of {words} words exceeds cap {cap}")]
    KeyCap {
        round: u32,
        phase: Phase,
        words: usize,
        cap: usize,
    },
    #[error("round {round} {phase}: value of {words} words exceeds cap {cap}")]
    ValueCap {
        round: u32,
        phase: Phase,
        words: usize,
        cap: usize,
    },
    #[error("round {round}: machine {machine} holds {words} words, exceeding memory cap {cap}")]
    MemoryCap {
        round: u32,
        machine: u32,
        words: u64,
        cap: u64,
    },
    #[error("round {round}: reducer for key {key:?} emitted foreign key {emitted:?}")]
    ForeignKey {
        round: u32,
        key: Vec<Word>,
        emitted: Vec<Word>,
    },
    #[error("round {round}: {message}")]
    Job { round: u32, message: String },
}

/// Per-round execution metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub machines_used: u32,
    pub peak_words: u64,
    pub tuples_in: u64,
    pub tuples_out: u64,
}

/// Handle reducers use to report transient working-set words beyond their
/// input; the memory cap is enforced against the max of the two.
#[derive(Debug, Default)]
pub struct ReduceCtx {
    working_words: u64,
}

impl ReduceCtx {
    pub fn record_working_words(&mut self, words: u64) {
        self.working_words = self.working_words.max(words);
    }
}

pub type MapFn<'a> = &'a dyn Fn(&KVTuple) -> Result<Vec<KVTuple>, MrError>;
pub type ReduceFn<'a> =
    &'a dyn Fn(&[Word], &[Vec<Word>], &mut ReduceCtx) -> Result<Vec<KVTuple>, MrError>;

fn check_caps(t: &KVTuple, round: u32, phase: Phase, config: &MrConfig) -> Result<(), MrError> {
    if t.key.len() > config.key_word_cap {
        return Err(MrError::KeyCap {
            round,
            phase,
            words: t.key.len(),
            cap: config.key_word_cap,
        });
    }
    if t.value.len() > config.value_word_cap {
        return Err(MrError::ValueCap {
            round,
            phase,
            words: t.value.len(),
            cap: config.value_word_cap,
        });
    }
    Ok(())
}

/// One map - shuffle - reduce round. Deterministic: reducers run in key
/// order and see value multisets sorted lexicographically.
pub fn run_mr_round(
    tuples: Vec<KVTuple>,
    round: u32,
    mapper: MapFn<'_>,
    reducer: ReduceFn<'_>,
    config: &MrConfig,
) -> Result<(Vec<KVTuple>, RoundMetrics), MrError> {
    // Map phase: one stateless invocation per tuple.
    let mut mapped: Vec<KVTuple> = Vec::with_capacity(tuples.len());
    for t in &tuples {
        check_caps(t, round, Phase::Map, config)?;
        for out in mapper(t)? {
            check_caps(&out, round, Phase::Map, config)?;
            mapped.push(out);
        }
    }
    let tuples_in = mapped.len() as u64;

    // Shuffle: group by exact key, canonical value order.
    let mut groups: BTreeMap<Vec<Word>, Vec<Vec<Word>>> = BTreeMap::new();
    for t in mapped {
        groups.entry(t.key).or_default().push(t.value);
    }
    let mut machine_words: BTreeMap<u32, u64> = BTreeMap::new();
    for (key, values) in groups.iter_mut() {
        values.sort_unstable();
        let machine = machine_for_key(key, config.machines);
        let words: u64 = values.iter().map(|v| (key.len() + v.len()) as u64).sum();
        *machine_words.entry(machine).or_insert(0) += words;
    }

    // Reduce phase, tracking the worst-loaded machine.
    let mut peak_by_machine = machine_words.clone();
    let mut out: Vec<KVTuple> = Vec::new();
    for (key, values) in &groups {
        let machine = machine_for_key(key, config.machines);
        let mut ctx = ReduceCtx::default();
        let emitted = reducer(key, values, &mut ctx)?;
        let entry = peak_by_machine.entry(machine).or_insert(0);
        *entry = (*entry).max(ctx.working_words);
        for t in emitted {
            if t.key != *key {
                return Err(MrError::ForeignKey {
                    round,
                    key: key.clone(),
                    emitted: t.key,
                });
            }
            check_caps(&t, round, Phase::Reduce, config)?;
            out.push(t);
        }
    }
    for (machine, words) in &peak_by_machine {
        if *words > config.memory_cap {
            return Err(MrError::MemoryCap {
                round,
                machine: *machine,
                words: *words,
                cap: config.memory_cap,
            });
        }
    }

    let metrics = RoundMetrics {
        round,
        machines_used: machine_words.len() as u32,
        peak_words: peak_by_machine.values().copied().max().unwrap_or(0),
        tuples_in,
        tuples_out: out.len() as u64,
    };
    Ok((out, metrics))
}

/// A fixed-round job: one mapper/reducer pair per round.
pub trait MrJob {
    fn rounds(&self) -> u32;
    fn map(&self, round: u32, tuple: &KVTuple) -> Result<Vec<KVTuple>, MrError>;
    fn reduce(
        &self,
        round: u32,
        key: &[Word],
        values: &[Vec<Word>],
        ctx: &mut ReduceCtx,
    ) -> Result<Vec<KVTuple>, MrError>;
}

#[derive(Debug, Clone)]
pub struct MrJobRun {
    pub tuples: Vec<KVTuple>,
    pub rounds_used: u32,
    pub metrics: Vec<RoundMetrics>,
}

pub fn run_mr_job(
    input: Vec<KVTuple>,
    job: &dyn MrJob,
    config: &MrConfig,
) -> Result<MrJobRun, MrError> {
    let mut tuples = input;
    let mut metrics = Vec::new();
    for round in 1..=job.rounds() {
        let mapper = |t: &KVTuple| job.map(round, t);
        let reducer =
            |k: &[Word], vs: &[Vec<Word>], ctx: &mut ReduceCtx| job.reduce(round, k, vs, ctx);
        let (next, m) = run_mr_round(tuples, round, &mapper, &reducer, config)?;
        tuples = next;
        metrics.push(m);
    }
    tuples.sort_unstable();
    Ok(MrJobRun {
        tuples,
        rounds_used: job.rounds(),
        metrics,
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TupleDumpParseError {
    #[error("line {line}: expected \"K:... V:...\"")]
    BadLine { line: usize },
    #[error("line {line}: bad word")]
    BadWord { line: usize },
}

/// Text dump, one `K:w,w,... V:w,w,...` line per tuple, words as decimal
/// integers. Empty word sequences serialize as an empty list.
pub fn write_tuple_dump(tuples: &[KVTuple]) -> String {
    let mut out = String::new();
    for t in tuples {
        let key: Vec<String> = t.key.iter().map(|w| w.to_string()).collect();
        let value: Vec<String> = t.value.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(out, "K:{} V:{}", key.join(","), value.join(","));
    }
    out
}

pub fn read_tuple_dump(text: &str) -> Result<Vec<KVTuple>, TupleDumpParseError> {
    fn parse_words(s: &str, line: usize) -> Result<Vec<Word>, TupleDumpParseError> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|w| {
                w.parse::<Word>()
                    .map_err(|_| TupleDumpParseError::BadWord { line })
            })
            .collect()
    }
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rest = raw
            .strip_prefix("K:")
            .ok_or(TupleDumpParseError::BadLine { line })?;
        let (key_part, value_part) = rest
            .split_once(" V:")
            .ok_or(TupleDumpParseError::BadLine { line })?;
        out.push(KVTuple::new(
            parse_words(key_part, line)?,
            parse_words(value_part, line)?,
        ));
    }
    Ok(out)
}
