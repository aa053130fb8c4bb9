//! Dual-backend simulator for distributed graph coloring.
//!
//! The crate provides two execution engines and a bridge between them:
//!
//! * [`cc`] — a synchronous, round-based message-passing engine on a complete
//!   n-node network, with per-message word budgets, broadcast support, a
//!   constant-round batch-routing primitive and per-round traffic/memory
//!   profiling.
//! * [`mr`] — a MapReduce engine enforcing the classic model constraints:
//!   constant-word tuples, stateless one-tuple mappers, a per-machine memory
//!   cap and a machine-count cap.
//! * [`sim`] — machinery that mechanically re-executes any sufficiently
//!   lightweight [`cc`] program on the [`mr`] engine, three MapReduce rounds
//!   per clique round after a four-round initialization, with bit-identical
//!   outputs.
//!
//! Two coloring programs exercise the stack: [`highdeg`] (random color
//! groups, centrally classified, locally colored) for dense graphs and
//! [`lowdeg`] (locally replayed random coloring plus cluster-merge component
//! gathering) for sparse ones.

#![forbid(unsafe_code)]

pub mod cc;
pub mod coloring;
pub mod graph;
pub mod highdeg;
pub mod lowdeg;
pub mod mr;
pub mod rng;
pub mod sim;
pub mod words;

pub use coloring::Coloring;
pub use graph::Graph;

/// Machine word as accounted by both engines. Conceptually Θ(log n) bits;
/// every budget in this crate counts words, never bits.
pub type Word = u64;

/// 1-based node identifier; nodes of an n-node graph are exactly 1..=n.
pub type NodeId = u32;
