//! Word packing helpers shared by the engines.
//!
//! Node ids fit in 32 bits, round indices and sequence numbers in 20/22 bits
//! at any scale this crate targets, so pairs and routing metadata pack into
//! single words. Both backends use the same packing, which keeps tuple values
//! within the constant word caps without losing information.

use crate::{NodeId, Word};

pub fn pack_pair(a: NodeId, b: NodeId) -> Word {
    ((a as u64) << 32) | b as u64
}

pub fn unpack_pair(w: Word) -> (NodeId, NodeId) {
    ((w >> 32) as NodeId, (w & 0xFFFF_FFFF) as NodeId)
}

/// (deliver_round, message_seq, word_index) -> word.
/// 24 bits for the round, 22 + 18 for sequence and word index.
pub fn pack_route(deliver_round: u32, seq: u32, word_idx: u32) -> Word {
    debug_assert!(deliver_round < (1 << 24));
    debug_assert!(seq < (1 << 22));
    debug_assert!(word_idx < (1 << 18));
    ((deliver_round as u64) << 40) | ((seq as u64) << 18) | word_idx as u64
}

pub fn unpack_route(w: Word) -> (u32, u32, u32) {
    (
        (w >> 40) as u32,
        ((w >> 18) & 0x3F_FFFF) as u32,
        (w & 0x3_FFFF) as u32,
    )
}
