//! Deterministic, splittable random streams.
//!
//! Both backends must draw identical randomness for the same logical event,
//! so every stream is derived purely from `(seed, node, round)` (or from a
//! label, for non-node streams). The generator is a fixed splitmix64 chain;
//! it is pinned here rather than taken from an external crate so that frozen
//! regression values and cross-backend replay can never drift.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic random stream.
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        splitmix64(&mut state);
        DetRng { state }
    }

    /// Stream used by node `node` during round `round` of a run seeded with
    /// `seed`. Re-derivable anywhere, which is what lets a reducer replay a
    /// node's local computation bit for bit.
    pub fn for_node_round(seed: u64, node: u32, round: u32) -> Self {
        let mut state = seed;
        splitmix64(&mut state);
        state ^= (node as u64).wrapping_mul(0xA24B_AED4_963E_E407);
        splitmix64(&mut state);
        state ^= (round as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25);
        splitmix64(&mut state);
        DetRng { state }
    }

    /// Stream for auxiliary, non-node purposes (graph generation, shuffle
    /// balancing), namespaced by a label.
    pub fn for_label(seed: u64, label: &str) -> Self {
        let mut state = seed;
        splitmix64(&mut state);
        for b in label.as_bytes() {
            state ^= *b as u64;
            splitmix64(&mut state);
        }
        DetRng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..bound` (`bound` ≥ 1), via widening multiply.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound >= 1);
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }
}

/// Derives a fresh sub-seed, used for bounded retries of randomized
/// load-balancing rounds.
pub fn derive_subseed(seed: u64, attempt: u32) -> u64 {
    let mut state = seed ^ (attempt as u64).wrapping_mul(GAMMA);
    splitmix64(&mut state);
    splitmix64(&mut state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic() {
        let mut a = DetRng::for_node_round(7, 3, 12);
        let mut b = DetRng::for_node_round(7, 3, 12);
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ_across_nodes_and_rounds() {
        let x = DetRng::for_node_round(7, 3, 12).next_u64();
        assert_ne!(x, DetRng::for_node_round(7, 4, 12).next_u64());
        assert_ne!(x, DetRng::for_node_round(7, 3, 13).next_u64());
        assert_ne!(x, DetRng::for_node_round(8, 3, 12).next_u64());
    }

    #[test]
    fn below_is_in_range_and_covers() {
        let mut rng = DetRng::new(99);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            let v = rng.below(7) as usize;
            assert!(v < 7);
            seen[v] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }
}
