//! Stable seed derivation.
//!
//! Every seeded operation in the harness derives its RNG from a master seed
//! plus a context (record id, turn number, purpose tag) through FNV-1a. The
//! hash is fixed by definition, so replays are stable across platforms and
//! toolchain upgrades, and adding records to a run never reshuffles the
//! seeds of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Derive a child seed from a master seed and a list of context parts.
///
/// Parts are length-prefixed before hashing so `["ab", "c"]` and
/// `["a", "bc"]` never collide.
pub fn derive_seed(master: u64, parts: &[&[u8]]) -> u64 {
    let mut buf = Vec::with_capacity(16 + parts.iter().map(|p| p.len() + 8).sum::<usize>());
    buf.extend_from_slice(&master.to_le_bytes());
    for part in parts {
        buf.extend_from_slice(&(part.len() as u64).to_le_bytes());
        buf.extend_from_slice(part);
    }
    fnv1a64(&buf)
}

/// Per-record seed: a pure function of (master seed, record id).
pub fn record_seed(master: u64, record_id: &str) -> u64 {
    derive_seed(master, &[b"record", record_id.as_bytes()])
}

/// Per-turn seed for stochastic agents: a pure function of the agent seed,
/// the instance seed, and the turn index. Independent of global call order,
/// so concurrent execution cannot change agent behavior.
pub fn turn_seed(agent_seed: u64, instance_seed: u64, turn: u32) -> u64 {
    derive_seed(
        agent_seed,
        &[b"turn", &instance_seed.to_le_bytes(), &turn.to_le_bytes()],
    )
}

/// Deterministic RNG from a derived seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
