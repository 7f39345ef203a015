//! Pairwise correlated randomness.
//!
//! Each unordered party pair shares a keyed counter-mode stream; both holders
//! draw from their copy at the same protocol points, so the streams stay
//! aligned without communication. Party 2 additionally owns a private stream
//! for dealer randomness.

use crate::fxp::{width_mask, RingTensor};
use crate::transport::PartyId;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// One counter-mode stream a party shares with a neighbour (or itself).
pub struct PairStream {
    rng: ChaCha12Rng,
}

impl PairStream {
    fn from_seed(master: u64, tag: u64) -> Self {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&master.to_le_bytes());
        seed[8..16].copy_from_slice(&tag.to_le_bytes());
        seed[16..24].copy_from_slice(
            &master
                .rotate_left(17)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .to_le_bytes(),
        );
        seed[24..32].copy_from_slice(&tag.wrapping_mul(0xD1B5_4A32_D192_ED03).to_le_bytes());
        PairStream {
            rng: ChaCha12Rng::from_seed(seed),
        }
    }

    /// Uniform words in `[0, 2^width)`, one per element of `shape`.
    pub fn draw(&mut self, shape: &[usize], width: u32) -> RingTensor {
        let n: usize = shape.iter().product();
        let mask = width_mask(width);
        let data: Vec<u64> = (0..n).map(|_| self.rng.next_u64() & mask).collect();
        RingTensor::new(shape.to_vec(), data, width)
    }

    pub fn draw_word(&mut self, width: u32) -> u64 {
        self.rng.next_u64() & width_mask(width)
    }

    pub fn gen_range(&mut self, range: std::ops::Range<u64>) -> u64 {
        self.rng.gen_range(range)
    }
}

/// The streams one party holds: the seed shared with its successor, the seed
/// shared with its predecessor, and a private stream.
pub struct PartyPrf {
    pub with_next: PairStream,
    pub with_prev: PairStream,
    pub private: PairStream,
}

const PAIR_TAG: [u64; 3] = [0x01, 0x12, 0x20]; // seed tag of pair (i, i+1)

impl PartyPrf {
    /// Derive all streams from a master seed. Party `i` shares `PAIR_TAG[i]`
    /// with its successor and `PAIR_TAG[i-1]` with its predecessor.
    pub fn setup(master: u64, id: PartyId) -> Self {
        let i = id.index() as u64;
        PartyPrf {
            with_next: PairStream::from_seed(master, PAIR_TAG[id.index()]),
            with_prev: PairStream::from_seed(master, PAIR_TAG[id.prev().index()]),
            private: PairStream::from_seed(master, 0x100 + i),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_streams_agree_between_holders() {
        let mut p0 = PartyPrf::setup(42, PartyId(0));
        let mut p1 = PartyPrf::setup(42, PartyId(1));
        let mut p2 = PartyPrf::setup(42, PartyId(2));
        // k01 = P0.with_next = P1.with_prev
        assert_eq!(p0.with_next.draw(&[4], 32), p1.with_prev.draw(&[4], 32));
        // k12 = P1.with_next = P2.with_prev
        assert_eq!(p1.with_next.draw(&[4], 64), p2.with_prev.draw(&[4], 64));
        // k20 = P2.with_next = P0.with_prev
        assert_eq!(p2.with_next.draw(&[4], 8), p0.with_prev.draw(&[4], 8));
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = PartyPrf::setup(1, PartyId(0));
        let mut b = PartyPrf::setup(2, PartyId(0));
        assert_ne!(a.with_next.draw(&[8], 64), b.with_next.draw(&[8], 64));
    }
}
