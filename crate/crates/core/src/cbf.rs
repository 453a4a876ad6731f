//! Counting bloom filters backing the associativity approximation.
//!
//! Each filter is a short array of 2-bit saturating counters. A counter that
//! reaches 3 turns sticky and never changes again: residency tests must never
//! produce a false negative, so saturation is traded for extra false
//! positives instead of risking an undercount on decrement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maximum value of a 2-bit counter.
pub const COUNTER_MAX: u8 = 3;

/// Default number of hash functions.
pub const DEFAULT_HASHES: usize = 3;

/// Default counter-array length used by the approximate-FA bank.
pub const DEFAULT_COUNTERS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestOutcome {
    Negative,
    Positive,
}

/// A family of `k` multiply-shift hash functions mapping a line address to a
/// key in `[0, counters)`. Multipliers are odd and drawn from the run seed,
/// so key streams are deterministic per run.
#[derive(Debug, Clone)]
pub struct HashFamily {
    multipliers: Vec<u64>,
    shift: u32,
}

impl HashFamily {
    pub fn new(k: usize, counters: usize, seed: u64) -> Self {
        assert!(k >= 1, "need at least one hash function");
        assert!(counters.is_power_of_two() && counters >= 2, "counter count must be a power of two");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xcbf_cbf);
        let multipliers = (0..k).map(|_| rng.gen::<u64>() | 1).collect();
        HashFamily { multipliers, shift: 64 - (counters.trailing_zeros()) }
    }

    pub fn k(&self) -> usize {
        self.multipliers.len()
    }

    /// Keys for one element, one per hash function. Duplicates are possible
    /// and stack on the same counter.
    pub fn keys(&self, elem: u32) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.k());
        self.keys_into(elem, &mut out);
        out
    }

    pub fn keys_into(&self, elem: u32, out: &mut Vec<usize>) {
        out.clear();
        for m in &self.multipliers {
            out.push((u64::from(elem).wrapping_mul(*m) >> self.shift) as usize);
        }
    }
}

/// One counting bloom filter: `len` 2-bit saturating counters with sticky
/// saturation.
#[derive(Debug, Clone)]
pub struct CountingBloomFilter {
    counters: Vec<u8>,
    sticky: Vec<bool>,
}

impl CountingBloomFilter {
    pub fn new(len: usize) -> Self {
        CountingBloomFilter { counters: vec![0; len], sticky: vec![false; len] }
    }

    pub fn len(&self) -> usize {
        self.counters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counters.iter().all(|c| *c == 0)
    }

    pub fn counter(&self, key: usize) -> u8 {
        self.counters[key]
    }

    pub fn is_sticky(&self, key: usize) -> bool {
        self.sticky[key]
    }

    /// Register one element occurrence under `keys`.
    pub fn increment(&mut self, keys: &[usize]) {
        for &key in keys {
            if self.sticky[key] {
                continue;
            }
            self.counters[key] += 1;
            if self.counters[key] >= COUNTER_MAX {
                self.counters[key] = COUNTER_MAX;
                self.sticky[key] = true;
            }
        }
    }

    /// Remove one element occurrence. The caller must only decrement
    /// elements it previously incremented.
    pub fn decrement(&mut self, keys: &[usize]) {
        for &key in keys {
            if self.sticky[key] {
                continue;
            }
            debug_assert!(self.counters[key] > 0, "decrement of zero counter at key {key}");
            self.counters[key] = self.counters[key].saturating_sub(1);
        }
    }

    /// Negative iff any hashed counter is zero.
    pub fn test(&self, keys: &[usize]) -> TestOutcome {
        if keys.iter().any(|&key| self.counters[key] == 0) {
            TestOutcome::Negative
        } else {
            TestOutcome::Positive
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn family16() -> HashFamily {
        HashFamily::new(3, 16, 1)
    }

    /// Find an address whose key set is disjoint from `other`'s keys.
    fn find_disjoint(family: &HashFamily, other: u32) -> u32 {
        let taken = family.keys(other);
        (0..).map(|i| other.wrapping_add(1 + i)).find(|&cand| {
            family.keys(cand).iter().all(|k| !taken.contains(k))
        }).unwrap()
    }

    #[test]
    fn insert_sets_hashed_counters() {
        let family = family16();
        let mut filter = CountingBloomFilter::new(16);
        let keys = family.keys(0x1234);
        filter.increment(&keys);
        // Each distinct key holds the number of times it appears in the key
        // multiset; self-collisions stack.
        let mut expect: HashMap<usize, u8> = HashMap::new();
        for k in &keys {
            *expect.entry(*k).or_insert(0) += 1;
        }
        for (k, v) in expect {
            assert_eq!(filter.counter(k), v);
        }
        assert_eq!(filter.test(&keys), TestOutcome::Positive);
    }

    #[test]
    fn triple_insert_saturates_and_sticks() {
        let family = family16();
        // Pick an element whose three keys are pairwise distinct.
        let elem = (0..).find(|&e| {
            let k = family.keys(e);
            k[0] != k[1] && k[1] != k[2] && k[0] != k[2]
        }).unwrap();
        let keys = family.keys(elem);
        let mut filter = CountingBloomFilter::new(16);
        for _ in 0..3 {
            filter.increment(&keys);
        }
        for &k in &keys {
            assert_eq!(filter.counter(k), COUNTER_MAX);
            assert!(filter.is_sticky(k));
        }
        // Sticky counters never move again.
        filter.decrement(&keys);
        for &k in &keys {
            assert_eq!(filter.counter(k), COUNTER_MAX);
        }
    }

    #[test]
    fn insert_then_remove_tests_negative() {
        let family = family16();
        let mut filter = CountingBloomFilter::new(16);
        let keys = family.keys(0xBEEF);
        filter.increment(&keys);
        filter.decrement(&keys);
        assert_eq!(filter.test(&keys), TestOutcome::Negative);
        assert!(filter.is_empty());
    }

    #[test]
    fn shared_counter_keeps_other_element_positive() {
        let family = family16();
        // Search for two elements sharing at least one key but not all.
        let a = 0x40u32;
        let ka = family.keys(a);
        let b = (0..).map(|i| a + 1 + i).find(|&cand| {
            let kb = family.keys(cand);
            kb.iter().any(|k| ka.contains(k)) && kb.iter().any(|k| !ka.contains(k))
        }).unwrap();
        let kb = family.keys(b);
        let mut filter = CountingBloomFilter::new(16);
        filter.increment(&ka);
        filter.increment(&kb);
        filter.decrement(&ka);
        // b must stay positive; a's private counters are back to zero.
        assert_eq!(filter.test(&kb), TestOutcome::Positive);
        for k in ka.iter().filter(|k| !kb.contains(k)) {
            assert_eq!(filter.counter(*k), 0);
        }
    }

    #[test]
    fn empty_filter_is_negative_for_everything() {
        let family = family16();
        let filter = CountingBloomFilter::new(16);
        for elem in [0u32, 1, 0xFFFF_FFFF, 0x1234_5678] {
            assert_eq!(filter.test(&family.keys(elem)), TestOutcome::Negative);
        }
    }

    #[test]
    fn removed_element_with_disjoint_keys_goes_negative() {
        let family = family16();
        let a = 0x77u32;
        let b = find_disjoint(&family, a);
        let mut filter = CountingBloomFilter::new(16);
        filter.increment(&family.keys(a));
        filter.increment(&family.keys(b));
        filter.decrement(&family.keys(a));
        assert_eq!(filter.test(&family.keys(a)), TestOutcome::Negative);
        assert_eq!(filter.test(&family.keys(b)), TestOutcome::Positive);
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "decrement of zero counter")]
    fn underflow_is_a_debug_assertion() {
        let family = family16();
        let mut filter = CountingBloomFilter::new(16);
        filter.decrement(&family.keys(1));
    }

    /// No false negatives under random churn, checked against a multiset
    /// oracle of currently-present elements.
    #[test]
    fn no_false_negatives_under_random_churn() {
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for round in 0..200 {
            let family = HashFamily::new(3, 16, round);
            let mut filter = CountingBloomFilter::new(16);
            let mut present: Vec<u32> = Vec::new();
            for _ in 0..200 {
                let act: f64 = rng.gen();
                if act < 0.55 || present.is_empty() {
                    let elem: u32 = rng.gen_range(0..4096);
                    filter.increment(&family.keys(elem));
                    present.push(elem);
                } else {
                    let idx = rng.gen_range(0..present.len());
                    let elem = present.swap_remove(idx);
                    filter.decrement(&family.keys(elem));
                }
                for &elem in &present {
                    assert_eq!(
                        filter.test(&family.keys(elem)),
                        TestOutcome::Positive,
                        "false negative for resident element {elem:#x}"
                    );
                }
            }
        }
    }

    /// Counters bound key occupancy from above unless sticky.
    #[test]
    fn counters_track_key_occupancy() {
        use rand::prelude::*;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let family = family16();
        let mut filter = CountingBloomFilter::new(16);
        let mut occupancy = vec![0u32; 16];
        let mut present: Vec<u32> = Vec::new();
        for _ in 0..300 {
            if rng.gen_bool(0.6) || present.is_empty() {
                let elem: u32 = rng.gen_range(0..1 << 20);
                filter.increment(&family.keys(elem));
                for k in family.keys(elem) {
                    occupancy[k] += 1;
                }
                present.push(elem);
            } else {
                let elem = present.swap_remove(rng.gen_range(0..present.len()));
                filter.decrement(&family.keys(elem));
                for k in family.keys(elem) {
                    occupancy[k] -= 1;
                }
            }
            for k in 0..16 {
                if filter.is_sticky(k) {
                    assert!(filter.counter(k) == COUNTER_MAX);
                } else {
                    assert_eq!(u32::from(filter.counter(k)), occupancy[k].min(3), "key {k}");
                    assert!(u32::from(filter.counter(k)) >= occupancy[k].min(3));
                }
            }
        }
    }
}
