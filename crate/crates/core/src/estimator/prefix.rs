use std::collections::{BTreeMap, HashMap};
use std::hash::{BuildHasherDefault, Hash, Hasher};

use rustc_hash::FxHasher;
use serde::{Deserialize, Serialize};

/// Keys are already well-mixed chain hashes.
#[derive(Default)]
struct IdentityHasher(u64);

impl Hasher for IdentityHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 << 8) | b as u64;
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.0 = v;
    }
}

type BlockMap<V> = HashMap<u64, V, BuildHasherDefault<IdentityHasher>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixCacheConfig {
    pub block_size: usize,
    pub capacity_tokens: usize,
}

impl Default for PrefixCacheConfig {
    fn default() -> Self {
        PrefixCacheConfig { block_size: 16, capacity_tokens: 65_536 }
    }
}

/// Chained hashes of every full `block_size` block of `tokens`; block `i`'s
/// hash covers blocks `0..=i`.
pub fn block_hashes<'a>(tokens: impl IntoIterator<Item = &'a str>, block_size: usize) -> Vec<u64> {
    let block_size = block_size.max(1);
    let mut out = Vec::new();
    let mut prev = 0u64;
    let mut h = FxHasher::default();
    let mut filled = 0;
    for tok in tokens {
        if filled == 0 {
            h = FxHasher::default();
            prev.hash(&mut h);
        }
        tok.hash(&mut h);
        filled += 1;
        if filled == block_size {
            prev = h.finish();
            out.push(prev);
            filled = 0;
        }
    }
    out
}

/// LRU set of prompt blocks stored on one instance.
#[derive(Clone, Debug, Default)]
pub struct PrefixCacheIndex {
    cfg: PrefixCacheConfig,
    last_use: BlockMap<u64>,
    by_age: BTreeMap<u64, u64>,
    tick: u64,
}

impl PrefixCacheIndex {
    pub fn new(cfg: PrefixCacheConfig) -> Self {
        PrefixCacheIndex { cfg, ..Default::default() }
    }

    pub fn block_size(&self) -> usize {
        self.cfg.block_size
    }

    pub fn stored_tokens(&self) -> usize {
        self.last_use.len() * self.cfg.block_size
    }

    pub fn contains(&self, hash: u64) -> bool {
        self.last_use.contains_key(&hash)
    }

    /// Tokens covered by the longest cached run of leading blocks. Does not
    /// touch recency.
    pub fn hit_tokens(&self, hashes: &[u64]) -> usize {
        hashes.iter().take_while(|h| self.last_use.contains_key(h)).count() * self.cfg.block_size
    }

    /// Inserts or refreshes every block, then evicts least recently used
    /// blocks until within capacity.
    pub fn record(&mut self, hashes: &[u64]) {
        for &h in hashes {
            self.tick += 1;
            if let Some(old) = self.last_use.insert(h, self.tick) {
                self.by_age.remove(&old);
            }
            self.by_age.insert(self.tick, h);
        }
        while self.stored_tokens() > self.cfg.capacity_tokens {
            let (_, h) = self.by_age.pop_first().expect("nonempty while over capacity");
            self.last_use.remove(&h);
        }
    }
}
