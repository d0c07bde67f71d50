use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Seed of the component `label`: the first eight bytes of
/// `SHA-256(global ‖ label)`. Components never share a stream, and adding
/// one leaves the others untouched.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub global: u64,
    pub trace: u64,
    pub components: BTreeMap<String, u64>,
}

impl Seeds {
    pub fn new(global: u64) -> Self {
        Seeds {
            global,
            trace: derive_seed(global, "trace"),
            components: BTreeMap::new(),
        }
    }

    /// Derives and records the seed of `label`.
    pub fn component(&mut self, label: &str) -> u64 {
        let s = derive_seed(self.global, label);
        self.components.insert(label.to_string(), s);
        s
    }
}
