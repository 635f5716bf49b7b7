//! Identifier space shared by controllers and data objects.

use std::fmt;

use sha2::{Digest, Sha256};

pub const ID_BYTES: usize = 32;
pub const ID_BITS: usize = ID_BYTES * 8;

/// A 256-bit SHA-256 value. Ordered as an unsigned big-endian integer.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Identifier(pub [u8; ID_BYTES]);

impl Identifier {
    pub const ZERO: Identifier = Identifier([0; ID_BYTES]);
    pub const MAX: Identifier = Identifier([0xff; ID_BYTES]);

    pub fn as_bytes(&self) -> &[u8; ID_BYTES] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; ID_BYTES];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Identifier(out))
    }

    /// Bit `i` counted from the most significant bit.
    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 8] & (0x80 >> (i % 8)) != 0
    }

    /// The name ID used for skip-graph level membership.
    ///
    /// This is the identifier read from its least significant bit upward, so
    /// level membership is independent of the high-order bits that fix the
    /// vertex's position in numeric order.
    pub fn membership_vector(&self) -> Identifier {
        let mut out = [0u8; ID_BYTES];
        for (dst, src) in out.iter_mut().zip(self.0.iter().rev()) {
            *dst = src.reverse_bits();
        }
        Identifier(out)
    }

    /// Hash of this identifier, used to re-probe the identifier space.
    pub fn rehash(&self) -> Identifier {
        hash(&self.0)
    }

    /// The top 64 bits as an integer.
    pub fn high_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().unwrap())
    }
}

impl fmt::Debug for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Identifier({}..)", &self.to_hex()[..12])
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash(bytes: &[u8]) -> Identifier {
    Identifier(Sha256::digest(bytes).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Identifier {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Identifier(h.finalize().into())
}

/// Ordinal of a simulated node.
pub type NodeIndex = u32;

/// Simulated key material of one node. No real asymmetric crypto.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeKey {
    pub public_key: Vec<u8>,
    pub node_index: NodeIndex,
}

impl NodeKey {
    pub fn for_index(node_index: NodeIndex) -> Self {
        Self {
            public_key: format!("node-{node_index}").into_bytes(),
            node_index,
        }
    }
}

pub fn derive_node_identifier(key: &NodeKey) -> Identifier {
    debug_assert!(!key.public_key.is_empty());
    hash(&key.public_key)
}

pub fn derive_object_identifier(payload: &[u8]) -> Identifier {
    hash(payload)
}

/// Number of leading bits shared by `a` and `b`.
pub fn common_prefix_len(a: &Identifier, b: &Identifier) -> usize {
    for (i, (x, y)) in a.0.iter().zip(b.0.iter()).enumerate() {
        let diff = x ^ y;
        if diff != 0 {
            return i * 8 + diff.leading_zeros() as usize;
        }
    }
    ID_BITS
}

pub const BASE_PORT: u16 = 7000;

/// Middleware endpoint of a node, the host:port analogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address {
    pub node: NodeIndex,
    pub port: u16,
}

impl Address {
    pub fn for_node(node: NodeIndex) -> Self {
        Self {
            node,
            port: BASE_PORT,
        }
    }

    pub fn host(&self) -> String {
        format!("10.{}.{}.{}", self.node >> 16 & 0xff, self.node >> 8 & 0xff, self.node & 0xff)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host(), self.port)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_id() -> impl Strategy<Value = Identifier> {
        any::<[u8; 32]>().prop_map(Identifier)
    }

    #[test]
    fn node_identifier_matches_sha256sum() {
        // printf 'node-0' | sha256sum
        let id = derive_node_identifier(&NodeKey::for_index(0));
        assert_eq!(
            id.to_hex(),
            "7c6cc41e6bf72e7a7cd7b752d70b12e79212cffc30e18a8b1c3f0b51db459950"
        );
        // python3 hashlib.sha256(b'node-1')
        assert_eq!(
            derive_node_identifier(&NodeKey::for_index(1)).to_hex(),
            "35971be6e9bb024a895582fe0e42e04848a86da550aaef0fccbfba86f99f617d"
        );
    }

    #[test]
    fn node_identifiers_are_deterministic_and_distinct() {
        let a = derive_node_identifier(&NodeKey::for_index(3));
        assert_eq!(a, derive_node_identifier(&NodeKey::for_index(3)));
        let ids: std::collections::BTreeSet<_> = (0..1000)
            .map(|i| derive_node_identifier(&NodeKey::for_index(i)))
            .collect();
        assert_eq!(ids.len(), 1000);
    }

    #[test]
    fn object_identifier_changes_with_payload() {
        let payload = b"some canonical bytes".to_vec();
        let mut flipped = payload.clone();
        flipped[4] ^= 1;
        assert_eq!(
            derive_object_identifier(&payload),
            derive_object_identifier(&payload)
        );
        assert_ne!(
            derive_object_identifier(&payload),
            derive_object_identifier(&flipped)
        );
    }

    #[test]
    fn hash_parts_is_concatenation() {
        assert_eq!(hash_parts(&[b"gene", b"sis"]), hash(b"genesis"));
        assert_eq!(
            hash(b"genesis").to_hex(),
            "aeebad4a796fcc2e15dc4c6061b45ed9b373f26adfc798ca7d2d8cc58182718e"
        );
    }

    /// Bit-by-bit reference for the prefix length.
    fn prefix_oracle(a: &Identifier, b: &Identifier) -> usize {
        (0..ID_BITS).take_while(|&i| a.bit(i) == b.bit(i)).count()
    }

    #[test]
    fn prefix_examples() {
        let mut a = Identifier::ZERO;
        let mut b = Identifier::ZERO;
        assert_eq!(common_prefix_len(&a, &b), ID_BITS);
        b.0[0] = 0x80;
        assert_eq!(common_prefix_len(&a, &b), 0);
        a.0[0] = 0b1010_0000;
        b.0[0] = 0b1001_0000;
        assert_eq!(common_prefix_len(&a, &b), 2);
        assert_eq!(prefix_oracle(&a, &b), 2);
    }

    #[test]
    fn membership_vector_reverses_bits() {
        let mut id = Identifier::ZERO;
        id.0[31] = 0b0000_0001;
        let mv = id.membership_vector();
        assert!(mv.bit(0));
        assert_eq!(mv.0[0], 0x80);
        assert_eq!(mv.membership_vector(), id);
    }

    #[test]
    fn address_is_stable() {
        let a = Address::for_node(258);
        assert_eq!(a.to_string(), "10.0.1.2:7000");
        assert_eq!(a, Address::for_node(258));
    }

    proptest! {
        #[test]
        fn prefix_matches_oracle(a in arb_id(), b in arb_id(), cut in 0usize..256) {
            prop_assert_eq!(common_prefix_len(&a, &b), prefix_oracle(&a, &b));
            prop_assert_eq!(common_prefix_len(&a, &b), common_prefix_len(&b, &a));
            // force a shared prefix of at least `cut` bits
            let mut c = a;
            for i in 0..cut {
                let mask = 0x80u8 >> (i % 8);
                c.0[i / 8] = (c.0[i / 8] & !mask) | (b.0[i / 8] & mask);
            }
            prop_assert!(common_prefix_len(&c, &b) >= cut);
            prop_assert_eq!(common_prefix_len(&c, &b) == ID_BITS, c == b);
        }

        #[test]
        fn ordering_is_total(a in arb_id(), b in arb_id(), c in arb_id()) {
            let rels = [a < b, a == b, a > b];
            prop_assert_eq!(rels.iter().filter(|r| **r).count(), 1);
            if a < b && b < c {
                prop_assert!(a < c);
            }
            // big-endian ordering agrees with the numeric high word
            if a.high_u64() < b.high_u64() {
                prop_assert!(a < b);
            }
        }
    }
}
