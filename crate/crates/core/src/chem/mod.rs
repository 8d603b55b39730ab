//! Molecular graphs, circular fingerprints and bit-vector similarity.
//!
//! [`parse_smiles`] covers the organic-subset SMILES grammar (bracket atoms
//! with charge and H-count, branches, ring closures including `%nn`, the
//! bond symbols `-`, `=`, `#`, `:`, aromatic lowercase atoms).
//! [`ecfp_fingerprint`] folds circular atom environments into a fixed-length
//! binary [`Fingerprint`] with a documented seedless 64-bit hash, so outputs
//! are reproducible across processes but not bit-compatible with other
//! toolkits; precomputed fingerprint columns can be ingested instead (see
//! the data module).

mod ecfp;
mod smiles;

pub use ecfp::{
    ecfp_fingerprint, read_fingerprint_cache, write_fingerprint_cache, CacheError, HASH_ID,
};
pub use smiles::parse_smiles;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bond order of a molecular graph edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Numeric code hashed into neighbor pairs; aromatic bonds carry a
    /// distinct code rather than being folded into single/double.
    pub fn code(self) -> u64 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    /// Contribution to an atom's bond-order sum when assigning implicit
    /// hydrogens; an aromatic bond counts as one and a half.
    fn valence_weight(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }
}

/// One atom of a [`MolGraph`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    /// Element symbol as written (`"C"`, `"Cl"`, ...), uppercased first letter.
    pub element: String,
    pub aromatic: bool,
    pub charge: i32,
    /// Attached hydrogens: explicit for bracket atoms, implied from default
    /// valences for organic-subset atoms.
    pub h_count: u32,
}

/// Undirected edge between two atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

/// A molecule as parsed from SMILES: atoms plus an undirected bond list.
///
/// Invariants (enforced by the parser): bond endpoints are valid atom
/// indices, no self-bonds, no duplicate bonds between the same pair, and
/// every ring-closure digit opened in the source is closed exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MolGraph {
    /// Number of bonds incident to `atom`.
    pub fn degree(&self, atom: usize) -> usize {
        self.bonds
            .iter()
            .filter(|bond| bond.a == atom || bond.b == atom)
            .count()
    }

    /// Neighbor atom indices of `atom` together with the connecting bond order.
    pub fn neighbors(&self, atom: usize) -> Vec<(usize, BondOrder)> {
        let mut out = Vec::new();
        for bond in &self.bonds {
            if bond.a == atom {
                out.push((bond.b, bond.order));
            } else if bond.b == atom {
                out.push((bond.a, bond.order));
            }
        }
        out
    }
}

/// Errors from SMILES parsing; every variant names the byte offset of the
/// fault in the input string.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("empty SMILES input")]
    EmptyInput,
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParenthesis { offset: usize },
    /// A ring-closure digit that is never closed, closes onto its own
    /// opening atom, or duplicates an existing bond.
    #[error("invalid or unclosed ring bond {digit} at byte {offset}")]
    UnclosedRingBond { digit: u16, offset: usize },
    #[error("unknown or unsupported token at byte {offset}")]
    UnknownAtomToken { offset: usize },
}

/// Errors from fingerprint vector operations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChemError {
    #[error("fingerprint length mismatch: {left} vs {right} bits")]
    LengthMismatch { left: usize, right: usize },
}

/// Fixed-length binary fingerprint over hashed circular atom environments.
///
/// Bits are packed little-endian into `u64` blocks; bit `i` lives in block
/// `i / 64` at position `i % 64`. Padding bits past `nbits` stay zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    nbits: usize,
    radius: u32,
    blocks: Vec<u64>,
}

impl Fingerprint {
    /// All-zero fingerprint. `nbits` must be >= 8 and a power of two.
    pub fn zeros(nbits: usize, radius: u32) -> Self {
        assert!(
            nbits >= 8 && nbits.is_power_of_two(),
            "nbits must be >= 8 and a power of two, got {nbits}"
        );
        Fingerprint {
            nbits,
            radius,
            blocks: vec![0; nbits / 64 + usize::from(nbits % 64 != 0)],
        }
    }

    /// Build from explicit bit positions (for tests and fixtures).
    pub fn from_bits(nbits: usize, radius: u32, set: &[usize]) -> Self {
        let mut fp = Self::zeros(nbits, radius);
        for &i in set {
            fp.set(i);
        }
        fp
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.nbits, "bit {bit} out of range {}", self.nbits);
        self.blocks[bit / 64] |= 1 << (bit % 64);
    }

    pub fn bit(&self, bit: usize) -> bool {
        assert!(bit < self.nbits, "bit {bit} out of range {}", self.nbits);
        self.blocks[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.blocks.iter().map(|b| b.count_ones()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    /// The bits as 0.0/1.0 reals, the network input encoding.
    pub fn to_reals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nbits];
        self.write_reals(&mut out);
        out
    }

    /// Write the 0.0/1.0 encoding into `out[..nbits]` without allocating.
    pub fn write_reals(&self, out: &mut [f64]) {
        assert!(out.len() >= self.nbits);
        for (bi, &block) in self.blocks.iter().enumerate() {
            let base = bi * 64;
            let width = 64.min(self.nbits - base);
            for k in 0..width {
                out[base + k] = f64::from((block >> k & 1) as u32);
            }
        }
    }

    /// Lowercase hex, little-endian bytes: byte `i` holds bits `8i..8i+8`.
    pub fn to_hex(&self) -> String {
        let mut out = String::with_capacity(self.nbits / 4);
        for i in 0..self.nbits / 8 {
            let byte = (self.blocks[i / 8] >> (8 * (i % 8))) & 0xff;
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    /// Inverse of [`Fingerprint::to_hex`]. Fails on odd length, non-hex
    /// digits, or a length that does not match a valid bit count.
    pub fn from_hex(hex: &str, radius: u32) -> Option<Self> {
        if hex.len() % 2 != 0 || hex.is_empty() {
            return None;
        }
        let nbits = hex.len() * 4;
        if nbits < 8 || !nbits.is_power_of_two() {
            return None;
        }
        let mut fp = Fingerprint::zeros(nbits, radius);
        for i in 0..hex.len() / 2 {
            let byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).ok()?;
            fp.blocks[i / 8] |= (byte as u64) << (8 * (i % 8));
        }
        Some(fp)
    }

    fn check_len(&self, other: &Fingerprint) -> Result<(), ChemError> {
        if self.nbits != other.nbits {
            return Err(ChemError::LengthMismatch {
                left: self.nbits,
                right: other.nbits,
            });
        }
        Ok(())
    }
}

/// Tanimoto similarity `|a AND b| / |a OR b|`, defined as 1.0 when both
/// vectors are all-zero.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, ChemError> {
    a.check_len(b)?;
    let mut inter = 0u32;
    let mut union = 0u32;
    for (&x, &y) in a.blocks.iter().zip(&b.blocks) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(f64::from(inter) / f64::from(union))
}

/// Hamming distance `popcount(a XOR b)`. On binary vectors this ranks
/// neighbors identically to squared Euclidean distance.
pub fn hamming_distance(a: &Fingerprint, b: &Fingerprint) -> Result<u32, ChemError> {
    a.check_len(b)?;
    Ok(a.blocks
        .iter()
        .zip(&b.blocks)
        .map(|(&x, &y)| (x ^ y).count_ones())
        .sum())
}
