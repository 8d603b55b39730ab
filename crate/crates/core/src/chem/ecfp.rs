//! Circular (ECFP-style) fingerprint hashing and the on-disk cache format.
//!
//! Atom environments are identified with a seedless 64-bit mixing hash
//! (splitmix64 finalizer over a chained state), so fingerprints are
//! deterministic across processes and platforms. They are not
//! bit-compatible with other toolkits; ingest precomputed fingerprint
//! columns when feature parity with an external pipeline is required.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::{Fingerprint, MolGraph};

/// Identifier of the environment hash, recorded in cache headers so stale
/// caches from a different hash are rejected.
pub const HASH_ID: &str = "mix64v1";

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// splitmix64 finalizer.
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

/// Chained 64-bit hash: absorb words one at a time, mixing after each.
#[derive(Clone, Copy)]
struct Hasher(u64);

impl Hasher {
    fn new(domain: u64) -> Self {
        Hasher(mix64(domain ^ GAMMA))
    }

    fn absorb(&mut self, word: u64) -> &mut Self {
        self.0 = mix64(self.0 ^ word.wrapping_mul(GAMMA));
        self
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

const DOMAIN_ATOM: u64 = 0xA70A;
const DOMAIN_ITER: u64 = 0x17E2;

/// Initial atom identifier from (element, degree, attached H, charge,
/// aromaticity).
fn initial_invariant(mol: &MolGraph, atom: usize) -> u64 {
    let a = &mol.atoms[atom];
    let mut h = Hasher::new(DOMAIN_ATOM);
    for byte in a.element.bytes() {
        h.absorb(u64::from(byte));
    }
    h.absorb(mol.degree(atom) as u64)
        .absorb(u64::from(a.h_count))
        .absorb(a.charge as u64)
        .absorb(u64::from(a.aromatic));
    h.finish()
}

/// Circular fingerprint: per-atom invariants are iteratively rehashed with
/// the sorted `(bond order code, neighbor identifier)` pairs; every
/// identifier from every iteration (including iteration zero) sets the bit
/// at `identifier mod nbits`.
///
/// `nbits` must be >= 8 and a power of two (asserted).
pub fn ecfp_fingerprint(mol: &MolGraph, radius: u32, nbits: usize) -> Fingerprint {
    let mut fp = Fingerprint::zeros(nbits, radius);
    let n = mol.atoms.len();

    let mut ids: Vec<u64> = (0..n).map(|a| initial_invariant(mol, a)).collect();
    for &id in &ids {
        fp.set((id % nbits as u64) as usize);
    }

    let neighbors: Vec<Vec<(usize, u64)>> = (0..n)
        .map(|a| {
            mol.neighbors(a)
                .into_iter()
                .map(|(nb, order)| (nb, order.code()))
                .collect()
        })
        .collect();

    for iter in 1..=radius {
        let mut next = Vec::with_capacity(n);
        for a in 0..n {
            let mut pairs: Vec<(u64, u64)> = neighbors[a]
                .iter()
                .map(|&(nb, code)| (code, ids[nb]))
                .collect();
            pairs.sort_unstable();
            let mut h = Hasher::new(DOMAIN_ITER);
            h.absorb(u64::from(iter)).absorb(ids[a]);
            for (code, id) in pairs {
                h.absorb(code).absorb(id);
            }
            next.push(h.finish());
        }
        ids = next;
        for &id in &ids {
            fp.set((id % nbits as u64) as usize);
        }
    }

    fp
}

/// Errors around the fingerprint cache file.
#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cache {path}: malformed header `{header}`")]
    Header { path: String, header: String },
    #[error("cache {path}: malformed record at line {line}")]
    Record { path: String, line: usize },
}

/// Write `<molecule_id>\t<hex bits>` records under a
/// `#ecfp radius=<r> nbits=<n> hash=<id>` header.
pub fn write_fingerprint_cache(
    path: &Path,
    radius: u32,
    nbits: usize,
    entries: &[(String, Fingerprint)],
) -> Result<(), CacheError> {
    let io_err = |source| CacheError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = String::new();
    out.push_str(&format!("#ecfp radius={radius} nbits={nbits} hash={HASH_ID}\n"));
    for (id, fp) in entries {
        out.push_str(id);
        out.push('\t');
        out.push_str(&fp.to_hex());
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(out.as_bytes()).map_err(io_err)
}

/// Read a cache written by [`write_fingerprint_cache`], validating the
/// header parameters and hash identifier.
pub fn read_fingerprint_cache(
    path: &Path,
) -> Result<(u32, usize, Vec<(String, Fingerprint)>), CacheError> {
    let text = fs::read_to_string(path).map_err(|source| CacheError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let header_err = |header: &str| CacheError::Header {
        path: path.display().to_string(),
        header: header.to_string(),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| header_err(""))?;

    let rest = header.strip_prefix("#ecfp ").ok_or_else(|| header_err(header))?;
    let mut radius = None;
    let mut nbits = None;
    let mut hash = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("radius", v)) => radius = v.parse::<u32>().ok(),
            Some(("nbits", v)) => nbits = v.parse::<usize>().ok(),
            Some(("hash", v)) => hash = Some(v),
            _ => return Err(header_err(header)),
        }
    }
    let (radius, nbits) = match (radius, nbits, hash) {
        (Some(r), Some(n), Some(h)) if h == HASH_ID && n >= 8 && n.is_power_of_two() => (r, n),
        _ => return Err(header_err(header)),
    };

    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let record_err = || CacheError::Record {
            path: path.display().to_string(),
            line: i + 2,
        };
        let (id, hex) = line.split_once('\t').ok_or_else(record_err)?;
        let fp = Fingerprint::from_hex(hex, radius).ok_or_else(record_err)?;
        if fp.nbits() != nbits || id.is_empty() {
            return Err(record_err());
        }
        entries.push((id.to_string(), fp));
    }
    Ok((radius, nbits, entries))
}

#[cfg(test)]
mod tests {
    use super::super::parse_smiles;
    use super::*;

    fn fp(smiles: &str) -> Fingerprint {
        ecfp_fingerprint(&parse_smiles(smiles).unwrap(), 3, 1024)
    }

    #[test]
    fn single_atom_is_deterministic_and_nonempty() {
        let a = fp("C");
        let b = fp("C");
        assert!(a.count_ones() >= 1);
        assert_eq!(a, b);
    }

    #[test]
    fn atom_order_invariance() {
        assert_eq!(fp("CCO"), fp("OCC"));
        assert_eq!(fp("CC(=O)O"), fp("OC(=O)C"));
        assert_eq!(fp("CC(=O)O"), fp("C(C)(=O)O"));
        // ring rotations and reflections of the same structure
        assert_eq!(fp("Cc1ccccc1"), fp("c1ccccc1C"));
        assert_eq!(fp("Cc1ccccc1"), fp("c1ccc(C)cc1"));
        assert_eq!(fp("C1CCO1"), fp("O1CCC1"));
    }

    #[test]
    fn distinct_molecules_differ() {
        assert_ne!(fp("CCO"), fp("CCC"));
        assert_ne!(fp("c1ccccc1"), fp("C1CCCCC1"));
    }

    #[test]
    fn radius_zero_only_atom_invariants() {
        let mol = parse_smiles("CCO").unwrap();
        let fp0 = ecfp_fingerprint(&mol, 0, 1024);
        // terminal C, inner C, O: three distinct environments
        assert!(fp0.count_ones() >= 2 && fp0.count_ones() <= 3);
        let fp3 = ecfp_fingerprint(&mol, 3, 1024);
        assert!(fp3.count_ones() > fp0.count_ones());
    }

    #[test]
    fn cache_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fps.tsv");
        let entries = vec![
            ("mol-a".to_string(), fp("CCO")),
            ("mol-b".to_string(), fp("c1ccccc1")),
        ];
        write_fingerprint_cache(&path, 3, 1024, &entries).unwrap();
        let (radius, nbits, back) = read_fingerprint_cache(&path).unwrap();
        assert_eq!((radius, nbits), (3, 1024));
        assert_eq!(back, entries);

        std::fs::write(&path, "#ecfp radius=3 nbits=1024 hash=other\nx\tff\n").unwrap();
        assert!(matches!(
            read_fingerprint_cache(&path),
            Err(CacheError::Header { .. })
        ));

        std::fs::write(&path, "#ecfp radius=3 nbits=16 hash=mix64v1\nmol ffff\n").unwrap();
        assert!(matches!(
            read_fingerprint_cache(&path),
            Err(CacheError::Record { line: 2, .. })
        ));
    }
}
