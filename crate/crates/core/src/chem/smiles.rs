//! SMILES tokenizer/parser for the organic-subset grammar.
//!
//! Supported: organic-subset atoms (B C N O P S F Cl Br I), aromatic
//! lowercase forms (b c n o p s), bracket atoms with explicit H-count and
//! charge, branches, ring closures (digits and `%nn`), and the bond symbols
//! `-` `=` `#` `:`. Stereochemistry, isotopes and valence validation are out
//! of scope; any unsupported token is rejected with its byte offset.

use std::collections::HashMap;

use super::{Atom, Bond, BondOrder, MolGraph, SmilesError};

/// Pending ring-closure: opening atom, bond symbol written before the digit
/// (if any), byte offset of the digit for error reporting.
struct OpenRing {
    atom: usize,
    bond: Option<BondOrder>,
    offset: usize,
}

pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    let src = text.trim();
    if src.is_empty() {
        return Err(SmilesError::EmptyInput);
    }
    let bytes = src.as_bytes();

    let mut atoms: Vec<Atom> = Vec::new();
    let mut bonds: Vec<Bond> = Vec::new();
    let mut bracket: Vec<bool> = Vec::new(); // per atom: explicit H-count?

    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondOrder, usize)> = None; // bond symbol + its offset
    let mut branch_stack: Vec<(Option<usize>, usize)> = Vec::new(); // (prev, '(' offset)
    let mut rings: HashMap<u16, OpenRing> = HashMap::new();

    let mut pos = 0usize;
    while pos < bytes.len() {
        let c = bytes[pos];
        match c {
            b'-' | b'=' | b'#' | b':' => {
                let order = match c {
                    b'-' => BondOrder::Single,
                    b'=' => BondOrder::Double,
                    b'#' => BondOrder::Triple,
                    _ => BondOrder::Aromatic,
                };
                if prev.is_none() {
                    // a bond symbol with nothing on its left
                    return Err(SmilesError::UnknownAtomToken { offset: pos });
                }
                pending = Some((order, pos));
                pos += 1;
            }
            b'(' => {
                branch_stack.push((prev, pos));
                pos += 1;
            }
            b')' => {
                if let Some((_, bond_pos)) = pending {
                    return Err(SmilesError::UnknownAtomToken { offset: bond_pos });
                }
                match branch_stack.pop() {
                    Some((saved, _)) => prev = saved,
                    None => return Err(SmilesError::UnbalancedParenthesis { offset: pos }),
                }
                pos += 1;
            }
            b'0'..=b'9' => {
                let digit = u16::from(c - b'0');
                close_or_open_ring(
                    digit, pos, prev, &mut pending, &mut rings, &mut bonds, &atoms,
                )?;
                pos += 1;
            }
            b'%' => {
                if pos + 2 >= bytes.len()
                    || !bytes[pos + 1].is_ascii_digit()
                    || !bytes[pos + 2].is_ascii_digit()
                {
                    return Err(SmilesError::UnknownAtomToken { offset: pos });
                }
                let digit = u16::from(bytes[pos + 1] - b'0') * 10 + u16::from(bytes[pos + 2] - b'0');
                close_or_open_ring(
                    digit, pos, prev, &mut pending, &mut rings, &mut bonds, &atoms,
                )?;
                pos += 3;
            }
            b'[' => {
                let (atom, consumed) = parse_bracket_atom(bytes, pos)?;
                let idx = push_atom(&mut atoms, &mut bonds, atom, prev, &mut pending);
                bracket.push(true);
                prev = Some(idx);
                pos += consumed;
            }
            _ => {
                let (atom, consumed) = parse_organic_atom(bytes, pos)?;
                let idx = push_atom(&mut atoms, &mut bonds, atom, prev, &mut pending);
                bracket.push(false);
                prev = Some(idx);
                pos += consumed;
            }
        }
    }

    if let Some((_, bond_pos)) = pending {
        return Err(SmilesError::UnknownAtomToken { offset: bond_pos });
    }
    if let Some(&(_, open_pos)) = branch_stack.first() {
        return Err(SmilesError::UnbalancedParenthesis { offset: open_pos });
    }
    if let Some((&digit, ring)) = rings.iter().min_by_key(|(_, r)| r.offset) {
        return Err(SmilesError::UnclosedRingBond {
            digit,
            offset: ring.offset,
        });
    }

    // Implicit hydrogens for non-bracket atoms from default valences.
    for (i, atom) in atoms.iter_mut().enumerate() {
        if bracket[i] {
            continue;
        }
        let order_sum: f64 = bonds
            .iter()
            .filter(|b| b.a == i || b.b == i)
            .map(|b| b.order.valence_weight())
            .sum();
        atom.h_count = implicit_hydrogens(&atom.element, order_sum);
    }

    Ok(MolGraph { atoms, bonds })
}

/// Append an atom, bonding it to `prev` with the pending or default order.
fn push_atom(
    atoms: &mut Vec<Atom>,
    bonds: &mut Vec<Bond>,
    atom: Atom,
    prev: Option<usize>,
    pending: &mut Option<(BondOrder, usize)>,
) -> usize {
    let idx = atoms.len();
    let aromatic = atom.aromatic;
    atoms.push(atom);
    if let Some(p) = prev {
        let order = match pending.take() {
            Some((order, _)) => order,
            None if atoms[p].aromatic && aromatic => BondOrder::Aromatic,
            None => BondOrder::Single,
        };
        bonds.push(Bond { a: p, b: idx, order });
    }
    idx
}

fn close_or_open_ring(
    digit: u16,
    offset: usize,
    prev: Option<usize>,
    pending: &mut Option<(BondOrder, usize)>,
    rings: &mut HashMap<u16, OpenRing>,
    bonds: &mut Vec<Bond>,
    atoms: &[Atom],
) -> Result<(), SmilesError> {
    let here = match prev {
        Some(a) => a,
        // ring digit before any atom
        None => return Err(SmilesError::UnknownAtomToken { offset }),
    };
    match rings.remove(&digit) {
        Some(open) => {
            if open.atom == here {
                return Err(SmilesError::UnclosedRingBond { digit, offset });
            }
            if bonds
                .iter()
                .any(|b| (b.a == open.atom && b.b == here) || (b.a == here && b.b == open.atom))
            {
                return Err(SmilesError::UnclosedRingBond { digit, offset });
            }
            let closing_bond = pending.take().map(|(o, _)| o);
            let order = open
                .bond
                .or(closing_bond)
                .unwrap_or(if atoms[open.atom].aromatic && atoms[here].aromatic {
                    BondOrder::Aromatic
                } else {
                    BondOrder::Single
                });
            bonds.push(Bond {
                a: open.atom,
                b: here,
                order,
            });
        }
        None => {
            let bond = pending.take().map(|(o, _)| o);
            rings.insert(
                digit,
                OpenRing {
                    atom: here,
                    bond,
                    offset,
                },
            );
        }
    }
    Ok(())
}

const ORGANIC_TWO: [&str; 2] = ["Cl", "Br"];
const ORGANIC_ONE: [u8; 8] = [b'B', b'C', b'N', b'O', b'P', b'S', b'F', b'I'];
const AROMATIC_ONE: [u8; 6] = [b'b', b'c', b'n', b'o', b'p', b's'];

fn parse_organic_atom(bytes: &[u8], pos: usize) -> Result<(Atom, usize), SmilesError> {
    for two in ORGANIC_TWO {
        if bytes[pos..].starts_with(two.as_bytes()) {
            return Ok((plain_atom(two, false), 2));
        }
    }
    let c = bytes[pos];
    if ORGANIC_ONE.contains(&c) {
        let symbol = (c as char).to_string();
        return Ok((plain_atom(&symbol, false), 1));
    }
    if AROMATIC_ONE.contains(&c) {
        let symbol = (c as char).to_ascii_uppercase().to_string();
        return Ok((plain_atom(&symbol, true), 1));
    }
    Err(SmilesError::UnknownAtomToken { offset: pos })
}

fn plain_atom(element: &str, aromatic: bool) -> Atom {
    Atom {
        element: element.to_string(),
        aromatic,
        charge: 0,
        h_count: 0, // filled in after the bond list is complete
    }
}

/// Parse `[symbol H-count? charge?]` starting at the `[`. Returns the atom
/// and the number of bytes consumed including both brackets.
fn parse_bracket_atom(bytes: &[u8], start: usize) -> Result<(Atom, usize), SmilesError> {
    let mut pos = start + 1;
    if pos >= bytes.len() {
        return Err(SmilesError::UnknownAtomToken { offset: start });
    }

    // Element symbol: uppercase+optional lowercase, or a lowercase aromatic
    // symbol (c, n, o, p, s, as, se).
    let (element, aromatic) = if bytes[pos].is_ascii_uppercase() {
        let mut sym = String::from(bytes[pos] as char);
        pos += 1;
        if pos < bytes.len() && bytes[pos].is_ascii_lowercase() && bytes[pos] != b'h' {
            sym.push(bytes[pos] as char);
            pos += 1;
        }
        (sym, false)
    } else if bytes[pos..].starts_with(b"se") || bytes[pos..].starts_with(b"as") {
        let sym = format!(
            "{}{}",
            (bytes[pos] as char).to_ascii_uppercase(),
            bytes[pos + 1] as char
        );
        pos += 2;
        (sym, true)
    } else if AROMATIC_ONE.contains(&bytes[pos]) {
        let sym = (bytes[pos] as char).to_ascii_uppercase().to_string();
        pos += 1;
        (sym, true)
    } else {
        return Err(SmilesError::UnknownAtomToken { offset: pos });
    };

    let mut h_count = 0u32;
    if pos < bytes.len() && bytes[pos] == b'H' {
        pos += 1;
        h_count = 1;
        let digits_start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos > digits_start {
            h_count = src_number(bytes, digits_start, pos);
        }
    }

    let mut charge = 0i32;
    if pos < bytes.len() && (bytes[pos] == b'+' || bytes[pos] == b'-') {
        let sign = if bytes[pos] == b'+' { 1 } else { -1 };
        let symbol = bytes[pos];
        let mut magnitude = 1i32;
        pos += 1;
        if pos < bytes.len() && bytes[pos].is_ascii_digit() {
            let digits_start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            magnitude = src_number(bytes, digits_start, pos) as i32;
        } else {
            // repeated ++ / -- forms
            while pos < bytes.len() && bytes[pos] == symbol {
                magnitude += 1;
                pos += 1;
            }
        }
        charge = sign * magnitude;
    }

    if pos >= bytes.len() || bytes[pos] != b']' {
        return Err(SmilesError::UnknownAtomToken { offset: pos.min(bytes.len() - 1) });
    }
    pos += 1;

    Ok((
        Atom {
            element,
            aromatic,
            charge,
            h_count,
        },
        pos - start,
    ))
}

fn src_number(bytes: &[u8], start: usize, end: usize) -> u32 {
    std::str::from_utf8(&bytes[start..end])
        .expect("ascii digits")
        .parse()
        .expect("bounded digit run")
}

/// Default-valence lists for the organic subset; the implied H count is the
/// smallest listed valence that covers the rounded-up bond-order sum.
fn implicit_hydrogens(element: &str, order_sum: f64) -> u32 {
    let valences: &[u32] = match element {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        _ => return 0,
    };
    let used = order_sum.ceil() as u32;
    for &v in valences {
        if v >= used {
            return v - used;
        }
    }
    0
}
