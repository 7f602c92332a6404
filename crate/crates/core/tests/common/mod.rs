#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use aam_core::cesk::{CeskMachine, Family};
use aam_core::corpus::{self, Group, Program};
use aam_core::Policy;

/// The pointer-refined family whose language covers a corpus group.
pub fn family(g: Group) -> Family {
    match g {
        Group::Pure | Group::Extended => Family::Cesk,
        Group::Exceptions => Family::Ceshk,
        Group::Security => Family::Cm,
    }
}

pub fn machine(p: &Program, policy: Policy) -> CeskMachine {
    CeskMachine::new(family(p.group), policy).with_universe(corpus::universe())
}

pub fn goldens_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/state_counts.tsv")
}

/// `name → [count at k = 0, count at k = 1]`.
pub fn read_goldens() -> BTreeMap<String, [usize; 2]> {
    let text = std::fs::read_to_string(goldens_path()).expect("state count goldens");
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            (cols[0].to_string(), [cols[1].parse().unwrap(), cols[2].parse().unwrap()])
        })
        .collect()
}
