//! DOT and JSON output for reachable-state graphs and widened systems.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{Graph, Machine, StateSummary, System, Terminal, Widen};
use crate::facts::FlowFacts;
use crate::syntax::Label;

/// The serialized analysis result. `flows` maps application labels to the
/// λ labels applied there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphReport {
    pub machine: String,
    pub states: Vec<StateSummary>,
    pub edges: Vec<(usize, usize)>,
    pub flows: BTreeMap<Label, BTreeSet<Label>>,
    pub terminals: BTreeMap<usize, BTreeSet<Terminal>>,
    pub facts: FlowFacts,
    /// Transfer-function iterations, for widened results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    /// Size of the shared store, for widened results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_store: Option<usize>,
}

impl GraphReport {
    pub fn from_graph<M: Machine>(name: &str, m: &M, g: &Graph<M::State>) -> Self {
        GraphReport {
            machine: name.to_string(),
            states: g.states.iter().map(|s| m.summarize(s)).collect(),
            edges: g.edges(),
            flows: g.facts.calls.clone(),
            terminals: g
                .terminal
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.is_empty())
                .map(|(i, t)| (i, t.clone()))
                .collect(),
            facts: g.facts.clone(),
            iterations: None,
            global_store: None,
        }
    }

    /// States of a widened system are summarized against the global store.
    /// Terminal kinds are not attributed to individual partial states, so
    /// they are listed under the initial state's index only when present.
    pub fn from_system<M: Widen>(name: &str, m: &M, sys: &System<M::Partial, M::Storable>) -> Self {
        let index: BTreeMap<&M::Partial, usize> = sys.states.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let states = sys.states.iter().map(|p| m.summarize(&m.rejoin(p, &sys.store))).collect();
        let edges = sys.edges.iter().map(|(a, b)| (index[a], index[b])).collect();
        let mut terminals = BTreeMap::new();
        for p in &sys.states {
            let t = m.transitions(&m.rejoin(p, &sys.store)).terminal;
            if !t.is_empty() {
                terminals.insert(index[p], t);
            }
        }
        GraphReport {
            machine: name.to_string(),
            states,
            edges,
            flows: sys.facts.calls.clone(),
            terminals,
            facts: sys.facts.clone(),
            iterations: Some(sys.iterations),
            global_store: Some(sys.store.len()),
        }
    }

    pub fn terminal_kinds(&self) -> BTreeSet<Terminal> {
        self.terminals.values().flatten().copied().collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph states {\n  node [shape=box, fontname=monospace];\n");
        for (i, s) in self.states.iter().enumerate() {
            let label = match s.label {
                Some(l) => format!("ℓ{l} @ {}", s.kont),
                None => format!("{} @ {}", s.control, s.kont),
            };
            let shape = if self.terminals.contains_key(&i) { ", peripheries=2" } else { "" };
            writeln!(out, "  s{i} [label=\"{}\"{shape}];", escape(&label)).unwrap();
        }
        for (i, j) in &self.edges {
            writeln!(out, "  s{i} -> s{j};").unwrap();
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}
