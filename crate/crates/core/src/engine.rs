//! The machine interface shared by every family, plus the two drivers built
//! on it: bounded concrete runs and reachable-state exploration (with or
//! without a global store).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::facts::{Event, FlowFacts};
use crate::store::Store;
use crate::syntax::{Label, E};
use crate::MachineError;

pub const DEFAULT_FUEL: usize = 10_000;

/// Why a state has no successor (for a given nondeterministic choice).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    Final,
    Stuck,
    Uncaught,
    SecurityFail,
}

impl Terminal {
    /// Terminals that signal a program error rather than an answer.
    pub fn is_error(self) -> bool {
        !matches!(self, Terminal::Final)
    }
}

/// All outcomes of one state: successor states, terminal choices, and the
/// events the transitions observed.
#[derive(Debug, Clone)]
pub struct Transitions<S> {
    pub next: Vec<S>,
    pub terminal: BTreeSet<Terminal>,
    pub events: Vec<Event>,
}

impl<S: Ord> Transitions<S> {
    pub fn new() -> Self {
        Transitions { next: Vec::new(), terminal: BTreeSet::new(), events: Vec::new() }
    }

    pub fn push(&mut self, s: S) {
        self.next.push(s);
    }

    pub fn halt(&mut self, t: Terminal) {
        self.terminal.insert(t);
    }

    pub fn event(&mut self, ev: Event) {
        self.events.push(ev);
    }

    /// Sort and drop duplicate successors.
    pub fn dedup(mut self) -> Self {
        self.next.sort();
        self.next.dedup();
        self.events.sort();
        self.events.dedup();
        self
    }
}

impl<S: Ord> Default for Transitions<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// A compact, machine-independent view of a state for reports and graphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSummary {
    pub control: String,
    pub label: Option<Label>,
    pub kont: String,
    pub store_size: usize,
}

pub trait Machine {
    type State: Clone + Ord + Debug;

    fn inject(&self, program: &E) -> Result<Self::State, MachineError>;
    fn transitions(&self, s: &Self::State) -> Transitions<Self::State>;
    fn summarize(&self, s: &Self::State) -> StateSummary;
    /// One-line stable rendering.
    fn render(&self, s: &Self::State) -> String;
}

/// Machines whose state splits into a store-less part and a store.
pub trait Widen: Machine {
    type Partial: Clone + Ord + Debug;
    type Storable: Clone + Ord + Debug;

    fn split(&self, s: &Self::State) -> (Self::Partial, Store<Self::Storable>);
    fn rejoin(&self, p: &Self::Partial, store: &Store<Self::Storable>) -> Self::State;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Terminal(Terminal),
    FuelExhausted,
}

#[derive(Debug, Clone)]
pub struct Trace<S> {
    pub states: Vec<S>,
    pub outcome: Outcome,
    pub events: Vec<Event>,
}

impl<S> Trace<S> {
    pub fn last(&self) -> &S {
        self.states.last().expect("traces start with the injected state")
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// Step a deterministic machine from `init` for at most `fuel` transitions.
///
/// Panics if a state has more than one successor.
pub fn run<M: Machine>(m: &M, init: M::State, fuel: usize) -> Trace<M::State> {
    let mut states = vec![init];
    let mut events = Vec::new();
    for _ in 0..fuel {
        let t = m.transitions(states.last().unwrap()).dedup();
        assert!(t.next.len() <= 1, "concrete machine produced {} successors", t.next.len());
        events.extend(t.events);
        match t.next.into_iter().next() {
            Some(s) => states.push(s),
            None => {
                let term = t.terminal.into_iter().next().unwrap_or(Terminal::Stuck);
                return Trace { states, outcome: Outcome::Terminal(term), events };
            }
        }
    }
    let outcome = match m.transitions(states.last().unwrap()).dedup() {
        t if t.next.is_empty() => Outcome::Terminal(t.terminal.into_iter().next().unwrap_or(Terminal::Stuck)),
        _ => Outcome::FuelExhausted,
    };
    Trace { states, outcome, events }
}

/// A reachable-state graph.
#[derive(Debug, Clone)]
pub struct Graph<S> {
    pub states: Vec<S>,
    pub succ: Vec<Vec<usize>>,
    pub terminal: Vec<BTreeSet<Terminal>>,
    pub facts: FlowFacts,
}

impl<S> Graph<S> {
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.succ.iter().enumerate().flat_map(|(i, js)| js.iter().map(move |&j| (i, j))).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.succ.iter().map(Vec::len).sum()
    }

    pub fn terminals(&self) -> BTreeSet<Terminal> {
        self.terminal.iter().flatten().copied().collect()
    }
}

/// Transitive closure of `transitions` from `init`, breadth first.
pub fn explore<M: Machine>(m: &M, init: M::State) -> Graph<M::State> {
    explore_ordered(m, init, |_| 0)
}

/// Like [`explore`] but pops the worklist entry chosen by `pick(len)`.
/// The reachable set must not depend on the order.
pub fn explore_ordered<M: Machine>(m: &M, init: M::State, pick: impl FnMut(usize) -> usize) -> Graph<M::State> {
    explore_with(m, init, pick, usize::MAX).expect("unbounded exploration")
}

/// Like [`explore`] but gives up once more than `limit` states are seen.
pub fn explore_limited<M: Machine>(m: &M, init: M::State, limit: usize) -> Result<Graph<M::State>, StateLimit> {
    explore_with(m, init, |_| 0, limit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("exploration exceeded {0} states")]
pub struct StateLimit(pub usize);

fn explore_with<M: Machine>(
    m: &M,
    init: M::State,
    mut pick: impl FnMut(usize) -> usize,
    limit: usize,
) -> Result<Graph<M::State>, StateLimit> {
    let mut index: BTreeMap<M::State, usize> = BTreeMap::new();
    let mut g = Graph { states: Vec::new(), succ: Vec::new(), terminal: Vec::new(), facts: FlowFacts::default() };
    let mut work = VecDeque::new();
    index.insert(init.clone(), 0);
    g.states.push(init);
    g.succ.push(Vec::new());
    g.terminal.push(BTreeSet::new());
    work.push_back(0usize);
    while !work.is_empty() {
        let at = pick(work.len()) % work.len();
        let i = work.remove(at).unwrap();
        let t = m.transitions(&g.states[i]).dedup();
        g.facts.extend(&t.events);
        g.terminal[i] = t.terminal;
        let mut succ = Vec::with_capacity(t.next.len());
        for s in t.next {
            let j = match index.get(&s) {
                Some(&j) => j,
                None => {
                    let j = g.states.len();
                    if j >= limit {
                        return Err(StateLimit(limit));
                    }
                    index.insert(s.clone(), j);
                    g.states.push(s);
                    g.succ.push(Vec::new());
                    g.terminal.push(BTreeSet::new());
                    work.push_back(j);
                    j
                }
            };
            succ.push(j);
        }
        succ.sort_unstable();
        succ.dedup();
        g.succ[i] = succ;
    }
    Ok(g)
}

/// The widened result: store-less states sharing one global store.
#[derive(Debug, Clone)]
pub struct System<P: Ord, S: Ord + Clone> {
    pub states: BTreeSet<P>,
    pub store: Store<S>,
    /// Applications of the transfer function until it returned its input.
    pub iterations: usize,
    pub facts: FlowFacts,
    pub terminal: BTreeSet<Terminal>,
    pub edges: BTreeSet<(P, P)>,
}

/// Least fixed point of the global-store transfer function, starting from
/// the empty system.
pub fn analyze_widened<M: Widen>(m: &M, init: M::State) -> System<M::Partial, M::Storable> {
    let (c0, store0) = m.split(&init);
    let mut states: BTreeSet<M::Partial> = BTreeSet::new();
    let mut store: Store<M::Storable> = Store::new();
    let mut facts = FlowFacts::default();
    let mut terminal = BTreeSet::new();
    let mut edges = BTreeSet::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut next_states = states.clone();
        next_states.insert(c0.clone());
        let mut next_store = store.clone();
        next_store.join_store(&store0);
        for c in &states {
            let t = m.transitions(&m.rejoin(c, &store)).dedup();
            facts.extend(&t.events);
            terminal.extend(t.terminal.iter().copied());
            for s in t.next {
                let (p, st) = m.split(&s);
                next_store.join_store(&st);
                edges.insert((c.clone(), p.clone()));
                next_states.insert(p);
            }
        }
        assert!(states.is_subset(&next_states) && store.leq(&next_store), "transfer function is not monotone");
        if next_states == states && next_store == store {
            return System { states, store, iterations, facts, terminal, edges };
        }
        states = next_states;
        store = next_store;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A toy machine over integers: n → {n+1, 2n} below a bound.
    struct Toy;

    impl Machine for Toy {
        type State = u32;
        fn inject(&self, _: &E) -> Result<u32, MachineError> {
            Ok(1)
        }
        fn transitions(&self, s: &u32) -> Transitions<u32> {
            let mut t = Transitions::new();
            for n in [s + 1, s * 2] {
                if n < 20 {
                    t.push(n);
                }
            }
            if t.next.is_empty() {
                t.halt(Terminal::Final);
            }
            t
        }
        fn summarize(&self, s: &u32) -> StateSummary {
            StateSummary { control: s.to_string(), label: None, kont: String::new(), store_size: 0 }
        }
        fn render(&self, s: &u32) -> String {
            s.to_string()
        }
    }

    #[test]
    fn exploration_reaches_everything_once() {
        let g = explore(&Toy, 1);
        assert_eq!(g.states.len(), 19);
        assert_eq!(g.terminals(), BTreeSet::from([Terminal::Final]));
    }

    #[test]
    fn exploration_order_does_not_change_the_result() {
        let a: BTreeSet<u32> = explore(&Toy, 1).states.into_iter().collect();
        let mut seed = 7usize;
        let b: BTreeSet<u32> = explore_ordered(&Toy, 1, |n| {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            seed % n
        })
        .states
        .into_iter()
        .collect();
        assert_eq!(a, b);
    }
}
