//! Live locations, the grey/black collector, and garbage-free machines.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::engine::{Machine, StateSummary, Transitions};
use crate::store::{Addr, Store};
use crate::syntax::E;
use crate::MachineError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GcError {
    #[error("dangling address {0}")]
    Dangling(String),
}

/// Storables that can name other store locations.
pub trait Traced: Ord + Clone {
    /// Locations this storable references directly.
    fn touched(&self, out: &mut BTreeSet<Addr>);
}

/// Machine states with a store and a root set.
pub trait Heap: Clone {
    type Cell: Traced;

    fn heap(&self) -> &Store<Self::Cell>;
    fn with_heap(&self, store: Store<Self::Cell>) -> Self;
    fn roots(&self) -> BTreeSet<Addr>;
}

/// `LLσ(S)` for a set of storables, closed over the store.
pub fn live_locations<S: Traced>(cells: &BTreeSet<S>, store: &Store<S>) -> Result<BTreeSet<Addr>, GcError> {
    let mut direct = BTreeSet::new();
    for c in cells {
        c.touched(&mut direct);
    }
    gc_reachable(&direct, store)
}

/// Run the collector from `⟨roots, ∅, σ⟩` until no grey location is left;
/// the black set is the result.
pub fn gc_reachable<S: Traced>(roots: &BTreeSet<Addr>, store: &Store<S>) -> Result<BTreeSet<Addr>, GcError> {
    let mut grey: Vec<Addr> = roots.iter().cloned().collect();
    let mut black = BTreeSet::new();
    while let Some(a) = grey.pop() {
        if black.contains(&a) {
            continue;
        }
        let Some(cells) = store.get_set(&a) else {
            return Err(GcError::Dangling(a.to_string()));
        };
        let mut next = BTreeSet::new();
        for c in cells {
            c.touched(&mut next);
        }
        black.insert(a);
        grey.extend(next.into_iter().filter(|b| !black.contains(b)));
    }
    Ok(black)
}

/// Restrict a state's store to what its roots reach.
pub fn collect<H: Heap>(s: &H) -> H {
    let live = gc_reachable(&s.roots(), s.heap()).expect("well-formed machine state");
    s.with_heap(s.heap().restrict(&live))
}

/// The determinized machine: every transition is followed by collection.
#[derive(Debug, Clone)]
pub struct Collecting<M>(pub M);

impl<M> Machine for Collecting<M>
where
    M: Machine,
    M::State: Heap,
{
    type State = M::State;

    fn inject(&self, program: &E) -> Result<Self::State, MachineError> {
        Ok(collect(&self.0.inject(program)?))
    }

    fn transitions(&self, s: &Self::State) -> Transitions<Self::State> {
        let mut t = self.0.transitions(s);
        t.next = t.next.iter().map(collect).collect();
        t.dedup()
    }

    fn summarize(&self, s: &Self::State) -> StateSummary {
        self.0.summarize(s)
    }

    fn render(&self, s: &Self::State) -> String {
        self.0.render(s)
    }
}

mod impls {
    use super::*;
    use crate::cesk::{State, Storable};

    impl Traced for Storable {
        fn touched(&self, out: &mut BTreeSet<Addr>) {
            Storable::touched(self, out)
        }
    }

    impl Heap for State {
        type Cell = Storable;

        fn heap(&self) -> &Store<Storable> {
            &self.store
        }

        fn with_heap(&self, store: Store<Storable>) -> Self {
            State { store, ..self.clone() }
        }

        fn roots(&self) -> BTreeSet<Addr> {
            State::roots(self)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cesk::{CeskMachine, Family, Frame, Kont, Storable, Value};
    use crate::engine::{explore, run};
    use crate::store::{Env, IntAlloc, Policy};
    use crate::syntax::parse;

    fn kont(next: u64) -> Storable {
        let f = parse("(lambda (z) z)").unwrap();
        Storable::Kont(Kont::plain(Frame::Fn {
            fun: Value::Syntax(f),
            env: Env::empty(),
            call: crate::Label(0),
            next: Addr::Int(next),
        }))
    }

    #[test]
    fn mt_has_no_live_locations() {
        let store: Store<Storable> = Store::new();
        let cells = BTreeSet::from([Storable::Kont(Kont::mt())]);
        assert!(live_locations(&cells, &store).unwrap().is_empty());
    }

    #[test]
    fn ar_frame_keeps_its_next_and_bindings() {
        let mut store = Store::new();
        store.join(Addr::Int(1), Storable::Kont(Kont::mt()));
        let clo = parse("(lambda (q) q)").unwrap();
        store.join(Addr::Int(7), Storable::Val(Value::Syntax(clo), Env::empty()));
        let body = parse("(lambda (y) x)").unwrap();
        let frame = Frame::Ar {
            arg: body,
            env: Env::empty().extend("x".into(), Addr::Int(7)),
            call: crate::Label(0),
            next: Addr::Int(1),
        };
        let cells = BTreeSet::from([Storable::Kont(Kont::plain(frame))]);
        assert_eq!(live_locations(&cells, &store).unwrap(), BTreeSet::from([Addr::Int(1), Addr::Int(7)]));
    }

    #[test]
    fn chains_are_followed_and_garbage_dropped() {
        let mut store = Store::new();
        store.join(Addr::Int(1), kont(2));
        store.join(Addr::Int(2), kont(3));
        store.join(Addr::Int(3), Storable::Kont(Kont::mt()));
        store.join(Addr::Int(9), Storable::Kont(Kont::mt()));
        assert!(gc_reachable(&BTreeSet::new(), &store).unwrap().is_empty());
        let live = gc_reachable(&BTreeSet::from([Addr::Int(1)]), &store).unwrap();
        assert_eq!(live, BTreeSet::from([Addr::Int(1), Addr::Int(2), Addr::Int(3)]));
    }

    #[test]
    fn dangling_is_an_error() {
        let mut store = Store::new();
        store.join(Addr::Int(1), kont(5));
        assert!(matches!(gc_reachable(&BTreeSet::from([Addr::Int(1)]), &store), Err(GcError::Dangling(_))));
    }

    #[test]
    fn collecting_the_injected_state_changes_nothing() {
        let m = CeskMachine::new(Family::Ceshk, Policy::CONCRETE_CTX);
        let s = m.inject(&parse("((lambda (x) x) (lambda (y) y))").unwrap()).unwrap();
        assert_eq!(collect(&s), s);
    }

    #[test]
    fn dead_arguments_are_collected() {
        let m = CeskMachine::new(Family::Cesk, Policy::Int { timed: false, alloc: IntAlloc::Fresh });
        let e = parse("((lambda (x) (lambda (y) y)) (lambda (z) z))").unwrap();
        let t = run(&m, m.inject(&e).unwrap(), 100);
        let last = t.last();
        assert!(last.store.len() > 1);
        let c = collect(last);
        assert_eq!(c.store.len(), 1);
        assert_eq!(collect(&c), c);
    }

    #[test]
    fn collection_never_grows_the_abstract_state_space() {
        let e = parse("((lambda (x) (x x)) (lambda (x) (x x)))").unwrap();
        let m = CeskMachine::new(Family::Cesk, Policy::abstract_k(0));
        let plain = explore(&m, m.inject(&e).unwrap()).states.len();
        let gc = Collecting(m.clone());
        let collected = explore(&gc, gc.inject(&e).unwrap()).states.len();
        assert!(collected <= plain);
    }
}
