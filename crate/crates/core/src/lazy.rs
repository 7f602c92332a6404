//! The by-need Krivine machine: the concrete machine with recursive
//! continuations and the pointer-refined, time-stamped machine in three
//! variants.

use std::collections::BTreeSet;
use std::fmt;
use std::rc::Rc;

use crate::alpha::{alpha_addr, alpha_time, Abstraction};
use crate::engine::{Machine, StateSummary, Terminal, Transitions, Widen};
use crate::facts::Event;
use crate::gc::{Heap, Traced};
use crate::store::{Addr, Env, IntAlloc, Policy, Site, Slot, Store, TickEvent, Time};
use crate::syntax::{ExprKind, Label, E};
use crate::{check_closed, MachineError};

/// Thunks and forced values, shared by both machines.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cell {
    /// `d(e, ρ)`.
    Thunk(E, Env),
    /// `c(v, ρ)`.
    Computed(E, Env),
}

impl Cell {
    fn map_addrs(&self, f: &impl Fn(&Addr) -> Addr) -> Cell {
        match self {
            Cell::Thunk(e, env) => Cell::Thunk(e.clone(), env.map_addrs(f)),
            Cell::Computed(e, env) => Cell::Computed(e.clone(), env.map_addrs(f)),
        }
    }

    fn touched(&self, out: &mut BTreeSet<Addr>) {
        let (Cell::Thunk(e, env) | Cell::Computed(e, env)) = self;
        out.extend(env.restricted_range(e.fv()).cloned());
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Thunk(e, env) => write!(f, "d({e}, {env})"),
            Cell::Computed(e, env) => write!(f, "c({e}, {env})"),
        }
    }
}

/// Recursive continuations of the concrete machine.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LkKont {
    Mt,
    /// `c1(a, κ)`: write the value back to `a`.
    Force(Addr, Rc<LkKont>),
    /// `c2(a, κ)`: apply the operator to the argument at `a`.
    Arg(Addr, Rc<LkKont>),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LkState {
    pub control: E,
    pub env: Env,
    pub store: Store<Cell>,
    pub kont: Rc<LkKont>,
}

/// The concrete machine with recursive continuations.
#[derive(Debug, Clone, Default)]
pub struct Lk;

impl Lk {
    fn fresh(store: &Store<Cell>) -> Addr {
        Addr::Int(store.max_int().map_or(1, |n| n + 1))
    }
}

impl Machine for Lk {
    type State = LkState;

    fn inject(&self, program: &E) -> Result<LkState, MachineError> {
        check_closed(program)?;
        Ok(LkState { control: program.clone(), env: Env::empty(), store: Store::new(), kont: Rc::new(LkKont::Mt) })
    }

    fn transitions(&self, s: &LkState) -> Transitions<LkState> {
        let mut out = Transitions::new();
        match s.control.kind() {
            ExprKind::Ref(x) => {
                let Some(a) = s.env.get(x) else {
                    out.halt(Terminal::Stuck);
                    return out;
                };
                match s.store.get_one(a) {
                    Some(Cell::Thunk(e, env)) => {
                        out.event(Event::Force { operand: e.label() });
                        out.push(LkState {
                            control: e.clone(),
                            env: env.clone(),
                            store: s.store.clone(),
                            kont: Rc::new(LkKont::Force(a.clone(), s.kont.clone())),
                        });
                    }
                    Some(Cell::Computed(v, env)) => out.push(LkState {
                        control: v.clone(),
                        env: env.clone(),
                        store: s.store.clone(),
                        kont: s.kont.clone(),
                    }),
                    None => out.halt(Terminal::Stuck),
                }
            }
            ExprKind::App(e0, e1) => {
                let a = Lk::fresh(&s.store);
                let mut store = s.store.clone();
                store.overwrite(a.clone(), Cell::Thunk(e1.clone(), s.env.clone()));
                out.event(Event::Delay { operand: e1.label() });
                out.push(LkState {
                    control: e0.clone(),
                    env: s.env.clone(),
                    store,
                    kont: Rc::new(LkKont::Arg(a, s.kont.clone())),
                });
            }
            ExprKind::Lam(x, body) => match &*s.kont {
                LkKont::Mt => out.halt(Terminal::Final),
                LkKont::Force(a, k) => {
                    let mut store = s.store.clone();
                    store.overwrite(a.clone(), Cell::Computed(s.control.clone(), s.env.clone()));
                    out.push(LkState { control: s.control.clone(), env: s.env.clone(), store, kont: k.clone() });
                }
                LkKont::Arg(a, k) => out.push(LkState {
                    control: body.clone(),
                    env: s.env.extend(x.clone(), a.clone()),
                    store: s.store.clone(),
                    kont: k.clone(),
                }),
            },
            _ => out.halt(Terminal::Stuck),
        }
        out
    }

    fn summarize(&self, s: &LkState) -> StateSummary {
        StateSummary {
            control: s.control.to_string(),
            label: Some(s.control.label()),
            kont: format!("{:?}", s.kont),
            store_size: s.store.len(),
        }
    }

    fn render(&self, s: &LkState) -> String {
        let mut k = String::new();
        let mut cur = &s.kont;
        loop {
            match &**cur {
                LkKont::Mt => {
                    k.push_str("mt");
                    break;
                }
                LkKont::Force(a, n) => {
                    k.push_str(&format!("c1({a}, "));
                    cur = n;
                }
                LkKont::Arg(a, n) => {
                    k.push_str(&format!("c2({a}, "));
                    cur = n;
                }
            }
        }
        let depth = k.matches('(').count();
        k.push_str(&")".repeat(depth));
        format!("⟨{}, {}, {}, {k}⟩", s.control, s.env, render_store(&s.store))
    }
}

fn render_store<S: Ord + Clone + fmt::Display>(store: &Store<S>) -> String {
    let items: Vec<String> = store
        .0
        .iter()
        .map(|(a, set)| {
            let vs: Vec<String> = set.iter().map(|s| s.to_string()).collect();
            if vs.len() == 1 {
                format!("{a}↦{}", vs[0])
            } else {
                format!("{a}↦{{{}}}", vs.join(" | "))
            }
        })
        .collect();
    format!("{{{}}}", items.join(", "))
}

/// Which application rows the pointer-refined machine uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Baseline,
    /// Variable operands reuse their address; value operands are stored as
    /// computed values.
    Optimized,
    /// The thunk is built when the operator is applied.
    Postponed,
}

/// Store-allocated continuations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kont {
    Mt,
    /// `c1(a, b)`.
    Force { target: Addr, next: Addr },
    /// `c2(a, b)`; `call` is the application label.
    Arg { arg: Addr, next: Addr, call: Label },
    /// `c2(e, ρ, b)` of the postponing variant.
    Postponed { arg: E, env: Env, next: Addr, call: Label },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Storable {
    Cell(Cell),
    Kont(Kont),
}

impl fmt::Display for Storable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Storable::Cell(c) => write!(f, "{c}"),
            Storable::Kont(Kont::Mt) => write!(f, "mt"),
            Storable::Kont(Kont::Force { target, next }) => write!(f, "c1({target}, {next})"),
            Storable::Kont(Kont::Arg { arg, next, .. }) => write!(f, "c2({arg}, {next})"),
            Storable::Kont(Kont::Postponed { arg, env, next, .. }) => write!(f, "c2({arg}, {env}, {next})"),
        }
    }
}

impl Storable {
    fn map_addrs(&self, f: &impl Fn(&Addr) -> Addr) -> Storable {
        match self {
            Storable::Cell(c) => Storable::Cell(c.map_addrs(f)),
            Storable::Kont(k) => Storable::Kont(match k {
                Kont::Mt => Kont::Mt,
                Kont::Force { target, next } => Kont::Force { target: f(target), next: f(next) },
                Kont::Arg { arg, next, call } => Kont::Arg { arg: f(arg), next: f(next), call: *call },
                Kont::Postponed { arg, env, next, call } => {
                    Kont::Postponed { arg: arg.clone(), env: env.map_addrs(f), next: f(next), call: *call }
                }
            }),
        }
    }
}

impl Traced for Storable {
    fn touched(&self, out: &mut BTreeSet<Addr>) {
        match self {
            Storable::Cell(c) => c.touched(out),
            Storable::Kont(Kont::Mt) => {}
            Storable::Kont(Kont::Force { target, next }) => {
                out.insert(target.clone());
                out.insert(next.clone());
            }
            Storable::Kont(Kont::Arg { arg, next, .. }) => {
                out.insert(arg.clone());
                out.insert(next.clone());
            }
            Storable::Kont(Kont::Postponed { arg, env, next, .. }) => {
                out.insert(next.clone());
                out.extend(env.restricted_range(arg.fv()).cloned());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct State {
    pub control: E,
    pub env: Env,
    pub store: Store<Storable>,
    pub kont: Addr,
    pub time: Time,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Partial {
    pub control: E,
    pub env: Env,
    pub kont: Addr,
    pub time: Time,
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
        let mut out: BTreeSet<Addr> = self.env.restricted_range(self.control.fv()).cloned().collect();
        out.insert(self.kont.clone());
        out.insert(Addr::Halt);
        out
    }
}

impl Abstraction for State {
    fn alpha(&self, k: usize) -> Self {
        let f = |a: &Addr| alpha_addr(a, k);
        let mut store = Store::new();
        for (a, set) in &self.store.0 {
            for s in set {
                store.join(f(a), s.map_addrs(&f));
            }
        }
        State {
            control: self.control.clone(),
            env: self.env.map_addrs(&f),
            store,
            kont: f(&self.kont),
            time: alpha_time(&self.time, k),
        }
    }

    fn leq(&self, other: &Self) -> bool {
        self.control == other.control
            && self.env == other.env
            && self.kont == other.kont
            && self.time == other.time
            && self.store.leq(&other.store)
    }
}

/// The pointer-refined machine; concrete or abstract by `policy`.
#[derive(Debug, Clone)]
pub struct LkStar {
    pub variant: Variant,
    pub policy: Policy,
}

impl LkStar {
    pub fn new(variant: Variant, policy: Policy) -> Self {
        LkStar { variant, policy }
    }

    /// The untimed integer instantiation that runs in lock-step with [`Lk`].
    pub fn concrete() -> Self {
        LkStar::new(Variant::Baseline, Policy::Int { timed: false, alloc: IntAlloc::Fresh })
    }

    fn alloc(&self, t: &Time, site: Site, store: &Store<Storable>) -> Addr {
        self.policy.alloc(t, site, store)
    }

    /// Two draws in one step: the second sees the first in the store so
    /// integer allocation stays fresh.
    fn alloc2(&self, t: &Time, first: Site, second: Site, store: &Store<Storable>) -> (Addr, Addr) {
        let a = self.alloc(t, first, store);
        let mut probe = store.clone();
        probe.join(a.clone(), Storable::Kont(Kont::Mt));
        let b = self.alloc(t, second, &probe);
        (a, b)
    }

    fn strong(&self) -> bool {
        self.policy.strong_updates()
    }

    fn push_app(&self, s: &State, e: &E, e0: &E, e1: &E, out: &mut Transitions<State>) {
        let strong = self.strong();
        let call = e.label();
        let u = self.policy.tick(&s.time, TickEvent::Call(call));
        let mut store = s.store.clone();
        let (kont, cont) = match (self.variant, e1.kind()) {
            (Variant::Optimized, ExprKind::Ref(x)) => {
                let Some(arg) = s.env.get(x) else {
                    out.halt(Terminal::Stuck);
                    return;
                };
                let b = self.alloc(&s.time, Site::Label(call, Slot::Apply), &s.store);
                (b, Kont::Arg { arg: arg.clone(), next: s.kont.clone(), call })
            }
            (Variant::Optimized, ExprKind::Lam(..)) => {
                let (b, c) =
                    self.alloc2(&s.time, Site::Label(e1.label(), Slot::Thunk), Site::Label(call, Slot::Apply), &s.store);
                store.update(b.clone(), Storable::Cell(Cell::Computed(e1.clone(), s.env.clone())), strong);
                (c, Kont::Arg { arg: b, next: s.kont.clone(), call })
            }
            (Variant::Postponed, _) => {
                let b = self.alloc(&s.time, Site::Label(call, Slot::Apply), &s.store);
                (b, Kont::Postponed { arg: e1.clone(), env: s.env.clone(), next: s.kont.clone(), call })
            }
            _ => {
                let (c, b) =
                    self.alloc2(&s.time, Site::Label(e1.label(), Slot::Thunk), Site::Label(call, Slot::Apply), &s.store);
                store.update(c.clone(), Storable::Cell(Cell::Thunk(e1.clone(), s.env.clone())), strong);
                out.event(Event::Delay { operand: e1.label() });
                (b, Kont::Arg { arg: c, next: s.kont.clone(), call })
            }
        };
        store.update(kont.clone(), Storable::Kont(cont), strong);
        out.push(State { control: e0.clone(), env: s.env.clone(), store, kont, time: u });
    }
}

impl Machine for LkStar {
    type State = State;

    fn inject(&self, program: &E) -> Result<State, MachineError> {
        check_closed(program)?;
        let mut store = Store::new();
        store.join(Addr::Halt, Storable::Kont(Kont::Mt));
        Ok(State { control: program.clone(), env: Env::empty(), store, kont: Addr::Halt, time: self.policy.initial_time() })
    }

    fn transitions(&self, s: &State) -> Transitions<State> {
        let mut out = Transitions::new();
        let strong = self.strong();
        match s.control.kind() {
            ExprKind::Ref(x) => {
                let Some(a) = s.env.get(x) else {
                    out.halt(Terminal::Stuck);
                    return out;
                };
                let u = self.policy.tick(&s.time, TickEvent::Keep);
                let mut any = false;
                for st in s.store.get(a) {
                    match st {
                        Storable::Cell(Cell::Thunk(e, env)) => {
                            any = true;
                            let b = self.alloc(&s.time, Site::Label(s.control.label(), Slot::Force), &s.store);
                            let mut store = s.store.clone();
                            store.update(b.clone(), Storable::Kont(Kont::Force { target: a.clone(), next: s.kont.clone() }), strong);
                            out.event(Event::Force { operand: e.label() });
                            out.push(State { control: e.clone(), env: env.clone(), store, kont: b, time: u.clone() });
                        }
                        Storable::Cell(Cell::Computed(v, env)) => {
                            any = true;
                            out.push(State {
                                control: v.clone(),
                                env: env.clone(),
                                store: s.store.clone(),
                                kont: s.kont.clone(),
                                time: u.clone(),
                            });
                        }
                        Storable::Kont(_) => {}
                    }
                }
                if !any {
                    out.halt(Terminal::Stuck);
                }
            }
            ExprKind::App(e0, e1) => self.push_app(s, &s.control, e0, e1, &mut out),
            ExprKind::Lam(x, body) => {
                for st in s.store.get(&s.kont) {
                    let Storable::Kont(k) = st else { continue };
                    match k {
                        Kont::Mt => out.halt(Terminal::Final),
                        Kont::Force { target, next } => {
                            let mut store = s.store.clone();
                            store.update(target.clone(), Storable::Cell(Cell::Computed(s.control.clone(), s.env.clone())), strong);
                            out.push(State {
                                control: s.control.clone(),
                                env: s.env.clone(),
                                store,
                                kont: next.clone(),
                                time: self.policy.tick(&s.time, TickEvent::Keep),
                            });
                        }
                        Kont::Arg { arg, next, call } => {
                            out.event(Event::Call { site: *call, lam: s.control.label() });
                            out.push(State {
                                control: body.clone(),
                                env: s.env.extend(x.clone(), arg.clone()),
                                store: s.store.clone(),
                                kont: next.clone(),
                                time: self.policy.tick(&s.time, TickEvent::Enter),
                            });
                        }
                        Kont::Postponed { arg, env, next, call } => {
                            let b = self.alloc(&s.time, Site::Var(x.clone()), &s.store);
                            let mut store = s.store.clone();
                            store.update(b.clone(), Storable::Cell(Cell::Thunk(arg.clone(), env.clone())), strong);
                            out.event(Event::Delay { operand: arg.label() });
                            out.event(Event::Call { site: *call, lam: s.control.label() });
                            out.push(State {
                                control: body.clone(),
                                env: s.env.extend(x.clone(), b),
                                store,
                                kont: next.clone(),
                                time: self.policy.tick(&s.time, TickEvent::Enter),
                            });
                        }
                    }
                }
            }
            _ => out.halt(Terminal::Stuck),
        }
        out.dedup()
    }

    fn summarize(&self, s: &State) -> StateSummary {
        StateSummary {
            control: s.control.to_string(),
            label: Some(s.control.label()),
            kont: s.kont.to_string(),
            store_size: s.store.len(),
        }
    }

    fn render(&self, s: &State) -> String {
        format!("⟨{}, {}, {}, {}, {}⟩", s.control, s.env, render_store(&s.store), s.kont, s.time)
    }
}

impl Widen for LkStar {
    type Partial = Partial;
    type Storable = Storable;

    fn split(&self, s: &State) -> (Partial, Store<Storable>) {
        let p = Partial { control: s.control.clone(), env: s.env.clone(), kont: s.kont.clone(), time: s.time.clone() };
        (p, s.store.clone())
    }

    fn rejoin(&self, p: &Partial, store: &Store<Storable>) -> State {
        State { control: p.control.clone(), env: p.env.clone(), store: store.clone(), kont: p.kont.clone(), time: p.time.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{explore, run, Outcome};
    use crate::syntax::parse;

    const K_OMEGA: &str = "((lambda (x) (lambda (y) x)) ((lambda (w) (w w)) (lambda (w) (w w))))";

    #[test]
    fn forcing_a_thunk_pushes_a_write_back() {
        let e = parse("((lambda (x) x) (lambda (y) y))").unwrap();
        let t = run(&Lk, Lk.inject(&e).unwrap(), 100);
        assert_eq!(t.outcome, Outcome::Terminal(Terminal::Final));
        // app, λ against c2, force x, λ against c1.
        assert_eq!(t.steps(), 4);
        assert!(matches!(&*t.states[3].kont, LkKont::Force(..)));
        assert!(matches!(t.last().store.get_one(&Addr::Int(1)), Some(Cell::Computed(..))));
    }

    #[test]
    fn unused_divergent_arguments_are_never_forced() {
        let e = parse(K_OMEGA).unwrap();
        let t = run(&Lk, Lk.inject(&e).unwrap(), 1000);
        assert_eq!(t.outcome, Outcome::Terminal(Terminal::Final));
        assert_eq!(t.last().control.to_string(), "(lambda (y) x)");
        let mut facts = crate::facts::FlowFacts::default();
        facts.extend(&t.events);
        assert_eq!(facts.never_forced(), vec![Label(4)]);
        assert!(t.states.iter().all(|s| s.store.0.values().flatten().all(|c| !matches!(c, Cell::Computed(e, _) if e.label() == Label(4)))));
    }

    #[test]
    fn abstract_machine_finds_the_identity() {
        let e = parse("((lambda (x) x) (lambda (y) y))").unwrap();
        for v in [Variant::Baseline, Variant::Optimized, Variant::Postponed] {
            let m = LkStar::new(v, Policy::abstract_k(0));
            let g = explore(&m, m.inject(&e).unwrap());
            let finals: Vec<_> = g
                .states
                .iter()
                .enumerate()
                .filter(|(i, _)| g.terminal[*i].contains(&Terminal::Final))
                .map(|(_, s)| s.control.to_string())
                .collect();
            assert_eq!(finals, vec!["(lambda (y) y)".to_string()], "{v:?}");
        }
    }

    #[test]
    fn optimized_variable_operands_allocate_no_thunk() {
        let e = parse("(lambda (f) (lambda (x) (f x)))").unwrap();
        let ExprKind::Lam(_, inner) = e.kind() else { panic!() };
        let ExprKind::Lam(_, app) = inner.kind() else { panic!() };
        let m = LkStar::new(Variant::Optimized, Policy::abstract_k(0));
        let mut s = m.inject(&parse("(lambda (q) q)").unwrap()).unwrap();
        s.control = app.clone();
        let fa = Addr::Int(10);
        let xa = Addr::Int(11);
        s.env = Env::empty().extend("f".into(), fa).extend("x".into(), xa.clone());
        let t = m.transitions(&s);
        assert_eq!(t.next.len(), 1);
        let n = &t.next[0];
        assert_eq!(n.store.len(), 2);
        let pushed = n.store.get(&n.kont).next().unwrap();
        assert!(matches!(pushed, Storable::Kont(Kont::Arg { arg, .. }) if *arg == xa));
    }

    #[test]
    fn postponed_thunks_are_built_at_binding() {
        let e = parse("((lambda (x) x) (lambda (y) y))").unwrap();
        let m = LkStar::new(Variant::Postponed, Policy::abstract_k(0));
        let s0 = m.inject(&e).unwrap();
        let s1 = m.transitions(&s0).next.remove(0);
        assert!(s1.store.0.values().flatten().all(|s| !matches!(s, Storable::Cell(_))));
        assert!(matches!(s1.store.get(&s1.kont).next(), Some(Storable::Kont(Kont::Postponed { .. }))));
        let s2 = m.transitions(&s1).next.remove(0);
        let bound = s2.env.get("x").unwrap();
        assert!(matches!(s2.store.get(bound).next(), Some(Storable::Cell(Cell::Thunk(..)))));
    }

    #[test]
    fn variants_agree_on_application_operands() {
        let e = parse("((lambda (f) f) ((lambda (g) g) (lambda (h) h)))").unwrap();
        let base = LkStar::new(Variant::Baseline, Policy::abstract_k(0));
        let opt = LkStar::new(Variant::Optimized, Policy::abstract_k(0));
        let s = base.inject(&e).unwrap();
        assert_eq!(base.transitions(&s).next, opt.transitions(&s).next);
    }
}
