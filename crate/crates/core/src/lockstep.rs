//! Lock-step comparison of concrete machines.
//!
//! States are erased to a machine-independent shape: continuations are
//! flattened into frame lists and store locations are renumbered in the
//! order a fixed traversal first meets them, so two states erase equally
//! exactly when they agree up to a renaming of locations.

use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use serde::Serialize;

use crate::cesk::{self, CeskMachine, Family};
use crate::concrete::{self, Cek, CekEnv, CekKont, Cesk, Closure};
use crate::engine::{Machine, Terminal};
use crate::lazy::{self, Cell, Lk, LkKont, LkStar};
use crate::security::Marks;
use crate::store::{Addr, Env, IntAlloc, Policy};
use crate::syntax::{ExprKind, Var, E};
use crate::MachineError;

pub type Loc = u32;
pub type EnvN = Vec<(Var, Loc)>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValN {
    Clo(E, EnvN),
    Kont(KontN),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameN {
    Mt,
    Ar(E, EnvN),
    Fn(Box<ValN>),
    If(E, E, EnvN),
    Set(Loc),
}

/// Innermost frame first; the last one is `Mt`.
pub type KontN = Vec<(FrameN, Marks)>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandlerN {
    pub handler: E,
    pub env: EnvN,
    pub kont: KontN,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlN {
    Expr(E),
    Kont(KontN),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Erased {
    pub control: ControlN,
    pub env: EnvN,
    pub kont: KontN,
    /// Handler stack, innermost first; `None` without a handler register.
    pub handlers: Option<Vec<HandlerN>>,
    /// Contents of location `i` at index `i`.
    pub heap: Vec<ValN>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LazyFrame {
    Force(Loc),
    Arg(Loc),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LazyErased {
    pub control: E,
    pub env: EnvN,
    pub kont: Vec<LazyFrame>,
    /// `(forced, expression, environment)` per location.
    pub heap: Vec<(bool, E, EnvN)>,
}

struct Locs<K> {
    ids: BTreeMap<K, Loc>,
    pending: VecDeque<K>,
}

impl<K: Ord + Clone> Locs<K> {
    fn new() -> Self {
        Locs { ids: BTreeMap::new(), pending: VecDeque::new() }
    }

    fn loc(&mut self, k: &K) -> Loc {
        if let Some(&l) = self.ids.get(k) {
            return l;
        }
        let l = self.ids.len() as Loc;
        self.ids.insert(k.clone(), l);
        self.pending.push_back(k.clone());
        l
    }
}

/// Orders an `Rc` by identity.
#[derive(Clone)]
struct ByPtr<T>(Rc<T>);

impl<T> PartialEq for ByPtr<T> {
    fn eq(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}
impl<T> Eq for ByPtr<T> {}
impl<T> PartialOrd for ByPtr<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for ByPtr<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        Rc::as_ptr(&self.0).cmp(&Rc::as_ptr(&other.0))
    }
}

fn erase_env(env: &Env, locs: &mut Locs<Addr>) -> EnvN {
    env.0.iter().map(|(x, a)| (x.clone(), locs.loc(a))).collect()
}

pub fn erase_cek(s: &concrete::CekState) -> Erased {
    let mut locs: Locs<ByPtr<Closure>> = Locs::new();
    fn env_n(env: &CekEnv, locs: &mut Locs<ByPtr<Closure>>) -> EnvN {
        env.iter().map(|(x, c)| (x.clone(), locs.loc(&ByPtr(c.clone())))).collect()
    }
    let env = env_n(&s.env, &mut locs);
    let mut kont = Vec::new();
    let mut cur = &s.kont;
    loop {
        let f = match &**cur {
            CekKont::Mt => {
                kont.push((FrameN::Mt, Marks::empty()));
                break;
            }
            CekKont::Ar { arg, env, next } => (FrameN::Ar(arg.clone(), env_n(env, &mut locs)), next),
            CekKont::Fn { fun, next } => {
                (FrameN::Fn(Box::new(ValN::Clo(fun.value.clone(), env_n(&fun.env, &mut locs)))), next)
            }
            CekKont::If { then, els, env, next } => (FrameN::If(then.clone(), els.clone(), env_n(env, &mut locs)), next),
        };
        kont.push((f.0, Marks::empty()));
        cur = f.1;
    }
    let mut heap = Vec::new();
    while let Some(ByPtr(c)) = locs.pending.pop_front() {
        let env = env_n(&c.env, &mut locs);
        heap.push(ValN::Clo(c.value.clone(), env));
    }
    Erased { control: ControlN::Expr(s.control.clone()), env, kont, handlers: None, heap }
}

fn erase_rec_kont(k: &Rc<concrete::Kont>, locs: &mut Locs<Addr>) -> KontN {
    use concrete::Frame;
    let mut out = Vec::new();
    let mut cur = k;
    loop {
        let (f, next) = match &cur.frame {
            Frame::Mt => {
                out.push((FrameN::Mt, cur.marks.clone()));
                return out;
            }
            Frame::Ar { arg, env, next, .. } => (FrameN::Ar(arg.clone(), erase_env(env, locs)), next),
            Frame::Fn { fun, env, next, .. } => (FrameN::Fn(Box::new(erase_rec_value(fun, env, locs))), next),
            Frame::If { then, els, env, next } => (FrameN::If(then.clone(), els.clone(), erase_env(env, locs)), next),
            Frame::Set { target, next } => (FrameN::Set(locs.loc(target)), next),
        };
        out.push((f, cur.marks.clone()));
        cur = next;
    }
}

fn erase_rec_value(v: &concrete::Value, env: &Env, locs: &mut Locs<Addr>) -> ValN {
    match v {
        concrete::Value::Syntax(e) => ValN::Clo(e.clone(), erase_env(env, locs)),
        concrete::Value::Kont(k) => ValN::Kont(erase_rec_kont(k, locs)),
    }
}

pub fn erase_rec(s: &concrete::CeskState) -> Erased {
    let mut locs = Locs::new();
    let control = match &s.control {
        concrete::Control::Expr(e) => ControlN::Expr(e.clone()),
        concrete::Control::Kont(k) => ControlN::Kont(erase_rec_kont(k, &mut locs)),
    };
    let env = erase_env(&s.env, &mut locs);
    let kont = erase_rec_kont(&s.kont, &mut locs);
    let handlers = s.handler.as_ref().map(|h| {
        let mut out = Vec::new();
        let mut cur = h;
        while let concrete::Handler::Hn { handler, env, kont, next } = &**cur {
            out.push(HandlerN {
                handler: handler.clone(),
                env: erase_env(env, &mut locs),
                kont: erase_rec_kont(kont, &mut locs),
            });
            cur = next;
        }
        out
    });
    let mut heap = Vec::new();
    while let Some(a) = locs.pending.pop_front() {
        let (v, env) = s.store.get_one(&a).expect("bound location");
        heap.push(erase_rec_value(v, env, &mut locs));
    }
    Erased { control, env, kont, handlers, heap }
}

fn star_kont(a: &Addr, store: &crate::Store<cesk::Storable>, locs: &mut Locs<Addr>) -> KontN {
    use cesk::{Frame, Storable};
    let mut out = Vec::new();
    let mut cur = a.clone();
    loop {
        let Some(Storable::Kont(k)) = store.get_one(&cur) else { panic!("continuation expected at {cur}") };
        let (f, next) = match &k.frame {
            Frame::Mt => {
                out.push((FrameN::Mt, k.marks.clone()));
                return out;
            }
            Frame::Ar { arg, env, next, .. } => (FrameN::Ar(arg.clone(), erase_env(env, locs)), next),
            Frame::Fn { fun, env, next, .. } => (FrameN::Fn(Box::new(star_value(fun, env, store, locs))), next),
            Frame::If { then, els, env, next } => (FrameN::If(then.clone(), els.clone(), erase_env(env, locs)), next),
            Frame::Set { target, next } => (FrameN::Set(locs.loc(target)), next),
        };
        out.push((f, k.marks.clone()));
        cur = next.clone();
    }
}

fn star_value(v: &cesk::Value, env: &Env, store: &crate::Store<cesk::Storable>, locs: &mut Locs<Addr>) -> ValN {
    match v {
        cesk::Value::Syntax(e) => ValN::Clo(e.clone(), erase_env(env, locs)),
        cesk::Value::Kont(k) => ValN::Kont(star_kont(&k.addr, store, locs)),
    }
}

/// Erase a state of the pointer-refined machine; only meaningful under a
/// concrete policy, where every location holds one storable.
pub fn erase_star(s: &cesk::State) -> Erased {
    use cesk::{Handler, Storable};
    let mut locs = Locs::new();
    let control = match &s.control {
        cesk::Control::Expr(e) => ControlN::Expr(e.clone()),
        cesk::Control::Kont(k) => ControlN::Kont(star_kont(&k.addr, &s.store, &mut locs)),
    };
    let env = erase_env(&s.env, &mut locs);
    let kont = star_kont(&s.kont, &s.store, &mut locs);
    let handlers = s.handler.as_ref().map(|h| {
        let mut out = Vec::new();
        let mut cur = h.clone();
        while let Some(Storable::Handler(Handler::Hn { handler, env, kont, next, .. })) = s.store.get_one(&cur) {
            out.push(HandlerN {
                handler: handler.clone(),
                env: erase_env(env, &mut locs),
                kont: star_kont(kont, &s.store, &mut locs),
            });
            cur = next.clone();
        }
        out
    });
    let mut heap = Vec::new();
    while let Some(a) = locs.pending.pop_front() {
        let Some(Storable::Val(v, env)) = s.store.get_one(&a) else { panic!("value expected at {a}") };
        heap.push(star_value(v, env, &s.store, &mut locs));
    }
    Erased { control, env, kont, handlers, heap }
}

fn lazy_heap(locs: &mut Locs<Addr>, cell_at: impl Fn(&Addr) -> Cell) -> Vec<(bool, E, EnvN)> {
    let mut heap = Vec::new();
    while let Some(a) = locs.pending.pop_front() {
        let (forced, e, env) = match cell_at(&a) {
            Cell::Thunk(e, env) => (false, e, env),
            Cell::Computed(e, env) => (true, e, env),
        };
        let env = erase_env(&env, locs);
        heap.push((forced, e, env));
    }
    heap
}

pub fn erase_lk(s: &lazy::LkState) -> LazyErased {
    let mut locs = Locs::new();
    let env = erase_env(&s.env, &mut locs);
    let mut kont = Vec::new();
    let mut cur = &s.kont;
    loop {
        cur = match &**cur {
            LkKont::Mt => break,
            LkKont::Force(a, k) => {
                kont.push(LazyFrame::Force(locs.loc(a)));
                k
            }
            LkKont::Arg(a, k) => {
                kont.push(LazyFrame::Arg(locs.loc(a)));
                k
            }
        };
    }
    let heap = lazy_heap(&mut locs, |a| s.store.get_one(a).expect("bound location").clone());
    LazyErased { control: s.control.clone(), env, kont, heap }
}

pub fn erase_lk_star(s: &lazy::State) -> LazyErased {
    use lazy::{Kont, Storable};
    let mut locs = Locs::new();
    let env = erase_env(&s.env, &mut locs);
    let mut kont = Vec::new();
    let mut cur = s.kont.clone();
    loop {
        let Some(Storable::Kont(k)) = s.store.get_one(&cur) else { panic!("continuation expected at {cur}") };
        cur = match k {
            Kont::Mt => break,
            Kont::Force { target, next } => {
                kont.push(LazyFrame::Force(locs.loc(target)));
                next.clone()
            }
            Kont::Arg { arg, next, .. } => {
                kont.push(LazyFrame::Arg(locs.loc(arg)));
                next.clone()
            }
            Kont::Postponed { .. } => panic!("postponed frames have no recursive counterpart"),
        };
    }
    let heap = lazy_heap(&mut locs, |a| match s.store.get_one(a) {
        Some(Storable::Cell(c)) => c.clone(),
        _ => panic!("cell expected at {a}"),
    });
    LazyErased { control: s.control.clone(), env, kont, heap }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub step: usize,
    pub left: String,
    pub right: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LockstepReport {
    pub left: String,
    pub right: String,
    /// Steps both machines took in agreement.
    pub steps: usize,
    /// How the runs ended; `None` when fuel ran out first.
    pub outcome: Option<Terminal>,
    pub divergence: Option<Divergence>,
}

impl LockstepReport {
    pub fn ok(&self) -> bool {
        self.divergence.is_none()
    }
}

/// Step two deterministic machines together, comparing erased states.
pub fn lockstep<A, B, X>(
    (left, a, ea): (&str, &A, impl Fn(&A::State) -> X),
    (right, b, eb): (&str, &B, impl Fn(&B::State) -> X),
    program: &E,
    fuel: usize,
) -> Result<LockstepReport, MachineError>
where
    A: Machine,
    B: Machine,
    X: PartialEq,
{
    let mut sa = a.inject(program)?;
    let mut sb = b.inject(program)?;
    let mut report =
        LockstepReport { left: left.to_string(), right: right.to_string(), steps: 0, outcome: None, divergence: None };
    let diverge = |report: &mut LockstepReport, sa: &A::State, sb: &B::State, reason: &str| {
        report.divergence = Some(Divergence {
            step: report.steps,
            left: a.render(sa),
            right: b.render(sb),
            reason: reason.to_string(),
        });
    };
    loop {
        if ea(&sa) != eb(&sb) {
            diverge(&mut report, &sa, &sb, "states differ");
            return Ok(report);
        }
        let ta = a.transitions(&sa);
        let tb = b.transitions(&sb);
        if ta.next.len() > 1 || tb.next.len() > 1 {
            diverge(&mut report, &sa, &sb, "a machine branched");
            return Ok(report);
        }
        if ta.terminal != tb.terminal || ta.next.len() != tb.next.len() {
            diverge(&mut report, &sa, &sb, "machines disagree on termination");
            return Ok(report);
        }
        if let Some(&t) = ta.terminal.iter().next() {
            report.outcome = Some(t);
            return Ok(report);
        }
        if report.steps == fuel {
            return Ok(report);
        }
        let (Some(na), Some(nb)) = (ta.next.into_iter().next(), tb.next.into_iter().next()) else {
            unreachable!("a non-terminal state has a successor")
        };
        sa = na;
        sb = nb;
        report.steps += 1;
    }
}

fn uses(e: &E, pred: &impl Fn(&ExprKind) -> bool) -> bool {
    pred(e.kind()) || e.children().into_iter().any(|c| uses(c, pred))
}

/// The smallest family whose language covers the program.
pub fn family_of(e: &E) -> Family {
    if uses(e, &|k| matches!(k, ExprKind::Fail | ExprKind::Grant(..) | ExprKind::Frame(..) | ExprKind::Test(..))) {
        Family::Cm
    } else if uses(e, &|k| matches!(k, ExprKind::Throw(_) | ExprKind::Catch(..))) {
        Family::Ceshk
    } else {
        Family::Cesk
    }
}

/// True for the pure calculus with conditionals, which the CEK machine runs.
pub fn is_functional(e: &E) -> bool {
    !uses(e, &|k| !matches!(k, ExprKind::Ref(_) | ExprKind::App(..) | ExprKind::Lam(..) | ExprKind::If(..) | ExprKind::False))
}

/// True for the pure λ-calculus.
pub fn is_pure(e: &E) -> bool {
    !uses(e, &|k| !matches!(k, ExprKind::Ref(_) | ExprKind::App(..) | ExprKind::Lam(..)))
}

/// Check every applicable pair of strict concrete machines on `e`: CEK
/// against CESK, CESK against CESK*, and CESK* against its timed variants.
pub fn lockstep_check(e: &E, fuel: usize) -> Result<Vec<LockstepReport>, MachineError> {
    let family = family_of(e);
    let universe = crate::syntax::mentioned_permissions(e);
    let rec = Cesk::new(family).with_universe(universe.clone());
    let star = |p: Policy| CeskMachine::new(family, p).with_universe(universe.clone());
    let untimed = star(Policy::Int { timed: false, alloc: IntAlloc::Fresh });
    let mut out = Vec::new();
    if is_functional(e) {
        out.push(lockstep(("CEK", &Cek, erase_cek), ("CESK", &rec, erase_rec), e, fuel)?);
    }
    let rec_name = match family {
        Family::Cesk => "CESK",
        Family::Ceshk => "CESHK",
        Family::Cm => "CM",
    };
    out.push(lockstep((rec_name, &rec, erase_rec), (family.name(), &untimed, erase_star), e, fuel)?);
    for (name, alloc) in [("timed, fresh", IntAlloc::Fresh), ("timed, from time", IntAlloc::FromTime)] {
        let timed = star(Policy::Int { timed: true, alloc });
        let label = format!("{} ({name})", family.name());
        out.push(lockstep((family.name(), &untimed, erase_star), (label.as_str(), &timed, erase_star), e, fuel)?);
    }
    Ok(out)
}

/// Check the by-need machine against the baseline pointer-refined machine,
/// untimed and timed.
pub fn lazy_lockstep_check(e: &E, fuel: usize) -> Result<Vec<LockstepReport>, MachineError> {
    if !is_pure(e) {
        return Err(MachineError::Unsupported { form: "non-λ syntax".into(), machine: "LK".into() });
    }
    let mut out = vec![lockstep(("LK", &Lk, erase_lk), ("LK*", &LkStar::concrete(), erase_lk_star), e, fuel)?];
    let timed = LkStar::new(lazy::Variant::Baseline, Policy::Int { timed: true, alloc: IntAlloc::Fresh });
    out.push(lockstep(("LK*", &LkStar::concrete(), erase_lk_star), ("LK* (timed)", &timed, erase_lk_star), e, fuel)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse;

    #[test]
    fn renumbering_ignores_address_choice() {
        let e = parse("((lambda (x) (x x)) (lambda (y) y))").unwrap();
        let m = CeskMachine::new(Family::Cesk, Policy::Int { timed: false, alloc: IntAlloc::Fresh });
        let t = crate::engine::run(&m, m.inject(&e).unwrap(), 5);
        let s = t.last().clone();
        let shifted = s.map_addrs(&|a| match a {
            Addr::Int(n) => Addr::Int(n + 100),
            other => other.clone(),
        });
        assert_eq!(erase_star(&s), erase_star(&shifted));
    }

    #[test]
    fn identity_agrees_everywhere() {
        let e = parse("((lambda (x) x) (lambda (y) y))").unwrap();
        for r in lockstep_check(&e, 100).unwrap() {
            assert!(r.ok(), "{r:?}");
            assert_eq!(r.steps, 4);
            assert_eq!(r.outcome, Some(Terminal::Final));
        }
        for r in lazy_lockstep_check(&e, 100).unwrap() {
            assert!(r.ok(), "{r:?}");
        }
    }

    #[test]
    fn different_programs_diverge() {
        let e = parse("((lambda (x) x) (lambda (y) y))").unwrap();
        let other = Cek;
        let r = lockstep(
            ("CEK", &Cek, erase_cek),
            ("CEK shifted", &other, |s: &concrete::CekState| {
                let mut x = erase_cek(s);
                x.kont.push((FrameN::Mt, Marks::empty()));
                x
            }),
            &e,
            10,
        )
        .unwrap();
        assert_eq!(r.divergence.unwrap().step, 0);
    }

    #[test]
    fn families_are_detected() {
        assert_eq!(family_of(&parse("(catch (throw (lambda (x) x)) (lambda (y) y))").unwrap()), Family::Ceshk);
        assert_eq!(family_of(&parse("(grant (p) (lambda (x) x))").unwrap()), Family::Cm);
        assert_eq!(family_of(&parse("(lambda (x) x)").unwrap()), Family::Cesk);
        assert!(is_pure(&parse("((lambda (x) x) (lambda (y) y))").unwrap()));
        assert!(!is_pure(&parse("(if #f (lambda (x) x) (lambda (y) y))").unwrap()));
    }
}
