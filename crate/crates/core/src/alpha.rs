//! The abstraction map from concrete contour-instantiated states to abstract
//! ones, the abstract order, and the stepwise simulation check.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::engine::{run, Machine, Outcome};
use crate::store::{Addr, Time};
use crate::syntax::E;
use crate::MachineError;

/// `α` on addresses: truncate the contour and drop the concrete serial.
pub fn alpha_addr(a: &Addr, k: usize) -> Addr {
    match a {
        Addr::Ctx { site, contour, .. } => Addr::Ctx { site: site.clone(), contour: contour.truncate(k), serial: 0 },
        Addr::Int(_) => panic!("integer addresses have no contour abstraction"),
        other => other.clone(),
    }
}

pub fn alpha_time(t: &Time, k: usize) -> Time {
    match t {
        Time::Ctx { label, contour, .. } => Time::Ctx { label: *label, contour: contour.truncate(k), serial: 0 },
        Time::Unit => Time::Unit,
        Time::Int(_) => panic!("integer times have no contour abstraction"),
    }
}

/// States with a structural abstraction and the induced order.
pub trait Abstraction: Sized {
    fn alpha(&self, k: usize) -> Self;
    /// Flat on every component except the store, which is ordered pointwise.
    fn leq(&self, other: &Self) -> bool;
}

impl Abstraction for crate::cesk::State {
    fn alpha(&self, k: usize) -> Self {
        let mut s = self.map_addrs(&|a| alpha_addr(a, k));
        s.time = alpha_time(&self.time, k);
        s
    }

    fn leq(&self, other: &Self) -> bool {
        self.control == other.control
            && self.env == other.env
            && self.handler == other.handler
            && self.kont == other.kont
            && self.time == other.time
            && self.store.leq(&other.store)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Index of the first concrete state without an abstract cover.
    pub step: usize,
    pub concrete: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SoundnessReport {
    pub concrete_steps: usize,
    pub abstract_states: usize,
    pub violation: Option<Violation>,
}

impl SoundnessReport {
    pub fn ok(&self) -> bool {
        self.violation.is_none()
    }
}

/// Run `concrete` for up to `fuel` steps and check that `abs` simulates the
/// trace step by step: each concrete state is covered (under `α` and `⊑`) by
/// an abstract successor of a state covering its predecessor. Abstract
/// states are explored on demand from that frontier, so every cover is
/// reachable from the injected abstract state.
pub fn check_soundness<C, A>(concrete: &C, abs: &A, program: &E, fuel: usize, k: usize) -> Result<SoundnessReport, MachineError>
where
    C: Machine,
    A: Machine<State = C::State>,
    C::State: Abstraction,
{
    let trace = run(concrete, concrete.inject(program)?, fuel);
    let init = abs.inject(program)?;
    let mut report = SoundnessReport { concrete_steps: trace.steps(), abstract_states: 1, violation: None };
    let fail = |report: &mut SoundnessReport, step: usize, s: &C::State, reason: String| {
        report.violation = Some(Violation { step, concrete: concrete.render(s), reason });
    };
    if !trace.states[0].alpha(k).leq(&init) {
        fail(&mut report, 0, &trace.states[0], "the injected abstract state does not cover the initial state".into());
        return Ok(report);
    }
    let mut visited: BTreeSet<C::State> = BTreeSet::from([init.clone()]);
    let mut frontier = vec![init];
    for (step, s) in trace.states.iter().enumerate().skip(1) {
        let a = s.alpha(k);
        let next: BTreeSet<C::State> =
            frontier.iter().flat_map(|f| abs.transitions(f).next).filter(|n| a.leq(n)).collect();
        if next.is_empty() {
            fail(&mut report, step, s, "no abstract successor covers this state".into());
            return Ok(report);
        }
        visited.extend(next.iter().cloned());
        frontier = next.into_iter().collect();
    }
    report.abstract_states = visited.len();
    if let Outcome::Terminal(t) = trace.outcome {
        if !frontier.iter().any(|f| abs.transitions(f).terminal.contains(&t)) {
            fail(&mut report, trace.steps(), trace.last(), format!("abstract cover lacks the {t:?} terminal"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cesk::{CeskMachine, Family};
    use crate::store::{Contour, Policy, Site};
    use crate::syntax::{parse, Label};

    #[test]
    fn contours_collapse_under_truncation() {
        let a1 = Addr::Ctx { site: Site::Var("x".into()), contour: Contour(vec![Label(1), Label(2)]), serial: 4 };
        let a2 = Addr::Ctx { site: Site::Var("x".into()), contour: Contour(vec![Label(1), Label(3)]), serial: 9 };
        assert_eq!(alpha_addr(&a1, 1), alpha_addr(&a2, 1));
        assert_ne!(alpha_addr(&a1, 2), alpha_addr(&a2, 2));
        assert_eq!(alpha_addr(&Addr::Halt, 0), Addr::Halt);
    }

    #[test]
    fn initial_states_correspond() {
        let e = parse("((lambda (x) x) (lambda (y) y))").unwrap();
        let c = CeskMachine::new(Family::Cesk, Policy::CONCRETE_CTX);
        let a = CeskMachine::new(Family::Cesk, Policy::abstract_k(1));
        let s = c.inject(&e).unwrap().alpha(1);
        assert_eq!(s, a.inject(&e).unwrap());
        assert!(s.leq(&s));
    }

    #[test]
    fn order_is_flat_except_for_stores() {
        let a = CeskMachine::new(Family::Cesk, Policy::abstract_k(0));
        let s = a.inject(&parse("((lambda (x) x) (lambda (y) y))").unwrap()).unwrap();
        let mut bigger = s.clone();
        bigger.store.join(Addr::FailMt, crate::cesk::Storable::Kont(crate::cesk::Kont::mt()));
        assert!(s.leq(&bigger));
        assert!(!bigger.leq(&s));
        let mut other = s.clone();
        let crate::cesk::Control::Expr(e) = &s.control else { unreachable!() };
        other.control = crate::cesk::Control::Expr(e.children()[0].clone());
        assert!(!s.leq(&other));
        assert!(!other.leq(&s));
    }

    #[test]
    fn simple_programs_are_simulated() {
        for (src, k) in [("((lambda (x) x) (lambda (y) y))", 1), ("((lambda (x) (x x)) (lambda (x) (x x)))", 0), ("(lambda (x) x)", 0)] {
            let e = parse(src).unwrap();
            let c = CeskMachine::new(Family::Cesk, Policy::CONCRETE_CTX);
            let a = CeskMachine::new(Family::Cesk, Policy::abstract_k(k));
            let r = check_soundness(&c, &a, &e, 200, k).unwrap();
            assert!(r.ok(), "{src}: {:?}", r.violation);
        }
    }
}
