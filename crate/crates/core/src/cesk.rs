//! The pointer-refined, time-stamped call-by-value machine, shared by the
//! CESK*, extended CESK*, CESHK* and CM* families. The same transition
//! function is concrete or abstract depending on the allocation [`Policy`].

use std::collections::BTreeSet;
use std::fmt;

use crate::engine::{Machine, StateSummary, Terminal, Transitions, Widen};
use crate::facts::Event;
use crate::security::{fails_star, ok_star, FrameView, Mark, Marks};
use crate::store::{Addr, Env, Policy, Site, Slot, Store, TickEvent, Time};
use crate::syntax::{ExprKind, Label, PermissionSet, E};
use crate::{check_closed, MachineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    /// Core CESK* plus conditionals, mutation and `callcc`.
    Cesk,
    /// Adds the handler register and `throw`/`catch`.
    Ceshk,
    /// Adds continuation marks and `fail`/`grant`/`frame`/`test`.
    Cm,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Cesk => "CESK*",
            Family::Ceshk => "CESHK*",
            Family::Cm => "CM*",
        }
    }
}

/// A reified continuation: the address it resumes plus where it was
/// captured (for flow facts).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KontRef {
    pub addr: Addr,
    pub callcc: Label,
    pub site: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Syntax(E),
    Kont(KontRef),
}

impl Value {
    fn to_control(&self) -> Control {
        match self {
            Value::Syntax(e) => Control::Expr(e.clone()),
            Value::Kont(k) => Control::Kont(k.clone()),
        }
    }

    fn is_false(&self) -> bool {
        matches!(self, Value::Syntax(e) if matches!(e.kind(), ExprKind::False))
    }

    /// Addresses a closure `(v, ρ)` keeps alive.
    pub fn touched(&self, env: &Env, out: &mut BTreeSet<Addr>) {
        match self {
            Value::Syntax(e) => out.extend(env.restricted_range(e.fv()).cloned()),
            Value::Kont(k) => {
                out.insert(k.addr.clone());
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Syntax(e) => write!(f, "{e}"),
            Value::Kont(k) => write!(f, "#<kont {}>", k.addr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Control {
    Expr(E),
    /// A continuation address in value position.
    Kont(KontRef),
}

impl Control {
    pub fn label(&self) -> Option<Label> {
        match self {
            Control::Expr(e) => Some(e.label()),
            Control::Kont(_) => None,
        }
    }
}

impl fmt::Display for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Control::Expr(e) => write!(f, "{e}"),
            Control::Kont(k) => write!(f, "#<kont {}>", k.addr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Frame {
    Mt,
    /// Evaluating the operator of the application labeled `call`.
    Ar { arg: E, env: Env, call: Label, next: Addr },
    /// Evaluating the operand; `fun` is the operator value.
    Fn { fun: Value, env: Env, call: Label, next: Addr },
    If { then: E, els: E, env: Env, next: Addr },
    Set { target: Addr, next: Addr },
}

impl Frame {
    pub fn next(&self) -> Option<&Addr> {
        match self {
            Frame::Mt => None,
            Frame::Ar { next, .. } | Frame::Fn { next, .. } | Frame::If { next, .. } | Frame::Set { next, .. } => {
                Some(next)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Kont {
    pub frame: Frame,
    pub marks: Marks,
}

impl Kont {
    pub fn plain(frame: Frame) -> Self {
        Kont { frame, marks: Marks::empty() }
    }

    pub fn mt() -> Self {
        Kont::plain(Frame::Mt)
    }
}

impl fmt::Display for Kont {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.frame {
            Frame::Mt => write!(f, "mt")?,
            Frame::Ar { arg, env, next, .. } => write!(f, "ar({arg}, {env}, {next})")?,
            Frame::Fn { fun, env, next, .. } => write!(f, "fn({fun}, {env}, {next})")?,
            Frame::If { then, els, env, next } => write!(f, "if({then}, {els}, {env}, {next})")?,
            Frame::Set { target, next } => write!(f, "set({target}, {next})")?,
        }
        if !self.marks.is_empty() {
            write!(f, "^{}", self.marks)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Handler {
    Mt,
    Hn { handler: E, env: Env, kont: Addr, next: Addr, catch: Label },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Storable {
    Val(Value, Env),
    Kont(Kont),
    Handler(Handler),
}

impl Storable {
    /// One level of the live-locations function.
    pub fn touched(&self, out: &mut BTreeSet<Addr>) {
        match self {
            Storable::Val(v, env) => v.touched(env, out),
            Storable::Kont(k) => match &k.frame {
                Frame::Mt => {}
                Frame::Ar { arg, env, next, .. } => {
                    out.insert(next.clone());
                    out.extend(env.restricted_range(arg.fv()).cloned());
                }
                Frame::Fn { fun, env, next, .. } => {
                    out.insert(next.clone());
                    fun.touched(env, out);
                }
                Frame::If { then, els, env, next } => {
                    out.insert(next.clone());
                    out.extend(env.restricted_range(then.fv()).cloned());
                    out.extend(env.restricted_range(els.fv()).cloned());
                }
                Frame::Set { target, next } => {
                    out.insert(target.clone());
                    out.insert(next.clone());
                }
            },
            Storable::Handler(Handler::Mt) => {}
            Storable::Handler(Handler::Hn { handler, env, kont, next, .. }) => {
                out.insert(kont.clone());
                out.insert(next.clone());
                out.extend(env.restricted_range(handler.fv()).cloned());
            }
        }
    }

    pub fn map_addrs(&self, f: &impl Fn(&Addr) -> Addr) -> Storable {
        let v = |v: &Value| match v {
            Value::Syntax(e) => Value::Syntax(e.clone()),
            Value::Kont(k) => Value::Kont(KontRef { addr: f(&k.addr), ..k.clone() }),
        };
        match self {
            Storable::Val(x, env) => Storable::Val(v(x), env.map_addrs(f)),
            Storable::Kont(k) => Storable::Kont(Kont {
                frame: match &k.frame {
                    Frame::Mt => Frame::Mt,
                    Frame::Ar { arg, env, call, next } => {
                        Frame::Ar { arg: arg.clone(), env: env.map_addrs(f), call: *call, next: f(next) }
                    }
                    Frame::Fn { fun, env, call, next } => {
                        Frame::Fn { fun: v(fun), env: env.map_addrs(f), call: *call, next: f(next) }
                    }
                    Frame::If { then, els, env, next } => Frame::If {
                        then: then.clone(),
                        els: els.clone(),
                        env: env.map_addrs(f),
                        next: f(next),
                    },
                    Frame::Set { target, next } => Frame::Set { target: f(target), next: f(next) },
                },
                marks: k.marks.clone(),
            }),
            Storable::Handler(Handler::Mt) => Storable::Handler(Handler::Mt),
            Storable::Handler(Handler::Hn { handler, env, kont, next, catch }) => Storable::Handler(Handler::Hn {
                handler: handler.clone(),
                env: env.map_addrs(f),
                kont: f(kont),
                next: f(next),
                catch: *catch,
            }),
        }
    }
}

impl fmt::Display for Storable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Storable::Val(v, env) => write!(f, "({v}, {env})"),
            Storable::Kont(k) => write!(f, "{k}"),
            Storable::Handler(Handler::Mt) => write!(f, "hmt"),
            Storable::Handler(Handler::Hn { handler, env, kont, next, .. }) => {
                write!(f, "hn({handler}, {env}, {kont}, {next})")
            }
        }
    }
}

/// `⟨e, ρ, σ, h, a, t⟩`; `handler` is `None` outside the CESHK* family.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct State {
    pub control: Control,
    pub env: Env,
    pub store: Store<Storable>,
    pub handler: Option<Addr>,
    pub kont: Addr,
    pub time: Time,
}

/// A state without its store.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Partial {
    pub control: Control,
    pub env: Env,
    pub handler: Option<Addr>,
    pub kont: Addr,
    pub time: Time,
}

impl State {
    pub fn map_addrs(&self, f: &impl Fn(&Addr) -> Addr) -> State {
        let mut store = Store::new();
        for (a, set) in &self.store.0 {
            for s in set {
                store.join(f(a), s.map_addrs(f));
            }
        }
        State {
            control: match &self.control {
                Control::Expr(e) => Control::Expr(e.clone()),
                Control::Kont(k) => Control::Kont(KontRef { addr: f(&k.addr), ..k.clone() }),
            },
            env: self.env.map_addrs(f),
            store,
            handler: self.handler.as_ref().map(f),
            kont: f(&self.kont),
            time: self.time.clone(),
        }
    }

    /// Roots for collection: the control's free-variable bindings, both
    /// continuation registers, and the designated addresses.
    pub fn roots(&self) -> BTreeSet<Addr> {
        let mut out = BTreeSet::new();
        match &self.control {
            Control::Expr(e) => out.extend(self.env.restricted_range(e.fv()).cloned()),
            Control::Kont(k) => {
                out.insert(k.addr.clone());
            }
        }
        out.insert(self.kont.clone());
        if let Some(h) = &self.handler {
            out.insert(h.clone());
        }
        out.extend(self.store.addrs().filter(|a| a.is_designated()).cloned());
        out
    }

    pub fn is_final(&self) -> bool {
        matches!(&self.control, Control::Expr(e) if e.is_value())
            && self.kont == Addr::Halt
            && self.handler.as_ref().is_none_or(|h| *h == Addr::HaltHandler)
    }
}

#[derive(Debug, Clone)]
pub struct CeskMachine {
    pub family: Family,
    pub policy: Policy,
    /// The permission universe used to complement `frame` sets.
    pub universe: PermissionSet,
}

impl CeskMachine {
    pub fn new(family: Family, policy: Policy) -> Self {
        CeskMachine { family, policy, universe: PermissionSet::default() }
    }

    pub fn with_universe(mut self, universe: PermissionSet) -> Self {
        self.universe = universe;
        self
    }

    fn strong(&self) -> bool {
        self.policy.strong_updates()
    }

    fn alloc(&self, s: &State, site: Site) -> Addr {
        self.policy.alloc(&s.time, site, &s.store)
    }

    fn tick(&self, s: &State, ev: TickEvent) -> Time {
        self.policy.tick(&s.time, ev)
    }

    fn konts<'a>(&self, store: &'a Store<Storable>, a: &Addr) -> Vec<&'a Kont> {
        store
            .get(a)
            .filter_map(|s| match s {
                Storable::Kont(k) => Some(k),
                _ => None,
            })
            .collect()
    }

    fn frames(store: &Store<Storable>) -> impl Fn(&Addr) -> Vec<FrameView> + '_ {
        move |a: &Addr| {
            store
                .get(a)
                .filter_map(|s| match s {
                    Storable::Kont(k) => Some((k.marks.clone(), k.frame.next().cloned())),
                    _ => None,
                })
                .collect()
        }
    }

    fn eval(&self, s: &State, e: &E, out: &mut Transitions<State>) {
        let strong = self.strong();
        let next = |control: Control, env: Env, store: Store<Storable>, kont: Addr, time: Time| State {
            control,
            env,
            store,
            handler: s.handler.clone(),
            kont,
            time,
        };
        match e.kind() {
            ExprKind::Ref(x) => {
                let Some(a) = s.env.get(x) else {
                    out.halt(Terminal::Stuck);
                    return;
                };
                let u = self.tick(s, TickEvent::Keep);
                let mut any = false;
                for st in s.store.get(a) {
                    if let Storable::Val(v, env) = st {
                        any = true;
                        out.push(next(v.to_control(), env.clone(), s.store.clone(), s.kont.clone(), u.clone()));
                    }
                }
                if !any {
                    out.halt(Terminal::Stuck);
                }
            }
            ExprKind::Lam(..) | ExprKind::False | ExprKind::Callcc => {
                self.apply(s, Value::Syntax(e.clone()), s.env.clone(), out)
            }
            ExprKind::App(e0, e1) => {
                let b = self.alloc(s, Site::Label(e0.label(), Slot::Ar));
                let mut store = s.store.clone();
                let frame = Frame::Ar { arg: e1.clone(), env: s.env.clone(), call: e.label(), next: s.kont.clone() };
                store.update(b.clone(), Storable::Kont(Kont::plain(frame)), strong);
                out.push(next(Control::Expr(e0.clone()), s.env.clone(), store, b, self.tick(s, TickEvent::Call(e.label()))));
            }
            ExprKind::If(c, t, f) => {
                let b = self.alloc(s, Site::Label(e.label(), Slot::If));
                let mut store = s.store.clone();
                let frame = Frame::If { then: t.clone(), els: f.clone(), env: s.env.clone(), next: s.kont.clone() };
                store.update(b.clone(), Storable::Kont(Kont::plain(frame)), strong);
                out.push(next(Control::Expr(c.clone()), s.env.clone(), store, b, self.tick(s, TickEvent::Keep)));
            }
            ExprKind::SetBang(x, body) => {
                let Some(target) = s.env.get(x) else {
                    out.halt(Terminal::Stuck);
                    return;
                };
                let b = self.alloc(s, Site::Label(e.label(), Slot::Set));
                let mut store = s.store.clone();
                let frame = Frame::Set { target: target.clone(), next: s.kont.clone() };
                store.update(b.clone(), Storable::Kont(Kont::plain(frame)), strong);
                out.push(next(Control::Expr(body.clone()), s.env.clone(), store, b, self.tick(s, TickEvent::Keep)));
            }
            ExprKind::Throw(v) if self.family == Family::Ceshk => {
                let h = s.handler.clone().expect("handler register");
                for st in s.store.get(&h) {
                    match st {
                        Storable::Handler(Handler::Mt) => out.halt(Terminal::Uncaught),
                        Storable::Handler(Handler::Hn { handler, env, kont, next: h2, catch }) => {
                            let ExprKind::Lam(x, body) = handler.kind() else { unreachable!("catch handlers are λs") };
                            let b = self.alloc(s, Site::Var(x.clone()));
                            let mut store = s.store.clone();
                            store.update(b.clone(), Storable::Val(Value::Syntax(v.clone()), s.env.clone()), strong);
                            out.event(Event::Handle { throw: e.label(), catch: *catch });
                            out.push(State {
                                control: Control::Expr(body.clone()),
                                env: env.extend(x.clone(), b),
                                store,
                                handler: Some(h2.clone()),
                                kont: kont.clone(),
                                time: self.tick(s, TickEvent::EnterAt(e.label())),
                            });
                        }
                        _ => {}
                    }
                }
            }
            ExprKind::Catch(body, handler) if self.family == Family::Ceshk => {
                let h = s.handler.clone().expect("handler register");
                let b = self.alloc(s, Site::Label(e.label(), Slot::Handler));
                let mut store = s.store.clone();
                let hn = Handler::Hn {
                    handler: handler.clone(),
                    env: s.env.clone(),
                    kont: s.kont.clone(),
                    next: h,
                    catch: e.label(),
                };
                store.update(b.clone(), Storable::Handler(hn), strong);
                out.push(State {
                    control: Control::Expr(body.clone()),
                    env: s.env.clone(),
                    store,
                    handler: Some(b),
                    kont: Addr::Halt,
                    time: self.tick(s, TickEvent::Keep),
                });
            }
            ExprKind::Fail if self.family == Family::Cm => {
                for k in s.store.get(&s.kont) {
                    match k {
                        Storable::Kont(k) if *k == Kont::mt() => out.halt(Terminal::SecurityFail),
                        Storable::Kont(_) => out.push(next(
                            Control::Expr(e.clone()),
                            s.env.clone(),
                            s.store.clone(),
                            Addr::FailMt,
                            self.tick(s, TickEvent::Keep),
                        )),
                        _ => out.halt(Terminal::Stuck),
                    }
                }
            }
            ExprKind::Grant(r, body) if self.family == Family::Cm => self.mark(s, r, Mark::Grant, body, out),
            ExprKind::Frame(r, body) if self.family == Family::Cm => {
                let denied = self.universe.difference(r);
                self.mark(s, &denied, Mark::Deny, body, out)
            }
            ExprKind::Test(r, yes, no) if self.family == Family::Cm => {
                let u = self.tick(s, TickEvent::Keep);
                if ok_star(r, &s.kont, Self::frames(&s.store)) {
                    out.event(Event::Test { label: e.label(), enabled: true });
                    out.push(next(Control::Expr(yes.clone()), s.env.clone(), s.store.clone(), s.kont.clone(), u.clone()));
                }
                if fails_star(r, &s.kont, Self::frames(&s.store)) {
                    out.event(Event::Test { label: e.label(), enabled: false });
                    out.push(next(Control::Expr(no.clone()), s.env.clone(), s.store.clone(), s.kont.clone(), u));
                }
            }
            _ => out.halt(Terminal::Stuck),
        }
    }

    /// Update the marks of one continuation in `σ(a)`, one successor per
    /// choice.
    fn mark(&self, s: &State, r: &PermissionSet, mark: Mark, body: &E, out: &mut Transitions<State>) {
        let u = self.tick(s, TickEvent::Keep);
        for k in self.konts(&s.store, &s.kont) {
            let updated = Kont { frame: k.frame.clone(), marks: k.marks.set(r, mark) };
            let mut store = s.store.clone();
            store.replace(&s.kont, &Storable::Kont(k.clone()), Storable::Kont(updated));
            out.push(State {
                control: Control::Expr(body.clone()),
                env: s.env.clone(),
                store,
                handler: s.handler.clone(),
                kont: s.kont.clone(),
                time: u.clone(),
            });
        }
    }

    /// Return `v` (closed by `venv`) to every continuation at the register.
    fn apply(&self, s: &State, v: Value, venv: Env, out: &mut Transitions<State>) {
        let strong = self.strong();
        for k in self.konts(&s.store, &s.kont) {
            match &k.frame {
                Frame::Mt => match (&self.family, &s.handler) {
                    (Family::Ceshk, Some(h)) => {
                        for st in s.store.get(h) {
                            match st {
                                Storable::Handler(Handler::Mt) => out.halt(Terminal::Final),
                                Storable::Handler(Handler::Hn { kont, next, .. }) => out.push(State {
                                    control: v.to_control(),
                                    env: venv.clone(),
                                    store: s.store.clone(),
                                    handler: Some(next.clone()),
                                    kont: kont.clone(),
                                    time: self.tick(s, TickEvent::Keep),
                                }),
                                _ => {}
                            }
                        }
                    }
                    _ => out.halt(Terminal::Final),
                },
                Frame::Ar { arg, env, call, next } => {
                    let b = self.alloc(s, Site::Label(arg.label(), Slot::Fn));
                    let mut store = s.store.clone();
                    let frame = Frame::Fn { fun: v.clone(), env: venv.clone(), call: *call, next: next.clone() };
                    store.update(b.clone(), Storable::Kont(Kont::plain(frame)), strong);
                    out.push(State {
                        control: Control::Expr(arg.clone()),
                        env: env.clone(),
                        store,
                        handler: s.handler.clone(),
                        kont: b,
                        time: self.tick(s, TickEvent::Keep),
                    });
                }
                Frame::Fn { fun, env: fenv, call, next } => self.call(s, fun, fenv, *call, next, &v, &venv, out),
                Frame::If { then, els, env, next } => {
                    let branch = if v.is_false() { els } else { then };
                    out.push(State {
                        control: Control::Expr(branch.clone()),
                        env: env.clone(),
                        store: s.store.clone(),
                        handler: s.handler.clone(),
                        kont: next.clone(),
                        time: self.tick(s, TickEvent::Keep),
                    });
                }
                Frame::Set { target, next } => {
                    let mut store = s.store.clone();
                    store.update(target.clone(), Storable::Val(v.clone(), venv.clone()), strong);
                    let u = self.tick(s, TickEvent::Keep);
                    let mut any = false;
                    for old in s.store.get(target) {
                        if let Storable::Val(old, oenv) = old {
                            any = true;
                            out.push(State {
                                control: old.to_control(),
                                env: oenv.clone(),
                                store: store.clone(),
                                handler: s.handler.clone(),
                                kont: next.clone(),
                                time: u.clone(),
                            });
                        }
                    }
                    if !any {
                        out.halt(Terminal::Stuck);
                    }
                }
            }
        }
    }

    /// Apply operator `fun` (closed by `fenv`) at application `call` to the
    /// argument `arg`, returning to `next`.
    #[allow(clippy::too_many_arguments)]
    fn call(
        &self,
        s: &State,
        fun: &Value,
        fenv: &Env,
        call: Label,
        next: &Addr,
        arg: &Value,
        aenv: &Env,
        out: &mut Transitions<State>,
    ) {
        let strong = self.strong();
        match fun {
            Value::Syntax(f) => match f.kind() {
                ExprKind::Lam(x, body) => {
                    let b = self.alloc(s, Site::Var(x.clone()));
                    let mut store = s.store.clone();
                    store.update(b.clone(), Storable::Val(arg.clone(), aenv.clone()), strong);
                    out.event(Event::Call { site: call, lam: f.label() });
                    out.push(State {
                        control: Control::Expr(body.clone()),
                        env: fenv.extend(x.clone(), b),
                        store,
                        handler: s.handler.clone(),
                        kont: next.clone(),
                        time: self.tick(s, TickEvent::Enter),
                    });
                }
                ExprKind::Callcc => {
                    let here = KontRef { addr: next.clone(), callcc: f.label(), site: call };
                    out.event(Event::Capture { callcc: f.label(), site: call });
                    match arg {
                        Value::Syntax(g) => match g.kind() {
                            ExprKind::Lam(x, body) => {
                                let b = self.alloc(s, Site::Var(x.clone()));
                                let mut store = s.store.clone();
                                store.update(b.clone(), Storable::Val(Value::Kont(here), Env::empty()), strong);
                                out.event(Event::Call { site: call, lam: g.label() });
                                out.push(State {
                                    control: Control::Expr(body.clone()),
                                    env: aenv.extend(x.clone(), b),
                                    store,
                                    handler: s.handler.clone(),
                                    kont: next.clone(),
                                    time: self.tick(s, TickEvent::Enter),
                                });
                            }
                            _ => out.halt(Terminal::Stuck),
                        },
                        Value::Kont(k) => {
                            out.event(Event::Escape { callcc: k.callcc, site: k.site });
                            out.push(State {
                                control: Control::Kont(here),
                                env: Env::empty(),
                                store: s.store.clone(),
                                handler: s.handler.clone(),
                                kont: k.addr.clone(),
                                time: self.tick(s, TickEvent::Keep),
                            });
                        }
                    }
                }
                _ => out.halt(Terminal::Stuck),
            },
            Value::Kont(k) => {
                out.event(Event::Escape { callcc: k.callcc, site: k.site });
                out.push(State {
                    control: arg.to_control(),
                    env: aenv.clone(),
                    store: s.store.clone(),
                    handler: s.handler.clone(),
                    kont: k.addr.clone(),
                    time: self.tick(s, TickEvent::Keep),
                });
            }
        }
    }
}

impl Machine for CeskMachine {
    type State = State;

    fn inject(&self, program: &E) -> Result<State, MachineError> {
        check_closed(program)?;
        let mut store = Store::new();
        store.join(Addr::Halt, Storable::Kont(Kont::mt()));
        let mut handler = None;
        match self.family {
            Family::Cesk => {}
            Family::Ceshk => {
                store.join(Addr::HaltHandler, Storable::Handler(Handler::Mt));
                handler = Some(Addr::HaltHandler);
            }
            Family::Cm => store.join(Addr::FailMt, Storable::Kont(Kont::mt())),
        }
        Ok(State {
            control: Control::Expr(program.clone()),
            env: Env::empty(),
            store,
            handler,
            kont: Addr::Halt,
            time: self.policy.initial_time(),
        })
    }

    fn transitions(&self, s: &State) -> Transitions<State> {
        let mut out = Transitions::new();
        match &s.control {
            Control::Expr(e) => self.eval(s, e, &mut out),
            Control::Kont(k) => self.apply(s, Value::Kont(k.clone()), Env::empty(), &mut out),
        }
        out.dedup()
    }

    fn summarize(&self, s: &State) -> StateSummary {
        StateSummary {
            control: s.control.to_string(),
            label: s.control.label(),
            kont: s.kont.to_string(),
            store_size: s.store.len(),
        }
    }

    fn render(&self, s: &State) -> String {
        let mut out = format!("⟨{}, {}, {{", s.control, s.env);
        for (i, (a, set)) in s.store.0.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&format!("{a}↦"));
            let items: Vec<String> = set.iter().map(|x| x.to_string()).collect();
            if items.len() == 1 {
                out.push_str(&items[0]);
            } else {
                out.push_str(&format!("{{{}}}", items.join(" | ")));
            }
        }
        out.push_str("}, ");
        if let Some(h) = &s.handler {
            out.push_str(&format!("{h}, "));
        }
        out.push_str(&format!("{}, {}⟩", s.kont, s.time));
        out
    }
}

impl Widen for CeskMachine {
    type Partial = Partial;
    type Storable = Storable;

    fn split(&self, s: &State) -> (Partial, Store<Storable>) {
        let p = Partial {
            control: s.control.clone(),
            env: s.env.clone(),
            handler: s.handler.clone(),
            kont: s.kont.clone(),
            time: s.time.clone(),
        };
        (p, s.store.clone())
    }

    fn rejoin(&self, p: &Partial, store: &Store<Storable>) -> State {
        State {
            control: p.control.clone(),
            env: p.env.clone(),
            store: store.clone(),
            handler: p.handler.clone(),
            kont: p.kont.clone(),
            time: p.time.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{explore, run, Outcome};
    use crate::store::IntAlloc;
    use crate::syntax::parse;

    fn star() -> CeskMachine {
        CeskMachine::new(Family::Cesk, Policy::Int { timed: false, alloc: IntAlloc::Fresh })
    }

    fn final_control(m: &CeskMachine, src: &str) -> (Outcome, String) {
        let e = parse(src).unwrap();
        let t = run(m, m.inject(&e).unwrap(), 1000);
        (t.outcome, t.last().control.to_string())
    }

    #[test]
    fn injection_has_only_the_halt_continuation() {
        let e = parse("((lambda (x) x) (lambda (y) y))").unwrap();
        let s = star().inject(&e).unwrap();
        assert_eq!(s.kont, Addr::Halt);
        assert_eq!(s.store.len(), 1);
        assert_eq!(s.store.get_one(&Addr::Halt), Some(&Storable::Kont(Kont::mt())));
        assert!(matches!(star().inject(&parse("x").unwrap()), Err(MachineError::OpenTerm(_))));
    }

    #[test]
    fn identity_application_takes_four_steps() {
        let e = parse("((lambda (x) x) (lambda (y) y))").unwrap();
        let m = star();
        let t = run(&m, m.inject(&e).unwrap(), 100);
        assert_eq!(t.outcome, Outcome::Terminal(Terminal::Final));
        assert_eq!(t.steps(), 4);
        assert_eq!(t.last().control.to_string(), "(lambda (y) y)");
    }

    #[test]
    fn conditionals_treat_only_false_as_false() {
        let m = star();
        assert_eq!(final_control(&m, "(if #f (lambda (x) x) (lambda (y) y))").1, "(lambda (y) y)");
        assert_eq!(final_control(&m, "(if (lambda (z) z) (lambda (x) x) (lambda (y) y))").1, "(lambda (x) x)");
    }

    #[test]
    fn set_returns_the_previous_value() {
        let m = star();
        let src = "((lambda (x) ((lambda (old) x) (set! x (lambda (n) n)))) (lambda (o) o))";
        assert_eq!(final_control(&m, src).1, "(lambda (n) n)");
        let src = "((lambda (x) (set! x (lambda (n) n))) (lambda (o) o))";
        assert_eq!(final_control(&m, src).1, "(lambda (o) o)");
    }

    #[test]
    fn callcc_escapes() {
        let m = star();
        let src = "(callcc (lambda (k) ((lambda (ignored) (lambda (no) no)) (k (lambda (y) y)))))";
        assert_eq!(final_control(&m, src), (Outcome::Terminal(Terminal::Final), "(lambda (y) y)".into()));
    }

    #[test]
    fn exceptions() {
        let m = CeskMachine::new(Family::Ceshk, Policy::CONCRETE_CTX);
        assert_eq!(final_control(&m, "(catch (throw (lambda (y) y)) (lambda (x) x))").1, "(lambda (y) y)");
        assert_eq!(final_control(&m, "(catch (lambda (y) y) (lambda (x) x))").1, "(lambda (y) y)");
        assert_eq!(final_control(&m, "(throw (lambda (y) y))").0, Outcome::Terminal(Terminal::Uncaught));
        let nested = "((lambda (f) (catch (f (lambda (a) a)) (lambda (e) e))) (lambda (v) (throw (lambda (w) w))))";
        assert_eq!(final_control(&m, nested).1, "(lambda (w) w)");
    }

    #[test]
    fn stack_inspection_branches() {
        let m = CeskMachine::new(Family::Cm, Policy::CONCRETE_CTX).with_universe(PermissionSet::new(["p"]));
        let yes = "(grant (p) (test (p) (lambda (a) a) (lambda (b) b)))";
        assert_eq!(final_control(&m, yes).1, "(lambda (a) a)");
        let no = "(frame () (test (p) (lambda (a) a) (lambda (b) b)))";
        assert_eq!(final_control(&m, no).1, "(lambda (b) b)");
        assert_eq!(final_control(&m, "(fail)").0, Outcome::Terminal(Terminal::SecurityFail));
    }

    #[test]
    fn abstract_lookup_forks_per_closure() {
        let m = CeskMachine::new(Family::Cesk, Policy::abstract_k(0));
        let x = parse("x").unwrap();
        let mut store = Store::new();
        store.join(Addr::Halt, Storable::Kont(Kont::mt()));
        let a = Addr::Int(7);
        let pair = parse("((lambda (y) y) (lambda (z) z))").unwrap();
        for v in pair.children() {
            store.join(a.clone(), Storable::Val(Value::Syntax(v.clone()), Env::empty()));
        }
        let s = State {
            control: Control::Expr(x),
            env: Env::empty().extend("x".into(), a),
            store,
            handler: None,
            kont: Addr::Halt,
            time: m.policy.initial_time(),
        };
        assert_eq!(m.transitions(&s).next.len(), 2);
    }

    #[test]
    fn abstract_omega_is_finite() {
        let e = parse("((lambda (x) (x x)) (lambda (x) (x x)))").unwrap();
        for k in [0, 1] {
            let m = CeskMachine::new(Family::Cesk, Policy::abstract_k(k));
            let g = explore(&m, m.inject(&e).unwrap());
            assert!(g.states.len() < 100);
        }
    }

    #[test]
    fn a_value_is_a_single_terminal_state() {
        let e = parse("(lambda (x) x)").unwrap();
        for k in [0, 1, 2] {
            let m = CeskMachine::new(Family::Cesk, Policy::abstract_k(k));
            let g = explore(&m, m.inject(&e).unwrap());
            assert_eq!(g.states.len(), 1);
            assert!(g.states[0].is_final());
        }
    }
}
