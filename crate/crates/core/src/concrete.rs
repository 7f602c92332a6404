//! Concrete machines with recursive continuations: CEK, and CESK extended
//! with the handler register (CESHK) or continuation marks (CM).

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use crate::cesk::Family;
use crate::engine::{Machine, StateSummary, Terminal, Transitions};
use crate::security::{ok, Mark, Marks};
use crate::store::{Addr, Env, Store};
use crate::syntax::{ExprKind, Label, PermissionSet, Var, E};
use crate::{check_closed, MachineError};

/// `(v, ρ)` for the store-less machine.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Closure {
    pub value: E,
    pub env: CekEnv,
}

pub type CekEnv = BTreeMap<Var, Rc<Closure>>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CekKont {
    Mt,
    Ar { arg: E, env: CekEnv, next: Rc<CekKont> },
    Fn { fun: Rc<Closure>, next: Rc<CekKont> },
    If { then: E, els: E, env: CekEnv, next: Rc<CekKont> },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CekState {
    pub control: E,
    pub env: CekEnv,
    pub kont: Rc<CekKont>,
}

/// The store-less machine over the pure calculus plus conditionals.
#[derive(Debug, Clone, Default)]
pub struct Cek;

impl Machine for Cek {
    type State = CekState;

    fn inject(&self, program: &E) -> Result<CekState, MachineError> {
        check_closed(program)?;
        Ok(CekState { control: program.clone(), env: CekEnv::new(), kont: Rc::new(CekKont::Mt) })
    }

    fn transitions(&self, s: &CekState) -> Transitions<CekState> {
        let mut out = Transitions::new();
        let e = &s.control;
        match e.kind() {
            ExprKind::Ref(x) => match s.env.get(x) {
                Some(c) => out.push(CekState { control: c.value.clone(), env: c.env.clone(), kont: s.kont.clone() }),
                None => out.halt(Terminal::Stuck),
            },
            ExprKind::App(e0, e1) => out.push(CekState {
                control: e0.clone(),
                env: s.env.clone(),
                kont: Rc::new(CekKont::Ar { arg: e1.clone(), env: s.env.clone(), next: s.kont.clone() }),
            }),
            ExprKind::If(c, t, f) => out.push(CekState {
                control: c.clone(),
                env: s.env.clone(),
                kont: Rc::new(CekKont::If { then: t.clone(), els: f.clone(), env: s.env.clone(), next: s.kont.clone() }),
            }),
            ExprKind::Lam(..) | ExprKind::False => {
                let v = Rc::new(Closure { value: e.clone(), env: s.env.clone() });
                match &*s.kont {
                    CekKont::Mt => out.halt(Terminal::Final),
                    CekKont::Ar { arg, env, next } => out.push(CekState {
                        control: arg.clone(),
                        env: env.clone(),
                        kont: Rc::new(CekKont::Fn { fun: v, next: next.clone() }),
                    }),
                    CekKont::Fn { fun, next } => match fun.value.kind() {
                        ExprKind::Lam(x, body) => {
                            let mut env = fun.env.clone();
                            env.insert(x.clone(), v);
                            out.push(CekState { control: body.clone(), env, kont: next.clone() });
                        }
                        _ => out.halt(Terminal::Stuck),
                    },
                    CekKont::If { then, els, env, next } => {
                        let branch = if matches!(e.kind(), ExprKind::False) { els } else { then };
                        out.push(CekState { control: branch.clone(), env: env.clone(), kont: next.clone() });
                    }
                }
            }
            _ => out.halt(Terminal::Stuck),
        }
        out
    }

    fn summarize(&self, s: &CekState) -> StateSummary {
        StateSummary { control: s.control.to_string(), label: Some(s.control.label()), kont: kont_depth(&s.kont), store_size: 0 }
    }

    fn render(&self, s: &CekState) -> String {
        format!("⟨{}, {}, {}⟩", s.control, render_cek_env(&s.env), render_cek_kont(&s.kont))
    }
}

fn kont_depth(k: &CekKont) -> String {
    let mut n = 0;
    let mut cur = k;
    loop {
        cur = match cur {
            CekKont::Mt => break,
            CekKont::Ar { next, .. } | CekKont::Fn { next, .. } | CekKont::If { next, .. } => next,
        };
        n += 1;
    }
    format!("depth {n}")
}

fn render_cek_env(env: &CekEnv) -> String {
    let items: Vec<String> = env.iter().map(|(x, c)| format!("{x}:({}, {})", c.value, render_cek_env(&c.env))).collect();
    format!("{{{}}}", items.join(", "))
}

fn render_cek_kont(k: &CekKont) -> String {
    match k {
        CekKont::Mt => "mt".into(),
        CekKont::Ar { arg, env, next } => format!("ar({arg}, {}, {})", render_cek_env(env), render_cek_kont(next)),
        CekKont::Fn { fun, next } => {
            format!("fn(({}, {}), {})", fun.value, render_cek_env(&fun.env), render_cek_kont(next))
        }
        CekKont::If { then, els, env, next } => {
            format!("if({then}, {els}, {}, {})", render_cek_env(env), render_cek_kont(next))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Syntax(E),
    /// A continuation reified by `callcc`.
    Kont(Rc<Kont>),
}

impl Value {
    fn to_control(&self) -> Control {
        match self {
            Value::Syntax(e) => Control::Expr(e.clone()),
            Value::Kont(k) => Control::Kont(k.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Frame {
    Mt,
    Ar { arg: E, env: Env, call: Label, next: Rc<Kont> },
    Fn { fun: Value, env: Env, call: Label, next: Rc<Kont> },
    If { then: E, els: E, env: Env, next: Rc<Kont> },
    Set { target: Addr, next: Rc<Kont> },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Kont {
    pub frame: Frame,
    pub marks: Marks,
}

impl Kont {
    pub fn mt() -> Rc<Kont> {
        Rc::new(Kont { frame: Frame::Mt, marks: Marks::empty() })
    }

    fn plain(frame: Frame) -> Rc<Kont> {
        Rc::new(Kont { frame, marks: Marks::empty() })
    }

    /// Marks from this frame outwards, ending with `mt`'s.
    pub fn chain(&self) -> Vec<&Marks> {
        let mut out = vec![&self.marks];
        let mut cur = self;
        loop {
            cur = match &cur.frame {
                Frame::Mt => return out,
                Frame::Ar { next, .. } | Frame::Fn { next, .. } | Frame::If { next, .. } | Frame::Set { next, .. } => next,
            };
            out.push(&cur.marks);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Handler {
    Mt,
    Hn { handler: E, env: Env, kont: Rc<Kont>, next: Rc<Handler> },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Control {
    Expr(E),
    Kont(Rc<Kont>),
}

/// `⟨e, ρ, σ, η, κ⟩`; `handler` is `None` outside the CESHK family.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CeskState {
    pub control: Control,
    pub env: Env,
    pub store: Store<(Value, Env)>,
    pub handler: Option<Rc<Handler>>,
    pub kont: Rc<Kont>,
}

/// CESK with recursive continuations, in the same three families as the
/// pointer-refined machine.
#[derive(Debug, Clone)]
pub struct Cesk {
    pub family: Family,
    pub universe: PermissionSet,
}

impl Cesk {
    pub fn new(family: Family) -> Self {
        Cesk { family, universe: PermissionSet::default() }
    }

    pub fn with_universe(mut self, universe: PermissionSet) -> Self {
        self.universe = universe;
        self
    }

    fn fresh(store: &Store<(Value, Env)>) -> Addr {
        Addr::Int(store.max_int().map_or(1, |n| n + 1))
    }

    fn bind(s: &CeskState, v: Value, venv: Env) -> (Addr, Store<(Value, Env)>) {
        let a = Self::fresh(&s.store);
        let mut store = s.store.clone();
        store.overwrite(a.clone(), (v, venv));
        (a, store)
    }

    fn with(s: &CeskState, control: Control, env: Env, kont: Rc<Kont>) -> CeskState {
        CeskState { control, env, store: s.store.clone(), handler: s.handler.clone(), kont }
    }

    fn marked(s: &CeskState, r: &PermissionSet, mark: Mark, body: &E) -> CeskState {
        let kont = Rc::new(Kont { frame: s.kont.frame.clone(), marks: s.kont.marks.set(r, mark) });
        Self::with(s, Control::Expr(body.clone()), s.env.clone(), kont)
    }

    fn eval(&self, s: &CeskState, e: &E, out: &mut Transitions<CeskState>) {
        match e.kind() {
            ExprKind::Ref(x) => match s.env.get(x).and_then(|a| s.store.get_one(a)) {
                Some((v, env)) => out.push(Self::with(s, v.to_control(), env.clone(), s.kont.clone())),
                None => out.halt(Terminal::Stuck),
            },
            ExprKind::Lam(..) | ExprKind::False | ExprKind::Callcc => {
                self.apply(s, Value::Syntax(e.clone()), s.env.clone(), out)
            }
            ExprKind::App(e0, e1) => {
                let k = Kont::plain(Frame::Ar { arg: e1.clone(), env: s.env.clone(), call: e.label(), next: s.kont.clone() });
                out.push(Self::with(s, Control::Expr(e0.clone()), s.env.clone(), k));
            }
            ExprKind::If(c, t, f) => {
                let k = Kont::plain(Frame::If { then: t.clone(), els: f.clone(), env: s.env.clone(), next: s.kont.clone() });
                out.push(Self::with(s, Control::Expr(c.clone()), s.env.clone(), k));
            }
            ExprKind::SetBang(x, body) => match s.env.get(x) {
                Some(a) => {
                    let k = Kont::plain(Frame::Set { target: a.clone(), next: s.kont.clone() });
                    out.push(Self::with(s, Control::Expr(body.clone()), s.env.clone(), k));
                }
                None => out.halt(Terminal::Stuck),
            },
            ExprKind::Throw(v) if self.family == Family::Ceshk => match s.handler.as_deref() {
                Some(Handler::Hn { handler, env, kont, next }) => {
                    let ExprKind::Lam(x, body) = handler.kind() else { unreachable!("catch handlers are λs") };
                    let (a, store) = Self::bind(s, Value::Syntax(v.clone()), s.env.clone());
                    out.push(CeskState {
                        control: Control::Expr(body.clone()),
                        env: env.extend(x.clone(), a),
                        store,
                        handler: Some(next.clone()),
                        kont: kont.clone(),
                    });
                }
                _ => out.halt(Terminal::Uncaught),
            },
            ExprKind::Catch(body, handler) if self.family == Family::Ceshk => {
                let hn = Handler::Hn {
                    handler: handler.clone(),
                    env: s.env.clone(),
                    kont: s.kont.clone(),
                    next: s.handler.clone().expect("handler register"),
                };
                out.push(CeskState {
                    control: Control::Expr(body.clone()),
                    env: s.env.clone(),
                    store: s.store.clone(),
                    handler: Some(Rc::new(hn)),
                    kont: Kont::mt(),
                });
            }
            ExprKind::Fail if self.family == Family::Cm => {
                if *s.kont == *Kont::mt() {
                    out.halt(Terminal::SecurityFail);
                } else {
                    out.push(Self::with(s, Control::Expr(e.clone()), s.env.clone(), Kont::mt()));
                }
            }
            ExprKind::Grant(r, body) if self.family == Family::Cm => out.push(Self::marked(s, r, Mark::Grant, body)),
            ExprKind::Frame(r, body) if self.family == Family::Cm => {
                out.push(Self::marked(s, &self.universe.difference(r), Mark::Deny, body))
            }
            ExprKind::Test(r, yes, no) if self.family == Family::Cm => {
                let branch = if ok(r, s.kont.chain()) { yes } else { no };
                out.push(Self::with(s, Control::Expr(branch.clone()), s.env.clone(), s.kont.clone()));
            }
            _ => out.halt(Terminal::Stuck),
        }
    }

    fn apply(&self, s: &CeskState, v: Value, venv: Env, out: &mut Transitions<CeskState>) {
        match &s.kont.frame {
            Frame::Mt => match s.handler.as_deref() {
                Some(Handler::Hn { kont, next, .. }) => out.push(CeskState {
                    control: v.to_control(),
                    env: venv,
                    store: s.store.clone(),
                    handler: Some(next.clone()),
                    kont: kont.clone(),
                }),
                _ => out.halt(Terminal::Final),
            },
            Frame::Ar { arg, env, call, next } => {
                let k = Kont::plain(Frame::Fn { fun: v, env: venv, call: *call, next: next.clone() });
                out.push(Self::with(s, Control::Expr(arg.clone()), env.clone(), k));
            }
            Frame::Fn { fun, env: fenv, next, .. } => match fun {
                Value::Syntax(f) => match f.kind() {
                    ExprKind::Lam(x, body) => {
                        let (a, store) = Self::bind(s, v, venv);
                        out.push(CeskState {
                            control: Control::Expr(body.clone()),
                            env: fenv.extend(x.clone(), a),
                            store,
                            handler: s.handler.clone(),
                            kont: next.clone(),
                        });
                    }
                    ExprKind::Callcc => match &v {
                        Value::Syntax(g) => match g.kind() {
                            ExprKind::Lam(x, body) => {
                                let (a, store) = Self::bind(s, Value::Kont(next.clone()), Env::empty());
                                out.push(CeskState {
                                    control: Control::Expr(body.clone()),
                                    env: venv.extend(x.clone(), a),
                                    store,
                                    handler: s.handler.clone(),
                                    kont: next.clone(),
                                });
                            }
                            _ => out.halt(Terminal::Stuck),
                        },
                        Value::Kont(k) => out.push(Self::with(s, Control::Kont(next.clone()), Env::empty(), k.clone())),
                    },
                    _ => out.halt(Terminal::Stuck),
                },
                Value::Kont(k) => out.push(Self::with(s, v.to_control(), venv, k.clone())),
            },
            Frame::If { then, els, env, next } => {
                let is_false = matches!(&v, Value::Syntax(e) if matches!(e.kind(), ExprKind::False));
                let branch = if is_false { els } else { then };
                out.push(Self::with(s, Control::Expr(branch.clone()), env.clone(), next.clone()));
            }
            Frame::Set { target, next } => match s.store.get_one(target).cloned() {
                Some((old, oenv)) => {
                    let mut store = s.store.clone();
                    store.overwrite(target.clone(), (v, venv));
                    out.push(CeskState {
                        control: old.to_control(),
                        env: oenv,
                        store,
                        handler: s.handler.clone(),
                        kont: next.clone(),
                    });
                }
                None => out.halt(Terminal::Stuck),
            },
        }
    }
}

impl Machine for Cesk {
    type State = CeskState;

    fn inject(&self, program: &E) -> Result<CeskState, MachineError> {
        check_closed(program)?;
        Ok(CeskState {
            control: Control::Expr(program.clone()),
            env: Env::empty(),
            store: Store::new(),
            handler: (self.family == Family::Ceshk).then(|| Rc::new(Handler::Mt)),
            kont: Kont::mt(),
        })
    }

    fn transitions(&self, s: &CeskState) -> Transitions<CeskState> {
        let mut out = Transitions::new();
        match &s.control {
            Control::Expr(e) => self.eval(s, e, &mut out),
            Control::Kont(k) => self.apply(s, Value::Kont(k.clone()), Env::empty(), &mut out),
        }
        out
    }

    fn summarize(&self, s: &CeskState) -> StateSummary {
        let (control, label) = match &s.control {
            Control::Expr(e) => (e.to_string(), Some(e.label())),
            Control::Kont(_) => ("#<kont>".to_string(), None),
        };
        StateSummary { control, label, kont: format!("{}", KontView(&s.kont)), store_size: s.store.len() }
    }

    fn render(&self, s: &CeskState) -> String {
        let control = match &s.control {
            Control::Expr(e) => e.to_string(),
            Control::Kont(k) => format!("#<kont {}>", KontView(k)),
        };
        let store: Vec<String> = s
            .store
            .0
            .iter()
            .filter_map(|(a, set)| set.iter().next().map(|(v, env)| format!("{a}↦({}, {env})", ValueView(v))))
            .collect();
        format!("⟨{control}, {}, {{{}}}, {}⟩", s.env, store.join(", "), KontView(&s.kont))
    }
}

struct ValueView<'a>(&'a Value);

impl fmt::Display for ValueView<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Value::Syntax(e) => write!(f, "{e}"),
            Value::Kont(k) => write!(f, "#<kont {}>", KontView(k)),
        }
    }
}

struct KontView<'a>(&'a Kont);

impl fmt::Display for KontView<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0.frame {
            Frame::Mt => write!(f, "mt")?,
            Frame::Ar { arg, env, next, .. } => write!(f, "ar({arg}, {env}, {})", KontView(next))?,
            Frame::Fn { fun, env, next, .. } => write!(f, "fn({}, {env}, {})", ValueView(fun), KontView(next))?,
            Frame::If { then, els, env, next } => write!(f, "if({then}, {els}, {env}, {})", KontView(next))?,
            Frame::Set { target, next } => write!(f, "set({target}, {})", KontView(next))?,
        }
        if !self.0.marks.is_empty() {
            write!(f, "^{}", self.0.marks)?;
        }
        Ok(())
    }
}
