//! Addresses, timestamps, stores, and the `tick`/`alloc` parameters.
//!
//! One representation serves both the concrete and abstract machines. A
//! [`Policy`] decides how time advances and how addresses are chosen; with a
//! finite `k` the address space is bounded and stores join instead of
//! overwrite.

use std::collections::{BTreeMap, BTreeSet};

use im::{OrdMap, OrdSet};
use std::fmt;

use crate::syntax::{Label, Var};

/// Which kind of frame or binding an allocation produces. Mixed into
/// label-based addresses so that distinct draws in one step never coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Ar,
    Fn,
    If,
    Set,
    Handler,
    Force,
    Apply,
    Thunk,
}

/// The `(Lab + Var)` part of a contour address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    Label(Label, Slot),
    Var(Var),
}

/// A call string, most recent call first.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Contour(pub Vec<Label>);

impl Contour {
    pub fn empty() -> Self {
        Contour(Vec::new())
    }

    /// `⌊δ⌋k`: the leftmost `k` labels.
    pub fn truncate(&self, k: usize) -> Contour {
        Contour(self.0.iter().take(k).copied().collect())
    }

    /// `⌊ℓδ⌋k`, or the untruncated push when `k` is `None`.
    pub fn push(&self, l: Label, k: Option<usize>) -> Contour {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.push(l);
        v.extend(self.0.iter().copied());
        if let Some(k) = k {
            v.truncate(k);
        }
        Contour(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Contour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "ε");
        }
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Addr {
    /// `a0`: the initial continuation, always `mt`.
    Halt,
    /// Initial (empty) handler stack.
    HaltHandler,
    /// Designated home of the empty-marked `mt` installed by `fail`.
    FailMt,
    Int(u64),
    /// `(Lab + Var) × Contour`. `serial` is a step counter that keeps
    /// concrete allocation fresh; it is always 0 in the abstract.
    Ctx { site: Site, contour: Contour, serial: u64 },
}

impl Addr {
    pub fn is_designated(&self) -> bool {
        matches!(self, Addr::Halt | Addr::HaltHandler | Addr::FailMt)
    }
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Addr::Halt => write!(f, "a0"),
            Addr::HaltHandler => write!(f, "h0"),
            Addr::FailMt => write!(f, "afail"),
            Addr::Int(n) => write!(f, "{n}"),
            Addr::Ctx { site, contour, serial } => {
                match site {
                    Site::Label(l, s) => write!(f, "({l}{}", slot_tag(*s))?,
                    Site::Var(x) => write!(f, "({x}")?,
                }
                write!(f, ",{contour})")?;
                if *serial != 0 {
                    write!(f, "#{serial}")?;
                }
                Ok(())
            }
        }
    }
}

fn slot_tag(s: Slot) -> &'static str {
    match s {
        Slot::Ar => "",
        Slot::Fn => "'",
        Slot::If => "?",
        Slot::Set => "!",
        Slot::Handler => "^",
        Slot::Force => "~",
        Slot::Apply => "@",
        Slot::Thunk => "*",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Time {
    /// Machines without a time component.
    Unit,
    Int(u64),
    /// `(Lab + •) × Contour`, plus a concrete-only step counter.
    Ctx { label: Option<Label>, contour: Contour, serial: u64 },
}

impl Time {
    pub fn contour(&self) -> Option<&Contour> {
        match self {
            Time::Ctx { contour, .. } => Some(contour),
            _ => None,
        }
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Time::Unit => write!(f, "-"),
            Time::Int(n) => write!(f, "{n}"),
            Time::Ctx { label, contour, serial } => {
                match label {
                    Some(l) => write!(f, "({l},{contour})")?,
                    None => write!(f, "(•,{contour})")?,
                }
                if *serial != 0 {
                    write!(f, "#{serial}")?;
                }
                Ok(())
            }
        }
    }
}

/// How a transition advances time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickEvent {
    /// `tick = t`.
    Keep,
    /// Evaluating the application labeled `ℓ`: `(ℓ, δ)`.
    Call(Label),
    /// Entering a procedure body: `(•, ⌊ℓδ⌋k)` with `ℓ` from the current time.
    Enter,
    /// Entering a procedure body for a known call site (handler invocation).
    EnterAt(Label),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntAlloc {
    /// `max(dom σ) + 1`.
    Fresh,
    /// `alloc(⟨…, t⟩) = t`, only fresh while every step ticks.
    FromTime,
}

/// The `tick`/`alloc` instantiation of a machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Integer addresses; `timed` adds `tick = t + 1`.
    Int { timed: bool, alloc: IntAlloc },
    /// Contour-based instantiation. `k = None` is the concrete (unbounded)
    /// machine; `Some(k)` truncates contours and makes stores join.
    KCfa { k: Option<usize> },
}

impl Policy {
    pub const CONCRETE_CTX: Policy = Policy::KCfa { k: None };

    pub fn abstract_k(k: usize) -> Policy {
        Policy::KCfa { k: Some(k) }
    }

    pub fn is_abstract(&self) -> bool {
        matches!(self, Policy::KCfa { k: Some(_) })
    }

    /// Concrete machines overwrite; abstract machines join.
    pub fn strong_updates(&self) -> bool {
        !self.is_abstract()
    }

    pub fn initial_time(&self) -> Time {
        match self {
            Policy::Int { timed: false, .. } => Time::Unit,
            Policy::Int { timed: true, .. } => Time::Int(0),
            Policy::KCfa { .. } => Time::Ctx { label: None, contour: Contour::empty(), serial: 0 },
        }
    }

    pub fn tick(&self, t: &Time, ev: TickEvent) -> Time {
        match (self, t) {
            (_, Time::Unit) => Time::Unit,
            (_, Time::Int(n)) => Time::Int(n + 1),
            (Policy::KCfa { k }, Time::Ctx { label, contour, serial }) => {
                let serial = if k.is_some() { 0 } else { serial + 1 };
                let (label, contour) = match ev {
                    TickEvent::Keep => (*label, contour.clone()),
                    TickEvent::Call(l) => (Some(l), contour.clone()),
                    TickEvent::Enter => match label {
                        Some(l) => (None, contour.push(*l, *k)),
                        None => (None, contour.clone()),
                    },
                    TickEvent::EnterAt(l) => (None, contour.push(l, *k)),
                };
                Time::Ctx { label, contour, serial }
            }
            (Policy::Int { .. }, Time::Ctx { .. }) => panic!("integer policy on a contour time"),
        }
    }

    pub fn alloc<S: Ord + Clone>(&self, t: &Time, site: Site, store: &Store<S>) -> Addr {
        match self {
            Policy::Int { alloc: IntAlloc::Fresh, .. } => Addr::Int(store.max_int().map_or(1, |n| n + 1)),
            Policy::Int { alloc: IntAlloc::FromTime, .. } => match t {
                Time::Int(n) => Addr::Int(*n),
                _ => Addr::Int(store.max_int().map_or(1, |n| n + 1)),
            },
            Policy::KCfa { .. } => match t {
                Time::Ctx { contour, serial, .. } => {
                    Addr::Ctx { site, contour: contour.clone(), serial: *serial }
                }
                _ => panic!("contour policy on a non-contour time"),
            },
        }
    }
}

/// `Var →fin Addr`.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Env(pub BTreeMap<Var, Addr>);

impl Env {
    pub fn empty() -> Self {
        Env(BTreeMap::new())
    }

    pub fn get(&self, x: &str) -> Option<&Addr> {
        self.0.get(x)
    }

    /// `ρ[x ↦ a]`.
    pub fn extend(&self, x: Var, a: Addr) -> Env {
        let mut m = self.0.clone();
        m.insert(x, a);
        Env(m)
    }

    /// Addresses of `ρ|vars`.
    pub fn restricted_range<'a>(&'a self, vars: &'a BTreeSet<Var>) -> impl Iterator<Item = &'a Addr> + 'a {
        vars.iter().filter_map(move |x| self.0.get(x))
    }

    pub fn map_addrs(&self, f: &impl Fn(&Addr) -> Addr) -> Env {
        Env(self.0.iter().map(|(x, a)| (x.clone(), f(a))).collect())
    }
}

impl fmt::Display for Env {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (x, a)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x}:{a}")?;
        }
        write!(f, "}}")
    }
}

/// Finite map from addresses to sets of storables. Concrete stores keep
/// singleton sets. Persistent, so successor states share structure.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Store<S: Ord + Clone>(pub OrdMap<Addr, OrdSet<S>>);

impl<S: Ord + Clone> Default for Store<S> {
    fn default() -> Self {
        Store(OrdMap::new())
    }
}

impl<S: Ord + Clone> Store<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, a: &Addr) -> impl Iterator<Item = &S> {
        self.0.get(a).into_iter().flatten()
    }

    pub fn get_set(&self, a: &Addr) -> Option<&OrdSet<S>> {
        self.0.get(a)
    }

    /// The unique value at `a` in a concrete store.
    pub fn get_one(&self, a: &Addr) -> Option<&S> {
        let set = self.0.get(a)?;
        if set.len() == 1 {
            set.iter().next()
        } else {
            None
        }
    }

    pub fn contains(&self, a: &Addr) -> bool {
        self.0.contains_key(a)
    }

    pub fn addrs(&self) -> impl Iterator<Item = &Addr> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of storables across all entries.
    pub fn weight(&self) -> usize {
        self.0.values().map(|s| s.len()).sum()
    }

    /// `σ ⊔ [a ↦ s]`.
    pub fn join(&mut self, a: Addr, s: S) {
        self.0.entry(a).or_default().insert(s);
    }

    /// `σ[a ↦ s]`.
    pub fn overwrite(&mut self, a: Addr, s: S) {
        self.0.insert(a, OrdSet::unit(s));
    }

    pub fn update(&mut self, a: Addr, s: S, strong: bool) {
        if strong {
            self.overwrite(a, s)
        } else {
            self.join(a, s)
        }
    }

    /// Replace one member of `σ(a)` (continuation-mark updates).
    pub fn replace(&mut self, a: &Addr, old: &S, new: S) {
        if let Some(set) = self.0.get_mut(a) {
            set.remove(old);
            set.insert(new);
        }
    }

    pub fn join_store(&mut self, other: &Store<S>) {
        for (a, set) in &other.0 {
            let entry = self.0.entry(a.clone()).or_default();
            *entry = entry.clone().union(set.clone());
        }
    }

    /// Pointwise subset: `σ1(a) ⊆ σ2(a)` for every `a`.
    pub fn leq(&self, other: &Store<S>) -> bool {
        self.0.iter().all(|(a, set)| match other.0.get(a) {
            Some(o) => set.is_subset(o.clone()),
            None => set.is_empty(),
        })
    }

    pub fn restrict(&self, keep: &BTreeSet<Addr>) -> Store<S> {
        Store(self.0.iter().filter(|(a, _)| keep.contains(*a)).map(|(a, s)| (a.clone(), s.clone())).collect())
    }

    pub fn max_int(&self) -> Option<u64> {
        match self.0.range(Addr::Int(0)..=Addr::Int(u64::MAX)).next_back() {
            Some((Addr::Int(n), _)) => Some(*n),
            _ => None,
        }
    }
}
