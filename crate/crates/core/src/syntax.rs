//! Labeled abstract syntax, the s-expression reader, and syntactic utilities.
//!
//! Every node carries a [`Label`] assigned in pre-order starting at 0, so the
//! labels of one program are pairwise distinct. Expressions are shared via
//! [`E`], a cheap handle whose equality and ordering look only at the label.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Var = Arc<str>;
pub type Perm = Arc<str>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label(pub u32);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const RESERVED: &[&str] = &[
    "if", "set!", "callcc", "throw", "catch", "fail", "grant", "test", "frame", "lambda", "λ",
];

/// A finite set of permission names.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PermissionSet(pub BTreeSet<Perm>);

impl PermissionSet {
    pub fn new<I, S>(perms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        PermissionSet(perms.into_iter().map(|p| Arc::from(p.as_ref())).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, p: &str) -> bool {
        self.0.contains(p)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Perm> {
        self.0.iter()
    }

    pub fn intersection(&self, other: &PermissionSet) -> PermissionSet {
        PermissionSet(self.0.intersection(&other.0).cloned().collect())
    }

    pub fn difference(&self, other: &PermissionSet) -> PermissionSet {
        PermissionSet(self.0.difference(&other.0).cloned().collect())
    }

    pub fn is_subset(&self, other: &PermissionSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl fmt::Display for PermissionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone)]
pub enum ExprKind {
    Ref(Var),
    App(E, E),
    Lam(Var, E),
    If(E, E, E),
    SetBang(Var, E),
    Throw(E),
    Catch(E, E),
    Fail,
    Grant(PermissionSet, E),
    Test(PermissionSet, E, E),
    Frame(PermissionSet, E),
    False,
    Callcc,
}

#[derive(Debug)]
pub struct Expr {
    pub label: Label,
    pub kind: ExprKind,
    fv: BTreeSet<Var>,
}

/// Shared handle to a labeled expression.
#[derive(Debug, Clone)]
pub struct E(Arc<Expr>);

impl PartialEq for E {
    fn eq(&self, other: &Self) -> bool {
        self.0.label == other.0.label
    }
}
impl Eq for E {}
impl PartialOrd for E {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for E {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.label.cmp(&other.0.label)
    }
}
impl std::hash::Hash for E {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.label.hash(state)
    }
}

impl std::ops::Deref for E {
    type Target = Expr;
    fn deref(&self) -> &Expr {
        &self.0
    }
}

impl E {
    pub fn new(label: Label, kind: ExprKind) -> E {
        let fv = compute_fv(&kind);
        E(Arc::new(Expr { label, kind, fv }))
    }

    pub fn label(&self) -> Label {
        self.0.label
    }

    pub fn kind(&self) -> &ExprKind {
        &self.0.kind
    }

    /// Free variables, cached at construction.
    pub fn fv(&self) -> &BTreeSet<Var> {
        &self.0.fv
    }

    /// Syntactic values: λ, `#f` and `callcc`.
    pub fn is_value(&self) -> bool {
        matches!(self.kind(), ExprKind::Lam(..) | ExprKind::False | ExprKind::Callcc)
    }

    pub fn is_lam(&self) -> bool {
        matches!(self.kind(), ExprKind::Lam(..))
    }

    pub fn children(&self) -> Vec<&E> {
        use ExprKind::*;
        match self.kind() {
            Ref(_) | Fail | False | Callcc => vec![],
            App(a, b) | Catch(a, b) | Test(_, a, b) => vec![a, b],
            Lam(_, b) | SetBang(_, b) | Throw(b) | Grant(_, b) | Frame(_, b) => vec![b],
            If(a, b, c) => vec![a, b, c],
        }
    }

    /// Pre-order list of every subexpression (including `self`).
    pub fn subexprs(&self) -> Vec<E> {
        let mut out = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            for c in e.children().into_iter().rev() {
                stack.push(c.clone());
            }
            out.push(e);
        }
        out
    }

    /// Structural equality including labels.
    pub fn same_tree(&self, other: &E) -> bool {
        use ExprKind::*;
        if self.label() != other.label() {
            return false;
        }
        match (self.kind(), other.kind()) {
            (Ref(x), Ref(y)) => x == y,
            (Lam(x, b), Lam(y, c)) | (SetBang(x, b), SetBang(y, c)) => x == y && b.same_tree(c),
            (Grant(r, b), Grant(s, c)) | (Frame(r, b), Frame(s, c)) => r == s && b.same_tree(c),
            (Test(r, a, b), Test(s, c, d)) => r == s && a.same_tree(c) && b.same_tree(d),
            (App(a, b), App(c, d)) | (Catch(a, b), Catch(c, d)) => a.same_tree(c) && b.same_tree(d),
            (Throw(a), Throw(b)) => a.same_tree(b),
            (If(a, b, c), If(d, e, f)) => a.same_tree(d) && b.same_tree(e) && c.same_tree(f),
            (Fail, Fail) | (False, False) | (Callcc, Callcc) => true,
            _ => false,
        }
    }

    /// Same shape and names, ignoring labels.
    pub fn same_shape(&self, other: &E) -> bool {
        relabel(self).same_tree(&relabel(other))
    }
}

fn compute_fv(kind: &ExprKind) -> BTreeSet<Var> {
    use ExprKind::*;
    match kind {
        Ref(x) => BTreeSet::from([x.clone()]),
        Lam(x, b) => {
            let mut s = b.fv().clone();
            s.remove(x);
            s
        }
        SetBang(x, b) => {
            let mut s = b.fv().clone();
            s.insert(x.clone());
            s
        }
        _ => {
            let mut s = BTreeSet::new();
            for c in kind_children(kind) {
                s.extend(c.fv().iter().cloned());
            }
            s
        }
    }
}

fn kind_children(kind: &ExprKind) -> Vec<&E> {
    use ExprKind::*;
    match kind {
        Ref(_) | Fail | False | Callcc => vec![],
        App(a, b) | Catch(a, b) | Test(_, a, b) => vec![a, b],
        Lam(_, b) | SetBang(_, b) | Throw(b) | Grant(_, b) | Frame(_, b) => vec![b],
        If(a, b, c) => vec![a, b, c],
    }
}

/// Free variables of `e`.
pub fn free_vars(e: &E) -> BTreeSet<Var> {
    e.fv().clone()
}

pub fn is_closed(e: &E) -> bool {
    e.fv().is_empty()
}

impl fmt::Display for E {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ExprKind::*;
        match self.kind() {
            Ref(x) => write!(f, "{x}"),
            App(a, b) => write!(f, "({a} {b})"),
            Lam(x, b) => write!(f, "(lambda ({x}) {b})"),
            If(a, b, c) => write!(f, "(if {a} {b} {c})"),
            SetBang(x, b) => write!(f, "(set! {x} {b})"),
            Throw(v) => write!(f, "(throw {v})"),
            Catch(a, b) => write!(f, "(catch {a} {b})"),
            Fail => write!(f, "(fail)"),
            Grant(r, b) => write!(f, "(grant {r} {b})"),
            Test(r, a, b) => write!(f, "(test {r} {a} {b})"),
            Frame(r, b) => write!(f, "(frame {r} {b})"),
            False => write!(f, "#f"),
            Callcc => write!(f, "callcc"),
        }
    }
}

/// Textual rendering of a program; `parse(&unparse(e))` rebuilds `e`.
pub fn unparse(e: &E) -> String {
    e.to_string()
}

/// Rebuild `e` with fresh pre-order labels starting at 0.
pub fn relabel(e: &E) -> E {
    let mut next = 0u32;
    relabel_from(e, &mut next)
}

fn relabel_from(e: &E, next: &mut u32) -> E {
    use ExprKind::*;
    let label = Label(*next);
    *next += 1;
    let mut r = |c: &E| relabel_from(c, next);
    let kind = match e.kind() {
        Ref(x) => Ref(x.clone()),
        App(a, b) => {
            let a = r(a);
            App(a, r(b))
        }
        Lam(x, b) => Lam(x.clone(), r(b)),
        If(a, b, c) => {
            let a = r(a);
            let b = r(b);
            If(a, b, r(c))
        }
        SetBang(x, b) => SetBang(x.clone(), r(b)),
        Throw(v) => Throw(r(v)),
        Catch(a, b) => {
            let a = r(a);
            Catch(a, r(b))
        }
        Fail => Fail,
        Grant(p, b) => Grant(p.clone(), r(b)),
        Test(p, a, b) => {
            let a = r(a);
            Test(p.clone(), a, r(b))
        }
        Frame(p, b) => Frame(p.clone(), r(b)),
        False => False,
        Callcc => Callcc,
    };
    E::new(label, kind)
}

/// The λsec annotator: wraps every λ-body in `(frame R ·)` and intersects
/// every `grant` set with `R`. Labels are reassigned afterwards.
pub fn annotate(e: &E, perms: &PermissionSet) -> E {
    relabel(&annotate_raw(e, perms))
}

fn annotate_raw(e: &E, perms: &PermissionSet) -> E {
    use ExprKind::*;
    let dummy = Label(0);
    let a = |c: &E| annotate_raw(c, perms);
    let kind = match e.kind() {
        Lam(x, b) => Lam(x.clone(), E::new(dummy, Frame(perms.clone(), a(b)))),
        Grant(r, b) => Grant(r.intersection(perms), a(b)),
        Ref(x) => Ref(x.clone()),
        App(f, x) => App(a(f), a(x)),
        If(c, t, f) => If(a(c), a(t), a(f)),
        SetBang(x, b) => SetBang(x.clone(), a(b)),
        Throw(v) => Throw(a(v)),
        Catch(b, h) => Catch(a(b), a(h)),
        Fail => Fail,
        Test(r, t, f) => Test(r.clone(), a(t), a(f)),
        Frame(r, b) => Frame(r.clone(), a(b)),
        False => False,
        Callcc => Callcc,
    };
    E::new(dummy, kind)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: `{form}` expects {expected}")]
    Arity { line: usize, col: usize, form: String, expected: String },
    #[error("{line}:{col}: permission `{perm}` is not in the configured universe")]
    UnknownPermission { line: usize, col: usize, perm: String },
}

#[derive(Debug, Clone)]
enum Sexp {
    Atom(String, usize),
    List(Vec<Sexp>, usize),
}

impl Sexp {
    fn pos(&self) -> usize {
        match self {
            Sexp::Atom(_, p) | Sexp::List(_, p) => *p,
        }
    }
}

struct Reader<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn line_col(&self, pos: usize) -> (usize, usize) {
        let before = &self.src[..pos.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let col = before.rfind('\n').map_or(pos, |i| pos - i - 1) + 1;
        (line, col)
    }

    fn err(&self, pos: usize, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.line_col(pos);
        ParseError::Syntax { line, col, msg: msg.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b';' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn read(&mut self) -> Result<Sexp, ParseError> {
        self.skip_ws();
        let start = self.pos;
        match self.bytes.get(self.pos) {
            None => Err(self.err(start, "unexpected end of input")),
            Some(b'(') | Some(b'[') => {
                let close = if self.bytes[self.pos] == b'(' { b')' } else { b']' };
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    match self.bytes.get(self.pos) {
                        None => return Err(self.err(start, "unclosed parenthesis")),
                        Some(&c) if c == close => {
                            self.pos += 1;
                            return Ok(Sexp::List(items, start));
                        }
                        Some(b')') | Some(b']') => {
                            return Err(self.err(self.pos, "mismatched closing bracket"))
                        }
                        Some(_) => items.push(self.read()?),
                    }
                }
            }
            Some(b')') | Some(b']') => Err(self.err(start, "unexpected closing bracket")),
            Some(_) => {
                while self.pos < self.bytes.len() {
                    let c = self.bytes[self.pos];
                    if c.is_ascii_whitespace() || b"()[];".contains(&c) {
                        break;
                    }
                    self.pos += 1;
                }
                Ok(Sexp::Atom(self.src[start..self.pos].to_string(), start))
            }
        }
    }
}

struct Builder<'r, 'a> {
    reader: &'r Reader<'a>,
    next: u32,
    universe: Option<&'r PermissionSet>,
}

impl Builder<'_, '_> {
    fn fresh(&mut self) -> Label {
        let l = Label(self.next);
        self.next += 1;
        l
    }

    fn arity(&self, pos: usize, form: &str, expected: &str) -> ParseError {
        let (line, col) = self.reader.line_col(pos);
        ParseError::Arity { line, col, form: form.into(), expected: expected.into() }
    }

    fn var(&self, s: &Sexp) -> Result<Var, ParseError> {
        match s {
            Sexp::Atom(a, p) => {
                if RESERVED.contains(&a.as_str()) || a == "#f" || a.starts_with('#') {
                    Err(self.reader.err(*p, format!("`{a}` cannot be used as a variable")))
                } else {
                    Ok(Arc::from(a.as_str()))
                }
            }
            Sexp::List(_, p) => Err(self.reader.err(*p, "expected an identifier")),
        }
    }

    fn perms(&self, s: &Sexp) -> Result<PermissionSet, ParseError> {
        let Sexp::List(items, p) = s else {
            return Err(self.reader.err(s.pos(), "expected a literal permission set `(p ...)`"));
        };
        let mut set = BTreeSet::new();
        for it in items {
            match it {
                Sexp::Atom(a, ap) => {
                    if let Some(u) = self.universe {
                        if !u.contains(a) {
                            let (line, col) = self.reader.line_col(*ap);
                            return Err(ParseError::UnknownPermission { line, col, perm: a.clone() });
                        }
                    }
                    set.insert(Arc::from(a.as_str()));
                }
                Sexp::List(..) => {
                    return Err(self.reader.err(*p, "permission sets contain only names"));
                }
            }
        }
        Ok(PermissionSet(set))
    }

    fn expr(&mut self, s: &Sexp) -> Result<E, ParseError> {
        use ExprKind::*;
        match s {
            Sexp::Atom(a, p) => {
                let label = self.fresh();
                match a.as_str() {
                    "#f" => Ok(E::new(label, False)),
                    "callcc" => Ok(E::new(label, Callcc)),
                    _ => Ok(E::new(label, Ref(self.var(s).map_err(|_| {
                        self.reader.err(*p, format!("`{a}` is not a valid expression"))
                    })?))),
                }
            }
            Sexp::List(items, p) => {
                let head = match items.first() {
                    Some(Sexp::Atom(h, _)) => Some(h.as_str()),
                    Some(_) => None,
                    None => return Err(self.reader.err(*p, "empty application")),
                };
                let label = self.fresh();
                let n = items.len();
                match head {
                    Some("lambda") | Some("λ") => {
                        if n != 3 {
                            return Err(self.arity(*p, "lambda", "(lambda (x) body)"));
                        }
                        let x = match &items[1] {
                            Sexp::List(xs, _) if xs.len() == 1 => self.var(&xs[0])?,
                            _ => return Err(self.arity(*p, "lambda", "exactly one parameter")),
                        };
                        Ok(E::new(label, Lam(x, self.expr(&items[2])?)))
                    }
                    Some("if") => {
                        if n != 4 {
                            return Err(self.arity(*p, "if", "three subexpressions"));
                        }
                        let c = self.expr(&items[1])?;
                        let t = self.expr(&items[2])?;
                        let f = self.expr(&items[3])?;
                        Ok(E::new(label, If(c, t, f)))
                    }
                    Some("set!") => {
                        if n != 3 {
                            return Err(self.arity(*p, "set!", "a variable and an expression"));
                        }
                        let x = self.var(&items[1])?;
                        Ok(E::new(label, SetBang(x, self.expr(&items[2])?)))
                    }
                    Some("throw") => {
                        if n != 2 {
                            return Err(self.arity(*p, "throw", "one value"));
                        }
                        let v = self.expr(&items[1])?;
                        if !v.is_value() {
                            return Err(self.reader.err(items[1].pos(), "throw expects a value form"));
                        }
                        Ok(E::new(label, Throw(v)))
                    }
                    Some("catch") => {
                        if n != 3 {
                            return Err(self.arity(*p, "catch", "a body and a handler"));
                        }
                        let body = self.expr(&items[1])?;
                        let h = self.expr(&items[2])?;
                        if !h.is_lam() {
                            return Err(self.reader.err(items[2].pos(), "catch handler must be a lambda"));
                        }
                        Ok(E::new(label, Catch(body, h)))
                    }
                    Some("fail") => {
                        if n != 1 {
                            return Err(self.arity(*p, "fail", "no operands"));
                        }
                        Ok(E::new(label, Fail))
                    }
                    Some("grant") | Some("frame") => {
                        let form = head.unwrap();
                        if n != 3 {
                            return Err(self.arity(*p, form, "a permission set and a body"));
                        }
                        let r = self.perms(&items[1])?;
                        let b = self.expr(&items[2])?;
                        Ok(E::new(label, if form == "grant" { Grant(r, b) } else { Frame(r, b) }))
                    }
                    Some("test") => {
                        if n != 4 {
                            return Err(self.arity(*p, "test", "a permission set and two branches"));
                        }
                        let r = self.perms(&items[1])?;
                        let t = self.expr(&items[2])?;
                        let f = self.expr(&items[3])?;
                        Ok(E::new(label, Test(r, t, f)))
                    }
                    _ => {
                        if n != 2 {
                            return Err(self.arity(*p, "application", "one operator and one operand"));
                        }
                        let f = self.expr(&items[0])?;
                        let a = self.expr(&items[1])?;
                        Ok(E::new(label, App(f, a)))
                    }
                }
            }
        }
    }
}

/// Parse one program, labeling nodes in pre-order from 0.
pub fn parse(text: &str) -> Result<E, ParseError> {
    parse_with(text, None)
}

/// Like [`parse`], additionally rejecting permissions outside `universe`.
pub fn parse_with(text: &str, universe: Option<&PermissionSet>) -> Result<E, ParseError> {
    let mut reader = Reader { src: text, bytes: text.as_bytes(), pos: 0 };
    let sexp = reader.read()?;
    reader.skip_ws();
    if reader.pos != text.len() {
        return Err(reader.err(reader.pos, "trailing input after program"));
    }
    let mut b = Builder { reader: &reader, next: 0, universe };
    b.expr(&sexp)
}

/// Every permission named by a `grant`, `frame` or `test` in `e`.
pub fn mentioned_permissions(e: &E) -> PermissionSet {
    let mut out = BTreeSet::new();
    let mut stack = vec![e];
    while let Some(e) = stack.pop() {
        if let ExprKind::Grant(r, _) | ExprKind::Frame(r, _) | ExprKind::Test(r, ..) = e.kind() {
            out.extend(r.iter().cloned());
        }
        stack.extend(e.children());
    }
    PermissionSet(out)
}

/// Syntactic counts used by the widening complexity bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramSize {
    pub exprs: usize,
    pub labels: usize,
    pub vars: usize,
    pub lams: usize,
}

impl ProgramSize {
    pub fn of(e: &E) -> Self {
        let subs = e.subexprs();
        let mut vars = BTreeSet::new();
        let mut lams = 0;
        for s in &subs {
            match s.kind() {
                ExprKind::Ref(x) | ExprKind::SetBang(x, _) => {
                    vars.insert(x.clone());
                }
                ExprKind::Lam(x, _) => {
                    vars.insert(x.clone());
                    lams += 1;
                }
                _ => {}
            }
        }
        ProgramSize { exprs: subs.len(), labels: subs.len(), vars: vars.len(), lams }
    }

    /// `|Exp|·|Lab|² + 1 + |Var+Lab|·(2·|Exp×Lab| + |Lam|)`.
    pub fn monovariant_bound(&self) -> u128 {
        let exp = self.exprs as u128;
        let lab = self.labels as u128;
        let var_lab = (self.vars + self.labels) as u128;
        exp * lab * lab + 1 + var_lab * (2 * exp * lab + self.lams as u128)
    }
}
