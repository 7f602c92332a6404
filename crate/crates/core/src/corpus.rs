//! Closed example programs used by tests, benchmarks and the CLI.

use crate::syntax::{parse_with, PermissionSet, E};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    /// Pure λ-calculus.
    Pure,
    /// Conditionals, `set!` and `callcc`.
    Extended,
    Exceptions,
    /// Continuation marks and stack inspection.
    Security,
}

#[derive(Debug, Clone, Copy)]
pub struct Program {
    pub name: &'static str,
    pub group: Group,
    pub source: &'static str,
}

/// Permissions mentioned by the security programs.
pub const UNIVERSE: &[&str] = &["p", "q"];

pub fn universe() -> PermissionSet {
    PermissionSet::new(UNIVERSE.iter().copied())
}

impl Program {
    pub fn expr(&self) -> E {
        parse_with(self.source, Some(&universe())).unwrap_or_else(|err| panic!("{}: {err}", self.name))
    }
}

const fn p(name: &'static str, group: Group, source: &'static str) -> Program {
    Program { name, group, source }
}

use Group::*;

pub const PROGRAMS: &[Program] = &[
    p("identity", Pure, "(lambda (x) x)"),
    p("identity-app", Pure, "((lambda (x) x) (lambda (y) y))"),
    p("identity-chain-2", Pure, "((lambda (a) a) ((lambda (b) b) (lambda (c) c)))"),
    p("identity-chain-3", Pure, "(((lambda (a) a) (lambda (b) b)) ((lambda (c) c) (lambda (d) d)))"),
    p("identity-chain-4", Pure, "((lambda (a) a) ((lambda (b) b) ((lambda (c) c) ((lambda (d) d) (lambda (e) e)))))"),
    p("identity-twice", Pure, "((lambda (f) (f f)) (lambda (x) x))"),
    p("identity-square", Pure, "((lambda (f) ((f f) (f f))) (lambda (x) x))"),
    p("const", Pure, "(((lambda (x) (lambda (y) x)) (lambda (a) a)) (lambda (b) b))"),
    p("const-second", Pure, "(((lambda (x) (lambda (y) y)) (lambda (a) a)) (lambda (b) b))"),
    p("eta", Pure, "((lambda (f) (lambda (x) (f x))) (lambda (y) y))"),
    p("nested-binding", Pure, "((lambda (a) ((lambda (b) (a b)) (lambda (c) c))) (lambda (d) d))"),
    p(
        "compose",
        Pure,
        "((((lambda (f) (lambda (g) (lambda (x) (f (g x))))) (lambda (a) a)) (lambda (b) b)) (lambda (c) c))",
    ),
    p("self-application", Pure, "((lambda (x) (x x)) (lambda (y) y))"),
    p("omega", Pure, "((lambda (x) (x x)) (lambda (x) (x x)))"),
    p("omega-delayed", Pure, "((lambda (x) (lambda (y) (x x))) (lambda (x) (x x)))"),
    p("k-omega", Pure, "((lambda (x) (lambda (y) x)) ((lambda (w) (w w)) (lambda (w) (w w))))"),
    p("church-zero", Pure, "(((lambda (f) (lambda (x) x)) (lambda (z) z)) (lambda (w) w))"),
    p("church-one", Pure, "(((lambda (f) (lambda (x) (f x))) (lambda (z) z)) (lambda (w) w))"),
    p("church-two", Pure, "(((lambda (f) (lambda (x) (f (f x)))) (lambda (z) z)) (lambda (w) w))"),
    p("church-three", Pure, "(((lambda (f) (lambda (x) (f (f (f x))))) (lambda (z) z)) (lambda (w) w))"),
    p(
        "church-succ-one",
        Pure,
        "((((lambda (n) (lambda (f) (lambda (x) (f ((n f) x))))) (lambda (g) (lambda (y) (g y)))) (lambda (z) z)) (lambda (w) w))",
    ),
    p(
        "church-succ-two",
        Pure,
        "((((lambda (n) (lambda (f) (lambda (x) (f ((n f) x))))) (lambda (g) (lambda (y) (g (g y))))) (lambda (z) z)) (lambda (w) w))",
    ),
    p(
        "church-plus",
        Pure,
        "(((((lambda (m) (lambda (n) (lambda (f) (lambda (x) ((m f) ((n f) x)))))) (lambda (g) (lambda (y) (g y)))) (lambda (h) (lambda (u) (h u)))) (lambda (z) z)) (lambda (w) w))",
    ),
    p(
        "church-plus-two-one",
        Pure,
        "(((((lambda (m) (lambda (n) (lambda (f) (lambda (x) ((m f) ((n f) x)))))) (lambda (g) (lambda (y) (g (g y))))) (lambda (h) (lambda (u) (h u)))) (lambda (z) z)) (lambda (w) w))",
    ),
    p(
        "church-mult",
        Pure,
        "(((((lambda (m) (lambda (n) (lambda (f) (m (n f))))) (lambda (g) (lambda (y) (g (g y))))) (lambda (h) (lambda (u) (h (h u))))) (lambda (z) z)) (lambda (w) w))",
    ),
    p(
        "church-exp",
        Pure,
        "(((((lambda (m) (lambda (n) (n m))) (lambda (g) (lambda (y) (g (g y))))) (lambda (h) (lambda (u) (h (h u))))) (lambda (z) z)) (lambda (w) w))",
    ),
    p(
        "church-two-two",
        Pure,
        "((((lambda (f) (lambda (x) (f (f x)))) (lambda (g) (lambda (y) (g (g y))))) (lambda (z) z)) (lambda (w) w))",
    ),
    p("church-true", Pure, "(((lambda (a) (lambda (b) a)) (lambda (x) x)) (lambda (y) y))"),
    p("church-false", Pure, "(((lambda (a) (lambda (b) b)) (lambda (x) x)) (lambda (y) y))"),
    p(
        "church-is-zero",
        Pure,
        "((((lambda (n) ((n (lambda (v) (lambda (a) (lambda (b) b)))) (lambda (a) (lambda (b) a)))) (lambda (f) (lambda (x) x))) (lambda (t) t)) (lambda (e) e))",
    ),
    p(
        "church-pair-first",
        Pure,
        "((lambda (p) (p (lambda (a) (lambda (b) a)))) (((lambda (x) (lambda (y) (lambda (s) ((s x) y)))) (lambda (u) u)) (lambda (v) v)))",
    ),
    p(
        "z-const",
        Pure,
        "(((lambda (f) ((lambda (x) (f (lambda (v) ((x x) v)))) (lambda (x) (f (lambda (v) ((x x) v)))))) (lambda (rec) (lambda (n) n))) (lambda (i) i))",
    ),
    p(
        "z-loop",
        Pure,
        "(((lambda (f) ((lambda (x) (f (lambda (v) ((x x) v)))) (lambda (x) (f (lambda (v) ((x x) v)))))) (lambda (rec) (lambda (n) (rec n)))) (lambda (i) i))",
    ),
    p(
        "y-const",
        Pure,
        "(((lambda (f) ((lambda (x) (f (x x))) (lambda (x) (f (x x))))) (lambda (rec) (lambda (n) n))) (lambda (i) i))",
    ),
    p(
        "dead-binding",
        Pure,
        "((lambda (id) ((lambda (u) ((id (lambda (b) b)) (lambda (z) z))) ((id (lambda (a) a)) (lambda (w) w)))) (lambda (x) x))",
    ),
    p("if-false", Extended, "(if #f (lambda (a) a) (lambda (b) b))"),
    p("if-true", Extended, "(if (lambda (x) x) (lambda (a) a) (lambda (b) b))"),
    p("if-variable", Extended, "((lambda (c) (if c (lambda (a) a) (lambda (b) b))) #f)"),
    p("set-returns-old", Extended, "((lambda (x) (set! x (lambda (y) y))) (lambda (z) z))"),
    p("set-then-read", Extended, "((lambda (x) ((lambda (old) x) (set! x (lambda (y) y)))) (lambda (z) z))"),
    p("set-false", Extended, "((lambda (f) ((lambda (u) (if f (lambda (a) a) (lambda (b) b))) (set! f #f))) (lambda (x) x))"),
    p("callcc-unused", Extended, "(callcc (lambda (k) (lambda (x) x)))"),
    p("callcc-escape", Extended, "((lambda (z) z) (callcc (lambda (k) ((k (lambda (v) v)) (lambda (u) u)))))"),
    p("callcc-return", Extended, "((lambda (f) (f (lambda (w) w))) (callcc (lambda (k) (lambda (x) x))))"),
    p("catch-throw", Exceptions, "(catch (throw (lambda (v) v)) (lambda (x) x))"),
    p("uncaught", Exceptions, "(throw (lambda (v) v))"),
    p("catch-no-throw", Exceptions, "(catch (lambda (v) v) (lambda (x) x))"),
    p(
        "catch-rethrow",
        Exceptions,
        "(catch (catch (throw (lambda (a) a)) (lambda (x) (throw (lambda (b) b)))) (lambda (y) y))",
    ),
    p("throw-from-call", Exceptions, "(catch ((lambda (f) (f (lambda (q) q))) (lambda (z) (throw (lambda (t) t)))) (lambda (x) x))"),
    p("catch-in-operand", Exceptions, "((lambda (r) r) (catch (throw (lambda (v) v)) (lambda (x) x)))"),
    p("grant-test", Security, "(grant (p) (test (p) (lambda (a) a) (lambda (b) b)))"),
    p("frame-test", Security, "(frame () (test (p) (lambda (a) a) (lambda (b) b)))"),
    p("bare-test", Security, "(test (p) (lambda (a) a) (lambda (b) b))"),
    p("grant-then-frame", Security, "(grant (p) (frame (q) (test (p) (lambda (a) a) (lambda (b) b))))"),
    p(
        "granted-caller",
        Security,
        "((lambda (f) (grant (p) (f (lambda (z) z)))) (lambda (x) (test (p) x (lambda (b) b))))",
    ),
    p(
        "mixed-callers",
        Security,
        "(frame () ((lambda (f) ((lambda (u) (grant (p) (f (lambda (a) a)))) (f (lambda (b) b)))) (lambda (x) (test (p) x x))))",
    ),
    p("fail", Security, "(fail)"),
    p("fail-in-call", Security, "((lambda (x) (fail)) (lambda (y) y))"),
];

pub fn group(g: Group) -> impl Iterator<Item = &'static Program> {
    PROGRAMS.iter().filter(move |p| p.group == g)
}

pub fn by_name(name: &str) -> Option<&'static Program> {
    PROGRAMS.iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::is_closed;

    #[test]
    fn every_program_parses_closed() {
        for p in PROGRAMS {
            assert!(is_closed(&p.expr()), "{}", p.name);
        }
    }

    #[test]
    fn names_are_unique() {
        let mut names: Vec<_> = PROGRAMS.iter().map(|p| p.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), PROGRAMS.len());
    }

    #[test]
    fn pure_corpus_is_large_enough() {
        assert!(group(Group::Pure).count() >= 30);
    }
}
