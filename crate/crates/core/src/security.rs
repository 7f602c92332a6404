//! Continuation marks and the stack-inspection predicates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::store::Addr;
use crate::syntax::{Perm, PermissionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mark {
    Deny,
    Grant,
}

/// Finite map from permissions to [`Mark`]s.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Marks(pub BTreeMap<Perm, Mark>);

impl Marks {
    pub fn empty() -> Self {
        Marks(BTreeMap::new())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `m[R ↦ c]`.
    pub fn set(&self, r: &PermissionSet, mark: Mark) -> Marks {
        let mut m = self.0.clone();
        for p in r.iter() {
            m.insert(p.clone(), mark);
        }
        Marks(m)
    }

    fn inverse(&self, mark: Mark) -> BTreeSet<&Perm> {
        self.0.iter().filter(|(_, m)| **m == mark).map(|(p, _)| p).collect()
    }

    /// `R ∩ m⁻¹(deny) ≠ ∅`.
    pub fn blocks(&self, r: &PermissionSet) -> bool {
        let denied = self.inverse(Mark::Deny);
        r.iter().any(|p| denied.contains(p))
    }

    /// `R \ m⁻¹(grant)`.
    pub fn discharge(&self, r: &PermissionSet) -> PermissionSet {
        let granted = self.inverse(Mark::Grant);
        PermissionSet(r.iter().filter(|p| !granted.contains(p)).cloned().collect())
    }
}

impl fmt::Display for Marks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "∅");
        }
        write!(f, "[")?;
        for (i, (p, m)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            let tag = match m {
                Mark::Deny => "deny",
                Mark::Grant => "grant",
            };
            write!(f, "{p}:{tag}")?;
        }
        write!(f, "]")
    }
}

/// `OK(R, κ)` over the marks of a continuation, innermost frame first. The
/// last element is the marks of `mt`.
pub fn ok<'a>(r: &PermissionSet, chain: impl IntoIterator<Item = &'a Marks>) -> bool {
    let mut r = r.clone();
    for m in chain {
        if r.is_empty() {
            return true;
        }
        if m.blocks(&r) {
            return false;
        }
        r = m.discharge(&r);
    }
    true
}

/// One continuation frame as seen by the abstract predicates: its marks and
/// the address of the rest of the continuation (`None` for `mt`).
pub type FrameView = (Marks, Option<Addr>);

/// `OK*(R, σ̂, a)`: some path through the store from `a` satisfies `OK`.
pub fn ok_star(r: &PermissionSet, a: &Addr, frames: impl Fn(&Addr) -> Vec<FrameView>) -> bool {
    search(r, a, &frames, |r, m, next| {
        if r.is_empty() {
            return Step::Accept;
        }
        if m.blocks(r) {
            return Step::Reject;
        }
        match next {
            None => Step::Accept,
            Some(_) => Step::Continue(m.discharge(r)),
        }
    })
}

/// Some path through the store from `a` fails `OK`.
pub fn fails_star(r: &PermissionSet, a: &Addr, frames: impl Fn(&Addr) -> Vec<FrameView>) -> bool {
    search(r, a, &frames, |r, m, next| {
        if r.is_empty() {
            return Step::Reject;
        }
        if m.blocks(r) {
            return Step::Accept;
        }
        match next {
            None => Step::Reject,
            Some(_) => Step::Continue(m.discharge(r)),
        }
    })
}

enum Step {
    Accept,
    Reject,
    Continue(PermissionSet),
}

/// Reachability over `(R, a)` pairs; each pair is expanded once, which also
/// cuts cycles in the store.
fn search(
    r: &PermissionSet,
    a: &Addr,
    frames: &impl Fn(&Addr) -> Vec<FrameView>,
    judge: impl Fn(&PermissionSet, &Marks, Option<&Addr>) -> Step,
) -> bool {
    if r.is_empty() {
        // Both predicates decide the empty set without looking at a frame.
        return matches!(judge(r, &Marks::empty(), None), Step::Accept);
    }
    let mut seen: BTreeSet<(PermissionSet, Addr)> = BTreeSet::new();
    let mut work = vec![(r.clone(), a.clone())];
    while let Some((r, a)) = work.pop() {
        if !seen.insert((r.clone(), a.clone())) {
            continue;
        }
        for (m, next) in frames(&a) {
            match judge(&r, &m, next.as_ref()) {
                Step::Accept => return true,
                Step::Reject => {}
                Step::Continue(r2) => {
                    if r2.is_empty() {
                        if matches!(judge(&r2, &Marks::empty(), None), Step::Accept) {
                            return true;
                        }
                        continue;
                    }
                    work.push((r2, next.unwrap()));
                }
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perms(ps: &[&str]) -> PermissionSet {
        PermissionSet::new(ps.iter().copied())
    }

    fn grant(ps: &[&str]) -> Marks {
        Marks::empty().set(&perms(ps), Mark::Grant)
    }

    fn deny(ps: &[&str]) -> Marks {
        Marks::empty().set(&perms(ps), Mark::Deny)
    }

    #[test]
    fn empty_request_is_always_ok() {
        assert!(ok(&perms(&[]), [&deny(&["p"])]));
        assert!(ok_star(&perms(&[]), &Addr::Halt, |_| vec![(deny(&["p"]), None)]));
    }

    #[test]
    fn grant_over_mt_discharges() {
        let e = Marks::empty();
        assert!(ok(&perms(&["p"]), [&grant(&["p"]), &e]));
    }

    #[test]
    fn deny_blocks() {
        assert!(!ok(&perms(&["p"]), [&deny(&["p"])]));
        assert!(!ok_star(&perms(&["p"]), &Addr::Halt, |_| vec![(deny(&["p"]), None)]));
        assert!(fails_star(&perms(&["p"]), &Addr::Halt, |_| vec![(deny(&["p"]), None)]));
    }

    #[test]
    fn unmarked_mt_is_ok() {
        // mt only checks the deny condition.
        assert!(ok(&perms(&["p"]), [&Marks::empty()]));
    }

    #[test]
    fn existential_paths() {
        let a = Addr::Int(1);
        let frames = |x: &Addr| match x {
            Addr::Int(1) => vec![(grant(&["p"]), Some(Addr::Halt)), (deny(&["p"]), Some(Addr::Halt))],
            _ => vec![(Marks::empty(), None)],
        };
        assert!(ok_star(&perms(&["p"]), &a, frames));
        assert!(fails_star(&perms(&["p"]), &a, frames));
    }

    #[test]
    fn cyclic_stores_terminate() {
        let a = Addr::Int(1);
        let frames = |_: &Addr| vec![(Marks::empty(), Some(Addr::Int(1)))];
        assert!(!ok_star(&perms(&["p"]), &a, frames));
        assert!(!fails_star(&perms(&["p"]), &a, frames));
    }

    /// On singleton stores the abstract predicate agrees with the concrete one.
    #[test]
    fn abstract_agrees_on_chains() {
        let chains: Vec<Vec<Marks>> = vec![
            vec![Marks::empty()],
            vec![grant(&["p"]), deny(&["p"]), Marks::empty()],
            vec![deny(&["q"]), grant(&["p", "q"]), Marks::empty()],
            vec![Marks::empty(), Marks::empty(), deny(&["p"])],
            vec![grant(&["q"]), grant(&["p"]), deny(&["p", "q"])],
        ];
        for chain in &chains {
            for r in [perms(&["p"]), perms(&["q"]), perms(&["p", "q"]), perms(&[])] {
                let frames = |a: &Addr| {
                    let Addr::Int(i) = a else { unreachable!() };
                    let i = *i as usize;
                    let next = if i + 1 < chain.len() { Some(Addr::Int(i as u64 + 1)) } else { None };
                    vec![(chain[i].clone(), next)]
                };
                let concrete = ok(&r, chain.iter());
                assert_eq!(ok_star(&r, &Addr::Int(0), frames), concrete);
                assert_eq!(fails_star(&r, &Addr::Int(0), frames), !concrete);
            }
        }
    }
}
