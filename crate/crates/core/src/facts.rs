//! Flow facts gathered from reachable transitions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::syntax::Label;

/// Something a single transition observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Event {
    /// The λ labeled `lam` was applied at the application labeled `site`.
    Call { site: Label, lam: Label },
    /// A `throw` was handled by a `catch`.
    Handle { throw: Label, catch: Label },
    /// `callcc` reified the continuation of application `site`.
    Capture { callcc: Label, site: Label },
    /// A continuation captured at `site` was invoked.
    Escape { callcc: Label, site: Label },
    /// A `test` took its first (`true`) or second branch.
    Test { label: Label, enabled: bool },
    /// A thunk for the operand labeled `operand` was created.
    Delay { operand: Label },
    /// A thunk for the operand labeled `operand` was forced.
    Force { operand: Label },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Branches {
    pub enabled: bool,
    pub disabled: bool,
}

impl Branches {
    pub fn verdict(&self) -> &'static str {
        match (self.enabled, self.disabled) {
            (true, false) => "proves-enabled",
            (false, true) => "proves-disabled",
            (true, true) => "both",
            (false, false) => "unreached",
        }
    }
}

/// "What flows where": application sites to applied λs, plus the
/// feature-specific tables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowFacts {
    pub calls: BTreeMap<Label, BTreeSet<Label>>,
    pub handlers: BTreeMap<Label, BTreeSet<Label>>,
    /// callcc label → capture sites whose continuation may escape.
    pub escapes: BTreeMap<Label, BTreeSet<Label>>,
    /// callcc label → capture sites.
    pub captures: BTreeMap<Label, BTreeSet<Label>>,
    pub tests: BTreeMap<Label, Branches>,
    /// operand label → whether its thunk may be forced.
    pub thunks: BTreeMap<Label, bool>,
}

impl FlowFacts {
    pub fn record(&mut self, ev: &Event) {
        match *ev {
            Event::Call { site, lam } => {
                self.calls.entry(site).or_default().insert(lam);
            }
            Event::Handle { throw, catch } => {
                self.handlers.entry(throw).or_default().insert(catch);
            }
            Event::Capture { callcc, site } => {
                self.captures.entry(callcc).or_default().insert(site);
            }
            Event::Escape { callcc, site } => {
                self.escapes.entry(callcc).or_default().insert(site);
            }
            Event::Test { label, enabled } => {
                let b = self.tests.entry(label).or_default();
                if enabled {
                    b.enabled = true;
                } else {
                    b.disabled = true;
                }
            }
            Event::Delay { operand } => {
                self.thunks.entry(operand).or_insert(false);
            }
            Event::Force { operand } => {
                self.thunks.insert(operand, true);
            }
        }
    }

    pub fn extend<'a>(&mut self, evs: impl IntoIterator<Item = &'a Event>) {
        for ev in evs {
            self.record(ev);
        }
    }

    /// `(site, λ)` pairs.
    pub fn call_pairs(&self) -> BTreeSet<(Label, Label)> {
        self.calls.iter().flat_map(|(s, ls)| ls.iter().map(move |l| (*s, *l))).collect()
    }

    /// Operands whose thunks are provably never forced.
    pub fn never_forced(&self) -> Vec<Label> {
        self.thunks.iter().filter(|(_, f)| !**f).map(|(l, _)| *l).collect()
    }

    /// Every fact in `self` is also in `other`.
    pub fn is_subset_of(&self, other: &FlowFacts) -> bool {
        fn sub(a: &BTreeMap<Label, BTreeSet<Label>>, b: &BTreeMap<Label, BTreeSet<Label>>) -> bool {
            a.iter().all(|(k, v)| b.get(k).is_some_and(|w| v.is_subset(w)) || v.is_empty())
        }
        sub(&self.calls, &other.calls)
            && sub(&self.handlers, &other.handlers)
            && sub(&self.escapes, &other.escapes)
            && sub(&self.captures, &other.captures)
            && self.tests.iter().all(|(k, b)| {
                let o = other.tests.get(k).copied().unwrap_or_default();
                (!b.enabled || o.enabled) && (!b.disabled || o.disabled)
            })
            && self.thunks.iter().all(|(k, forced)| match other.thunks.get(k) {
                Some(o) => !*forced || *o,
                None => false,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_is_reflexive_and_detects_extra_calls() {
        let mut a = FlowFacts::default();
        a.record(&Event::Call { site: Label(0), lam: Label(1) });
        let mut b = a.clone();
        assert!(a.is_subset_of(&b));
        b.record(&Event::Call { site: Label(0), lam: Label(3) });
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
    }

    #[test]
    fn forcing_overrides_delay() {
        let mut f = FlowFacts::default();
        f.record(&Event::Delay { operand: Label(2) });
        assert_eq!(f.never_forced(), vec![Label(2)]);
        f.record(&Event::Force { operand: Label(2) });
        f.record(&Event::Delay { operand: Label(2) });
        assert!(f.never_forced().is_empty());
    }

    #[test]
    fn branch_verdicts() {
        assert_eq!(Branches { enabled: true, disabled: false }.verdict(), "proves-enabled");
        assert_eq!(Branches { enabled: true, disabled: true }.verdict(), "both");
    }
}
