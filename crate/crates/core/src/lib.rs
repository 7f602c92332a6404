//! Concrete and abstract machines for a higher-order language with state,
//! control, laziness, exceptions and stack inspection, and the analyses
//! obtained by bounding their stores.

pub mod alpha;
pub mod cesk;
pub mod concrete;
pub mod config;
pub mod corpus;
pub mod emit;
pub mod engine;
pub mod facts;
pub mod gc;
pub mod lazy;
pub mod lockstep;
pub mod security;
pub mod store;
pub mod syntax;

use thiserror::Error;

pub use engine::{analyze_widened, explore, explore_limited, run, Graph, Machine, Outcome, System, Terminal, Trace, Widen};
pub use facts::{Event, FlowFacts};
pub use store::{Addr, Env, Policy, Store, Time};
pub use syntax::{parse, parse_with, Label, ParseError, PermissionSet, E};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MachineError {
    #[error("open term: free variables {0:?}")]
    OpenTerm(Vec<String>),
    #[error("unsupported form `{form}` for the {machine} machine")]
    Unsupported { form: String, machine: String },
}

/// Reject programs with free variables.
pub fn check_closed(e: &E) -> Result<(), MachineError> {
    if e.fv().is_empty() {
        Ok(())
    } else {
        Err(MachineError::OpenTerm(e.fv().iter().map(|x| x.to_string()).collect()))
    }
}
