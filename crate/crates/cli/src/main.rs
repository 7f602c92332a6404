//! `aam`: run concrete machines, derive abstract analyses from them, and
//! check the correspondences between machines.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aam_core::alpha::{check_soundness, Abstraction};
use aam_core::cesk::{CeskMachine, Family};
use aam_core::concrete::{Cek, Cesk};
use aam_core::config::{AnalysisConfig, Format, MachineKind, Settings, Widening};
use aam_core::emit::GraphReport;
use aam_core::engine::{explore_limited, Outcome, Widen};
use aam_core::gc::{Collecting, Heap};
use aam_core::lazy::{Lk, LkStar, Variant};
use aam_core::lockstep::{family_of, lazy_lockstep_check, lockstep_check, LockstepReport};
use aam_core::store::IntAlloc;
use aam_core::syntax::mentioned_permissions;
use aam_core::{analyze_widened, explore, parse, parse_with, run, Machine, PermissionSet, Policy, Terminal, E};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aam", version, about = "Abstract machines and the analyses derived from them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a concrete machine and print its trace.
    Run(Opts),
    /// Explore the abstract state space and report flows.
    Analyze(Opts),
    /// Check stepwise simulation by the abstraction, or machine agreement.
    Check {
        #[command(flatten)]
        opts: Opts,
        /// Compare the concrete machines step by step instead.
        #[arg(long)]
        lockstep: bool,
    },
}

#[derive(Args)]
struct Opts {
    /// cek, cesk, cesk-star, cesk-star-t, lk, lk-star, extended, ceshk or cm.
    #[arg(long)]
    machine: Option<MachineKind>,
    /// Context depth of the abstract allocator.
    #[arg(long)]
    k: Option<usize>,
    /// Collect unreachable addresses after every step.
    #[arg(long)]
    gc: bool,
    /// `global-store` shares one store across all states.
    #[arg(long)]
    widen: Option<Widening>,
    /// Step bound for concrete runs (default from AAM_FUEL, else 10000).
    #[arg(long)]
    fuel: Option<usize>,
    /// Comma-separated permission universe.
    #[arg(long)]
    permissions: Option<String>,
    /// baseline, optimized or postponed (lazy machines).
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// dot or json; inferred from the `--out` extension when omitted.
    #[arg(long)]
    format: Option<Format>,
    /// `key = value` settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Program source.
    file: PathBuf,
}

/// Errors that map to exit status 2.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl From<anyhow::Error> for Usage {
    fn from(e: anyhow::Error) -> Self {
        Usage(e)
    }
}

impl Opts {
    fn flags(&self) -> Settings {
        Settings {
            machine: self.machine,
            k: self.k,
            gc: self.gc.then_some(true),
            widen: self.widen,
            fuel: self.fuel,
            permissions: self.permissions.as_deref().map(aam_core::config::parse_permissions),
            variant: self.variant,
            out: self.out.clone(),
            format: self.format,
        }
    }

    fn resolve(&self) -> Result<(AnalysisConfig, E, PermissionSet), Usage> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Settings::parse(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => Settings::default(),
        };
        let env_fuel = std::env::var("AAM_FUEL").ok();
        let cfg = AnalysisConfig::resolve(file, self.flags(), env_fuel.as_deref()).map_err(anyhow::Error::from)?;
        let src = std::fs::read_to_string(&self.file).with_context(|| format!("reading {}", self.file.display()))?;
        let e = match &cfg.permissions {
            Some(u) => parse_with(&src, Some(u)),
            None => parse(&src),
        }
        .with_context(|| format!("parsing {}", self.file.display()))?;
        aam_core::check_closed(&e).map_err(anyhow::Error::from)?;
        let universe = cfg.permissions.clone().unwrap_or_else(|| mentioned_permissions(&e));
        Ok((cfg, e, universe))
    }
}

fn untimed() -> Policy {
    Policy::Int { timed: false, alloc: IntAlloc::Fresh }
}

/// The family a machine name selects for program `e`.
fn family(kind: MachineKind, e: &E) -> Family {
    match kind {
        MachineKind::Extended => Family::Cesk,
        MachineKind::Ceshk => Family::Ceshk,
        MachineKind::Cm => Family::Cm,
        _ => family_of(e),
    }
}

fn star(kind: MachineKind, e: &E, policy: Policy, universe: &PermissionSet) -> CeskMachine {
    CeskMachine::new(family(kind, e), policy).with_universe(universe.clone())
}

fn print_trace<M: Machine>(m: &M, e: &E, fuel: usize) -> anyhow::Result<ExitCode> {
    let t = run(m, m.inject(e)?, fuel);
    for (i, s) in t.states.iter().enumerate() {
        println!("{i:>5}  {}", m.render(s));
    }
    match t.outcome {
        Outcome::Terminal(term) => {
            println!("outcome: {term:?} after {} steps", t.steps());
            Ok(status(term.is_error()))
        }
        Outcome::FuelExhausted => {
            println!("outcome: fuel exhausted after {} steps", t.steps());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn status(error: bool) -> ExitCode {
    if error {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn run_cmd(cfg: &AnalysisConfig, e: &E, universe: &PermissionSet) -> anyhow::Result<ExitCode> {
    let kind = cfg.machine;
    match kind {
        MachineKind::Cek => print_trace(&Cek, e, cfg.fuel),
        MachineKind::Cesk => print_trace(&Cesk::new(family_of(e)).with_universe(universe.clone()), e, cfg.fuel),
        MachineKind::CeskStarT => print_trace(&star(kind, e, Policy::CONCRETE_CTX, universe), e, cfg.fuel),
        MachineKind::Lk => print_trace(&Lk, e, cfg.fuel),
        MachineKind::LkStar => print_trace(&LkStar::new(cfg.variant, untimed()), e, cfg.fuel),
        _ => print_trace(&star(kind, e, untimed(), universe), e, cfg.fuel),
    }
}

fn graph_report<M>(name: &str, m: M, cfg: &AnalysisConfig, e: &E) -> anyhow::Result<GraphReport>
where
    M: Widen,
    M::State: Heap,
{
    let report = match (cfg.widen, cfg.gc) {
        (Widening::GlobalStore, _) => GraphReport::from_system(name, &m, &analyze_widened(&m, m.inject(e)?)),
        (Widening::None, true) => {
            let m = Collecting(m);
            GraphReport::from_graph(name, &m, &explore(&m, m.inject(e)?))
        }
        (Widening::None, false) => GraphReport::from_graph(name, &m, &explore(&m, m.inject(e)?)),
    };
    Ok(report)
}

/// Machines without an abstract counterpart are explored concretely, up to
/// the fuel bound.
fn concrete_report<M: Machine>(name: &str, m: &M, cfg: &AnalysisConfig, e: &E) -> anyhow::Result<GraphReport> {
    let g = explore_limited(m, m.inject(e)?, cfg.fuel.saturating_add(1))?;
    Ok(GraphReport::from_graph(name, m, &g))
}

fn analyze_cmd(cfg: &AnalysisConfig, e: &E, universe: &PermissionSet) -> anyhow::Result<ExitCode> {
    let kind = cfg.machine;
    let policy = Policy::abstract_k(cfg.k);
    let report = match kind {
        MachineKind::Cek => concrete_report("CEK", &Cek, cfg, e)?,
        MachineKind::Lk => concrete_report("LK", &Lk, cfg, e)?,
        MachineKind::LkStar => graph_report("LK*", LkStar::new(cfg.variant, policy), cfg, e)?,
        _ => {
            let m = star(kind, e, policy, universe);
            graph_report(family(kind, e).name(), m, cfg, e)?
        }
    };
    let format = cfg.format.unwrap_or_else(|| match cfg.out.as_deref().and_then(Path::extension) {
        Some(ext) if ext == "json" => Format::Json,
        _ => Format::Dot,
    });
    let rendered = match format {
        Format::Dot => report.to_dot(),
        Format::Json => report.to_json(),
    };
    match (&cfg.out, cfg.format) {
        (Some(path), _) => {
            std::fs::write(path, rendered).with_context(|| format!("writing {}", path.display()))?;
            print_summary(&report);
        }
        (None, Some(_)) => print!("{rendered}"),
        (None, None) => print_summary(&report),
    }
    Ok(status(report.terminal_kinds().iter().any(|t| t.is_error())))
}

fn print_summary(r: &GraphReport) {
    println!("machine: {}", r.machine);
    println!("states: {}  edges: {}", r.states.len(), r.edges.len());
    if let Some(n) = r.iterations {
        println!("iterations: {n}  global store: {}", r.global_store.unwrap_or(0));
    }
    let kinds: Vec<String> = r.terminal_kinds().iter().map(|t| format!("{t:?}")).collect();
    println!("terminals: {}", if kinds.is_empty() { "none".to_string() } else { kinds.join(", ") });
    for (app, lams) in &r.flows {
        let lams: Vec<String> = lams.iter().map(|l| format!("ℓ{l}")).collect();
        println!("  ℓ{app} ← {{{}}}", lams.join(", "));
    }
}

fn print_lockstep(reports: &[LockstepReport]) -> bool {
    let mut ok = true;
    for r in reports {
        match &r.divergence {
            None => {
                let end = r.outcome.map_or("fuel exhausted".to_string(), |t: Terminal| format!("{t:?}"));
                println!("{} vs {}: agree for {} steps ({end})", r.left, r.right, r.steps);
            }
            Some(d) => {
                ok = false;
                println!("{} vs {}: diverge at step {}: {}", r.left, r.right, d.step, d.reason);
                println!("  left:  {}", d.left);
                println!("  right: {}", d.right);
            }
        }
    }
    ok
}

fn soundness<M>(concrete: &M, abs: &M, cfg: &AnalysisConfig, e: &E) -> anyhow::Result<ExitCode>
where
    M: Machine,
    M::State: Abstraction,
{
    let r = check_soundness(concrete, abs, e, cfg.fuel, cfg.k)?;
    match &r.violation {
        None => {
            println!("simulated {} concrete steps with {} abstract states (k = {})", r.concrete_steps, r.abstract_states, cfg.k);
            Ok(ExitCode::SUCCESS)
        }
        Some(v) => {
            println!("violation at step {}: {}", v.step, v.reason);
            println!("  {}", v.concrete);
            Ok(ExitCode::FAILURE)
        }
    }
}

fn check_cmd(cfg: &AnalysisConfig, e: &E, universe: &PermissionSet, lockstep: bool) -> anyhow::Result<ExitCode> {
    let kind = cfg.machine;
    if lockstep {
        let reports = if kind.is_lazy() { lazy_lockstep_check(e, cfg.fuel)? } else { lockstep_check(e, cfg.fuel)? };
        return Ok(status(!print_lockstep(&reports)));
    }
    match kind {
        MachineKind::Cek | MachineKind::Lk => Err(anyhow!("the {kind} machine has no abstraction to check; use --lockstep")),
        MachineKind::LkStar => soundness(
            &LkStar::new(cfg.variant, Policy::CONCRETE_CTX),
            &LkStar::new(cfg.variant, Policy::abstract_k(cfg.k)),
            cfg,
            e,
        ),
        _ => soundness(
            &star(kind, e, Policy::CONCRETE_CTX, universe),
            &star(kind, e, Policy::abstract_k(cfg.k), universe),
            cfg,
            e,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let (opts, lockstep) = match &cli.command {
        Command::Run(o) | Command::Analyze(o) => (o, false),
        Command::Check { opts, lockstep } => (opts, *lockstep),
    };
    let (cfg, e, universe) = match opts.resolve() {
        Ok(r) => r,
        Err(Usage(err)) => {
            eprintln!("aam: {err:#}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Run(_) => run_cmd(&cfg, &e, &universe),
        Command::Analyze(_) => analyze_cmd(&cfg, &e, &universe),
        Command::Check { .. } => check_cmd(&cfg, &e, &universe, lockstep),
    };
    result.unwrap_or_else(|err| {
        eprintln!("aam: {err:#}");
        ExitCode::from(2)
    })
}
