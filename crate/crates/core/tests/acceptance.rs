//! Acceptance suite: one line per criterion, non-zero exit on any failure.
//!
//! Set `AAM_BLESS=1` to rewrite the state-count goldens instead of checking
//! them.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aam_core::alpha::check_soundness;
use aam_core::cesk::{self, CeskMachine, Control, Family, Storable};
use aam_core::concrete::Cesk;
use aam_core::corpus::{self, by_name, group, Group, PROGRAMS};
use aam_core::engine::{explore, run, Outcome};
use aam_core::gc::{collect, Collecting};
use aam_core::lazy::{Cell, Lk, LkStar, Variant};
use aam_core::lockstep::{is_functional, lazy_lockstep_check, lockstep_check};
use aam_core::syntax::{parse, ExprKind, ProgramSize};
use aam_core::{analyze_widened, Machine, Policy, Terminal, E};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use common::{family, goldens_path, machine, read_goldens};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lockstep_equivalence() -> Verdict {
    let start = Instant::now();
    let mut runs = 0;
    for p in group(Group::Pure) {
        let e = p.expr();
        ensure(is_functional(&e), || format!("{} is outside the CEK language", p.name))?;
        let reports = lockstep_check(&e, 1000).map_err(|err| err.to_string())?;
        ensure(reports.iter().any(|r| r.left == "CEK"), || format!("{}: CEK pair missing", p.name))?;
        for r in reports {
            ensure(r.ok(), || format!("{}: {} vs {} diverged: {:?}", p.name, r.left, r.right, r.divergence))?;
            runs += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{} programs, {runs} machine pairs, 0 divergences, {elapsed:.2?}", group(Group::Pure).count()))
}

fn lazy_lockstep() -> Verdict {
    for p in group(Group::Pure) {
        for r in lazy_lockstep_check(&p.expr(), 1000).map_err(|err| err.to_string())? {
            ensure(r.ok(), || format!("{}: {} vs {} diverged: {:?}", p.name, r.left, r.right, r.divergence))?;
        }
    }
    let e = by_name("k-omega").unwrap().expr();
    let ExprKind::App(_, omega) = e.kind() else { unreachable!() };
    let t = run(&Lk, Lk.inject(&e).unwrap(), 1000);
    ensure(t.outcome == Outcome::Terminal(Terminal::Final), || format!("LK ended with {:?}", t.outcome))?;
    let thunk_addrs: BTreeSet<_> = t
        .states
        .iter()
        .flat_map(|s| s.store.0.iter())
        .filter(|(_, cells)| cells.iter().any(|c| matches!(c, Cell::Thunk(x, _) if x == omega)))
        .map(|(a, _)| a.clone())
        .collect();
    ensure(!thunk_addrs.is_empty(), || "no thunk was built for Ω".into())?;
    let forced = t.states.iter().any(|s| thunk_addrs.iter().any(|a| matches!(s.store.get_one(a), Some(Cell::Computed(..)))));
    ensure(!forced, || "the Ω thunk was overwritten with a value".into())?;
    Ok(format!("{} programs agree; Ω thunk never forced in {} steps", group(Group::Pure).count(), t.steps()))
}

fn decidability() -> Verdict {
    let bless = std::env::var_os("AAM_BLESS").is_some();
    let goldens = if bless { Default::default() } else { read_goldens() };
    let mut table = String::from("# program\tk=0\tk=1\n");
    let mut total = 0;
    for p in PROGRAMS {
        let e = p.expr();
        let mut counts = [0; 2];
        for k in [0, 1] {
            let m = machine(p, Policy::abstract_k(k));
            let g = explore(&m, m.inject(&e).unwrap());
            counts[k] = g.states.len();
            total += g.states.len();
        }
        table.push_str(&format!("{}\t{}\t{}\n", p.name, counts[0], counts[1]));
        if !bless {
            let want = goldens.get(p.name).ok_or_else(|| format!("no golden for {}", p.name))?;
            ensure(*want == counts, || format!("{}: counts {counts:?}, golden {want:?}", p.name))?;
        }
    }
    if bless {
        std::fs::write(goldens_path(), table).map_err(|err| err.to_string())?;
        return Ok(format!("goldens rewritten ({total} states)"));
    }
    Ok(format!("{} programs × k ∈ {{0, 1}} finite, {total} states, goldens match", PROGRAMS.len()))
}

fn soundness() -> Verdict {
    let mut checks = 0;
    for p in PROGRAMS {
        let e = p.expr();
        for k in [0, 1] {
            let c = machine(p, Policy::CONCRETE_CTX);
            let a = machine(p, Policy::abstract_k(k));
            let r = check_soundness(&c, &a, &e, 500, k).map_err(|err| err.to_string())?;
            ensure(r.ok(), || format!("{} ({}, k={k}): {:?}", p.name, family(p.group).name(), r.violation))?;
            checks += 1;
            if p.group == Group::Pure {
                for v in [Variant::Baseline, Variant::Optimized, Variant::Postponed] {
                    let c = LkStar::new(v, Policy::CONCRETE_CTX);
                    let a = LkStar::new(v, Policy::abstract_k(k));
                    let r = check_soundness(&c, &a, &e, 500, k).map_err(|err| err.to_string())?;
                    ensure(r.ok(), || format!("{} (LK* {v:?}, k={k}): {:?}", p.name, r.violation))?;
                    checks += 1;
                }
            }
        }
    }
    Ok(format!("{checks} trace/abstraction pairs simulated, 0 violations"))
}

fn final_value(m: &CeskMachine, e: &E) -> (Outcome, Option<String>) {
    let t = run(m, m.inject(e).unwrap(), 1000);
    let v = match &t.last().control {
        Control::Expr(v) => Some(v.to_string()),
        Control::Kont(_) => None,
    };
    (t.outcome, v)
}

fn exceptions() -> Verdict {
    let caught = by_name("catch-throw").unwrap().expr();
    let ExprKind::Catch(body, _) = caught.kind() else { unreachable!() };
    let ExprKind::Throw(v) = body.kind() else { unreachable!() };
    let concrete = CeskMachine::new(Family::Ceshk, Policy::CONCRETE_CTX);
    let (outcome, value) = final_value(&concrete, &caught);
    ensure(outcome == Outcome::Terminal(Terminal::Final), || format!("concrete run ended with {outcome:?}"))?;
    ensure(value.as_deref() == Some(&*v.to_string()), || format!("concrete result {value:?}"))?;
    let rec = Cesk::new(Family::Ceshk);
    let t = run(&rec, rec.inject(&caught).unwrap(), 1000);
    ensure(matches!(&t.last().control, aam_core::concrete::Control::Expr(x) if x == v), || "recursive CESHK disagrees".into())?;

    let uncaught = by_name("uncaught").unwrap().expr();
    ensure(final_value(&concrete, &uncaught).0 == Outcome::Terminal(Terminal::Uncaught), || "concrete throw was caught".into())?;
    for k in [0, 1] {
        let m = CeskMachine::new(Family::Ceshk, Policy::abstract_k(k));
        let g = explore(&m, m.inject(&caught).unwrap());
        let covered = g.states.iter().zip(&g.terminal).any(|(s, t)| {
            t.contains(&Terminal::Final) && matches!(&s.control, Control::Expr(x) if x == v)
        });
        ensure(covered, || format!("k={k}: no final abstract state holds the thrown value"))?;
        ensure(!g.terminals().contains(&Terminal::Uncaught), || format!("k={k}: spurious uncaught"))?;
        let g = explore(&m, m.inject(&uncaught).unwrap());
        ensure(g.terminals() == BTreeSet::from([Terminal::Uncaught]), || format!("k={k}: {:?}", g.terminals()))?;
    }
    Ok(format!("caught throw yields {v}; uncaught throw is reported concretely and abstractly"))
}

fn test_label(e: &E) -> aam_core::Label {
    e.subexprs().into_iter().find(|s| matches!(s.kind(), ExprKind::Test(..))).expect("a test form").label()
}

/// Every continuation address holds at most one continuation.
fn precise(g: &aam_core::Graph<cesk::State>) -> bool {
    g.states.iter().all(|s| {
        s.store.0.values().all(|set| set.iter().filter(|x| matches!(x, Storable::Kont(_))).count() <= 1)
    })
}

fn stack_inspection() -> Verdict {
    let universe = corpus::universe();
    let concrete = CeskMachine::new(Family::Cm, Policy::CONCRETE_CTX).with_universe(universe.clone());
    for (name, branch, verdict) in
        [("grant-test", "(lambda (a) a)", "proves-enabled"), ("frame-test", "(lambda (b) b)", "proves-disabled")]
    {
        let e = by_name(name).unwrap().expr();
        let (outcome, value) = final_value(&concrete, &e);
        ensure(outcome == Outcome::Terminal(Terminal::Final) && value.as_deref() == Some(branch), || {
            format!("{name}: concrete {outcome:?} {value:?}")
        })?;
        for k in [0, 1] {
            let m = CeskMachine::new(Family::Cm, Policy::abstract_k(k)).with_universe(universe.clone());
            let g = explore(&m, m.inject(&e).unwrap());
            ensure(precise(&g), || format!("{name}, k={k}: continuation store is not precise"))?;
            let got = g.facts.tests.get(&test_label(&e)).map(|b| b.verdict()).unwrap_or("unreached");
            ensure(got == verdict, || format!("{name}, k={k}: {got}"))?;
        }
    }
    let e = by_name("mixed-callers").unwrap().expr();
    let t = run(&concrete, concrete.inject(&e).unwrap(), 1000);
    let l = test_label(&e);
    let seen: BTreeSet<_> = t
        .events
        .iter()
        .filter_map(|ev| match ev {
            aam_core::Event::Test { label, enabled } if *label == l => Some(*enabled),
            _ => None,
        })
        .collect();
    ensure(seen.len() == 2, || format!("mixed-callers: concrete run takes {seen:?}"))?;
    for k in [0, 1] {
        let m = CeskMachine::new(Family::Cm, Policy::abstract_k(k)).with_universe(universe.clone());
        let g = explore(&m, m.inject(&e).unwrap());
        let got = g.facts.tests.get(&l).map(|b| b.verdict()).unwrap_or("unreached");
        ensure(got == "both", || format!("mixed-callers, k={k}: {got}"))?;
    }
    Ok("grant → enabled, frame → disabled (precise stores); mixed callers → both".into())
}

fn gc_precision() -> Verdict {
    let mut strict = Vec::new();
    for p in PROGRAMS {
        let e = p.expr();
        let m = machine(p, Policy::abstract_k(0));
        let plain = explore(&m, m.inject(&e).unwrap());
        let gc = Collecting(m.clone());
        let collected = explore(&gc, gc.inject(&e).unwrap());
        ensure(collected.facts.is_subset_of(&plain.facts), || format!("{}: GC facts not a subset", p.name))?;
        if collected.facts != plain.facts {
            strict.push(p.name);
        }
    }
    ensure(strict.contains(&"dead-binding"), || format!("no strict improvement on dead-binding ({strict:?})"))?;
    Ok(format!("subset on {} programs; strictly smaller on {strict:?}", PROGRAMS.len()))
}

fn widening_bound() -> Verdict {
    let mut worst = 0.0f64;
    for p in PROGRAMS {
        let e = p.expr();
        let m = machine(p, Policy::abstract_k(0));
        let sys = analyze_widened(&m, m.inject(&e).unwrap());
        let bound = ProgramSize::of(&e).monovariant_bound();
        ensure(sys.iterations as u128 <= bound, || format!("{}: {} iterations > bound {bound}", p.name, sys.iterations))?;
        worst = worst.max(sys.iterations as f64 / bound as f64);
    }
    let id = parse("(lambda (x) x)").unwrap();
    let m = CeskMachine::new(Family::Cesk, Policy::abstract_k(0));
    let n = analyze_widened(&m, m.inject(&id).unwrap()).iterations;
    ensure(n == 2, || format!("identity took {n} iterations"))?;
    Ok(format!("all within bound (max ratio {worst:.4}); identity takes 2 iterations"))
}

fn widening_soundness() -> Verdict {
    for p in PROGRAMS {
        let e = p.expr();
        for k in [0, 1] {
            let m = machine(p, Policy::abstract_k(k));
            let g = explore(&m, m.inject(&e).unwrap());
            let sys = analyze_widened(&m, m.inject(&e).unwrap());
            ensure(g.facts.is_subset_of(&sys.facts), || format!("{}, k={k}: widened facts lose information", p.name))?;
            ensure(g.terminals().is_subset(&sys.terminal), || format!("{}, k={k}: widened terminals lose kinds", p.name))?;
        }
    }
    Ok(format!("{} programs × k ∈ {{0, 1}}: widened ⊇ per-state", PROGRAMS.len()))
}

/// A random closed term over the extended language.
fn random_term(rng: &mut StdRng, depth: u32, scope: &mut Vec<String>, fresh: &mut u32) -> String {
    let leaf = depth == 0 || rng.gen_ratio(1, 4);
    let choice = if leaf { rng.gen_range(0..3) } else { rng.gen_range(0..8) };
    match choice {
        0 | 1 if !scope.is_empty() => scope[rng.gen_range(0..scope.len())].clone(),
        0 | 1 | 3 => {
            *fresh += 1;
            let x = format!("v{fresh}");
            scope.push(x.clone());
            let body = random_term(rng, depth.saturating_sub(1), scope, fresh);
            scope.pop();
            format!("(lambda ({x}) {body})")
        }
        2 => "#f".into(),
        4 | 5 => {
            let f = random_term(rng, depth - 1, scope, fresh);
            let a = random_term(rng, depth - 1, scope, fresh);
            format!("({f} {a})")
        }
        6 => {
            let c = random_term(rng, depth - 1, scope, fresh);
            let t = random_term(rng, depth - 1, scope, fresh);
            let f = random_term(rng, depth - 1, scope, fresh);
            format!("(if {c} {t} {f})")
        }
        _ if !scope.is_empty() => {
            let x = scope[rng.gen_range(0..scope.len())].clone();
            format!("(set! {x} {})", random_term(rng, depth - 1, scope, fresh))
        }
        _ => "(callcc (lambda (k) k))".into(),
    }
}

fn gc_algebra() -> Verdict {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let m = CeskMachine::new(Family::Cesk, Policy::CONCRETE_CTX);
    let mut checked = 0;
    let mut stepped = 0;
    while checked < 1000 {
        let src = random_term(&mut rng, 5, &mut Vec::new(), &mut 0);
        let e = parse(&src).map_err(|err| format!("{src}: {err}"))?;
        let trace = run(&m, m.inject(&e).unwrap(), 60);
        if trace.states.len() < 3 {
            continue;
        }
        let steps = rng.gen_range(0..trace.states.len());
        let s = trace.states[steps].clone();
        let c = collect(&s);
        ensure(collect(&c) == c, || format!("collect is not idempotent on {src}"))?;
        ensure(c.store.0.keys().all(|a| s.store.contains(a)), || format!("collect grew the store on {src}"))?;
        let direct = m.transitions(&s);
        let after = m.transitions(&c);
        ensure(direct.terminal == after.terminal, || format!("collection changed termination on {src}"))?;
        let lhs: Vec<_> = direct.next.iter().map(collect).collect();
        let rhs: Vec<_> = after.next.iter().map(collect).collect();
        ensure(lhs == rhs, || format!("step and collect do not commute on {src} after {steps} steps"))?;
        stepped += usize::from(!direct.next.is_empty());
        checked += 1;
    }
    Ok(format!("{checked} random states ({stepped} with a successor): idempotent, commuting"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("lock-step equivalence of strict machines", lockstep_equivalence),
        ("lock-step equivalence of by-need machines", lazy_lockstep),
        ("finite abstract state spaces", decidability),
        ("stepwise soundness of abstractions", soundness),
        ("exception semantics", exceptions),
        ("stack inspection", stack_inspection),
        ("abstract GC precision", gc_precision),
        ("global-store iteration bound", widening_bound),
        ("global-store soundness", widening_soundness),
        ("GC algebra on random states", gc_algebra),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        match verdict {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{took:.2?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why} [{took:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
