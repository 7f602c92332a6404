use aam_core::cesk::{CeskMachine, Family};
use aam_core::corpus::by_name;
use aam_core::gc::Collecting;
use aam_core::lazy::{LkStar, Variant};
use aam_core::lockstep::lockstep_check;
use aam_core::{analyze_widened, explore, run, Machine, Policy};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const PROGRAMS: [&str; 4] = ["church-two-two", "church-exp", "z-loop", "dead-binding"];

fn concrete_runs(c: &mut Criterion) {
    let mut g = c.benchmark_group("concrete");
    for name in PROGRAMS {
        let e = by_name(name).unwrap().expr();
        let m = CeskMachine::new(Family::Cesk, Policy::CONCRETE_CTX);
        g.bench_with_input(BenchmarkId::new("cesk-star-t", name), &e, |b, e| {
            b.iter(|| run(&m, m.inject(e).unwrap(), 2000).steps())
        });
        g.bench_with_input(BenchmarkId::new("lockstep", name), &e, |b, e| b.iter(|| lockstep_check(e, 500).unwrap().len()));
    }
    g.finish();
}

fn abstract_exploration(c: &mut Criterion) {
    let mut g = c.benchmark_group("abstract");
    g.sample_size(20);
    for name in PROGRAMS {
        let e = by_name(name).unwrap().expr();
        for k in [0, 1] {
            let m = CeskMachine::new(Family::Cesk, Policy::abstract_k(k));
            g.bench_with_input(BenchmarkId::new(format!("k{k}"), name), &e, |b, e| {
                b.iter(|| explore(&m, m.inject(e).unwrap()).states.len())
            });
            let gc = Collecting(m.clone());
            g.bench_with_input(BenchmarkId::new(format!("k{k}-gc"), name), &e, |b, e| {
                b.iter(|| explore(&gc, gc.inject(e).unwrap()).states.len())
            });
            g.bench_with_input(BenchmarkId::new(format!("k{k}-global-store"), name), &e, |b, e| {
                b.iter(|| analyze_widened(&m, m.inject(e).unwrap()).iterations)
            });
        }
        let lazy = LkStar::new(Variant::Optimized, Policy::abstract_k(0));
        g.bench_with_input(BenchmarkId::new("lk-star-k0", name), &e, |b, e| {
            b.iter(|| analyze_widened(&lazy, lazy.inject(e).unwrap()).iterations)
        });
    }
    g.finish();
}

criterion_group!(benches, concrete_runs, abstract_exploration);
criterion_main!(benches);
