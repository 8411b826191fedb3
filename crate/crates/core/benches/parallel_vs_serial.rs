use criterion::{criterion_group, criterion_main, Criterion};

use mfprod::demean;
use mfprod::dgp::{simulate, simulate_with, DgpConfig, DgpId};
use mfprod::par::Execution;
use mfprod::proposed::{default_grid, fit_block_ab, fit_block_c_with};

const MODES: [(&str, Execution); 2] = [
    ("serial", Execution::Serial),
    ("parallel", Execution::Parallel),
];

fn simulate_panel(c: &mut Criterion) {
    let cfg = DgpConfig::new(DgpId::Ar1, 500, 50, 1);
    let mut g = c.benchmark_group("simulate_500x50");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| simulate_with(&cfg, exec).unwrap()));
    }
    g.finish();
}

fn block_c_grid(c: &mut Criterion) {
    let p = simulate(&DgpConfig::new(DgpId::Ar1, 200, 20, 2)).unwrap().0;
    let cp = demean(&p).unwrap();
    let ab = fit_block_ab(&cp).unwrap();
    let grid = default_grid();
    let mut g = c.benchmark_group("block_c_grid_200x20");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| fit_block_c_with(&cp, &ab, &grid, 3, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, simulate_panel, block_c_grid);
criterion_main!(benches);
