use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dcsmc::annealing::mixture_merge;
use dcsmc::distributed::{encode_population, PopulationEnvelope};
use dcsmc::models::{HierarchicalBinomial, IsingLattice, LatticeScheme, LatticeTree};
use dcsmc::particle::resample_indices;
use dcsmc::{dc_sir, dc_sir_subtree, DcConfig, ResampleScheme, SeedPath, TreeModel};

fn resampling(c: &mut Criterion) {
    let n = 4096;
    let lw: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect();
    let mut group = c.benchmark_group("resample");
    for scheme in [ResampleScheme::Multinomial, ResampleScheme::Residual, ResampleScheme::Systematic] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{scheme:?}")), &scheme, |b, &s| {
            let mut rng = SeedPath::new(1).rng();
            b.iter(|| resample_indices(black_box(&lw), n, s, &mut rng).unwrap());
        });
    }
    group.finish();
}

fn ising_runs(c: &mut Criterion) {
    let tree = LatticeTree::new(IsingLattice::square(8, 0.4407), LatticeScheme::Bisection).unwrap();
    let mut group = c.benchmark_group("ising8");
    group.sample_size(10);
    for (name, cfg) in [("dc-sir", DcConfig::dc_sir(256)), ("dc-ann", DcConfig::dc_ann(64)), ("dc-mix-ann", DcConfig::dc_mix_ann(64))] {
        group.bench_function(name, |b| b.iter(|| dc_sir(&tree, black_box(&cfg), 3).unwrap().log_z));
    }
    group.finish();
}

fn merging(c: &mut Criterion) {
    let tree = LatticeTree::new(IsingLattice::square(4, 0.4407), LatticeScheme::Bisection).unwrap();
    let root = tree.topology().root();
    let kids: Vec<_> = tree
        .topology()
        .children(root)
        .iter()
        .map(|&k| dc_sir_subtree(&tree, k, &DcConfig::dc_sir(256), 5).unwrap().population)
        .collect();
    let refs: Vec<_> = kids.iter().collect();
    c.bench_function("mixture_merge 4x4 root N=256", |b| {
        b.iter(|| mixture_merge(&tree, root, black_box(&refs), 1.0, 1e7, &SeedPath::new(9)).unwrap().log_mean_v)
    });
}

fn hierarchical(c: &mut Criterion) {
    let leaves: Vec<(Vec<String>, u64, u64)> = (0..64)
        .map(|i| (vec![format!("g{}", i / 16), format!("s{}", i / 4), format!("y{i}")], 10 + i % 7, 30 + i % 11))
        .collect();
    let model = HierarchicalBinomial::from_paths("root", &leaves).unwrap();
    c.bench_function("hier 64 leaves dc-sir N=1000", |b| b.iter(|| dc_sir(&model, &DcConfig::dc_sir(1000), 4).unwrap().log_z));
}

fn envelopes(c: &mut Criterion) {
    let tree = LatticeTree::new(IsingLattice::square(16, 0.4407), LatticeScheme::Bisection).unwrap();
    let out = dc_sir(&tree, &DcConfig::dc_sir(512), 6).unwrap();
    let root = tree.topology().root();
    c.bench_function("envelope round trip 16x16 N=512", |b| {
        b.iter(|| {
            let bytes = encode_population(&tree, root, black_box(&out.population), 6).to_bytes();
            PopulationEnvelope::from_bytes(&bytes).unwrap().n
        })
    });
}

criterion_group!(benches, resampling, ising_runs, merging, hierarchical, envelopes);
criterion_main!(benches);
