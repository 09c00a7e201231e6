use dcsmc::distributed::{
    assign_subtrees, decode_population, encode_population, run_distributed, PopulationEnvelope, TransportKind, WireModel,
};
use dcsmc::models::{HierarchicalBinomial, IsingLattice, LatticeScheme, LatticeTree};
use dcsmc::{dc_sir, DcConfig, DcError, SeedPath, TreeModel};
use proptest::prelude::*;

fn hier_model() -> HierarchicalBinomial {
    let leaf = |path: &[&str], m, t| (path.iter().map(|s| s.to_string()).collect::<Vec<_>>(), m, t);
    HierarchicalBinomial::from_paths(
        "all",
        &[
            leaf(&["a", "a1"], 3, 10),
            leaf(&["a", "a2"], 5, 9),
            leaf(&["a", "a3"], 1, 4),
            leaf(&["b", "b1"], 7, 12),
            leaf(&["b", "b2"], 2, 2),
            leaf(&["c", "c1"], 0, 6),
        ],
    )
    .unwrap()
}

fn ising8() -> LatticeTree<IsingLattice> {
    LatticeTree::new(IsingLattice::square(8, 0.44), LatticeScheme::Bisection).unwrap()
}

fn check_matches_serial<M: WireModel>(model: &M, cfg: &DcConfig, seed: u64)
where
    M::State: PartialEq + std::fmt::Debug,
{
    let serial = dc_sir(model, cfg, seed).unwrap();
    for workers in [1, 2, 4] {
        let assignment = assign_subtrees(model.topology(), workers);
        for transport in [TransportKind::InProcess, TransportKind::Socket] {
            let dist = run_distributed(model, cfg, &assignment, transport, seed).unwrap();
            assert_eq!(dist.output.log_z.to_bits(), serial.log_z.to_bits(), "{workers} workers over {transport:?}");
            assert_eq!(dist.output.population, serial.population);
            assert_eq!(dist.output.reports, serial.reports);
            let bound = assignment.edges_above_cut(model.topology()) * cfg.n;
            assert!(dist.transfer.states <= bound, "{} states shipped, bound {bound}", dist.transfer.states);
            if workers == 1 {
                assert_eq!(dist.transfer.envelopes, 0);
            }
        }
    }
}

#[test]
fn ising_distributed_run_equals_serial_run() {
    check_matches_serial(&ising8(), &DcConfig::dc_sir(64), 11);
}

#[test]
fn ising_tempered_mixture_distributed_run_equals_serial_run() {
    check_matches_serial(&ising8(), &DcConfig::dc_mix_ann(16), 12);
}

#[test]
fn hierarchical_distributed_run_equals_serial_run() {
    check_matches_serial(&hier_model(), &DcConfig::dc_sir(128), 13);
}

#[test]
fn four_workers_on_the_eight_by_eight_lattice_ship_at_most_six_populations() {
    let model = ising8();
    let n = 32;
    let cfg = DcConfig::dc_sir(n);
    let assignment = assign_subtrees(model.topology(), 4);
    assert_eq!(assignment.cut_depth, 2);
    assert_eq!(assignment.edges_above_cut(model.topology()), 6);
    let dist = run_distributed(&model, &cfg, &assignment, TransportKind::InProcess, 4).unwrap();
    assert!(dist.transfer.states <= 6 * n);
    assert_eq!(dist.output.log_z.to_bits(), dc_sir(&model, &cfg, 4).unwrap().log_z.to_bits());
}

#[test]
fn cut_depth_on_the_full_size_lattice() {
    let model = LatticeTree::new(IsingLattice::square(64, 0.44), LatticeScheme::Bisection).unwrap();
    let topo = model.topology();
    assert_eq!(assign_subtrees(topo, 1).cut_depth, 0);
    let a = assign_subtrees(topo, 32);
    assert_eq!(a.cut_depth, 5);
    // Everything below a cut vertex stays with that vertex's worker.
    for v in topo.nodes_at_depth(5) {
        assert!(topo.subtree(v).into_iter().all(|u| a.owner(u) == a.owner(v)));
    }
    let mut cut_owners: Vec<usize> = topo.nodes_at_depth(5).into_iter().map(|v| a.owner(v)).collect();
    cut_owners.sort_unstable();
    assert_eq!(cut_owners, (0..32).collect::<Vec<_>>());
}

#[test]
fn root_population_round_trips_through_bytes() {
    let model = ising8();
    let out = dc_sir(&model, &DcConfig::dc_sir(16), 5).unwrap();
    let root = model.topology().root();
    let env = encode_population(&model, root, &out.population, 5);
    // One signed byte per site plus one f64 weight per particle.
    assert_eq!(env.state_bytes.len(), 16 * 64);
    let bytes = env.to_bytes();
    assert_eq!(bytes.len(), env.encoded_len());
    let back = PopulationEnvelope::from_bytes(&bytes).unwrap();
    assert_eq!(back, env);
    assert_eq!(decode_population(&model, &back).unwrap(), out.population);
}

#[test]
fn hierarchical_population_round_trips() {
    let model = hier_model();
    let out = dc_sir(&model, &DcConfig::dc_sir(8), 6).unwrap();
    let root = model.topology().root();
    let bytes = encode_population(&model, root, &out.population, 6).to_bytes();
    let back = decode_population(&model, &PopulationEnvelope::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back, out.population);
}

#[test]
fn envelope_for_another_model_is_rejected() {
    let ising = ising8();
    let out = dc_sir(&ising, &DcConfig::dc_sir(4), 1).unwrap();
    let env = encode_population(&ising, ising.topology().root(), &out.population, 1);
    assert!(matches!(decode_population(&hier_model(), &env), Err(DcError::UnknownModelTag(_))));
}

fn sample_envelope() -> Vec<u8> {
    let model = ising8();
    let out = dc_sir(&model, &DcConfig::dc_sir(4), 2).unwrap();
    encode_population(&model, model.topology().root(), &out.population, 2).to_bytes()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_corrupted_byte_fails_the_checksum(pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let mut bytes = sample_envelope();
        let i = pos.index(bytes.len());
        bytes[i] ^= flip;
        prop_assert!(matches!(PopulationEnvelope::from_bytes(&bytes), Err(DcError::ChecksumMismatch)));
    }

    #[test]
    fn truncated_envelopes_never_decode(cut in any::<prop::sample::Index>()) {
        let bytes = sample_envelope();
        let keep = cut.index(bytes.len());
        prop_assert!(PopulationEnvelope::from_bytes(&bytes[..keep]).is_err());
    }

    #[test]
    fn random_envelopes_round_trip(
        node in 0usize..1000,
        master in any::<u64>(),
        path in prop::collection::vec(any::<u32>(), 0..6),
        stage in any::<u64>(),
        log_z in -1e6f64..1e6,
        weights in prop::collection::vec(prop_oneof![Just(f64::NEG_INFINITY), -50.0f64..50.0], 1..20),
        state_bytes in prop::collection::vec(any::<u8>(), 0..200),
    ) {
        let env = PopulationEnvelope {
            model_tag: 1,
            node,
            n: weights.len(),
            seed: SeedPath { master_seed: master, path, stage },
            log_z_hat: log_z,
            log_weights: weights,
            state_bytes,
        };
        let bytes = env.to_bytes();
        prop_assert_eq!(bytes.len(), env.encoded_len());
        prop_assert_eq!(PopulationEnvelope::from_bytes(&bytes).unwrap(), env);
    }
}
