use proptest::prelude::*;

use dcsmc_cli::config::{ExperimentConfig, Method, ModelKind};

fn method() -> impl Strategy<Value = Method> {
    prop::sample::select(vec![
        Method::DcSir,
        Method::DcMix,
        Method::DcAnn,
        Method::DcMixAnn,
        Method::StdSmc,
        Method::Postorder,
        Method::Mh,
    ])
}

proptest! {
    #[test]
    fn parse_inverts_serialize(
        m in 1usize..64,
        beta in 0.01f64..2.0,
        lambda1 in 0.1f64..50.0,
        obs_sd in 0.001f64..1.0,
        method in method(),
        n in 1usize..100_000,
        replicates in 1usize..1000,
        seed in any::<u64>(),
        cess in 0.01f64..1.0,
        schedule in prop::collection::vec(0.001f64..1.0, 0..4),
        nodes in prop::collection::vec("[a-z]{1,6}(/[a-z0-9]{1,4}){0,2}", 0..3),
        roster in prop::collection::vec("[a-z]{1,8}:[0-9]{2,5}", 0..3),
        gsm in any::<bool>(),
    ) {
        let mut cfg = ExperimentConfig::defaults(if gsm { ModelKind::Gsm } else { ModelKind::Ising });
        cfg.model.m = m;
        cfg.model.beta = beta;
        cfg.model.lambda1 = lambda1;
        cfg.model.obs_sd = obs_sd;
        cfg.model.nodes = nodes;
        cfg.method.name = method;
        cfg.method.n = n;
        cfg.method.schedule = schedule;
        cfg.run.replicates = replicates;
        cfg.run.seed = seed;
        cfg.thresholds.cess = cess;
        cfg.distributed.roster = roster;
        let text = cfg.to_toml().unwrap();
        prop_assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
    }
}
