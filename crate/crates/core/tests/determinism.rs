//! Chains must not depend on how many threads run the filters.

use mpm_core::model::{simulate_dataset, Lgss, Svm};
use mpm_core::sampler::{run_chain, ChainRecord, SamplerConfig, SamplerKind};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn trace(rec: &ChainRecord) -> Vec<(Vec<f64>, f64, bool)> {
    rec.rows
        .iter()
        .map(|r| (r.theta.clone(), r.loglik, r.accepted))
        .collect()
}

fn config(kind: SamplerKind) -> SamplerConfig {
    SamplerConfig {
        num_filters: 6,
        num_particles: 40,
        rho_u: 0.9,
        trim: 0.25,
        iterations: 40,
        warmup: 10,
        seed: 9,
        ..SamplerConfig::new(kind)
    }
}

#[test]
fn sv_chain_is_independent_of_thread_count() {
    let model = Svm::new(2, 2).unwrap();
    let data = simulate_dataset(&model, &[2.0, 1.81, 0.38, 0.01], 30, 4).unwrap();
    let cfg = config(SamplerKind::Mpm);
    let one = in_pool(1, || run_chain(&cfg, &model, &data, None).unwrap());
    let three = in_pool(3, || run_chain(&cfg, &model, &data, None).unwrap());
    assert_eq!(trace(&one), trace(&three));
}

#[test]
fn adpf_chain_is_independent_of_thread_count() {
    let model = Lgss::new(2).unwrap();
    let data = simulate_dataset(&model, &[0.4], 30, 5).unwrap();
    let cfg = config(SamplerKind::MpmAdpf);
    let one = in_pool(1, || run_chain(&cfg, &model, &data, None).unwrap());
    let four = in_pool(4, || run_chain(&cfg, &model, &data, None).unwrap());
    assert_eq!(trace(&one), trace(&four));
    assert!(one.rows.iter().all(|r| r.loglik.is_finite()));
}
