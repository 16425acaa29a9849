//! Per-filter cost on the two reference models. Reports the fastest of
//! several batches, which is stable on a shared machine.

use std::time::Instant;

use mpm_core::filter::{filter_loglik, CrnShape, FilterCrn, FilterScratch, SortPayload};
use mpm_core::model::{simulate_dataset, DisturbanceModel, FilterTelemetry, Lgss, Svm};
use mpm_core::rng;

fn bench<M: DisturbanceModel>(label: &str, model: &M, theta: &[f64], t_len: usize, batch: usize) {
    let data = simulate_dataset(model, theta, t_len, 1).unwrap();
    let crn = FilterCrn::standard_normal(
        CrnShape::for_model(model, t_len, 100),
        &mut rng::stream(2, &[]),
    )
    .unwrap();
    let p = model.prepare(theta).unwrap();
    let mut sc = FilterScratch::default();
    let mut tel = FilterTelemetry::default();
    let mut best = f64::INFINITY;
    let mut acc = 0.0;
    for _ in 0..20 {
        let start = Instant::now();
        for _ in 0..batch {
            acc += filter_loglik(
                model,
                &p,
                &crn,
                None,
                &data,
                SortPayload::State,
                &mut sc,
                &mut tel,
            )
            .unwrap();
        }
        best = best.min(start.elapsed().as_secs_f64() / batch as f64);
    }
    println!("{label}: {:.3} ms per filter ({acc})", best * 1e3);
}

fn main() {
    // An optional argument restricts the run to labels starting with it.
    let only = std::env::args().nth(1).unwrap_or_default();
    let run = |label: &str| label.starts_with(&only);
    if run("sv") {
        bench(
            "sv d=5 T=100 N=100",
            &Svm::new(5, 3).unwrap(),
            &[2.0, 1.81, 0.38, 0.01],
            100,
            25,
        );
    }
    if run("lgss") {
        bench(
            "lgss d=1 T=50 N=100",
            &Lgss::new(1).unwrap(),
            &[0.4],
            50,
            250,
        );
    }
}
