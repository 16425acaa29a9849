use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crn::{crn_init, refresh_into, select_block};
use crate::error::{Error, Result};
use crate::estimator::{evaluate_filters, trimmed_mean_loglik};
use crate::filter::{filter_loglik, AdpfSchedule, CrnShape, FilterCrn, FilterScratch, SortPayload};
use crate::model::{build_lgss_a, Dataset, DisturbanceModel, FilterTelemetry};
use crate::rng::{self, streams};
use crate::sort::{euclidean_sort, greedy_sort};
use crate::stats;

/// Grid and replication settings of a log-likelihood variance study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSetup {
    /// `(N, S)` pairs.
    pub grid: Vec<(usize, usize)>,
    pub trims: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub sort_payload: SortPayload,
    /// Proposal for every filter; bootstrap when absent.
    #[serde(default)]
    pub schedule: Option<AdpfSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCell {
    pub n: usize,
    pub s: usize,
    pub trim: f64,
    /// Sample variance of the finite combined estimates.
    pub variance: f64,
    pub mean: f64,
    /// Replications whose combined estimate was `-inf`.
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceTable {
    pub theta: Vec<f64>,
    pub replications: usize,
    pub cells: Vec<VarianceCell>,
    /// One filter per replication (`S = 1`, no trimming) for each `N` in the grid.
    pub single_filter: Vec<VarianceCell>,
    pub telemetry: FilterTelemetry,
}

impl VarianceTable {
    pub fn cell(&self, n: usize, s: usize, trim: f64) -> Option<&VarianceCell> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.s == s && c.trim == trim)
    }
}

fn summarise(n: usize, s: usize, trim: f64, values: &[f64]) -> VarianceCell {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    VarianceCell {
        n,
        s,
        trim,
        variance: if finite.len() > 1 {
            stats::variance(&finite)
        } else {
            f64::NAN
        },
        mean: if finite.is_empty() {
            f64::NAN
        } else {
            stats::mean(&finite)
        },
        degenerate: values.len() - finite.len(),
    }
}

/// Variance of the combined log-likelihood estimate over independent CRN draws.
///
/// Filter `k` of replication `r` at `N` particles always uses the same block,
/// so cells share filter runs across trims and nested `S`.
pub fn loglik_variance_experiment<M: DisturbanceModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    setup: &VarianceSetup,
) -> Result<VarianceTable> {
    if setup.replications < 2 {
        return Err(Error::invalid(
            "at least two replications are needed for a variance",
        ));
    }
    if setup.grid.iter().any(|&(n, s)| n == 0 || s == 0) {
        return Err(Error::invalid("grid entries need N >= 1 and S >= 1"));
    }
    if let Some(sch) = &setup.schedule {
        if sch.len() != data.len() {
            return Err(Error::invalid(
                "schedule length differs from the data length",
            ));
        }
    }
    let params = model.prepare(theta)?;
    let mut table = VarianceTable {
        theta: theta.to_vec(),
        replications: setup.replications,
        cells: Vec::new(),
        single_filter: Vec::new(),
        telemetry: FilterTelemetry::default(),
    };
    for &(n, s) in &setup.grid {
        let shape = CrnShape::for_model(model, data.len(), n);
        let jobs: Vec<(usize, usize)> = (0..setup.replications)
            .flat_map(|r| (0..s).map(move |k| (r, k)))
            .collect();
        let runs: Vec<(f64, FilterTelemetry)> = jobs
            .par_iter()
            .map_init(FilterScratch::default, |scratch, &(r, k)| {
                let mut g = rng::stream(
                    setup.seed,
                    &[streams::REPLICATION, n as u64, r as u64, k as u64],
                );
                let crn = FilterCrn::standard_normal(shape, &mut g)?;
                let mut tel = FilterTelemetry::default();
                let ll = filter_loglik(
                    model,
                    &params,
                    &crn,
                    setup.schedule.as_ref(),
                    data,
                    setup.sort_payload,
                    scratch,
                    &mut tel,
                );
                match ll {
                    Ok(v) => Ok((v, tel)),
                    Err(Error::FilterDegenerate { .. }) => Ok((f64::NEG_INFINITY, tel)),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        runs.iter().for_each(|(_, t)| table.telemetry.merge(t));
        let per_rep: Vec<&[(f64, FilterTelemetry)]> = runs.chunks(s).collect();
        for &trim in &setup.trims {
            let combined = per_rep
                .iter()
                .map(|rep| trimmed_mean_loglik(&rep.iter().map(|x| x.0).collect::<Vec<_>>(), trim))
                .collect::<Result<Vec<_>>>()?;
            table.cells.push(summarise(n, s, trim, &combined));
        }
        if !table.single_filter.iter().any(|c| c.n == n) {
            let first: Vec<f64> = per_rep.iter().map(|rep| rep[0].0).collect();
            table.single_filter.push(summarise(n, 1, 0.0, &first));
        }
    }
    Ok(table)
}

/// Settings of a paired-estimate correlation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSetup {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub trim: f64,
    pub rho_u: f64,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub sort_payload: SortPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub correlation: f64,
    /// `(log estimate at theta, log estimate at theta' after one block update)`.
    pub pairs: Vec<(f64, f64)>,
}

/// Correlation between the combined estimate at `(theta, u)` and at `(theta', u')`,
/// where `u'` refreshes one randomly chosen block of `u`.
pub fn correlation_experiment<M: DisturbanceModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    theta_prime: &[f64],
    setup: &CorrelationSetup,
) -> Result<CorrelationResult> {
    if setup.replications < 2 {
        return Err(Error::invalid(
            "at least two replications are needed for a correlation",
        ));
    }
    let p = model.prepare(theta)?;
    let p_prime = model.prepare(theta_prime)?;
    let shape = CrnShape::for_model(model, data.len(), setup.n);
    let mut pairs = Vec::with_capacity(setup.replications);
    let mut spare = FilterCrn::from_values(shape, vec![0.0; shape.len()])?;
    for r in 0..setup.replications as u64 {
        let mut blocks = crn_init(
            setup.s,
            shape,
            setup.rho_u,
            rng::derive_seed(setup.seed, &[streams::REPLICATION, r]),
        )?;
        let combined = |params: &M::Params, blocks: &[FilterCrn]| -> Result<f64> {
            let refs: Vec<&FilterCrn> = blocks.iter().collect();
            let batch =
                evaluate_filters(model, params, &refs, None, data, setup.sort_payload, false)?;
            trimmed_mean_loglik(&batch.logliks, setup.trim)
        };
        let before = combined(&p, blocks.blocks())?;
        let s = select_block(
            setup.s,
            &mut rng::stream(setup.seed, &[streams::REPLICATION, r, streams::CHAIN]),
        )?;
        let mut g = rng::stream(setup.seed, &[streams::REPLICATION, r, streams::CRN_UPDATE]);
        refresh_into(blocks.block(s), setup.rho_u, &mut g, &mut spare);
        blocks.swap_block(s, &mut spare)?;
        let after = combined(&p_prime, blocks.blocks())?;
        pairs.push((before, after));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::invalid(
            "a combined estimate was -inf; the correlation is undefined",
        ));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    Ok(CorrelationResult {
        correlation: stats::correlation(&xs, &ys),
        pairs,
    })
}

/// Timing of the two particle orderings on one cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortBenchRow {
    pub payload: SortPayload,
    pub d: usize,
    pub n: usize,
    /// Median milliseconds per sort.
    pub euclidean_ms: f64,
    pub greedy_ms: f64,
    pub speedup: f64,
}

fn cloud(payload: SortPayload, d: usize, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut g = rng::stream(seed, &[streams::SIMULATION, d as u64, n as u64]);
    let mut draw =
        |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut g)).collect() };
    match payload {
        SortPayload::Disturbance => Ok(draw(n * d)),
        SortPayload::State => {
            // States after a burn-in of the linear Gaussian dynamics at theta = 0.4.
            let a = build_lgss_a(0.4, d)?;
            let mut x = draw(n * d);
            for _ in 0..20 {
                let v = draw(n * d);
                for (row, noise) in x.chunks_mut(d).zip(v.chunks(d)) {
                    let next: Vec<f64> = (0..d)
                        .map(|i| (0..d).map(|j| a[(i, j)] * row[j]).sum::<f64>() + noise[i])
                        .collect();
                    row.copy_from_slice(&next);
                }
            }
            Ok(x)
        }
    }
}

fn median_ms(mut f: impl FnMut() -> Result<()>, reps: usize) -> Result<f64> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(stats::quantile_sorted(&times, 0.5))
}

/// Times Euclidean sorting against the greedy nearest-neighbour chain for
/// both payload kinds over a `(d, N)` grid.
pub fn sort_benchmark(
    dims: &[usize],
    ns: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<SortBenchRow>> {
    if reps == 0 {
        return Err(Error::invalid("at least one repetition is required"));
    }
    let mut rows = Vec::new();
    for payload in [SortPayload::State, SortPayload::Disturbance] {
        for &d in dims {
            for &n in ns {
                let particles = cloud(payload, d, n, seed)?;
                let weights = vec![1.0 / n as f64; n];
                let euclidean_ms =
                    median_ms(|| euclidean_sort(&particles, d, &weights).map(drop), reps)?;
                let greedy_ms = median_ms(|| greedy_sort(&particles, d, &weights).map(drop), reps)?;
                rows.push(SortBenchRow {
                    payload,
                    d,
                    n,
                    euclidean_ms,
                    greedy_ms,
                    speedup: greedy_ms / euclidean_ms,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_dataset, Lgss};

    fn lgss(d: usize, t: usize) -> (Lgss, Dataset) {
        let m = Lgss::new(d).unwrap();
        let data = simulate_dataset(&m, &[0.4], t, 8).unwrap();
        (m, data)
    }

    #[test]
    fn variance_table_layout_and_single_filter_column() {
        let (m, data) = lgss(1, 20);
        let setup = VarianceSetup {
            grid: vec![(50, 1), (50, 8)],
            trims: vec![0.0, 0.25],
            replications: 40,
            seed: 1,
            sort_payload: SortPayload::State,
            schedule: None,
        };
        let t = loglik_variance_experiment(&m, &data, &[0.4], &setup).unwrap();
        assert_eq!(t.cells.len(), 4);
        assert_eq!(t.single_filter.len(), 1);
        // S = 1 with no trim is the single-filter column itself.
        assert_eq!(
            t.cell(50, 1, 0.0).unwrap().variance,
            t.single_filter[0].variance
        );
        assert!(t.cell(50, 8, 0.0).unwrap().variance < t.single_filter[0].variance);
        assert_eq!(t.telemetry.filter_runs, 40 * 9);
        let again = loglik_variance_experiment(&m, &data, &[0.4], &setup).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn correlation_limits() {
        let (m, data) = lgss(1, 20);
        let mut setup = CorrelationSetup {
            s: 1,
            n: 30,
            trim: 0.0,
            rho_u: 1.0,
            replications: 60,
            seed: 2,
            sort_payload: SortPayload::State,
        };
        let same = correlation_experiment(&m, &data, &[0.4], &[0.4], &setup).unwrap();
        assert_eq!(same.correlation, 1.0);
        setup.rho_u = 0.0;
        setup.replications = 400;
        let fresh = correlation_experiment(&m, &data, &[0.4], &[0.4], &setup).unwrap();
        assert!(
            fresh.correlation.abs() < 3.0 / 20.0,
            "{}",
            fresh.correlation
        );
    }

    #[test]
    fn sort_benchmark_rows() {
        let rows = sort_benchmark(&[3], &[50, 100], 2, 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows
            .iter()
            .all(|r| r.euclidean_ms > 0.0 && r.greedy_ms > 0.0));
        assert!(sort_benchmark(&[3], &[50], 0, 1).is_err());
    }
}
