//! Inefficiency factors, posterior summaries and likelihood-estimator experiments.

mod experiments;
mod iact;

pub use experiments::{
    correlation_experiment, loglik_variance_experiment, sort_benchmark, CorrelationResult,
    CorrelationSetup, SortBenchRow, VarianceCell, VarianceSetup, VarianceTable,
};
pub use iact::{iact, if_report, Iact, IfReport, MIN_SERIES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::ChainRecord;
use crate::stats;

/// Pooled posterior summary of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    /// Standard deviation of the per-chain means; absent for a single chain.
    pub se: Option<f64>,
}

/// Sum in ascending order, so the result does not depend on input order.
fn ordered_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    stats::mean(values)
}

/// Means and 95% intervals of the pooled post-warmup draws, with across-chain standard errors.
pub fn posterior_summary(chains: &[ChainRecord], warmup: usize) -> Result<Vec<ParamSummary>> {
    let first = chains
        .first()
        .ok_or_else(|| Error::invalid("no chains to summarise"))?;
    if chains.iter().any(|c| c.param_names != first.param_names) {
        return Err(Error::invalid("chains have different parameter sets"));
    }
    first
        .param_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let per_chain: Vec<Vec<f64>> =
                chains.iter().map(|c| c.param_series(k, warmup)).collect();
            if per_chain.iter().any(Vec::is_empty) {
                return Err(Error::invalid("a chain has no draws after warmup"));
            }
            let mut pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
            let mean = ordered_mean(&mut pooled);
            let se = (chains.len() > 1).then(|| {
                let mut means: Vec<f64> = per_chain
                    .into_iter()
                    .map(|mut c| ordered_mean(&mut c))
                    .collect();
                means.sort_by(f64::total_cmp);
                // Rounding in the mean would otherwise leave a tiny spread for equal values.
                if means[0] == means[means.len() - 1] {
                    0.0
                } else {
                    stats::variance(&means).sqrt()
                }
            });
            Ok(ParamSummary {
                name: name.clone(),
                mean,
                q025: stats::quantile_sorted(&pooled, 0.025),
                q975: stats::quantile_sorted(&pooled, 0.975),
                se,
            })
        })
        .collect()
}
