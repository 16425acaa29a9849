//! Combining `S` filter estimates into one likelihood estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{
    filter_loglik, run_filter_prepared, AdpfSchedule, FilterCrn, FilterScratch, ParticleSystem,
    SortPayload,
};
use crate::model::{Dataset, DisturbanceModel, FilterTelemetry};
use crate::stats::log_sum_exp;

/// Number of estimates dropped from each tail.
///
/// The small epsilon keeps products such as `0.29 * 100` from flooring one short.
pub fn trim_count(s: usize, trim: f64) -> usize {
    ((trim * s as f64) + 1e-9).floor() as usize
}

/// Log of the trimmed mean of the likelihoods `exp(l_s)`.
///
/// `trim = 0.5` (or any trim that would drop everything) gives the median,
/// averaging the two central likelihoods when `S` is even.
pub fn trimmed_mean_loglik(logliks: &[f64], trim: f64) -> Result<f64> {
    if logliks.is_empty() {
        return Err(Error::invalid("no estimates to combine"));
    }
    if !(0.0..=0.5).contains(&trim) {
        return Err(Error::invalid(format!("trim {trim} is outside [0, 0.5]")));
    }
    if logliks.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::invalid("estimates must be finite or -inf"));
    }
    let mut sorted = logliks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let s = sorted.len();
    let k = trim_count(s, trim);
    let kept = if 2 * k >= s {
        if s % 2 == 1 {
            &sorted[s / 2..s / 2 + 1]
        } else {
            &sorted[s / 2 - 1..s / 2 + 1]
        }
    } else {
        &sorted[k..s - k]
    };
    let lse = log_sum_exp(kept);
    if lse == f64::NEG_INFINITY {
        return Ok(lse);
    }
    Ok(lse - (kept.len() as f64).ln())
}

/// Per-filter estimates with their combined value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodPanel {
    pub logliks: Vec<f64>,
    pub trim: f64,
    pub combined: f64,
}

impl LikelihoodPanel {
    pub fn new(logliks: Vec<f64>, trim: f64) -> Result<Self> {
        let combined = trimmed_mean_loglik(&logliks, trim)?;
        Ok(Self {
            logliks,
            trim,
            combined,
        })
    }
}

/// Result of running every filter of one likelihood evaluation.
#[derive(Debug, Clone)]
pub struct FilterBatch {
    /// `-inf` for filters whose weights all vanished.
    pub logliks: Vec<f64>,
    /// Full histories of the non-degenerate filters, when requested.
    pub systems: Vec<ParticleSystem>,
    pub telemetry: FilterTelemetry,
}

/// Runs one filter per block at prepared parameters, in parallel, reducing in block order.
pub fn evaluate_filters<M: DisturbanceModel + ?Sized>(
    model: &M,
    params: &M::Params,
    blocks: &[&FilterCrn],
    schedule: Option<&AdpfSchedule>,
    data: &Dataset,
    payload: SortPayload,
    keep_systems: bool,
) -> Result<FilterBatch> {
    let outcomes: Vec<(Result<f64>, Option<ParticleSystem>, FilterTelemetry)> = blocks
        .par_iter()
        .map_init(FilterScratch::default, |scratch, crn| {
            let mut tel = FilterTelemetry::default();
            if keep_systems {
                match run_filter_prepared(model, params, crn, schedule, data, payload, scratch) {
                    Ok(ps) => {
                        tel.merge(&ps.telemetry);
                        (Ok(ps.loglik), Some(ps), tel)
                    }
                    Err(e) => {
                        if matches!(e, Error::FilterDegenerate { .. }) {
                            tel.filter_runs += 1;
                            tel.degeneracies += 1;
                        }
                        (Err(e), None, tel)
                    }
                }
            } else {
                let r = filter_loglik(
                    model, params, crn, schedule, data, payload, scratch, &mut tel,
                );
                (r, None, tel)
            }
        })
        .collect();
    let mut batch = FilterBatch {
        logliks: Vec::with_capacity(blocks.len()),
        systems: Vec::new(),
        telemetry: FilterTelemetry::default(),
    };
    for (r, ps, tel) in outcomes {
        batch.telemetry.merge(&tel);
        match r {
            Ok(v) => batch.logliks.push(v),
            Err(Error::FilterDegenerate { .. }) => batch.logliks.push(f64::NEG_INFINITY),
            Err(e) => return Err(e),
        }
        batch.systems.extend(ps);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logs(xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|x| x.ln()).collect()
    }

    #[test]
    fn hand_examples() {
        let l = logs(&(1..=10).map(f64::from).collect::<Vec<_>>());
        let v = trimmed_mean_loglik(&l, 0.2).unwrap();
        assert!((v - 5.5f64.ln()).abs() < 1e-14);
        assert!((v - 1.70475).abs() < 1e-5);
        let all = trimmed_mean_loglik(&l, 0.0).unwrap();
        assert!((all - 5.5f64.ln()).abs() < 1e-14);
        let odd = logs(&(1..=101).map(f64::from).collect::<Vec<_>>());
        assert_eq!(trimmed_mean_loglik(&odd, 0.5).unwrap(), 51f64.ln());
        let even = trimmed_mean_loglik(&l, 0.5).unwrap();
        assert!((even - 5.5f64.ln()).abs() < 1e-14);
        let single = trimmed_mean_loglik(&[-3.0], 0.5).unwrap();
        assert_eq!(single, -3.0);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        assert_eq!(
            trimmed_mean_loglik(&[f64::NEG_INFINITY; 4], 0.25).unwrap(),
            f64::NEG_INFINITY
        );
        let v = trimmed_mean_loglik(&[f64::NEG_INFINITY, 0.0], 0.0).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
        assert!(trimmed_mean_loglik(&[], 0.0).is_err());
        assert!(trimmed_mean_loglik(&[1.0], 0.6).is_err());
        assert!(trimmed_mean_loglik(&[f64::NAN], 0.0).is_err());
    }

    #[test]
    fn trim_count_floors() {
        assert_eq!(trim_count(10, 0.2), 2);
        assert_eq!(trim_count(100, 0.29), 29);
        assert_eq!(trim_count(20, 0.25), 5);
        assert_eq!(trim_count(7, 0.1), 0);
    }

    #[test]
    fn extreme_magnitudes_stay_finite() {
        let v = trimmed_mean_loglik(&[1e6, 1e6 - 1.0, 1e6 + 1.0], 0.0).unwrap();
        let expected = 1e6 + ((1.0 + (-1f64).exp() + 1f64.exp()) / 3.0).ln();
        assert!((v - expected).abs() < 1e-9);
        assert!(trimmed_mean_loglik(&[-1e6, -1e6], 0.0).unwrap().is_finite());
    }

    fn exact_log_mean(l: &[f64]) -> f64 {
        // Shift by the maximum and sum with compensated arithmetic.
        let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &x in l {
            let y = (x - m).exp() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        m + (sum / l.len() as f64).ln()
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_monotone(
            mut l in proptest::collection::vec(-30.0f64..0.0, 1..40),
            trim in 0.0f64..=0.5,
            bump in 0.0f64..5.0,
            idx in 0usize..40,
        ) {
            let base = trimmed_mean_loglik(&l, trim).unwrap();
            let mut rev = l.clone();
            rev.reverse();
            prop_assert_eq!(base.to_bits(), trimmed_mean_loglik(&rev, trim).unwrap().to_bits());
            let i = idx % l.len();
            l[i] += bump;
            prop_assert!(trimmed_mean_loglik(&l, trim).unwrap() >= base - 1e-12);
        }

        #[test]
        fn untrimmed_is_the_plain_log_mean(l in proptest::collection::vec(-30.0f64..0.0, 1..60)) {
            let v = trimmed_mean_loglik(&l, 0.0).unwrap();
            let e = exact_log_mean(&l);
            prop_assert!((v - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }
}
