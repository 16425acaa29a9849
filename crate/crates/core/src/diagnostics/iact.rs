use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::ChainRecord;
use crate::stats;

/// Shortest series accepted by [`iact`].
pub const MIN_SERIES: usize = 100;

/// Integrated autocorrelation time of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iact {
    pub value: f64,
    /// Set for a constant series, whose IF is reported as its length.
    pub degenerate: bool,
}

fn autocov(centered: &[f64], lag: usize) -> f64 {
    centered[lag..]
        .iter()
        .zip(centered)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / centered.len() as f64
}

/// `1 + 2 sum rho(j)`, truncated by Geyer's initial monotone positive sequence.
pub fn iact(series: &[f64]) -> Result<Iact> {
    let n = series.len();
    if n < MIN_SERIES {
        return Err(Error::invalid(format!(
            "series of length {n} is shorter than {MIN_SERIES}"
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    let m = stats::mean(series);
    let centered: Vec<f64> = series.iter().map(|x| x - m).collect();
    let c0 = autocov(&centered, 0);
    if c0 <= 0.0 || !c0.is_normal() {
        return Ok(Iact {
            value: n as f64,
            degenerate: true,
        });
    }
    // Pair sums Gamma_k = rho(2k) + rho(2k + 1) are positive and decreasing for a
    // reversible chain; stop at the first non-positive one.
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let gamma = (autocov(&centered, 2 * k) + autocov(&centered, 2 * k + 1)) / c0;
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(prev);
        sum += gamma;
        prev = gamma;
        k += 1;
    }
    Ok(Iact {
        value: (2.0 * sum - 1.0).max(0.0),
        degenerate: false,
    })
}

/// Inefficiency of one chain, optionally relative to a benchmark chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfReport {
    pub param_names: Vec<String>,
    pub ifs: Vec<f64>,
    pub if_max: f64,
    pub if_mean: f64,
    /// Seconds per post-warmup iteration.
    pub ct: f64,
    /// `IF * CT` per parameter.
    pub tnif: Vec<f64>,
    /// `TNIF / benchmark TNIF` per parameter.
    pub rtnif: Option<Vec<f64>>,
}

impl IfReport {
    pub fn tnif_max(&self) -> f64 {
        self.if_max * self.ct
    }

    pub fn tnif_mean(&self) -> f64 {
        self.if_mean * self.ct
    }
}

fn per_parameter(chain: &ChainRecord, warmup: usize) -> Result<(Vec<f64>, f64)> {
    let ifs = (0..chain.param_names.len())
        .map(|k| iact(&chain.param_series(k, warmup)).map(|r| r.value))
        .collect::<Result<Vec<_>>>()?;
    Ok((ifs, chain.seconds_per_iteration(warmup)))
}

/// IF, TNIF and (against `benchmark`) RTNIF over the draws after `warmup`.
pub fn if_report(
    chain: &ChainRecord,
    benchmark: Option<&ChainRecord>,
    warmup: usize,
) -> Result<IfReport> {
    if chain.param_names.is_empty() {
        return Err(Error::invalid("chain has no parameters"));
    }
    let (ifs, ct) = per_parameter(chain, warmup)?;
    let tnif: Vec<f64> = ifs.iter().map(|v| v * ct).collect();
    let rtnif = match benchmark {
        None => None,
        Some(b) => {
            if b.param_names != chain.param_names {
                return Err(Error::invalid(format!(
                    "parameter sets differ: {:?} vs {:?}",
                    chain.param_names, b.param_names
                )));
            }
            let (bifs, bct) = per_parameter(b, warmup)?;
            Some(
                tnif.iter()
                    .zip(&bifs)
                    .map(|(t, bi)| t / (bi * bct))
                    .collect(),
            )
        }
    };
    Ok(IfReport {
        param_names: chain.param_names.clone(),
        if_max: ifs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        if_mean: stats::mean(&ifs),
        ifs,
        ct,
        tnif,
        rtnif,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sampler::{ChainRow, ChainStats, SamplerKind};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, &[]);
        let sd = (1.0 - phi * phi).sqrt();
        let mut x: f64 = r.sample(StandardNormal);
        (0..n)
            .map(|_| {
                x = phi * x + sd * r.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    fn record(series: &[Vec<f64>], ns: u64) -> ChainRecord {
        let n = series[0].len();
        ChainRecord {
            kind: SamplerKind::Mpm,
            param_names: (0..series.len()).map(|k| format!("p{k}")).collect(),
            rows: (0..n)
                .map(|i| ChainRow {
                    iteration: i,
                    theta: series.iter().map(|s| s[i]).collect(),
                    loglik: 0.0,
                    accepted: true,
                    stage1_accepted: None,
                    elapsed_ns: ns,
                })
                .collect(),
            stats: ChainStats::default(),
            panels: None,
            schedule: None,
        }
    }

    #[test]
    fn white_noise_and_autoregressions() {
        let v = iact(&ar1(0.0, 100_000, 1)).unwrap().value;
        assert!((v - 1.0).abs() < 0.1, "{v}");
        let v = iact(&ar1(0.5, 1_000_000, 2)).unwrap().value;
        assert!((v - 3.0).abs() < 0.3, "{v}");
        let v = iact(&ar1(0.9, 1_000_000, 3)).unwrap().value;
        assert!((v - 19.0).abs() < 19.0 * 0.15, "{v}");
    }

    #[test]
    fn degenerate_and_short_series() {
        let r = iact(&[2.5; 300]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.value, 300.0);
        assert!(iact(&[1.0; 50]).is_err());
        let alternating: Vec<f64> = (0..200)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        assert!(iact(&alternating).unwrap().value >= 0.0);
    }

    #[test]
    fn affine_invariance() {
        let s = ar1(0.7, 20_000, 4);
        let t: Vec<f64> = s.iter().map(|x| -3.0 * x + 10.0).collect();
        let (a, b) = (iact(&s).unwrap().value, iact(&t).unwrap().value);
        assert!((a - b).abs() < 1e-9 * a, "{a} vs {b}");
    }

    #[test]
    fn report_relations() {
        let c = record(&[ar1(0.5, 5_000, 5)], 1_000);
        let rep = if_report(&c, Some(&c), 0).unwrap();
        assert_eq!(rep.if_max, rep.if_mean);
        assert!(rep.rtnif.unwrap().iter().all(|&v| v == 1.0));
        let slow = record(&[ar1(0.5, 5_000, 5)], 2_000);
        let rel = if_report(&slow, Some(&c), 0).unwrap();
        assert!((rel.rtnif.unwrap()[0] - 2.0).abs() < 1e-12);
        assert!((rel.ct - 2e-6).abs() < 1e-18);

        let two = record(&[ar1(0.5, 5_000, 6), ar1(0.8, 5_000, 7)], 1_000);
        let rep = if_report(&two, None, 100).unwrap();
        assert!(rep.if_max >= rep.if_mean && rep.rtnif.is_none());
        assert!(if_report(&two, Some(&c), 0).is_err());
    }
}
