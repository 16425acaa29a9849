//! Auxiliary disturbance proposals: the defensive mixture
//! `pi N(0, I) + (1 - pi) N(mu_t, Sigma_t)` and its construction from traced
//! particle lineages.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ParticleSystem;
use crate::error::{Error, Result};
use crate::model::FilterTelemetry;
use crate::stats::{self, LN_2PI};

/// Default weight of the prior component.
pub const DEFAULT_PI: f64 = 0.05;

const JITTER_SCALE: f64 = 1e-8;
const JITTER_RETRIES: usize = 3;

/// Lower Cholesky factor of `sigma + jitter I`, escalating the jitter tenfold on failure.
///
/// With `always_jitter` the base jitter `1e-8 (tr(sigma) + n) / n` is always
/// added; otherwise the unmodified matrix is tried first.
pub(crate) fn regularized_cholesky(
    sigma: &[f64],
    n: usize,
    always_jitter: bool,
    telemetry: &mut FilterTelemetry,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let base = DMatrix::from_row_slice(n, n, sigma);
    let trace: f64 = (0..n).map(|i| base[(i, i)]).sum();
    let jitter0 = JITTER_SCALE * (trace + n as f64) / n as f64;
    let mut jitters: Vec<f64> = (0..=JITTER_RETRIES)
        .map(|k| jitter0 * 10f64.powi(k as i32))
        .collect();
    if !always_jitter {
        jitters.insert(0, 0.0);
    }
    for (attempt, &jitter) in jitters.iter().enumerate() {
        let first_try = if always_jitter { 0 } else { 1 };
        if attempt > first_try {
            telemetry.jitter_escalations += 1;
        }
        let m = &base + DMatrix::identity(n, n) * jitter;
        if let Some(ch) = m.clone().cholesky() {
            let l = ch.l();
            let regularized = m.transpose().as_slice().to_vec();
            return Ok((l.transpose().as_slice().to_vec(), regularized));
        }
    }
    Err(Error::invalid(format!(
        "covariance is not positive definite after jitter {:e}",
        jitters.last().copied().unwrap_or(0.0)
    )))
}

/// Per-time Gaussian proposal components plus the defensive weight `pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdpfSchedule {
    pub n_e: usize,
    pub pi: f64,
    /// `mu_t`, `T x n_e`.
    pub means: Vec<f64>,
    /// Regularised `Sigma_t`, `T x n_e x n_e` row-major.
    pub covs: Vec<f64>,
    /// Lower Cholesky factors of `covs`, same layout.
    chol: Vec<f64>,
    log_det: Vec<f64>,
    /// Component switch in normal space: prior component iff `u_mix < Phi^-1(pi)`.
    threshold: f64,
}

impl AdpfSchedule {
    /// Builds a schedule from raw moments, regularising each covariance.
    pub fn from_moments(
        means: Vec<f64>,
        covs: Vec<f64>,
        n_e: usize,
        pi: f64,
        telemetry: &mut FilterTelemetry,
    ) -> Result<Self> {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::invalid(format!(
                "mixture weight {pi} is outside (0, 1]"
            )));
        }
        if n_e == 0 || !means.len().is_multiple_of(n_e) || covs.len() != means.len() * n_e {
            return Err(Error::invalid("schedule moments have inconsistent shapes"));
        }
        let t_len = means.len() / n_e;
        let block = n_e * n_e;
        let mut chol = Vec::with_capacity(covs.len());
        let mut reg = Vec::with_capacity(covs.len());
        let mut log_det = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (l, s) =
                regularized_cholesky(&covs[t * block..(t + 1) * block], n_e, true, telemetry)?;
            log_det.push(2.0 * (0..n_e).map(|i| l[i * n_e + i].ln()).sum::<f64>());
            chol.extend_from_slice(&l);
            reg.extend_from_slice(&s);
        }
        Ok(Self {
            n_e,
            pi,
            means,
            covs: reg,
            chol,
            log_det,
            threshold: stats::normal_quantile(pi),
        })
    }

    pub fn len(&self) -> usize {
        self.log_det.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_det.is_empty()
    }

    #[inline]
    pub(crate) fn component(&self, t: usize) -> MixtureComponent<'_> {
        let n = self.n_e;
        MixtureComponent {
            mean: &self.means[t * n..(t + 1) * n],
            chol: &self.chol[t * n * n..(t + 1) * n * n],
            log_det: self.log_det[t],
            pi: self.pi,
            threshold: self.threshold,
        }
    }

    /// Mean over time of `||mu_t||` and of `tr(Sigma_t)`, for stabilisation checks.
    pub fn summary(&self) -> (f64, f64) {
        let n = self.n_e;
        let t_len = self.len() as f64;
        let mean_norm = (0..self.len())
            .map(|t| {
                self.means[t * n..(t + 1) * n]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / t_len;
        let mean_trace = (0..self.len())
            .map(|t| {
                (0..n)
                    .map(|i| self.covs[t * n * n + i * n + i])
                    .sum::<f64>()
            })
            .sum::<f64>()
            / t_len;
        (mean_norm, mean_trace)
    }
}

/// One time step of the defensive mixture.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MixtureComponent<'a> {
    mean: &'a [f64],
    chol: &'a [f64],
    log_det: f64,
    pi: f64,
    threshold: f64,
}

impl MixtureComponent<'_> {
    /// Draws `eps` from normals `u` and component normal `u_mix`; returns `log m(eps)`.
    #[inline]
    pub(crate) fn sample(&self, u: &[f64], u_mix: f64, eps: &mut [f64]) -> f64 {
        let n = u.len();
        let prior = self.pi >= 1.0 || u_mix < self.threshold;
        let maha;
        if prior {
            eps.copy_from_slice(u);
            maha = self.mahalanobis(eps);
        } else {
            for i in 0..n {
                let row = &self.chol[i * n..i * n + i + 1];
                eps[i] = self.mean[i] + row.iter().zip(u).map(|(l, v)| l * v).sum::<f64>();
            }
            maha = u.iter().map(|v| v * v).sum();
        }
        let log_prior = stats::std_normal_logpdf(eps);
        let log_gauss = -0.5 * (n as f64 * LN_2PI + self.log_det + maha);
        stats::log_add_exp(self.pi.ln() + log_prior, (1.0 - self.pi).ln() + log_gauss)
    }

    /// `|L^-1 (eps - mu)|^2` by forward substitution.
    fn mahalanobis(&self, eps: &[f64]) -> f64 {
        let n = eps.len();
        let mut z = [0.0f64; 64];
        let mut heap;
        let z: &mut [f64] = if n <= 64 {
            &mut z[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.chol[i * n..(i + 1) * n];
            let s: f64 = (0..i).map(|k| row[k] * z[k]).sum();
            z[i] = (eps[i] - self.mean[i] - s) / row[i];
            acc += z[i] * z[i];
        }
        acc
    }
}

/// Draws from the defensive mixture with explicit moments.
///
/// Prior component iff `Phi(u_mix) < pi`; returns `(eps, log m(eps))`.
pub fn defensive_mixture_sample(
    u_eps: &[f64],
    u_mix: f64,
    mu: &[f64],
    sigma: &[f64],
    pi: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = u_eps.len();
    if mu.len() != n || sigma.len() != n * n {
        return Err(Error::invalid(
            "mixture moments do not match the disturbance dimension",
        ));
    }
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::invalid(format!(
            "mixture weight {pi} is outside [0, 1]"
        )));
    }
    let mut tel = FilterTelemetry::default();
    let (chol, _) = regularized_cholesky(sigma, n, false, &mut tel)?;
    let log_det = 2.0 * (0..n).map(|i| chol[i * n + i].ln()).sum::<f64>();
    let prior = pi >= 1.0 || stats::normal_cdf(u_mix) < pi;
    let comp = MixtureComponent {
        mean: mu,
        chol: &chol,
        log_det,
        pi,
        threshold: if prior {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        },
    };
    let mut eps = vec![0.0; n];
    let log_m = comp.sample(u_eps, 0.0, &mut eps);
    Ok((eps, log_m))
}

/// Follows the ancestry of terminal particle `j` back to `t = 1` and returns
/// its disturbance trajectory, `T x n_e` row-major.
pub fn ancestral_trace(ps: &ParticleSystem, j: usize) -> Result<Vec<f64>> {
    if j >= ps.n {
        return Err(Error::invalid(format!(
            "terminal index {j} out of range for {} particles",
            ps.n
        )));
    }
    let (n, ne) = (ps.n, ps.n_e);
    let mut out = vec![0.0; ps.t_len * ne];
    let mut b = j;
    for t in (0..ps.t_len).rev() {
        out[t * ne..(t + 1) * ne].copy_from_slice(ps.disturbance(t, b));
        if t > 0 {
            b = ps.ancestors[(t - 1) * n + b];
        }
    }
    Ok(out)
}

/// Fits the next proposal schedule: one lineage per filter, drawn with the
/// terminal weights, then per-time sample mean and covariance (divisor `S - 1`).
pub fn build_adpf_schedule<R: Rng + ?Sized>(
    systems: &[ParticleSystem],
    pi: f64,
    rng: &mut R,
    telemetry: &mut FilterTelemetry,
) -> Result<AdpfSchedule> {
    let s_count = systems.len();
    if s_count < 2 {
        return Err(Error::invalid(
            "at least two particle systems are needed for a covariance",
        ));
    }
    let (t_len, ne) = (systems[0].t_len, systems[0].n_e);
    if systems.iter().any(|p| p.t_len != t_len || p.n_e != ne) {
        return Err(Error::invalid("particle systems have different shapes"));
    }
    let mut traces = Vec::with_capacity(s_count);
    for ps in systems {
        let w = ps.weights_at(t_len - 1);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = ps.n - 1;
        for (k, &wk) in w.iter().enumerate() {
            acc += wk;
            if acc >= u && wk > 0.0 {
                j = k;
                break;
            }
        }
        traces.push(ancestral_trace(ps, j)?);
    }
    let mut means = vec![0.0; t_len * ne];
    let mut covs = vec![0.0; t_len * ne * ne];
    for tr in &traces {
        for (m, v) in means.iter_mut().zip(tr) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= s_count as f64);
    let denom = (s_count - 1) as f64;
    for tr in &traces {
        for t in 0..t_len {
            let c = &mut covs[t * ne * ne..(t + 1) * ne * ne];
            let mu = &means[t * ne..(t + 1) * ne];
            let e = &tr[t * ne..(t + 1) * ne];
            for a in 0..ne {
                let da = e[a] - mu[a];
                for b in 0..ne {
                    c[a * ne + b] += da * (e[b] - mu[b]) / denom;
                }
            }
        }
    }
    AdpfSchedule::from_moments(means, covs, ne, pi, telemetry)
}
