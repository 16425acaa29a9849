//! State-space models in disturbance form.
//!
//! A model maps an initial state `z0` and iid standard-normal disturbances
//! `eps_1..eps_T` deterministically to the latent path `z_t = F(z_{t-1}, eps_t; theta)`,
//! and scores observations with `p(y_t | z_t, theta)`. Filters only ever see
//! this interface, so the same filter code serves the linear Gaussian model
//! and the stochastic-volatility model.

mod dataset;
mod lgss;
mod svm;
mod transform;

pub use dataset::{simulate_dataset, Dataset, DatasetMeta};
pub use lgss::{build_lgss_a, lgss_obs_logdensity, lgss_transition, Lgss, LgssParams};
pub use svm::{svm_euler_step, svm_obs_logdensity, svm_transition_map, Svm, SvmParams, H_CLAMP};
pub use transform::Transform;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Counters surfaced by filters and models to the diagnostics layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterTelemetry {
    /// Particle filter passes executed.
    pub filter_runs: u64,
    /// Log-volatility values clamped before exponentiation.
    pub clamp_events: u64,
    /// Cholesky retries with an enlarged jitter while building proposals.
    pub jitter_escalations: u64,
    /// Filter passes that ended with all weights zero.
    pub degeneracies: u64,
}

impl FilterTelemetry {
    pub fn merge(&mut self, other: &FilterTelemetry) {
        self.filter_runs += other.filter_runs;
        self.clamp_events += other.clamp_events;
        self.jitter_escalations += other.jitter_escalations;
        self.degeneracies += other.degeneracies;
    }
}

/// A state-space model written in terms of its latent disturbances.
///
/// `theta` arguments are always in the constrained (natural) parameterisation;
/// [`Transform`] handles the mapping to the samplers' unconstrained space.
pub trait DisturbanceModel: Send + Sync {
    /// Parameter-dependent quantities precomputed once per likelihood evaluation.
    type Params: Send + Sync;

    fn id(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn disturbance_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    /// Number of standard normals used to draw the initial state `z0`.
    fn init_dim(&self) -> usize;
    fn param_names(&self) -> Vec<&'static str>;
    fn transforms(&self) -> Vec<Transform>;

    /// Validates `theta` and precomputes what the hot loop needs.
    fn prepare(&self, theta: &[f64]) -> Result<Self::Params>;

    fn initial_state(&self, params: &Self::Params, normals: &[f64], out: &mut [f64]);

    /// `out = F(prev, eps; theta)`. Must be bit-deterministic.
    fn transition(
        &self,
        params: &Self::Params,
        prev: &[f64],
        eps: &[f64],
        out: &mut [f64],
        telemetry: &mut FilterTelemetry,
    );

    fn obs_logdensity(
        &self,
        params: &Self::Params,
        y: &[f64],
        z: &[f64],
        telemetry: &mut FilterTelemetry,
    ) -> f64;

    /// Draws `y` given the state, for simulation.
    fn sample_obs<R: Rng + ?Sized>(
        &self,
        params: &Self::Params,
        z: &[f64],
        rng: &mut R,
        out: &mut [f64],
    );

    /// Log prior density of constrained `theta`; `-inf` outside the support.
    fn prior_logdensity(&self, theta: &[f64]) -> f64;

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>;

    fn num_params(&self) -> usize {
        self.param_names().len()
    }

    /// Transitions `n` particles at once: `prev` and `out` are `n x state_dim`,
    /// `eps` is `n x disturbance_dim`. Must agree bit-for-bit with [`transition`](Self::transition).
    fn transition_batch(
        &self,
        params: &Self::Params,
        prev: &[f64],
        eps: &[f64],
        out: &mut [f64],
        _scratch: &mut Vec<f64>,
        telemetry: &mut FilterTelemetry,
    ) {
        let (d, ne) = (self.state_dim(), self.disturbance_dim());
        for ((p, e), o) in prev
            .chunks_exact(d)
            .zip(eps.chunks_exact(ne))
            .zip(out.chunks_exact_mut(d))
        {
            self.transition(params, p, e, o, telemetry);
        }
    }

    /// Observation log-densities of `n` particles at one time, into `out` (length `n`).
    fn obs_logdensity_batch(
        &self,
        params: &Self::Params,
        y: &[f64],
        z: &[f64],
        out: &mut [f64],
        _scratch: &mut Vec<f64>,
        telemetry: &mut FilterTelemetry,
    ) {
        for (zi, o) in z.chunks_exact(self.state_dim()).zip(out.iter_mut()) {
            *o = self.obs_logdensity(params, y, zi, telemetry);
        }
    }

    /// Log-density of the disturbance law, which is always `N(0, I)`.
    fn disturbance_logdensity(&self, eps: &[f64]) -> f64 {
        stats::std_normal_logpdf(eps)
    }
}

/// Maps unconstrained sampler coordinates to the model's natural parameters.
pub fn to_constrained<M: DisturbanceModel + ?Sized>(model: &M, x: &[f64]) -> Vec<f64> {
    model
        .transforms()
        .iter()
        .zip(x)
        .map(|(t, &v)| t.to_constrained(v))
        .collect()
}

pub fn to_unconstrained<M: DisturbanceModel + ?Sized>(
    model: &M,
    theta: &[f64],
) -> Result<Vec<f64>> {
    if theta.len() != model.num_params() {
        return Err(Error::invalid(format!(
            "{} expects {} parameters, got {}",
            model.id(),
            model.num_params(),
            theta.len()
        )));
    }
    model
        .transforms()
        .iter()
        .zip(theta)
        .map(|(t, &v)| t.to_unconstrained(v))
        .collect()
}

/// Prior log-density in unconstrained coordinates, including the log-Jacobian.
pub fn log_prior_unconstrained<M: DisturbanceModel + ?Sized>(model: &M, x: &[f64]) -> f64 {
    let transforms = model.transforms();
    let theta: Vec<f64> = transforms
        .iter()
        .zip(x)
        .map(|(t, &v)| t.to_constrained(v))
        .collect();
    let lp = model.prior_logdensity(&theta);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    lp + transforms
        .iter()
        .zip(x)
        .map(|(t, &v)| t.log_jacobian(v))
        .sum::<f64>()
}

/// Model selection used by configuration files and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Linear Gaussian model of dimension `d`.
    Lgss { d: usize },
    /// Multivariate SV-in-mean model with `d` series and `m` Euler subdivisions.
    Svm { d: usize, m: usize },
}

impl ModelSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::Lgss { .. } => "lgss",
            ModelSpec::Svm { .. } => "svm",
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            ModelSpec::Lgss { d } | ModelSpec::Svm { d, .. } => d,
        }
    }
}
