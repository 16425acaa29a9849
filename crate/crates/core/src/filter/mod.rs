//! Correlated particle filter on the disturbance form of a state-space model.
//!
//! Every random quantity the filter consumes comes from a [`FilterCrn`]
//! block of standard normals, so the likelihood estimate is a deterministic
//! function of `(theta, crn)`.

mod adpf;

pub use adpf::{
    ancestral_trace, build_adpf_schedule, defensive_mixture_sample, AdpfSchedule, DEFAULT_PI,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, DisturbanceModel, FilterTelemetry};
use crate::rows::gather_rows;
use crate::sort::{euclidean_order_into, invert_cdf_into, SortScratch};
use crate::stats;

/// Which particle coordinates are sorted before resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortPayload {
    #[default]
    State,
    Disturbance,
}

/// Dimensions of one block of common random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrnShape {
    pub t_len: usize,
    pub n: usize,
    pub n_e: usize,
    pub init_dim: usize,
}

impl CrnShape {
    pub fn for_model<M: DisturbanceModel + ?Sized>(model: &M, t_len: usize, n: usize) -> Self {
        Self {
            t_len,
            n,
            n_e: model.disturbance_dim(),
            init_dim: model.init_dim(),
        }
    }

    fn eps_len(&self) -> usize {
        self.t_len * self.n * self.n_e
    }
    fn resample_len(&self) -> usize {
        self.t_len.saturating_sub(1) * self.n
    }
    fn mixture_len(&self) -> usize {
        self.t_len * self.n
    }

    /// Total number of normals in a block.
    pub fn len(&self) -> usize {
        self.eps_len() + self.resample_len() + self.mixture_len() + self.n * self.init_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One filter's random numbers: disturbance normals (`T x N x n_e`), resampling
/// normals (`(T-1) x N`), mixture-switch normals (`T x N`) and initial-state
/// normals (`N x init_dim`), stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCrn {
    shape: CrnShape,
    values: Vec<f64>,
}

impl FilterCrn {
    pub fn from_values(shape: CrnShape, values: Vec<f64>) -> Result<Self> {
        if shape.t_len == 0 || shape.n == 0 || shape.n_e == 0 {
            return Err(Error::invalid(
                "T, N and the disturbance dimension must be positive",
            ));
        }
        if values.len() != shape.len() {
            return Err(Error::invalid(format!(
                "expected {} random numbers, got {}",
                shape.len(),
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn standard_normal<R: Rng + ?Sized>(shape: CrnShape, rng: &mut R) -> Result<Self> {
        let values = (0..shape.len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Self::from_values(shape, values)
    }

    pub fn shape(&self) -> CrnShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Disturbance normals of all particles at time `t`, `N x n_e`.
    #[inline]
    pub fn eps(&self, t: usize) -> &[f64] {
        let w = self.shape.n * self.shape.n_e;
        &self.values[t * w..(t + 1) * w]
    }

    /// Resampling normals used when moving from `t - 1` to `t`, `t >= 1`.
    #[inline]
    pub fn resample(&self, t: usize) -> &[f64] {
        let n = self.shape.n;
        let off = self.shape.eps_len() + (t - 1) * n;
        &self.values[off..off + n]
    }

    #[inline]
    pub fn mixture(&self, t: usize) -> &[f64] {
        let n = self.shape.n;
        let off = self.shape.eps_len() + self.shape.resample_len() + t * n;
        &self.values[off..off + n]
    }

    #[inline]
    pub fn init(&self) -> &[f64] {
        &self.values[self.shape.len() - self.shape.n * self.shape.init_dim..]
    }
}

/// Complete particle history of one filter run, kept for lineage tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub t_len: usize,
    pub n: usize,
    pub state_dim: usize,
    pub n_e: usize,
    /// `T x N x state_dim`.
    pub states: Vec<f64>,
    /// `T x N x n_e`.
    pub disturbances: Vec<f64>,
    /// `ancestors[(t - 1) * N + i]` is the index at `t - 1` of the parent of particle `i` at `t`.
    pub ancestors: Vec<usize>,
    /// Normalised weights, `T x N`.
    pub weights: Vec<f64>,
    /// `log(mean_i w_t^i)` per time.
    pub log_mean_weights: Vec<f64>,
    pub loglik: f64,
    pub telemetry: FilterTelemetry,
}

impl ParticleSystem {
    fn empty(t_len: usize, n: usize, state_dim: usize, n_e: usize) -> Self {
        Self {
            t_len,
            n,
            state_dim,
            n_e,
            states: Vec::with_capacity(t_len * n * state_dim),
            disturbances: Vec::with_capacity(t_len * n * n_e),
            ancestors: Vec::with_capacity(t_len.saturating_sub(1) * n),
            weights: Vec::with_capacity(t_len * n),
            log_mean_weights: Vec::with_capacity(t_len),
            loglik: 0.0,
            telemetry: FilterTelemetry::default(),
        }
    }

    #[inline]
    pub fn state(&self, t: usize, i: usize) -> &[f64] {
        let d = self.state_dim;
        &self.states[(t * self.n + i) * d..(t * self.n + i + 1) * d]
    }

    #[inline]
    pub fn disturbance(&self, t: usize, i: usize) -> &[f64] {
        let e = self.n_e;
        &self.disturbances[(t * self.n + i) * e..(t * self.n + i + 1) * e]
    }

    pub fn weights_at(&self, t: usize) -> &[f64] {
        &self.weights[t * self.n..(t + 1) * self.n]
    }
}

/// Working buffers reused across filter runs.
#[derive(Debug, Default, Clone)]
pub struct FilterScratch {
    z_prev: Vec<f64>,
    z_parent: Vec<f64>,
    z_cur: Vec<f64>,
    correction: Vec<f64>,
    model: Vec<f64>,
    eps_prev: Vec<f64>,
    eps_cur: Vec<f64>,
    logw: Vec<f64>,
    w: Vec<f64>,
    sorted_w: Vec<f64>,
    cdf: Vec<f64>,
    uniforms: Vec<f64>,
    sorted_anc: Vec<usize>,
    anc: Vec<usize>,
    order: Vec<usize>,
    sort: SortScratch,
}

fn check_shapes<M: DisturbanceModel + ?Sized>(
    model: &M,
    crn: &FilterCrn,
    schedule: Option<&AdpfSchedule>,
    data: &Dataset,
) -> Result<()> {
    let s = crn.shape();
    if data.obs_dim() != model.obs_dim() {
        return Err(Error::invalid(format!(
            "data has {} columns but the model observes {}",
            data.obs_dim(),
            model.obs_dim()
        )));
    }
    let expected = CrnShape::for_model(model, data.len(), s.n);
    if s != expected {
        return Err(Error::invalid(format!(
            "random-number block {s:?} does not match {expected:?}"
        )));
    }
    if let Some(sc) = schedule {
        if sc.n_e != s.n_e || sc.len() != s.t_len {
            return Err(Error::invalid(
                "proposal schedule does not match the filter dimensions",
            ));
        }
    }
    Ok(())
}

/// Runs the filter and keeps the full particle history.
pub fn run_filter<M: DisturbanceModel + ?Sized>(
    model: &M,
    theta: &[f64],
    crn: &FilterCrn,
    schedule: Option<&AdpfSchedule>,
    data: &Dataset,
    payload: SortPayload,
) -> Result<ParticleSystem> {
    let params = model.prepare(theta)?;
    check_shapes(model, crn, schedule, data)?;
    let s = crn.shape();
    let mut ps = ParticleSystem::empty(s.t_len, s.n, model.state_dim(), s.n_e);
    let mut tel = FilterTelemetry::default();
    let ll = filter_core(
        model,
        &params,
        crn,
        schedule,
        data,
        payload,
        &mut FilterScratch::default(),
        Some(&mut ps),
        &mut tel,
    )?;
    ps.loglik = ll;
    ps.telemetry = tel;
    Ok(ps)
}

/// Log-likelihood estimate only; bit-identical to [`run_filter`]'s `loglik`.
#[allow(clippy::too_many_arguments)]
pub fn filter_loglik<M: DisturbanceModel + ?Sized>(
    model: &M,
    params: &M::Params,
    crn: &FilterCrn,
    schedule: Option<&AdpfSchedule>,
    data: &Dataset,
    payload: SortPayload,
    scratch: &mut FilterScratch,
    telemetry: &mut FilterTelemetry,
) -> Result<f64> {
    check_shapes(model, crn, schedule, data)?;
    filter_core(
        model, params, crn, schedule, data, payload, scratch, None, telemetry,
    )
}

/// Same as [`filter_loglik`] with prepared parameters, keeping the history.
pub fn run_filter_prepared<M: DisturbanceModel + ?Sized>(
    model: &M,
    params: &M::Params,
    crn: &FilterCrn,
    schedule: Option<&AdpfSchedule>,
    data: &Dataset,
    payload: SortPayload,
    scratch: &mut FilterScratch,
) -> Result<ParticleSystem> {
    check_shapes(model, crn, schedule, data)?;
    let s = crn.shape();
    let mut ps = ParticleSystem::empty(s.t_len, s.n, model.state_dim(), s.n_e);
    let mut tel = FilterTelemetry::default();
    ps.loglik = filter_core(
        model,
        params,
        crn,
        schedule,
        data,
        payload,
        scratch,
        Some(&mut ps),
        &mut tel,
    )?;
    ps.telemetry = tel;
    Ok(ps)
}

#[allow(clippy::too_many_arguments)]
fn filter_core<M: DisturbanceModel + ?Sized>(
    model: &M,
    params: &M::Params,
    crn: &FilterCrn,
    schedule: Option<&AdpfSchedule>,
    data: &Dataset,
    payload: SortPayload,
    sc: &mut FilterScratch,
    mut history: Option<&mut ParticleSystem>,
    tel: &mut FilterTelemetry,
) -> Result<f64> {
    let shape = crn.shape();
    let (t_len, n, ne, id) = (shape.t_len, shape.n, shape.n_e, shape.init_dim);
    let d = model.state_dim();
    let ln_n = (n as f64).ln();
    tel.filter_runs += 1;

    sc.z_prev.resize(n * d, 0.0);
    sc.z_cur.resize(n * d, 0.0);
    sc.z_parent.resize(n * d, 0.0);
    sc.correction.resize(n, 0.0);
    sc.eps_prev.resize(n * ne, 0.0);
    sc.eps_cur.resize(n * ne, 0.0);
    sc.logw.resize(n, 0.0);
    sc.w.resize(n, 0.0);
    sc.sorted_w.resize(n, 0.0);
    sc.cdf.resize(n, 0.0);
    sc.uniforms.resize(n, 0.0);
    sc.sorted_anc.resize(n, 0);
    sc.anc.resize(n, 0);

    let init = crn.init();
    for i in 0..n {
        model.initial_state(
            params,
            &init[i * id..(i + 1) * id],
            &mut sc.z_prev[i * d..(i + 1) * d],
        );
    }

    let mut loglik = 0.0;
    for t in 0..t_len {
        if t == 0 {
            sc.anc.iter_mut().enumerate().for_each(|(i, a)| *a = i);
        } else {
            let key = match payload {
                SortPayload::State => &sc.z_prev,
                // Bootstrap disturbances are the common normals themselves.
                SortPayload::Disturbance if schedule.is_none() => crn.eps(t - 1),
                SortPayload::Disturbance => &sc.eps_prev,
            };
            let key_dim = if payload == SortPayload::State { d } else { ne };
            euclidean_order_into(key, key_dim, &mut sc.sort, &mut sc.order);
            let mut acc = 0.0;
            for (k, &o) in sc.order.iter().enumerate() {
                let w = sc.w[o];
                sc.sorted_w[k] = w;
                acc += w;
                sc.cdf[k] = acc;
            }
            for (u, &v) in sc.uniforms.iter_mut().zip(crn.resample(t)) {
                *u = stats::normal_cdf(v);
            }
            invert_cdf_into(&sc.cdf, &sc.sorted_w, &sc.uniforms, &mut sc.sorted_anc);
            for (a, &k) in sc.anc.iter_mut().zip(&sc.sorted_anc) {
                *a = sc.order[k];
            }
        }

        let normals = crn.eps(t);
        let eps_t: &[f64] = match schedule {
            None => normals,
            Some(sched) => {
                let comp = sched.component(t);
                let mix = crn.mixture(t);
                for i in 0..n {
                    let eps = &mut sc.eps_cur[i * ne..(i + 1) * ne];
                    let log_m = comp.sample(&normals[i * ne..(i + 1) * ne], mix[i], eps);
                    sc.correction[i] = model.disturbance_logdensity(eps) - log_m;
                }
                &sc.eps_cur
            }
        };
        gather_rows(
            &sc.z_prev,
            d,
            sc.anc.iter().map(|&a| a * d),
            &mut sc.z_parent,
        );
        model.transition_batch(
            params,
            &sc.z_parent,
            eps_t,
            &mut sc.z_cur,
            &mut sc.model,
            tel,
        );
        model.obs_logdensity_batch(
            params,
            data.y(t),
            &sc.z_cur,
            &mut sc.logw,
            &mut sc.model,
            tel,
        );
        if schedule.is_some() {
            for (lw, c) in sc.logw.iter_mut().zip(&sc.correction) {
                *lw += c;
            }
        }
        for lw in sc.logw.iter_mut() {
            if lw.is_nan() {
                *lw = f64::NEG_INFINITY;
            }
        }

        let max = sc.logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            tel.degeneracies += 1;
            return Err(Error::FilterDegenerate { t: t + 1 });
        }
        let mut sum = 0.0;
        for (w, &lw) in sc.w.iter_mut().zip(&sc.logw) {
            *w = stats::exp_fast(lw - max);
            sum += *w;
        }
        sc.w.iter_mut().for_each(|w| *w /= sum);
        let log_mean = max + sum.ln() - ln_n;
        loglik += log_mean;

        if let Some(ps) = history.as_deref_mut() {
            ps.states.extend_from_slice(&sc.z_cur);
            ps.disturbances.extend_from_slice(eps_t);
            if t > 0 {
                ps.ancestors.extend_from_slice(&sc.anc);
            }
            ps.weights.extend_from_slice(&sc.w);
            ps.log_mean_weights.push(log_mean);
        }
        std::mem::swap(&mut sc.z_prev, &mut sc.z_cur);
        std::mem::swap(&mut sc.eps_prev, &mut sc.eps_cur);
    }
    Ok(loglik)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_dataset, Lgss, Svm};
    use crate::rng;

    fn lgss_setup(t_len: usize, n: usize) -> (Lgss, Dataset, FilterCrn) {
        let m = Lgss::new(1).unwrap();
        let data = simulate_dataset(&m, &[0.4], t_len, 1).unwrap();
        let crn = FilterCrn::standard_normal(
            CrnShape::for_model(&m, t_len, n),
            &mut rng::stream(5, &[1]),
        )
        .unwrap();
        (m, data, crn)
    }

    #[test]
    fn single_step_single_particle_matches_closed_form() {
        // z0 = 0, so z1 = eps and the estimate is log N(y1; eps, 1).
        let m = Lgss::new(1).unwrap();
        let meta = crate::model::DatasetMeta {
            model: "lgss".into(),
            theta: None,
            seed: None,
            t: 1,
            d: 1,
        };
        let data = Dataset::new(vec![0.0], 1, meta).unwrap();
        let shape = CrnShape::for_model(&m, 1, 1);
        let crn = FilterCrn::from_values(shape, vec![0.0, 0.0]).unwrap();
        let ps = run_filter(&m, &[0.4], &crn, None, &data, SortPayload::State).unwrap();
        assert!((ps.loglik + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert_eq!(ps.weights, vec![1.0]);
    }

    #[test]
    fn identical_block_gives_identical_estimate() {
        let (m, data, crn) = lgss_setup(30, 50);
        let a = run_filter(&m, &[0.4], &crn, None, &data, SortPayload::State).unwrap();
        let b = run_filter(&m, &[0.4], &crn, None, &data, SortPayload::State).unwrap();
        assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
        let p = m.prepare(&[0.4]).unwrap();
        let mut tel = FilterTelemetry::default();
        let lean = filter_loglik(
            &m,
            &p,
            &crn,
            None,
            &data,
            SortPayload::State,
            &mut FilterScratch::default(),
            &mut tel,
        )
        .unwrap();
        assert_eq!(lean.to_bits(), a.loglik.to_bits());
        assert_eq!(tel.filter_runs, 1);
    }

    #[test]
    fn invariants_of_the_particle_history() {
        let (m, data, crn) = lgss_setup(20, 40);
        for payload in [SortPayload::State, SortPayload::Disturbance] {
            let ps = run_filter(&m, &[0.4], &crn, None, &data, payload).unwrap();
            for t in 0..ps.t_len {
                let s: f64 = ps.weights_at(t).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            assert!(ps.ancestors.iter().all(|&a| a < ps.n));
            let total: f64 = ps.log_mean_weights.iter().sum();
            assert_eq!(total.to_bits(), ps.loglik.to_bits());
        }
    }

    #[test]
    fn pure_prior_schedule_reproduces_bootstrap() {
        let (m, data, crn) = lgss_setup(15, 30);
        let mut tel = FilterTelemetry::default();
        let sched =
            AdpfSchedule::from_moments(vec![3.0; 15], vec![2.0; 15], 1, 1.0, &mut tel).unwrap();
        let a = run_filter(&m, &[0.4], &crn, None, &data, SortPayload::State).unwrap();
        let b = run_filter(&m, &[0.4], &crn, Some(&sched), &data, SortPayload::State).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (m, data, _) = lgss_setup(10, 5);
        let crn =
            FilterCrn::standard_normal(CrnShape::for_model(&m, 9, 5), &mut rng::stream(1, &[]))
                .unwrap();
        assert!(run_filter(&m, &[0.4], &crn, None, &data, SortPayload::State).is_err());
        let sv = Svm::new(1, 2).unwrap();
        let crn =
            FilterCrn::standard_normal(CrnShape::for_model(&sv, 10, 5), &mut rng::stream(1, &[]))
                .unwrap();
        assert!(run_filter(
            &sv,
            &[2.0, 1.0, 0.3, 0.0],
            &crn,
            None,
            &data,
            SortPayload::State
        )
        .is_ok());
        assert!(run_filter(&m, &[1.5], &crn, None, &data, SortPayload::State).is_err());
    }

    #[test]
    fn ancestral_trace_follows_lineage() {
        let (m, data, crn) = lgss_setup(12, 8);
        let ps = run_filter(&m, &[0.4], &crn, None, &data, SortPayload::State).unwrap();
        let tr = ancestral_trace(&ps, 3).unwrap();
        let mut b = 3;
        for t in (0..12).rev() {
            assert_eq!(tr[t], ps.disturbance(t, b)[0]);
            // state at t is A z_{t-1}^{parent} + eps
            if t > 0 {
                let parent = ps.ancestors[(t - 1) * 8 + b];
                let z = 0.4 * ps.state(t - 1, parent)[0] + tr[t];
                assert!((z - ps.state(t, b)[0]).abs() < 1e-14);
                b = parent;
            }
        }
        assert!(ancestral_trace(&ps, 8).is_err());
    }

    #[test]
    fn schedule_needs_two_systems_and_regularises_identical_traces() {
        let (m, data, crn) = lgss_setup(6, 1);
        let ps = run_filter(&m, &[0.4], &crn, None, &data, SortPayload::State).unwrap();
        let mut tel = FilterTelemetry::default();
        let mut r = rng::stream(3, &[]);
        assert!(build_adpf_schedule(std::slice::from_ref(&ps), 0.05, &mut r, &mut tel).is_err());
        let sched = build_adpf_schedule(&[ps.clone(), ps.clone()], 0.05, &mut r, &mut tel).unwrap();
        // N = 1: the lineage is the particle itself, and identical traces leave only the jitter.
        assert_eq!(&sched.means, &ps.disturbances);
        assert!(sched.covs.iter().all(|&c| (c - 1e-8).abs() < 1e-20));
    }
}
