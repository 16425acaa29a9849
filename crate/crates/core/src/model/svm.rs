use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{DisturbanceModel, FilterTelemetry, Transform};
use crate::error::{Error, Result};
use crate::rows::gather_rows;
use crate::stats::{exp_fast, gamma_logpdf, normal_logpdf, LN_2PI};

/// Log-volatilities are clamped to `[-H_CLAMP, H_CLAMP]` before exponentiation.
pub const H_CLAMP: f64 = 50.0;

/// GARCH-diffusion parameters with the Euler subdivision count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub alpha: f64,
    pub mu: f64,
    pub tau2: f64,
    pub psi: f64,
    /// Euler steps per unit time interval.
    pub m: usize,
}

impl SvmParams {
    pub fn new(alpha: f64, mu: f64, tau2: f64, psi: f64, m: usize) -> Result<Self> {
        if !(alpha > 0.0 && mu > 0.0 && tau2 > 0.0 && psi.is_finite()) {
            return Err(Error::invalid(format!(
                "svm parameters out of support: alpha={alpha}, mu={mu}, tau2={tau2}, psi={psi}"
            )));
        }
        if m == 0 {
            return Err(Error::invalid("at least one Euler step is required"));
        }
        Ok(Self {
            alpha,
            mu,
            tau2,
            psi,
            m,
        })
    }

    pub fn delta(&self) -> f64 {
        1.0 / self.m as f64
    }
}

#[inline(always)]
fn clamp_h(h: f64, clamps: &mut u64) -> f64 {
    *clamps += (h.abs() > H_CLAMP) as u64;
    h.clamp(-H_CLAMP, H_CLAMP)
}

#[inline(always)]
fn euler(h: f64, eps: f64, c: &EulerConsts, clamps: &mut u64) -> f64 {
    let e_neg = exp_fast(-clamp_h(h, clamps));
    h + (c.alpha * (c.mu * e_neg - 1.0) - c.half_tau2) * c.delta + c.sd * eps
}

#[derive(Debug, Clone, Copy)]
struct EulerConsts {
    alpha: f64,
    mu: f64,
    half_tau2: f64,
    delta: f64,
    sd: f64,
}

impl EulerConsts {
    fn new(p: &SvmParams) -> Self {
        let delta = p.delta();
        Self {
            alpha: p.alpha,
            mu: p.mu,
            half_tau2: 0.5 * p.tau2,
            delta,
            sd: (p.tau2 * delta).sqrt(),
        }
    }
}

/// One Euler step `h + [alpha (mu - e^h) e^-h - tau2/2] delta + tau sqrt(delta) eps`.
pub fn svm_euler_step(h: f64, eps: f64, p: &SvmParams) -> f64 {
    euler(h, eps, &EulerConsts::new(p), &mut 0)
}

/// Applies `M` Euler steps per coordinate. `eps_block` is `M x d`, row `j` holding step `j`.
pub fn svm_transition_map(h_prev: &[f64], eps_block: &[f64], p: &SvmParams) -> Result<Vec<f64>> {
    let d = h_prev.len();
    if eps_block.len() != p.m * d {
        return Err(Error::invalid(format!(
            "disturbance block has {} entries, expected M x d = {}",
            eps_block.len(),
            p.m * d
        )));
    }
    let prepared = SvmPrepared::new(*p, d);
    let mut out = vec![0.0; d];
    let mut tel = FilterTelemetry::default();
    prepared.transition(h_prev, eps_block, &mut out, &mut tel);
    Ok(out)
}

/// `log N(y; A h, diag(e^h))` with `A[i][j] = psi^(|i-j|+1)`.
pub fn svm_obs_logdensity(y: &[f64], h: &[f64], psi: f64) -> f64 {
    let d = h.len();
    let a = loading(psi, d);
    let mut tel = FilterTelemetry::default();
    obs_logdensity(&a, y, h, &mut tel)
}

fn loading(psi: f64, d: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = psi.powi(i.abs_diff(j) as i32 + 1);
        }
    }
    a
}

#[inline]
fn obs_logdensity(a: &[f64], y: &[f64], h: &[f64], tel: &mut FilterTelemetry) -> f64 {
    let d = h.len();
    let mut clamps = 0;
    let mut acc = -0.5 * d as f64 * LN_2PI;
    for i in 0..d {
        // Same operation order as the batch form, so both agree bit-for-bit.
        let mut r = y[i];
        for (a, h) in a[i * d..(i + 1) * d].iter().zip(h) {
            r -= a * h;
        }
        acc -= obs_term(r, h[i], &mut clamps);
    }
    tel.clamp_events += clamps;
    acc
}

#[inline(always)]
fn obs_term(r: f64, h: f64, clamps: &mut u64) -> f64 {
    let hc = clamp_h(h, clamps);
    0.5 * (hc + r * r * exp_fast(-hc))
}

/// Per-evaluation quantities for the SV model.
#[derive(Debug, Clone)]
pub struct SvmPrepared {
    pub params: SvmParams,
    pub d: usize,
    consts: EulerConsts,
    a: Vec<f64>,
}

impl SvmPrepared {
    fn new(params: SvmParams, d: usize) -> Self {
        Self {
            params,
            d,
            consts: EulerConsts::new(&params),
            a: loading(params.psi, d),
        }
    }

    #[inline]
    fn transition(&self, prev: &[f64], eps: &[f64], out: &mut [f64], tel: &mut FilterTelemetry) {
        let mut clamps = 0;
        for (i, o) in out.iter_mut().enumerate() {
            let mut h = prev[i];
            for j in 0..self.params.m {
                h = euler(h, eps[j * self.d + i], &self.consts, &mut clamps);
            }
            *o = h;
        }
        tel.clamp_events += clamps;
    }

    /// Step-major batch form of [`transition`](Self::transition): the Euler
    /// loop runs over all `n x d` coordinates at once so it vectorises.
    fn transition_batch(
        &self,
        prev: &[f64],
        eps: &[f64],
        out: &mut [f64],
        step: &mut Vec<f64>,
        tel: &mut FilterTelemetry,
    ) {
        let (d, m) = (self.d, self.params.m);
        let ne = d * m;
        let n = prev.len() / d;
        out.copy_from_slice(prev);
        step.resize(out.len(), 0.0);
        let mut clamps = 0;
        for j in 0..m {
            // Gather step j of every particle into one contiguous run.
            gather_rows(eps, d, (0..n).map(|p| p * ne + j * d), step);
            for (h, &e) in out.iter_mut().zip(step.iter()) {
                *h = euler(*h, e, &self.consts, &mut clamps);
            }
        }
        tel.clamp_events += clamps;
    }

    /// Works coordinate-major so every inner loop runs over particles and vectorises.
    fn obs_logdensity_batch(
        &self,
        y: &[f64],
        z: &[f64],
        out: &mut [f64],
        scratch: &mut Vec<f64>,
        tel: &mut FilterTelemetry,
    ) {
        let d = self.d;
        let n = z.len() / d;
        scratch.resize(2 * n * d, 0.0);
        let (zt, terms) = scratch.split_at_mut(n * d);
        for k in 0..d {
            for (dst, h) in zt[k * n..(k + 1) * n].iter_mut().zip(z.chunks_exact(d)) {
                *dst = h[k];
            }
        }
        let mut clamps = 0;
        for i in 0..d {
            let term = &mut terms[i * n..(i + 1) * n];
            term.fill(y[i]);
            for k in 0..d {
                let a = self.a[i * d + k];
                for (r, &v) in term.iter_mut().zip(&zt[k * n..(k + 1) * n]) {
                    *r -= a * v;
                }
            }
            for (r, &h) in term.iter_mut().zip(&zt[i * n..(i + 1) * n]) {
                *r = obs_term(*r, h, &mut clamps);
            }
        }
        tel.clamp_events += clamps;
        out.fill(-0.5 * d as f64 * LN_2PI);
        for i in 0..d {
            for (o, &t) in out.iter_mut().zip(&terms[i * n..(i + 1) * n]) {
                *o -= t;
            }
        }
    }
}

/// Multivariate stochastic volatility in mean with GARCH-diffusion log-volatilities.
///
/// Parameters (constrained order): `alpha, mu, tau2, psi`. The state is the
/// vector of `d` log-volatilities; each time step consumes `M x d` normals.
/// Initial log-volatilities are iid `N(0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct Svm {
    pub d: usize,
    pub m: usize,
}

impl Svm {
    pub fn new(d: usize, m: usize) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::invalid("svm needs d >= 1 and M >= 1"));
        }
        Ok(Self { d, m })
    }
}

impl DisturbanceModel for Svm {
    type Params = SvmPrepared;

    fn id(&self) -> &'static str {
        "svm"
    }
    fn state_dim(&self) -> usize {
        self.d
    }
    fn disturbance_dim(&self) -> usize {
        self.d * self.m
    }
    fn obs_dim(&self) -> usize {
        self.d
    }
    fn init_dim(&self) -> usize {
        self.d
    }
    fn param_names(&self) -> Vec<&'static str> {
        vec!["alpha", "mu", "tau2", "psi"]
    }
    fn transforms(&self) -> Vec<Transform> {
        vec![
            Transform::Log,
            Transform::Log,
            Transform::Log,
            Transform::Identity,
        ]
    }

    fn prepare(&self, theta: &[f64]) -> Result<SvmPrepared> {
        match *theta {
            [alpha, mu, tau2, psi] => Ok(SvmPrepared::new(
                SvmParams::new(alpha, mu, tau2, psi, self.m)?,
                self.d,
            )),
            _ => Err(Error::invalid("svm takes four parameters")),
        }
    }

    fn initial_state(&self, _params: &SvmPrepared, normals: &[f64], out: &mut [f64]) {
        out.copy_from_slice(normals);
    }

    #[inline]
    fn transition(
        &self,
        params: &SvmPrepared,
        prev: &[f64],
        eps: &[f64],
        out: &mut [f64],
        telemetry: &mut FilterTelemetry,
    ) {
        params.transition(prev, eps, out, telemetry);
    }

    #[inline]
    fn obs_logdensity(
        &self,
        params: &SvmPrepared,
        y: &[f64],
        z: &[f64],
        telemetry: &mut FilterTelemetry,
    ) -> f64 {
        obs_logdensity(&params.a, y, z, telemetry)
    }

    fn transition_batch(
        &self,
        params: &SvmPrepared,
        prev: &[f64],
        eps: &[f64],
        out: &mut [f64],
        scratch: &mut Vec<f64>,
        telemetry: &mut FilterTelemetry,
    ) {
        params.transition_batch(prev, eps, out, scratch, telemetry);
    }

    fn obs_logdensity_batch(
        &self,
        params: &SvmPrepared,
        y: &[f64],
        z: &[f64],
        out: &mut [f64],
        scratch: &mut Vec<f64>,
        telemetry: &mut FilterTelemetry,
    ) {
        params.obs_logdensity_batch(y, z, out, scratch, telemetry);
    }

    fn sample_obs<R: Rng + ?Sized>(
        &self,
        params: &SvmPrepared,
        z: &[f64],
        rng: &mut R,
        out: &mut [f64],
    ) {
        let d = self.d;
        for i in 0..d {
            let mean: f64 = params.a[i * d..(i + 1) * d]
                .iter()
                .zip(z)
                .map(|(a, h)| a * h)
                .sum();
            let e: f64 = rng.sample(StandardNormal);
            out[i] = mean + (0.5 * z[i].clamp(-H_CLAMP, H_CLAMP)).exp() * e;
        }
    }

    /// `alpha ~ G(1,1)`, `mu ~ G(1,1)`, `tau2 ~ G(0.5, 0.5)` (shape, rate), `psi ~ N(0,1)`.
    fn prior_logdensity(&self, theta: &[f64]) -> f64 {
        match *theta {
            [alpha, mu, tau2, psi] => {
                if !psi.is_finite() {
                    return f64::NEG_INFINITY;
                }
                gamma_logpdf(alpha, 1.0, 1.0)
                    + gamma_logpdf(mu, 1.0, 1.0)
                    + gamma_logpdf(tau2, 0.5, 0.5)
                    + normal_logpdf(psi, 0.0, 1.0)
            }
            _ => f64::NEG_INFINITY,
        }
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let g11 = Gamma::new(1.0, 1.0).expect("valid gamma");
        let g_half = Gamma::new(0.5, 2.0).expect("valid gamma");
        let psi: f64 = rng.sample(StandardNormal);
        vec![g11.sample(rng), g11.sample(rng), g_half.sample(rng), psi]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(alpha: f64, mu: f64, tau2: f64, m: usize) -> SvmParams {
        SvmParams {
            alpha,
            mu,
            tau2,
            psi: 0.0,
            m,
        }
    }

    #[test]
    fn euler_fixed_point_without_diffusion() {
        let p = params(2.0, 1.81, 1e-300, 1);
        let h = 1.81f64.ln();
        assert!((svm_euler_step(h, 0.0, &p) - h).abs() < 1e-15);
    }

    #[test]
    fn euler_drift_at_reference_parameters() {
        // [2 (1.81 - 1) - 0.19] / 3
        let p = params(2.0, 1.81, 0.38, 3);
        assert!((svm_euler_step(0.0, 0.0, &p) - 1.43 / 3.0).abs() < 1e-14);
        assert!((svm_euler_step(0.0, 0.0, &p) - 0.4767).abs() < 1e-4);
    }

    #[test]
    fn euler_diffusion_only() {
        let p = params(0.0, 5.0, 0.38, 3);
        let expected = -0.19 / 3.0 + 0.38f64.sqrt() * (1.0f64 / 3.0).sqrt();
        assert!((svm_euler_step(0.0, 1.0, &p) - expected).abs() < 1e-14);
        assert!((svm_euler_step(0.0, 1.0, &p) - 0.2926).abs() < 1e-4);
    }

    #[test]
    fn transition_map_single_step_and_shape() {
        let p = params(2.0, 1.81, 0.38, 1);
        let out = svm_transition_map(&[0.3], &[0.7], &p).unwrap();
        assert_eq!(out[0], svm_euler_step(0.3, 0.7, &p));
        assert!(svm_transition_map(&[0.3, 0.1], &[0.7], &p).is_err());
    }

    #[test]
    fn transition_map_without_diffusion_is_drift_iteration() {
        let p = params(2.0, 1.81, 1e-300, 3);
        let eps = [5.0, -3.0, 2.0];
        let out = svm_transition_map(&[0.2], &eps, &p).unwrap();
        let mut h = 0.2;
        for _ in 0..3 {
            h = svm_euler_step(h, 0.0, &p);
        }
        assert!((out[0] - h).abs() < 1e-14);
    }

    #[test]
    fn transition_map_is_permutation_equivariant() {
        let p = params(2.0, 1.81, 0.38, 3);
        let h = [0.1, -0.4];
        let eps = [0.3, -1.1, 0.8, 0.05, -0.6, 1.7];
        let swapped_eps = [-1.1, 0.3, 0.05, 0.8, 1.7, -0.6];
        let a = svm_transition_map(&h, &eps, &p).unwrap();
        let b = svm_transition_map(&[h[1], h[0]], &swapped_eps, &p).unwrap();
        assert_eq!(a[0], b[1]);
        assert_eq!(a[1], b[0]);
    }

    #[test]
    fn observation_density_examples() {
        let c = -0.5 * LN_2PI;
        assert!((svm_obs_logdensity(&[0.0, 0.0, 0.0], &[0.0; 3], 0.0) - 3.0 * c).abs() < 1e-14);
        let psi = 0.37;
        let h = 0.0;
        assert!((svm_obs_logdensity(&[psi * h], &[h], psi) - c).abs() < 1e-14);
        let v = svm_obs_logdensity(&[0.0, 0.0], &[4f64.ln(), 0.0], 0.0);
        assert!((v - (-LN_2PI - 0.5 * 4f64.ln())).abs() < 1e-14);
        assert!((v + 2.5310).abs() < 1e-4);
    }

    #[test]
    fn batch_kernels_match_single_particle_kernels() {
        let model = Svm::new(3, 3).unwrap();
        let p = model.prepare(&[2.0, 1.81, 0.38, 0.3]).unwrap();
        let n = 7;
        let prev: Vec<f64> = (0..n * 3).map(|i| (i as f64 * 0.71).sin() * 3.0).collect();
        let eps: Vec<f64> = (0..n * 9).map(|i| (i as f64 * 1.37).cos() * 2.0).collect();
        let y = [0.4, -1.1, 2.5];
        let mut tel = FilterTelemetry::default();
        let mut batch = vec![0.0; n * 3];
        let mut scratch = Vec::new();
        model.transition_batch(&p, &prev, &eps, &mut batch, &mut scratch, &mut tel);
        let mut lw = vec![0.0; n];
        model.obs_logdensity_batch(&p, &y, &batch, &mut lw, &mut scratch, &mut tel);
        for i in 0..n {
            let mut single = [0.0; 3];
            model.transition(
                &p,
                &prev[i * 3..i * 3 + 3],
                &eps[i * 9..i * 9 + 9],
                &mut single,
                &mut tel,
            );
            assert_eq!(single, batch[i * 3..i * 3 + 3]);
            let v = model.obs_logdensity(&p, &y, &single, &mut tel);
            assert_eq!(v.to_bits(), lw[i].to_bits());
        }
    }

    #[test]
    fn extreme_log_volatility_is_clamped_and_counted() {
        let model = Svm::new(1, 1).unwrap();
        let p = model.prepare(&[2.0, 1.81, 0.38, 0.01]).unwrap();
        let mut tel = FilterTelemetry::default();
        let v = model.obs_logdensity(&p, &[0.0], &[-800.0], &mut tel);
        assert!(v.is_finite());
        assert_eq!(tel.clamp_events, 1);
    }

    #[test]
    fn prior_examples() {
        let m = Svm::new(2, 3).unwrap();
        let expected = gamma_logpdf(1.0, 1.0, 1.0) * 2.0
            + gamma_logpdf(1.0, 0.5, 0.5)
            + normal_logpdf(0.0, 0.0, 1.0);
        assert!((m.prior_logdensity(&[1.0, 1.0, 1.0, 0.0]) - expected).abs() < 1e-14);
        assert_eq!(
            m.prior_logdensity(&[1.0, 1.0, -0.1, 0.0]),
            f64::NEG_INFINITY
        );
        assert!(m.prepare(&[1.0, 1.0, -0.1, 0.0]).is_err());
    }
}
