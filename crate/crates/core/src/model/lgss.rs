use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{DisturbanceModel, FilterTelemetry, Transform};
use crate::error::{Error, Result};
use crate::stats::LN_2PI;

/// Loading matrix with entries `theta^(|i-j|+1)` on both triangles.
pub fn build_lgss_a(theta: f64, d: usize) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| {
        theta.powi(i.abs_diff(j) as i32 + 1)
    }))
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    // The loading matrix is symmetric, so its eigenvalues are real.
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |r, v| r.max(v.abs()))
}

/// Prepared parameters of the linear Gaussian model.
#[derive(Debug, Clone)]
pub struct LgssParams {
    pub theta: f64,
    pub d: usize,
    /// `A_theta`, row-major.
    pub a: Vec<f64>,
}

impl LgssParams {
    pub fn new(theta: f64, d: usize) -> Result<Self> {
        if !(theta.abs() < 1.0) {
            return Err(Error::invalid(format!(
                "theta = {theta} is outside (-1, 1)"
            )));
        }
        let a = build_lgss_a(theta, d)?;
        let rho = spectral_radius(&a);
        if rho >= 1.0 {
            return Err(Error::invalid(format!(
                "theta = {theta} gives spectral radius {rho} >= 1 at d = {d}"
            )));
        }
        Ok(Self {
            theta,
            d,
            a: a.transpose().as_slice().to_vec(),
        })
    }
}

/// `A_theta z_prev + eps`.
pub fn lgss_transition(z_prev: &[f64], eps: &[f64], theta: f64) -> Result<Vec<f64>> {
    if z_prev.len() != eps.len() {
        return Err(Error::invalid("state and disturbance dimensions differ"));
    }
    let p = LgssParams::new(theta, z_prev.len())?;
    let mut out = vec![0.0; p.d];
    apply_transition(&p, z_prev, eps, &mut out);
    Ok(out)
}

/// `log N(y; z, I)`.
pub fn lgss_obs_logdensity(y: &[f64], z: &[f64]) -> Result<f64> {
    if y.len() != z.len() {
        return Err(Error::invalid("observation and state dimensions differ"));
    }
    Ok(obs_logdensity(y, z))
}

#[inline]
fn apply_transition(p: &LgssParams, prev: &[f64], eps: &[f64], out: &mut [f64]) {
    let d = p.d;
    if d == 1 {
        out[0] = p.a[0] * prev[0] + eps[0];
        return;
    }
    for (i, o) in out.iter_mut().enumerate() {
        let row = &p.a[i * d..(i + 1) * d];
        *o = row.iter().zip(prev).map(|(a, z)| a * z).sum::<f64>() + eps[i];
    }
}

#[inline]
fn obs_logdensity(y: &[f64], z: &[f64]) -> f64 {
    let sq: f64 = y.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * (y.len() as f64 * LN_2PI + sq)
}

/// `X_{t+1} = A_theta X_t + V_{t+1}`, `Y_t = X_t + W_t`, all noises `N(0, I_d)`.
///
/// The initial state is `z0 = 0`, so the first disturbance generates
/// `X_1 ~ N(0, I_d)` directly.
#[derive(Debug, Clone, Copy)]
pub struct Lgss {
    pub d: usize,
}

impl Lgss {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        Ok(Self { d })
    }
}

impl DisturbanceModel for Lgss {
    type Params = LgssParams;

    fn id(&self) -> &'static str {
        "lgss"
    }
    fn state_dim(&self) -> usize {
        self.d
    }
    fn disturbance_dim(&self) -> usize {
        self.d
    }
    fn obs_dim(&self) -> usize {
        self.d
    }
    fn init_dim(&self) -> usize {
        0
    }
    fn param_names(&self) -> Vec<&'static str> {
        vec!["theta"]
    }
    fn transforms(&self) -> Vec<Transform> {
        vec![Transform::ScaledLogit { lo: -1.0, hi: 1.0 }]
    }

    fn prepare(&self, theta: &[f64]) -> Result<LgssParams> {
        match theta {
            [t] => LgssParams::new(*t, self.d),
            _ => Err(Error::invalid("lgss takes exactly one parameter")),
        }
    }

    fn initial_state(&self, _params: &LgssParams, _normals: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    #[inline]
    fn transition(
        &self,
        params: &LgssParams,
        prev: &[f64],
        eps: &[f64],
        out: &mut [f64],
        _telemetry: &mut FilterTelemetry,
    ) {
        apply_transition(params, prev, eps, out);
    }

    #[inline]
    fn obs_logdensity(
        &self,
        _params: &LgssParams,
        y: &[f64],
        z: &[f64],
        _telemetry: &mut FilterTelemetry,
    ) -> f64 {
        obs_logdensity(y, z)
    }

    fn sample_obs<R: Rng + ?Sized>(
        &self,
        _params: &LgssParams,
        z: &[f64],
        rng: &mut R,
        out: &mut [f64],
    ) {
        for (o, zi) in out.iter_mut().zip(z) {
            let w: f64 = rng.sample(StandardNormal);
            *o = zi + w;
        }
    }

    /// Uniform on `(-1, 1)` restricted to the stable region.
    fn prior_logdensity(&self, theta: &[f64]) -> f64 {
        match theta {
            [t] if LgssParams::new(*t, self.d).is_ok() => -std::f64::consts::LN_2,
            _ => f64::NEG_INFINITY,
        }
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let t: f64 = rng.random_range(-1.0..1.0);
            if LgssParams::new(t, self.d).is_ok() {
                return vec![t];
            }
        }
    }
}
