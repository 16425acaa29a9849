//! Exact likelihood of the linear Gaussian model and the surrogate interface
//! used by delayed acceptance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{build_lgss_a, Dataset, LgssParams};
use crate::stats::LN_2PI;

/// Filtered moments and the running log-likelihood.
#[derive(Debug, Clone)]
pub struct KalmanState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub loglik: f64,
}

/// `log p(y_1:T | theta)` for `X_1 ~ N(0, I)`, `X_t+1 = A X_t + V`, `Y_t = X_t + W`.
pub fn kalman_loglik(data: &Dataset, theta: f64, d: usize) -> Result<f64> {
    Ok(kalman_filter(data, theta, d)?.loglik)
}

/// Runs the predict/update recursion with a Joseph-form covariance update.
pub fn kalman_filter(data: &Dataset, theta: f64, d: usize) -> Result<KalmanState> {
    LgssParams::new(theta, d)?;
    if data.obs_dim() != d {
        return Err(Error::invalid(format!(
            "data has {} columns, expected {d}",
            data.obs_dim()
        )));
    }
    let a = build_lgss_a(theta, d)?;
    let eye = DMatrix::<f64>::identity(d, d);
    let mut state = KalmanState {
        mean: DVector::zeros(d),
        cov: eye.clone(),
        loglik: 0.0,
    };
    for t in 0..data.len() {
        if t > 0 {
            state.mean = &a * &state.mean;
            state.cov = &a * &state.cov * a.transpose() + &eye;
        }
        let innov = DVector::from_column_slice(data.y(t)) - &state.mean;
        let s = &state.cov + &eye;
        let chol = s.clone().cholesky().ok_or_else(|| {
            Error::Invariant(format!(
                "innovation covariance not positive definite at t = {}",
                t + 1
            ))
        })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let solved = chol.solve(&innov);
        state.loglik += -0.5 * (d as f64 * LN_2PI + log_det + innov.dot(&solved));
        let gain = &state.cov * chol.inverse();
        state.mean += &gain * innov;
        let i_k = &eye - &gain;
        let joseph = &i_k * &state.cov * i_k.transpose() + &gain * gain.transpose();
        state.cov = (&joseph + joseph.transpose()) * 0.5;
    }
    Ok(state)
}

/// A deterministic approximation of `log p(y | theta)` at constrained `theta`.
pub trait SurrogateOracle: Send + Sync {
    fn loglik(&self, theta: &[f64]) -> Result<f64>;
}

/// Kalman likelihood of the linear Gaussian model, as exact-MH likelihood and DA surrogate.
#[derive(Debug, Clone)]
pub struct KalmanSurrogate {
    data: Dataset,
    d: usize,
}

impl KalmanSurrogate {
    pub fn new(data: Dataset) -> Self {
        let d = data.obs_dim();
        Self { data, d }
    }
}

impl SurrogateOracle for KalmanSurrogate {
    fn loglik(&self, theta: &[f64]) -> Result<f64> {
        match theta {
            [t] => kalman_loglik(&self.data, *t, self.d),
            _ => Err(Error::invalid("the Kalman surrogate takes one parameter")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_dataset, DatasetMeta, Lgss};

    fn data_from(values: Vec<f64>, d: usize) -> Dataset {
        let t = values.len() / d;
        Dataset::new(
            values,
            d,
            DatasetMeta {
                model: "lgss".into(),
                theta: None,
                seed: None,
                t,
                d,
            },
        )
        .unwrap()
    }

    /// Builds the full covariance of `y_1:T` and evaluates the joint normal density.
    fn joint_gaussian_loglik(data: &Dataset, theta: f64, d: usize) -> f64 {
        let t_len = data.len();
        let a = build_lgss_a(theta, d).unwrap();
        let eye = DMatrix::<f64>::identity(d, d);
        let mut marg = vec![eye.clone()];
        for t in 1..t_len {
            marg.push(&a * &marg[t - 1] * a.transpose() + &eye);
        }
        let n = t_len * d;
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for s in 0..t_len {
            let mut block = marg[s].clone();
            for t in s..t_len {
                // Cov(X_t, X_s) = A^(t-s) Var(X_s)
                let b = if t == s { &block + &eye } else { block.clone() };
                cov.view_mut((t * d, s * d), (d, d)).copy_from(&b);
                cov.view_mut((s * d, t * d), (d, d))
                    .copy_from(&b.transpose());
                block = &a * &block;
            }
        }
        let y = DVector::from_column_slice(data.values());
        let chol = cov.cholesky().unwrap();
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * (n as f64 * LN_2PI + log_det + y.dot(&chol.solve(&y)))
    }

    #[test]
    fn single_observation_at_zero() {
        let v = kalman_loglik(&data_from(vec![0.0], 1), 0.0, 1).unwrap();
        assert!((v + 0.5 * (4.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        assert!((v + 1.26551).abs() < 1e-5);
    }

    #[test]
    fn independent_observations_when_theta_is_zero() {
        let ys = vec![0.3, -1.2, 2.0, 0.7];
        let v = kalman_loglik(&data_from(ys.clone(), 1), 0.0, 1).unwrap();
        let expected: f64 = ys
            .iter()
            .map(|y| crate::stats::normal_logpdf(*y, 0.0, 2f64.sqrt()))
            .sum();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn agrees_with_joint_gaussian_density() {
        for (d, t) in [(1, 10), (2, 10), (3, 7)] {
            let m = Lgss::new(d).unwrap();
            for theta in [0.4, -0.3] {
                let data = simulate_dataset(&m, &[theta], t, 17).unwrap();
                let k = kalman_loglik(&data, theta, d).unwrap();
                let j = joint_gaussian_loglik(&data, theta, d);
                assert!((k - j).abs() < 1e-8, "d={d} theta={theta}: {k} vs {j}");
            }
        }
    }

    #[test]
    fn smooth_in_theta() {
        let data = simulate_dataset(&Lgss::new(1).unwrap(), &[0.4], 100, 3).unwrap();
        let f = |t: f64| kalman_loglik(&data, t, 1).unwrap();
        let h = 1e-5;
        let d1 = (f(0.4 + h) - f(0.4 - h)) / (2.0 * h);
        let d2 = (f(0.4 + 2.0 * h) - f(0.4 - 2.0 * h)) / (4.0 * h);
        assert!(d1.is_finite() && (d1 - d2).abs() < 1e-3 * d1.abs().max(1.0));
    }

    #[test]
    fn surrogate_is_the_kalman_likelihood() {
        let data = simulate_dataset(&Lgss::new(2).unwrap(), &[0.4], 20, 5).unwrap();
        let s = KalmanSurrogate::new(data.clone());
        let a = s.loglik(&[0.4]).unwrap();
        assert_eq!(a.to_bits(), s.loglik(&[0.4]).unwrap().to_bits());
        assert_eq!(a.to_bits(), kalman_loglik(&data, 0.4, 2).unwrap().to_bits());
        assert!(s.loglik(&[1.5]).is_err());
    }
}
