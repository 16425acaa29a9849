use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DisturbanceModel;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Descriptive metadata stored in the JSON sidecar of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub model: String,
    /// Generating parameters (constrained), when simulated.
    pub theta: Option<Vec<f64>>,
    pub seed: Option<u64>,
    #[serde(rename = "T")]
    pub t: usize,
    pub d: usize,
}

/// Observations `y_1..y_T`, stored row-major as a `T x obs_dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    obs_dim: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(values: Vec<f64>, obs_dim: usize, meta: DatasetMeta) -> Result<Self> {
        if obs_dim == 0 || values.is_empty() || !values.len().is_multiple_of(obs_dim) {
            return Err(Error::invalid(format!(
                "{} values cannot form a T x {obs_dim} matrix with T >= 1",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "observation {} (row {}) is not finite",
                i % obs_dim + 1,
                i / obs_dim + 1
            )));
        }
        Ok(Self {
            values,
            obs_dim,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.obs_dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    /// Observation at 0-based time `t`.
    #[inline]
    pub fn y(&self, t: usize) -> &[f64] {
        &self.values[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// CSV encoding with header `t,y1,...,yk`; floats use the shortest round-trip form.
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.obs_dim).map(|k| format!("y{k}")));
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut row = vec![(t + 1).to_string()];
            row.extend(self.y(t).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.into_inner()
            .map_err(|e| Error::parse("dataset csv", e.to_string()))
    }

    /// Hex SHA-256 of the CSV encoding.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_csv_bytes()?)))
    }

    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// Writes the CSV and its JSON metadata sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        fs::write(csv_path, self.to_csv_bytes()?).map_err(|e| Error::io(csv_path, e))?;
        let side = Self::sidecar_path(csv_path);
        fs::write(&side, serde_json::to_vec_pretty(&self.meta)?).map_err(|e| Error::io(&side, e))
    }

    /// Reads a CSV dataset; the sidecar is used when present.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let bytes = fs::read(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let ctx = csv_path.display().to_string();
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let header = r.headers()?.clone();
        let k = header.len().saturating_sub(1);
        let valid = header.get(0) == Some("t")
            && k >= 1
            && (1..=k).all(|i| header.get(i) == Some(format!("y{i}").as_str()));
        if !valid {
            return Err(Error::parse(ctx, "header must be `t,y1,...,yk`"));
        }
        let mut values = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            for (col, field) in rec.iter().enumerate().skip(1) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::parse(
                        &ctx,
                        format!(
                            "row {}, column `{}`: `{field}` is not a number",
                            row + 1,
                            &header[col]
                        ),
                    )
                })?;
                values.push(v);
            }
        }
        let side = Self::sidecar_path(csv_path);
        let meta = if side.exists() {
            let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
            serde_json::from_slice(&text)?
        } else {
            DatasetMeta {
                model: "unknown".into(),
                theta: None,
                seed: None,
                t: values.len() / k.max(1),
                d: k,
            }
        };
        Dataset::new(values, k, meta).map_err(|e| Error::parse(ctx, e.to_string()))
    }
}

/// Forward-simulates `T` observations at constrained `theta`. Deterministic per seed.
pub fn simulate_dataset<M: DisturbanceModel>(
    model: &M,
    theta: &[f64],
    t_len: usize,
    seed: u64,
) -> Result<Dataset> {
    if t_len == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    let params = model.prepare(theta)?;
    let mut rng = rng::stream(seed, &[streams::SIMULATION]);
    let (d, ne, k) = (model.state_dim(), model.disturbance_dim(), model.obs_dim());
    let init: Vec<f64> = (0..model.init_dim())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let mut z = vec![0.0; d];
    model.initial_state(&params, &init, &mut z);
    let mut next = vec![0.0; d];
    let mut eps = vec![0.0; ne];
    let mut y = vec![0.0; k];
    let mut values = Vec::with_capacity(t_len * k);
    let mut telemetry = Default::default();
    for _ in 0..t_len {
        eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
        model.transition(&params, &z, &eps, &mut next, &mut telemetry);
        std::mem::swap(&mut z, &mut next);
        model.sample_obs(&params, &z, &mut rng, &mut y);
        values.extend_from_slice(&y);
    }
    Dataset::new(
        values,
        k,
        DatasetMeta {
            model: model.id().to_string(),
            theta: Some(theta.to_vec()),
            seed: Some(seed),
            t: t_len,
            d: model.state_dim(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Lgss, Svm};
    use crate::stats;

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let m = Lgss::new(1).unwrap();
        let a = simulate_dataset(&m, &[0.4], 3, 7).unwrap();
        let b = simulate_dataset(&m, &[0.4], 3, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate_dataset(&m, &[0.4], 3, 8).unwrap());
        assert!(simulate_dataset(&m, &[0.4], 0, 7).is_err());
    }

    #[test]
    fn independent_lgss_observations_have_variance_two() {
        let m = Lgss::new(1).unwrap();
        let data = simulate_dataset(&m, &[0.0], 200_000, 11).unwrap();
        let v = stats::variance(data.values());
        // sd of the sample variance is about 2 sqrt(2 / n) = 0.0063
        assert!((v - 2.0).abs() < 0.03, "variance {v}");
        assert!(stats::mean(data.values()).abs() < 0.02);
    }

    #[test]
    fn frozen_volatility_gives_constant_variance() {
        // With tau2 -> 0 and h started near the fixed point log(mu), e^h stays at mu.
        let m = Svm::new(1, 3).unwrap();
        let params = m.prepare(&[2.0, 1.0, 1e-300, 0.0]).unwrap();
        let mut tel = Default::default();
        let mut h = [0.0];
        let mut next = [0.0];
        for _ in 0..50 {
            m.transition(&params, &h, &[3.0, -2.0, 1.0], &mut next, &mut tel);
            h = next;
            assert!(h[0].abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_and_header_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let m = Svm::new(3, 2).unwrap();
        let data = simulate_dataset(&m, &[2.0, 1.81, 0.38, 0.01], 10, 3).unwrap();
        data.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, data);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,y1,y2,y3\n1,"));

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "t,z1\n1,0.5\n").unwrap();
        assert!(matches!(Dataset::load(&bad), Err(Error::Parse { .. })));
        std::fs::write(&bad, "t,y1\n1,abc\n").unwrap();
        let msg = Dataset::load(&bad).unwrap_err().to_string();
        assert!(msg.contains("`y1`"), "{msg}");
    }
}
