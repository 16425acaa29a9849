//! MCMC drivers: block-correlated MPM, its auxiliary-proposal and delayed
//! acceptance variants, correlated PMMH, and exact-likelihood MH.

mod chain;
mod proposal;

pub use chain::{log_acceptance_ratio, run_chain, INIT_ATTEMPTS};
pub use proposal::{
    adapt_scale, scale_step_constant, AdaptiveRw, Proposal, ADAPTATION_THRESHOLD, SCALED_WEIGHT,
};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{AdpfSchedule, SortPayload, DEFAULT_PI};
use crate::model::FilterTelemetry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Mpm,
    MpmAdpf,
    DaMpm,
    Cpm,
    ExactMh,
}

impl SamplerKind {
    pub fn uses_filters(self) -> bool {
        !matches!(self, SamplerKind::ExactMh)
    }

    pub fn needs_surrogate(self) -> bool {
        matches!(self, SamplerKind::DaMpm | SamplerKind::ExactMh)
    }
}

fn default_s() -> usize {
    100
}
fn default_n() -> usize {
    100
}
fn default_rho() -> f64 {
    0.9
}
fn default_iterations() -> usize {
    25_000
}
fn default_warmup() -> usize {
    5_000
}
fn default_target() -> f64 {
    0.2
}
fn default_pi() -> f64 {
    DEFAULT_PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    #[serde(rename = "S", default = "default_s")]
    pub num_filters: usize,
    #[serde(rename = "N", default = "default_n")]
    pub num_particles: usize,
    #[serde(default = "default_rho")]
    pub rho_u: f64,
    #[serde(default)]
    pub trim: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Delayed acceptance only.
    #[serde(default = "default_target")]
    pub target_acceptance: f64,
    #[serde(default)]
    pub sort_payload: SortPayload,
    #[serde(default)]
    pub seed: u64,
    /// Starting point in constrained coordinates; a prior draw when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default = "default_pi")]
    pub adpf_pi: f64,
    /// Stop proposal adaptation once warmup ends.
    #[serde(default)]
    pub freeze_adaptation: bool,
    /// Stop rebuilding the auxiliary proposal once warmup ends.
    #[serde(default)]
    pub freeze_schedule: bool,
    /// Keep every iteration's per-filter estimates.
    #[serde(default)]
    pub keep_panels: bool,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind) -> Self {
        Self {
            kind,
            num_filters: default_s(),
            num_particles: default_n(),
            rho_u: default_rho(),
            trim: 0.0,
            iterations: default_iterations(),
            warmup: default_warmup(),
            target_acceptance: default_target(),
            sort_payload: SortPayload::State,
            seed: 0,
            theta0: None,
            adpf_pi: default_pi(),
            freeze_adaptation: false,
            freeze_schedule: false,
            keep_panels: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.num_filters == 0 {
            return fail("S must be at least 1".into());
        }
        if self.num_particles == 0 {
            return fail("N must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.rho_u) {
            return fail(format!("rho_u = {} is outside [0, 1]", self.rho_u));
        }
        if !(0.0..=0.5).contains(&self.trim) {
            return fail(format!("trim = {} is outside [0, 0.5]", self.trim));
        }
        if self.warmup >= self.iterations && self.warmup != 0 {
            return fail(format!(
                "warmup {} must be below the iteration count {}",
                self.warmup, self.iterations
            ));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return fail(format!(
                "target acceptance {} is outside (0, 1)",
                self.target_acceptance
            ));
        }
        if !(self.adpf_pi > 0.0 && self.adpf_pi <= 1.0) {
            return fail(format!("adpf_pi = {} is outside (0, 1]", self.adpf_pi));
        }
        if self.kind == SamplerKind::MpmAdpf && self.num_filters < 2 {
            return fail("mpm_adpf needs S >= 2 to fit its proposal".into());
        }
        if let Some(t) = &self.theta0 {
            if t.iter().any(|v| !v.is_finite()) {
                return fail("theta0 must be finite".into());
            }
        }
        Ok(())
    }

    /// Applies the settings implied by the sampler kind: CPM runs one untrimmed filter.
    pub fn normalized(mut self) -> Self {
        if self.kind == SamplerKind::Cpm {
            self.num_filters = 1;
            self.trim = 0.0;
        }
        self
    }
}

/// One saved iteration of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub iteration: usize,
    /// Constrained parameters.
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub accepted: bool,
    /// Delayed acceptance only.
    pub stage1_accepted: Option<bool>,
    pub elapsed_ns: u64,
}

/// Mean `||mu_t||` and `tr(Sigma_t)` of the auxiliary proposal in force at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub iteration: usize,
    pub mean_norm: f64,
    pub mean_trace: f64,
}

/// Counters gathered over a whole run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub init_attempts: usize,
    /// Combined estimates computed, each running `S` filters.
    pub likelihood_evaluations: u64,
    pub surrogate_evaluations: u64,
    pub telemetry: FilterTelemetry,
    /// Mean of the finite second-stage log ratios under delayed acceptance.
    pub stage2_log_ratio_mean: Option<f64>,
    pub final_scale: f64,
    pub schedule_trace: Vec<ScheduleSummary>,
}

/// Iteration-indexed output of [`run_chain`]; row 0 is the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub kind: SamplerKind,
    pub param_names: Vec<String>,
    pub rows: Vec<ChainRow>,
    pub stats: ChainStats,
    /// Per-filter estimates of the current state, when requested.
    pub panels: Option<Vec<Vec<f64>>>,
    /// Auxiliary proposal fitted at the last iteration of an ADPF run.
    #[serde(default)]
    pub schedule: Option<AdpfSchedule>,
}

impl ChainRecord {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Rows after the first `warmup` iterations.
    pub fn post_warmup(&self, warmup: usize) -> &[ChainRow] {
        let start = (warmup + 1).min(self.rows.len());
        &self.rows[start..]
    }

    /// Draws of parameter `k` after warmup.
    pub fn param_series(&self, k: usize, warmup: usize) -> Vec<f64> {
        self.post_warmup(warmup)
            .iter()
            .map(|r| r.theta[k])
            .collect()
    }

    pub fn acceptance_rate(&self, warmup: usize) -> f64 {
        let rows = self.post_warmup(warmup);
        rows.iter().filter(|r| r.accepted).count() as f64 / rows.len().max(1) as f64
    }

    /// Mean wall-clock seconds per iteration after warmup.
    pub fn seconds_per_iteration(&self, warmup: usize) -> f64 {
        let rows = self.post_warmup(warmup);
        rows.iter().map(|r| r.elapsed_ns as f64).sum::<f64>() / rows.len().max(1) as f64 * 1e-9
    }

    fn has_stage1(&self) -> bool {
        self.kind == SamplerKind::DaMpm
    }

    /// Header `iteration,<params>,loglik,accepted[,stage1_accepted],elapsed_ns`.
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["iteration".to_string()];
        header.extend(self.param_names.iter().cloned());
        header.extend(["loglik".into(), "accepted".into()]);
        if self.has_stage1() {
            header.push("stage1_accepted".into());
        }
        header.push("elapsed_ns".into());
        w.write_record(&header)?;
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        for r in &self.rows {
            let mut rec = vec![r.iteration.to_string()];
            rec.extend(r.theta.iter().map(|v| v.to_string()));
            rec.push(r.loglik.to_string());
            rec.push(flag(r.accepted));
            if self.has_stage1() {
                rec.push(flag(r.stage1_accepted.unwrap_or(false)));
            }
            rec.push(r.elapsed_ns.to_string());
            w.write_record(&rec)?;
        }
        w.into_inner()
            .map_err(|e| Error::parse("chain csv", e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// Reads a chain CSV. Run statistics are not part of the file and come back empty.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_bytes(&bytes, &path.display().to_string())
    }

    pub fn from_csv_bytes(bytes: &[u8], ctx: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let missing = |name: &str| Error::parse(ctx, format!("missing column `{name}`"));
        if header.first().map(String::as_str) != Some("iteration") {
            return Err(missing("iteration"));
        }
        let ll_col = col("loglik").ok_or_else(|| missing("loglik"))?;
        let acc_col = col("accepted").ok_or_else(|| missing("accepted"))?;
        let el_col = col("elapsed_ns").ok_or_else(|| missing("elapsed_ns"))?;
        let s1_col = col("stage1_accepted");
        if ll_col < 2 || acc_col != ll_col + 1 {
            return Err(Error::parse(
                ctx,
                "expected parameter columns followed by `loglik,accepted`",
            ));
        }
        let param_names = header[1..ll_col].to_vec();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |c: usize| rec.get(c).unwrap_or("").trim();
            let bad = |c: usize| {
                Error::parse(
                    ctx,
                    format!("row {}, column `{}`: `{}`", i + 1, header[c], field(c)),
                )
            };
            let num = |c: usize| field(c).parse::<f64>().map_err(|_| bad(c));
            let flag = |c: usize| match field(c) {
                "1" | "true" => Ok(true),
                "0" | "false" => Ok(false),
                _ => Err(bad(c)),
            };
            rows.push(ChainRow {
                iteration: field(0).parse().map_err(|_| bad(0))?,
                theta: (1..ll_col).map(num).collect::<Result<_>>()?,
                loglik: num(ll_col)?,
                accepted: flag(acc_col)?,
                stage1_accepted: s1_col.map(flag).transpose()?,
                elapsed_ns: field(el_col).parse().map_err(|_| bad(el_col))?,
            });
        }
        Ok(Self {
            kind: if s1_col.is_some() {
                SamplerKind::DaMpm
            } else {
                SamplerKind::Mpm
            },
            param_names,
            rows,
            stats: ChainStats::default(),
            panels: None,
            schedule: None,
        })
    }
}
