use std::time::Instant;

use rand::Rng;

use super::proposal::{adapt_scale, AdaptiveRw};
use super::{ChainRecord, ChainRow, ChainStats, SamplerConfig, SamplerKind, ScheduleSummary};
use crate::crn::{crn_init, refresh_into, select_block, CrnBlockSet};
use crate::error::{Error, Result};
use crate::estimator::{evaluate_filters, trimmed_mean_loglik};
use crate::filter::{build_adpf_schedule, AdpfSchedule, CrnShape, FilterCrn, ParticleSystem};
use crate::kalman::SurrogateOracle;
use crate::model::{
    log_prior_unconstrained, to_constrained, to_unconstrained, Dataset, DisturbanceModel,
};
use crate::rng::{self, streams, StreamRng};

/// Starting points tried before giving up on initialisation.
pub const INIT_ATTEMPTS: usize = 100;

/// `log` of the MH ratio for a symmetric proposal. Any `-inf` on the proposal side rejects.
pub fn log_acceptance_ratio(
    loglik_new: f64,
    log_prior_new: f64,
    loglik_old: f64,
    log_prior_old: f64,
) -> f64 {
    if loglik_new == f64::NEG_INFINITY || log_prior_new == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    (loglik_new + log_prior_new) - (loglik_old + log_prior_old)
}

fn accept(log_u: f64, log_alpha: f64) -> bool {
    log_u < log_alpha
}

struct Evaluation {
    combined: f64,
    logliks: Vec<f64>,
    systems: Vec<ParticleSystem>,
}

impl Evaluation {
    fn rejected() -> Self {
        Self {
            combined: f64::NEG_INFINITY,
            logliks: Vec::new(),
            systems: Vec::new(),
        }
    }
}

struct Chain<'a, M: DisturbanceModel> {
    model: &'a M,
    data: &'a Dataset,
    config: &'a SamplerConfig,
    surrogate: Option<&'a dyn SurrogateOracle>,
    x: Vec<f64>,
    log_prior: f64,
    loglik: f64,
    surrogate_loglik: f64,
    panel: Vec<f64>,
    blocks: Option<CrnBlockSet>,
    spare: Option<FilterCrn>,
    /// Proposal used by the next filter evaluation.
    schedule: Option<AdpfSchedule>,
    /// Proposal under which `loglik` was computed.
    record_schedule: Option<AdpfSchedule>,
    rw: AdaptiveRw,
    rng: StreamRng,
    crn_rng: StreamRng,
    trace_rng: StreamRng,
    stats: ChainStats,
    stage2_sum: f64,
    stage2_count: u64,
}

impl<'a, M: DisturbanceModel> Chain<'a, M> {
    fn shape(&self) -> CrnShape {
        CrnShape::for_model(self.model, self.data.len(), self.config.num_particles)
    }

    fn surrogate(&self) -> Result<&'a dyn SurrogateOracle> {
        self.surrogate.ok_or_else(|| {
            Error::invalid(format!(
                "{:?} needs a surrogate likelihood",
                self.config.kind
            ))
        })
    }

    fn surrogate_loglik(&mut self, theta: &[f64]) -> Result<f64> {
        let s = self.surrogate()?;
        self.stats.surrogate_evaluations += 1;
        Ok(match s.loglik(theta) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        })
    }

    /// Runs every filter at `theta` on the current blocks with the pending schedule.
    fn evaluate(&mut self, theta: &[f64], keep_systems: bool) -> Result<Evaluation> {
        let Ok(params) = self.model.prepare(theta) else {
            return Ok(Evaluation::rejected());
        };
        let blocks = self
            .blocks
            .as_ref()
            .ok_or_else(|| Error::Invariant("chain has no CRN blocks".into()))?;
        let refs: Vec<&FilterCrn> = blocks.blocks().iter().collect();
        let batch = evaluate_filters(
            self.model,
            &params,
            &refs,
            self.schedule.as_ref(),
            self.data,
            self.config.sort_payload,
            keep_systems,
        )?;
        self.stats.likelihood_evaluations += 1;
        self.stats.telemetry.merge(&batch.telemetry);
        Ok(Evaluation {
            combined: trimmed_mean_loglik(&batch.logliks, self.config.trim)?,
            logliks: batch.logliks,
            systems: batch.systems,
        })
    }

    fn is_adpf(&self) -> bool {
        self.config.kind == SamplerKind::MpmAdpf
    }

    /// Fits the proposal for the next iteration from the filters just run.
    fn refit_schedule(&mut self, systems: &[ParticleSystem], iteration: usize) -> Result<()> {
        if !self.is_adpf() || systems.len() < 2 {
            return Ok(());
        }
        if self.config.freeze_schedule && iteration > self.config.warmup && self.schedule.is_some()
        {
            return Ok(());
        }
        self.schedule = Some(build_adpf_schedule(
            systems,
            self.config.adpf_pi,
            &mut self.trace_rng,
            &mut self.stats.telemetry,
        )?);
        Ok(())
    }

    /// Replaces one block by its correlated refresh; returns the block index.
    fn refresh_block(&mut self) -> Result<usize> {
        let blocks = self
            .blocks
            .as_mut()
            .ok_or_else(|| Error::Invariant("chain has no CRN blocks".into()))?;
        let s = select_block(blocks.len(), &mut self.rng)?;
        let spare = self
            .spare
            .as_mut()
            .ok_or_else(|| Error::Invariant("missing spare block".into()))?;
        refresh_into(blocks.block(s), blocks.rho_u, &mut self.crn_rng, spare);
        blocks.swap_block(s, spare)?;
        Ok(s)
    }

    fn restore_block(&mut self, s: usize) -> Result<()> {
        match (self.blocks.as_mut(), self.spare.as_mut()) {
            (Some(b), Some(spare)) => b.swap_block(s, spare),
            _ => Err(Error::Invariant("missing CRN blocks".into())),
        }
    }

    fn adopt(&mut self, x: Vec<f64>, log_prior: f64, eval: Evaluation) {
        self.x = x;
        self.log_prior = log_prior;
        self.loglik = eval.combined;
        self.panel = eval.logliks;
        self.record_schedule = self.schedule.clone();
    }

    /// One MPM (or CPM, or auxiliary-proposal MPM) transition.
    fn mpm_step(&mut self, iteration: usize) -> Result<bool> {
        let prop = self.rw.propose(&self.x, &mut self.rng);
        let log_u = self.rng.random::<f64>().ln();
        let lp_new = log_prior_unconstrained(self.model, &prop.x);
        if lp_new == f64::NEG_INFINITY {
            return Ok(false);
        }
        let s = self.refresh_block()?;
        let theta = to_constrained(self.model, &prop.x);
        let keep = self.is_adpf();
        let mut eval = self.evaluate(&theta, keep)?;
        let systems = std::mem::take(&mut eval.systems);
        let log_alpha = log_acceptance_ratio(eval.combined, lp_new, self.loglik, self.log_prior);
        let accepted = accept(log_u, log_alpha);
        if accepted {
            self.adopt(prop.x, lp_new, eval);
        } else {
            self.restore_block(s)?;
        }
        self.refit_schedule(&systems, iteration)?;
        Ok(accepted)
    }

    /// Delayed acceptance: a surrogate screen, then the filters only for survivors.
    /// Returns `(accepted, stage1_accepted)`.
    fn da_mpm_step(&mut self) -> Result<(bool, bool)> {
        let prop = self.rw.propose(&self.x, &mut self.rng);
        let log_u1 = self.rng.random::<f64>().ln();
        let log_u2 = self.rng.random::<f64>().ln();
        let lp_new = log_prior_unconstrained(self.model, &prop.x);
        if lp_new == f64::NEG_INFINITY {
            return Ok((false, false));
        }
        let theta = to_constrained(self.model, &prop.x);
        let lc_new = self.surrogate_loglik(&theta)?;
        let stage1 = log_acceptance_ratio(lc_new, lp_new, self.surrogate_loglik, self.log_prior);
        if !accept(log_u1, stage1) {
            return Ok((false, false));
        }
        let s = self.refresh_block()?;
        let eval = self.evaluate(&theta, false)?;
        let stage2 = if eval.combined == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            (eval.combined + self.surrogate_loglik) - (self.loglik + lc_new)
        };
        if stage2.is_finite() {
            self.stage2_sum += stage2;
            self.stage2_count += 1;
        }
        let accepted = accept(log_u2, stage2);
        if accepted {
            self.surrogate_loglik = lc_new;
            self.adopt(prop.x, lp_new, eval);
        } else {
            self.restore_block(s)?;
        }
        Ok((accepted, true))
    }

    /// Metropolis-Hastings with the surrogate as the exact likelihood.
    fn exact_mh_step(&mut self) -> Result<bool> {
        let prop = self.rw.propose(&self.x, &mut self.rng);
        let log_u = self.rng.random::<f64>().ln();
        let lp_new = log_prior_unconstrained(self.model, &prop.x);
        if lp_new == f64::NEG_INFINITY {
            return Ok(false);
        }
        let theta = to_constrained(self.model, &prop.x);
        let ll_new = self.surrogate_loglik(&theta)?;
        let accepted = accept(
            log_u,
            log_acceptance_ratio(ll_new, lp_new, self.loglik, self.log_prior),
        );
        if accepted {
            self.x = prop.x;
            self.log_prior = lp_new;
            self.loglik = ll_new;
        }
        Ok(accepted)
    }

    /// Tries one starting point; `Ok(false)` when its likelihood or prior vanishes.
    fn try_init(&mut self, theta: &[f64], attempt: usize) -> Result<bool> {
        let Ok(x) = to_unconstrained(self.model, theta) else {
            return Ok(false);
        };
        let lp = log_prior_unconstrained(self.model, &x);
        if lp == f64::NEG_INFINITY {
            return Ok(false);
        }
        let theta = to_constrained(self.model, &x);
        self.schedule = None;
        let (ll, lc, eval) = match self.config.kind {
            SamplerKind::ExactMh => {
                let ll = self.surrogate_loglik(&theta)?;
                (ll, ll, Evaluation::rejected())
            }
            kind => {
                let shape = self.shape();
                let seed = rng::derive_seed(self.config.seed, &[streams::CRN_INIT, attempt as u64]);
                self.blocks = Some(crn_init(
                    self.config.num_filters,
                    shape,
                    self.config.rho_u,
                    seed,
                )?);
                self.spare
                    .get_or_insert(FilterCrn::from_values(shape, vec![0.0; shape.len()])?);
                let mut eval = self.evaluate(&theta, self.is_adpf())?;
                let lc = if kind == SamplerKind::DaMpm {
                    self.surrogate_loglik(&theta)?
                } else {
                    0.0
                };
                if lc == f64::NEG_INFINITY {
                    eval.combined = f64::NEG_INFINITY;
                }
                (eval.combined, lc, eval)
            }
        };
        if ll == f64::NEG_INFINITY {
            return Ok(false);
        }
        self.surrogate_loglik = lc;
        let mut eval = eval;
        let systems = std::mem::take(&mut eval.systems);
        if self.config.kind.uses_filters() {
            self.adopt(x, lp, eval);
        } else {
            self.x = x;
            self.log_prior = lp;
        }
        self.loglik = ll;
        self.refit_schedule(&systems, 0)?;
        Ok(true)
    }

    fn row(
        &self,
        iteration: usize,
        accepted: bool,
        stage1: Option<bool>,
        elapsed_ns: u64,
    ) -> ChainRow {
        ChainRow {
            iteration,
            theta: to_constrained(self.model, &self.x),
            loglik: self.loglik,
            accepted,
            stage1_accepted: stage1,
            elapsed_ns,
        }
    }

    fn schedule_summary(&self, iteration: usize) -> Option<ScheduleSummary> {
        self.record_schedule.as_ref().map(|s| {
            let (mean_norm, mean_trace) = s.summary();
            ScheduleSummary {
                iteration,
                mean_norm,
                mean_trace,
            }
        })
    }

    /// Validates inputs and finds a starting point with a finite likelihood.
    fn start(
        config: &'a SamplerConfig,
        model: &'a M,
        data: &'a Dataset,
        surrogate: Option<&'a dyn SurrogateOracle>,
    ) -> Result<Self> {
        config.validate()?;
        if config.kind.needs_surrogate() && surrogate.is_none() {
            return Err(Error::invalid(format!(
                "{:?} needs a surrogate likelihood",
                config.kind
            )));
        }
        if let Some(t0) = &config.theta0 {
            if t0.len() != model.num_params() {
                return Err(Error::invalid(format!(
                    "theta0 has {} entries, {} expects {}",
                    t0.len(),
                    model.id(),
                    model.num_params()
                )));
            }
        }
        if data.obs_dim() != model.obs_dim() {
            return Err(Error::invalid(format!(
                "data has {} columns, the model observes {}",
                data.obs_dim(),
                model.obs_dim()
            )));
        }
        let seed = config.seed;
        let mut chain = Chain {
            model,
            data,
            config,
            surrogate,
            x: Vec::new(),
            log_prior: f64::NEG_INFINITY,
            loglik: f64::NEG_INFINITY,
            surrogate_loglik: f64::NEG_INFINITY,
            panel: Vec::new(),
            blocks: None,
            spare: None,
            schedule: None,
            record_schedule: None,
            rw: AdaptiveRw::new(model.num_params()),
            rng: rng::stream(seed, &[streams::CHAIN]),
            crn_rng: rng::stream(seed, &[streams::CRN_UPDATE]),
            trace_rng: rng::stream(seed, &[streams::TRACE]),
            stats: ChainStats::default(),
            stage2_sum: 0.0,
            stage2_count: 0,
        };
        let mut prior_rng = rng::stream(seed, &[streams::PRIOR_INIT]);
        for attempt in 0..INIT_ATTEMPTS {
            let theta = match (&config.theta0, attempt) {
                (Some(t0), 0) => t0.clone(),
                _ => model.sample_prior(&mut prior_rng),
            };
            if chain.try_init(&theta, attempt)? {
                chain.stats.init_attempts = attempt + 1;
                chain.rw.record(&chain.x);
                return Ok(chain);
            }
        }
        Err(Error::InitializationFailure {
            attempts: INIT_ATTEMPTS,
        })
    }

    /// Iteration `p >= 1` of the configured kernel; returns `(accepted, stage1_accepted)`.
    fn step(&mut self, p: usize) -> Result<(bool, Option<bool>)> {
        let config = self.config;
        if config.freeze_adaptation && p > config.warmup {
            self.rw.frozen = true;
        }
        let out = match config.kind {
            SamplerKind::Mpm | SamplerKind::MpmAdpf | SamplerKind::Cpm => (self.mpm_step(p)?, None),
            SamplerKind::DaMpm => {
                let scaled = self.rw.count() >= super::ADAPTATION_THRESHOLD;
                let (a, s1) = self.da_mpm_step()?;
                if scaled && !self.rw.frozen {
                    let dim = self.model.num_params();
                    self.rw.scale = adapt_scale(self.rw.scale, a, p, config.target_acceptance, dim);
                }
                (a, Some(s1))
            }
            SamplerKind::ExactMh => (self.exact_mh_step()?, None),
        };
        if self.loglik.is_nan() || self.loglik == f64::NEG_INFINITY {
            return Err(Error::Invariant(format!(
                "current log-likelihood is {} at iteration {p}",
                self.loglik
            )));
        }
        self.rw.record(&self.x);
        Ok(out)
    }
}

/// Runs the configured sampler for `config.iterations` steps after an initial evaluation.
///
/// `surrogate` is required by delayed acceptance (first-stage screen) and by
/// exact MH (where it is the likelihood). Reproducible per `config.seed`
/// except for the wall-clock column.
pub fn run_chain<M: DisturbanceModel>(
    config: &SamplerConfig,
    model: &M,
    data: &Dataset,
    surrogate: Option<&dyn SurrogateOracle>,
) -> Result<ChainRecord> {
    let config = config.clone().normalized();
    let start = Instant::now();
    let mut chain = Chain::start(&config, model, data, surrogate)?;

    let da = config.kind == SamplerKind::DaMpm;
    let mut rows = Vec::with_capacity(config.iterations + 1);
    rows.push(chain.row(
        0,
        false,
        da.then_some(false),
        start.elapsed().as_nanos() as u64,
    ));
    let mut panels = config.keep_panels.then(|| vec![chain.panel.clone()]);
    let mut schedule_trace = Vec::new();
    for p in 1..=config.iterations {
        let t0 = Instant::now();
        let (accepted, stage1) = chain.step(p)?;
        if let Some(ps) = panels.as_mut() {
            ps.push(chain.panel.clone());
        }
        schedule_trace.extend(chain.schedule_summary(p));
        rows.push(chain.row(p, accepted, stage1, t0.elapsed().as_nanos() as u64));
    }

    let mut stats = chain.stats;
    stats.final_scale = chain.rw.scale;
    stats.schedule_trace = schedule_trace;
    stats.stage2_log_ratio_mean =
        (chain.stage2_count > 0).then(|| chain.stage2_sum / chain.stage2_count as f64);
    Ok(ChainRecord {
        kind: config.kind,
        param_names: model.param_names().into_iter().map(String::from).collect(),
        rows,
        stats,
        panels,
        schedule: chain.schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::KalmanSurrogate;
    use crate::model::{simulate_dataset, Lgss};

    struct Hopeless;

    impl SurrogateOracle for Hopeless {
        fn loglik(&self, _: &[f64]) -> Result<f64> {
            Ok(f64::NEG_INFINITY)
        }
    }

    fn setup(t: usize) -> (Lgss, Dataset) {
        let m = Lgss::new(1).unwrap();
        let data = simulate_dataset(&m, &[0.4], t, 21).unwrap();
        (m, data)
    }

    fn config(kind: SamplerKind, s: usize, n: usize, iterations: usize) -> SamplerConfig {
        SamplerConfig {
            num_filters: s,
            num_particles: n,
            iterations,
            warmup: iterations / 5,
            seed: 3,
            theta0: Some(vec![0.3]),
            ..SamplerConfig::new(kind)
        }
    }

    #[test]
    fn acceptance_ratio_closed_form() {
        let v = log_acceptance_ratio(-10.25, -1.5, -11.0, -0.75);
        assert!((v - ((-10.25 - 1.5) - (-11.0 - 0.75))).abs() < 1e-12);
        assert_eq!(log_acceptance_ratio(-3.0, -1.0, -3.0, -1.0), 0.0);
        assert_eq!(
            log_acceptance_ratio(-3.0, f64::NEG_INFINITY, -3.0, -1.0),
            f64::NEG_INFINITY
        );
        assert_eq!(
            log_acceptance_ratio(f64::NEG_INFINITY, 0.0, -3.0, -1.0),
            f64::NEG_INFINITY
        );
        // A zero log ratio is accepted for every uniform in [0, 1).
        assert!(accept(0.0f64.ln(), 0.0) && accept((1.0 - f64::EPSILON).ln(), 0.0));
        assert!(!accept(0.0f64.ln(), f64::NEG_INFINITY));
    }

    #[test]
    fn same_theta_and_frozen_blocks_reproduce_the_estimate() {
        let (m, data) = setup(20);
        let cfg = SamplerConfig {
            rho_u: 1.0,
            ..config(SamplerKind::Mpm, 5, 30, 0)
        };
        let mut chain = Chain::start(&cfg, &m, &data, None).unwrap();
        chain.refresh_block().unwrap();
        let theta = to_constrained(&m, &chain.x);
        let again = chain.evaluate(&theta, false).unwrap();
        assert_eq!(again.combined.to_bits(), chain.loglik.to_bits());
        let log_alpha = log_acceptance_ratio(
            again.combined,
            chain.log_prior,
            chain.loglik,
            chain.log_prior,
        );
        assert_eq!(log_alpha, 0.0);
    }

    #[test]
    fn rejection_restores_state_and_one_block_moves() {
        let (m, data) = setup(20);
        let cfg = config(SamplerKind::Mpm, 4, 20, 200);
        let mut chain = Chain::start(&cfg, &m, &data, None).unwrap();
        let (mut rejected, mut accepted) = (0, 0);
        for p in 1..=200 {
            let before = chain.blocks.clone().unwrap();
            let (x, ll, lp) = (chain.x.clone(), chain.loglik, chain.log_prior);
            let (acc, _) = chain.step(p).unwrap();
            let after = chain.blocks.as_ref().unwrap();
            let moved = (0..4)
                .filter(|&s| after.block(s) != before.block(s))
                .count();
            if acc {
                accepted += 1;
                assert!(moved <= 1);
            } else {
                rejected += 1;
                assert_eq!(moved, 0);
                assert_eq!(chain.x, x);
                assert_eq!(chain.loglik.to_bits(), ll.to_bits());
                assert_eq!(chain.log_prior.to_bits(), lp.to_bits());
            }
        }
        assert!(rejected > 0 && accepted > 0);
    }

    #[test]
    fn zero_iterations_and_reproducibility() {
        let (m, data) = setup(15);
        let rec = run_chain(&config(SamplerKind::Mpm, 3, 20, 0), &m, &data, None).unwrap();
        assert_eq!(rec.len(), 1);
        assert!((rec.rows[0].theta[0] - 0.3).abs() < 1e-12);

        let cfg = config(SamplerKind::Mpm, 3, 20, 60);
        let strip = |r: ChainRecord| -> Vec<ChainRow> {
            r.rows
                .into_iter()
                .map(|row| ChainRow {
                    elapsed_ns: 0,
                    ..row
                })
                .collect()
        };
        let a = strip(run_chain(&cfg, &m, &data, None).unwrap());
        let b = strip(run_chain(&cfg, &m, &data, None).unwrap());
        assert_eq!(a, b);
        let other = strip(run_chain(&SamplerConfig { seed: 4, ..cfg }, &m, &data, None).unwrap());
        assert_ne!(a, other);
    }

    #[test]
    fn cpm_uses_one_untrimmed_block() {
        let (m, data) = setup(15);
        let cfg = SamplerConfig {
            trim: 0.3,
            keep_panels: true,
            ..config(SamplerKind::Cpm, 9, 20, 10)
        };
        let rec = run_chain(&cfg, &m, &data, None).unwrap();
        let panels = rec.panels.unwrap();
        assert!(panels.iter().all(|p| p.len() == 1));
        assert!(rec.rows.iter().zip(&panels).all(|(r, p)| r.loglik == p[0]));
    }

    #[test]
    fn delayed_acceptance_skips_filters_after_stage_one_rejection() {
        let (m, data) = setup(20);
        let sur = KalmanSurrogate::new(data.clone());
        let rec = run_chain(
            &config(SamplerKind::DaMpm, 3, 20, 300),
            &m,
            &data,
            Some(&sur),
        )
        .unwrap();
        let stage1 = rec
            .rows
            .iter()
            .skip(1)
            .filter(|r| r.stage1_accepted == Some(true))
            .count() as u64;
        assert_eq!(rec.stats.likelihood_evaluations, 1 + stage1);
        assert!(stage1 < 300);
        assert!(rec
            .rows
            .iter()
            .all(|r| !r.accepted || r.stage1_accepted == Some(true) || r.iteration == 0));
        assert!(rec.stats.stage2_log_ratio_mean.is_some());
        assert!(run_chain(&config(SamplerKind::DaMpm, 3, 20, 5), &m, &data, None).is_err());
    }

    #[test]
    fn initialisation_gives_up_after_the_attempt_budget() {
        let (m, data) = setup(10);
        let err = run_chain(
            &config(SamplerKind::ExactMh, 1, 1, 5),
            &m,
            &data,
            Some(&Hopeless),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::InitializationFailure {
                attempts: INIT_ATTEMPTS
            }
        ));
    }

    #[test]
    fn out_of_support_start_falls_back_to_the_prior() {
        let (m, data) = setup(10);
        let sur = KalmanSurrogate::new(data.clone());
        let cfg = SamplerConfig {
            theta0: Some(vec![3.0]),
            ..config(SamplerKind::ExactMh, 1, 1, 5)
        };
        let rec = run_chain(&cfg, &m, &data, Some(&sur)).unwrap();
        assert!(rec.stats.init_attempts >= 2);
        assert!(rec.rows[0].theta[0].abs() < 1.0);
    }

    #[test]
    fn auxiliary_proposal_starts_from_bootstrap_and_freezes() {
        let (m, data) = setup(15);
        let cfg = SamplerConfig {
            freeze_schedule: true,
            ..config(SamplerKind::MpmAdpf, 4, 30, 40)
        };
        let mut chain = Chain::start(&cfg, &m, &data, None).unwrap();
        assert!(chain.record_schedule.is_none());
        assert!(chain.schedule.is_some());
        let mut frozen = None;
        for p in 1..=40 {
            let before = chain.schedule.clone();
            chain.step(p).unwrap();
            if p > cfg.warmup {
                assert_eq!(chain.schedule, before);
                frozen.get_or_insert(before);
            }
        }
        assert!(frozen.is_some());
        let rec = run_chain(&cfg, &m, &data, None).unwrap();
        assert!(!rec.stats.schedule_trace.is_empty());
    }
}
