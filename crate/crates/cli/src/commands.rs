use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::json;

use mpm_core::diagnostics::{
    correlation_experiment, if_report, loglik_variance_experiment, posterior_summary,
    sort_benchmark, CorrelationSetup, VarianceSetup,
};
use mpm_core::kalman::{KalmanSurrogate, SurrogateOracle};
use mpm_core::model::{simulate_dataset, Dataset, DisturbanceModel, Lgss, ModelSpec, Svm};
use mpm_core::rng::{self, streams};
use mpm_core::sampler::{run_chain, ChainRecord, SamplerConfig};

use crate::config::{DataSource, DatasetInfo, ExperimentSpec, RunConfig};
use crate::{Common, ExperimentKind};

/// Environment variable overriding the filter worker count.
pub const WORKERS_ENV: &str = "MPM_WORKERS";

enum AnyModel {
    Lgss(Lgss),
    Svm(Svm),
}

macro_rules! with_model {
    ($model:expr, |$m:ident| $body:expr) => {
        match $model {
            AnyModel::Lgss($m) => $body,
            AnyModel::Svm($m) => $body,
        }
    };
}

fn build_model(spec: ModelSpec) -> Result<AnyModel> {
    Ok(match spec {
        ModelSpec::Lgss { d } => AnyModel::Lgss(Lgss::new(d)?),
        ModelSpec::Svm { d, m } => AnyModel::Svm(Svm::new(d, m)?),
    })
}

fn load_config(common: &Common) -> Result<(RunConfig, Option<String>)> {
    let (mut cfg, hash) = match (&common.config, &common.manifest) {
        (Some(p), _) => (RunConfig::load(p)?, None),
        (None, Some(p)) => RunConfig::from_manifest(p)?,
        (None, None) => (RunConfig::default(), None),
    };
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    if let Some(w) = common.workers {
        cfg.workers = Some(w);
    }
    Ok((cfg, hash))
}

fn load_data<M: DisturbanceModel>(model: &M, source: &DataSource) -> Result<Dataset> {
    let data = match source {
        DataSource::Simulate(s) => {
            ensure!(s.t > 0, "invalid argument: T must be at least 1");
            simulate_dataset(model, &s.theta, s.t, s.seed)?
        }
        DataSource::File(p) => Dataset::load(p)?,
    };
    ensure!(
        data.obs_dim() == model.obs_dim(),
        "dataset has {} columns but the {} model observes {}",
        data.obs_dim(),
        model.id(),
        model.obs_dim()
    );
    Ok(data)
}

fn dataset_info(data: &Dataset, source: &DataSource) -> Result<DatasetInfo> {
    Ok(DatasetInfo {
        sha256: data.content_hash()?,
        t: data.len(),
        d: data.obs_dim(),
        source: source.clone(),
    })
}

/// Worker count: flag or config value, then the environment, then the core count capped at `cap`.
fn init_workers(configured: Option<usize>, cap: usize) -> Result<usize> {
    let env = std::env::var(WORKERS_ENV).ok();
    let from_env = match env.as_deref() {
        Some(v) => Some(
            v.parse::<usize>()
                .with_context(|| format!("{WORKERS_ENV}={v} is not a count"))?,
        ),
        None => None,
    };
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let n = configured
        .or(from_env)
        .unwrap_or_else(|| cores.min(cap.max(1)));
    ensure!(n >= 1, "the worker count must be at least 1");
    // A second initialisation in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(n)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))
}

pub fn simulate(common: &Common, t: Option<usize>) -> Result<()> {
    let (mut cfg, _) = load_config(common)?;
    let model = build_model(cfg.model()?)?;
    let DataSource::Simulate(mut spec) = cfg.data()?.clone() else {
        bail!("`simulate` needs a `data.simulate` section");
    };
    if let Some(t) = t {
        spec.t = t;
    }
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    cfg.data = Some(DataSource::Simulate(spec.clone()));
    let out = cfg.output()?.to_path_buf();
    let data = with_model!(&model, |m| load_data(
        m,
        &DataSource::Simulate(spec.clone())
    )?);
    create_dir(&out)?;
    let path = out.join("dataset.csv");
    data.save(&path)?;
    println!(
        "wrote {} ({} x {})",
        path.display(),
        data.len(),
        data.obs_dim()
    );
    Ok(())
}

fn surrogate_for(spec: ModelSpec, data: &Dataset) -> Option<KalmanSurrogate> {
    matches!(spec, ModelSpec::Lgss { .. }).then(|| KalmanSurrogate::new(data.clone()))
}

pub fn run(common: &Common, iterations: Option<usize>, warmup: Option<usize>) -> Result<()> {
    let (mut cfg, recorded_hash) = load_config(common)?;
    let spec = cfg.model()?;
    let mut sampler: SamplerConfig = cfg.sampler()?.clone();
    if let Some(seed) = common.seed {
        sampler.seed = seed;
    }
    if let Some(p) = iterations {
        sampler.iterations = p;
    }
    if let Some(w) = warmup {
        sampler.warmup = w;
    }
    let sampler = sampler.normalized();
    sampler.validate()?;
    if sampler.kind.needs_surrogate() && !matches!(spec, ModelSpec::Lgss { .. }) {
        bail!(
            "invalid argument: {:?} needs a surrogate, which is only available for lgss",
            sampler.kind
        );
    }
    let model = build_model(spec)?;
    let n_params = with_model!(&model, |m| m.num_params());
    if let Some(t0) = &sampler.theta0 {
        ensure!(
            t0.len() == n_params,
            "invalid argument: theta0 needs {n_params} entries, got {}",
            t0.len()
        );
    }
    cfg.sampler = Some(sampler.clone());
    let out = cfg.output()?.to_path_buf();
    let source = cfg.data()?.clone();

    let data = with_model!(&model, |m| load_data(m, &source)?);
    let info = dataset_info(&data, &source)?;
    if let Some(h) = recorded_hash {
        ensure!(
            h == info.sha256,
            "dataset hash {} differs from the manifest's {h}",
            info.sha256
        );
    }
    let workers = init_workers(cfg.workers, sampler.num_filters)?;
    create_dir(&out)?;

    let start = Instant::now();
    let surrogate = surrogate_for(spec, &data);
    let sur: Option<&dyn SurrogateOracle> = surrogate.as_ref().map(|s| s as &dyn SurrogateOracle);
    let record = with_model!(&model, |m| run_chain(&sampler, m, &data, sur)?);
    let elapsed = start.elapsed().as_secs_f64();

    let chain_path = out.join("chain.csv");
    record.save_csv(&chain_path)?;
    if let Some(panels) = &record.panels {
        write_json(&out.join("panels.json"), panels)?;
    }
    let seed = sampler.seed;
    let manifest = json!({
        "config": cfg,
        "dataset": info,
        "seeds": {
            "root": seed,
            "chain": rng::derive_seed(seed, &[streams::CHAIN]),
            "crn_update": rng::derive_seed(seed, &[streams::CRN_UPDATE]),
            "trace": rng::derive_seed(seed, &[streams::TRACE]),
            "prior_init": rng::derive_seed(seed, &[streams::PRIOR_INIT]),
        },
        "workers": workers,
        "stats": record.stats,
        "acceptance_rate": record.acceptance_rate(sampler.warmup),
        "elapsed_seconds": elapsed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    println!(
        "{:?}: {} iterations in {:.1}s, acceptance {:.3}, wrote {}",
        sampler.kind,
        sampler.iterations,
        elapsed,
        record.acceptance_rate(sampler.warmup),
        chain_path.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn diagnose(
    chains: &[std::path::PathBuf],
    benchmark: Option<&Path>,
    warmup: usize,
    out: Option<&Path>,
) -> Result<()> {
    let records = chains
        .iter()
        .map(|p| ChainRecord::load_csv(p).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let bench = benchmark.map(ChainRecord::load_csv).transpose()?;

    let mut if_rows = Vec::new();
    println!(
        "{:<28} {:<10} {:>10} {:>12} {:>12} {:>10}",
        "chain", "param", "IF", "CT (s)", "TNIF", "RTNIF"
    );
    for (path, rec) in chains.iter().zip(&records) {
        let rep = if_report(rec, bench.as_ref(), warmup)?;
        for (k, name) in rep.param_names.iter().enumerate() {
            let rt = rep.rtnif.as_ref().map(|r| r[k]);
            println!(
                "{:<28} {:<10} {:>10.3} {:>12.3e} {:>12.3e} {:>10}",
                path.display().to_string(),
                name,
                rep.ifs[k],
                rep.ct,
                rep.tnif[k],
                fmt_opt(rt)
            );
            if_rows.push(vec![
                path.display().to_string(),
                name.clone(),
                rep.ifs[k].to_string(),
                rep.ct.to_string(),
                rep.tnif[k].to_string(),
                rt.map(|v| v.to_string()).unwrap_or_default(),
            ]);
        }
        println!(
            "{:<28} IF_MAX {:.3}  IF_MEAN {:.3}",
            "", rep.if_max, rep.if_mean
        );
    }

    let summary = posterior_summary(&records, warmup)?;
    println!();
    println!(
        "{:<10} {:>12} {:>12} {:>12} {:>12}",
        "param", "mean", "2.5%", "97.5%", "se"
    );
    for s in &summary {
        println!(
            "{:<10} {:>12.6} {:>12.6} {:>12.6} {:>12}",
            s.name,
            s.mean,
            s.q025,
            s.q975,
            fmt_opt(s.se)
        );
    }

    if let Some(dir) = out {
        create_dir(dir)?;
        write_csv(
            &dir.join("if_report.csv"),
            &["chain", "param", "if", "ct", "tnif", "rtnif"],
            if_rows,
        )?;
        let with_se = records.len() > 1;
        let mut header = vec!["param", "mean", "q025", "q975"];
        if with_se {
            header.push("se");
        }
        let rows = summary.iter().map(|s| {
            let mut r = vec![
                s.name.clone(),
                s.mean.to_string(),
                s.q025.to_string(),
                s.q975.to_string(),
            ];
            if with_se {
                r.push(s.se.map(|v| v.to_string()).unwrap_or_default());
            }
            r
        });
        write_csv(&dir.join("posterior_summary.csv"), &header, rows)?;
    }
    Ok(())
}

pub fn experiment(kind: ExperimentKind, common: &Common) -> Result<()> {
    let (mut cfg, _) = load_config(common)?;
    let mut spec = match (&cfg.experiment, kind) {
        (Some(s), _) => s.clone(),
        (None, ExperimentKind::Sortbench) => ExperimentSpec::Sortbench {
            dims: vec![10, 30],
            ns: vec![500, 1000, 2000],
            reps: 5,
            seed: 0,
        },
        (None, _) => bail!("config is missing `experiment`"),
    };
    let wanted = match kind {
        ExperimentKind::Variance => "variance",
        ExperimentKind::Correlation => "correlation",
        ExperimentKind::Sortbench => "sortbench",
    };
    ensure!(
        spec.name() == wanted,
        "the config describes a {} experiment, not {wanted}",
        spec.name()
    );
    if let Some(seed) = common.seed {
        spec.set_seed(seed);
    }
    cfg.experiment = Some(spec.clone());
    let out = cfg.output()?.to_path_buf();

    if let ExperimentSpec::Sortbench {
        dims,
        ns,
        reps,
        seed,
    } = &spec
    {
        ensure!(
            dims.iter().chain(ns).all(|&v| v > 0),
            "invalid argument: dimensions and sizes must be positive"
        );
        create_dir(&out)?;
        let rows = sort_benchmark(dims, ns, *reps, *seed)?;
        println!(
            "{:<12} {:>4} {:>6} {:>14} {:>14} {:>9}",
            "payload", "d", "N", "euclidean ms", "greedy ms", "speedup"
        );
        for r in &rows {
            println!(
                "{:<12} {:>4} {:>6} {:>14.4} {:>14.4} {:>9.1}",
                format!("{:?}", r.payload).to_lowercase(),
                r.d,
                r.n,
                r.euclidean_ms,
                r.greedy_ms,
                r.speedup
            );
        }
        let csv_rows = rows.iter().map(|r| {
            vec![
                format!("{:?}", r.payload).to_lowercase(),
                r.d.to_string(),
                r.n.to_string(),
                r.euclidean_ms.to_string(),
                r.greedy_ms.to_string(),
                r.speedup.to_string(),
            ]
        });
        write_csv(
            &out.join("sortbench.csv"),
            &["payload", "d", "n", "euclidean_ms", "greedy_ms", "speedup"],
            csv_rows,
        )?;
        return write_json(
            &out.join("manifest.json"),
            &json!({ "config": cfg, "rows": rows }),
        );
    }

    let model_spec = cfg.model()?;
    let model = build_model(model_spec)?;
    let source = cfg.data()?.clone();
    match &spec {
        ExperimentSpec::Variance {
            grid,
            trims,
            replications,
            ..
        } => {
            ensure!(
                !grid.is_empty() && !trims.is_empty(),
                "invalid argument: the grid and trims must be non-empty"
            );
            ensure!(
                *replications >= 2,
                "invalid argument: at least two replications are needed"
            );
            ensure!(
                grid.iter().all(|&(n, s)| n > 0 && s > 0),
                "invalid argument: grid entries need N, S >= 1"
            );
            ensure!(
                trims.iter().all(|t| (0.0..=0.5).contains(t)),
                "invalid argument: trims must lie in [0, 0.5]"
            );
        }
        ExperimentSpec::Correlation {
            s,
            n,
            rho_u,
            replications,
            ..
        } => {
            ensure!(
                *s > 0 && *n > 0,
                "invalid argument: S and N must be positive"
            );
            ensure!(
                (0.0..=1.0).contains(rho_u),
                "invalid argument: rho_u must lie in [0, 1]"
            );
            ensure!(
                *replications >= 2,
                "invalid argument: at least two replications are needed"
            );
        }
        ExperimentSpec::Sortbench { .. } => unreachable!("handled above"),
    }
    let data = with_model!(&model, |m| load_data(m, &source)?);
    let info = dataset_info(&data, &source)?;
    create_dir(&out)?;

    match spec {
        ExperimentSpec::Variance {
            theta,
            grid,
            trims,
            replications,
            seed,
            sort_payload,
        } => {
            let cap = grid.iter().map(|g| g.1).max().unwrap_or(1);
            init_workers(cfg.workers, cap.max(replications))?;
            let setup = VarianceSetup {
                grid,
                trims,
                replications,
                seed,
                sort_payload,
                schedule: None,
            };
            let table = with_model!(&model, |m| loglik_variance_experiment(
                m, &data, &theta, &setup
            )?);
            println!(
                "{:>6} {:>6} {:>6} {:>14} {:>14}",
                "N", "S", "trim", "variance", "mean"
            );
            let mut rows = Vec::new();
            for c in table
                .single_filter
                .iter()
                .map(|c| (c, "single"))
                .chain(table.cells.iter().map(|c| (c, "combined")))
            {
                let (c, label) = c;
                println!(
                    "{:>6} {:>6} {:>6.2} {:>14.6} {:>14.4} {label}",
                    c.n, c.s, c.trim, c.variance, c.mean
                );
                rows.push(vec![
                    label.to_string(),
                    c.n.to_string(),
                    c.s.to_string(),
                    c.trim.to_string(),
                    c.variance.to_string(),
                    c.mean.to_string(),
                    c.degenerate.to_string(),
                ]);
            }
            write_csv(
                &out.join("variance.csv"),
                &[
                    "estimator",
                    "n",
                    "s",
                    "trim",
                    "variance",
                    "mean",
                    "degenerate",
                ],
                rows,
            )?;
            write_json(
                &out.join("manifest.json"),
                &json!({ "config": cfg, "dataset": info, "table": table }),
            )
        }
        ExperimentSpec::Correlation {
            theta,
            theta_prime,
            s,
            n,
            trim,
            rho_u,
            replications,
            seed,
            sort_payload,
        } => {
            init_workers(cfg.workers, s)?;
            let setup = CorrelationSetup {
                s,
                n,
                trim,
                rho_u,
                replications,
                seed,
                sort_payload,
            };
            let res = with_model!(&model, |m| correlation_experiment(
                m,
                &data,
                &theta,
                &theta_prime,
                &setup
            )?);
            println!(
                "correlation {:.6} over {} pairs",
                res.correlation,
                res.pairs.len()
            );
            let rows = res
                .pairs
                .iter()
                .enumerate()
                .map(|(i, (a, b))| vec![i.to_string(), a.to_string(), b.to_string()]);
            write_csv(
                &out.join("correlation.csv"),
                &["replication", "loglik", "loglik_prime"],
                rows,
            )?;
            write_json(
                &out.join("manifest.json"),
                &json!({ "config": cfg, "dataset": info, "correlation": res.correlation }),
            )
        }
        ExperimentSpec::Sortbench { .. } => unreachable!("handled above"),
    }
}
