//! Replication runner and timing benchmark over simulated panels.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use synthmsc_core::effects::{att, predict_counterfactual};
use synthmsc_core::sim::{gen_setting, SimConfig};
use synthmsc_core::solver::CvOutcome;
use synthmsc_core::{Error, Method, Result};

use crate::fitting::{fit_timed, resolve_lambda, FitSettings, LambdaPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub sim: SimConfig,
    pub methods: Vec<Method>,
    pub policy: LambdaPolicy,
    /// Fixed penalties that bypass `policy` for the listed methods.
    pub overrides: BTreeMap<Method, f64>,
    pub cv_blocks: usize,
    pub ridge: f64,
    /// Worker threads; 0 lets rayon pick.
    pub threads: usize,
}

impl ExperimentSpec {
    pub fn new(sim: SimConfig, methods: Vec<Method>) -> Self {
        ExperimentSpec {
            sim,
            methods,
            policy: LambdaPolicy::Cv,
            overrides: BTreeMap::new(),
            cv_blocks: 5,
            ridge: 1.0,
            threads: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Argument("no methods selected".into()));
        }
        if self.sim.replications == 0 {
            return Err(Error::Argument("replications must be at least 1".into()));
        }
        Ok(())
    }
}

/// One method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub method: Method,
    pub m: usize,
    pub setting: u8,
    pub replication: usize,
    pub rmse: f64,
    pub att_bias: f64,
    pub fit_seconds: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: Method,
    pub replication: usize,
    pub error: String,
}

/// Means and standard errors for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub m: usize,
    pub setting: u8,
    pub lambda: f64,
    pub replications: usize,
    pub skipped: usize,
    pub unconverged: usize,
    pub mean_rmse: f64,
    pub se_rmse: f64,
    pub mean_att_bias: f64,
    pub se_att_bias: f64,
    pub sd_att_bias: f64,
    pub mean_seconds: f64,
    pub se_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub spec: ExperimentSpec,
    /// Penalty (or ridge, for ROLS) used by each method.
    pub lambdas: BTreeMap<Method, f64>,
    /// CV tables from the pilot draw, for methods tuned by CV.
    pub cv: BTreeMap<Method, CvOutcome>,
    pub records: Vec<Record>,
    pub failures: Vec<Failure>,
}

/// Sample mean, standard deviation and standard error.
pub fn mean_sd_se(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    (mean, sd, sd / (n as f64).sqrt())
}

impl SimResult {
    pub fn records_for(&self, method: Method) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.method == method)
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        self.spec
            .methods
            .iter()
            .map(|&method| {
                let recs: Vec<&Record> = self.records_for(method).collect();
                let pick = |f: fn(&Record) -> f64| recs.iter().map(|r| f(r)).collect::<Vec<f64>>();
                let (mean_rmse, _, se_rmse) = mean_sd_se(&pick(|r| r.rmse));
                let (mean_att_bias, sd_att_bias, se_att_bias) = mean_sd_se(&pick(|r| r.att_bias));
                let (mean_seconds, _, se_seconds) = mean_sd_se(&pick(|r| r.fit_seconds));
                Aggregate {
                    method,
                    m: self.spec.sim.m,
                    setting: self.spec.sim.setting.number(),
                    lambda: self.lambdas.get(&method).copied().unwrap_or(f64::NAN),
                    replications: recs.len(),
                    skipped: self.failures.iter().filter(|f| f.method == method).count(),
                    unconverged: recs.iter().filter(|r| !r.converged).count(),
                    mean_rmse,
                    se_rmse,
                    mean_att_bias,
                    se_att_bias,
                    sd_att_bias,
                    mean_seconds,
                    se_seconds,
                }
            })
            .collect()
    }

    pub fn aggregate(&self, method: Method) -> Option<Aggregate> {
        self.aggregates().into_iter().find(|a| a.method == method)
    }

    /// Per-replication CSV: `method,m,setting,replication,rmse,att_bias,fit_seconds`.
    pub fn write_records_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["method", "m", "setting", "replication", "rmse", "att_bias", "fit_seconds"])?;
        for r in &self.records {
            wtr.write_record([
                r.method.as_str().to_string(),
                r.m.to_string(),
                r.setting.to_string(),
                r.replication.to_string(),
                r.rmse.to_string(),
                r.att_bias.to_string(),
                r.fit_seconds.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// JSON summary keyed by method name.
    pub fn summary(&self) -> Summary {
        Summary {
            setting: self.spec.sim.setting.number(),
            m: self.spec.sim.m,
            replications: self.spec.sim.replications,
            seed: self.spec.sim.seed,
            methods: self.aggregates().into_iter().map(|a| (a.method.as_str().to_string(), a)).collect(),
            failures: self.failures.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub setting: u8,
    pub m: usize,
    pub replications: usize,
    pub seed: u64,
    pub methods: BTreeMap<String, Aggregate>,
    pub failures: Vec<Failure>,
}

/// Seed of the pilot draw used to predetermine penalties. It reuses the
/// first replication's data, as in a study that tunes once before the
/// Monte Carlo loop.
fn pilot_config(sim: &SimConfig) -> SimConfig {
    SimConfig { seed: sim.replication_seed(0), ..sim.clone() }
}

/// Fixes every method's penalty before the replications run.
pub fn resolve_lambdas(spec: &ExperimentSpec) -> Result<(BTreeMap<Method, f64>, BTreeMap<Method, CvOutcome>)> {
    let mut lambdas = BTreeMap::new();
    let mut cvs = BTreeMap::new();
    let mut pilot = None;
    for &method in &spec.methods {
        if method == Method::Rols {
            lambdas.insert(method, spec.ridge);
            continue;
        }
        if let Some(&l) = spec.overrides.get(&method) {
            lambdas.insert(method, l);
            continue;
        }
        if pilot.is_none() {
            pilot = Some(gen_setting(&pilot_config(&spec.sim))?);
        }
        let split = &pilot.as_ref().expect("pilot drawn above").split;
        let settings = FitSettings::new(method, 0.0, spec.ridge);
        let (lambda, cv) = resolve_lambda(split, &settings, spec.policy, spec.cv_blocks)?;
        lambdas.insert(method, lambda);
        if let Some(cv) = cv {
            cvs.insert(method, cv);
        }
    }
    Ok((lambdas, cvs))
}

fn run_replication(spec: &ExperimentSpec, lambdas: &BTreeMap<Method, f64>, r: usize) -> Vec<std::result::Result<Record, Failure>> {
    let cfg = SimConfig { seed: spec.sim.replication_seed(r), ..spec.sim.clone() };
    let draw = match gen_setting(&cfg) {
        Ok(d) => d,
        Err(e) => {
            return spec
                .methods
                .iter()
                .map(|&method| Err(Failure { method, replication: r, error: e.to_string() }))
                .collect()
        }
    };
    spec.methods
        .iter()
        .map(|&method| {
            let settings = FitSettings::new(method, lambdas[&method], spec.ridge);
            let outcome = fit_timed(&draw.split, &settings).and_then(|report| {
                let cf = predict_counterfactual(&report.theta, &draw.split.x_post)?;
                let effects = att(&draw.split.y_post, &cf)?.with_truth(&draw.true_y0_post, draw.true_delta)?;
                Ok(Record {
                    method,
                    m: cfg.m,
                    setting: cfg.setting.number(),
                    replication: r,
                    rmse: effects.rmse.unwrap_or(f64::NAN),
                    att_bias: effects.att_bias.unwrap_or(f64::NAN),
                    fit_seconds: report.wall_clock_seconds,
                    converged: report.converged,
                })
            });
            outcome.map_err(|e| Failure { method, replication: r, error: e.to_string() })
        })
        .collect()
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start thread pool: {e}")))
}

/// Runs every replication (in parallel over replications) and collects the
/// records sorted by method, then replication.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<SimResult> {
    spec.validate()?;
    pool(spec.threads)?.install(|| {
        let (lambdas, cv) = resolve_lambdas(spec)?;
        let outcomes: Vec<_> = (0..spec.sim.replications)
            .into_par_iter()
            .flat_map_iter(|r| run_replication(spec, &lambdas, r))
            .collect();
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for o in outcomes {
            match o {
                Ok(rec) => records.push(rec),
                Err(f) => failures.push(f),
            }
        }
        let order = |m: Method| spec.methods.iter().position(|x| *x == m).unwrap_or(usize::MAX);
        records.sort_by_key(|r| (order(r.method), r.replication));
        failures.sort_by_key(|f| (order(f.method), f.replication));
        Ok(SimResult { spec: spec.clone(), lambdas, cv, records, failures })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    /// Template; `m` and `seed` are replaced per sweep point.
    pub sim: SimConfig,
    pub m_values: Vec<usize>,
    pub methods: Vec<Method>,
    pub lambdas: BTreeMap<Method, f64>,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: Method,
    pub m: usize,
    pub mean_seconds: f64,
    pub se_seconds: f64,
    pub replications: usize,
}

/// Parses `start:stop:step` (inclusive) into the list of m values.
pub fn parse_sweep(text: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::Argument(format!("sweep {text:?} is not start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<usize> = parts.iter().map(|p| p.trim().parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if step == 0 || start == 0 || start > stop {
        return Err(bad());
    }
    Ok((start..=stop).step_by(step).collect())
}

/// Single-threaded wall-clock timing of single fits (no CV) over an m
/// sweep. Fits run on the calling thread one after another.
pub fn bench_timing(spec: &BenchSpec) -> Result<Vec<TimingRow>> {
    if spec.methods.is_empty() || spec.m_values.is_empty() {
        return Err(Error::Argument("bench needs at least one method and one m value".into()));
    }
    let mut rows = Vec::new();
    for &m in &spec.m_values {
        let mut seconds: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
        for r in 0..spec.sim.replications {
            let cfg = SimConfig { m, seed: spec.sim.replication_seed(r), ..spec.sim.clone() };
            let draw = gen_setting(&cfg)?;
            for &method in &spec.methods {
                let lambda = match method {
                    Method::Rols => spec.ridge,
                    _ => *spec
                        .lambdas
                        .get(&method)
                        .ok_or_else(|| Error::Argument(format!("no penalty given for {method}")))?,
                };
                let report = fit_timed(&draw.split, &FitSettings::new(method, lambda, spec.ridge))?;
                seconds.entry(method).or_default().push(report.wall_clock_seconds);
            }
        }
        for &method in &spec.methods {
            let s = &seconds[&method];
            let (mean, _, se) = mean_sd_se(s);
            rows.push(TimingRow { method, m, mean_seconds: mean, se_seconds: se, replications: s.len() });
        }
    }
    Ok(rows)
}

pub fn write_timing_csv<W: Write>(rows: &[TimingRow], writer: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["method", "m", "mean_seconds", "se_seconds", "replications"])?;
    for r in rows {
        wtr.write_record([
            r.method.as_str().to_string(),
            r.m.to_string(),
            r.mean_seconds.to_string(),
            r.se_seconds.to_string(),
            r.replications.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
