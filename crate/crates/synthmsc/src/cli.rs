//! Command-line surface: argument parsing, resolved invocations and the
//! files each command writes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use synthmsc_core::effects::{att, predict_counterfactual};
use synthmsc_core::panel::split;
use synthmsc_core::sim::{SimConfig, Setting};
use synthmsc_core::solver::{CvOutcome, FitReport};
use synthmsc_core::{EffectReport, Matrix, Method, MscConfig, PanelData};

use crate::fitting::{cross_validate_method, default_grid, fit_timed, resolve_lambda, FitSettings, LambdaPolicy};
use crate::ingest::{ingest_csv, resolve_marker, Schema};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::simlab::{bench_timing, parse_sweep, resolve_lambdas, run_experiment, write_timing_csv, BenchSpec, ExperimentSpec, TimingRow};

/// Penalty used by `fit`/`att` under the fixed policy when `--lambda` is absent.
pub const DEFAULT_LAMBDA: f64 = 0.03;

#[derive(Debug, Parser)]
#[command(name = "synthmsc", version, about = "Synthetic control weights for many treated units")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit donor weights and write them as CSV plus a JSON report.
    Fit(FitArgs),
    /// Fit weights and report counterfactuals and the ATT.
    Att(FitArgs),
    /// Rolling-origin cross-validation over a penalty grid.
    Cv(CvArgs),
    /// Monte Carlo replications on simulated panels.
    Simulate(SimulateArgs),
    /// Single-fit wall-clock timing over a sweep of treated counts.
    Bench(BenchArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Cv,
    Fixed,
    Corollary,
}

fn policy(kind: PolicyKind, lambda: Option<f64>, fallback: Option<f64>) -> anyhow::Result<LambdaPolicy> {
    Ok(match kind {
        PolicyKind::Cv => LambdaPolicy::Cv,
        PolicyKind::Corollary => LambdaPolicy::Corollary,
        PolicyKind::Fixed => match lambda.or(fallback) {
            Some(l) if l >= 0.0 && l.is_finite() => LambdaPolicy::Fixed(l),
            Some(l) => bail!("--lambda must be finite and nonnegative, got {l}"),
            None => bail!("--lambda-policy fixed needs --lambda"),
        },
    })
}

#[derive(Debug, Clone, Args)]
pub struct PanelArgs {
    /// Long-format panel CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Last pre-treatment time; overrides the JSON sidecar.
    #[arg(long)]
    pub t0_marker: Option<i64>,
    #[arg(long, default_value = "unit")]
    pub unit_col: String,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "outcome")]
    pub outcome_col: String,
    #[arg(long, default_value = "treated")]
    pub treated_col: String,
}

impl PanelArgs {
    fn resolve(&self) -> anyhow::Result<PanelSource> {
        Ok(PanelSource {
            path: self.input.clone(),
            schema: Schema {
                unit: self.unit_col.clone(),
                time: self.time_col.clone(),
                outcome: self.outcome_col.clone(),
                treated: self.treated_col.clone(),
            },
            t0_marker: resolve_marker(&self.input, self.t0_marker)?,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "msc")]
    pub method: Method,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum, default_value = "fixed")]
    pub lambda_policy: PolicyKind,
    /// ROLS ridge penalty.
    #[arg(long, default_value_t = 1.0)]
    pub ridge: f64,
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    /// Comma-separated CV grid; defaults to the method's grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Threads for CV; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "msc")]
    pub method: Method,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    #[arg(long, default_value_t = 1.0)]
    pub ridge: f64,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// 1 = independent AR(1) units, 2 = sparse linear combinations.
    #[arg(long)]
    pub setting: u8,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub t0: usize,
    #[arg(long, default_value_t = 10)]
    pub t1: usize,
    #[arg(long, default_value_t = 1000)]
    pub s: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 200)]
    pub burn_in: usize,
    #[arg(long, required = true)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "msc,psc,scul,rols")]
    pub methods: Vec<Method>,
    #[arg(long, value_enum, default_value = "cv")]
    pub lambda_policy: PolicyKind,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Per-method fixed penalties as METHOD=VALUE; `none` clears the default.
    #[arg(long, value_delimiter = ',', default_value = "msc=0.03")]
    pub lambda_for: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    #[arg(long, default_value_t = 1.0)]
    pub ridge: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl SimArgs {
    fn sim_config(&self, m: usize, replications: usize) -> anyhow::Result<SimConfig> {
        let setting = Setting::from_number(self.setting)?;
        Ok(SimConfig {
            setting,
            m,
            n: self.n,
            t0: self.t0,
            t1: self.t1,
            s: self.s,
            noise_sd: self.noise_sd,
            tau: self.tau,
            replications,
            seed: self.seed,
            burn_in: self.burn_in,
        })
    }

    fn overrides(&self) -> anyhow::Result<BTreeMap<Method, f64>> {
        let mut out = BTreeMap::new();
        for item in &self.lambda_for {
            if item.eq_ignore_ascii_case("none") {
                continue;
            }
            let (method, value) = item.split_once('=').with_context(|| format!("--lambda-for {item:?} is not METHOD=VALUE"))?;
            let value: f64 = value.trim().parse().with_context(|| format!("bad penalty in {item:?}"))?;
            out.insert(method.trim().parse::<Method>()?, value);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Treated counts as start:stop:step, inclusive.
    #[arg(long, default_value = "50:400:50")]
    pub m_sweep: String,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Threads for penalty tuning only; timed fits always run on one thread.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSource {
    pub path: PathBuf,
    pub schema: Schema,
    pub t0_marker: i64,
}

impl PanelSource {
    fn load(&self) -> anyhow::Result<PanelData> {
        ingest_csv(&self.path, &self.schema, self.t0_marker).with_context(|| format!("loading {}", self.path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitJob {
    pub panel: PanelSource,
    pub method: Method,
    pub policy: LambdaPolicy,
    pub grid: Option<Vec<f64>>,
    pub blocks: usize,
    pub ridge: f64,
    pub msc: MscConfig,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvJob {
    pub panel: PanelSource,
    pub method: Method,
    pub grid: Option<Vec<f64>>,
    pub blocks: usize,
    pub ridge: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchJob {
    pub spec: BenchSpec,
    pub policy: LambdaPolicy,
    pub overrides: BTreeMap<Method, f64>,
    pub blocks: usize,
    pub threads: usize,
}

/// A command with every default materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Invocation {
    Fit(FitJob),
    Att(FitJob),
    Cv(CvJob),
    Simulate(ExperimentSpec),
    Bench(BenchJob),
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Fit(_) => "fit",
            Invocation::Att(_) => "att",
            Invocation::Cv(_) => "cv",
            Invocation::Simulate(_) => "simulate",
            Invocation::Bench(_) => "bench",
        }
    }

    pub fn input_files(&self) -> Vec<PathBuf> {
        match self {
            Invocation::Fit(j) | Invocation::Att(j) => vec![j.panel.path.clone()],
            Invocation::Cv(j) => vec![j.panel.path.clone()],
            Invocation::Simulate(_) | Invocation::Bench(_) => Vec::new(),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Invocation::Simulate(s) => Some(s.sim.seed),
            Invocation::Bench(b) => Some(b.spec.sim.seed),
            _ => None,
        }
    }
}

fn fit_job(args: &FitArgs) -> anyhow::Result<FitJob> {
    Ok(FitJob {
        panel: args.panel.resolve()?,
        method: args.method,
        policy: policy(args.lambda_policy, args.lambda, Some(DEFAULT_LAMBDA))?,
        grid: args.grid.clone(),
        blocks: args.blocks,
        ridge: args.ridge,
        msc: MscConfig::default(),
        threads: args.threads,
    })
}

/// Turns parsed arguments into a resolved invocation and an output directory.
pub fn resolve(command: &Command) -> anyhow::Result<(Invocation, PathBuf)> {
    Ok(match command {
        Command::Fit(a) => (Invocation::Fit(fit_job(a)?), a.out_dir.clone()),
        Command::Att(a) => (Invocation::Att(fit_job(a)?), a.out_dir.clone()),
        Command::Cv(a) => (
            Invocation::Cv(CvJob {
                panel: a.panel.resolve()?,
                method: a.method,
                grid: a.grid.clone(),
                blocks: a.blocks,
                ridge: a.ridge,
                threads: a.threads,
            }),
            a.out_dir.clone(),
        ),
        Command::Simulate(a) => {
            let spec = ExperimentSpec {
                sim: a.sim.sim_config(a.m, a.reps)?,
                methods: a.sim.methods.clone(),
                policy: policy(a.sim.lambda_policy, a.sim.lambda, None)?,
                overrides: a.sim.overrides()?,
                cv_blocks: a.sim.blocks,
                ridge: a.sim.ridge,
                threads: a.threads,
            };
            (Invocation::Simulate(spec), a.sim.out_dir.clone())
        }
        Command::Bench(a) => {
            let m_values = parse_sweep(&a.m_sweep)?;
            let job = BenchJob {
                spec: BenchSpec {
                    sim: a.sim.sim_config(m_values[0], a.reps)?,
                    m_values,
                    methods: a.sim.methods.clone(),
                    lambdas: BTreeMap::new(),
                    ridge: a.sim.ridge,
                },
                policy: policy(a.sim.lambda_policy, a.sim.lambda, None)?,
                overrides: a.sim.overrides()?,
                blocks: a.sim.blocks,
                threads: a.threads,
            };
            (Invocation::Bench(job), a.sim.out_dir.clone())
        }
        Command::Replay(a) => {
            let manifest = RunManifest::read(&a.manifest)?;
            manifest.verify_inputs()?;
            (manifest.invocation, a.out_dir.clone())
        }
    })
}

/// Parses nothing; runs an already parsed command end to end.
pub fn run(command: &Command) -> anyhow::Result<()> {
    let (invocation, out_dir) = resolve(command)?;
    execute(&invocation, &out_dir)
}

/// Runs the invocation, writes its outputs and finally the manifest.
pub fn execute(invocation: &Invocation, out_dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let manifest = RunManifest::new(invocation)?;
    match invocation {
        Invocation::Fit(job) => run_fit(job, out_dir, false)?,
        Invocation::Att(job) => run_fit(job, out_dir, true)?,
        Invocation::Cv(job) => run_cv(job, out_dir)?,
        Invocation::Simulate(spec) => run_simulate(spec, out_dir)?,
        Invocation::Bench(job) => run_bench(job, out_dir)?,
    }
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Weights as CSV: one row per donor, one column per treated unit.
pub fn write_weights_csv(path: &Path, panel: &PanelData, theta: &Matrix) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["donor".to_string()];
    header.extend(panel.treated_units().iter().cloned());
    wtr.write_record(&header)?;
    for (k, donor) in panel.control_units().iter().enumerate() {
        let mut row = vec![donor.clone()];
        row.extend(theta.row(k).iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_cv_csv(path: &Path, cv: &CvOutcome) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    let folds = cv.table.first().map(|r| r.fold_rmse.len()).unwrap_or(0);
    let mut header = vec!["lambda".to_string(), "mean_rmse".to_string()];
    header.extend((1..=folds).map(|b| format!("fold_{b}")));
    wtr.write_record(&header)?;
    for row in &cv.table {
        let mut rec = vec![row.lambda.to_string(), row.mean_rmse.to_string()];
        rec.extend(row.fold_rmse.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitOutput<'a> {
    method: Method,
    treated_units: &'a [String],
    control_units: &'a [String],
    t0: usize,
    t1: usize,
    cv: Option<&'a CvOutcome>,
    report: &'a FitReport,
}

#[derive(Debug, Serialize)]
struct AttOutput<'a> {
    method: Method,
    lambda_used: f64,
    treated_units: &'a [String],
    post_times: &'a [i64],
    effects: &'a EffectReport,
}

fn pool(threads: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn run_fit(job: &FitJob, out_dir: &Path, with_att: bool) -> anyhow::Result<()> {
    if job.policy == LambdaPolicy::Corollary && !matches!(job.method, Method::Msc | Method::Rols) {
        bail!("the corollary policy defines a penalty for msc only");
    }
    let panel = job.panel.load()?;
    if with_att && panel.t1() == 0 {
        bail!("no post-treatment periods: the panel ends at the t0 marker");
    }
    let design = split(&panel);
    let settings = FitSettings { msc: job.msc.clone(), ..FitSettings::new(job.method, 0.0, job.ridge) };
    let (lambda, cv) = pool(job.threads)?.install(|| match (&job.grid, job.policy, job.method) {
        (Some(grid), LambdaPolicy::Cv, m) if m != Method::Rols => {
            let cv = cross_validate_method(&design, &settings, grid, job.blocks)?;
            Ok::<_, synthmsc_core::Error>((cv.lambda_best, Some(cv)))
        }
        _ => resolve_lambda(&design, &settings, job.policy, job.blocks),
    })?;
    let report = fit_timed(&design, &FitSettings { lambda, ..settings })?;
    write_weights_csv(&out_dir.join("weights.csv"), &panel, &report.theta)?;
    if let Some(cv) = &cv {
        write_cv_csv(&out_dir.join("cv_table.csv"), cv)?;
    }
    if with_att {
        let cf = predict_counterfactual(&report.theta, &design.x_post)?;
        let effects = att(&design.y_post, &cf)?;
        let out = AttOutput {
            method: job.method,
            lambda_used: report.lambda_used,
            treated_units: panel.treated_units(),
            post_times: &panel.times()[panel.t0()..],
            effects: &effects,
        };
        write_json(&out_dir.join("effects.json"), &out)?;
    } else {
        let out = FitOutput {
            method: job.method,
            treated_units: panel.treated_units(),
            control_units: panel.control_units(),
            t0: panel.t0(),
            t1: panel.t1(),
            cv: cv.as_ref(),
            report: &report,
        };
        write_json(&out_dir.join("fit_report.json"), &out)?;
    }
    Ok(())
}

fn run_cv(job: &CvJob, out_dir: &Path) -> anyhow::Result<()> {
    let panel = job.panel.load()?;
    let design = split(&panel);
    let settings = FitSettings::new(job.method, 0.0, job.ridge);
    let grid = match &job.grid {
        Some(g) => g.clone(),
        None => default_grid(job.method, &design)?,
    };
    let cv = pool(job.threads)?.install(|| cross_validate_method(&design, &settings, &grid, job.blocks))?;
    write_cv_csv(&out_dir.join("cv_table.csv"), &cv)?;
    write_json(&out_dir.join("cv.json"), &cv)
}

fn run_simulate(spec: &ExperimentSpec, out_dir: &Path) -> anyhow::Result<()> {
    let result = run_experiment(spec)?;
    result.write_records_csv(create(&out_dir.join("records.csv"))?)?;
    write_json(&out_dir.join("summary.json"), &result.summary())?;
    if !result.cv.is_empty() {
        write_json(&out_dir.join("cv.json"), &result.cv)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchOutput<'a> {
    lambdas: &'a BTreeMap<Method, f64>,
    rows: &'a [TimingRow],
}

fn run_bench(job: &BenchJob, out_dir: &Path) -> anyhow::Result<()> {
    let mut spec = job.spec.clone();
    if spec.lambdas.is_empty() {
        // penalties are tuned once, on the pilot draw of the first sweep point
        let tuning = ExperimentSpec {
            sim: spec.sim.clone(),
            methods: spec.methods.clone(),
            policy: job.policy,
            overrides: job.overrides.clone(),
            cv_blocks: job.blocks,
            ridge: spec.ridge,
            threads: job.threads,
        };
        spec.lambdas = pool(job.threads)?.install(|| resolve_lambdas(&tuning))?.0;
    }
    let rows = bench_timing(&spec)?;
    write_timing_csv(&rows, create(&out_dir.join("timing.csv"))?)?;
    write_json(&out_dir.join("timing.json"), &BenchOutput { lambdas: &spec.lambdas, rows: &rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_is_mandatory_for_simulations() {
        let err = Cli::try_parse_from(["synthmsc", "simulate", "--setting", "2", "--m", "5", "--out-dir", "x"]).unwrap_err();
        assert!(err.to_string().contains("--seed"));
        let err = Cli::try_parse_from(["synthmsc", "bench", "--setting", "2", "--out-dir", "x"]).unwrap_err();
        assert!(err.to_string().contains("--seed"));
    }

    #[test]
    fn simulate_defaults_are_materialized() {
        let cli = Cli::try_parse_from(["synthmsc", "simulate", "--setting", "1", "--m", "50", "--seed", "3", "--out-dir", "x"]).unwrap();
        let (inv, _) = resolve(&cli.command).unwrap();
        let Invocation::Simulate(spec) = inv else { panic!("wrong invocation") };
        assert_eq!(spec.methods, Method::ALL.to_vec());
        assert_eq!(spec.overrides[&Method::Msc], 0.03);
        assert_eq!(spec.sim.replications, 50);
        assert_eq!((spec.sim.n, spec.sim.t0, spec.sim.t1), (400, 100, 10));
        assert_eq!(spec.policy, LambdaPolicy::Cv);
    }

    #[test]
    fn overrides_parse_and_clear() {
        let cli = Cli::try_parse_from([
            "synthmsc", "simulate", "--setting", "2", "--m", "5", "--seed", "1", "--out-dir", "x", "--lambda-for", "none",
        ])
        .unwrap();
        let Invocation::Simulate(spec) = resolve(&cli.command).unwrap().0 else { panic!() };
        assert!(spec.overrides.is_empty());
        let cli = Cli::try_parse_from([
            "synthmsc", "simulate", "--setting", "2", "--m", "5", "--seed", "1", "--out-dir", "x", "--lambda-for", "scul=0.2,psc=0.1",
        ])
        .unwrap();
        let Invocation::Simulate(spec) = resolve(&cli.command).unwrap().0 else { panic!() };
        assert_eq!(spec.overrides.len(), 2);
        assert_eq!(spec.overrides[&Method::Scul], 0.2);
    }

    #[test]
    fn fixed_policy_needs_a_value() {
        let cli = Cli::try_parse_from([
            "synthmsc", "simulate", "--setting", "2", "--m", "5", "--seed", "1", "--out-dir", "x", "--lambda-policy", "fixed",
        ])
        .unwrap();
        assert!(resolve(&cli.command).is_err());
    }

    #[test]
    fn invocation_round_trips_through_json() {
        let cli = Cli::try_parse_from(["synthmsc", "bench", "--setting", "2", "--seed", "9", "--out-dir", "x"]).unwrap();
        let (inv, _) = resolve(&cli.command).unwrap();
        let text = serde_json::to_string(&inv).unwrap();
        assert_eq!(serde_json::from_str::<Invocation>(&text).unwrap(), inv);
        let Invocation::Bench(job) = inv else { panic!() };
        assert_eq!(job.spec.m_values, vec![50, 100, 150, 200, 250, 300, 350, 400]);
    }
}
