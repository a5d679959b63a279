//! `jointpg run` and `jointpg diagnose`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration or an
//! environment without a tabular model, 3 non-finite gradient during
//! training, 4 a diagnostic bound failed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{EnvConfig, ExperimentConfig, RunSpec, UtilityChoice};
use crate::diagnostics::{
    compare_estimator, measure_bias_terms, split_half_variance, truncation_gap, BiasReport,
    EstimatorCheck, TruncationGap, VarianceReport,
};
use crate::error::{Error, Result};
use crate::mdp::{DiscountSchedule, Environment};
use crate::trainer::{train, RunLog, StepRule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_BOUND: i32 = 4;

/// File name of the effective-config echo.
pub const CONFIG_ECHO: &str = "config.json";

#[derive(Debug, Parser)]
#[command(
    name = "jointpg",
    version,
    about = "Policy gradient for concave utilities of several returns"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train once per (N, seed) and write run and summary CSVs.
    Run(Overrides),
    /// Bias, variance, truncation and estimator checks on a tabular environment.
    Diagnose(Overrides),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file; flags below override its keys.
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    /// Batch sizes N₁ = N₂, comma separated for a sweep.
    #[arg(long = "N", value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Episodes.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Horizon.
    #[arg(long = "H")]
    pub h: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Seeds, comma separated for a sweep.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `adam` or `constant`.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// `alpha_fair` or `sum_log`.
    #[arg(long)]
    pub utility: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sweep combinations trained at once.
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Parses `args` (program name first) and runs the chosen subcommand.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run(o) => finish(load(&o).and_then(|c| execute_run(&c, o.jobs).map(|_| EXIT_OK))),
        Command::Diagnose(o) => finish(load(&o).and_then(|c| {
            execute_diagnose(&c).map(|d| if d.passed() { EXIT_OK } else { EXIT_BOUND })
        })),
    }
}

/// `run` on a config file with no overrides.
pub fn cmd_run(config_path: &Path) -> i32 {
    main_with_args([OsArg::from("jointpg"), "run".into(), config_path.into()])
}

/// `diagnose` on a config file with no overrides.
pub fn cmd_diagnose(config_path: &Path) -> i32 {
    main_with_args([
        OsArg::from("jointpg"),
        "diagnose".into(),
        config_path.into(),
    ])
}

type OsArg = std::ffi::OsString;

fn finish(result: Result<i32>) -> i32 {
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::Parse(_) | Error::Unsupported(_) => {
            EXIT_CONFIG
        }
        Error::NonFiniteGradient { .. } => EXIT_ABORT,
        Error::Io(_) => EXIT_IO,
    }
}

/// Reads the optional config file, applies flag overrides, resolves defaults.
pub fn load(o: &Overrides) -> Result<ExperimentConfig> {
    let (mut cfg, text) = match &o.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            (ExperimentConfig::parse_unresolved(&text)?, text)
        }
        None => {
            let name = o
                .env
                .as_deref()
                .ok_or_else(|| Error::Config("give a config file or --env".into()))?;
            (
                ExperimentConfig::new(EnvConfig::from_name(name)?),
                String::new(),
            )
        }
    };
    apply(&mut cfg, o)?;
    cfg.finish(&text)
}

fn apply(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<()> {
    if let Some(name) = &o.env {
        if cfg.env.name() != name {
            cfg.env = EnvConfig::from_name(name)?;
        }
    }
    let t = &mut cfg.trainer;
    if let Some(h) = o.h {
        t.horizon = Some(h);
    }
    if let Some(k) = o.k {
        t.episodes = Some(k);
    }
    if let Some(g) = o.gamma {
        t.gamma = Some(g);
    }
    if let Some(u) = &o.utility {
        t.utility = Some(UtilityChoice::from_name(u)?);
    }
    let current_lr = match t.step_rule {
        Some(StepRule::Adam { lr, .. }) => Some(lr),
        Some(StepRule::Constant { eta }) => Some(eta),
        None => None,
    };
    let lr = o.lr.or(current_lr);
    match o.optimizer.as_deref() {
        Some("adam") => t.step_rule = lr.map(StepRule::adam).or(t.step_rule),
        Some("constant") => {
            let eta = lr.ok_or_else(|| Error::Config("--optimizer constant needs --lr".into()))?;
            t.step_rule = Some(StepRule::Constant { eta });
        }
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown optimizer `{other}` (expected adam or constant)"
            )))
        }
        None => {
            if let Some(new_lr) = o.lr {
                t.step_rule = Some(match t.step_rule {
                    Some(StepRule::Adam {
                        beta1, beta2, eps, ..
                    }) => StepRule::Adam {
                        lr: new_lr,
                        beta1,
                        beta2,
                        eps,
                    },
                    Some(StepRule::Constant { .. }) => StepRule::Constant { eta: new_lr },
                    None => StepRule::adam(new_lr),
                });
            }
        }
    }
    match o.seed.as_slice() {
        [] => {}
        [one] if o.n.is_empty() && cfg.sweep.is_none() => t.seed = Some(*one),
        seeds => cfg.sweep.get_or_insert_with(Default::default).seeds = seeds.to_vec(),
    }
    match o.n.as_slice() {
        [] => {}
        [one] if cfg.sweep.is_none() => {
            t.n1 = Some(*one);
            t.n2 = Some(*one);
        }
        ns => cfg.sweep.get_or_insert_with(Default::default).n_values = ns.to_vec(),
    }
    if let Some(out) = &o.out {
        cfg.output = out.clone();
    }
    Ok(())
}

pub fn run_file_name(env: &str, n: usize, seed: u64) -> String {
    format!("run_env-{env}_N{n}_seed{seed}.csv")
}

pub fn summary_file_name(env: &str) -> String {
    format!("summary_env-{env}.csv")
}

pub fn final_file_name(env: &str) -> String {
    format!("final_env-{env}.csv")
}

/// Per-`N` statistics of the tail-averaged objective across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalRow {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub num_seeds: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub runs: Vec<(RunSpec, RunLog)>,
    pub finals: Vec<FinalRow>,
    pub files: Vec<PathBuf>,
}

/// Trains every sweep combination and writes its CSVs under `cfg.output`.
pub fn execute_run(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<RunOutputs> {
    let env = cfg.env.build()?;
    let specs = cfg.runs()?;
    let initial = cfg.initial_policy(env.as_ref())?;
    let out = &cfg.output;
    fs::create_dir_all(out)?;
    write_text(&out.join(CONFIG_ECHO), &cfg.to_json())?;

    let env_ref: &dyn Environment = env.as_ref();
    let job = |spec: &RunSpec| -> (RunSpec, Result<RunLog>) {
        let mut policy = initial.clone();
        (spec.clone(), train(env_ref, &mut policy, &spec.trainer))
    };
    let results = with_jobs(jobs, || crate::par::map(&specs, job))?;

    let name = cfg.env.name();
    let mut files = Vec::new();
    let mut runs = Vec::with_capacity(results.len());
    let mut abort = None;
    for (spec, result) in results {
        let log = match result {
            Ok(log) => log,
            Err(Error::NonFiniteGradient { episode, log }) => {
                let path = out.join(run_file_name(name, spec.n, spec.seed));
                write_with(&path, |w| log.write_csv(w))?;
                files.push(path);
                abort.get_or_insert(Error::NonFiniteGradient { episode, log });
                continue;
            }
            Err(e) => return Err(e),
        };
        let path = out.join(run_file_name(name, spec.n, spec.seed));
        write_with(&path, |w| log.write_csv(w))?;
        files.push(path);
        runs.push((spec, log));
    }
    if let Some(e) = abort {
        return Err(e);
    }

    let tail = cfg
        .sweep
        .as_ref()
        .and_then(|s| s.tail_episodes)
        .unwrap_or(10);
    let groups = group_by_n(&runs);
    let summary = out.join(summary_file_name(name));
    write_with(&summary, |w| write_summary(w, &groups))?;
    files.push(summary);
    let finals: Vec<FinalRow> = groups
        .iter()
        .map(|(n, logs)| {
            let tails: Vec<f64> = logs.iter().map(|l| l.tail_mean(tail)).collect();
            let (mean, std) = mean_std(&tails);
            FinalRow {
                n: *n,
                mean,
                std,
                num_seeds: tails.len(),
            }
        })
        .collect();
    let final_path = out.join(final_file_name(name));
    write_with(&final_path, |w| {
        writeln!(
            w,
            "N,mean_tail_objective,std_tail_objective,num_seeds,tail_episodes"
        )?;
        for r in &finals {
            writeln!(w, "{},{},{},{},{}", r.n, r.mean, r.std, r.num_seeds, tail)?;
        }
        Ok(())
    })?;
    files.push(final_path);
    Ok(RunOutputs {
        runs,
        finals,
        files,
    })
}

fn group_by_n(runs: &[(RunSpec, RunLog)]) -> Vec<(usize, Vec<&RunLog>)> {
    let mut groups: Vec<(usize, Vec<&RunLog>)> = Vec::new();
    for (spec, log) in runs {
        match groups.iter_mut().find(|(n, _)| *n == spec.n) {
            Some((_, logs)) => logs.push(log),
            None => groups.push((spec.n, vec![log])),
        }
    }
    groups
}

/// `episode,N,mean_objective,std_objective,num_seeds`; one row per episode and `N`.
fn write_summary(w: &mut dyn Write, groups: &[(usize, Vec<&RunLog>)]) -> Result<()> {
    writeln!(w, "episode,N,mean_objective,std_objective,num_seeds")?;
    let episodes = groups
        .iter()
        .flat_map(|(_, logs)| logs.iter().map(|l| l.records.len()))
        .max()
        .unwrap_or(0);
    for k in 0..episodes {
        for (n, logs) in groups {
            let values: Vec<f64> = logs
                .iter()
                .filter_map(|l| l.records.get(k))
                .map(|r| r.objective)
                .collect();
            let (mean, std) = mean_std(&values);
            writeln!(w, "{k},{n},{mean},{std},{}", values.len())?;
        }
    }
    Ok(())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(feature = "parallel")]
fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_jobs<T>(_jobs: Option<usize>, f: impl FnOnce() -> T) -> Result<T> {
    Ok(f())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn write_with(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DiagnoseOutputs {
    pub bias: Vec<BiasReport>,
    pub truncation: Vec<TruncationGap>,
    /// Pooled, first half, second half.
    pub variance: [VarianceReport; 3],
    pub estimator: EstimatorCheck,
    pub estimator_tol: f64,
    pub slack_se: f64,
}

impl DiagnoseOutputs {
    pub fn bias_ok(&self) -> bool {
        self.bias.iter().all(|r| r.within_bounds(self.slack_se))
    }

    pub fn truncation_ok(&self) -> bool {
        self.truncation.iter().all(|g| g.holds)
    }

    pub fn estimator_ok(&self) -> bool {
        self.estimator.relative_error <= self.estimator_tol
    }

    pub fn passed(&self) -> bool {
        self.bias_ok() && self.truncation_ok() && self.estimator_ok()
    }
}

/// Runs the diagnostics at the config's initial policy and writes
/// `bias.csv`, `truncation.csv`, `variance.csv` and `estimator.csv`.
pub fn execute_diagnose(cfg: &ExperimentConfig) -> Result<DiagnoseOutputs> {
    let env = cfg.env.build()?;
    let model = env
        .tabular_model()
        .ok_or_else(|| Error::Unsupported(format!("{} has no tabular model", env.name())))?;
    let trainer = cfg.trainer_config()?;
    let d = cfg.diagnostics.clone().unwrap_or_default();
    let missing = || Error::Config("config is not resolved".into());
    let policy = cfg.initial_policy(env.as_ref())?;
    let gamma = trainer.schedule.gamma();
    if gamma >= 1.0 {
        return Err(Error::Config("trainer: diagnostics need gamma < 1".into()));
    }
    let utility = &trainer.utility;
    let seed = trainer.seed;
    let horizons = d.horizons.clone().ok_or_else(missing)?;
    let n2_values = d.n2_values.clone().ok_or_else(missing)?;
    let reps = d.bias_reps.ok_or_else(missing)?;

    let mut bias = Vec::new();
    for &h in &horizons {
        let schedule = DiscountSchedule::new(gamma, h)?;
        for &n2 in &n2_values {
            bias.push(measure_bias_terms(
                env.as_ref(),
                &policy,
                &schedule,
                utility,
                n2,
                reps,
                seed,
            )?);
        }
    }
    let truncation = truncation_gap(model, &policy, gamma, &horizons)?;
    let variance = split_half_variance(
        env.as_ref(),
        &policy,
        &trainer.schedule,
        utility,
        trainer.n2,
        d.variance_samples.ok_or_else(missing)?,
        seed,
    )?;
    let estimator = compare_estimator(
        env.as_ref(),
        &policy,
        &trainer.schedule,
        utility,
        d.estimator_n.ok_or_else(missing)?,
        d.estimator_reps.ok_or_else(missing)?,
        seed,
    )?;
    let outputs = DiagnoseOutputs {
        bias,
        truncation,
        variance,
        estimator,
        estimator_tol: d.estimator_tol.ok_or_else(missing)?,
        slack_se: d.slack_se.ok_or_else(missing)?,
    };

    let out = &cfg.output;
    fs::create_dir_all(out)?;
    write_text(&out.join(CONFIG_ECHO), &cfg.to_json())?;
    write_with(&out.join("bias.csv"), |w| {
        writeln!(
            w,
            "N2,H,gamma,reps,term_i,se_i,bound_i,term_ii,se_ii,bound_ii,term_iii,se_iii,bound_iii,\
             total_bias,signed_term_i,reference_horizon,within_bounds"
        )?;
        for r in &outputs.bias {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.n2,
                r.horizon,
                r.gamma,
                r.reps,
                r.term_i,
                r.se_i,
                r.bounds.term_i,
                r.term_ii,
                r.se_ii,
                r.bounds.term_ii,
                r.term_iii,
                r.se_iii,
                r.bounds.term_iii,
                r.total_bias,
                r.signed_term_i,
                r.reference_horizon,
                r.within_bounds(outputs.slack_se) as u8
            )?;
        }
        Ok(())
    })?;
    write_with(&out.join("truncation.csv"), |w| {
        writeln!(w, "H,gamma,gap,bound,holds")?;
        for g in &outputs.truncation {
            writeln!(
                w,
                "{},{},{},{},{}",
                g.horizon, gamma, g.gap, g.bound, g.holds as u8
            )?;
        }
        Ok(())
    })?;
    write_with(&out.join("variance.csv"), |w| {
        writeln!(w, "batch,samples,sigma2")?;
        for (label, v) in ["pooled", "first_half", "second_half"]
            .iter()
            .zip(&outputs.variance)
        {
            writeln!(w, "{label},{},{}", v.samples, v.sigma2)?;
        }
        Ok(())
    })?;
    write_with(&out.join("estimator.csv"), |w| {
        let e = &outputs.estimator;
        writeln!(w, "N1,N2,reps,relative_error,exact_norm,tolerance,pass")?;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.n1,
            e.n2,
            e.reps,
            e.relative_error,
            e.exact_norm,
            outputs.estimator_tol,
            outputs.estimator_ok() as u8
        )?;
        Ok(())
    })?;
    Ok(outputs)
}
