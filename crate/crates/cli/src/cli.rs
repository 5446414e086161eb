//! Command-line front end. Flags mirror the configuration keys and override
//! values read from `--config`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ssmamp_core::stats::{amp_state_evolution, tap_v_sequence};
use ssmamp_core::{replica_chi, EnsembleKind, FieldStats};

use crate::checks::{self, SuiteSizes};
use crate::config::ExperimentConfig;
use crate::error::{exit, CliError, Result};
use crate::experiment::run_trials;
use crate::instances::{generate, load_all};
use crate::kv::KvDoc;
use crate::report::{self, Provenance, RunData, RunSummary, CONFIG_TOML};

pub const THREADS_ENV: &str = "SSMAMP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ssmamp", version, about = "Single-step memory AMP experiments")]
pub struct Cli {
    /// Worker threads for independent trials (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write problem instances (matrix, signal, noise, observation) to disk.
    Gen(ConfigArgs),
    /// Run Monte Carlo trials and compare them with the predictions.
    Run(ConfigArgs),
    /// Write scalar predictions only; no sampling.
    Se(ConfigArgs),
    /// Run the identity and oracle checks.
    Validate,
    /// Recompute the summary and report of a finished run from its CSV files.
    Report {
        /// Output directory of a previous `run`.
        dir: PathBuf,
    },
}

/// Every configuration key as an optional flag.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file whose keys are the configuration field names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ensemble: Option<String>,
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub prior_variance: Option<f64>,
    #[arg(long, short = 'k')]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub path: Option<String>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Relative change stopping tolerance; `inf` disables early stopping.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub chi_mode: Option<String>,
    #[arg(long)]
    pub v_schedule: Option<String>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub formats: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub field_check_iters: Option<Vec<usize>>,
    #[arg(long)]
    pub check_horizon: Option<usize>,
    #[arg(long)]
    pub truncation: Option<usize>,
    #[arg(long)]
    pub quadrature: Option<String>,
    /// Directory written by `gen`; its config.toml is the base configuration
    /// unless `--config` is given.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn build(&self) -> Result<ExperimentConfig> {
        let base = match (&self.config, &self.input) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(dir)) if dir.join(CONFIG_TOML).exists() => ExperimentConfig::load(&dir.join(CONFIG_TOML))?,
            _ => ExperimentConfig::default(),
        };
        Ok(self.apply(base))
    }

    fn apply(&self, mut c: ExperimentConfig) -> ExperimentConfig {
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = &self.$f { c.$f = v.clone(); } )*};
        }
        set!(
            ensemble, prior, rho, prior_variance, k, alpha, xi, path, max_iters, tol, chi_mode, v_schedule,
            damping, trials, seed, output, formats, field_check_iters, check_horizon, truncation, quadrature
        );
        if let Some(i) = &self.input {
            c.input = Some(i.clone());
        }
        c
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let pool = thread_pool(cli.threads)?;
    match &cli.command {
        Command::Gen(args) => pool.install(|| cmd_gen(args)),
        Command::Run(args) => pool.install(|| cmd_run(args)),
        Command::Se(args) => cmd_se(args),
        Command::Validate => Ok(cmd_validate()),
        Command::Report { dir } => cmd_report(dir),
    }
}

fn cmd_gen(args: &ConfigArgs) -> Result<i32> {
    let cfg = args.build()?;
    let dirs = generate(&cfg, &cfg.output)?;
    println!("wrote {} instances to {}", dirs.len(), cfg.output.display());
    Ok(exit::SUCCESS)
}

/// Rejects instance files that contradict the configuration.
fn check_loaded(cfg: &ExperimentConfig, loaded: &[crate::instances::LoadedInstance], dir: &Path) -> Result<()> {
    let resolved = cfg.resolve()?;
    for l in loaded {
        let a = &l.instance.a;
        let e = &a.ensemble;
        if e.kind != resolved.ensemble.kind || e.alpha != cfg.alpha || e.xi != cfg.xi || a.n_cols() != cfg.k {
            return Err(CliError::Config(format!(
                "instance {} in {} is {}(alpha={}, xi={}, k={}) but the configuration asks for {}(alpha={}, xi={}, k={})",
                l.trial,
                dir.display(),
                e.kind.name(),
                e.alpha,
                e.xi,
                a.n_cols(),
                resolved.ensemble.kind.name(),
                cfg.alpha,
                cfg.xi,
                cfg.k
            )));
        }
    }
    Ok(())
}

fn print_summary(summary: &RunSummary, dir: &Path) {
    for (k, v) in summary.report.entries().filter(|(k, _)| k.starts_with("check.")) {
        println!("{} = {v}", &k["check.".len()..]);
    }
    println!("outputs in {}", dir.display());
    println!("{}", if summary.passed() { "all checks passed" } else { "some checks FAILED" });
}

fn cmd_run(args: &ConfigArgs) -> Result<i32> {
    let mut cfg = args.build()?;
    let resolved = cfg.resolve()?;
    let loaded = match &cfg.input {
        Some(dir) => {
            let l = load_all(dir)?;
            check_loaded(&cfg, &l, dir)?;
            cfg.trials = l.len();
            Some(l)
        }
        None => None,
    };
    let outcomes = run_trials(&cfg, &resolved, loaded)?;
    let data = RunData::from_outcomes(&outcomes);
    let summary = report::write_outputs(&cfg.output, &cfg, &resolved, &data, true)?;
    print_summary(&summary, &cfg.output);
    Ok(if summary.passed() { exit::SUCCESS } else { exit::CHECK_FAILED })
}

fn cmd_report(dir: &Path) -> Result<i32> {
    let (cfg, data) = report::read_run(dir)?;
    let resolved = cfg.resolve()?;
    let summary = report::write_outputs(dir, &cfg, &resolved, &data, false)?;
    print_summary(&summary, dir);
    Ok(if summary.passed() { exit::SUCCESS } else { exit::CHECK_FAILED })
}

/// A prediction table row.
#[derive(Debug, serde::Serialize)]
struct PredictionRow<'a> {
    t: usize,
    quantity: &'a str,
    value: f64,
    provenance: &'a str,
}

fn cmd_se(args: &ConfigArgs) -> Result<i32> {
    let cfg = args.build()?;
    let r = cfg.resolve()?;
    let horizon = cfg.max_iters;
    let predicted = Provenance::Predicted.name();
    let mut doc = KvDoc::new();
    let mut rows = Vec::new();
    doc.push("ensemble", r.ensemble.kind.name());
    doc.push("alpha", cfg.alpha);
    doc.push("xi", cfg.xi);
    doc.push("prior", r.prior);
    doc.push("horizon", horizon);

    let rp = replica_chi(&r.prior, &r.ensemble, &r.solver.replica)?;
    doc.section("replica point");
    doc.push("replica.chi", format!("{:.10e} [{predicted}]", rp.chi));
    doc.push("replica.v", format!("{:.10e} [{predicted}]", rp.v));
    doc.push("replica.iterations", rp.iterations);

    if r.ensemble.kind == EnsembleKind::IidGaussian {
        let se = amp_state_evolution(&r.prior, &r.ensemble, horizon, &r.quadrature)?;
        for t in 0..se.mse.len() {
            for (q, v) in [("se_mse", se.mse[t]), ("se_chi", se.chi[t]), ("se_v", se.v[t]), ("se_c_theta", se.c_theta[t])] {
                rows.push((t, q, v));
            }
        }
        doc.section("state evolution (final iteration)");
        let last = se.mse.len() - 1;
        doc.push("se.mse", format!("{:.10e} [{predicted}]", se.mse[last]));
        doc.push("se.chi", format!("{:.10e} [{predicted}]", se.chi[last]));
    }

    // Statistics predicted along a run held at the replica chi.
    let chi = vec![rp.chi; horizon + 1];
    let v = tap_v_sequence(&chi, &r.ensemble)?;
    let fs = FieldStats::predict(&chi, &v, &r.ensemble, None)?;
    for t in 0..=horizon {
        for (q, val) in [
            ("zeta", fs.zeta[t]),
            ("sigma_x", fs.sigma_x[t]),
            ("c_theta_tt", fs.c_theta_diag[t]),
            ("g_mem", fs.g_mem[t]),
        ] {
            rows.push((t, q, val));
        }
    }
    doc.section("stationary statistics at the replica point (final iteration)");
    doc.push("stationary.zeta", format!("{:.10e} [{predicted}]", fs.zeta[horizon]));
    doc.push("stationary.sigma_x", format!("{:.10e} [{predicted}]", fs.sigma_x[horizon]));
    doc.push("stationary.c_theta_tt", format!("{:.10e} [{predicted}]", fs.c_theta_diag[horizon]));
    doc.push("stationary.one_over_v", format!("{:.10e} [{}]", 1.0 / v[horizon], Provenance::Identity.name()));

    std::fs::create_dir_all(&cfg.output).map_err(|e| CliError::io(&cfg.output, e))?;
    if cfg.writes("csv") {
        let path = cfg.output.join("predictions.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
        for (t, quantity, value) in rows {
            w.serialize(PredictionRow {
                t,
                quantity,
                value,
                provenance: predicted,
            })
            .map_err(|e| CliError::csv(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    if cfg.writes("txt") {
        doc.write(&cfg.output.join("predictions.txt"))?;
    }
    print!("{}", doc.render());
    Ok(exit::SUCCESS)
}

fn cmd_validate() -> i32 {
    let results = checks::suite(SuiteSizes::default());
    for c in &results {
        println!("{c}");
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    if failed == 0 {
        println!("all {} checks passed", results.len());
        exit::SUCCESS
    } else {
        println!("{failed} of {} checks FAILED", results.len());
        exit::CHECK_FAILED
    }
}
