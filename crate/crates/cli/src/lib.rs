//! The `clbf` command line: train, verify, certify, evaluate, tau-search
//! and export-report.
//!
//! Exit codes: 0 success, 1 a counterexample was found, 2 usage or input
//! error, 3 timeout or partial result.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use clbf_core::cegis::{cegis_run, run_log_csv, tau_search, BnbVerifier, CegisOutcome, RunStatus};
use clbf_core::eval::{campaign_csv, campaign_svg, run_campaign, Campaign, Mode};
use clbf_core::lipschitz::lipschitz_bound_lp;
use clbf_core::model::{Model, ModelMeta};
use clbf_core::verifier::{certify_delta, verify_all, CertifyConfig, Status, Verdict};
use clbf_core::{BnbConfig, ClbfError, EnvSpec, Method, NormKind, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COUNTEREXAMPLE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Core(#[from] ClbfError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(ClbfError::Diverged(_)) => EXIT_PARTIAL,
            _ => EXIT_USAGE,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "clbf", version, about = "Robust Lyapunov-barrier certificates for neural controllers")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Environment: pendulum | docking2d.
    #[arg(long)]
    env: String,
    /// PGD ascent steps.
    #[arg(long)]
    pgd_steps: Option<usize>,
    /// PGD starts per ball.
    #[arg(long)]
    pgd_restarts: Option<usize>,
    /// Single-threaded, reproducible search order.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct VerifyOpts {
    /// Box budget of the branch-and-bound search.
    #[arg(long)]
    max_boxes: Option<usize>,
    /// Boxes narrower than this are not split further.
    #[arg(long)]
    min_width: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesise a policy and certificate with the counterexample loop.
    Train {
        #[command(flatten)]
        common: Common,
        /// vanilla | pgd | lip-neighbor | lip-reg
        #[arg(long, default_value = "vanilla")]
        method: String,
        /// Flat key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key=value` settings applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output model (.clbf).
        #[arg(long)]
        out: PathBuf,
        /// Run-log CSV (defaults to `<out>.log.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Check the three certificate conditions at one perturbation radius.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Perturbation radius (defaults to the model's training radius).
        #[arg(long)]
        delta: Option<f64>,
        /// Required decrease margin.
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[command(flatten)]
        opts: VerifyOpts,
    },
    /// Largest perturbation radius for which the certificate is proved.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta_hi: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[command(flatten)]
        opts: VerifyOpts,
    },
    /// Empirical success rate under perturbations; CSV on stdout.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// adv | random (comma-separated for several).
        #[arg(long, default_value = "adv")]
        mode: String,
        /// Perturbation radii (comma-separated).
        #[arg(long, default_value = "0")]
        delta: String,
        #[arg(long, default_value_t = clbf_core::eval::DEFAULT_N_STATES)]
        n_states: usize,
        #[arg(long, default_value_t = clbf_core::eval::DEFAULT_HORIZON)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write a bar chart.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Smallest Lipschitz budget for which lip-reg training converges.
    TauSearch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Upper end of the search; defaults to the Lipschitz bound of
        /// `--vanilla-model`, or of a vanilla model trained first.
        #[arg(long)]
        upper: Option<f64>,
        #[arg(long)]
        vanilla_model: Option<PathBuf>,
        #[arg(long, default_value_t = 0.25)]
        resolution: f64,
        /// Where to write the model found at the returned budget.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verification, certification and campaign results as files in a directory.
    ExportReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Radii for the campaigns (comma-separated).
        #[arg(long, default_value = "0,0.01,0.03")]
        deltas: String,
        #[arg(long, default_value_t = clbf_core::eval::DEFAULT_N_STATES)]
        n_states: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        delta_hi: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        opts: VerifyOpts,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Normal output goes to `out`, diagnostics to stderr.
pub fn cli_main<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn env_from(common: &Common) -> CliResult<EnvSpec> {
    Ok(EnvSpec::from_name(&common.env, &Default::default())?)
}

fn load_model(path: &Path, common: &Common) -> CliResult<Model> {
    env_from(common)?;
    Ok(Model::load_for(path, &common.env)?)
}

fn bnb_for(model: &Model, common: &Common, opts: &VerifyOpts) -> BnbConfig {
    let mut bnb = BnbConfig::for_env(&model.env);
    bnb.deterministic = common.deterministic;
    if let Some(n) = common.pgd_steps {
        bnb.pgd_steps = n;
    }
    if let Some(n) = common.pgd_restarts {
        bnb.pgd_restarts = n;
    }
    if let Some(n) = opts.max_boxes {
        bnb.max_boxes = n;
    }
    if let Some(w) = opts.min_width {
        bnb.min_width = w;
    }
    bnb
}

fn run_config(
    env: &EnvSpec,
    common: &Common,
    method: Method,
    file: Option<&Path>,
    set: &[String],
    seed: Option<u64>,
) -> CliResult<(EnvSpec, RunConfig)> {
    let mut cfg = RunConfig::defaults(env, method);
    if let Some(f) = file {
        cfg.apply_file(f)?;
    }
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = common.pgd_steps {
        cfg.pgd_steps = n;
        cfg.bnb.pgd_steps = n;
    }
    if let Some(n) = common.pgd_restarts {
        cfg.pgd_restarts = n;
        cfg.bnb.pgd_restarts = n;
    }
    if common.deterministic {
        cfg.bnb.deterministic = true;
    }
    let env = EnvSpec::from_name(&common.env, &cfg.env_overrides)?;
    cfg.validate()?;
    Ok((env, cfg))
}

fn train_once(env: &EnvSpec, cfg: &RunConfig) -> CliResult<CegisOutcome> {
    let mut verifier = BnbVerifier::from_config(cfg);
    let out = cegis_run(env, cfg, &mut verifier, None, &mut |row| {
        info!("{}", row.csv_row());
    })?;
    Ok(out)
}

fn to_model(outcome: &CegisOutcome, cfg: &RunConfig) -> CliResult<Model> {
    let meta = ModelMeta {
        method: cfg.method,
        seed: cfg.seed,
        certified: outcome.certified(),
        verified_delta: cfg.params.delta,
        tau: (cfg.method == Method::LipReg).then_some(cfg.weights.tau),
    };
    Ok(Model::new(outcome.policy.clone(), outcome.cert.clone(), meta)?)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| CliError::Usage(format!("cannot parse {what} '{p}'")))
        })
        .collect()
}

fn verdict_code(verdicts: &[Verdict]) -> i32 {
    if verdicts.iter().any(|v| v.status == Status::Counterexample) {
        EXIT_COUNTEREXAMPLE
    } else if verdicts.iter().any(|v| v.status == Status::Unknown) {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

fn verdict_csv(verdicts: &[Verdict]) -> String {
    let mut s = format!("{}\n", Verdict::CSV_HEADER);
    for v in verdicts {
        s.push_str(&v.csv_row());
        s.push('\n');
    }
    s
}

const CERTIFY_HEADER: &str = "delta_lower,delta_upper,evaluations";

fn run(cmd: Command, out: &mut dyn Write) -> CliResult<i32> {
    match cmd {
        Command::Train {
            common,
            method,
            config,
            set,
            seed,
            out: path,
            log,
        } => {
            let method: Method = method.parse()?;
            let base = env_from(&common)?;
            let (env, cfg) = run_config(&base, &common, method, config.as_deref(), &set, seed)?;
            let outcome = train_once(&env, &cfg)?;
            to_model(&outcome, &cfg)?.save(&path)?;
            let log_path = log.unwrap_or_else(|| {
                let mut p = path.clone().into_os_string();
                p.push(".log.csv");
                PathBuf::from(p)
            });
            fs::write(&log_path, run_log_csv(&outcome.log))?;
            writeln!(out, "status,iterations,model")?;
            writeln!(out, "{},{},{}", outcome.status, outcome.iterations, path.display())?;
            Ok(match outcome.status {
                RunStatus::Certified => EXIT_OK,
                _ => EXIT_PARTIAL,
            })
        }
        Command::Verify {
            common,
            model,
            delta,
            epsilon,
            opts,
        } => {
            let m = load_model(&model, &common)?;
            let bnb = bnb_for(&m, &common, &opts);
            bnb.validate()?;
            let delta = delta.unwrap_or(m.cert.params.delta);
            let verdicts = verify_all(&m.cert, &m.policy, &m.env, delta, epsilon, &bnb);
            for v in &verdicts {
                info!("{}", v.summary());
            }
            out.write_all(verdict_csv(&verdicts).as_bytes())?;
            Ok(verdict_code(&verdicts))
        }
        Command::Certify {
            common,
            model,
            delta_hi,
            tolerance,
            epsilon,
            opts,
        } => {
            let m = load_model(&model, &common)?;
            if !(delta_hi > 0.0 && tolerance > 0.0 && epsilon > 0.0) {
                return Err(CliError::Usage("delta-hi, tolerance and epsilon must be positive".into()));
            }
            let cfg = CertifyConfig {
                delta_hi,
                tolerance,
                epsilon,
                bnb: bnb_for(&m, &common, &opts),
            };
            cfg.bnb.validate()?;
            let r = certify_delta(&m.cert, &m.policy, &m.env, &cfg);
            writeln!(out, "{CERTIFY_HEADER}")?;
            writeln!(
                out,
                "{},{},{}",
                r.delta_lower,
                r.delta_upper.map(|u| u.to_string()).unwrap_or_default(),
                r.evaluations
            )?;
            if let Some(d) = &r.diagnostic {
                eprintln!("{d}");
                return Ok(EXIT_COUNTEREXAMPLE);
            }
            Ok(EXIT_OK)
        }
        Command::Evaluate {
            common,
            model,
            mode,
            delta,
            n_states,
            horizon,
            seed,
            svg,
        } => {
            let m = load_model(&model, &common)?;
            let modes: Vec<Mode> = mode
                .split(',')
                .map(|s| s.trim().parse::<Mode>())
                .collect::<Result<_, _>>()?;
            let deltas: Vec<f64> = parse_list(&delta, "delta")?;
            let mut c = Campaign::new(
                modes.iter().flat_map(|m| deltas.iter().map(move |d| (*m, *d))).collect(),
                seed,
            );
            c.n_states = n_states;
            c.horizon = horizon;
            c.deterministic = common.deterministic;
            if let Some(n) = common.pgd_steps {
                c.pgd_steps = n;
            }
            if let Some(n) = common.pgd_restarts {
                c.pgd_restarts = n;
            }
            let rows = run_campaign(&m.policy, &m.cert, &m.env, &c)?;
            out.write_all(campaign_csv(&rows).as_bytes())?;
            if let Some(p) = svg {
                fs::write(p, campaign_svg(&format!("{} ({})", m.env.name(), m.meta.method), &rows))?;
            }
            Ok(EXIT_OK)
        }
        Command::TauSearch {
            common,
            config,
            set,
            upper,
            vanilla_model,
            resolution,
            out: path,
        } => {
            let base = env_from(&common)?;
            let (env, cfg) = run_config(&base, &common, Method::LipReg, config.as_deref(), &set, None)?;
            let upper = match (upper, vanilla_model) {
                (Some(u), _) => u,
                (None, Some(p)) => {
                    let m = load_model(&p, &common)?;
                    lipschitz_bound_lp(&m.cert.net, NormKind::L2)?
                }
                (None, None) => {
                    let vcfg = RunConfig {
                        method: Method::Vanilla,
                        ..cfg.clone()
                    };
                    let v = train_once(&env, &vcfg)?;
                    if !v.certified() {
                        eprintln!("vanilla training did not converge ({}); no upper bound", v.status);
                        return Ok(EXIT_PARTIAL);
                    }
                    lipschitz_bound_lp(&v.cert.net, NormKind::L2)?
                }
            };
            info!("tau search on [0, {upper}]");
            let found = tau_search(0.0, upper, resolution, |tau| {
                let mut c = cfg.clone();
                c.weights.tau = tau;
                let o = train_once(&env, &c).map_err(|e| match e {
                    CliError::Core(e) => e,
                    other => ClbfError::Config(other.to_string()),
                })?;
                Ok(o.certified().then_some((o, c)))
            });
            let found = match found {
                Ok(f) => f,
                Err(ClbfError::Config(msg)) if msg.starts_with("infeasible") => {
                    eprintln!("{msg}");
                    return Ok(EXIT_PARTIAL);
                }
                Err(e) => return Err(e.into()),
            };
            let (o, c) = &found.artifact;
            if let Some(p) = &path {
                to_model(o, c)?.save(p)?;
            }
            writeln!(out, "tau,infeasible_below,evaluations")?;
            writeln!(out, "{},{},{}", found.tau, found.infeasible_below, found.evaluations)?;
            Ok(EXIT_OK)
        }
        Command::ExportReport {
            common,
            model,
            out: dir,
            deltas,
            n_states,
            seed,
            delta_hi,
            tolerance,
            opts,
        } => {
            if !(delta_hi > 0.0 && tolerance > 0.0) {
                return Err(CliError::Usage("delta-hi and tolerance must be positive".into()));
            }
            let m = load_model(&model, &common)?;
            let bnb = bnb_for(&m, &common, &opts);
            bnb.validate()?;
            fs::create_dir_all(&dir)?;
            let verdicts = verify_all(&m.cert, &m.policy, &m.env, m.cert.params.delta, 1e-6, &bnb);
            fs::write(dir.join("verify.csv"), verdict_csv(&verdicts))?;
            let mut ccfg = CertifyConfig::for_env(&m.env);
            ccfg.bnb = bnb;
            ccfg.delta_hi = delta_hi;
            ccfg.tolerance = tolerance;
            let r = certify_delta(&m.cert, &m.policy, &m.env, &ccfg);
            fs::write(
                dir.join("certify.csv"),
                format!(
                    "{CERTIFY_HEADER}\n{},{},{}\n",
                    r.delta_lower,
                    r.delta_upper.map(|u| u.to_string()).unwrap_or_default(),
                    r.evaluations
                ),
            )?;
            let ds: Vec<f64> = parse_list(&deltas, "delta")?;
            let mut c = Campaign::new(
                [Mode::Adversarial, Mode::Random]
                    .iter()
                    .flat_map(|m| ds.iter().map(move |d| (*m, *d)))
                    .collect(),
                seed,
            );
            c.n_states = n_states;
            c.deterministic = common.deterministic;
            let rows = run_campaign(&m.policy, &m.cert, &m.env, &c)?;
            fs::write(dir.join("evaluate.csv"), campaign_csv(&rows))?;
            fs::write(
                dir.join("evaluate.svg"),
                campaign_svg(&format!("{} ({})", m.env.name(), m.meta.method), &rows),
            )?;
            writeln!(out, "{}", dir.display())?;
            Ok(verdict_code(&verdicts))
        }
    }
}

/// Caps the global rayon pool at `CLBF_THREADS` when set.
pub fn init_threads() {
    if let Some(n) = std::env::var("CLBF_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n >= 1 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = cli_main(std::iter::once("clbf").chain(args.iter().copied()), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn no_arguments_is_usage() {
        assert_eq!(run_args(&[]).0, EXIT_USAGE);
    }

    #[test]
    fn unknown_flag_is_usage() {
        assert_eq!(run_args(&["verify", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["frobnicate"]).0, EXIT_USAGE);
    }

    #[test]
    fn bad_env_is_usage() {
        assert_eq!(run_args(&["verify", "--env", "mars", "--model", "x.clbf"]).0, EXIT_USAGE);
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<f64>("0, 0.01,0.03", "d").unwrap(), vec![0.0, 0.01, 0.03]);
        assert!(parse_list::<f64>("0,x", "d").is_err());
    }
}
