//! `robfactor` command-line driver.
//!
//! Every successful run writes `run.json`, the fully resolved configuration;
//! `robfactor replay run.json` repeats the run and reproduces its outputs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use robfactor::estimators::{Estimator, HpcaConfig, IhrConfig, TauRule};
use robfactor::huber::{HuberConfig, TauPolicy};
use robfactor::io::{format_float, read_panel, write_factors, write_fit, write_json, write_loadings, write_panel, write_rows};
use robfactor::metrics::{run_monte_carlo, RankRule, Study};
use robfactor::portfolio::{rolling_backtest, BacktestConfig};
use robfactor::rank::{default_k, default_threshold, estimate_rank_er, estimate_rank_rm, RankMethod, RmEstimator};
use robfactor::synth::{gen_scenario, Scenario, SimConfig};
use robfactor::Error;

#[derive(Parser)]
#[command(name = "robfactor", version, about = "Robust factor analysis with Huber PCA and iterative Huber regression")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a factor model to a panel CSV.
    Fit(FitArgs),
    /// Estimate the number of factors.
    Rank(RankArgs),
    /// Generate a synthetic panel.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo study.
    Mc(McArgs),
    /// Rolling minimum-variance backtest.
    Backtest(BacktestArgs),
    /// Repeat a run from its run.json.
    Replay(ReplayArgs),
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be non-negative and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = ["pca", "hpca", "ihr"])]
    method: String,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    r: u64,
    /// Fixed Huber threshold (default: data-driven).
    #[arg(long, value_parser = positive_f64)]
    tau: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = ["rm-hpca", "rm-ihr", "er"])]
    method: String,
    /// Over-specified rank, or the largest candidate for er (default: min(8, min(N,T)/2)).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    /// Rank-minimization threshold (default: min(N,T)^(-1/3)).
    #[arg(long = "P", value_parser = positive_f64)]
    p: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, value_parser = ["A", "B", "C", "D"])]
    scenario: String,
    #[arg(long)]
    case: u32,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    t: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct McArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated estimators (pca,hpca,ihr) or rank rules (rm-hpca,rm-ihr,er).
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    /// Rank studies: over-specified rank (default: min(8, min(N,T)/2)).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    /// Rank studies: threshold (default: min(N,T)^(-1/3)).
    #[arg(long = "P", value_parser = positive_f64)]
    p: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BacktestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = ["pca", "hpca", "ihr"], default_value = "ihr")]
    method: String,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..), default_value_t = 2)]
    r: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..), default_value_t = 72)]
    window: u64,
    #[arg(long = "thresh-const", value_parser = non_negative_f64, default_value_t = 0.5)]
    thresh_const: f64,
    /// Also write the weights of every month.
    #[arg(long)]
    weights: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    run: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Fully resolved configuration of a run, echoed to `run.json`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum RunConfig {
    Fit {
        input: PathBuf,
        r: usize,
        estimator: Estimator,
    },
    Rank {
        input: PathBuf,
        method: RankMethod,
        k: usize,
        threshold: Option<f64>,
        estimator: Option<Estimator>,
    },
    Simulate {
        scenario: Scenario,
        case: u32,
        config: SimConfig,
    },
    Mc {
        scenario: Scenario,
        case: u32,
        config: SimConfig,
        study: Study,
        reps: usize,
        seed: u64,
    },
    Backtest {
        input: PathBuf,
        config: BacktestConfig,
        weights: bool,
    },
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

fn estimator(method: &str, tau: Option<f64>) -> Result<Estimator, Error> {
    Ok(match (method, tau) {
        ("pca", None) => Estimator::Pca,
        ("pca", Some(_)) => return Err(usage("--tau does not apply to --method pca")),
        ("hpca", t) => Estimator::Hpca(HpcaConfig {
            tau_rule: t.map_or(TauRule::MedianResidualNorm, TauRule::Fixed),
            ..HpcaConfig::default()
        }),
        ("ihr", t) => Estimator::Ihr(IhrConfig {
            huber: t.map_or_else(HuberConfig::default, |t| HuberConfig { tau: TauPolicy::Fixed(t), ..HuberConfig::default() }),
            ..IhrConfig::default()
        }),
        (other, _) => return Err(usage(format!("unknown method {other}; valid: {}", Estimator::NAMES.join(", ")))),
    })
}

fn sim_config(a: &ScenarioArgs) -> Result<(Scenario, SimConfig), Error> {
    let scenario = Scenario::parse(&a.scenario).ok_or_else(|| usage(format!("unknown scenario {}", a.scenario)))?;
    let cfg = SimConfig::preset(scenario, a.case, a.n as usize, a.t as usize, a.seed)?;
    Ok((scenario, cfg))
}

fn resolve(command: Command) -> Result<(RunConfig, PathBuf), Error> {
    Ok(match command {
        Command::Fit(a) => {
            let est = estimator(&a.method, a.tau)?;
            (RunConfig::Fit { input: a.input, r: a.r as usize, estimator: est }, a.out)
        }
        Command::Rank(a) => {
            let panel = read_panel(&a.input)?;
            let (n, t) = (panel.n(), panel.t());
            let method = RankMethod::by_name(&a.method).expect("validated by clap");
            let k = a.k.map_or_else(|| default_k(n, t), |k| k as usize);
            let (threshold, estimator) = match method {
                RankMethod::Er => {
                    if a.p.is_some() {
                        return Err(usage("--P does not apply to --method er"));
                    }
                    (None, None)
                }
                RankMethod::RmHpca => (Some(a.p.unwrap_or_else(|| default_threshold(n, t))), Some(Estimator::Hpca(HpcaConfig::default()))),
                RankMethod::RmIhr => (Some(a.p.unwrap_or_else(|| default_threshold(n, t))), Some(Estimator::Ihr(IhrConfig::default()))),
            };
            (RunConfig::Rank { input: a.input, method, k, threshold, estimator }, a.out)
        }
        Command::Simulate(a) => {
            let (scenario, config) = sim_config(&a.scenario)?;
            (RunConfig::Simulate { scenario, case: a.scenario.case, config }, a.out)
        }
        Command::Mc(a) => {
            let (scenario, config) = sim_config(&a.scenario)?;
            let fits: Vec<_> = a.methods.iter().map(|m| Estimator::by_name(m)).collect();
            let ranks: Vec<_> = a.methods.iter().map(|m| RankMethod::by_name(m)).collect();
            let study = if fits.iter().all(Option::is_some) {
                if a.k.is_some() || a.p.is_some() {
                    return Err(usage("--k and --P apply only to rank studies"));
                }
                Study::Estimation { methods: fits.into_iter().flatten().collect() }
            } else if ranks.iter().all(Option::is_some) {
                let k = a.k.map_or_else(|| default_k(config.n, config.t), |k| k as usize);
                let p = a.p.unwrap_or_else(|| default_threshold(config.n, config.t));
                let rules = ranks
                    .into_iter()
                    .flatten()
                    .map(|method| RankRule { method, k, threshold: (method != RankMethod::Er).then_some(p) })
                    .collect();
                Study::Rank { rules }
            } else {
                return Err(usage(format!(
                    "--methods must be all estimators ({}) or all rank rules ({}), got {}",
                    Estimator::NAMES.join(", "),
                    RankMethod::NAMES.join(", "),
                    a.methods.join(",")
                )));
            };
            (RunConfig::Mc { scenario, case: a.scenario.case, config, study, reps: a.reps as usize, seed: a.scenario.seed }, a.out)
        }
        Command::Backtest(a) => {
            let config = BacktestConfig {
                window: a.window as usize,
                r: a.r as usize,
                method: estimator(&a.method, None)?,
                threshold_const: a.thresh_const,
            };
            (RunConfig::Backtest { input: a.input, config, weights: a.weights }, a.out)
        }
        Command::Replay(a) => {
            let text = std::fs::read_to_string(&a.run)?;
            (serde_json::from_str(&text)?, a.out)
        }
    })
}

fn execute(run: &RunConfig, out: &Path) -> Result<(), Error> {
    match run {
        RunConfig::Fit { input, r, estimator } => {
            let panel = read_panel(input)?;
            let fit = estimator.fit(&panel, *r)?;
            write_fit(out, &panel, &fit)?;
        }
        RunConfig::Rank { input, method, k, threshold, estimator } => {
            let panel = read_panel(input)?;
            let est = match (method, estimator) {
                (RankMethod::Er, _) => estimate_rank_er(&panel, *k)?,
                (_, Some(Estimator::Hpca(c))) => estimate_rank_rm(&panel, *k, &RmEstimator::Hpca(*c), *threshold)?,
                (_, Some(Estimator::Ihr(c))) => estimate_rank_rm(&panel, *k, &RmEstimator::Ihr(*c), *threshold)?,
                _ => return Err(usage("rank minimization needs an hpca or ihr estimator")),
            };
            std::fs::create_dir_all(out)?;
            write_json(&out.join("rank.json"), &est)?;
            println!("{}", serde_json::to_string_pretty(&est)?);
        }
        RunConfig::Simulate { config, .. } => {
            let truth = gen_scenario(config)?;
            std::fs::create_dir_all(out)?;
            write_panel(&out.join("panel.csv"), &truth.panel)?;
            write_loadings(&out.join("truth_loadings.csv"), truth.panel.series_ids(), &truth.loadings)?;
            write_factors(&out.join("truth_factors.csv"), truth.panel.time_ids(), &truth.factors)?;
            write_json(&out.join("config.json"), config)?;
        }
        RunConfig::Mc { config, study, reps, seed, .. } => {
            let report = run_monte_carlo(config, study, *reps, *seed)?;
            std::fs::create_dir_all(out)?;
            write_json(&out.join("report.json"), &report)?;
            std::fs::write(out.join("table.csv"), report.to_csv())?;
        }
        RunConfig::Backtest { input, config, weights } => {
            let panel = read_panel(input)?;
            let report = rolling_backtest(&panel, config)?;
            std::fs::create_dir_all(out)?;
            write_json(&out.join("report.json"), &report)?;
            let rows = report.oos_times.iter().zip(&report.oos_returns).map(|(t, r)| vec![t.clone(), format_float(*r)]);
            write_rows(&out.join("oos_returns.csv"), &["time", "return"], rows)?;
            if *weights {
                let header: Vec<&str> = std::iter::once("time").chain(panel.series_ids().iter().map(String::as_str)).collect();
                let rows = report.oos_times.iter().zip(&report.weights).map(|(t, w)| {
                    std::iter::once(t.clone()).chain(w.iter().map(|x| format_float(*x))).collect()
                });
                write_rows(&out.join("weights.csv"), &header, rows)?;
            }
        }
    }
    write_json(&out.join("run.json"), run)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) | Error::Dimension(_) => 2,
        Error::Data { .. } | Error::Io(_) | Error::Json(_) | Error::Validation(_) => 3,
        Error::Degenerate(_) | Error::DegenerateFactor { .. } | Error::NotPositiveDefinite => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = resolve(cli.command).and_then(|(run, out)| execute(&run, &out));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
