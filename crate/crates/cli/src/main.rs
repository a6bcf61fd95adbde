mod config;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dyadnet::estimator::{EstimateReport, TrimPolicy};
use dyadnet::inference::{bootstrap_se, variance_oracle_p, variance_plugin_p, VarianceReport};
use dyadnet::montecarlo::{draws_csv, emit_table, run_design, TableFormat};
use dyadnet::network::NetworkData;
use dyadnet::tail::{estimate_theta_tail, GammaRule};
use dyadnet::{Error, Result};

use config::{CliConfig, DensityKind, EstimatorKind, SeMode};

#[derive(Parser)]
#[command(
    name = "dyadnet",
    about = "Simulate dyadic networks and estimate homophily under agent-level heterogeneity",
    version = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)")
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one network and write it in the text format.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the homophily coefficient from a network file.
    Estimate {
        network: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        estimator: Option<EstimatorKind>,
        /// `known:<spec>` with `normal(mu,var)` or `uniform(a,b)`, or `kernel`.
        #[arg(long)]
        density: Option<String>,
        #[arg(long)]
        h: Option<f64>,
        /// Condition the kernel density on the pair attributes.
        #[arg(long)]
        conditional: bool,
        /// Band multiplier `c` for `|v| < c·std(v)`, or `none`.
        #[arg(long)]
        trim: Option<String>,
        #[arg(long, value_enum)]
        se: Option<SeMode>,
        #[arg(long)]
        bootstrap_draws: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        level: Option<f64>,
        #[arg(long)]
        gamma_quantile: Option<f64>,
        #[arg(long)]
        grid: Option<usize>,
        /// Write a `key = value` report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write bootstrap draws here.
        #[arg(long)]
        draws_out: Option<PathBuf>,
    },
    /// Run a Monte Carlo design and write CSV and markdown tables.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::SingularGamma { .. } | Error::BootstrapFailed { .. } => 2,
        Error::TrimmingEmpty => 3,
        _ => 1,
    }
}

fn load_config(path: Option<&Path>) -> Result<CliConfig> {
    match path {
        Some(p) => CliConfig::load(p).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", p.display()),
            },
            Error::Io(io) => Error::InvalidConfig(format!("cannot read {}: {io}", p.display())),
            other => other,
        }),
        None => Ok(CliConfig::default()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)
        .map_err(|e| Error::InvalidConfig(format!("cannot write {}: {e}", path.display())))
}

fn simulate(config: Option<&Path>, seed: Option<u64>, n: Option<usize>, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(n) = n {
        cfg.dgp.n = n;
    }
    let seed = seed.unwrap_or(cfg.dgp.seed);
    let net = dyadnet::dgp::simulate_network(&cfg.dgp, seed)?;
    write_file(out, &net.to_text())?;
    println!("n = {}", net.n());
    println!("link_fraction = {}", net.average_degree());
    Ok(())
}

struct EstimateArgs {
    estimator: Option<EstimatorKind>,
    density: Option<String>,
    h: Option<f64>,
    conditional: bool,
    trim: Option<String>,
    se: Option<SeMode>,
    bootstrap_draws: Option<usize>,
    seed: Option<u64>,
    level: Option<f64>,
    gamma_quantile: Option<f64>,
    grid: Option<usize>,
}

fn apply_overrides(cfg: &mut CliConfig, a: &EstimateArgs) -> Result<()> {
    if let Some(e) = a.estimator {
        cfg.estimator.kind = e;
    }
    if let Some(d) = &a.density {
        if d == "kernel" {
            cfg.estimator.density = DensityKind::Kernel;
        } else if let Some(spec) = d.strip_prefix("known:") {
            cfg.estimator.density = DensityKind::Known;
            cfg.estimator.known_density = Some(config::DistSpec::Compact(spec.to_string()));
        } else {
            return Err(Error::InvalidConfig(format!(
                "--density must be `known:<spec>` or `kernel`, got `{d}`"
            )));
        }
    }
    if let Some(h) = a.h {
        cfg.kde.h = h;
    }
    if a.conditional {
        cfg.kde.conditional = true;
    }
    if let Some(t) = &a.trim {
        cfg.trim = if t == "none" {
            TrimPolicy::None
        } else {
            let c = t.parse::<f64>().map_err(|_| {
                Error::InvalidConfig(format!("--trim must be a number or `none`, got `{t}`"))
            })?;
            TrimPolicy::FixedVBand { c }
        };
    }
    if let Some(s) = a.se {
        cfg.inference.se = s;
    }
    if let Some(b) = a.bootstrap_draws {
        cfg.inference.bootstrap_draws = b;
    }
    if let Some(s) = a.seed {
        cfg.inference.seed = s;
    }
    if let Some(l) = a.level {
        cfg.inference.level = l;
    }
    if let Some(q) = a.gamma_quantile {
        cfg.estimator.tail.gamma = GammaRule::Quantile { q, scale: 1.0 };
    }
    if let Some(g) = a.grid {
        cfg.estimator.tail.grid_points = g;
    }
    cfg.validate()
}

fn estimate(
    network: &Path,
    config: Option<&Path>,
    args: &EstimateArgs,
    out: Option<&Path>,
    draws_out: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    apply_overrides(&mut cfg, args)?;
    let file = File::open(network)
        .map_err(|e| Error::InvalidConfig(format!("cannot open {}: {e}", network.display())))?;
    let net = NetworkData::read_text(BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", network.display()),
        },
        other => other,
    })?;
    let report: EstimateReport = match cfg.estimator.kind {
        EstimatorKind::Tail => {
            if cfg.inference.se != SeMode::None {
                return Err(Error::InvalidConfig(
                    "standard errors are available for the special-regressor estimator only".into(),
                ));
            }
            estimate_theta_tail(&net, &cfg.tail_config())?.report(&net)
        }
        EstimatorKind::Special => {
            let est = cfg.special_regressor()?;
            let fit = est.fit(&net)?;
            let mut rep = fit.report(&net);
            let inf = &cfg.inference;
            let bootstrap =
                || bootstrap_se(&net, &est, &fit, inf.bootstrap_draws, inf.seed, inf.level);
            let var: Option<VarianceReport> = match inf.se {
                SeMode::None => None,
                SeMode::Oracle => Some(variance_oracle_p(
                    &net,
                    &fit,
                    &cfg.dgp.theta0,
                    &cfg.dgp.u_dist,
                    inf.components,
                    inf.level,
                )?),
                SeMode::Plugin => {
                    match variance_plugin_p(&net, &fit, inf.smoothing, inf.components, inf.level) {
                        Ok(v) => Some(v),
                        Err(Error::InvalidConfig(msg)) => {
                            log::warn!("plug-in variance unavailable ({msg}); falling back to the node bootstrap");
                            Some(bootstrap()?)
                        }
                        Err(e) => return Err(e),
                    }
                }
                SeMode::Bootstrap => Some(bootstrap()?),
            };
            if let Some(v) = var {
                v.attach_to(&mut rep);
                if let (Some(path), Some(csv)) = (draws_out, v.draws_csv()) {
                    write_file(path, &csv)?;
                }
            }
            rep
        }
    };
    println!("{}", report.csv_header());
    println!("{}", report.csv_row());
    if let Some(path) = out {
        write_file(path, &report.to_record())?;
    }
    Ok(())
}

fn montecarlo(
    config: &Path,
    reps: Option<usize>,
    jobs: Option<usize>,
    out_dir: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(Some(config))?;
    if let Some(r) = reps {
        cfg.mc.reps = r;
    }
    if let Some(d) = out_dir {
        cfg.output.dir = d.to_path_buf();
    }
    let design = cfg.mc_design()?;
    let res = run_design(&design, jobs)?;
    let dir = &cfg.output.dir;
    write_file(
        &dir.join(format!("{}.csv", design.name)),
        &emit_table(&res, TableFormat::Csv),
    )?;
    let md = emit_table(&res, TableFormat::Markdown);
    write_file(&dir.join(format!("{}.md", design.name)), &md)?;
    if cfg.output.dump_draws {
        write_file(
            &dir.join(format!("{}_draws.csv", design.name)),
            &draws_csv(&res),
        )?;
    }
    print!("{md}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            n,
            out,
        } => simulate(config.as_deref(), seed, n, &out),
        Command::Estimate {
            network,
            config,
            estimator,
            density,
            h,
            conditional,
            trim,
            se,
            bootstrap_draws,
            seed,
            level,
            gamma_quantile,
            grid,
            out,
            draws_out,
        } => {
            let args = EstimateArgs {
                estimator,
                density,
                h,
                conditional,
                trim,
                se,
                bootstrap_draws,
                seed,
                level,
                gamma_quantile,
                grid,
            };
            estimate(
                &network,
                config.as_deref(),
                &args,
                out.as_deref(),
                draws_out.as_deref(),
            )
        }
        Command::Montecarlo {
            config,
            reps,
            jobs,
            out_dir,
        } => montecarlo(&config, reps, jobs, out_dir.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
