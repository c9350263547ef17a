use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refbcm::data::{read_csv, summarize, write_csv};
use refbcm::harness::{
    run_benchmark, run_method, summarize_log, BenchmarkOptions, HarnessConfig, Method, MethodSettings, MethodSpec,
};
use refbcm::inference::PriorSpec;
use refbcm::rng::stream;
use refbcm::sim::simulate_trial_pair;
use refbcm::{Error, Result};

#[derive(Parser)]
#[command(name = "refbcm", version, about = "Treatment-policy estimation with missing post-discontinuation outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trial from a scenario and write it as CSV.
    Simulate {
        /// Preset name (e.g. hd-hm-k0-0) or TOML config path.
        #[arg(long)]
        config: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the data before post-discontinuation outcomes were masked.
        #[arg(long)]
        complete_out: Option<PathBuf>,
    },
    /// Run one estimator on a trial CSV.
    Analyze {
        /// Trial CSV (wide format, one row per patient).
        data: PathBuf,
        #[arg(long)]
        method: Method,
        /// TOML config supplying [prior] and [settings]; flags override it.
        #[arg(long)]
        config: Option<String>,
        #[command(flatten)]
        common: Common,
        /// Print only the JSON report.
        #[arg(long)]
        json: bool,
    },
    /// Replicate a scenario and tabulate mean, empirical SE, estimated SE and coverage.
    Benchmark {
        /// Preset name or TOML config path.
        #[arg(long)]
        config: String,
        #[arg(long)]
        reps: Option<usize>,
        /// Methods to run instead of the config's list (repeatable).
        #[arg(long = "method")]
        methods: Vec<Method>,
        #[command(flatten)]
        common: Common,
        /// Output directory for table.csv and the per-replication log.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Rebuild a benchmark table from a per-replication log.
    Summarize {
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-visit counts of on-treatment, observed post-discontinuation and missing outcomes.
    Describe { data: PathBuf },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Prior mean of k0.
    #[arg(long)]
    prior_mean: Option<f64>,
    /// Prior SD of k0.
    #[arg(long)]
    prior_sd: Option<f64>,
    /// Use the sampler, bootstrap and imputation sizes of the original study.
    #[arg(long)]
    paper_scale: bool,
}

impl Common {
    fn apply_prior(&self, prior: &mut PriorSpec) {
        if let Some(m) = self.prior_mean {
            prior.k0_mean = m;
        }
        if let Some(s) = self.prior_sd {
            prior.k0_sd = s;
        }
    }

    fn settings(&self, base: MethodSettings) -> MethodSettings {
        if self.paper_scale {
            MethodSettings::paper_scale()
        } else {
            base
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            config,
            seed,
            out,
            complete_out,
        } => {
            let cfg = HarnessConfig::resolve(&config)?;
            let (complete, masked) = simulate_trial_pair(&cfg.scenario, seed)?;
            write_csv(&masked, &out)?;
            if let Some(path) = complete_out {
                write_csv(&complete, &path)?;
            }
            eprintln!("wrote {} patients to {}", masked.len(), out.display());
            Ok(())
        }
        Command::Analyze {
            data,
            method,
            config,
            common,
            json,
        } => {
            let ds = read_csv(&data)?;
            let (mut prior, settings) = match config {
                Some(c) => {
                    let cfg = HarnessConfig::resolve(&c)?;
                    (cfg.prior, cfg.settings)
                }
                None => (PriorSpec::default(), MethodSettings::default()),
            };
            common.apply_prior(&mut prior);
            let settings = common.settings(settings);
            let spec = MethodSpec::new(method, prior);
            let mut rng = stream(common.seed.unwrap_or(1));
            let report = run_method(&spec, &settings, &ds, None, &mut rng)?;
            println!("{}", report.to_json());
            if !json {
                eprintln!(
                    "{}: estimate {:.4}, SE {:.4}, 95% interval ({:.4}, {:.4})",
                    spec.label(),
                    report.point,
                    report.se,
                    report.ci_low,
                    report.ci_high
                );
                if let Some(w) = &report.aux.warning {
                    eprintln!("warning: {w}");
                }
            }
            Ok(())
        }
        Command::Benchmark {
            config,
            reps,
            methods,
            common,
            out,
            jobs,
        } => {
            let mut cfg = HarnessConfig::resolve(&config)?;
            let base = cfg.prior.clone();
            common.apply_prior(&mut cfg.prior);
            if methods.is_empty() {
                for spec in &mut cfg.methods {
                    if spec.prior == base {
                        spec.prior = cfg.prior.clone();
                    }
                }
            } else {
                cfg.methods = methods.iter().map(|&m| MethodSpec::new(m, cfg.prior.clone())).collect();
            }
            cfg.prior.validate()?;
            if let Some(n) = reps {
                cfg.n_reps = n;
            }
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            cfg.settings = common.settings(cfg.settings);
            let log = match &out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
                    Some(dir.join("log.csv"))
                }
                None => None,
            };
            let table = run_benchmark(&cfg, &BenchmarkOptions { jobs, log })?;
            print!("{table}");
            if let Some(dir) = out {
                table.write_csv(&dir.join("table.csv"))?;
            }
            Ok(())
        }
        Command::Summarize { log, out } => {
            let table = summarize_log(&log)?;
            print!("{table}");
            if let Some(path) = out {
                table.write_csv(&path)?;
            }
            Ok(())
        }
        Command::Describe { data } => {
            let ds = read_csv(&data)?;
            println!("{}", serde_json::to_string_pretty(&summarize(&ds)).expect("summary serializes"));
            Ok(())
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}
