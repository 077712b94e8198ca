//! `mwl`: analyzer, simulator and convergence runner for membrane-perturbed
//! random walks.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use mwl_core::lab::config::{ExperimentConfig, ModelSpec, Tolerances};
use mwl_core::lab::{run_convergence, write_outputs, Lab};
use mwl_core::membrane::gamma_exact;
use mwl_core::skew_bm::SkewBm;
use mwl_core::walk::{Sampler, SimOptions};

#[derive(Parser)]
#[command(
    name = "mwl",
    version,
    about = "Random walks with a perturbed membrane and their skew Brownian limit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact skewness parameter and embedded-chain quantities.
    Analyze {
        config: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        eta_eps: Option<f64>,
    },
    /// Simulate one path and print its ledger summary.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: u64,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        stream: u64,
        /// Write the path as `step,position` CSV.
        #[arg(long)]
        path_csv: Option<PathBuf>,
        /// Extra step counts at which to print summaries.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<u64>,
    },
    /// Run every convergence check and write `report.json` and `convergence.csv`.
    Convergence {
        config: PathBuf,
        /// Overrides `experiment.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 1 when a check fails.
        #[arg(long)]
        strict: bool,
    },
    /// Skew Brownian motion reference.
    Skewbm {
        #[command(subcommand)]
        command: SkewCommand,
    },
    /// Martingale diagnostics at the configured scale.
    Diagnose {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SkewParams {
    #[arg(long, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

#[derive(Args)]
struct PointParams {
    #[command(flatten)]
    bm: SkewParams,
    #[arg(long)]
    t: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    x: f64,
    /// Comma separated evaluation points.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    y: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Exact,
    Flip,
}

#[derive(Subcommand)]
enum SkewCommand {
    /// CSV `y,density`.
    Density(PointParams),
    /// CSV `y,cdf`.
    Cdf(PointParams),
    /// CSV `path_id,time,value`.
    Sample {
        #[command(flatten)]
        bm: SkewParams,
        /// Increasing times; 0 is prepended when missing.
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        paths: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Method::Exact)]
        method: Method,
        /// Lattice resolution of the approximate flipping sampler.
        #[arg(long, default_value_t = 10_000)]
        resolution: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Analyze {
            config,
            tol,
            eta_eps,
        } => analyze(&config, tol, eta_eps),
        Command::Simulate {
            config,
            steps,
            seed,
            stream,
            path_csv,
            checkpoints,
        } => simulate(
            &config,
            steps,
            seed,
            stream,
            path_csv.as_deref(),
            checkpoints,
        ),
        Command::Convergence {
            config,
            out,
            strict,
        } => convergence(&config, out, strict),
        Command::Skewbm { command } => skewbm(command),
        Command::Diagnose { config, out } => diagnose(&config, out.as_deref()),
    }
}

/// Accepts a full experiment config or a bare model document.
fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("model").is_some() {
        Ok(ExperimentConfig::from_json(&text)?)
    } else {
        let model: ModelSpec = serde_json::from_value(value)?;
        Ok(ExperimentConfig {
            model,
            experiment: Default::default(),
        })
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let written = serde_json::to_writer_pretty(&mut out, value)
        .map_err(io::Error::from)
        .and_then(|_| writeln!(out));
    match written {
        // a closed downstream pipe (e.g. `| head`) is not an error
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn analyze(path: &Path, tol: Option<f64>, eta_eps: Option<f64>) -> Result<()> {
    let config = load(path)?;
    let mut tolerances: Tolerances = config.experiment.tolerances.clone();
    if let Some(t) = tol {
        tolerances.analyzer_tol = t;
    }
    if let Some(e) = eta_eps {
        tolerances.eta_eps = e;
    }
    let model = config.model.build()?;
    let chain = gamma_exact(&model, &tolerances.analyzer())?;
    print_json(&json!({
        "gamma": chain.gamma,
        "e_plus": chain.e_plus,
        "e_minus": chain.e_minus,
        "pi": chain.pi,
        "sigma2": chain.sigma2,
        "truncation_report": chain.truncation_report,
    }))
}

fn simulate(
    path: &Path,
    steps: u64,
    seed: Option<u64>,
    stream: u64,
    path_csv: Option<&Path>,
    checkpoints: Vec<u64>,
) -> Result<()> {
    let config = load(path)?;
    let model = config.model.build()?;
    let seed = seed.unwrap_or_else(|| config.experiment.master_seed());
    if let Some(&bad) = checkpoints.iter().find(|&&c| c > steps) {
        bail!("checkpoint {bad} exceeds the {steps} simulated steps");
    }
    let options = SimOptions {
        retain_path: path_csv.is_some(),
        retain_events: false,
        checkpoints: checkpoints.clone(),
    };
    let run = Sampler::new(&model).run(steps, seed, stream, &options);
    if let (Some(file), Some(walk)) = (path_csv, run.path.as_ref()) {
        let mut out = BufWriter::new(fs::File::create(file)?);
        writeln!(out, "step,position")?;
        for (k, x) in walk.positions.iter().enumerate() {
            writeln!(out, "{k},{x}")?;
        }
        out.flush()?;
    }
    if checkpoints.is_empty() {
        print_json(&run.ledger.summary)
    } else {
        print_json(&json!({
            "seed": seed,
            "stream": stream,
            "summary": run.ledger.summary,
            "checkpoints": run.checkpoints,
        }))
    }
}

fn convergence(path: &Path, out: Option<PathBuf>, strict: bool) -> Result<()> {
    let config = load(path)?;
    let dir = out
        .or_else(|| config.experiment.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let (report, csv) = run_convergence(&config)?;
    write_outputs(&dir, &report, &csv)?;
    for (line, verdict) in report.verdicts() {
        let tag = match verdict {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "N/A ",
        };
        println!("{tag} {line}");
    }
    println!("config hash {}", report.config_hash);
    println!("wrote {}", dir.display());
    if strict && !report.all_pass {
        std::process::exit(1);
    }
    Ok(())
}

fn diagnose(path: &Path, out: Option<&Path>) -> Result<()> {
    let config = load(path)?;
    let exp = &config.experiment;
    let model = config.model.build()?;
    let chain = gamma_exact(&model, &exp.tolerances.analyzer())?;
    let mut csv = Vec::new();
    let check = Lab::new(&model, &chain, exp.master_seed()).diagnostics(
        exp.diag_scale,
        &exp.diag_times,
        exp.diag_paths,
        exp.tolerances.z,
        &mut csv,
    )?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("diagnostics.json"),
            serde_json::to_string_pretty(&check)?,
        )?;
        let file = BufWriter::new(fs::File::create(dir.join("diagnostics.csv"))?);
        mwl_core::lab::write_csv(file, &csv)?;
    }
    print_json(&check)
}

fn skewbm(command: SkewCommand) -> Result<()> {
    let stdout = io::stdout();
    match command {
        SkewCommand::Density(p) | SkewCommand::Cdf(p) if p.t <= 0.0 => {
            bail!("t must be positive, got {}", p.t)
        }
        SkewCommand::Density(p) => {
            let bm = SkewBm::new(p.bm.beta, p.bm.sigma)?;
            let mut out = stdout.lock();
            writeln!(out, "y,density")?;
            for y in p.y {
                writeln!(out, "{y},{}", bm.density(p.t, p.x, y)?)?;
            }
        }
        SkewCommand::Cdf(p) => {
            let bm = SkewBm::new(p.bm.beta, p.bm.sigma)?;
            let mut out = stdout.lock();
            writeln!(out, "y,cdf")?;
            for y in p.y {
                writeln!(out, "{y},{}", bm.transition_cdf(p.t, p.x, y)?)?;
            }
        }
        SkewCommand::Sample {
            bm,
            mut times,
            paths,
            seed,
            method,
            resolution,
            out,
        } => {
            let bm = SkewBm::new(bm.beta, bm.sigma)?;
            if times.first() != Some(&0.0) {
                times.insert(0, 0.0);
            }
            let mut sink: Box<dyn Write> = match out {
                Some(file) => Box::new(BufWriter::new(fs::File::create(file)?)),
                None => Box::new(BufWriter::new(stdout.lock())),
            };
            writeln!(sink, "path_id,time,value")?;
            for id in 0..paths {
                let values = match method {
                    Method::Exact => bm.sample_path(&times, seed, id)?,
                    Method::Flip => {
                        bm.sample_by_excursion_flipping(resolution, &times, seed, id)?
                    }
                };
                for (t, v) in times.iter().zip(values) {
                    writeln!(sink, "{id},{t},{v}")?;
                }
            }
            sink.flush()?;
        }
    }
    Ok(())
}
