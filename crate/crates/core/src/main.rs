use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand_distr::Distribution as _;

use ldp_quantile::distributions::Distribution;
use ldp_quantile::estimator::{EstimatorConfig, StepSchedule};
use ldp_quantile::experiments::{self, ExperimentConfig};
use ldp_quantile::pivot::{self, PivotKind, PivotTable};
use ldp_quantile::protocol::net::{user_client, ClientOptions, Curator, ServeOptions};
use ldp_quantile::randomizer::PrivacyLevel;
use ldp_quantile::rng;

#[derive(Parser)]
#[command(name = "ldpq", version, about = "Private online quantile estimation with self-normalized intervals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate critical values for a self-normalized pivot and write a JSON table.
    Pivot(PivotArgs),
    /// Follow one sample path and report both intervals at checkpoints.
    Simulate(ExperimentArgs),
    /// Coverage rate and mean absolute error over a grid of cells.
    Coverage(ExperimentArgs),
    /// Empirical versus nominal coverage across confidence levels.
    Curve(ExperimentArgs),
    /// Five-number summaries of the estimate across replications.
    Boxes(ExperimentArgs),
    /// Variance of the median estimate relative to the one-bit lower bound.
    Optimality(ExperimentArgs),
    /// Run a curator that queries one user per TCP connection.
    Serve(ServeArgs),
    /// Answer curator inquiries as one or more simulated users.
    Client(ClientArgs),
}

#[derive(Args)]
struct PivotArgs {
    #[arg(long, default_value = "squared_integral")]
    kind: PivotKind,
    #[arg(long, default_value_t = pivot::DEFAULT_PATHS)]
    paths: usize,
    #[arg(long, default_value_t = pivot::DEFAULT_GRID_STEPS)]
    grid_steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Significance levels to tabulate (default 0.01, 0.02, ..., 0.99).
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// normal, uniform, cauchy, pert, or e.g. normal(0,1).
    #[arg(long)]
    dist: Option<Distribution>,
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    r: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<u64>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    q0: Option<f64>,
    /// Squared-integral pivot table from `ldpq pivot`.
    #[arg(long)]
    pivot: Option<PathBuf>,
    /// Extra pivot tables (sup_abs, abs_integral); enables trajectory recording.
    #[arg(long, value_delimiter = ',')]
    alt_pivot: Option<Vec<PathBuf>>,
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut exp = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_json(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(d) = self.dist {
            exp.distribution = d;
        }
        if let Some(v) = &self.tau {
            exp.tau = v.clone();
        }
        if let Some(v) = &self.r {
            exp.r = v.clone();
        }
        if let Some(v) = &self.n {
            exp.n = v.clone();
        }
        if let Some(v) = self.reps {
            exp.reps = v;
        }
        if let Some(v) = self.alpha {
            exp.alpha = v;
        }
        if let Some(v) = self.seed {
            exp.seed = v;
        }
        if let Some(v) = self.q0 {
            exp.q0 = v;
        }
        if let Some(v) = &self.pivot {
            exp.pivot_table = Some(v.clone());
        }
        if let Some(v) = &self.alt_pivot {
            exp.alt_pivot_tables = v.clone();
            exp.record_trajectories = true;
        }
        if let Some(v) = &self.checkpoints {
            exp.checkpoints = v.clone();
        }
        if let Some(v) = &self.levels {
            exp.nominal_levels = v.clone();
        }
        if self.threads.is_some() {
            exp.threads = self.threads;
        }
        exp.validate()?;
        Ok(exp)
    }

    fn output(&self) -> anyhow::Result<Box<dyn Write>> {
        open_output(self.out.as_ref())
    }
}

fn open_output(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7151")]
    bind: SocketAddr,
    /// Address for the JSON status endpoint.
    #[arg(long)]
    status_bind: Option<SocketAddr>,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    #[arg(long, default_value_t = 0.0)]
    q0: f64,
    #[arg(long)]
    pivot: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Stop after this many rounds and print the final state.
    #[arg(long)]
    max_rounds: Option<u64>,
    #[arg(long, default_value_t = 5000)]
    timeout_ms: u64,
}

#[derive(Args)]
struct ClientArgs {
    #[arg(long, default_value = "127.0.0.1:7151")]
    connect: String,
    /// A single private value to contribute.
    #[arg(long, conflicts_with = "dist")]
    x: Option<f64>,
    /// Simulate `count` users with values drawn from this distribution.
    #[arg(long)]
    dist: Option<Distribution>,
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    retries: u32,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Pivot(args) => run_pivot(args),
        Command::Simulate(args) => {
            let rows = experiments::trajectory_run(&args.resolve()?)?;
            experiments::write_trajectory_csv(args.output()?, &rows)?;
            Ok(())
        }
        Command::Coverage(args) => {
            let reports = experiments::coverage_experiment(&args.resolve()?)?;
            experiments::write_coverage_csv(args.output()?, &reports)?;
            Ok(())
        }
        Command::Curve(args) => {
            let points = experiments::coverage_curve(&args.resolve()?)?;
            experiments::write_curve_csv(args.output()?, &points)?;
            Ok(())
        }
        Command::Boxes(args) => {
            let boxes = experiments::box_summary(&args.resolve()?)?;
            experiments::write_box_csv(args.output()?, &boxes)?;
            Ok(())
        }
        Command::Optimality(args) => {
            let mut exp = args.resolve()?;
            if args.tau.is_none() && args.config.is_none() {
                exp.tau = vec![0.5];
            }
            let reports = experiments::variance_optimality_check(&exp)?;
            experiments::write_optimality_csv(args.output()?, &reports)?;
            Ok(())
        }
        Command::Serve(args) => run_serve(args),
        Command::Client(args) => run_client(args),
    }
}

fn run_pivot(args: PivotArgs) -> anyhow::Result<()> {
    let alphas = if args.alpha.is_empty() { pivot::default_alphas() } else { args.alpha.clone() };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build()?;
    let table = pool.install(|| PivotTable::build(args.kind, &alphas, args.paths, args.grid_steps, args.seed))?;
    let mut out = open_output(args.out.as_ref())?;
    writeln!(out, "{}", table.to_json()?)?;
    out.flush()?;
    Ok(())
}

fn run_serve(args: ServeArgs) -> anyhow::Result<()> {
    let table = PivotTable::load(&args.pivot)?;
    let config = EstimatorConfig::new(args.tau, PrivacyLevel::from_rate(args.r)?)
        .with_q0(args.q0)
        .with_schedule(StepSchedule::default());
    let options = ServeOptions {
        alpha: args.alpha,
        max_rounds: args.max_rounds,
        round_timeout: Duration::from_millis(args.timeout_ms),
        status_bind: args.status_bind,
    };
    let curator = Curator::bind(args.bind, config, &table, options)?;
    eprintln!("curator listening on {}", curator.local_addr()?);
    if let Some(addr) = curator.status_addr() {
        eprintln!("status on http://{addr}/");
    }
    let state = curator.run()?;
    println!("{}", state.to_json()?);
    Ok(())
}

fn run_client(args: ClientArgs) -> anyhow::Result<()> {
    let options = ClientOptions { max_attempts: args.retries.max(1), ..ClientOptions::default() };
    let mut coins = rng::stream(args.seed, &[1]);
    match (args.x, args.dist) {
        (Some(x), None) => {
            let round = user_client(args.connect.as_str(), x, &mut coins, &options)?;
            println!("seq={} threshold={} bit={}", round.query.seq, round.query.threshold, round.response.bit.as_u8());
        }
        (None, Some(dist)) => {
            let source = dist.sampler();
            let mut data_rng = rng::stream(args.seed, &[0]);
            let mut ok = 0u64;
            for _ in 0..args.count {
                let x = source.sample(&mut data_rng);
                match user_client(args.connect.as_str(), x, &mut coins, &options) {
                    Ok(_) => ok += 1,
                    Err(e) => log::warn!("round failed, datum discarded: {e}"),
                }
            }
            println!("completed {ok} of {} rounds", args.count);
        }
        _ => bail!("pass either --x or --dist"),
    }
    Ok(())
}
