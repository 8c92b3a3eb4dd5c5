// SPDX-License-Identifier: MIT OR Apache-2.0

//! `nmfcpd`: detect change points and estimate networks in multivariate time series.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nmfcpd::io::{self, IngestOptions, InputSummary, ResultDocument, TruthDocument};
use nmfcpd::pipeline::{self, NetworkCut};
use nmfcpd::sim::{self, SimulationScenario};
use nmfcpd::{DetectorConfig, Error, LossKind, Preset, Schedule};

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "NMFCPD_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "nmfcpd",
    version,
    about = "Change points and networks in multivariate time series via NMF"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Detect change points and optionally estimate a network per segment.
    Detect(DetectArgs),
    /// Select the factorization rank.
    Rank(RankArgs),
    /// Estimate consensus networks between given change points.
    EstimateNet(NetArgs),
    /// Generate a simulated data set with known change points.
    Simulate(SimulateArgs),
    /// Score a result document against simulation truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug, Clone)]
struct DetectorArgs {
    /// Parameter preset the other flags override.
    #[arg(long, default_value = "paper")]
    preset: Preset,
    /// Minimum distance between change points.
    #[arg(long)]
    delta: Option<usize>,
    /// NMF restarts per fit.
    #[arg(long)]
    nrun: Option<usize>,
    /// Refit repetitions per candidate.
    #[arg(long)]
    nreps: Option<usize>,
    /// Significance level of the confirmation test.
    #[arg(long)]
    alpha: Option<f64>,
    /// Factorization rank; selected from the data when omitted.
    #[arg(long)]
    rank: Option<usize>,
    /// Loss function: euclidean or kl.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run on the current thread only.
    #[arg(long)]
    sequential: bool,
}

impl DetectorArgs {
    fn config(&self) -> DetectorConfig {
        let mut c = DetectorConfig::preset(self.preset);
        c.seed = self.seed;
        c.delta = self.delta.unwrap_or(c.delta);
        c.n_run = self.nrun.unwrap_or(c.n_run);
        c.n_reps = self.nreps.unwrap_or(c.n_reps);
        c.alpha = self.alpha.unwrap_or(c.alpha);
        c.loss = self.loss.unwrap_or(c.loss);
        c.rank = self.rank.or(c.rank);
        if self.sequential {
            c.schedule = Schedule::Sequential;
        }
        c
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct CutArgs {
    /// Cut each segment's dendrogram into this many clusters.
    #[arg(long)]
    clusters: Option<usize>,
    /// Keep consensus entries above this threshold as edges.
    #[arg(long)]
    lambda: Option<f64>,
}

impl CutArgs {
    fn cut(self) -> NetworkCut {
        NetworkCut {
            clusters: self.clusters,
            lambda: self.lambda,
        }
    }

    fn wanted(self) -> bool {
        self.clusters.is_some() || self.lambda.is_some()
    }
}

#[derive(Args, Debug)]
struct DetectArgs {
    /// Delimited text file, one row per time point.
    input: PathBuf,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    cut: CutArgs,
    /// Result document path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RankArgs {
    input: PathBuf,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Smallest rank tried.
    #[arg(long)]
    min_rank: Option<usize>,
    /// Largest rank tried.
    #[arg(long)]
    max_rank: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NetArgs {
    input: PathBuf,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    cut: CutArgs,
    /// Comma-separated change points.
    #[arg(long, value_delimiter = ',', conflicts_with = "result")]
    change_points: Vec<usize>,
    /// Take change points and rank from an earlier `detect` document.
    #[arg(long)]
    result: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Simulation design, 1 to 5.
    #[arg(long)]
    scenario: u8,
    /// Number of variables; the published size when omitted.
    #[arg(long)]
    vars: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data file; the truth is written next to it as `<stem>.truth.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Result document from `detect`.
    result: PathBuf,
    /// Truth document from `simulate`.
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error paired with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = error
            .chain()
            .find_map(|c| c.downcast_ref::<Error>())
            .map_or(1, exit_code);
        Self { code, error }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => 2,
        Error::Ingest { .. } | Error::InvalidInput(_) | Error::Dimension(_) | Error::Json(_) => 3,
        Error::NumericalFailure { .. } | Error::DivergenceUndefined { .. } | Error::NotPositiveDefinite { .. } => 4,
        Error::Io(_) => 1,
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::from(Error::invalid_config(msg))
}

type CliResult<T = ()> = Result<T, Failure>;

fn init_threads() -> CliResult {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_error(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    log::debug!("using {threads} worker threads");
    Ok(())
}

fn read_input(path: &Path) -> CliResult<io::InputDocument> {
    Ok(io::ingest(path, IngestOptions::default())?)
}

fn summary(doc: &io::InputDocument) -> InputSummary {
    InputSummary {
        source: Some(doc.source.display().to_string()),
        n_times: doc.values.nrows(),
        n_vars: doc.values.ncols(),
        names: doc.names.clone(),
    }
}

fn write_or_print(text: &str, out: Option<&Path>) -> CliResult {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("writing to stdout")?,
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

fn detect(args: DetectArgs) -> CliResult {
    let config = args.detector.config();
    config.validate()?;
    let input = read_input(&args.input)?;
    let result = pipeline::detect(input.values.view(), &config)?;
    let networks = if args.cut.wanted() {
        let (y, _) = io::shift_nonneg(input.values.view())?;
        pipeline::segment_networks(&y, &result.change_points, result.rank.rank, args.cut.cut(), &config)?
    } else {
        Vec::new()
    };
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("result.json"));
    let doc = ResultDocument::new(summary(&input), result, &networks, &out);
    match &args.out {
        Some(path) => io::emit(&doc, &networks, path)?,
        None => {
            if !networks.is_empty() {
                log::warn!("network matrices are only written with --out");
            }
            write_or_print(&doc.to_json()?, None)?;
        }
    }
    eprintln!("change points: {:?}", doc.change_points);
    Ok(())
}

fn rank(args: RankArgs) -> CliResult {
    let mut config = args.detector.config();
    if args.detector.rank.is_some() {
        return Err(config_error("--rank makes no sense for rank selection"));
    }
    if args.min_rank.is_some() || args.max_rank.is_some() {
        let (lo, hi) = config.rank_range.unwrap_or((2, nmfcpd::config::DEFAULT_MAX_RANK));
        config.rank_range = Some((args.min_rank.unwrap_or(lo), args.max_rank.unwrap_or(hi)));
    }
    config.validate()?;
    let input = read_input(&args.input)?;
    let (y, _) = io::shift_nonneg(input.values.view())?;
    let choice = pipeline::resolve_rank(&y, &config)?;
    write_or_print(&to_json(&choice.search)?, args.out.as_deref())?;
    eprintln!("rank: {}", choice.rank);
    Ok(())
}

fn estimate_net(args: NetArgs) -> CliResult {
    if !args.cut.wanted() {
        return Err(config_error("give --clusters, --lambda or both"));
    }
    let config = args.detector.config();
    let (change_points, rank) = match &args.result {
        Some(path) => {
            let doc = io::read_result(path).map_err(|e| match e {
                Error::Io(io) => Error::ingest(path.display().to_string(), io.to_string()),
                other => other,
            })?;
            (doc.change_points, args.detector.rank.or(Some(doc.result.rank.rank)))
        }
        None => (args.change_points.clone(), args.detector.rank),
    };
    config.validate()?;
    let input = read_input(&args.input)?;
    let (y, _) = io::shift_nonneg(input.values.view())?;
    let rank = match rank {
        Some(r) => r,
        None => pipeline::resolve_rank(&y, &config)?.rank,
    };
    let networks = pipeline::segment_networks(&y, &change_points, rank, args.cut.cut(), &config)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("networks.json"));
    let placeholder = nmfcpd::DetectionResult {
        n_times: y.n_times(),
        n_vars: y.n_vars(),
        shift: 0.0,
        rank: pipeline::RankChoice { rank, search: None },
        candidates: Default::default(),
        confirmed: Default::default(),
        change_points: change_points.clone(),
        config: config.clone(),
    };
    let doc = ResultDocument::new(summary(&input), placeholder, &networks, &out);
    match &args.out {
        Some(path) => {
            io::emit(&doc, &networks, path)?;
        }
        None => write_or_print(&to_json(&doc.networks)?, None)?,
    }
    for n in &doc.networks {
        eprintln!(
            "segment {}..={}: cluster density {:?}, threshold density {:?}",
            n.first, n.last, n.cluster_density, n.threshold_density
        );
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> CliResult {
    let scenario = match args.vars {
        Some(p) => SimulationScenario::with_vars(args.scenario, p)?,
        None => SimulationScenario::paper(args.scenario)?,
    };
    let s = sim::generate(&scenario, args.seed)?;
    io::write_matrix(&args.out, s.data.view(), None).with_context(|| format!("writing {}", args.out.display()))?;
    let truth = TruthDocument {
        scenario: scenario.id,
        seed: args.seed,
        n_times: scenario.n_times,
        n_vars: scenario.n_vars,
        change_points: s.truth,
        labels: s.specs.into_iter().map(|spec| spec.labels).collect(),
        ridges: s.ridges,
    };
    io::write_truth(&truth, truth_path(&args.out))?;
    eprintln!(
        "wrote {} ({} x {})",
        args.out.display(),
        scenario.n_times,
        scenario.n_vars
    );
    Ok(())
}

fn truth_path(data: &Path) -> PathBuf {
    let stem = data
        .file_stem()
        .map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    data.with_file_name(format!("{stem}.truth.json"))
}

fn evaluate(args: EvaluateArgs) -> CliResult {
    let as_ingest = |path: &Path, e: Error| match e {
        Error::Io(io) => Error::ingest(path.display().to_string(), io.to_string()),
        Error::Json(json) => Error::ingest(path.display().to_string(), json.to_string()),
        other => other,
    };
    let result = io::read_result(&args.result).map_err(|e| as_ingest(&args.result, e))?;
    let truth = io::read_truth(&args.truth).map_err(|e| as_ingest(&args.truth, e))?;
    if result.result.n_times != truth.n_times {
        return Err(Failure::from(Error::invalid_input(format!(
            "result covers {} time points but the truth has {}",
            result.result.n_times, truth.n_times
        ))));
    }
    let report = sim::evaluate(&truth.change_points, &result.change_points, truth.n_times);
    write_or_print(&to_json(&report)?, args.out.as_deref())?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    init_threads()?;
    match cli.command {
        Command::Detect(a) => detect(a),
        Command::Rank(a) => rank(a),
        Command::EstimateNet(a) => estimate_net(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::invalid_config("x")), 2);
        assert_eq!(exit_code(&Error::ingest("a", "b")), 3);
        assert_eq!(exit_code(&Error::NumericalFailure { iteration: 3 }), 4);
        let wrapped = Failure::from(anyhow::anyhow!(Error::invalid_config("x")).context("outer"));
        assert_eq!(wrapped.code, 2);
    }

    #[test]
    fn flags_override_preset() {
        let cli = Cli::parse_from([
            "nmfcpd",
            "detect",
            "x.csv",
            "--preset",
            "desk",
            "--delta",
            "30",
            "--loss",
            "euclidean",
        ]);
        let Command::Detect(args) = cli.command else { panic!() };
        let c = args.detector.config();
        assert_eq!((c.delta, c.n_run, c.loss), (30, 20, LossKind::Euclidean));
    }

    #[test]
    fn truth_sits_next_to_data() {
        assert_eq!(
            truth_path(Path::new("/tmp/run/sim.csv")),
            PathBuf::from("/tmp/run/sim.truth.json")
        );
    }
}
