//! Command-line front end.
//!
//! `fdml run --mode {local,centralized,fdml,table,serve-coordinator,serve-worker,verify}`,
//! `fdml verify --suite a,b`, `fdml serve {coordinator,worker}` and
//! `fdml eval`. Exit status 2 marks a usage or configuration problem,
//! 1 a failure while running.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::config::ConfigMap;
use crate::coordinator::Coordinator;
use crate::data::synthetic::{categorical, CategoricalSpec};
use crate::data::{
    count_svmlight_rows, load_split, make_partition, DatasetSplit, PartitionSpec, A9A_FEATURES,
    A9A_PARTY_SIZES,
};
use crate::metrics::{composite_probabilities, emit_report, evaluate, EpochMetrics};
use crate::train::{train, FdmlProblem, Scheme, TrainingConfig};
use crate::transport::{TcpCoordinatorServer, TcpLink};
use crate::verify::{run_suites, SUITES};
use crate::{Error, Result};

/// Environment variable naming the directory holding `a9a` and `a9a.t`.
pub const A9A_DIR_ENV: &str = "FDML_A9A_DIR";
const SYNTHETIC_DATA_SEED: u64 = 0x5EED_DA7A;

#[derive(Parser, Debug)]
#[command(name = "fdml", version, about = "Vertically partitioned training with a bounded-staleness coordinator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train, serve or verify according to --mode.
    Run(RunArgs),
    /// Run built-in verification suites.
    Verify {
        /// Comma-separated suite names, or `all`.
        #[arg(long, value_delimiter = ',', default_value = "all")]
        suite: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one side of a socket deployment.
    Serve {
        role: Role,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Score the composite model from per-party local test predictions.
    Eval {
        /// Comma-separated CSV files written by `serve worker --out`.
        #[arg(long, value_delimiter = ',', required = true)]
        predictions: Vec<PathBuf>,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Coordinator,
    Worker,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Local,
    Centralized,
    Fdml,
    /// All three schemes in one report.
    Table,
    ServeCoordinator,
    ServeWorker,
    Verify,
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// `a9a`, `synthetic`, or a training file in svmlight format.
    #[arg(long)]
    pub data: Option<String>,
    /// Test file when --data names a training file.
    #[arg(long)]
    pub test: Option<String>,
    /// Directory holding `a9a` and `a9a.t`.
    #[arg(long)]
    pub data_dir: Option<String>,
    /// JSON partition file: {"sizes": [...]} or {"parties": [[...], ...]}.
    #[arg(long)]
    pub partition: Option<String>,
    /// lr or nn.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub bias: Option<String>,
    #[arg(long)]
    pub parties: Option<String>,
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub batch: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub noise_mechanism: Option<String>,
    #[arg(long)]
    pub noise_level: Option<String>,
    #[arg(long)]
    pub noise_seed: Option<String>,
    /// sum or mean.
    #[arg(long)]
    pub reduction: Option<String>,
    #[arg(long)]
    pub deterministic: bool,
    /// inproc or tcp.
    #[arg(long)]
    pub carrier: Option<String>,
    #[arg(long)]
    pub jitter_ms: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub listen: Option<String>,
    /// Operator endpoint answering with `key=value` status lines.
    #[arg(long)]
    pub status: Option<String>,
    #[arg(long)]
    pub coordinator: Option<String>,
    #[arg(long)]
    pub party_id: Option<String>,
    /// Training sample count, letting a coordinator start without data files.
    #[arg(long)]
    pub samples: Option<String>,
    /// Suites for --mode verify.
    #[arg(long, value_delimiter = ',')]
    pub suite: Vec<String>,
}

impl RunArgs {
    /// The config file (if any) with every given flag applied on top.
    pub fn settings(&self) -> Result<ConfigMap> {
        let mut map = match &self.config {
            Some(path) => ConfigMap::load(path)?,
            None => ConfigMap::default(),
        };
        let flags: [(&str, &Option<String>); 27] = [
            ("data", &self.data),
            ("test", &self.test),
            ("data_dir", &self.data_dir),
            ("partition", &self.partition),
            ("model", &self.model),
            ("hidden", &self.hidden),
            ("activation", &self.activation),
            ("bias", &self.bias),
            ("parties", &self.parties),
            ("tau", &self.tau),
            ("eta", &self.eta),
            ("lambda", &self.lambda),
            ("batch", &self.batch),
            ("epochs", &self.epochs),
            ("seed", &self.seed),
            ("noise_mechanism", &self.noise_mechanism),
            ("noise_level", &self.noise_level),
            ("noise_seed", &self.noise_seed),
            ("reduction", &self.reduction),
            ("carrier", &self.carrier),
            ("jitter_ms", &self.jitter_ms),
            ("out", &self.out),
            ("listen", &self.listen),
            ("status", &self.status),
            ("coordinator", &self.coordinator),
            ("party_id", &self.party_id),
            ("samples", &self.samples),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                map.set(key, v.clone());
            }
        }
        if self.deterministic {
            map.set("deterministic", "true");
        }
        if let Some(mode) = self.mode {
            let name = mode.to_possible_value().expect("no skipped variants");
            map.set("mode", name.get_name());
        }
        Ok(map)
    }
}

/// Failures split by exit status.
enum Failure {
    Usage(Error),
    Runtime(Error),
}

fn usage<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn runtime<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

/// Parses `args` and runs; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("FDML_LOG", "warn"))
        .format_timestamp_millis()
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("fdml: {e}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("fdml: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let settings = usage(args.settings())?;
            let mode = match settings.get("mode") {
                Some(m) => usage(Mode::from_str(m, true).map_err(Error::config))?,
                None => return Err(Failure::Usage(Error::config("--mode is required"))),
            };
            run_mode(mode, &settings, &args.suite)
        }
        Command::Verify { suite, config } => {
            if let Some(path) = config {
                usage(ConfigMap::load(&path))?;
            }
            verify(&suite)
        }
        Command::Serve { role, args } => {
            let settings = usage(args.settings())?;
            match role {
                Role::Coordinator => serve_coordinator(&settings),
                Role::Worker => serve_worker(&settings),
            }
        }
        Command::Eval { predictions, args } => {
            let settings = usage(args.settings())?;
            eval(&settings, &predictions)
        }
    }
}

fn run_mode(mode: Mode, settings: &ConfigMap, suites: &[String]) -> std::result::Result<(), Failure> {
    match mode {
        Mode::Verify => verify(suites),
        Mode::ServeCoordinator => serve_coordinator(settings),
        Mode::ServeWorker => serve_worker(settings),
        Mode::Local => train_and_report(settings, &[Scheme::Local]),
        Mode::Centralized => train_and_report(settings, &[Scheme::Centralized]),
        Mode::Fdml => train_and_report(settings, &[Scheme::Fdml]),
        Mode::Table => train_and_report(settings, &Scheme::ALL),
    }
}

fn verify(suites: &[String]) -> std::result::Result<(), Failure> {
    let names: Vec<&str> = if suites.is_empty() || suites.iter().any(|s| s == "all") {
        SUITES.to_vec()
    } else {
        suites.iter().map(String::as_str).collect()
    };
    let reports = usage(run_suites(&names))?;
    let mut failed = 0;
    for r in &reports {
        println!("{:<12} {}  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Failure::Runtime(Error::Evaluation(format!("{failed} suite(s) failed"))));
    }
    Ok(())
}

/// Resolves `data` to a train/test split.
pub fn load_data(settings: &ConfigMap) -> Result<DatasetSplit> {
    match settings.get("data").unwrap_or("a9a") {
        "a9a" => {
            let dir = settings
                .get("data_dir")
                .map(PathBuf::from)
                .or_else(|| std::env::var_os(A9A_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("data"));
            let (train, test) = (dir.join("a9a"), dir.join("a9a.t"));
            if !train.is_file() || !test.is_file() {
                return Err(Error::config(format!(
                    "a9a files not found in {}; pass --data-dir or set {A9A_DIR_ENV}",
                    dir.display()
                )));
            }
            load_split(&train, &test, A9A_FEATURES)
        }
        "synthetic" => {
            let split = categorical(&CategoricalSpec::census_like(SYNTHETIC_DATA_SEED));
            DatasetSplit::new(split.train, split.test, A9A_FEATURES)
        }
        path => {
            let test = settings
                .get("test")
                .ok_or_else(|| Error::config("--test is required with a training file"))?;
            load_split(Path::new(path), Path::new(test), 0)
        }
    }
}

/// The vertical split to use for `dim` features.
pub fn partition_spec(settings: &ConfigMap, dim: usize, parties: usize) -> Result<PartitionSpec> {
    if let Some(path) = settings.get("partition") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read partition {path}: {e}")))?;
        return PartitionSpec::from_json(&text);
    }
    if dim == A9A_FEATURES && parties == A9A_PARTY_SIZES.len() {
        return Ok(PartitionSpec::Sizes(A9A_PARTY_SIZES.to_vec()));
    }
    Ok(PartitionSpec::even(dim, parties))
}

fn load_problem(settings: &ConfigMap, cfg: &TrainingConfig) -> std::result::Result<FdmlProblem, Failure> {
    let data = load_data(settings).map_err(|e| match e {
        Error::Config(_) => Failure::Usage(e),
        other => Failure::Runtime(other),
    })?;
    let spec = usage(partition_spec(settings, data.dim(), cfg.parties))?;
    let partition = usage(make_partition(data.dim(), &spec))?;
    if partition.party_count() != cfg.parties {
        return Err(Failure::Usage(Error::config(format!(
            "partition has {} parties but --parties is {}",
            partition.party_count(),
            cfg.parties
        ))));
    }
    info!(
        "{} training and {} test rows over {} features",
        data.train.len(),
        data.test.len(),
        data.dim()
    );
    runtime(FdmlProblem::new(data, partition))
}

fn train_and_report(settings: &ConfigMap, schemes: &[Scheme]) -> std::result::Result<(), Failure> {
    let cfg = usage(settings.training())?;
    let problem = load_problem(settings, &cfg)?;
    let mut rows: Vec<EpochMetrics> = Vec::new();
    for &scheme in schemes {
        let outcome = runtime(train(&problem, &cfg, scheme))?;
        if outcome.rejections.iter().any(|&r| r > 0) {
            info!("rejected pulls per worker: {:?}", outcome.rejections);
        }
        rows.extend(outcome.trace);
    }
    let stdout = io::stdout();
    match settings.get("out") {
        Some(path) => {
            let file = runtime(File::create(path).map_err(Error::from))?;
            runtime(emit_report(&rows, BufWriter::new(file), stdout.lock()))
        }
        None => {
            let mut lock = stdout.lock();
            runtime(emit_report(&rows, &mut lock, Vec::new()))?;
            let _ = writeln!(lock);
            runtime(lock.write_all(crate::metrics::summary_table(&rows).as_bytes()).map_err(Error::from))
        }
    }
}

fn training_samples(settings: &ConfigMap) -> Result<usize> {
    if let Some(n) = settings.typed::<usize>("samples")? {
        return Ok(n);
    }
    match settings.get("data").unwrap_or("a9a") {
        "a9a" | "synthetic" => Ok(load_data(settings)?.train.len()),
        path => count_svmlight_rows(Path::new(path)),
    }
}

fn serve_coordinator(settings: &ConfigMap) -> std::result::Result<(), Failure> {
    let cfg = usage(settings.training())?;
    let samples = usage(training_samples(settings))?;
    let total = usage(cfg.schedule(samples))?.total_iterations();
    let listen = settings.get("listen").unwrap_or("127.0.0.1:7070");
    let coordinator = Arc::new(usage(Coordinator::new(samples, cfg.parties, cfg.staleness))?);
    let mut server = runtime(TcpCoordinatorServer::bind(Arc::clone(&coordinator), listen))?;
    if let Some(status) = settings.get("status") {
        server = runtime(server.with_status(status))?;
    }
    let addr = runtime(server.local_addr())?;
    println!(
        "coordinator listening on {addr} for {} workers, {samples} samples, {total} iterations, tau {}",
        cfg.parties, cfg.staleness
    );
    if let Some(status) = server.status_addr() {
        println!("status on {status}");
    }
    let _ = io::stdout().flush();
    runtime(server.serve(total))?;
    print!("{}", coordinator.status_report());
    Ok(())
}

fn serve_worker(settings: &ConfigMap) -> std::result::Result<(), Failure> {
    let cfg = usage(settings.training())?;
    let party: usize = usage(settings.typed("party_id"))?
        .ok_or_else(|| Failure::Usage(Error::config("--party-id is required")))?;
    let address = settings
        .get("coordinator")
        .ok_or_else(|| Failure::Usage(Error::config("--coordinator is required")))?;
    let problem = load_problem(settings, &cfg)?;
    if party >= problem.parties() {
        return Err(Failure::Usage(Error::config(format!(
            "party id {party} outside the {}-party partition",
            problem.parties()
        ))));
    }
    let schedule = Arc::new(usage(cfg.schedule(problem.data.train.len()))?);
    let model = usage(problem.party_model(&cfg, party))?;
    let block = model.init(party, cfg.seed);
    let mut worker = usage(problem.worker(&cfg, party, Arc::clone(&schedule), block))?;
    let mut link = runtime(TcpLink::connect(address, 100, Duration::from_millis(100)))?;
    runtime(worker.run(&mut link, |epoch, _| info!("party {party} finished epoch {}", epoch + 1)))?;
    drop(link);
    if let Some(path) = settings.get("out") {
        let predictions = problem
            .test_features(party)
            .iter()
            .map(|x| model.predict(worker.block(), x))
            .collect::<Result<Vec<f64>>>();
        let predictions = runtime(predictions)?;
        runtime(write_local_predictions(Path::new(path), &predictions))?;
    }
    println!("party {party} completed {} iterations", worker.completed());
    Ok(())
}

/// Writes `sample,prediction` rows of a party's local test predictions.
pub fn write_local_predictions(path: &Path, predictions: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "sample,prediction")?;
    for (i, p) in predictions.iter().enumerate() {
        writeln!(out, "{i},{p}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_local_predictions(path: &Path) -> Result<Vec<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate().skip(1) {
        let line = line?;
        let value = line
            .split_once(',')
            .and_then(|(_, v)| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `sample,prediction`, found `{line}`"),
            })?;
        out.push(value);
    }
    Ok(out)
}

fn eval(settings: &ConfigMap, files: &[PathBuf]) -> std::result::Result<(), Failure> {
    let data = usage(load_data(settings))?;
    let local = files
        .iter()
        .map(|p| read_local_predictions(p))
        .collect::<Result<Vec<_>>>();
    let local = runtime(local)?;
    if local.iter().any(|p| p.len() != data.test.len()) {
        return Err(Failure::Runtime(Error::Evaluation(format!(
            "prediction files must have one row per test sample ({})",
            data.test.len()
        ))));
    }
    let result = runtime(evaluate(&composite_probabilities(&local), &data.test.labels))?;
    println!("test_logloss={}", result.log_loss);
    println!("test_auc={}", result.auc);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "tau = 3\nmodel = nn\n").unwrap();
        let cli = Cli::try_parse_from([
            "fdml", "run", "--mode", "fdml", "--config", path.to_str().unwrap(), "--tau", "8",
        ])
        .unwrap();
        let Command::Run(args) = cli.command else {
            panic!("expected run")
        };
        let settings = args.settings().unwrap();
        assert_eq!(settings.get("mode"), Some("fdml"));
        let cfg = settings.training().unwrap();
        assert_eq!(cfg.staleness, 8);
        assert_eq!(cfg.model, crate::train::ModelFamily::Nn);
    }

    #[test]
    fn a9a_split_is_the_default_for_two_parties() {
        let spec = partition_spec(&ConfigMap::default(), 124, 2).unwrap();
        assert_eq!(spec, PartitionSpec::Sizes(vec![67, 57]));
        assert_eq!(
            partition_spec(&ConfigMap::default(), 10, 3).unwrap(),
            PartitionSpec::even(10, 3)
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["fdml", "run", "--bogus"]), 2);
        assert_eq!(run(["fdml", "run", "--mode", "fdml", "--tau", "x", "--data", "synthetic"]), 2);
        assert_eq!(run(["fdml", "verify", "--suite", "nothing"]), 2);
        assert_eq!(run(["fdml", "verify", "--suite", "protocol,inequality"]), 0);
    }

    #[test]
    fn local_predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let values = [0.25, -1.0 / 3.0, 7e-12];
        write_local_predictions(&path, &values).unwrap();
        assert_eq!(read_local_predictions(&path).unwrap(), values);
    }
}
