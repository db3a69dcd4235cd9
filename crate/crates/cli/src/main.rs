use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ppp_cusum::calibration::{calibrate, CalibrationReport, CalibrationSettings};
use ppp_cusum::config::{Config, InputSection};
use ppp_cusum::detector::{AlarmReport, MatrixDetector};
use ppp_cusum::embedding::{PointWindow, RescaleStats};
use ppp_cusum::events::{write_events, StreamParser};
use ppp_cusum::harness::{
    bench_step_latency, default_multipliers, format_table, report_from_records, run_replications,
    sweep_from_records, write_report_csv, write_sweep_csv, DetectorSpec,
};
use ppp_cusum::sim::Scenario;
use ppp_cusum::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Online change-point detection for point-process time series.
#[derive(Debug, Parser)]
#[command(name = "pppcd", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the command (scenario, calibration or experiment).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for experiments; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output file; overrides the configured path. Standard output when unset.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the configured scenario as an event CSV.
    Simulate,
    /// Calibrate the matrix detector on the training windows and write the report.
    Calibrate,
    /// Run the matrix detector over the stream and print the alarm, if any.
    Detect {
        /// Read stream events line by line from standard input.
        #[arg(long)]
        stdin: bool,
        /// Calibration report to use instead of calibrating on the fly.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Run the Monte Carlo experiment and write the report CSV.
    Run,
    /// Evaluate FAP and ADD over threshold multipliers.
    Sweep,
    /// Median per-step latency early versus late in a long stream.
    Bench,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            Error::Replication { ref source, .. } if matches!(**source, Error::Config(_)) => {
                Failure::Config(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config <path> is required".into()))?;
    let cfg = Config::load(path)?;
    match &cli.command {
        Command::Simulate => simulate(cli, &cfg),
        Command::Calibrate => {
            let data = load_data(cli, &cfg)?;
            let report = calibrate_matrix(cli, &cfg, &data.training)?;
            let target = cli.out.clone().or(cfg.output.calibration.clone());
            let text = report.to_toml()?;
            with_output(target.as_deref(), |w| Ok(w.write_all(text.as_bytes())?))
        }
        Command::Detect { stdin, calibration } => detect(cli, &cfg, *stdin, calibration.as_deref()),
        Command::Run => {
            let spec = cfg.experiment_spec(cli.seed, cli.workers)?;
            let records = run_replications(&spec)?;
            let report = report_from_records(&spec, &records);
            let target = cli.out.clone().or(cfg.output.path.clone());
            if target.is_some() {
                print!("{}", format_table(&report));
            }
            with_output(target.as_deref(), |w| Ok(write_report_csv(w, &report)?))
        }
        Command::Sweep => {
            let spec = cfg.experiment_spec(cli.seed, cli.workers)?;
            let multipliers = cfg.experiment.multipliers.clone().unwrap_or_else(default_multipliers);
            let records = run_replications(&spec)?;
            let rows = sweep_from_records(&spec, &records, &multipliers)?;
            let target = cli.out.clone().or(cfg.output.path.clone());
            with_output(target.as_deref(), |w| Ok(write_sweep_csv(w, &rows)?))
        }
        Command::Bench => bench(cli, &cfg),
    }
}

/// Writes to `path`, or to standard output when absent.
fn with_output<F>(path: Option<&Path>, f: F) -> CmdResult
where
    F: FnOnce(&mut dyn Write) -> CmdResult,
{
    match path {
        Some(p) => {
            let file = File::create(p)
                .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", p.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn seeded_scenario(cli: &Cli, cfg: &Config) -> Result<Scenario, Failure> {
    let mut sc = cfg.scenario()?.clone();
    if let Some(s) = cli.seed {
        sc.seed = s;
    }
    Ok(sc)
}

fn simulate(cli: &Cli, cfg: &Config) -> CmdResult {
    let sc = seeded_scenario(cli, cfg)?;
    let windows = sc.generate()?;
    let target = cli.out.clone().or(cfg.output.path.clone());
    with_output(target.as_deref(), |w| Ok(write_events(w, &windows, sc.dim())?))
}

/// Training and stream windows plus the rescaling applied to raw events.
struct Data {
    training: Vec<PointWindow>,
    stream: Vec<PointWindow>,
    stats: RescaleStats,
}

fn ingest_input(input: &InputSection) -> Result<Data, Failure> {
    let ingested = input.ingest().map_err(|e| match e {
        Error::Io(err) => Failure::Runtime(format!("cannot read {}: {err}", input.events.display())),
        other => other.into(),
    })?;
    Ok(Data {
        training: ingested.training,
        stream: ingested.stream,
        stats: ingested.stats,
    })
}

/// Windows from `[input]` when present, otherwise from the scenario.
fn load_data(cli: &Cli, cfg: &Config) -> Result<Data, Failure> {
    if let Some(input) = &cfg.input {
        return ingest_input(input);
    }
    let sc = seeded_scenario(cli, cfg)?;
    let mut windows = sc.generate()?;
    let stream = windows.split_off(sc.n_train);
    let d = sc.dim();
    Ok(Data {
        training: windows,
        stream,
        stats: RescaleStats::new(vec![0.0; d], vec![1.0; d])?,
    })
}

fn calibrate_matrix(
    cli: &Cli,
    cfg: &Config,
    training: &[PointWindow],
) -> Result<CalibrationReport, Failure> {
    let DetectorSpec::Matrix {
        window,
        gamma,
        split,
        rank,
        method,
        threshold_const,
    } = cfg.matrix_detector()?
    else {
        unreachable!("matrix_detector returns a matrix spec");
    };
    let settings = CalibrationSettings {
        gamma: *gamma,
        window: *window,
        alpha: cfg.calibration.alpha,
        permutations: cfg.calibration.permutations,
        seed: cli.seed.unwrap_or(cfg.calibration.seed),
        split: split.clone(),
        rank: *rank,
        method: *method,
    };
    let mut report = calibrate(training, &settings)?;
    if let Some(c) = threshold_const {
        report.threshold_const = *c;
    }
    Ok(report)
}

fn write_alarm(w: &mut dyn Write, a: &AlarmReport) -> io::Result<()> {
    writeln!(w, "time,index,offset,n2,score,threshold")?;
    writeln!(
        w,
        "{},{},{},{},{},{}",
        a.time, a.index, a.offset, a.n2, a.score, a.threshold
    )
}

fn detect(cli: &Cli, cfg: &Config, stdin: bool, calibration: Option<&Path>) -> CmdResult {
    let data = load_data(cli, cfg)?;
    let stored = calibration.map(Path::to_path_buf).or_else(|| {
        cfg.output
            .calibration
            .clone()
            .filter(|p| p.exists())
    });
    let report = match stored {
        Some(p) => {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
            CalibrationReport::from_toml(&text)?
        }
        None => calibrate_matrix(cli, cfg, &data.training)?,
    };
    let mut det = MatrixDetector::new(report.detector_config(), &data.training)?;
    let mut alarm = None;
    if stdin {
        let dim = report.split.dim();
        let next = data.training.last().map_or(1, |w| w.index + 1);
        let mut parser = StreamParser::new(dim, data.stats.clone(), next);
        for line in io::stdin().lock().lines() {
            for w in parser.push_line(&line?)? {
                alarm = det.step(&w)?;
                if alarm.is_some() {
                    break;
                }
            }
            if alarm.is_some() {
                break;
            }
        }
        if alarm.is_none() {
            if let Some(w) = parser.finish_stream()? {
                alarm = det.step(&w)?;
            }
        }
    } else {
        for w in &data.stream {
            alarm = det.step(w)?;
            if alarm.is_some() {
                break;
            }
        }
    }
    match alarm {
        Some(a) => with_output(cli.out.as_deref(), |w| Ok(write_alarm(w, &a)?)),
        None => {
            eprintln!("no alarm");
            Ok(())
        }
    }
}

fn bench(cli: &Cli, cfg: &Config) -> CmdResult {
    let [early, late] = [cfg.bench.early, cfg.bench.late];
    let mut sc = seeded_scenario(cli, cfg)?;
    sc.change_at = None;
    sc.n_total = sc.n_train + early[1].max(late[1]);
    let (window, gamma) = match cfg.matrix_detector()? {
        DetectorSpec::Matrix { window, gamma, .. } => (*window, *gamma),
        _ => unreachable!("matrix_detector returns a matrix spec"),
    };
    let windows = sc.generate()?;
    let r = bench_step_latency(&windows, sc.n_train, window, gamma, early, late)?;
    println!(
        "early steps {}..={}: median {:.0} ns\nlate steps {}..={}: median {:.0} ns\nratio {:.3}",
        early[0],
        early[1],
        r.early_median_ns,
        late[0],
        late[1],
        r.late_median_ns,
        r.ratio()
    );
    if let Some(p) = &cli.out {
        with_output(Some(p), |w| {
            writeln!(w, "range,start,end,median_ns")?;
            writeln!(w, "early,{},{},{}", early[0], early[1], r.early_median_ns)?;
            writeln!(w, "late,{},{},{}", late[0], late[1], r.late_median_ns)?;
            Ok(())
        })?;
    }
    Ok(())
}
