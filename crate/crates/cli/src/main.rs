use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptrim::config::{ConfigError, EngineConfig};
use adaptrim::metrics::{accuracy, evaluate, partition, EvalSample, MetricsError};
use adaptrim::pipeline::{self, PipelineError};
use adaptrim::records::{write_jsonl, ReadError, RecordReader, RolloutRecord};
use adaptrim::scoring::ScorerKind;
use adaptrim::simulator::{run_simulation, write_report, SimError};
use adaptrim::trajectory::SplitTokens;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaptrim", version, about = "Difficulty-adaptive pruning of reasoning traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// Input JSONL, or `-` for stdin.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output file, or `-` for stdout.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Markers {
    /// Split-token file, one literal per line. Defaults to the bundled list.
    #[arg(long)]
    split_tokens: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Split each record's reasoning into steps.
    Segment {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        markers: Markers,
    },
    /// Score every step.
    Score {
        #[arg(long, default_value = "attention")]
        scorer: ScorerKind,
        /// Base seed of the random scorer; record `i` uses `seed + i`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        markers: Markers,
    },
    /// Prune low-importance steps.
    Compress {
        /// Static rate for every record; unclosed reasoning is left as is.
        #[arg(long, required_unless_present = "by_difficulty", conflicts_with = "by_difficulty")]
        tau: Option<f64>,
        /// Rate chosen from each group's pass rate.
        #[arg(long)]
        by_difficulty: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        markers: Markers,
    },
    /// Reward original and compressed rollouts.
    Reward {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
    },
    /// Group-normalized advantages.
    Advantage {
        /// Record fields that jointly define a group.
        #[arg(long, value_delimiter = ',', default_value = "problem_id")]
        group_by: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        io: Io,
    },
    /// Run the closed-loop training simulator.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Overthinking AUC, underthinking accuracy and their F1.
    EvalOtb {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = adaptrim::metrics::DEFAULT_T_MAX)]
        tmax: u64,
        /// Underthinking accuracy; overrides samples tagged `underthinking`.
        #[arg(long)]
        acc_ut: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a config and print it with defaults filled in.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Failure {
    Invalid(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Io(m) => m,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

impl From<ReadError> for Failure {
    fn from(e: ReadError) -> Self {
        match e {
            ReadError::Io { .. } => Failure::Io(e.to_string()),
            ReadError::Record(_) => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(_) => Failure::Io(e.to_string()),
            SimError::Config(c) => c.into(),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>, Failure> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdin().lock()));
    }
    let file = File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(Box::new(BufReader::new(file)))
}

fn open_output(path: &Path) -> Result<Box<dyn Write>, Failure> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdout().lock()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let file = File::create(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn read_records(path: &Path) -> Result<Vec<RolloutRecord>, Failure> {
    RecordReader::new(open_input(path)?)
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::from)
}

fn write_records(path: &Path, records: &[RolloutRecord]) -> Result<(), Failure> {
    Ok(write_jsonl(open_output(path)?, records)?)
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig, Failure> {
    match path {
        Some(p) => Ok(adaptrim::validate_config(p)?),
        None => Ok(EngineConfig::default()),
    }
}

fn load_markers(m: &Markers) -> Result<SplitTokens, Failure> {
    match &m.split_tokens {
        Some(p) => SplitTokens::load(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => Ok(SplitTokens::default()),
    }
}

fn read_eval_samples(path: &Path) -> Result<Vec<EvalSample>, Failure> {
    let mut out = Vec::new();
    for (i, line) in open_input(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line).map_err(|e| Failure::Invalid(format!("line {}: {e}", i + 1)))?;
        out.push(sample);
    }
    Ok(out)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Segment { io, markers } => {
            let tokens = load_markers(&markers)?;
            let mut records = read_records(&io.input)?;
            for r in &mut records {
                pipeline::segment_record(r, &tokens);
            }
            write_records(&io.out, &records)
        }
        Command::Score {
            scorer,
            seed,
            io,
            markers,
        } => {
            let tokens = load_markers(&markers)?;
            let mut records = read_records(&io.input)?;
            for (i, r) in records.iter_mut().enumerate() {
                pipeline::score_record(r, scorer, seed.wrapping_add(i as u64), &tokens)?;
            }
            write_records(&io.out, &records)
        }
        Command::Compress {
            tau,
            by_difficulty,
            config,
            io,
            markers,
        } => {
            let config = load_config(config.as_deref())?;
            let tokens = load_markers(&markers)?;
            let mut records = read_records(&io.input)?;
            if by_difficulty {
                pipeline::compress_by_difficulty(&mut records, &config, &tokens)?;
            } else {
                let tau = tau.expect("clap requires --tau without --by-difficulty");
                if !(0.0..=1.0).contains(&tau) {
                    return Err(Failure::Invalid(format!("--tau {tau} is outside [0, 1]")));
                }
                for r in &mut records {
                    pipeline::compress_record(r, tau, true, &tokens)?;
                }
            }
            write_records(&io.out, &records)
        }
        Command::Reward { config, io } => {
            let config = load_config(config.as_deref())?;
            let mut records = read_records(&io.input)?;
            pipeline::reward_records(&mut records, &config)?;
            write_records(&io.out, &records)
        }
        Command::Advantage { group_by, config, io } => {
            let config = load_config(config.as_deref())?;
            let mut records = read_records(&io.input)?;
            pipeline::advantage_records(&mut records, &group_by, config.epsilon.advantage_std)?;
            write_records(&io.out, &records)
        }
        Command::Simulate {
            config,
            seed,
            iterations,
            out,
        } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(s) = seed {
                config.simulator.seed = s;
            }
            if let Some(k) = iterations {
                config.simulator.iterations = k;
            }
            let report = run_simulation(&config)?;
            write_report(&report, &out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
            Ok(())
        }
        Command::EvalOtb {
            input,
            tmax,
            acc_ut,
            out,
        } => {
            if let Some(a) = acc_ut.filter(|a| !(0.0..=1.0).contains(a)) {
                return Err(Failure::Invalid(format!("--acc-ut {a} is outside [0, 1]")));
            }
            let samples = read_eval_samples(&input)?;
            let (over, under) = partition(&samples);
            let acc_ut = match acc_ut {
                Some(a) => Some(a),
                None if !under.is_empty() => Some(accuracy::<f64>(&under)?),
                None => None,
            };
            let report = evaluate(&over, acc_ut, tmax)?;
            let mut w = open_output(&out)?;
            serde_json::to_writer_pretty(&mut w, &report).map_err(io::Error::from)?;
            w.write_all(b"\n")?;
            Ok(w.flush()?)
        }
        Command::Config { config } => {
            let config = load_config(config.as_deref())?;
            match writeln!(io::stdout().lock(), "{}", config.to_json_pretty()) {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("adaptrim: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
