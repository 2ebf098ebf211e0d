use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tarpse::corpus::{self, Dataset, SyntheticSpec};
use tarpse::ensemble::CaptureFrequencies;
use tarpse::error::{Error, Result};
use tarpse::estimators;
use tarpse::harness::{self, Config, CriteriaSettings, DatasetEntry, MethodKind, MethodSpec, SyntheticEntry};

#[derive(Parser)]
#[command(name = "tarpse", version, about = "Screening simulations with capture-recapture stopping rules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chao (1987) and Rivest estimates from capture frequencies.
    ///
    /// Each CSV row holds `f_1,..,f_C,n`; a header row is skipped.
    Estimate {
        /// Input CSV, or `-` for stdin.
        #[arg(default_value = "-")]
        input: String,
    },
    /// One run of a method on one dataset, written as trace files.
    Simulate(SimulateArgs),
    /// Every dataset × method × seed set from a config file.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra synergy CSV datasets.
        #[arg(long = "dataset")]
        datasets: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Run sequentially instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
    /// Metrics and aggregates for a directory of runs.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        reference_target: f64,
    },
    /// Writes a synthetic dataset as synergy CSV.
    Synth {
        #[command(flatten)]
        spec: SynthArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    n_total: usize,
    #[arg(long, default_value_t = 100)]
    n_relevant: usize,
    #[arg(long, default_value_t = 500)]
    vocab_size: usize,
    #[arg(long, default_value_t = 0.8)]
    separation: f64,
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
}

impl From<&SynthArgs> for SyntheticEntry {
    fn from(a: &SynthArgs) -> Self {
        SyntheticEntry {
            n_total: a.n_total,
            n_relevant: a.n_relevant,
            vocab_size: a.vocab_size,
            separation: a.separation,
            rng_seed: a.data_seed,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Dataset path; a synthetic dataset is generated when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "synergy_csv")]
    format: String,
    #[command(flatten)]
    synth: SynthArgs,
    /// ensemble, autotar, random, target or cmh_hybrid.
    #[arg(long, default_value = "ensemble")]
    method: String,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    seed_index: usize,
    /// TOML file with a `[criteria]` table.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn read_input(input: &str) -> Result<String> {
    if input == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        Ok(fs::read_to_string(input)?)
    }
}

fn fmt_ci(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        "inf".into()
    }
}

fn estimate(input: &str, out: &mut impl Write) -> Result<()> {
    let text = read_input(input)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut any = false;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        let values: std::result::Result<Vec<u64>, _> = rec.iter().map(str::parse).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::Parse { line, message: "expected non-negative integers".into() }),
        };
        if values.len() < 3 {
            return Err(Error::Parse { line, message: "need f_1..f_C,n with C >= 2".into() });
        }
        let (f, n) = values.split_at(values.len() - 1);
        let freq = CaptureFrequencies::with_n(f.to_vec(), n[0]).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let chao = estimators::chao1987_interval(&freq);
        writeln!(out, "row {line}: n = {}", freq.n())?;
        writeln!(out, "  chao1987  N = {:.4}  95% CI [{}, {}]", chao.point, fmt_ci(chao.ci_low), fmt_ci(chao.ci_high))?;
        match estimators::rivest_interval(&freq) {
            Ok(r) => writeln!(out, "  rivest    N = {:.4}  95% CI [{}, {}]", r.point, fmt_ci(r.ci_low), fmt_ci(r.ci_high))?,
            Err(e) => writeln!(out, "  rivest    unavailable: {e}")?,
        }
        any = true;
    }
    if !any {
        return Err(Error::Argument("no frequency rows in input".into()));
    }
    Ok(())
}

fn method_spec(name: &str, settings: &CriteriaSettings) -> Result<MethodSpec> {
    Ok(match name.parse::<MethodKind>()? {
        MethodKind::Ensemble => MethodSpec::Ensemble,
        MethodKind::AutoTar => MethodSpec::AutoTar,
        MethodKind::Random => MethodSpec::Random,
        MethodKind::Target => MethodSpec::Target { k: settings.target_k },
        MethodKind::CmhHybrid => MethodSpec::CmhHybrid { tau: settings.hybrid_targets.first().copied().unwrap_or(0.95) },
    })
}

fn load_settings(path: Option<&Path>) -> Result<CriteriaSettings> {
    #[derive(serde::Deserialize)]
    struct Wrapper {
        #[serde(default)]
        criteria: CriteriaSettings,
    }
    let Some(path) = path else { return Ok(CriteriaSettings::default()) };
    let w: Wrapper = toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))?;
    w.criteria.validate()?;
    Ok(w.criteria)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let settings = load_settings(a.config.as_deref())?;
    let ds: Dataset = match &a.dataset {
        Some(p) => corpus::load_dataset(p, a.format.parse()?)?,
        None => corpus::generate_synthetic(SyntheticSpec::from(&SyntheticEntry::from(&a.synth)))?,
    };
    let method = method_spec(&a.method, &settings)?;
    let seeds = corpus::draw_seed_set(&ds, a.seed, a.seed_index)?;
    let features = harness::featurize(&ds)?;
    let rng_seed = harness::run_seed(a.seed, ds.name(), &method, a.seed_index);
    let trace = harness::run_simulation(&ds, &features, method, &seeds, rng_seed, &settings)?;
    harness::write_run(&trace, &a.out)?;
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "{} {} seed {}: {} reviews, {} firings", ds.name(), method, a.seed_index, trace.total_reviews(), trace.firings.len())?;
    for f in &trace.firings {
        let target = f.target.map(|t| format!("@{t}")).unwrap_or_default();
        writeln!(stdout, "  {}{target} at {}", f.rule, f.review_count)?;
    }
    Ok(())
}

fn benchmark(config: Option<&Path>, extra: &[PathBuf], out: &Path, sequential: bool) -> Result<()> {
    let (mut cfg, base) = match config {
        Some(p) => (Config::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (Config::from_toml("seed = 0")?, PathBuf::new()),
    };
    cfg.datasets.extend(extra.iter().map(|p| DatasetEntry {
        name: None,
        path: Some(std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.clone())),
        format: None,
        synthetic: None,
    }));
    let report = harness::run_benchmark(&cfg, &base, out, !sequential)?;
    println!("{} metric rows, {} aggregate rows written to {}", report.rows.len(), report.aggregate.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate { input } => estimate(&input, &mut io::stdout().lock()),
        Command::Simulate(a) => simulate(&a),
        Command::Benchmark { config, datasets, out, sequential } => benchmark(config.as_deref(), &datasets, &out, sequential),
        Command::Report { input, out, reference_target } => {
            let r = harness::report(&input, &out, reference_target)?;
            for row in &r.aggregate {
                let target = row.target.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
                println!(
                    "{:<14} {:<22} {:>5}  runs {:>3}  recall {:.3}±{:.3}  wss {:.3}±{:.3}  triggered {:.0}%",
                    row.method, row.rule, target, row.runs, row.recall_mean, row.recall_sd, row.wss_mean, row.wss_sd, row.triggered_pct
                );
            }
            Ok(())
        }
        Command::Synth { spec, out } => {
            let ds = corpus::generate_synthetic(SyntheticSpec::from(&SyntheticEntry::from(&spec)))?;
            ds.write_synergy_csv(fs::File::create(out)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Argument(_)) => {
            eprintln!("error: {e}");
            eprintln!("run `tarpse --help` for usage");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
