//! `seqal`: corpus statistics, CRF training, simulated experiments, the
//! annotation service, and learning-curve reports.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Every output file goes under `<out-dir>/<run-id>/`.

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use seqal::active::{
    prepare_dataset, run_experiment_resumable, ExperimentConfig, PreparedCorpus, SystemClock,
};
use seqal::corpus::{dataset_stats, CorpusStats, Dataset, ParseOptions};
use seqal::crf::{decode, label_list, train_with_report, write_model, CrfModel, TrainConfig};
use seqal::features::{build_feature_index, featurize_sentence, FeatureTemplate};
use seqal::metrics::{
    comparison_csv, comparison_table, curve_from_rows, entity_f1, learning_curve_report,
    read_seed_csv, sentence_accuracy, token_f1, CurveReport,
};
use seqal::strategies::{HMode, NlcMode, Strategy};
use seqal_server::AppState;

#[derive(Parser)]
#[command(
    name = "seqal",
    version,
    about = "Active learning for CRF sequence labeling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Args, Clone)]
struct Output {
    /// Parent directory for run directories.
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Run directory name; defaults to `<command>-<unix seconds>`.
    #[arg(long)]
    run_id: Option<String>,
}

impl Output {
    fn dir(&self, command: &str) -> Result<PathBuf, Failure> {
        let id = self.run_id.clone().unwrap_or_else(|| {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .unwrap_or_default()
                .as_secs();
            format!("{command}-{secs}")
        });
        let dir = self.out_dir.join(id);
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Print corpus statistics and write them as JSON.
    Stats {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Turn orphan I-X tags into B-X instead of rejecting the file.
        #[arg(long)]
        repair: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Fit a CRF on a labeled file and save it.
    Train {
        dataset: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 100)]
        max_iterations: usize,
        /// Comma-separated feature templates.
        #[arg(long, value_delimiter = ',')]
        templates: Option<Vec<String>>,
        /// Allow tag sequences that violate BIO.
        #[arg(long)]
        unconstrained: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Run simulated experiments from a TOML config.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        output: Output,
    },
    /// Start the annotation service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Where the session is persisted.
        #[arg(long, default_value = "seqal-session")]
        state_dir: PathBuf,
        #[arg(long, default_value_t = 600)]
        lease_secs: u64,
    },
    /// Aggregate per-seed learning-curve CSVs into comparison tables.
    Report {
        /// Per-seed CSVs written by `simulate`; the file stem names the strategy.
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Args)]
struct Overrides {
    /// Strategies to run (repeatable), replacing the config's list.
    #[arg(long = "strategy")]
    strategies: Vec<String>,
    #[arg(long)]
    h_mode: Option<String>,
    #[arg(long)]
    nlc_mode: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    /// Bad input files and configs are usage errors; the rest are runtime failures.
    fn from_input(e: seqal::Error) -> Self {
        use seqal::Error as E;
        match e {
            E::Parse { .. }
            | E::InvalidBio { .. }
            | E::InvalidTag(_)
            | E::Config(_)
            | E::Empty(_)
            | E::Io(_) => Self::usage(e.to_string()),
            _ => Self::runtime(e.to_string()),
        }
    }
}

impl From<seqal::Error> for Failure {
    fn from(e: seqal::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path, repair: bool) -> Result<Dataset, Failure> {
    Dataset::load(path, ParseOptions { repair })
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn stats_table(s: &CorpusStats) -> String {
    let rows: [(&str, String); 10] = [
        ("sentences", s.n_sentences.to_string()),
        ("tokens", s.n_tokens.to_string()),
        ("entity types", s.n_entity_types.to_string()),
        ("entities", s.n_entities.to_string()),
        ("avg sentence length", format!("{:.2}", s.avg_sentence_len)),
        (
            "avg entities / sentence",
            format!("{:.2}", s.avg_entities_per_sentence),
        ),
        ("avg entity length", format!("{:.2}", s.avg_entity_len)),
        (
            "positive tokens",
            format!("{:.2}%", 100.0 * s.pct_positive_tokens),
        ),
        (
            "sentences with entity",
            format!("{:.2}%", 100.0 * s.pct_sentences_with_entity),
        ),
        (
            "sentences with 2+ entities",
            format!("{:.2}%", 100.0 * s.pct_sentences_with_2plus_entities),
        ),
    ];
    let mut out = String::new();
    for (k, v) in rows {
        writeln!(out, "{k:<28}{v:>12}").unwrap();
    }
    out
}

fn stats(dataset: &Path, format: Format, repair: bool, output: &Output) -> Result<(), Failure> {
    let d = load_dataset(dataset, repair)?;
    let s = dataset_stats(&d).map_err(Failure::from_input)?;
    let json = serde_json::to_string_pretty(&s).expect("stats serialize") + "\n";
    match format {
        Format::Table => print!("{}", stats_table(&s)),
        Format::Json => print!("{json}"),
    }
    write(&output.dir("stats")?.join("stats.json"), &json)
}

fn train(
    dataset: &Path,
    sigma: f64,
    max_iterations: usize,
    templates: Option<&[String]>,
    unconstrained: bool,
    output: &Output,
) -> Result<(), Failure> {
    let templates: Vec<FeatureTemplate> = match templates {
        Some(names) => names
            .iter()
            .map(|n| n.parse())
            .collect::<seqal::Result<_>>()
            .map_err(Failure::from_input)?,
        None => FeatureTemplate::ALL.to_vec(),
    };
    let d = load_dataset(dataset, false)?;
    let index = build_feature_index(&d, &templates);
    let init = CrfModel::zeros(label_list(&d.schema), index.len(), sigma)
        .map_err(Failure::from_input)?
        .with_bio_constraints(!unconstrained);
    let batch = d
        .sentences
        .iter()
        .map(|s| Ok((featurize_sentence(s, &index)?, init.encode_tags(&s.tags)?)))
        .collect::<seqal::Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        max_iterations,
        ..TrainConfig::default()
    };
    let (model, report) = train_with_report(&init, &batch, &cfg)?;

    let pred = batch
        .iter()
        .map(|(fs, _)| Ok(model.decode_tags(&decode(&model, fs)?.path)))
        .collect::<seqal::Result<Vec<_>>>()?;
    let gold: Vec<_> = d.sentences.iter().map(|s| s.tags.clone()).collect();
    println!(
        "trained on {} sentences: {} iterations, converged {}, objective {:.6}",
        d.len(),
        report.iterations,
        report.converged,
        report.objective.last().copied().unwrap_or(f64::NAN)
    );
    println!(
        "training set: token F1 {:.4}, entity F1 {:.4}, sentence accuracy {:.4}",
        token_f1(&pred, &gold)?.f1,
        entity_f1(&pred, &gold)?.f1,
        sentence_accuracy(&pred, &gold)?
    );

    let dir = output.dir("train")?;
    let mut buf = Vec::new();
    write_model(&model, &mut buf)?;
    std::fs::write(dir.join("model.txt"), buf).map_err(|e| Failure::runtime(e.to_string()))?;
    let mut buf = Vec::new();
    index.write_tsv(&mut buf)?;
    std::fs::write(dir.join("features.tsv"), buf).map_err(|e| Failure::runtime(e.to_string()))?;
    write(
        &dir.join("train_report.json"),
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;
    println!("model written to {}", dir.display());
    Ok(())
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<(), Failure> {
    if !o.strategies.is_empty() {
        cfg.strategies = o
            .strategies
            .iter()
            .map(|s| s.parse::<Strategy>())
            .collect::<seqal::Result<_>>()
            .map_err(Failure::from_input)?;
    }
    if let Some(m) = &o.h_mode {
        cfg.h_mode = m.parse::<HMode>().map_err(Failure::from_input)?;
    }
    if let Some(m) = &o.nlc_mode {
        cfg.nlc_mode = m.parse::<NlcMode>().map_err(Failure::from_input)?;
    }
    if let Some(b) = o.batch_size {
        cfg.batch_size = b;
    }
    if let Some(n) = o.iterations {
        cfg.n_iterations = n;
    }
    if let Some(n) = o.seeds {
        cfg.n_seeds = n;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(Failure::from_input)
}

fn simulate(config: &Path, overrides: &Overrides, output: &Output) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(config)
        .map_err(|e| Failure::usage(format!("{}: {e}", config.display())))?;
    apply_overrides(&mut cfg, overrides)?;
    let dataset = prepare_dataset(&cfg).map_err(Failure::from_input)?;
    let dir = output.dir("simulate")?;

    let effective = cfg.to_toml_string();
    let saved = dir.join("config.toml");
    if saved.exists() {
        let previous =
            std::fs::read_to_string(&saved).map_err(|e| Failure::runtime(e.to_string()))?;
        if previous != effective {
            return Err(Failure::usage(format!(
                "{} holds a run with a different configuration",
                dir.display()
            )));
        }
    }
    write(&saved, &effective)?;
    let checkpoints = dir.join("checkpoints");
    std::fs::create_dir_all(&checkpoints).map_err(|e| Failure::runtime(e.to_string()))?;

    let corpus = Arc::new(PreparedCorpus::new(dataset, &cfg.templates)?);
    let mut reports: Vec<CurveReport> = Vec::new();
    for &strategy in &cfg.strategies {
        eprintln!("running {strategy} ({} seeds)", cfg.n_seeds);
        let log = run_experiment_resumable(&cfg, corpus.clone(), strategy, Some(&checkpoints))?;
        let name = strategy.as_str();
        write(&dir.join(format!("{name}.csv")), &log.to_csv())?;
        write(&dir.join(format!("{name}.json")), &log.to_json())?;
        let report = learning_curve_report(&log)?;
        write(&dir.join(format!("{name}-curve.csv")), &report.to_csv())?;
        write(&dir.join(format!("{name}-curve.json")), &report.to_json())?;
        reports.push(report);
    }
    let table = comparison_table(&reports);
    write(&dir.join("comparison.csv"), &comparison_csv(&reports))?;
    write(&dir.join("comparison.txt"), &table)?;
    print!("{table}");
    println!("outputs in {}", dir.display());
    Ok(())
}

fn report(csvs: &[PathBuf], output: &Output) -> Result<(), Failure> {
    let mut reports = Vec::new();
    for path in csvs {
        let file = std::fs::File::open(path)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        let (schema, rows) = read_seed_csv(BufReader::new(file))
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("curve");
        reports.push(curve_from_rows(name, &schema, &rows).map_err(Failure::from_input)?);
    }
    let dir = output.dir("report")?;
    for r in &reports {
        write(&dir.join(format!("{}-curve.csv", r.strategy)), &r.to_csv())?;
    }
    let table = comparison_table(&reports);
    write(&dir.join("comparison.csv"), &comparison_csv(&reports))?;
    write(&dir.join("comparison.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn serve(host: &str, port: u16, state_dir: &Path, lease: Duration) -> Result<(), Failure> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::runtime(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| Failure::usage(format!("cannot listen on {host}:{port}: {e}")))?;
        let state = AppState::open(state_dir, Arc::new(SystemClock), lease)?;
        eprintln!(
            "serving on http://{}",
            listener
                .local_addr()
                .map_err(|e| Failure::runtime(e.to_string()))?
        );
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        seqal_server::serve(listener, state.clone(), shutdown)
            .await
            .map_err(|e| Failure::runtime(e.to_string()))?;
        tokio::task::spawn_blocking(move || state.shutdown())
            .await
            .ok();
        Ok(())
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Stats {
            dataset,
            format,
            repair,
            output,
        } => stats(dataset, *format, *repair, output),
        Command::Train {
            dataset,
            sigma,
            max_iterations,
            templates,
            unconstrained,
            output,
        } => train(
            dataset,
            *sigma,
            *max_iterations,
            templates.as_deref(),
            *unconstrained,
            output,
        ),
        Command::Simulate {
            config,
            overrides,
            output,
        } => simulate(config, overrides, output),
        Command::Serve {
            host,
            port,
            state_dir,
            lease_secs,
        } => serve(host, *port, state_dir, Duration::from_secs(*lease_secs)),
        Command::Report { csvs, output } => report(csvs, output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
