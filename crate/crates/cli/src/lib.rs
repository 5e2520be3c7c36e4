//! Subcommands of the `cornerforge` binary. Each stage reads its inputs
//! from files and writes one canonical output document.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use cornerforge_core::dataset::{load_dataset, load_mapping, DatasetIndex};
use cornerforge_core::evaluation::{
    aggregate, derive_a_posteriori, read_a_posteriori, write_a_posteriori, write_report,
    APosterioriResult, ReportFormat,
};
use cornerforge_core::extraction::{extract_all, read_hits, write_hits, ExtractionResult};
use cornerforge_core::matching::{
    enrich, load_detections, read_enriched, write_enriched, Enrichment, DEFAULT_THRESHOLD_M,
};
use cornerforge_core::metrics::{compile, read_metrics, write_metrics, MetricsFile};
use cornerforge_core::ontology::{inject_meta_classes, load_ontology, CornerCaseOntology};
use cornerforge_core::registry::{load_registry, validate_registry, CornerCaseSpec};
use cornerforge_core::synthgen::{generate, parse_spec};

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_IO: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Invalid(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => EXIT_IO,
            CliError::Invalid(_) => EXIT_VALIDATION,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Invalid(message) => f.write_str(message),
        }
    }
}

impl std::error::Error for CliError {}

fn invalid(context: &str, err: impl fmt::Display) -> CliError {
    CliError::Invalid(format!("{context}: {err}"))
}

#[derive(Debug, Parser)]
#[command(
    name = "cornerforge",
    version,
    about = "Corner-case extraction and evaluation pipeline"
)]
pub struct Cli {
    /// Worker threads for extraction and matching.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inject registry corner cases into a base ontology.
    Ingest(IngestArgs),
    /// Compile an enriched ontology into search metrics.
    Compile(CompileArgs),
    /// Search a dataset with compiled metrics.
    Extract(ExtractArgs),
    /// Match detections to annotations and flag TP/FP/FN.
    Enrich(EnrichArgs),
    /// Derive a-posteriori corner cases from hits and match results.
    Evaluate(EvaluateArgs),
    /// Aggregate a-posteriori results into per-case, layer and level rows.
    Report(ReportArgs),
    /// Generate a synthetic dataset, detections and plant log.
    Synth(SynthArgs),
    /// Run every stage and write all intermediate documents.
    RunAll(RunAllArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    #[arg(long)]
    pub registry: PathBuf,
    /// Ontology produced by `ingest`.
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnrichArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_M)]
    pub threshold_m: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hits: PathBuf,
    #[arg(long)]
    pub enriched: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub aposteriori: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long, default_value = "json")]
    pub format: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunAllArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_M)]
    pub threshold_m: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Files written by `run-all`, in stage order.
pub const RUN_ALL_OUTPUTS: [&str; 7] = [
    "ontology.json",
    "metrics.json",
    "hits.json",
    "enriched.json",
    "aposteriori.json",
    "report.json",
    "report.csv",
];

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_output(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn emit(out: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_output(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn check_threshold(threshold_m: f64) -> Result<(), CliError> {
    if threshold_m.is_finite() && threshold_m > 0.0 {
        Ok(())
    } else {
        Err(CliError::Invalid(format!(
            "--threshold-m must be > 0, got {threshold_m}"
        )))
    }
}

fn registry(path: &Path) -> Result<Vec<CornerCaseSpec>, CliError> {
    let specs = load_registry(read_input(path)?.as_bytes()).map_err(|e| invalid("registry", e))?;
    for d in validate_registry(&specs) {
        log::warn!("{}", d.message);
    }
    Ok(specs)
}

fn ontology(path: &Path) -> Result<CornerCaseOntology, CliError> {
    load_ontology(&read_input(path)?).map_err(|e| invalid("ontology", e))
}

fn metrics(path: &Path) -> Result<MetricsFile, CliError> {
    read_metrics(&read_input(path)?).map_err(|e| invalid("metrics", e))
}

fn dataset(path: &Path) -> Result<DatasetIndex, CliError> {
    load_dataset(&read_input(path)?).map_err(|e| invalid("dataset", e))
}

pub fn ingest(
    specs: &[CornerCaseSpec],
    base: &CornerCaseOntology,
) -> Result<CornerCaseOntology, CliError> {
    inject_meta_classes(base, specs).map_err(|e| invalid("ingest", e))
}

pub fn compile_metrics(
    ontology: &CornerCaseOntology,
    specs: &[CornerCaseSpec],
) -> Result<MetricsFile, CliError> {
    compile(ontology, specs).map_err(|e| invalid("compile", e))
}

pub fn extract(
    metrics: &MetricsFile,
    ontology: &CornerCaseOntology,
    mapping: &str,
    dataset: &DatasetIndex,
) -> Result<ExtractionResult, CliError> {
    let mapping = load_mapping(mapping, ontology, metrics).map_err(|e| invalid("mapping", e))?;
    extract_all(metrics, dataset, &mapping).map_err(|e| invalid("extract", e))
}

pub fn match_detections(
    dataset: &DatasetIndex,
    detections: &str,
    threshold_m: f64,
) -> Result<Enrichment, CliError> {
    check_threshold(threshold_m)?;
    let detections = load_detections(detections, dataset).map_err(|e| invalid("detections", e))?;
    enrich(dataset, &detections, threshold_m).map_err(|e| invalid("enrich", e))
}

pub fn evaluate(
    hits: &ExtractionResult,
    enriched: &Enrichment,
) -> Result<APosterioriResult, CliError> {
    derive_a_posteriori(hits, enriched).map_err(|e| invalid("evaluate", e))
}

fn run_all(args: &RunAllArgs) -> Result<(), CliError> {
    check_threshold(args.threshold_m)?;
    let specs = registry(&args.registry)?;
    let base = ontology(&args.ontology)?;
    let mapping = read_input(&args.mapping)?;
    let data = dataset(&args.dataset)?;
    let detections = read_input(&args.detections)?;
    ensure_dir(&args.out)?;

    let enriched_ontology = ingest(&specs, &base)?;
    let metrics = compile_metrics(&enriched_ontology, &specs)?;
    let hits = extract(&metrics, &enriched_ontology, &mapping, &data)?;
    let enriched = match_detections(&data, &detections, args.threshold_m)?;
    let aposteriori = evaluate(&hits, &enriched)?;
    let report = aggregate(&aposteriori, &specs);

    let documents = [
        enriched_ontology.to_json(),
        write_metrics(&metrics),
        write_hits(&hits),
        write_enriched(&enriched),
        write_a_posteriori(&aposteriori),
        write_report(&report, ReportFormat::Json),
        write_report(&report, ReportFormat::Csv),
    ];
    for (name, contents) in RUN_ALL_OUTPUTS.iter().zip(&documents) {
        write_output(&args.out.join(name), contents)?;
    }
    Ok(())
}

/// Runs one subcommand on a rayon pool of `cli.jobs` threads.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(usize::from(cli.jobs))
        .build()
        .map_err(|e| invalid("thread pool", e))?;
    pool.install(|| dispatch(&cli.command))
}

fn dispatch(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => {
            let specs = registry(&a.registry)?;
            let base = ontology(&a.ontology)?;
            emit(a.out.as_deref(), &ingest(&specs, &base)?.to_json())
        }
        Command::Compile(a) => {
            let specs = registry(&a.registry)?;
            let onto = ontology(&a.ontology)?;
            emit(
                a.out.as_deref(),
                &write_metrics(&compile_metrics(&onto, &specs)?),
            )
        }
        Command::Extract(a) => {
            let m = metrics(&a.metrics)?;
            let onto = ontology(&a.ontology)?;
            let mapping = read_input(&a.mapping)?;
            let data = dataset(&a.dataset)?;
            emit(
                a.out.as_deref(),
                &write_hits(&extract(&m, &onto, &mapping, &data)?),
            )
        }
        Command::Enrich(a) => {
            check_threshold(a.threshold_m)?;
            let data = dataset(&a.dataset)?;
            let detections = read_input(&a.detections)?;
            emit(
                a.out.as_deref(),
                &write_enriched(&match_detections(&data, &detections, a.threshold_m)?),
            )
        }
        Command::Evaluate(a) => {
            let hits = read_hits(&read_input(&a.hits)?).map_err(|e| invalid("hits", e))?;
            let enriched =
                read_enriched(&read_input(&a.enriched)?).map_err(|e| invalid("enriched", e))?;
            emit(
                a.out.as_deref(),
                &write_a_posteriori(&evaluate(&hits, &enriched)?),
            )
        }
        Command::Report(a) => {
            let format: ReportFormat = a.format.parse().map_err(|e| invalid("report", e))?;
            let result = read_a_posteriori(&read_input(&a.aposteriori)?)
                .map_err(|e| invalid("a-posteriori", e))?;
            let specs = registry(&a.registry)?;
            emit(
                a.out.as_deref(),
                &write_report(&aggregate(&result, &specs), format),
            )
        }
        Command::Synth(a) => {
            let spec = parse_spec(&read_input(&a.spec)?).map_err(|e| invalid("synth", e))?;
            let out = generate(&spec).map_err(|e| invalid("synth", e))?;
            ensure_dir(&a.out)?;
            write_output(&a.out.join("dataset.json"), &out.dataset.to_json())?;
            write_output(&a.out.join("detections.json"), &out.detections.to_json())?;
            write_output(&a.out.join("plantlog.json"), &out.plant_log.to_json())
        }
        Command::RunAll(a) => run_all(a),
    }
}
