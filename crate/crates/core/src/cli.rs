//! Command-line interface: dataset generation, training, constrained
//! generation, evaluation, link prediction, and validation.
//!
//! Exit codes: 0 success, 2 validation failure (invalid input data or
//! constraint violations), 64 usage error, 70 internal error. Every
//! subcommand that produces output also writes a `run_manifest.json`
//! next to it with the echoed configuration, tool version, seed and
//! timing. Setting `GRAPHDIFF_OUT_DIR` redirects all outputs into that
//! directory.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    generate, link_predict_graph, train, Checkpoint, GenerateSettings, TrainSettings, TrainStage,
};
use crate::datagen::{
    default_cow_template, gen_airway_tree, gen_cow_like, hierarchy_omega, load_corpus,
    save_corpus,
};
use crate::edge::NoisingKind;
use crate::error::{Error, Result};
use crate::eval::{compare_corpora, validity_rate, CorpusComparison};
use crate::graph::{betti1, check_omega, cycle_edges, OmegaMatrix, SpatialGraph};
use crate::io::{load_graph, load_omega, save_graph, save_omega, write_json_atomic};
use crate::projector::{InterventionLog, StructuralConstraint};
use crate::rng::substream;
use crate::schedule::ScheduleKind;

use rand::Rng;

#[derive(Parser)]
#[command(
    name = "graphdiff",
    version,
    about = "Constrained two-stage diffusion for sparse labeled 3D spatial graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic training corpora.
    Datagen(DatagenArgs),
    /// Train the coordinate and/or edge denoiser on a corpus.
    Train(TrainArgs),
    /// Sample graphs from a trained model under constraints.
    Generate(GenerateArgs),
    /// Compare a generated corpus against a reference corpus.
    Evaluate(EvaluateArgs),
    /// Complete a partial graph with a truncated reverse chain.
    Linkpredict(LinkpredictArgs),
    /// Check a graph against semantic/structural constraints.
    Validate(ValidateArgs),
}

#[derive(Args, Serialize)]
struct DatagenArgs {
    #[command(subcommand)]
    family: DatagenFamily,
}

#[derive(Subcommand, Serialize, Clone)]
enum DatagenFamily {
    /// Airway-style trees with 4 hierarchy labels.
    Trees {
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 40)]
        min_nodes: usize,
        #[arg(long, default_value_t = 120)]
        max_nodes: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ring-plus-branch graphs with 6 labels.
    Cow {
        #[arg(long, default_value_t = 300)]
        count: usize,
        #[arg(long, default_value_t = 0.05)]
        jitter: f64,
        #[arg(long, default_value_t = 0.15)]
        dropout: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Corpus directory produced by `datagen` or `save_corpus`.
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Which stage(s) to train.
    #[arg(long, default_value = "both")]
    stage: String,
    /// Existing checkpoint to continue from.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value = "linear")]
    schedule: String,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value = "absorbing")]
    noising: String,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Message-passing block count of the edge denoiser.
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 200)]
    coord_epochs: usize,
    #[arg(long, default_value_t = 200)]
    edge_epochs: usize,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    /// Omega constraint file (JSON with labels + 0/1 matrix).
    #[arg(long)]
    omega: Option<PathBuf>,
    /// Structural constraint: none or forest.
    #[arg(long, default_value = "none")]
    structural: String,
    /// Label resampling budget of the projector.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Override the noising kernel used for sampling.
    #[arg(long)]
    noising: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    omega: Option<PathBuf>,
    #[arg(long, default_value = "none")]
    structural: String,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct LinkpredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Partial graph to complete.
    #[arg(long)]
    input: PathBuf,
    /// How many reverse steps to run (at most the model's step count).
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long)]
    omega: Option<PathBuf>,
    #[arg(long, default_value = "none")]
    structural: String,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    omega: Option<PathBuf>,
    #[arg(long, default_value = "none")]
    structural: String,
    /// Optional violation-report JSON path.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let benign =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if benign { 0 } else { 64 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            classify(&err)
        }
    }
}

fn classify(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 64,
        Error::FileRead { .. }
        | Error::InvalidGraph(_)
        | Error::InvalidOmega(_)
        | Error::ConstraintViolated(_)
        | Error::LabelOutOfRange { .. }
        | Error::Checkpoint(_)
        | Error::NodeOutOfRange { .. }
        | Error::EdgeExists { .. } => 2,
        _ => 70,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Datagen(args) => cmd_datagen(args),
        Command::Train(args) => cmd_train(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Linkpredict(args) => cmd_linkpredict(args),
        Command::Validate(args) => cmd_validate(args),
    }
}

/// `GRAPHDIFF_OUT_DIR` redirects directory outputs wholesale and file
/// outputs into the directory, keeping the file name.
fn resolve_dir(out: &Path) -> PathBuf {
    match std::env::var_os("GRAPHDIFF_OUT_DIR") {
        Some(dir) => PathBuf::from(dir),
        None => out.to_path_buf(),
    }
}

fn resolve_file(out: &Path) -> PathBuf {
    match std::env::var_os("GRAPHDIFF_OUT_DIR") {
        Some(dir) => {
            let name = out.file_name().map(PathBuf::from).unwrap_or_default();
            PathBuf::from(dir).join(name)
        }
        None => out.to_path_buf(),
    }
}

#[derive(Serialize)]
struct RunManifest<C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: Option<u64>,
    config: C,
    elapsed_seconds: f64,
    unix_time: u64,
}

fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &'static str,
    seed: Option<u64>,
    config: &C,
    started: Instant,
) -> Result<()> {
    let manifest = RunManifest {
        tool: "graphdiff",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        unix_time: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    write_json_atomic(&dir.join("run_manifest.json"), &manifest)
}

fn parse_structural(s: &str) -> Result<StructuralConstraint> {
    s.parse()
}

fn load_omega_opt(path: &Option<PathBuf>) -> Result<Option<OmegaMatrix>> {
    path.as_ref().map(|p| load_omega(p)).transpose()
}

fn cmd_datagen(args: DatagenArgs) -> Result<i32> {
    let started = Instant::now();
    match args.family.clone() {
        DatagenFamily::Trees { count, min_nodes, max_nodes, seed, out } => {
            if min_nodes < 2 || max_nodes < min_nodes {
                return Err(Error::InvalidConfig(format!(
                    "node range {min_nodes}..{max_nodes} is empty or below 2"
                )));
            }
            let out = resolve_dir(&out);
            let graphs: Vec<SpatialGraph> = (0..count)
                .map(|i| {
                    let mut rng = substream(seed, "datagen.trees", i as u64);
                    let n = rng.random_range(min_nodes..=max_nodes);
                    gen_airway_tree(n, &mut rng)
                })
                .collect();
            let omega = hierarchy_omega(4);
            save_corpus(&graphs, Some(omega.labels()), &out)?;
            save_omega(&omega, &out.join("omega.json"))?;
            write_manifest(&out, "datagen-trees", Some(seed), &args.family, started)?;
            println!("wrote {count} tree graphs to {}", out.display());
        }
        DatagenFamily::Cow { count, jitter, dropout, seed, out } => {
            if !(0.0..1.0).contains(&dropout) {
                return Err(Error::InvalidConfig(format!("dropout {dropout} outside [0, 1)")));
            }
            let out = resolve_dir(&out);
            let template = default_cow_template(jitter, dropout);
            let graphs: Vec<SpatialGraph> = (0..count)
                .map(|i| {
                    let mut rng = substream(seed, "datagen.cow", i as u64);
                    gen_cow_like(&template, &mut rng)
                })
                .collect::<Result<_>>()?;
            save_corpus(&graphs, Some(template.omega.labels()), &out)?;
            save_omega(&template.omega, &out.join("omega.json"))?;
            write_manifest(&out, "datagen-cow", Some(seed), &args.family, started)?;
            println!("wrote {count} ring graphs to {}", out.display());
        }
    }
    Ok(0)
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let started = Instant::now();
    let corpus = load_corpus(&args.data)?;
    let init = args.init.as_ref().map(|p| Checkpoint::load(p)).transpose()?;
    let settings = TrainSettings {
        schedule: args.schedule.parse::<ScheduleKind>()?,
        steps: args.steps,
        noising: args.noising.parse::<NoisingKind>()?,
        hidden: args.hidden,
        blocks: args.blocks,
        lr: args.lr,
        weight_decay: args.weight_decay,
        batch_size: args.batch,
        coord_epochs: args.coord_epochs,
        edge_epochs: args.edge_epochs,
        seed: args.seed,
        stage: args.stage.parse::<TrainStage>()?,
    };
    let outcome = train(&corpus, &settings, init.as_ref())?;

    let out = resolve_file(&args.out);
    outcome.checkpoint.save(&out)?;
    if let Some(dir) = out.parent() {
        #[derive(Serialize)]
        struct TrainEcho<'a> {
            args: &'a TrainArgs,
            graphs: usize,
            coord_loss_first_last: (Option<f64>, Option<f64>),
            edge_loss_first_last: (Option<f64>, Option<f64>),
        }
        let echo = TrainEcho {
            args: &args,
            graphs: corpus.graphs.len(),
            coord_loss_first_last: (
                outcome.coord_curve.first().copied(),
                outcome.coord_curve.last().copied(),
            ),
            edge_loss_first_last: (
                outcome.edge_curve.first().copied(),
                outcome.edge_curve.last().copied(),
            ),
        };
        write_manifest(dir, "train", Some(args.seed), &echo, started)?;
    }
    println!("trained on {} graphs, checkpoint at {}", corpus.graphs.len(), out.display());
    Ok(0)
}

/// Per-sample entry of the generation run report.
#[derive(Debug, Serialize, Deserialize)]
pub struct SampleReportEntry {
    pub file: String,
    pub nodes: usize,
    pub edges: usize,
    pub semantic_valid: Option<bool>,
    pub forest_valid: Option<bool>,
    pub intervention: InterventionLog,
}

/// Run report written next to generated samples.
#[derive(Debug, Serialize, Deserialize)]
pub struct GenerationReport {
    pub count: usize,
    pub seed: u64,
    pub k: usize,
    pub structural: String,
    pub noising: String,
    pub intervention: InterventionLog,
    pub intervention_rate: f64,
    pub validity_pct: Option<f64>,
    pub elapsed_seconds: f64,
    pub samples: Vec<SampleReportEntry>,
}

pub fn sample_file_name(index: usize) -> String {
    format!("sample_{index:05}.json")
}

/// Samples a corpus, writes one graph file per sample plus the run
/// report; shared by the CLI and the test suites.
pub fn generate_to_dir(
    ckpt: &Checkpoint,
    settings: &GenerateSettings,
    omega: Option<&OmegaMatrix>,
    dir: &Path,
) -> Result<GenerationReport> {
    let started = Instant::now();
    std::fs::create_dir_all(dir)?;
    let samples = generate(ckpt, settings)?;

    let mut total = InterventionLog::default();
    let mut entries = Vec::with_capacity(samples.len());
    let structural = settings.structural == StructuralConstraint::Forest;
    for (i, sample) in samples.iter().enumerate() {
        let file = sample_file_name(i);
        save_graph(&sample.graph, &dir.join(&file))?;
        total.merge(&sample.log);
        entries.push(SampleReportEntry {
            file,
            nodes: sample.graph.node_count(),
            edges: sample.graph.edge_count(),
            semantic_valid: omega
                .map(|om| check_omega(&sample.graph, om).map(|r| r.is_empty()))
                .transpose()?,
            forest_valid: structural.then(|| betti1(&sample.graph) == 0),
            intervention: sample.log,
        });
    }
    let graphs: Vec<SpatialGraph> = samples.into_iter().map(|s| s.graph).collect();
    let report = GenerationReport {
        count: graphs.len(),
        seed: settings.seed,
        k: settings.k,
        structural: format!("{:?}", settings.structural).to_lowercase(),
        noising: format!("{:?}", ckpt.noising).to_lowercase(),
        intervention: total,
        intervention_rate: total.intervention_rate(),
        validity_pct: omega.map(|om| validity_rate(&graphs, Some(om), structural)),
        elapsed_seconds: started.elapsed().as_secs_f64(),
        samples: entries,
    };
    write_json_atomic(&dir.join("report.json"), &report)?;
    Ok(report)
}

fn cmd_generate(args: GenerateArgs) -> Result<i32> {
    let started = Instant::now();
    let ckpt = Checkpoint::load(&args.model)?;
    let omega = load_omega_opt(&args.omega)?;
    let settings = GenerateSettings {
        count: args.count,
        seed: args.seed,
        omega: omega.clone(),
        structural: parse_structural(&args.structural)?,
        k: args.k,
        noising_override: args.noising.as_deref().map(str::parse).transpose()?,
    };
    let dir = resolve_dir(&args.out);
    let report = generate_to_dir(&ckpt, &settings, omega.as_ref(), &dir)?;
    write_manifest(&dir, "generate", Some(args.seed), &args, started)?;
    println!(
        "generated {} graphs to {} (intervention rate {:.4})",
        report.count,
        dir.display(),
        report.intervention_rate
    );
    Ok(0)
}

/// Evaluation report: corpus comparison plus context.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub reference_count: usize,
    pub generated_count: usize,
    pub bins: usize,
    pub structural: String,
    pub comparison: CorpusComparison,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    let started = Instant::now();
    let reference = load_corpus(&args.reference)?;
    let generated = load_corpus(&args.generated)?;
    if reference.graphs.is_empty() || generated.graphs.is_empty() {
        return Err(Error::InvalidConfig(
            "both corpora must be non-empty for evaluation".into(),
        ));
    }
    let omega = load_omega_opt(&args.omega)?;
    let structural = parse_structural(&args.structural)? == StructuralConstraint::Forest;
    let comparison = compare_corpora(
        &reference.graphs,
        &generated.graphs,
        omega.as_ref(),
        structural,
        args.bins,
    );
    let report = EvaluationReport {
        reference_count: reference.graphs.len(),
        generated_count: generated.graphs.len(),
        bins: args.bins,
        structural: args.structural.clone(),
        comparison,
    };
    let out = resolve_file(&args.out);
    write_json_atomic(&out, &report)?;
    if let Some(dir) = out.parent() {
        write_manifest(dir, "evaluate", None, &args, started)?;
    }
    println!(
        "evaluation written to {} (S.V. {:.1}%)",
        out.display(),
        comparison.semantic_validity_pct
    );
    Ok(0)
}

fn cmd_linkpredict(args: LinkpredictArgs) -> Result<i32> {
    let started = Instant::now();
    let ckpt = Checkpoint::load(&args.model)?;
    let input = load_graph(&args.input)?;
    let omega = load_omega_opt(&args.omega)?;
    let structural = parse_structural(&args.structural)?;
    let (completed, log) = link_predict_graph(
        &ckpt,
        &input,
        args.steps,
        omega,
        structural,
        args.k,
        args.seed,
    )?;
    let out = resolve_file(&args.out);
    save_graph(&completed, &out)?;
    if let Some(dir) = out.parent() {
        #[derive(Serialize)]
        struct LinkEcho<'a> {
            args: &'a LinkpredictArgs,
            input_edges: usize,
            output_edges: usize,
            intervention: InterventionLog,
        }
        let echo = LinkEcho {
            args: &args,
            input_edges: input.edge_count(),
            output_edges: completed.edge_count(),
            intervention: log,
        };
        write_manifest(dir, "linkpredict", Some(args.seed), &echo, started)?;
    }
    println!(
        "completed graph written to {} ({} -> {} edges)",
        out.display(),
        input.edge_count(),
        completed.edge_count()
    );
    Ok(0)
}

#[derive(Serialize)]
struct ValidationReport {
    valid: bool,
    semantic_violations: usize,
    violations: Vec<String>,
    cycle_edges: Vec<String>,
}

fn cmd_validate(args: ValidateArgs) -> Result<i32> {
    let started = Instant::now();
    let graph = load_graph(&args.input)?;
    let omega = load_omega_opt(&args.omega)?;
    let structural = parse_structural(&args.structural)? == StructuralConstraint::Forest;

    let violations = match &omega {
        Some(om) => check_omega(&graph, om)?.violations,
        None => Vec::new(),
    };
    let cycles = if structural { cycle_edges(&graph) } else { Vec::new() };
    let valid = violations.is_empty() && cycles.is_empty();

    if let Some(report_path) = &args.report {
        let out = resolve_file(report_path);
        let report = ValidationReport {
            valid,
            semantic_violations: violations.len(),
            violations: violations.iter().map(|v| v.to_string()).collect(),
            cycle_edges: cycles.iter().map(|e| e.to_string()).collect(),
        };
        write_json_atomic(&out, &report)?;
        if let Some(dir) = out.parent() {
            write_manifest(dir, "validate", None, &args, started)?;
        }
    }

    if valid {
        println!("valid");
        Ok(0)
    } else {
        for v in &violations {
            println!("violation: {v}");
        }
        for e in &cycles {
            println!("cycle edge: {e}");
        }
        Ok(2)
    }
}
