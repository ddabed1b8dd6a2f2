use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use omnilogic_core::evaluation::{self, ExperimentConfig, RunRecord, Summary};
use omnilogic_core::factory::{self, GenerationSpec};
use omnilogic_core::features::read_features;
use omnilogic_core::gateway::{EndpointConfig, HttpBackend, MockBackend, MockKind, MockSpec, ModelBackend};
use omnilogic_core::instance::{read_instances, write_instances, InteractionType, Modality};
use omnilogic_core::probe::{fit_probe, weights_csv, ProbeConfig};
use omnilogic_core::render::{read_rendered, render_instances, write_rendered, AssetStore, RenderConfig, RenderMode};
use omnilogic_core::{Category, VocabularyConfig};

#[derive(Parser)]
#[command(name = "omnilogic", version, about = "Omni-modal logical reasoning benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate verified instances.
    Generate(GenerateArgs),
    /// Render vision and audio assets for an instance file.
    Render(RenderArgs),
    /// Evaluate instances against an endpoint or a mock model.
    Run(RunArgs),
    /// Summarize run logs.
    Report(ReportArgs),
    /// Fit a linear probe on pooled attention features.
    Probe(ProbeArgs),
}

#[derive(clap::Args)]
struct GenerateArgs {
    #[arg(long = "type")]
    interaction: InteractionType,
    #[arg(long, default_value_t = 1000)]
    n: u64,
    /// Instance i is generated from seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    category: Option<Category>,
    #[arg(long)]
    final_modality: Option<Modality>,
    /// Keep only this modality's facts.
    #[arg(long, conflicts_with = "recognition")]
    unimodal: Option<Modality>,
    /// Emit recognition probes instead of reasoning questions.
    #[arg(long)]
    recognition: bool,
    /// TOML vocabulary overriding the built-in lists.
    #[arg(long)]
    vocabulary: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RenderArgs {
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    assets: PathBuf,
    /// Overrides `render_mode` from the config file.
    #[arg(long)]
    mode: Option<RenderMode>,
    /// TOML render configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to <assets>/rendered.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    assets: PathBuf,
    /// Defaults to <assets>/rendered.jsonl.
    #[arg(long)]
    rendered: Option<PathBuf>,
    /// TOML endpoint configuration.
    #[arg(long, conflicts_with = "mock", required_unless_present = "mock")]
    endpoint: Option<PathBuf>,
    /// uniform, oracle, drop:<modalities> or prefer:<modalities>, e.g. drop:VA.
    #[arg(long)]
    mock: Option<String>,
    #[arg(long, default_value_t = 0)]
    mock_seed: u64,
    #[arg(long)]
    two_step: bool,
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    dump_prompts: Option<PathBuf>,
    /// Seeds the modality block order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Md,
}

#[derive(clap::Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Unimodal baseline logs, as `name=path` or a bare path named by its records' mode.
    #[arg(long, num_args = 1..)]
    baselines: Vec<String>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Exit non-zero if any record or summary invariant is violated.
    #[arg(long)]
    check: bool,
    /// Label for the run's rows; defaults to the model identity in the log.
    #[arg(long)]
    label: Option<String>,
}

#[derive(clap::Args)]
struct ProbeArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_modalities(s: &str) -> Result<Vec<Modality>> {
    s.chars()
        .filter(|c| !matches!(c, ',' | ' '))
        .map(|c| c.to_string().parse::<Modality>().map_err(anyhow::Error::msg))
        .collect()
}

fn parse_mock(s: &str, seed: u64) -> Result<MockSpec> {
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    let kind = match name {
        "uniform" | "random" => MockKind::UniformRandom,
        "oracle" => MockKind::Oracle,
        "drop" => MockKind::ModalityDrop(parse_modalities(arg)?.into_iter().collect()),
        "prefer" => MockKind::ModalityPreference(parse_modalities(arg)?),
        other => bail!("unknown mock `{other}`"),
    };
    Ok(MockSpec::new(kind, seed)?)
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec = GenerationSpec::new(a.interaction);
    if let Some(c) = a.category {
        spec = spec.with_category(c);
    }
    if let Some(m) = a.final_modality {
        spec = spec.with_final_modality(m);
    }
    let vocab: VocabularyConfig = match &a.vocabulary {
        Some(p) => read_toml(p)?,
        None => VocabularyConfig::default(),
    };
    spec = spec.with_vocabulary(vocab.clone());
    let mut out = Vec::with_capacity(a.n as usize);
    for i in 0..a.n {
        let seed = a.seed + i;
        let inst = factory::generate(&spec, seed).with_context(|| format!("seed {seed}"))?;
        out.push(match (a.unimodal, a.recognition) {
            (Some(m), _) => factory::derive_unimodal_baseline(&inst, m)?,
            (None, true) => factory::generate_recognition(&inst, &vocab, seed)?,
            (None, false) => inst,
        });
    }
    write_instances(&a.out, &out)?;
    eprintln!("wrote {} instances to {}", out.len(), a.out.display());
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let mut cfg: RenderConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => RenderConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.render_mode = m;
    }
    let instances = read_instances(&a.instances)?;
    let store = AssetStore::open(&a.assets)?;
    let rendered = render_instances(&instances, &store, &cfg)?;
    let out = a.out.unwrap_or_else(|| a.assets.join("rendered.jsonl"));
    write_rendered(&out, &rendered)?;
    eprintln!(
        "rendered {} instances ({} external processes) to {}",
        rendered.len(),
        store.processes_spawned(),
        out.display()
    );
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let instances = read_instances(&a.instances)?;
    let rendered_path = a.rendered.clone().unwrap_or_else(|| a.assets.join("rendered.jsonl"));
    let rendered = read_rendered(&rendered_path).with_context(|| format!("reading {}", rendered_path.display()))?;
    let backend: Box<dyn ModelBackend> = match (&a.endpoint, &a.mock) {
        (Some(p), None) => {
            let cfg: EndpointConfig = read_toml(p)?;
            Box::new(HttpBackend::new(cfg, &a.assets)?)
        }
        (None, Some(kind)) => Box::new(MockBackend {
            spec: parse_mock(kind, a.mock_seed)?,
        }),
        _ => bail!("exactly one of --endpoint and --mock is required"),
    };
    let cfg = ExperimentConfig {
        log_path: a.log.clone(),
        two_step: a.two_step,
        prompt_seed: a.seed,
        workers: a.workers,
        dump_prompts: a.dump_prompts,
    };
    let outcome = evaluation::run_experiment(&instances, &rendered, backend.as_ref(), &cfg)?;
    let errors = outcome.records.iter().filter(|r| r.error.is_some()).count();
    eprintln!(
        "{} records in {} ({} resumed, {} new, {} with errors)",
        outcome.records.len(),
        a.log.display(),
        outcome.resumed,
        outcome.executed,
        errors
    );
    Ok(())
}

fn group(records: Vec<RunRecord>) -> BTreeMap<(InteractionType, String), Vec<RunRecord>> {
    let mut out: BTreeMap<_, Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        out.entry((r.interaction, r.mode.to_string())).or_default().push(r);
    }
    out
}

fn report(a: ReportArgs) -> Result<ExitCode> {
    let (records, _) = evaluation::read_run_log(&a.run)?;
    if records.is_empty() {
        bail!("{} holds no records", a.run.display());
    }
    let mut baselines: Vec<(String, Vec<RunRecord>)> = Vec::new();
    for b in &a.baselines {
        let (name, path) = match b.split_once('=') {
            Some((n, p)) => (Some(n.to_string()), PathBuf::from(p)),
            None => (None, PathBuf::from(b)),
        };
        let (recs, _) = evaluation::read_run_log(&path)?;
        let name = match name {
            Some(n) => n,
            None => recs
                .first()
                .map(|r| r.mode.to_string())
                .with_context(|| format!("{} holds no records", path.display()))?,
        };
        baselines.push((name, recs));
    }
    let label = a.label.clone().unwrap_or_else(|| records[0].model.clone());
    let mut summaries: Vec<Summary> = Vec::new();
    let mut violations = Vec::new();
    for ((interaction, _), recs) in group(records) {
        let matched: BTreeMap<String, Vec<RunRecord>> = baselines
            .iter()
            .map(|(n, rs)| (n.clone(), rs.iter().filter(|r| r.interaction == interaction).cloned().collect::<Vec<_>>()))
            .filter(|(_, rs)| !rs.is_empty())
            .collect();
        let s = evaluation::summarize(&label, &recs, &matched)?;
        violations.extend(evaluation::check(&recs, &s));
        summaries.push(s);
    }
    match a.format {
        Format::Csv => print!("{}", evaluation::to_csv(&summaries)),
        Format::Md => print!("{}", evaluation::to_markdown(&summaries)),
    }
    if a.check && !violations.is_empty() {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ProbeReport<'a> {
    target: &'a str,
    classes: &'a [String],
    folds: usize,
    c: f64,
    seed: u64,
    fold_accuracies: &'a [f64],
    mean_accuracy: f64,
    layers: usize,
    heads: usize,
    top_coordinates: Vec<(usize, usize)>,
}

fn probe(a: ProbeArgs) -> Result<()> {
    let features = read_features(&a.features)?;
    let cfg = ProbeConfig {
        c: a.c,
        folds: a.folds,
        ..ProbeConfig::default()
    };
    let result = fit_probe(&features, &a.target, &cfg, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    let mut written = BTreeSet::new();
    for (class, w) in &result.weights {
        let name = format!("weights_{class}.csv");
        std::fs::write(a.out.join(&name), weights_csv(w))?;
        written.insert(name);
    }
    let report = ProbeReport {
        target: &result.target,
        classes: &result.classes,
        folds: a.folds,
        c: a.c,
        seed: a.seed,
        fold_accuracies: &result.fold_accuracies,
        mean_accuracy: result.mean_accuracy,
        layers: result.layers,
        heads: result.heads,
        top_coordinates: result.top_coordinates(10),
    };
    std::fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!("{}: mean accuracy {:.4} over {} folds", result.target, result.mean_accuracy, a.folds);
    for (i, acc) in result.fold_accuracies.iter().enumerate() {
        println!("  fold {i}: {acc:.4}");
    }
    eprintln!("wrote report.json and {} weight maps to {}", written.len(), a.out.display());
    Ok(())
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Generate(a) => generate(a).map(|_| ExitCode::SUCCESS),
        Command::Render(a) => render(a).map(|_| ExitCode::SUCCESS),
        Command::Run(a) => run(a).map(|_| ExitCode::SUCCESS),
        Command::Report(a) => report(a),
        Command::Probe(a) => probe(a).map(|_| ExitCode::SUCCESS),
    }
}
