//! Text, diagram and speech renderings of facts, and the content-addressed
//! asset store they land in.
//!
//! Diagrams and speech are produced by external tools configured as command
//! templates with `{input}`/`{output}` (and `{voice}`) placeholders. In
//! manifest mode no tool runs: only DOT documents and transcripts are
//! written.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::instance::{Instance, Modality};
use crate::logic::{capitalize, Atom};
use crate::vocab::VocabularyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetFormat {
    PlainText,
    DotGraph,
    PngImage,
    WavAudio,
}

impl AssetFormat {
    pub fn extension(self) -> &'static str {
        match self {
            AssetFormat::PlainText => "txt",
            AssetFormat::DotGraph => "dot",
            AssetFormat::PngImage => "png",
            AssetFormat::WavAudio => "wav",
        }
    }

    pub fn media_type(self) -> &'static str {
        match self {
            AssetFormat::PlainText => "text/plain",
            AssetFormat::DotGraph => "text/vnd.graphviz",
            AssetFormat::PngImage => "image/png",
            AssetFormat::WavAudio => "audio/wav",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssetRef {
    /// Relative to the asset root.
    pub path: String,
    pub content_hash: String,
    pub format: AssetFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Full,
    #[default]
    Manifest,
}

impl std::str::FromStr for RenderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(RenderMode::Full),
            "manifest" => Ok(RenderMode::Manifest),
            other => Err(format!("unknown render mode `{other}`")),
        }
    }
}

/// Styling and format defaults, recorded with every rendered instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub font: String,
    pub background: String,
    pub node_shape: String,
    /// 144 dpi is 2x the Graphviz default.
    pub dpi: u32,
    pub sample_rate_hz: u32,
    pub channels: u16,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            font: "Helvetica".into(),
            background: "white".into(),
            node_shape: "ellipse".into(),
            dpi: 144,
            sample_rate_hz: 16_000,
            channels: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub tts_command: Option<String>,
    pub raster_command: Option<String>,
    pub voice_profile: String,
    pub render_mode: RenderMode,
    pub workers: usize,
    pub settings: RenderSettings,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            tts_command: None,
            raster_command: None,
            voice_profile: "default".into(),
            render_mode: RenderMode::Manifest,
            workers: 4,
            settings: RenderSettings::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("cannot render an empty fact block")]
    EmptyFacts,
    #[error("external tool `{0}` not found")]
    ToolMissing(String),
    #[error("`{command}` failed with {status}: {stderr}")]
    ToolFailed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("tool produced no output at {0}")]
    EmptyOutput(PathBuf),
    #[error("asset {path} does not match its hash")]
    HashMismatch { path: PathBuf },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// "<Subject> is <attribute>" with the subject capitalized.
pub fn render_text(fact: &Atom) -> String {
    format!("{} is {}", capitalize(&fact.subject), fact.attribute)
}

/// Inverse of [`render_text`] over a vocabulary. Accepts a trailing period.
pub fn parse_text(sentence: &str, vocab: &VocabularyConfig) -> Option<Atom> {
    let s = sentence.trim().trim_end_matches('.');
    let (subject, attribute) = s.split_once(" is ")?;
    let (canonical, category) = vocab.canonical_subject(subject.trim())?;
    let attribute = attribute.trim();
    vocab
        .has_attribute(attribute)
        .then(|| Atom::new(canonical, attribute, category))
}

fn quote(id: &str) -> String {
    format!("\"{}\"", id.replace('"', "\\\""))
}

/// Entity-attribute diagram: one node per subject and per attribute and an
/// `is` edge per fact, all sorted so the document is byte-stable.
pub fn render_graph(facts: &[Atom], settings: &RenderSettings) -> Result<String, RenderError> {
    if facts.is_empty() {
        return Err(RenderError::EmptyFacts);
    }
    let mut subjects: Vec<String> = facts.iter().map(|f| capitalize(&f.subject)).collect();
    subjects.sort();
    subjects.dedup();
    let mut attributes: Vec<&str> = facts.iter().map(|f| f.attribute.as_str()).collect();
    attributes.sort();
    attributes.dedup();
    let mut edges: Vec<(String, &str)> = facts
        .iter()
        .map(|f| (capitalize(&f.subject), f.attribute.as_str()))
        .collect();
    edges.sort();
    edges.dedup();

    let mut out = String::from("digraph facts {\n");
    out.push_str(&format!(
        "  graph [bgcolor={}, dpi={}, rankdir=LR];\n",
        quote(&settings.background),
        quote(&settings.dpi.to_string())
    ));
    out.push_str(&format!(
        "  node [shape={}, fontname={}];\n",
        quote(&settings.node_shape),
        quote(&settings.font)
    ));
    for s in &subjects {
        out.push_str(&format!("  {};\n", quote(s)));
    }
    for a in &attributes {
        out.push_str(&format!("  {};\n", quote(a)));
    }
    for (s, a) in &edges {
        out.push_str(&format!("  {} -> {} [label=\"is\"];\n", quote(s), quote(a)));
    }
    out.push_str("}\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AudioJob {
    pub transcript: String,
    /// Staging location relative to the asset root, keyed by the job inputs.
    pub output_path: String,
    pub voice_profile: String,
    pub synthesizer_command_template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphJob {
    pub dot: String,
    pub output_path: String,
    pub raster_command_template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderJob {
    Audio(AudioJob),
    Graph(GraphJob),
}

impl RenderJob {
    fn key(&self) -> String {
        let json = serde_json::to_string(self).expect("job serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn job_key(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())[..24].to_string()
}

pub fn render_audio_job(fact: &Atom, voice_profile: &str, config: &RenderConfig) -> AudioJob {
    audio_block_job(std::slice::from_ref(fact), voice_profile, config)
}

/// One speech clip for a whole modality block.
pub fn audio_block_job(facts: &[Atom], voice_profile: &str, config: &RenderConfig) -> AudioJob {
    let transcript = facts
        .iter()
        .map(|f| format!("{}.", render_text(f)))
        .collect::<Vec<_>>()
        .join(" ");
    let key = job_key(&[
        "audio",
        voice_profile,
        &transcript,
        &config.settings.sample_rate_hz.to_string(),
    ]);
    AudioJob {
        transcript,
        output_path: format!("staging/{key}.wav"),
        voice_profile: voice_profile.to_string(),
        synthesizer_command_template: config.tts_command.clone(),
    }
}

pub fn graph_job(facts: &[Atom], config: &RenderConfig) -> Result<GraphJob, RenderError> {
    let dot = render_graph(facts, &config.settings)?;
    let key = job_key(&["graph", &dot]);
    Ok(GraphJob {
        dot,
        output_path: format!("staging/{key}.png"),
        raster_command_template: config.raster_command.clone(),
    })
}

/// Content-addressed files under `<root>/assets/<h2>/<hash>.<ext>`.
#[derive(Debug)]
pub struct AssetStore {
    root: PathBuf,
    spawned: AtomicUsize,
}

impl AssetStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RenderError> {
        let root = root.into();
        std::fs::create_dir_all(root.join("assets"))?;
        std::fs::create_dir_all(root.join("staging"))?;
        Ok(Self {
            root,
            spawned: AtomicUsize::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, asset: &AssetRef) -> PathBuf {
        self.root.join(&asset.path)
    }

    /// External processes started through this store so far.
    pub fn processes_spawned(&self) -> usize {
        self.spawned.load(Ordering::SeqCst)
    }

    pub fn put(&self, bytes: &[u8], format: AssetFormat) -> Result<AssetRef, RenderError> {
        let hash = hex::encode(Sha256::digest(bytes));
        let rel = format!("assets/{}/{}.{}", &hash[..2], hash, format.extension());
        let path = self.root.join(&rel);
        if path.exists() {
            let existing = std::fs::read(&path)?;
            if hex::encode(Sha256::digest(&existing)) != hash {
                return Err(RenderError::HashMismatch { path });
            }
        } else {
            let dir = path.parent().expect("nested path");
            std::fs::create_dir_all(dir)?;
            let mut tmp = tempfile_in(dir)?;
            tmp.1.write_all(bytes)?;
            tmp.1.sync_all()?;
            drop(tmp.1);
            // a concurrent writer of the same hash wrote the same bytes
            std::fs::rename(&tmp.0, &path)?;
        }
        Ok(AssetRef {
            path: rel,
            content_hash: hash,
            format,
        })
    }

    pub fn verify(&self, asset: &AssetRef) -> Result<bool, RenderError> {
        let bytes = std::fs::read(self.resolve(asset))?;
        Ok(hex::encode(Sha256::digest(&bytes)) == asset.content_hash)
    }
}

fn tempfile_in(dir: &Path) -> std::io::Result<(PathBuf, std::fs::File)> {
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    loop {
        let n = COUNTER.fetch_add(1, Ordering::SeqCst);
        let path = dir.join(format!(".tmp-{}-{n}", std::process::id()));
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
}

fn find_program(program: &str) -> Option<PathBuf> {
    let candidate = Path::new(program);
    if candidate.components().count() > 1 {
        return candidate.is_file().then(|| candidate.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(program))
            .find(|p| p.is_file())
    })
}

fn run_tool(
    store: &AssetStore,
    template: Option<&str>,
    what: &str,
    substitutions: &[(&str, String)],
    output: &Path,
) -> Result<Vec<u8>, RenderError> {
    let template = template.ok_or_else(|| RenderError::ToolMissing(format!("<no {what} configured>")))?;
    let mut words = template.split_whitespace().map(|w| {
        substitutions
            .iter()
            .fold(w.to_string(), |acc, (k, v)| acc.replace(k, v))
    });
    let program = words.next().ok_or_else(|| RenderError::ToolMissing(format!("<empty {what}>")))?;
    let resolved = find_program(&program).ok_or_else(|| RenderError::ToolMissing(program.clone()))?;
    let args: Vec<String> = words.collect();
    let _ = std::fs::remove_file(output);
    store.spawned.fetch_add(1, Ordering::SeqCst);
    let result = Command::new(&resolved).args(&args).output().map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            RenderError::ToolMissing(program.clone())
        } else {
            RenderError::Io(e)
        }
    })?;
    if !result.status.success() {
        return Err(RenderError::ToolFailed {
            command: program,
            status: result.status.to_string(),
            stderr: String::from_utf8_lossy(&result.stderr).trim().to_string(),
        });
    }
    let bytes = std::fs::read(output).unwrap_or_default();
    if bytes.is_empty() {
        return Err(RenderError::EmptyOutput(output.to_path_buf()));
    }
    let _ = std::fs::remove_file(output);
    Ok(bytes)
}

/// Assets produced for one job: the DOT document or transcript, plus the
/// raster or waveform in full mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobOutput {
    pub source: AssetRef,
    pub rendered: Option<AssetRef>,
}

fn execute_one(job: &RenderJob, store: &AssetStore, mode: RenderMode) -> Result<JobOutput, RenderError> {
    match job {
        RenderJob::Graph(g) => {
            let source = store.put(g.dot.as_bytes(), AssetFormat::DotGraph)?;
            let rendered = match mode {
                RenderMode::Manifest => None,
                RenderMode::Full => {
                    let output = store.root().join(&g.output_path);
                    let bytes = run_tool(
                        store,
                        g.raster_command_template.as_deref(),
                        "raster_command",
                        &[
                            ("{input}", store.resolve(&source).display().to_string()),
                            ("{output}", output.display().to_string()),
                        ],
                        &output,
                    )?;
                    Some(store.put(&bytes, AssetFormat::PngImage)?)
                }
            };
            Ok(JobOutput { source, rendered })
        }
        RenderJob::Audio(a) => {
            let source = store.put(a.transcript.as_bytes(), AssetFormat::PlainText)?;
            let rendered = match mode {
                RenderMode::Manifest => None,
                RenderMode::Full => {
                    let output = store.root().join(&a.output_path);
                    let bytes = run_tool(
                        store,
                        a.synthesizer_command_template.as_deref(),
                        "tts_command",
                        &[
                            ("{input}", store.resolve(&source).display().to_string()),
                            ("{output}", output.display().to_string()),
                            ("{voice}", a.voice_profile.clone()),
                        ],
                        &output,
                    )?;
                    Some(store.put(&bytes, AssetFormat::WavAudio)?)
                }
            };
            Ok(JobOutput { source, rendered })
        }
    }
}

/// Runs jobs with bounded parallelism; output order follows `jobs`.
pub fn execute_jobs(
    jobs: &[RenderJob],
    store: &AssetStore,
    mode: RenderMode,
    workers: usize,
) -> Result<Vec<JobOutput>, RenderError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        jobs.par_iter()
            .map(|job| execute_one(job, store, mode))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisionPayload {
    pub dot: AssetRef,
    pub raster: Option<AssetRef>,
    pub caption: String,
}

impl VisionPayload {
    /// What gets sent to a model: the raster when present, else the DOT file.
    pub fn asset(&self) -> &AssetRef {
        self.raster.as_ref().unwrap_or(&self.dot)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioPayload {
    pub transcript_asset: AssetRef,
    pub waveform: Option<AssetRef>,
    pub transcript: String,
}

impl AudioPayload {
    pub fn asset(&self) -> &AssetRef {
        self.waveform.as_ref().unwrap_or(&self.transcript_asset)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedInstance {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision: Option<VisionPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AudioPayload>,
    pub mode: RenderMode,
    pub settings: RenderSettings,
}

/// Renders every instance's modality blocks into `store`. Identical blocks
/// across instances share one job and one asset.
pub fn render_instances(
    instances: &[Instance],
    store: &AssetStore,
    config: &RenderConfig,
) -> Result<Vec<RenderedInstance>, RenderError> {
    let mut jobs: Vec<RenderJob> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut plan: Vec<BTreeMap<Modality, usize>> = Vec::with_capacity(instances.len());
    for inst in instances {
        let mut slots = BTreeMap::new();
        for (&m, facts) in &inst.modality_facts {
            if facts.is_empty() || m == Modality::Text {
                continue;
            }
            let job = match m {
                Modality::Vision => RenderJob::Graph(graph_job(facts, config)?),
                Modality::Audio => RenderJob::Audio(audio_block_job(facts, &config.voice_profile, config)),
                Modality::Text => unreachable!(),
            };
            let key = job.key();
            let slot = *index.entry(key).or_insert_with(|| {
                jobs.push(job);
                jobs.len() - 1
            });
            slots.insert(m, slot);
        }
        plan.push(slots);
    }

    let outputs = execute_jobs(&jobs, store, config.render_mode, config.workers)?;

    Ok(instances
        .iter()
        .zip(plan)
        .map(|(inst, slots)| {
            let sentences = |m: Modality| -> Option<Vec<String>> {
                inst.modality_facts
                    .get(&m)
                    .filter(|f| !f.is_empty())
                    .map(|f| f.iter().map(|a| format!("{}.", render_text(a))).collect())
            };
            let vision = slots.get(&Modality::Vision).map(|&i| VisionPayload {
                dot: outputs[i].source.clone(),
                raster: outputs[i].rendered.clone(),
                caption: sentences(Modality::Vision).unwrap_or_default().join(" "),
            });
            let audio = slots.get(&Modality::Audio).map(|&i| {
                let RenderJob::Audio(job) = &jobs[i] else {
                    unreachable!("audio slot holds an audio job")
                };
                AudioPayload {
                    transcript_asset: outputs[i].source.clone(),
                    waveform: outputs[i].rendered.clone(),
                    transcript: job.transcript.clone(),
                }
            });
            RenderedInstance {
                instance_id: inst.id.clone(),
                text: sentences(Modality::Text),
                vision,
                audio,
                mode: config.render_mode,
                settings: config.settings.clone(),
            }
        })
        .collect())
}

pub fn write_rendered(path: &Path, rendered: &[RenderedInstance]) -> Result<(), std::io::Error> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rendered {
        writeln!(out, "{}", serde_json::to_string(r).expect("serializes"))?;
    }
    out.flush()
}

pub fn read_rendered(path: &Path) -> Result<Vec<RenderedInstance>, std::io::Error> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dot;

    #[test]
    fn text_rendering() {
        assert_eq!(render_text(&Atom::person("Bob", "curious")), "Bob is curious");
        assert_eq!(render_text(&Atom::person("erin", "friendly")), "Erin is friendly");
    }

    #[test]
    fn text_round_trip() {
        let vocab = VocabularyConfig::default();
        let atom = Atom::new("cow", "spiky", crate::vocab::Category::Animal);
        assert_eq!(parse_text(&render_text(&atom), &vocab), Some(atom));
        assert_eq!(parse_text("Erin is friendly.", &vocab), Some(Atom::person("Erin", "friendly")));
        assert_eq!(parse_text("Zed is friendly", &vocab), None);
    }

    #[test]
    fn single_fact_graph() {
        let doc = render_graph(&[Atom::person("Erin", "friendly")], &RenderSettings::default()).unwrap();
        let g = dot::parse(&doc).unwrap();
        assert!(g.directed);
        let ids: Vec<&str> = g.nodes.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(ids, ["Erin", "friendly"]);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].0, "Erin");
        assert_eq!(g.edges[0].1, "friendly");
        assert_eq!(g.edges[0].2["label"], "is");
    }

    #[test]
    fn two_facts_one_subject() {
        let facts = [Atom::person("Erin", "spiky"), Atom::person("Erin", "friendly")];
        let g = dot::parse(&render_graph(&facts, &RenderSettings::default()).unwrap()).unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.edges.len(), 2);
        // order-independent output
        let mut rev = facts.to_vec();
        rev.reverse();
        assert_eq!(
            render_graph(&facts, &RenderSettings::default()).unwrap(),
            render_graph(&rev, &RenderSettings::default()).unwrap()
        );
    }

    #[test]
    fn empty_graph_rejected() {
        assert!(matches!(render_graph(&[], &RenderSettings::default()), Err(RenderError::EmptyFacts)));
    }

    #[test]
    fn audio_job_transcript_and_path() {
        let cfg = RenderConfig::default();
        let fact = Atom::person("Erin", "friendly");
        let a = render_audio_job(&fact, "default", &cfg);
        assert_eq!(a.transcript, "Erin is friendly.");
        assert_eq!(a.output_path, render_audio_job(&fact, "default", &cfg).output_path);
        assert_ne!(a.output_path, render_audio_job(&fact, "other", &cfg).output_path);
    }

    #[test]
    fn store_is_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        let a = store.put(b"hello", AssetFormat::PlainText).unwrap();
        let b = store.put(b"hello", AssetFormat::PlainText).unwrap();
        assert_eq!(a, b);
        assert!(a.path.starts_with(&format!("assets/{}/", &a.content_hash[..2])));
        assert!(store.verify(&a).unwrap());
        std::fs::write(store.resolve(&a), b"tampered").unwrap();
        assert!(matches!(store.put(b"hello", AssetFormat::PlainText), Err(RenderError::HashMismatch { .. })));
    }

    #[test]
    fn missing_synthesizer() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        let cfg = RenderConfig {
            tts_command: Some("definitely-not-a-real-tts-binary {input} {output}".into()),
            render_mode: RenderMode::Full,
            ..RenderConfig::default()
        };
        let job = RenderJob::Audio(render_audio_job(&Atom::person("Erin", "friendly"), "default", &cfg));
        match execute_jobs(&[job], &store, RenderMode::Full, 1) {
            Err(RenderError::ToolMissing(cmd)) => assert_eq!(cmd, "definitely-not-a-real-tts-binary"),
            other => panic!("expected ToolMissing, got {other:?}"),
        }
        assert_eq!(store.processes_spawned(), 0);
    }

    #[cfg(unix)]
    #[test]
    fn full_mode_with_stand_in_tools() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        // `cp` stands in for a rasterizer / synthesizer; `false` for a failing one
        let cfg = RenderConfig {
            tts_command: Some("cp {input} {output}".into()),
            raster_command: Some("cp {input} {output}".into()),
            render_mode: RenderMode::Full,
            ..RenderConfig::default()
        };
        let fact = Atom::person("Erin", "friendly");
        let jobs = vec![
            RenderJob::Graph(graph_job(std::slice::from_ref(&fact), &cfg).unwrap()),
            RenderJob::Audio(render_audio_job(&fact, "default", &cfg)),
        ];
        let out = execute_jobs(&jobs, &store, RenderMode::Full, 2).unwrap();
        assert_eq!(store.processes_spawned(), 2);
        let png = out[0].rendered.as_ref().unwrap();
        assert_eq!(png.format, AssetFormat::PngImage);
        assert!(store.verify(png).unwrap());
        let wav = out[1].rendered.as_ref().unwrap();
        assert_eq!(wav.format, AssetFormat::WavAudio);
        assert!(store.verify(wav).unwrap());

        let failing = RenderConfig {
            raster_command: Some("false {input} {output}".into()),
            ..cfg.clone()
        };
        let job = RenderJob::Graph(graph_job(std::slice::from_ref(&fact), &failing).unwrap());
        assert!(matches!(
            execute_jobs(&[job], &store, RenderMode::Full, 1),
            Err(RenderError::ToolFailed { .. })
        ));
        let silent = RenderConfig {
            raster_command: Some("true {input} {output}".into()),
            ..cfg
        };
        let job = RenderJob::Graph(graph_job(&[fact], &silent).unwrap());
        assert!(matches!(
            execute_jobs(&[job], &store, RenderMode::Full, 1),
            Err(RenderError::EmptyOutput(_))
        ));
    }
}
