//! Running prompts against a backend, scoring replies, and summarizing runs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Seek, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::ModelBackend;
use crate::instance::{Instance, InstanceMode, InteractionType, Modality, TaskKind, LETTERS};
use crate::prompt::{self, PromptBundle, PromptError, PromptMode};
use crate::render::RenderedInstance;

pub const RUN_SCHEMA: &str = "omnilogic-run/1";

static ANSWER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i:answer)\s*\**\s*[:：]\s*\**\s*\(?([A-D])(?:[^A-Za-z0-9_]|$)").expect("valid regex")
});
static LONE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[^A-Za-z0-9]*([A-D])[^A-Za-z0-9]*$").expect("valid regex"));

/// Letter from the last "Answer: X"; otherwise a lone A-D on the last
/// non-empty line.
pub fn extract_answer(response: &str) -> Option<char> {
    if let Some(c) = ANSWER.captures_iter(response).last() {
        return c[1].chars().next();
    }
    let last = response.lines().rev().find(|l| !l.trim().is_empty())?;
    LONE.captures(last.trim()).and_then(|c| c[1].chars().next())
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("attribution is only defined for contradictory instances, not {0}")]
    WrongType(InteractionType),
    #[error("no records to summarize")]
    EmptyRun,
    #[error("records mix conditions: {0}")]
    MixedConditions(String),
    #[error("no rendered payload for instance {0}")]
    MissingRendered(String),
    #[error("run log line {line}: {message}")]
    BadLog { line: usize, message: String },
    #[error("run log {0} is in use by another run")]
    LogLocked(PathBuf),
    #[error("malformed report: {0}")]
    BadReport(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn letter_index(letter: char) -> Option<usize> {
    LETTERS.iter().position(|&l| l == letter)
}

/// The single modality whose facts entail the chosen option, if any.
pub fn attribute_choice(instance: &Instance, letter: char) -> Result<Option<Modality>, EvalError> {
    if instance.interaction != InteractionType::Contradictory {
        return Err(EvalError::WrongType(instance.interaction));
    }
    Ok(letter_index(letter)
        .and_then(|i| instance.option_provenance.get(i))
        .and_then(|p| p.modalities())
        .filter(|m| m.len() == 1)
        .and_then(|m| m.iter().next().copied()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RunMode {
    Multimodal,
    Unimodal(Modality),
    Recognition,
    TwoStep,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunMode::Multimodal => f.write_str("multimodal"),
            RunMode::Unimodal(m) => write!(f, "unimodal:{m}"),
            RunMode::Recognition => f.write_str("recognition"),
            RunMode::TwoStep => f.write_str("two_step"),
        }
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multimodal" => Ok(RunMode::Multimodal),
            "recognition" => Ok(RunMode::Recognition),
            "two_step" => Ok(RunMode::TwoStep),
            _ => s
                .strip_prefix("unimodal:")
                .ok_or_else(|| format!("unknown run mode `{s}`"))?
                .parse()
                .map(RunMode::Unimodal),
        }
    }
}

impl Serialize for RunMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RunMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl RunMode {
    pub fn for_instance(instance: &Instance, two_step: bool) -> Self {
        match (instance.task, instance.mode) {
            (TaskKind::Recognition, _) => RunMode::Recognition,
            (TaskKind::Reasoning, _) if two_step => RunMode::TwoStep,
            (TaskKind::Reasoning, InstanceMode::Unimodal(m)) => RunMode::Unimodal(m),
            (TaskKind::Reasoning, InstanceMode::Multimodal) => RunMode::Multimodal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: String,
    pub instance_id: String,
    pub interaction: InteractionType,
    pub mode: RunMode,
    pub model: String,
    pub prompt_hash: String,
    pub response_text: Option<String>,
    /// Step-1 reply of a two-step run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step1_text: Option<String>,
    pub extracted_letter: Option<char>,
    pub expected_letter: Option<char>,
    pub correct: bool,
    pub chosen_modality: Option<Modality>,
    pub error: Option<String>,
    pub cached: bool,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Score {
    pub extracted_letter: Option<char>,
    pub correct: bool,
    pub chosen_modality: Option<Modality>,
}

/// Pure scoring of one reply. Contradictory items are never correct.
pub fn score(instance: &Instance, response: Option<&str>) -> Score {
    let extracted_letter = response.and_then(extract_answer);
    let correct = match (extracted_letter, instance.correct_letter()) {
        (Some(got), Some(want)) => got == want,
        _ => false,
    };
    let chosen_modality = match (instance.interaction, extracted_letter) {
        (InteractionType::Contradictory, Some(l)) => attribute_choice(instance, l).ok().flatten(),
        _ => None,
    };
    Score {
        extracted_letter,
        correct,
        chosen_modality,
    }
}

pub fn rescore(instance: &Instance, record: &RunRecord) -> RunRecord {
    let s = score(instance, record.response_text.as_deref());
    RunRecord {
        extracted_letter: s.extracted_letter,
        expected_letter: instance.correct_letter(),
        correct: s.correct,
        chosen_modality: s.chosen_modality,
        ..record.clone()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub log_path: PathBuf,
    pub two_step: bool,
    pub prompt_seed: u64,
    pub workers: usize,
    pub dump_prompts: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(log_path: impl Into<PathBuf>) -> Self {
        Self {
            log_path: log_path.into(),
            two_step: false,
            prompt_seed: 0,
            workers: 4,
            dump_prompts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    /// All records in the log after the run, resumed ones first.
    pub records: Vec<RunRecord>,
    pub resumed: usize,
    pub executed: usize,
}

fn order_seed(base: u64, instance_id: &str) -> u64 {
    let d = Sha256::digest(format!("{base}:{instance_id}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Reads complete records. A trailing partial line (from a crash) is
/// ignored; its byte offset is returned so a writer can truncate it.
pub fn read_run_log(path: &Path) -> Result<(Vec<RunRecord>, u64), EvalError> {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e.into()),
    };
    let mut reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut valid = 0u64;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            break;
        }
        let trimmed = buf.trim();
        if !trimmed.is_empty() {
            let rec: RunRecord = serde_json::from_str(trimmed).map_err(|e| EvalError::BadLog {
                line: line_no,
                message: e.to_string(),
            })?;
            if rec.schema != RUN_SCHEMA {
                return Err(EvalError::BadLog {
                    line: line_no,
                    message: format!("unsupported schema `{}`", rec.schema),
                });
            }
            records.push(rec);
        }
        valid += n as u64;
    }
    Ok((records, valid))
}

fn dump(dir: &Path, instance: &Instance, bundle: &PromptBundle) -> Result<(), std::io::Error> {
    std::fs::create_dir_all(dir)?;
    let mode = serde_json::to_value(bundle.mode).expect("mode serializes");
    let name = format!("{}.{}.txt", instance.id, mode.as_str().unwrap_or("prompt"));
    std::fs::write(dir.join(name), bundle.transcript())
}

fn execute(
    instance: &Instance,
    rendered: &RenderedInstance,
    backend: &dyn ModelBackend,
    cfg: &ExperimentConfig,
) -> Result<RunRecord, EvalError> {
    let started_at = now();
    let mode = RunMode::for_instance(instance, cfg.two_step);
    let seed = order_seed(cfg.prompt_seed, &instance.id);
    let mut step1_text = None;
    let (bundle, reply) = match mode {
        RunMode::TwoStep => {
            let extract = prompt::build(rendered, instance, PromptMode::TwoStepExtract, seed, None)?;
            if let Some(dir) = &cfg.dump_prompts {
                dump(dir, instance, &extract)?;
            }
            match backend.complete(instance, &extract) {
                Ok(first) => {
                    let turns = prompt::step_one_turns(&extract, &first.text);
                    step1_text = Some(first.text);
                    let reason = prompt::build(rendered, instance, PromptMode::TwoStepReason, seed, Some(&turns))?;
                    let reply = backend.complete(instance, &reason);
                    (reason, reply)
                }
                Err(e) => (extract, Err(e)),
            }
        }
        _ => {
            let pm = match instance.task {
                TaskKind::Recognition => PromptMode::Recognition,
                TaskKind::Reasoning => PromptMode::Reasoning,
            };
            let bundle = prompt::build(rendered, instance, pm, seed, None)?;
            let reply = backend.complete(instance, &bundle);
            (bundle, reply)
        }
    };
    if let Some(dir) = &cfg.dump_prompts {
        dump(dir, instance, &bundle)?;
    }
    let (response_text, error, cached) = match reply {
        Ok(r) => (Some(r.text), None, r.cached),
        Err(e) => (None, Some(e.to_string()), false),
    };
    let s = score(instance, response_text.as_deref());
    Ok(RunRecord {
        schema: RUN_SCHEMA.to_string(),
        instance_id: instance.id.clone(),
        interaction: instance.interaction,
        mode,
        model: backend.identity(),
        prompt_hash: bundle.hash(),
        response_text,
        step1_text,
        extracted_letter: s.extracted_letter,
        expected_letter: instance.correct_letter(),
        correct: s.correct,
        chosen_modality: s.chosen_modality,
        error,
        cached,
        started_at,
        finished_at: now(),
    })
}

/// Runs every instance not already in the log and appends its record.
/// Backend failures are recorded per instance and the run continues.
pub fn run_experiment(
    instances: &[Instance],
    rendered: &[RenderedInstance],
    backend: &dyn ModelBackend,
    cfg: &ExperimentConfig,
) -> Result<RunOutcome, EvalError> {
    let by_id: HashMap<&str, &RenderedInstance> = rendered.iter().map(|r| (r.instance_id.as_str(), r)).collect();
    if let Some(dir) = cfg.log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .truncate(false)
        .read(true)
        .write(true)
        .open(&cfg.log_path)?;
    log.try_lock().map_err(|e| match e {
        std::fs::TryLockError::WouldBlock => EvalError::LogLocked(cfg.log_path.clone()),
        std::fs::TryLockError::Error(e) => EvalError::Io(e),
    })?;
    let (mut records, valid_len) = read_run_log(&cfg.log_path)?;
    let resumed = records.len();
    let done: HashSet<(String, RunMode)> = records.iter().map(|r| (r.instance_id.clone(), r.mode)).collect();
    log.set_len(valid_len)?;
    log.seek(std::io::SeekFrom::End(0))?;

    let mut seen = HashSet::new();
    let todo: Vec<&Instance> = instances
        .iter()
        .filter(|i| !done.contains(&(i.id.clone(), RunMode::for_instance(i, cfg.two_step))))
        .filter(|i| seen.insert(i.id.clone()))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .expect("thread pool");
    let chunk = cfg.workers.max(1) * 8;
    let mut executed = 0;
    for batch in todo.chunks(chunk) {
        let results: Vec<Result<RunRecord, EvalError>> = pool.install(|| {
            batch
                .par_iter()
                .map(|inst| {
                    let r = by_id
                        .get(inst.id.as_str())
                        .ok_or_else(|| EvalError::MissingRendered(inst.id.clone()))?;
                    execute(inst, r, backend, cfg)
                })
                .collect()
        });
        for rec in results {
            let rec = rec?;
            writeln!(log, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
            records.push(rec);
            executed += 1;
        }
        log.flush()?;
        log.sync_data()?;
    }
    Ok(RunOutcome {
        records,
        resumed,
        executed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub interaction: InteractionType,
    pub mode: RunMode,
    pub n: usize,
    pub correct: usize,
    pub unanswered: usize,
    pub accuracy: f64,
    pub unanswered_rate: f64,
    /// accuracy − baseline accuracy, keyed by baseline label.
    pub deltas: BTreeMap<String, f64>,
    /// Contradictory only: percent of answers attributable to each modality.
    pub modality_ratios: BTreeMap<Modality, f64>,
}

fn percent(k: usize, n: usize) -> f64 {
    100.0 * k as f64 / n as f64
}

fn accuracy_of(records: &[RunRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    Ok(percent(records.iter().filter(|r| r.correct).count(), records.len()))
}

pub fn summarize(
    label: &str,
    records: &[RunRecord],
    baselines: &BTreeMap<String, Vec<RunRecord>>,
) -> Result<Summary, EvalError> {
    let first = records.first().ok_or(EvalError::EmptyRun)?;
    if let Some(other) = records
        .iter()
        .find(|r| r.interaction != first.interaction || r.mode != first.mode)
    {
        return Err(EvalError::MixedConditions(format!(
            "{}/{} vs {}/{}",
            first.interaction, first.mode, other.interaction, other.mode
        )));
    }
    let n = records.len();
    let correct = records.iter().filter(|r| r.correct).count();
    let unanswered = records.iter().filter(|r| r.extracted_letter.is_none()).count();
    let accuracy = percent(correct, n);
    let mut deltas = BTreeMap::new();
    let mut modality_ratios = BTreeMap::new();
    if first.interaction == InteractionType::Contradictory {
        for m in Modality::ALL {
            let k = records.iter().filter(|r| r.chosen_modality == Some(m)).count();
            modality_ratios.insert(m, percent(k, n));
        }
    } else {
        for (name, base) in baselines {
            deltas.insert(name.clone(), accuracy - accuracy_of(base)?);
        }
    }
    Ok(Summary {
        label: label.to_string(),
        interaction: first.interaction,
        mode: first.mode,
        n,
        correct,
        unanswered,
        accuracy,
        unanswered_rate: percent(unanswered, n),
        deltas,
        modality_ratios,
    })
}

/// Invariant violations in a set of records and its summary.
pub fn check(records: &[RunRecord], summary: &Summary) -> Vec<String> {
    let mut out = Vec::new();
    if summary.n != records.len() {
        out.push(format!("summary n {} != {} records", summary.n, records.len()));
    }
    if !(0.0..=100.0).contains(&summary.accuracy) {
        out.push(format!("accuracy {} out of range", summary.accuracy));
    }
    let ratio_sum: f64 = summary.modality_ratios.values().sum();
    if ratio_sum > 100.0 + 1e-9 {
        out.push(format!("modality ratios sum to {ratio_sum}"));
    }
    for r in records {
        if let Some(l) = r.extracted_letter {
            if !LETTERS.contains(&l) {
                out.push(format!("{}: extracted letter {l} outside A-D", r.instance_id));
            }
        }
        if r.correct && (r.extracted_letter.is_none() || r.extracted_letter != r.expected_letter) {
            out.push(format!("{}: marked correct but letters differ", r.instance_id));
        }
        if r.chosen_modality.is_some() && r.interaction != InteractionType::Contradictory {
            out.push(format!("{}: chosen_modality on a {} record", r.instance_id, r.interaction));
        }
        if r.extracted_letter != r.response_text.as_deref().and_then(extract_answer) {
            out.push(format!("{}: extracted letter disagrees with re-extraction", r.instance_id));
        }
    }
    out
}

const CSV_HEADER: &str = "label,interaction,mode,n,correct,unanswered,accuracy,unanswered_rate,deltas,modality_ratios";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_csv(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

fn pairs<K: fmt::Display>(m: &BTreeMap<K, f64>) -> String {
    m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

/// Floats use shortest round-trip formatting so parsing is exact.
pub fn to_csv(summaries: &[Summary]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for s in summaries {
        let row = [
            csv_field(&s.label),
            s.interaction.to_string(),
            s.mode.to_string(),
            s.n.to_string(),
            s.correct.to_string(),
            s.unanswered.to_string(),
            s.accuracy.to_string(),
            s.unanswered_rate.to_string(),
            csv_field(&pairs(&s.deltas)),
            csv_field(&pairs(&s.modality_ratios)),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<Summary>, EvalError> {
    let bad = |m: String| EvalError::BadReport(m);
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad("missing header".into()));
    }
    fn kv<K: Ord>(s: &str, key: impl Fn(&str) -> Option<K>) -> Option<BTreeMap<K, f64>> {
        s.split(';')
            .filter(|p| !p.is_empty())
            .map(|p| {
                let (k, v) = p.rsplit_once('=')?;
                Some((key(k)?, v.parse().ok()?))
            })
            .collect()
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f = split_csv(line);
            if f.len() != 10 {
                return Err(bad(format!("expected 10 fields, got {}", f.len())));
            }
            let num = |i: usize| f[i].parse::<usize>().map_err(|e| bad(e.to_string()));
            let float = |i: usize| f[i].parse::<f64>().map_err(|e| bad(e.to_string()));
            Ok(Summary {
                label: f[0].clone(),
                interaction: f[1].parse().map_err(bad)?,
                mode: f[2].parse().map_err(bad)?,
                n: num(3)?,
                correct: num(4)?,
                unanswered: num(5)?,
                accuracy: float(6)?,
                unanswered_rate: float(7)?,
                deltas: kv(&f[8], |k| Some(k.to_string())).ok_or_else(|| bad("deltas".into()))?,
                modality_ratios: kv(&f[9], |k| k.parse().ok()).ok_or_else(|| bad("ratios".into()))?,
            })
        })
        .collect()
}

pub fn to_markdown(summaries: &[Summary]) -> String {
    let delta_keys: Vec<&String> = {
        let mut k: Vec<&String> = summaries.iter().flat_map(|s| s.deltas.keys()).collect();
        k.sort();
        k.dedup();
        k
    };
    let mut out = String::from("| Condition | Type | Mode | n | Acc (%) |");
    let mut rule = String::from("|---|---|---|---:|---:|");
    for k in &delta_keys {
        out.push_str(&format!(" Δ{k} |"));
        rule.push_str("---:|");
    }
    out.push_str(" T (%) | V (%) | A (%) | Unanswered (%) |\n");
    rule.push_str("---:|---:|---:|---:|\n");
    out.push_str(&rule);
    for s in summaries {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {:.1} |",
            s.label, s.interaction, s.mode, s.n, s.accuracy
        ));
        for k in &delta_keys {
            match s.deltas.get(*k) {
                Some(d) => out.push_str(&format!(" {d:+.1} |")),
                None => out.push_str(" |"),
            }
        }
        for m in Modality::ALL {
            match s.modality_ratios.get(&m) {
                Some(r) => out.push_str(&format!(" {r:.1} |")),
                None => out.push_str(" |"),
            }
        }
        out.push_str(&format!(" {:.1} |\n", s.unanswered_rate));
    }
    out
}
