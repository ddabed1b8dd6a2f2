//! Benchmark instance types and the line-delimited instance file format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logic::{Atom, KnowledgeBase, Rule};
use crate::vocab::Category;

pub const INSTANCE_SCHEMA: &str = "omnilogic-instance/1";

pub const REASONING_QUESTION: &str =
    "Which of the following options can be inferred based on the given facts and rules?";
pub const RECOGNITION_QUESTION: &str =
    "Which fact is mentioned in the given information in image, audio or text?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionType {
    Equivalence,
    Alternative,
    Entailment,
    Independence,
    Contradictory,
    Complementary,
}

impl InteractionType {
    pub const ALL: [InteractionType; 6] = [
        InteractionType::Equivalence,
        InteractionType::Alternative,
        InteractionType::Entailment,
        InteractionType::Independence,
        InteractionType::Contradictory,
        InteractionType::Complementary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InteractionType::Equivalence => "equivalence",
            InteractionType::Alternative => "alternative",
            InteractionType::Entailment => "entailment",
            InteractionType::Independence => "independence",
            InteractionType::Contradictory => "contradictory",
            InteractionType::Complementary => "complementary",
        }
    }
}

impl fmt::Display for InteractionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InteractionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InteractionType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown interaction type `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Vision,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Vision, Modality::Audio];

    pub fn letter(self) -> char {
        match self {
            Modality::Text => 'T',
            Modality::Vision => 'V',
            Modality::Audio => 'A',
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Modality::Text => "text",
            Modality::Vision => "vision",
            Modality::Audio => "audio",
        };
        f.write_str(s)
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "t" | "text" => Ok(Modality::Text),
            "v" | "vision" | "image" => Ok(Modality::Vision),
            "a" | "audio" => Ok(Modality::Audio),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceMode {
    Multimodal,
    Unimodal(Modality),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Reasoning,
    Recognition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionProvenance {
    /// Union of the minimal modality subsets whose facts (with the rules)
    /// entail the option; for recognition, the modality presenting it.
    EntailedBy(BTreeSet<Modality>),
    NeverEntailed,
}

impl OptionProvenance {
    pub fn modalities(&self) -> Option<&BTreeSet<Modality>> {
        match self {
            OptionProvenance::EntailedBy(m) => Some(m),
            OptionProvenance::NeverEntailed => None,
        }
    }
}

/// A fact together with the modality block it is presented in.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlacedFact {
    pub modality: Modality,
    pub atom: Atom,
}

/// One multiple-choice benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub schema: String,
    pub id: String,
    pub interaction: InteractionType,
    pub task: TaskKind,
    pub category: Category,
    pub subject: String,
    pub modality_facts: BTreeMap<Modality, Vec<Atom>>,
    pub rules: Vec<Rule>,
    pub question: String,
    pub options: Vec<String>,
    pub option_atoms: Vec<Atom>,
    /// `None` only for Contradictory reasoning items, which have no single
    /// correct option.
    pub correct_index: Option<usize>,
    pub option_provenance: Vec<OptionProvenance>,
    pub decisive: Vec<PlacedFact>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusion_groups: Vec<BTreeSet<String>>,
    pub seed: u64,
    pub mode: InstanceMode,
}

pub const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

impl Instance {
    pub fn correct_letter(&self) -> Option<char> {
        self.correct_index.map(|i| LETTERS[i])
    }

    /// Every presented fact with its modality, in modality order.
    pub fn placed_facts(&self) -> Vec<PlacedFact> {
        self.modality_facts
            .iter()
            .flat_map(|(&m, atoms)| {
                atoms.iter().map(move |a| PlacedFact {
                    modality: m,
                    atom: a.clone(),
                })
            })
            .collect()
    }

    /// Modalities that hold at least one fact.
    pub fn present_modalities(&self) -> BTreeSet<Modality> {
        self.modality_facts
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(&m, _)| m)
            .collect()
    }

    /// Knowledge base over the facts of `modalities` plus all rules.
    pub fn kb_for(&self, modalities: &BTreeSet<Modality>) -> KnowledgeBase {
        let facts = self
            .modality_facts
            .iter()
            .filter(|(m, _)| modalities.contains(m))
            .flat_map(|(_, atoms)| atoms.iter().cloned());
        KnowledgeBase::new(facts, self.rules.clone()).with_exclusions(self.exclusion_groups.clone())
    }

    pub fn full_kb(&self) -> KnowledgeBase {
        self.kb_for(&Modality::ALL.into_iter().collect())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("instance serializes")
    }
}

pub fn option_text(atom: &Atom) -> String {
    format!("{}.", crate::render::render_text(atom))
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: unsupported schema `{found}`, expected `{expected}`")]
    Schema {
        line: usize,
        found: String,
        expected: &'static str,
    },
}

pub fn write_instances(path: &Path, instances: &[Instance]) -> Result<(), FormatError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for inst in instances {
        writeln!(out, "{}", inst.to_json_line())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_instances(path: &Path) -> Result<Vec<Instance>, FormatError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance =
            serde_json::from_str(&line).map_err(|source| FormatError::Json { line: idx + 1, source })?;
        if inst.schema != INSTANCE_SCHEMA {
            return Err(FormatError::Schema {
                line: idx + 1,
                found: inst.schema,
                expected: INSTANCE_SCHEMA,
            });
        }
        out.push(inst);
    }
    Ok(out)
}
