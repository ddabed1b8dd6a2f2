//! Chat prompts for every evaluation mode.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::instance::{Instance, Modality, TaskKind, LETTERS};
use crate::render::{AssetRef, RenderedInstance};

pub const REASONING_SYSTEM: &str = "You are an assistant tasked with solving multiple-choice questions that require logical reasoning over the supplied knowledge diagrams. Use only the information explicitly given\u{2014}do not rely on outside or commonsense knowledge. Read the question and given information, think step-by-step and answer the question. At the end of your answer, answer precisely in the format 'Answer: X' where X is the chosen letter A / B / C / D.";

pub const RECOGNITION_SYSTEM: &str = "You are an assistant tasked with solving multiple-choice questions about knowledge diagrams. Use only the information explicitly given\u{2014}do not rely on outside or commonsense knowledge. The facts are given in image, audio and text. Read the question and given information, and directly answer the question in the following format: 'Answer: X' where X is the chosen letter A / B / C / D.";

pub const EXTRACT_SYSTEM: &str = "You are an assistant tasked with solving multiple-choice questions about knowledge diagrams. Use only the information explicitly given\u{2014}do not rely on outside or commonsense knowledge. The facts are given in image, audio and text. Read the question and given information, and directly answer the question.";

pub const EXTRACT_QUESTION: &str =
    "Check the given information and list all the facts in the given image, audio and text, respectively.";

pub const RULES_HEADER: &str = "Rules are as follows:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Reasoning,
    Recognition,
    TwoStepExtract,
    TwoStepReason,
}

impl PromptMode {
    pub const ALL: [PromptMode; 4] = [
        PromptMode::Reasoning,
        PromptMode::Recognition,
        PromptMode::TwoStepExtract,
        PromptMode::TwoStepReason,
    ];

    pub fn system_prompt(self) -> &'static str {
        match self {
            PromptMode::Reasoning | PromptMode::TwoStepReason => REASONING_SYSTEM,
            PromptMode::Recognition => RECOGNITION_SYSTEM,
            PromptMode::TwoStepExtract => EXTRACT_SYSTEM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// The caption on media parts is what the asset depicts or says; it goes
/// into audit transcripts only, never onto the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Part {
    Text { text: String },
    Image { asset: AssetRef, caption: String },
    Audio { asset: AssetRef, caption: String },
}

impl Part {
    pub fn text(s: impl Into<String>) -> Self {
        Part::Text { text: s.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn text(role: Role, s: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![Part::text(s)],
        }
    }

    /// Concatenated text parts.
    pub fn plain_text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                _ => None,
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    #[default]
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecodingParams {
    pub sampling: Sampling,
    pub max_new_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            sampling: Sampling::Greedy,
            max_new_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptBundle {
    pub mode: PromptMode,
    pub messages: Vec<Message>,
    pub modality_order: [Modality; 3],
    pub decoding: DecodingParams,
}

impl PromptBundle {
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }

    /// The user message that carries the modality blocks (the first one).
    pub fn first_user(&self) -> Option<&Message> {
        self.messages.iter().find(|m| m.role == Role::User)
    }

    /// Human-readable dump; media parts appear as their captions.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for (i, msg) in self.messages.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            writeln!(out, "[{}]", msg.role.as_str()).unwrap();
            let parts: Vec<String> = msg
                .parts
                .iter()
                .map(|p| match p {
                    Part::Text { text } => text.clone(),
                    Part::Image { caption, .. } => format!("(Image information: {caption})"),
                    Part::Audio { caption, .. } => format!("(Audio information: {caption})"),
                })
                .collect();
            writeln!(out, "{}", parts.join("\n\n")).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("instance {instance} has {modality} facts but no rendered {modality} payload")]
    MissingAsset { instance: String, modality: Modality },
    #[error("two-step reasoning needs the step-1 user prompt and the model's reply")]
    MissingPriorTurns,
    #[error("rendered payload belongs to {found}, not {expected}")]
    InstanceMismatch { expected: String, found: String },
    #[error("{mode:?} prompts cannot be built from a {task:?} instance")]
    ModeMismatch { mode: PromptMode, task: TaskKind },
}

const PERMUTATIONS: [[Modality; 3]; 6] = {
    use Modality::{Audio as A, Text as T, Vision as V};
    [[T, V, A], [T, A, V], [V, T, A], [V, A, T], [A, T, V], [A, V, T]]
};

/// Uniform over the six orders of the three modalities.
pub fn sample_modality_order(seed: u64) -> [Modality; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = PERMUTATIONS[0];
    order.shuffle(&mut rng);
    order
}

pub fn build(
    rendered: &RenderedInstance,
    instance: &Instance,
    mode: PromptMode,
    seed: u64,
    prior_turns: Option<&[Message]>,
) -> Result<PromptBundle, PromptError> {
    build_with_order(rendered, instance, mode, sample_modality_order(seed), prior_turns)
}

pub fn build_with_order(
    rendered: &RenderedInstance,
    instance: &Instance,
    mode: PromptMode,
    modality_order: [Modality; 3],
    prior_turns: Option<&[Message]>,
) -> Result<PromptBundle, PromptError> {
    if rendered.instance_id != instance.id {
        return Err(PromptError::InstanceMismatch {
            expected: instance.id.clone(),
            found: rendered.instance_id.clone(),
        });
    }
    let task_ok = match mode {
        PromptMode::Recognition => instance.task == TaskKind::Recognition,
        _ => instance.task == TaskKind::Reasoning,
    };
    if !task_ok {
        return Err(PromptError::ModeMismatch {
            mode,
            task: instance.task,
        });
    }

    let system = Message::text(Role::System, mode.system_prompt());
    let messages = match mode {
        PromptMode::Reasoning => {
            let mut parts = blocks(rendered, instance, modality_order)?;
            parts.push(Part::text(reasoning_tail(instance)));
            vec![system, Message { role: Role::User, parts }]
        }
        PromptMode::Recognition => {
            let mut parts = blocks(rendered, instance, modality_order)?;
            parts.push(Part::text(recognition_tail(instance)));
            vec![system, Message { role: Role::User, parts }]
        }
        PromptMode::TwoStepExtract => {
            let mut parts = blocks(rendered, instance, modality_order)?;
            parts.push(Part::text(format!("Question: {EXTRACT_QUESTION}")));
            vec![system, Message { role: Role::User, parts }]
        }
        PromptMode::TwoStepReason => {
            let prior = prior_turns.ok_or(PromptError::MissingPriorTurns)?;
            let has_user = prior.iter().any(|m| m.role == Role::User);
            let ends_with_reply = prior.last().is_some_and(|m| m.role == Role::Assistant);
            if !has_user || !ends_with_reply {
                return Err(PromptError::MissingPriorTurns);
            }
            let mut msgs = vec![system];
            msgs.extend(prior.iter().filter(|m| m.role != Role::System).cloned());
            msgs.push(Message::text(Role::User, reasoning_tail(instance)));
            msgs
        }
    };
    Ok(PromptBundle {
        mode,
        messages,
        modality_order,
        decoding: DecodingParams::default(),
    })
}

/// Step-1 conversation to feed into a `TwoStepReason` build.
pub fn step_one_turns(extract: &PromptBundle, reply: &str) -> Vec<Message> {
    let mut turns: Vec<Message> = extract
        .messages
        .iter()
        .filter(|m| m.role != Role::System)
        .cloned()
        .collect();
    turns.push(Message::text(Role::Assistant, reply));
    turns
}

fn blocks(
    rendered: &RenderedInstance,
    instance: &Instance,
    order: [Modality; 3],
) -> Result<Vec<Part>, PromptError> {
    let present = instance.present_modalities();
    let missing = |modality| PromptError::MissingAsset {
        instance: instance.id.clone(),
        modality,
    };
    let mut parts = Vec::new();
    for m in order.into_iter().filter(|m| present.contains(m)) {
        let part = match m {
            Modality::Text => Part::text(rendered.text.as_ref().ok_or_else(|| missing(m))?.join(" ")),
            Modality::Vision => {
                let v = rendered.vision.as_ref().ok_or_else(|| missing(m))?;
                Part::Image {
                    asset: v.asset().clone(),
                    caption: v.caption.clone(),
                }
            }
            Modality::Audio => {
                let a = rendered.audio.as_ref().ok_or_else(|| missing(m))?;
                Part::Audio {
                    asset: a.asset().clone(),
                    caption: a.transcript.clone(),
                }
            }
        };
        parts.push(part);
    }
    Ok(parts)
}

fn reasoning_tail(instance: &Instance) -> String {
    let rules: Vec<String> = instance.rules.iter().map(|r| r.sentence()).collect();
    let options: Vec<String> = instance
        .options
        .iter()
        .zip(LETTERS)
        .map(|(o, l)| format!("{l}) {o}"))
        .collect();
    format!(
        "{RULES_HEADER} {}\n\n{}\n{}",
        rules.join(" "),
        instance.question,
        options.join(" ")
    )
}

fn recognition_tail(instance: &Instance) -> String {
    let options: Vec<String> = instance
        .options
        .iter()
        .zip(LETTERS)
        .map(|(o, l)| format!("{l}) {o}"))
        .collect();
    format!("Question: {}  Options: {}", instance.question, options.join(", "))
}
