//! Synthetic multimodal logic benchmark: instance generation, rendering,
//! prompting, model access, scoring and attention probing.

pub mod dot;
pub mod evaluation;
pub mod factory;
pub mod features;
pub mod gateway;
pub mod instance;
pub mod logic;
pub mod probe;
pub mod prompt;
pub mod render;
pub mod verify;
pub mod vocab;

pub use factory::{generate, GenerateError, GenerationSpec};
pub use instance::{Instance, InteractionType, Modality};
pub use logic::{close, entails, Atom, KnowledgeBase, LogicError, Rule};
pub use vocab::{Category, VocabularyConfig};
