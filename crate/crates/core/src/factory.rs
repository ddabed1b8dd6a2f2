//! Seeded generation of verified instances for the six interaction types,
//! plus unimodal baselines and recognition items derived from them.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::instance::{
    option_text, Instance, InstanceMode, InteractionType, Modality, OptionProvenance, PlacedFact, TaskKind,
    INSTANCE_SCHEMA, REASONING_QUESTION, RECOGNITION_QUESTION,
};
use crate::logic::{self, Atom, Literal, Rule, PERSON_NOUN};
use crate::verify::{compute_provenance, verify_instance};
use crate::vocab::{Category, VocabularyConfig};

const MAX_ATTEMPTS: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub interaction: InteractionType,
    pub category: Category,
    pub n_distractor_rules: usize,
    /// Independence only.
    pub n_distractor_facts_per_modality: usize,
    /// Entailment only; at least 2.
    pub chain_length: usize,
    /// Where the decisive (Independence) or final-step (Entailment) fact is
    /// placed. `None` draws it uniformly per seed.
    pub final_fact_modality: Option<Modality>,
    /// Contradictory only: give each modality's fact its own subject.
    pub contradictory_mixed_subjects: bool,
    pub vocabulary: VocabularyConfig,
}

impl GenerationSpec {
    pub fn new(interaction: InteractionType) -> Self {
        Self {
            interaction,
            category: Category::Person,
            n_distractor_rules: 3,
            n_distractor_facts_per_modality: 1,
            chain_length: 3,
            final_fact_modality: None,
            contradictory_mixed_subjects: false,
            vocabulary: VocabularyConfig::default(),
        }
    }

    pub fn with_category(mut self, category: Category) -> Self {
        self.category = category;
        self
    }

    pub fn with_final_modality(mut self, modality: Modality) -> Self {
        self.final_fact_modality = Some(modality);
        self
    }

    pub fn with_vocabulary(mut self, vocabulary: VocabularyConfig) -> Self {
        self.vocabulary = vocabulary;
        self
    }

    fn validate(&self) -> Result<(), GenerateError> {
        if self.chain_length < 2 {
            return Err(GenerateError::InvalidSpec("chain_length must be at least 2".into()));
        }
        if self.vocabulary.subjects(self.category).is_empty() {
            return Err(GenerateError::InvalidSpec(format!(
                "no {} subjects in vocabulary",
                self.category.as_str()
            )));
        }
        Ok(())
    }

    /// Stable identity of (spec, seed) excluding the raw vocabulary lists.
    fn identity(&self, seed: u64) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            interaction: InteractionType,
            category: Category,
            n_distractor_rules: usize,
            n_distractor_facts_per_modality: usize,
            chain_length: usize,
            final_fact_modality: Option<Modality>,
            contradictory_mixed_subjects: bool,
            vocabulary: &'a str,
            seed: u64,
        }
        let digest = self.vocabulary.digest();
        let key = Key {
            interaction: self.interaction,
            category: self.category,
            n_distractor_rules: self.n_distractor_rules,
            n_distractor_facts_per_modality: self.n_distractor_facts_per_modality,
            chain_length: self.chain_length,
            final_fact_modality: self.final_fact_modality,
            contradictory_mixed_subjects: self.contradictory_mixed_subjects,
            vocabulary: &digest,
            seed,
        };
        serde_json::to_string(&key).expect("key serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("vocabulary exhausted: {0}")]
    VocabularyExhausted(String),
    #[error("generated instance failed verification after {attempts} attempts: {reason}")]
    VerificationFailed { attempts: u32, reason: String },
    #[error("unimodal baselines are not defined for {0}")]
    UnsupportedType(InteractionType),
    #[error("instance is not multimodal")]
    NotMultimodal,
    #[error("instance has no facts")]
    NoFacts,
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Logic(#[from] logic::LogicError),
}

pub(crate) fn short_hash(material: &str) -> String {
    hex::encode(Sha256::digest(material.as_bytes()))[..16].to_string()
}

fn derived_seed(material: &str) -> u64 {
    let digest = Sha256::digest(material.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Deterministic instance for `(spec, seed)`.
pub fn generate(spec: &GenerationSpec, seed: u64) -> Result<Instance, GenerateError> {
    spec.validate()?;
    let identity = spec.identity(seed);
    let id = short_hash(&identity);
    let mut last_reason = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let rng = ChaCha8Rng::seed_from_u64(derived_seed(&format!("{identity}#{attempt}")));
        let mut builder = Builder::new(spec, rng);
        let draft = builder.build()?;
        let instance = draft.finish(spec, &id, seed)?;
        let report = verify_instance(&instance);
        if report.passed {
            return Ok(instance);
        }
        last_reason = report.failures.join("; ");
    }
    Err(GenerateError::VerificationFailed {
        attempts: MAX_ATTEMPTS,
        reason: last_reason,
    })
}

struct Draft {
    subject: String,
    modality_facts: BTreeMap<Modality, Vec<Atom>>,
    rules: Vec<Rule>,
    /// (option atom, is the correct answer)
    options: Vec<(Atom, bool)>,
    decisive: Vec<PlacedFact>,
    has_correct: bool,
}

impl Draft {
    fn finish(self, spec: &GenerationSpec, id: &str, seed: u64) -> Result<Instance, GenerateError> {
        let correct_index = if self.has_correct {
            self.options.iter().position(|(_, c)| *c)
        } else {
            None
        };
        let option_atoms: Vec<Atom> = self.options.into_iter().map(|(a, _)| a).collect();
        let mut inst = Instance {
            schema: INSTANCE_SCHEMA.to_string(),
            id: id.to_string(),
            interaction: spec.interaction,
            task: TaskKind::Reasoning,
            category: spec.category,
            subject: self.subject,
            modality_facts: self.modality_facts,
            rules: self.rules,
            question: REASONING_QUESTION.to_string(),
            options: option_atoms.iter().map(option_text).collect(),
            option_atoms,
            correct_index,
            option_provenance: Vec::new(),
            decisive: self.decisive,
            exclusion_groups: spec.vocabulary.exclusion_groups.clone(),
            seed,
            mode: InstanceMode::Multimodal,
        };
        inst.option_provenance = compute_provenance(&inst)?;
        Ok(inst)
    }
}

/// Draws attributes without repetition and without two members of one
/// exclusion group.
struct Builder<'a> {
    spec: &'a GenerationSpec,
    vocab: &'a VocabularyConfig,
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl<'a> Builder<'a> {
    fn new(spec: &'a GenerationSpec, rng: ChaCha8Rng) -> Self {
        Self {
            spec,
            vocab: &spec.vocabulary,
            rng,
            used: BTreeSet::new(),
        }
    }

    fn fresh(&mut self) -> Result<String, GenerateError> {
        let candidates: Vec<&String> = self
            .vocab
            .attributes
            .iter()
            .filter(|a| !self.used.contains(*a) && !self.used.iter().any(|u| self.vocab.conflicts(u, a)))
            .collect();
        let pick = candidates
            .choose(&mut self.rng)
            .map(|s| s.to_string())
            .ok_or_else(|| {
                GenerateError::VocabularyExhausted(format!(
                    "no unused non-conflicting attribute left after {} picks",
                    self.used.len()
                ))
            })?;
        self.used.insert(pick.clone());
        Ok(pick)
    }

    fn fresh_n(&mut self, n: usize) -> Result<Vec<String>, GenerateError> {
        (0..n).map(|_| self.fresh()).collect()
    }

    fn subject(&mut self) -> String {
        self.vocab
            .subjects(self.spec.category)
            .choose(&mut self.rng)
            .expect("validated non-empty")
            .clone()
    }

    fn other_subjects(&mut self, exclude: &[&str], n: usize) -> Result<Vec<String>, GenerateError> {
        let pool: Vec<&String> = self
            .vocab
            .subjects(self.spec.category)
            .iter()
            .filter(|s| !exclude.contains(&s.as_str()))
            .collect();
        if pool.len() < n {
            return Err(GenerateError::VocabularyExhausted(format!(
                "need {n} further {} subjects",
                self.spec.category.as_str()
            )));
        }
        Ok(pool
            .choose_multiple(&mut self.rng, n)
            .map(|s| s.to_string())
            .collect())
    }

    fn noun_for(&self, subject: &str) -> String {
        match self.spec.category {
            Category::Person => PERSON_NOUN.to_string(),
            _ => subject.to_string(),
        }
    }

    fn atom(&self, subject: &str, attribute: &str) -> Atom {
        Atom::new(subject, attribute, self.spec.category)
    }

    fn modality_order(&mut self) -> Vec<Modality> {
        let mut ms = Modality::ALL.to_vec();
        ms.shuffle(&mut self.rng);
        ms
    }

    fn final_modality(&mut self) -> Modality {
        match self.spec.final_fact_modality {
            Some(m) => m,
            None => *Modality::ALL.choose(&mut self.rng).expect("three modalities"),
        }
    }

    /// Distractor rules over attributes that hold for nobody. Returns the
    /// rules and their consequents in creation order.
    fn distractor_rules(&mut self, noun: &str, n: usize) -> Result<(Vec<Rule>, Vec<String>), GenerateError> {
        let mut rules = Vec::with_capacity(n);
        let mut consequents = Vec::with_capacity(n);
        for _ in 0..n {
            let roll: f64 = self.rng.random();
            let rule = if roll < 0.6 {
                let [a, c] = self.fresh_n(2)?.try_into().expect("two");
                Rule::single(noun, a, c)
            } else if roll < 0.85 {
                let [a, b, c] = self.fresh_n(3)?.try_into().expect("three");
                Rule::or(noun, [a, b], c)
            } else {
                let [a, b, c] = self.fresh_n(3)?.try_into().expect("three");
                Rule::and(noun, vec![Literal::pos(a), Literal::pos(b)], c)
            };
            consequents.push(rule.consequent.clone());
            rules.push(rule);
        }
        Ok((rules, consequents))
    }

    /// Three foil attributes: distractor consequents first, then bare unused
    /// attributes.
    fn foils(&mut self, distractor_consequents: &[String]) -> Result<Vec<String>, GenerateError> {
        let mut foils: Vec<String> = distractor_consequents.iter().take(3).cloned().collect();
        while foils.len() < 3 {
            foils.push(self.fresh()?);
        }
        Ok(foils)
    }

    fn build(&mut self) -> Result<Draft, GenerateError> {
        let mut draft = match self.spec.interaction {
            InteractionType::Equivalence => self.equivalence(),
            InteractionType::Alternative => self.alternative(),
            InteractionType::Entailment => self.entailment(),
            InteractionType::Independence => self.independence(),
            InteractionType::Contradictory => self.contradictory(),
            InteractionType::Complementary => self.complementary(),
        }?;
        draft.rules.shuffle(&mut self.rng);
        draft.options.shuffle(&mut self.rng);
        for facts in draft.modality_facts.values_mut() {
            facts.shuffle(&mut self.rng);
        }
        Ok(draft)
    }

    fn simple_options(&self, subject: &str, correct: &str, foils: &[String]) -> Vec<(Atom, bool)> {
        std::iter::once((self.atom(subject, correct), true))
            .chain(foils.iter().map(|f| (self.atom(subject, f), false)))
            .collect()
    }

    fn equivalence(&mut self) -> Result<Draft, GenerateError> {
        let subject = self.subject();
        let noun = self.noun_for(&subject);
        let [decisive, answer] = self.fresh_n(2)?.try_into().expect("two");
        let (mut rules, consequents) = self.distractor_rules(&noun, self.spec.n_distractor_rules)?;
        rules.push(Rule::single(&noun, &decisive, &answer));
        let foils = self.foils(&consequents)?;
        let fact = self.atom(&subject, &decisive);
        let modality_facts = Modality::ALL.into_iter().map(|m| (m, vec![fact.clone()])).collect();
        let decisive = Modality::ALL
            .into_iter()
            .map(|m| PlacedFact { modality: m, atom: fact.clone() })
            .collect();
        Ok(Draft {
            options: self.simple_options(&subject, &answer, &foils),
            subject,
            modality_facts,
            rules,
            decisive,
            has_correct: true,
        })
    }

    fn alternative(&mut self) -> Result<Draft, GenerateError> {
        let subject = self.subject();
        let noun = self.noun_for(&subject);
        let triggers = self.fresh_n(3)?;
        let answer = self.fresh()?;
        let (mut rules, consequents) = self.distractor_rules(&noun, self.spec.n_distractor_rules)?;
        let foils = self.foils(&consequents)?;
        let mut modality_facts = BTreeMap::new();
        let mut decisive = Vec::new();
        for (m, t) in Modality::ALL.into_iter().zip(&triggers) {
            rules.push(Rule::single(&noun, t, &answer));
            let atom = self.atom(&subject, t);
            modality_facts.insert(m, vec![atom.clone()]);
            decisive.push(PlacedFact { modality: m, atom });
        }
        Ok(Draft {
            options: self.simple_options(&subject, &answer, &foils),
            subject,
            modality_facts,
            rules,
            decisive,
            has_correct: true,
        })
    }

    fn entailment(&mut self) -> Result<Draft, GenerateError> {
        let subject = self.subject();
        let noun = self.noun_for(&subject);
        let k = self.spec.chain_length;
        let chain = self.fresh_n(k)?;
        let answer = self.fresh()?;
        let (mut rules, consequents) = self.distractor_rules(&noun, self.spec.n_distractor_rules)?;
        let foils = self.foils(&consequents)?;

        // Earlier links a0 -> a1 -> ... -> a_{k-2}; the final fact is not
        // derivable from them, so it alone supports the answer.
        for pair in chain[..k - 1].windows(2) {
            rules.push(Rule::single(&noun, &pair[0], &pair[1]));
        }
        rules.push(Rule::single(&noun, &chain[k - 1], &answer));

        let final_modality = self.final_modality();
        let mut others: Vec<Modality> = Modality::ALL.into_iter().filter(|&m| m != final_modality).collect();
        others.shuffle(&mut self.rng);
        // Walking back from the final fact: F, O1, O2, F, O1, ... so that
        // consecutive chain facts never share a modality.
        let cycle = [final_modality, others[0], others[1]];
        let mut modality_facts: BTreeMap<Modality, Vec<Atom>> = BTreeMap::new();
        for (back, attr) in chain.iter().rev().enumerate() {
            modality_facts
                .entry(cycle[back % 3])
                .or_default()
                .push(self.atom(&subject, attr));
        }
        let decisive = vec![PlacedFact {
            modality: final_modality,
            atom: self.atom(&subject, &chain[k - 1]),
        }];
        Ok(Draft {
            options: self.simple_options(&subject, &answer, &foils),
            subject,
            modality_facts,
            rules,
            decisive,
            has_correct: true,
        })
    }

    fn independence(&mut self) -> Result<Draft, GenerateError> {
        let subject = self.subject();
        let noun = self.noun_for(&subject);
        let [trigger, answer] = self.fresh_n(2)?.try_into().expect("two");
        let (mut rules, consequents) = self.distractor_rules(&noun, self.spec.n_distractor_rules)?;
        let foils = self.foils(&consequents)?;
        let lure_attrs: Vec<String> = rules
            .iter()
            .flat_map(|r| r.positive_attributes().map(str::to_string).collect::<Vec<_>>())
            .collect();
        rules.push(Rule::single(&noun, &trigger, &answer));

        let decisive_modality = self.final_modality();
        let mut others: Vec<Modality> = Modality::ALL.into_iter().filter(|&m| m != decisive_modality).collect();
        others.shuffle(&mut self.rng);

        let mut modality_facts = BTreeMap::new();
        modality_facts.insert(decisive_modality, vec![self.atom(&subject, &trigger)]);
        let per_modality = self.spec.n_distractor_facts_per_modality;
        let needed = others.len() * per_modality;
        let bystanders = if needed > 0 {
            self.other_subjects(&[&subject], needed.div_ceil(2).max(1))?
        } else {
            Vec::new()
        };
        let mut slot = 0usize;
        for m in others {
            let mut facts = Vec::with_capacity(per_modality);
            for _ in 0..per_modality {
                // Even slots: another subject (possibly matching a distractor
                // antecedent); odd slots: an attribute no rule mentions.
                let atom = if slot.is_multiple_of(2) {
                    let who = &bystanders[(slot / 2) % bystanders.len()];
                    let attr = match lure_attrs.choose(&mut self.rng) {
                        Some(a) => a.clone(),
                        None => self.fresh()?,
                    };
                    self.atom(who, &attr)
                } else {
                    let attr = self.fresh()?;
                    self.atom(&subject, &attr)
                };
                slot += 1;
                facts.push(atom);
            }
            modality_facts.insert(m, facts);
        }
        let decisive = vec![PlacedFact {
            modality: decisive_modality,
            atom: self.atom(&subject, &trigger),
        }];
        Ok(Draft {
            options: self.simple_options(&subject, &answer, &foils),
            subject,
            modality_facts,
            rules,
            decisive,
            has_correct: true,
        })
    }

    fn contradictory(&mut self) -> Result<Draft, GenerateError> {
        let subject = self.subject();
        let subjects: Vec<String> = if self.spec.contradictory_mixed_subjects {
            let mut s = vec![subject.clone()];
            s.extend(self.other_subjects(&[&subject], 2)?);
            s
        } else {
            vec![subject.clone(); 3]
        };

        // Conclusions from one exclusion group when one is large enough.
        let groups: Vec<Vec<String>> = self
            .vocab
            .exclusion_groups
            .iter()
            .filter(|g| g.len() >= 3 && g.iter().all(|a| self.vocab.has_attribute(a)))
            .map(|g| g.iter().cloned().collect())
            .collect();
        let (conclusions, group_foil) = match groups.choose(&mut self.rng) {
            Some(group) => {
                let mut members = group.clone();
                members.shuffle(&mut self.rng);
                self.used.extend(members.iter().cloned());
                let foil = members.get(3).cloned();
                (members[..3].to_vec(), foil)
            }
            None => (self.fresh_n(3)?, None),
        };
        let triggers = self.fresh_n(3)?;

        let main_noun = self.noun_for(&subject);
        let mut rules = Vec::new();
        let foil = match group_foil {
            Some(f) => {
                let a = self.fresh()?;
                rules.push(Rule::single(&main_noun, a, &f));
                f
            }
            None if self.spec.n_distractor_rules > 0 => {
                let (r, c) = self.distractor_rules(&main_noun, 1)?;
                rules.extend(r);
                c[0].clone()
            }
            None => self.fresh()?,
        };
        let extra = self.spec.n_distractor_rules.saturating_sub(1);
        let (more, _) = self.distractor_rules(&main_noun, extra)?;
        rules.extend(more);

        let order = self.modality_order();
        let mut modality_facts = BTreeMap::new();
        let mut decisive = Vec::new();
        let mut options = Vec::new();
        for ((m, who), (t, c)) in order.into_iter().zip(&subjects).zip(triggers.iter().zip(&conclusions)) {
            rules.push(Rule::single(self.noun_for(who), t, c));
            let atom = self.atom(who, t);
            modality_facts.insert(m, vec![atom.clone()]);
            decisive.push(PlacedFact { modality: m, atom });
            options.push((self.atom(who, c), false));
        }
        options.push((self.atom(&subject, &foil), false));
        decisive.sort();
        Ok(Draft {
            subject,
            modality_facts,
            rules,
            options,
            decisive,
            has_correct: false,
        })
    }

    fn complementary(&mut self) -> Result<Draft, GenerateError> {
        let subject = self.subject();
        let noun = self.noun_for(&subject);
        let parts = self.fresh_n(3)?;
        let answer = self.fresh()?;
        let foils = self.fresh_n(3)?;

        let mut rules = Vec::with_capacity(4);
        for (negated, foil) in parts.iter().zip(&foils) {
            let mut lits: Vec<Literal> = parts.iter().filter(|p| *p != negated).map(Literal::pos).collect();
            lits.push(Literal::neg(negated));
            rules.push(Rule::and(&noun, lits, foil));
        }
        rules.push(Rule::and(&noun, parts.iter().map(Literal::pos).collect(), &answer));

        let order = self.modality_order();
        let mut modality_facts = BTreeMap::new();
        let mut decisive = Vec::new();
        for (m, p) in order.into_iter().zip(&parts) {
            let atom = self.atom(&subject, p);
            modality_facts.insert(m, vec![atom.clone()]);
            decisive.push(PlacedFact { modality: m, atom });
        }
        decisive.sort();
        Ok(Draft {
            options: self.simple_options(&subject, &answer, &foils),
            subject,
            modality_facts,
            rules,
            decisive,
            has_correct: true,
        })
    }
}

/// Same item with the decisive material presented in one modality only.
pub fn derive_unimodal_baseline(instance: &Instance, modality: Modality) -> Result<Instance, GenerateError> {
    match instance.mode {
        InstanceMode::Unimodal(m) if m == modality => return Ok(instance.clone()),
        InstanceMode::Unimodal(_) => return Err(GenerateError::NotMultimodal),
        InstanceMode::Multimodal => {}
    }
    let kept: Vec<Atom> = match instance.interaction {
        InteractionType::Contradictory => return Err(GenerateError::UnsupportedType(instance.interaction)),
        InteractionType::Equivalence | InteractionType::Entailment => instance
            .decisive
            .first()
            .map(|p| vec![p.atom.clone()])
            .ok_or(GenerateError::NoFacts)?,
        InteractionType::Alternative => instance
            .decisive
            .iter()
            .find(|p| p.modality == modality)
            .or(instance.decisive.first())
            .map(|p| vec![p.atom.clone()])
            .ok_or(GenerateError::NoFacts)?,
        InteractionType::Independence | InteractionType::Complementary => instance
            .placed_facts()
            .into_iter()
            .map(|p| p.atom)
            .collect(),
    };
    let decisive_atoms: BTreeSet<&Atom> = instance.decisive.iter().map(|p| &p.atom).collect();
    let mut decisive: Vec<PlacedFact> = kept
        .iter()
        .filter(|a| decisive_atoms.contains(a))
        .map(|a| PlacedFact { modality, atom: a.clone() })
        .collect();
    decisive.dedup();

    let mut out = instance.clone();
    out.id = short_hash(&format!("{}:unimodal:{}", instance.id, modality));
    out.modality_facts = BTreeMap::from([(modality, kept)]);
    out.decisive = decisive;
    out.mode = InstanceMode::Unimodal(modality);
    out.option_provenance = compute_provenance(&out)?;
    Ok(out)
}

/// A "which fact is mentioned" item over the same presented facts.
pub fn generate_recognition(
    instance: &Instance,
    vocab: &VocabularyConfig,
    seed: u64,
) -> Result<Instance, GenerateError> {
    let placed = instance.placed_facts();
    if placed.is_empty() {
        return Err(GenerateError::NoFacts);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(&format!("{}:recognition:{seed}", instance.id)));
    let target = placed.choose(&mut rng).expect("non-empty").clone();
    let subject = &target.atom.subject;
    let closure = logic::close(&instance.full_kb())?;
    let presented: BTreeSet<&Atom> = placed.iter().map(|p| &p.atom).collect();
    let candidates: Vec<&String> = vocab
        .attributes
        .iter()
        .filter(|attr| {
            !closure
                .iter()
                .any(|a| &a.subject == subject && &a.attribute == *attr)
        })
        .collect();
    if candidates.len() < 3 {
        return Err(GenerateError::VocabularyExhausted(format!(
            "only {} attributes neither presented nor entailed for {subject}",
            candidates.len()
        )));
    }
    let mut options: Vec<(Atom, bool)> = candidates
        .choose_multiple(&mut rng, 3)
        .map(|attr| (Atom::new(subject.clone(), attr.to_string(), target.atom.category), false))
        .collect();
    debug_assert!(options.iter().all(|(a, _)| !presented.contains(a)));
    options.push((target.atom.clone(), true));
    options.shuffle(&mut rng);

    let correct_index = options.iter().position(|(_, c)| *c);
    let option_atoms: Vec<Atom> = options.into_iter().map(|(a, _)| a).collect();
    let option_provenance = option_atoms
        .iter()
        .map(|a| {
            let ms: BTreeSet<Modality> = placed.iter().filter(|p| &p.atom == a).map(|p| p.modality).collect();
            if ms.is_empty() {
                OptionProvenance::NeverEntailed
            } else {
                OptionProvenance::EntailedBy(ms)
            }
        })
        .collect();
    let mut out = instance.clone();
    out.id = short_hash(&format!("{}:recognition:{seed}", instance.id));
    out.task = TaskKind::Recognition;
    out.question = RECOGNITION_QUESTION.to_string();
    out.options = option_atoms.iter().map(option_text).collect();
    out.option_atoms = option_atoms;
    out.correct_index = correct_index;
    out.option_provenance = option_provenance;
    out.decisive = vec![target];
    out.seed = seed;
    Ok(out)
}
