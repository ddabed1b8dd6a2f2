//! Consistency checks of instances against the logic oracle.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::instance::{Instance, InstanceMode, InteractionType, Modality, OptionProvenance, TaskKind};
use crate::logic::{self, Atom, KnowledgeBase, LogicError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionCheck {
    pub index: usize,
    pub text: String,
    /// Entailed by all presented facts together.
    pub entailed_by_union: bool,
    /// Modalities whose facts alone entail the option.
    pub entailed_by_single: BTreeSet<Modality>,
    pub provenance: OptionProvenance,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub instance_id: String,
    pub options: Vec<OptionCheck>,
    pub failures: Vec<String>,
    pub passed: bool,
}

fn nonempty_subsets(ms: &BTreeSet<Modality>) -> Vec<BTreeSet<Modality>> {
    let items: Vec<Modality> = ms.iter().copied().collect();
    let mut out: Vec<BTreeSet<Modality>> = (1u32..(1 << items.len()))
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &m)| m)
                .collect()
        })
        .collect();
    out.sort_by_key(|s| s.len());
    out
}

type SubsetClosure = (BTreeSet<Modality>, Option<BTreeSet<Atom>>);

/// Closures of every non-empty modality subset. Subsets whose closure fails
/// are `None`; they are tolerated only for Contradictory items, where the
/// union is inconsistent on purpose.
fn subset_closures(instance: &Instance) -> Result<Vec<SubsetClosure>, LogicError> {
    nonempty_subsets(&instance.present_modalities())
        .into_iter()
        .map(|s| match logic::close(&instance.kb_for(&s)) {
            Ok(c) => Ok((s, Some(c))),
            Err(LogicError::ExclusionViolation { .. })
                if instance.interaction == InteractionType::Contradictory && s.len() > 1 =>
            {
                Ok((s, None))
            }
            Err(e) => Err(e),
        })
        .collect()
}

fn provenance_of(atom: &Atom, closures: &[(BTreeSet<Modality>, Option<BTreeSet<Atom>>)]) -> OptionProvenance {
    let entailing: Vec<&BTreeSet<Modality>> = closures
        .iter()
        .filter(|(_, c)| c.as_ref().is_some_and(|c| c.contains(atom)))
        .map(|(s, _)| s)
        .collect();
    let minimal: BTreeSet<Modality> = entailing
        .iter()
        .filter(|s| !entailing.iter().any(|o| o.len() < s.len() && o.is_subset(s)))
        .flat_map(|s| s.iter().copied())
        .collect();
    if minimal.is_empty() {
        OptionProvenance::NeverEntailed
    } else {
        OptionProvenance::EntailedBy(minimal)
    }
}

/// Per-option provenance of a reasoning instance, or presentation
/// provenance of a recognition instance.
pub fn compute_provenance(instance: &Instance) -> Result<Vec<OptionProvenance>, LogicError> {
    match instance.task {
        TaskKind::Reasoning => {
            let closures = subset_closures(instance)?;
            Ok(instance.option_atoms.iter().map(|a| provenance_of(a, &closures)).collect())
        }
        TaskKind::Recognition => Ok(instance
            .option_atoms
            .iter()
            .map(|a| {
                let ms: BTreeSet<Modality> = instance
                    .placed_facts()
                    .into_iter()
                    .filter(|p| &p.atom == a)
                    .map(|p| p.modality)
                    .collect();
                if ms.is_empty() {
                    OptionProvenance::NeverEntailed
                } else {
                    OptionProvenance::EntailedBy(ms)
                }
            })
            .collect()),
    }
}

fn entails_quiet(kb: &KnowledgeBase, atom: &Atom) -> bool {
    logic::entails(kb, atom).unwrap_or(false)
}

/// Checks an instance against the structural contract of its type.
pub fn verify_instance(instance: &Instance) -> VerificationReport {
    let mut failures = Vec::new();
    let mut options: Vec<OptionCheck> = Vec::new();

    if instance.options.len() != 4 || instance.option_atoms.len() != 4 {
        failures.push(format!("expected 4 options, found {}", instance.options.len()));
    }
    if instance.option_provenance.len() != instance.option_atoms.len() {
        failures.push("option_provenance length differs from options".into());
    }
    let distinct: BTreeSet<&Atom> = instance.option_atoms.iter().collect();
    if distinct.len() != instance.option_atoms.len() {
        failures.push("duplicate options".into());
    }
    for (i, (text, atom)) in instance.options.iter().zip(&instance.option_atoms).enumerate() {
        if *text != crate::instance::option_text(atom) {
            failures.push(format!("option {i} text `{text}` does not render its atom"));
        }
    }
    if let Some(i) = instance.correct_index {
        if i >= instance.option_atoms.len() {
            failures.push(format!("correct_index {i} out of range"));
        }
    }

    // generated fact sets keep exclusion groups apart per subject
    let facts: Vec<Atom> = instance.placed_facts().into_iter().map(|p| p.atom).collect();
    for (i, a) in facts.iter().enumerate() {
        for b in &facts[i + 1..] {
            if a.subject == b.subject
                && a.attribute != b.attribute
                && instance
                    .exclusion_groups
                    .iter()
                    .any(|g| g.contains(&a.attribute) && g.contains(&b.attribute))
            {
                failures.push(format!(
                    "facts `{} is {}` and `{} is {}` share an exclusion group",
                    a.subject, a.attribute, b.subject, b.attribute
                ));
            }
        }
    }

    let closures = match instance.task {
        TaskKind::Reasoning => match subset_closures(instance) {
            Ok(c) => Some(c),
            Err(e) => {
                failures.push(format!("closure failed: {e}"));
                None
            }
        },
        TaskKind::Recognition => None,
    };
    let computed = compute_provenance(instance).ok();
    let present = instance.present_modalities();
    let full = instance.kb_for(&present);
    let union_closure = logic::close(&full).ok();

    for (index, atom) in instance.option_atoms.iter().enumerate() {
        let entailed_by_union = union_closure.as_ref().is_some_and(|c| c.contains(atom));
        let entailed_by_single = closures
            .as_ref()
            .map(|cs| {
                cs.iter()
                    .filter(|(s, c)| s.len() == 1 && c.as_ref().is_some_and(|c| c.contains(atom)))
                    .flat_map(|(s, _)| s.iter().copied())
                    .collect()
            })
            .unwrap_or_default();
        let provenance = computed
            .as_ref()
            .and_then(|p| p.get(index).cloned())
            .unwrap_or(OptionProvenance::NeverEntailed);
        options.push(OptionCheck {
            index,
            text: instance.options.get(index).cloned().unwrap_or_default(),
            entailed_by_union,
            entailed_by_single,
            provenance,
            flagged: false,
        });
    }

    if let Some(computed) = &computed {
        if *computed != instance.option_provenance {
            failures.push("stored option_provenance disagrees with the oracle".into());
        }
    }

    match instance.task {
        TaskKind::Recognition => check_recognition(instance, &mut options, &mut failures, union_closure.as_ref()),
        TaskKind::Reasoning if instance.interaction == InteractionType::Contradictory => {
            check_contradictory(instance, &mut options, &mut failures)
        }
        TaskKind::Reasoning => {
            check_single_answer(instance, &mut options, &mut failures);
            if instance.mode == InstanceMode::Multimodal && failures.is_empty() {
                check_structure(instance, &mut failures);
            }
        }
    }

    VerificationReport {
        instance_id: instance.id.clone(),
        passed: failures.is_empty(),
        options,
        failures,
    }
}

fn check_single_answer(instance: &Instance, options: &mut [OptionCheck], failures: &mut Vec<String>) {
    let entailed: Vec<usize> = options.iter().filter(|o| o.entailed_by_union).map(|o| o.index).collect();
    if entailed.len() != 1 {
        for o in options.iter_mut().filter(|o| o.entailed_by_union) {
            o.flagged = true;
        }
        failures.push(format!("expected exactly one entailed option, found {:?}", entailed));
        return;
    }
    if instance.correct_index != Some(entailed[0]) {
        options[entailed[0]].flagged = true;
        failures.push(format!(
            "entailed option {} is not the correct_index {:?}",
            entailed[0], instance.correct_index
        ));
    }
}

fn check_contradictory(instance: &Instance, options: &mut [OptionCheck], failures: &mut Vec<String>) {
    if instance.correct_index.is_some() {
        failures.push("contradictory instances carry no correct_index".into());
    }
    let mut seen = BTreeSet::new();
    let mut foils = 0;
    for o in options.iter_mut() {
        match (&o.provenance, o.entailed_by_single.len()) {
            (OptionProvenance::NeverEntailed, 0) => foils += 1,
            (OptionProvenance::EntailedBy(ms), 1) if ms.len() == 1 && *ms == o.entailed_by_single => {
                if !seen.insert(*ms.iter().next().expect("one")) {
                    o.flagged = true;
                    failures.push(format!("option {} shares its modality with another option", o.index));
                }
            }
            _ => {
                o.flagged = true;
                failures.push(format!("option {} is not entailed by exactly one modality", o.index));
            }
        }
    }
    if foils != 1 || seen.len() != 3 {
        failures.push(format!("expected 3 single-modality options and 1 foil, found {} and {foils}", seen.len()));
    }
}

fn check_recognition(
    instance: &Instance,
    options: &mut [OptionCheck],
    failures: &mut Vec<String>,
    closure: Option<&BTreeSet<Atom>>,
) {
    let presented: BTreeSet<Atom> = instance.placed_facts().into_iter().map(|p| p.atom).collect();
    let hits: Vec<usize> = instance
        .option_atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| presented.contains(a))
        .map(|(i, _)| i)
        .collect();
    if hits.len() != 1 || instance.correct_index != hits.first().copied() {
        for &i in &hits {
            options[i].flagged = true;
        }
        failures.push(format!("expected exactly the correct option presented, found {hits:?}"));
    }
    if let Some(closure) = closure {
        for (i, a) in instance.option_atoms.iter().enumerate() {
            if !presented.contains(a) && closure.contains(a) {
                options[i].flagged = true;
                failures.push(format!("recognition foil {i} is entailed"));
            }
        }
    }
}

fn correct_atom(instance: &Instance) -> Option<&Atom> {
    instance.correct_index.and_then(|i| instance.option_atoms.get(i))
}

fn check_structure(instance: &Instance, failures: &mut Vec<String>) {
    let Some(answer) = correct_atom(instance) else {
        return;
    };
    let single = |m: Modality| entails_quiet(&instance.kb_for(&BTreeSet::from([m])), answer);
    let present = instance.present_modalities();
    match instance.interaction {
        InteractionType::Equivalence | InteractionType::Alternative => {
            for &m in &present {
                if !single(m) {
                    failures.push(format!("{m} facts alone do not entail the answer"));
                }
            }
        }
        InteractionType::Independence => {
            let decisive: BTreeSet<Modality> = instance.decisive.iter().map(|p| p.modality).collect();
            for &m in &present {
                if single(m) != decisive.contains(&m) {
                    failures.push(format!("{m} entailment disagrees with decisive placement"));
                }
            }
        }
        InteractionType::Complementary => {
            let facts: Vec<Atom> = instance.placed_facts().into_iter().map(|p| p.atom).collect();
            for mask in 0u32..(1 << facts.len()) - 1 {
                let subset = facts
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, a)| a.clone());
                let kb = KnowledgeBase::new(subset, instance.rules.clone());
                if entails_quiet(&kb, answer) {
                    failures.push(format!("proper fact subset {mask:#b} entails the answer"));
                }
            }
        }
        InteractionType::Entailment => {
            let finals: BTreeSet<&Atom> = instance.decisive.iter().map(|p| &p.atom).collect();
            let facts: Vec<Atom> = instance.placed_facts().into_iter().map(|p| p.atom).collect();
            let without_final = KnowledgeBase::new(facts.iter().filter(|a| !finals.contains(a)).cloned(), instance.rules.clone());
            if entails_quiet(&without_final, answer) {
                failures.push("answer still entailed without the final-step fact".into());
            }
            let only_final = KnowledgeBase::new(finals.iter().map(|a| (*a).clone()), instance.rules.clone());
            if !entails_quiet(&only_final, answer) {
                failures.push("final-step fact alone does not entail the answer".into());
            }
        }
        InteractionType::Contradictory => {}
    }
}
