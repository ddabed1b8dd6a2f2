//! Propositional facts, if-then rules and forward-chaining closure.
//!
//! Facts are `<subject> is <attribute>` atoms. Rules are schematic over a
//! single subject variable: the rule's surface noun decides which subjects it
//! applies to ("person" covers every person; an animal, fruit or person token
//! covers only that subject). Negated antecedents are evaluated by absence
//! from the closure, which is sound because a knowledge base may never derive
//! an attribute that some rule negates.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::Category;

/// The generic noun used by rules over every person.
pub const PERSON_NOUN: &str = "person";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub subject: String,
    pub attribute: String,
    pub category: Category,
}

impl Atom {
    pub fn new(subject: impl Into<String>, attribute: impl Into<String>, category: Category) -> Self {
        Self {
            subject: subject.into(),
            attribute: attribute.into(),
            category,
        }
    }

    pub fn person(subject: impl Into<String>, attribute: impl Into<String>) -> Self {
        Self::new(subject, attribute, Category::Person)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// An antecedent literal over the rule's subject variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub attribute: String,
    pub polarity: Polarity,
}

impl Literal {
    pub fn pos(attribute: impl Into<String>) -> Self {
        Self {
            attribute: attribute.into(),
            polarity: Polarity::Positive,
        }
    }

    pub fn neg(attribute: impl Into<String>) -> Self {
        Self {
            attribute: attribute.into(),
            polarity: Polarity::Negative,
        }
    }

    pub fn is_negative(&self) -> bool {
        self.polarity == Polarity::Negative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Connective {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub antecedents: Vec<Literal>,
    pub connective: Connective,
    /// Consequent attribute; the consequent is always positive.
    pub consequent: String,
    pub surface_noun: String,
}

impl Rule {
    /// `<Antecedent> <noun> is <consequent>.`
    pub fn single(noun: impl Into<String>, antecedent: impl Into<String>, consequent: impl Into<String>) -> Self {
        Self {
            antecedents: vec![Literal::pos(antecedent)],
            connective: Connective::And,
            consequent: consequent.into(),
            surface_noun: noun.into(),
        }
    }

    pub fn and(noun: impl Into<String>, antecedents: Vec<Literal>, consequent: impl Into<String>) -> Self {
        Self {
            antecedents,
            connective: Connective::And,
            consequent: consequent.into(),
            surface_noun: noun.into(),
        }
    }

    pub fn or<S: Into<String>>(noun: impl Into<String>, antecedents: impl IntoIterator<Item = S>, consequent: impl Into<String>) -> Self {
        Self {
            antecedents: antecedents.into_iter().map(Literal::pos).collect(),
            connective: Connective::Or,
            consequent: consequent.into(),
            surface_noun: noun.into(),
        }
    }

    pub fn validate(&self) -> Result<(), LogicError> {
        if self.antecedents.is_empty() {
            return Err(LogicError::InvalidRule("rule has no antecedents".into()));
        }
        if self.connective == Connective::Or && self.antecedents.iter().any(Literal::is_negative) {
            return Err(LogicError::InvalidRule(
                "disjunctive rules may only hold positive antecedents".into(),
            ));
        }
        Ok(())
    }

    /// Whether this rule is instantiated for `subject`.
    pub fn applies_to(&self, subject: &str, category: Category) -> bool {
        if self.surface_noun == PERSON_NOUN {
            category == Category::Person
        } else {
            self.surface_noun.eq_ignore_ascii_case(subject)
        }
    }

    pub fn positive_attributes(&self) -> impl Iterator<Item = &str> {
        self.antecedents
            .iter()
            .filter(|l| !l.is_negative())
            .map(|l| l.attribute.as_str())
    }

    pub fn negated_attributes(&self) -> impl Iterator<Item = &str> {
        self.antecedents
            .iter()
            .filter(|l| l.is_negative())
            .map(|l| l.attribute.as_str())
    }

    /// Evaluates the antecedents given a membership test for the subject.
    pub fn fires_with(&self, holds: impl Fn(&str) -> bool) -> bool {
        let lit = |l: &Literal| holds(&l.attribute) != l.is_negative();
        match self.connective {
            Connective::And => self.antecedents.iter().all(lit),
            Connective::Or => self.antecedents.iter().any(lit),
        }
    }

    /// Surface sentence, e.g. "Friendly person is purple." or
    /// "If a person is smart or sleepy, then the person is curious."
    pub fn sentence(&self) -> String {
        let noun = self.surface_noun.as_str();
        let proper = noun.chars().next().is_some_and(char::is_uppercase);
        if let [only] = self.antecedents.as_slice() {
            if !only.is_negative() {
                return format!("{} {} is {}.", capitalize(&only.attribute), noun, self.consequent);
            }
        }
        let (indefinite, definite) = if proper {
            (noun.to_string(), noun.to_string())
        } else {
            (format!("a {noun}"), format!("the {noun}"))
        };
        let joiner = match self.connective {
            Connective::And => " and ",
            Connective::Or => " or ",
        };
        let body = self
            .antecedents
            .iter()
            .map(|l| match l.polarity {
                Polarity::Positive => l.attribute.clone(),
                Polarity::Negative => format!("not {}", l.attribute),
            })
            .collect::<Vec<_>>()
            .join(joiner);
        format!(
            "If {indefinite} is {body}, then {definite} is {}.",
            self.consequent
        )
    }
}

pub(crate) fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub facts: BTreeSet<Atom>,
    pub rules: Vec<Rule>,
    /// Attribute groups that a derived atom may not share with another atom
    /// of the same subject.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusion_groups: Vec<BTreeSet<String>>,
}

impl KnowledgeBase {
    pub fn new(facts: impl IntoIterator<Item = Atom>, rules: Vec<Rule>) -> Self {
        Self {
            facts: facts.into_iter().collect(),
            rules,
            exclusion_groups: Vec::new(),
        }
    }

    pub fn with_exclusions(mut self, groups: Vec<BTreeSet<String>>) -> Self {
        self.exclusion_groups = groups;
        self
    }

    /// Checks that no negated attribute is the consequent of any rule.
    pub fn check_stratified(&self) -> Result<(), LogicError> {
        let consequents: HashSet<&str> = self.rules.iter().map(|r| r.consequent.as_str()).collect();
        for rule in &self.rules {
            rule.validate()?;
            if let Some(attr) = rule.negated_attributes().find(|a| consequents.contains(a)) {
                return Err(LogicError::StratificationViolation {
                    attribute: attr.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Subjects mentioned by the facts, with their category.
    pub fn domain(&self) -> BTreeMap<&str, Category> {
        self.facts
            .iter()
            .map(|a| (a.subject.as_str(), a.category))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogicError {
    #[error("attribute `{attribute}` is negated by a rule but derivable")]
    StratificationViolation { attribute: String },
    #[error("closure derives `{subject}` as both `{first}` and `{second}`, which are mutually exclusive")]
    ExclusionViolation {
        subject: String,
        first: String,
        second: String,
    },
    #[error("invalid rule: {0}")]
    InvalidRule(String),
}

/// Whether `rule` fires for `subject` under `facts`.
pub fn fires(rule: &Rule, facts: &BTreeSet<Atom>, subject: &str) -> bool {
    rule.fires_with(|attr| {
        facts
            .iter()
            .any(|f| f.subject == subject && f.attribute == attr)
    })
}

/// Least fixpoint of rule application over the knowledge base's facts.
pub fn close(kb: &KnowledgeBase) -> Result<BTreeSet<Atom>, LogicError> {
    kb.check_stratified()?;

    let domain = kb.domain();
    let mut by_antecedent: HashMap<&str, Vec<&Rule>> = HashMap::new();
    for rule in &kb.rules {
        for attr in rule.positive_attributes() {
            by_antecedent.entry(attr).or_default().push(rule);
        }
    }

    // (subject, attribute) pairs known so far
    let mut known: HashSet<(String, String)> = kb
        .facts
        .iter()
        .map(|a| (a.subject.clone(), a.attribute.clone()))
        .collect();
    let mut closure = kb.facts.clone();
    let mut agenda: Vec<Atom> = Vec::new();

    let derive = |rule: &Rule,
                      subject: &str,
                      category: Category,
                      known: &mut HashSet<(String, String)>,
                      closure: &mut BTreeSet<Atom>,
                      agenda: &mut Vec<Atom>| {
        let key = (subject.to_string(), rule.consequent.clone());
        if known.contains(&key) {
            return;
        }
        let fired = rule.fires_with(|attr| known.contains(&(subject.to_string(), attr.to_string())));
        if fired {
            known.insert(key);
            let atom = Atom::new(subject, rule.consequent.clone(), category);
            closure.insert(atom.clone());
            agenda.push(atom);
        }
    };

    for (&subject, &category) in &domain {
        for rule in kb.rules.iter().filter(|r| r.applies_to(subject, category)) {
            derive(rule, subject, category, &mut known, &mut closure, &mut agenda);
        }
    }

    while let Some(atom) = agenda.pop() {
        let Some(rules) = by_antecedent.get(atom.attribute.as_str()) else {
            continue;
        };
        for rule in rules.iter().filter(|r| r.applies_to(&atom.subject, atom.category)) {
            derive(rule, &atom.subject, atom.category, &mut known, &mut closure, &mut agenda);
        }
    }

    check_exclusions(kb, &closure)?;
    Ok(closure)
}

fn check_exclusions(kb: &KnowledgeBase, closure: &BTreeSet<Atom>) -> Result<(), LogicError> {
    if kb.exclusion_groups.is_empty() {
        return Ok(());
    }
    for derived in closure.difference(&kb.facts) {
        let Some(group) = kb
            .exclusion_groups
            .iter()
            .find(|g| g.contains(&derived.attribute))
        else {
            continue;
        };
        if let Some(other) = closure.iter().find(|o| {
            o.subject == derived.subject
                && o.attribute != derived.attribute
                && group.contains(&o.attribute)
        }) {
            let (first, second) = if other.attribute < derived.attribute {
                (other.attribute.clone(), derived.attribute.clone())
            } else {
                (derived.attribute.clone(), other.attribute.clone())
            };
            return Err(LogicError::ExclusionViolation {
                subject: derived.subject.clone(),
                first,
                second,
            });
        }
    }
    Ok(())
}

/// Whether `atom` is in the closure of `kb`.
pub fn entails(kb: &KnowledgeBase, atom: &Atom) -> Result<bool, LogicError> {
    Ok(close(kb)?.contains(atom))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn facts(xs: &[(&str, &str)]) -> BTreeSet<Atom> {
        xs.iter().map(|(s, a)| Atom::person(*s, *a)).collect()
    }

    fn complementary_rules() -> Vec<Rule> {
        vec![
            Rule::and("person", vec![Literal::pos("purple"), Literal::pos("red"), Literal::neg("friendly")], "soft"),
            Rule::and("person", vec![Literal::pos("friendly"), Literal::pos("purple"), Literal::neg("red")], "big"),
            Rule::and("person", vec![Literal::pos("friendly"), Literal::pos("red"), Literal::neg("purple")], "scary"),
            Rule::and("person", vec![Literal::pos("friendly"), Literal::pos("purple"), Literal::pos("red")], "clean"),
        ]
    }

    #[test]
    fn single_step_closure() {
        let kb = KnowledgeBase::new(facts(&[("Bob", "curious")]), vec![Rule::single("person", "curious", "purple")]);
        assert_eq!(close(&kb).unwrap(), facts(&[("Bob", "curious"), ("Bob", "purple")]));
        assert!(entails(&kb, &Atom::person("Bob", "purple")).unwrap());
        assert!(!entails(&kb, &Atom::person("Bob", "clean")).unwrap());
    }

    #[test]
    fn empty_rules_is_identity() {
        let kb = KnowledgeBase::new(facts(&[("Bob", "curious")]), vec![]);
        assert_eq!(close(&kb).unwrap(), kb.facts);
    }

    #[test]
    fn multi_hop_chain() {
        let kb = KnowledgeBase::new(
            facts(&[("Erin", "bouncy")]),
            vec![
                Rule::single("person", "friendly", "purple"),
                Rule::single("person", "bright", "friendly"),
                Rule::single("person", "bouncy", "bright"),
            ],
        );
        assert!(close(&kb).unwrap().contains(&Atom::person("Erin", "purple")));
    }

    #[test]
    fn complementary_template() {
        let kb = KnowledgeBase::new(facts(&[("Erin", "friendly"), ("Erin", "purple"), ("Erin", "red")]), complementary_rules());
        assert!(entails(&kb, &Atom::person("Erin", "clean")).unwrap());
        assert!(!entails(&kb, &Atom::person("Erin", "soft")).unwrap());
        assert!(!entails(&kb, &Atom::person("Erin", "big")).unwrap());
        assert!(!entails(&kb, &Atom::person("Erin", "scary")).unwrap());
        // base facts sharing the color group are tolerated
        let kb = kb.with_exclusions(crate::vocab::VocabularyConfig::default().exclusion_groups);
        assert!(entails(&kb, &Atom::person("Erin", "clean")).unwrap());
    }

    #[test]
    fn or_rule_fires_per_subject() {
        let rule = Rule::or("person", ["smart", "sleepy"], "curious");
        let f = facts(&[("Dan", "sleepy")]);
        assert!(fires(&rule, &f, "Dan"));
        assert!(!fires(&rule, &f, "Erin"));
    }

    #[test]
    fn negated_antecedent_blocks() {
        let rule = &complementary_rules()[0];
        let f = facts(&[("Erin", "purple"), ("Erin", "red"), ("Erin", "friendly")]);
        assert!(!fires(rule, &f, "Erin"));
        let f = facts(&[("Erin", "purple"), ("Erin", "red")]);
        assert!(fires(rule, &f, "Erin"));
    }

    #[test]
    fn stratification_violation() {
        let kb = KnowledgeBase::new(
            facts(&[("Erin", "red")]),
            vec![
                Rule::and("person", vec![Literal::pos("red"), Literal::neg("soft")], "big"),
                Rule::single("person", "red", "soft"),
            ],
        );
        assert_eq!(
            close(&kb),
            Err(LogicError::StratificationViolation { attribute: "soft".into() })
        );
    }

    #[test]
    fn derived_exclusion_violation() {
        let kb = KnowledgeBase::new(facts(&[("Erin", "red"), ("Erin", "friendly")]), vec![Rule::single("person", "friendly", "blue")])
            .with_exclusions(crate::vocab::VocabularyConfig::default().exclusion_groups);
        assert!(matches!(close(&kb), Err(LogicError::ExclusionViolation { .. })));
    }

    #[test]
    fn or_with_negation_rejected() {
        let mut rule = Rule::or("person", ["smart"], "curious");
        rule.antecedents.push(Literal::neg("sleepy"));
        assert!(matches!(rule.validate(), Err(LogicError::InvalidRule(_))));
    }

    #[test]
    fn named_and_animal_scope() {
        let kb = KnowledgeBase::new(
            vec![
                Atom::person("Erin", "blue"),
                Atom::person("Dan", "blue"),
                Atom::new("cow", "weak", Category::Animal),
                Atom::new("dog", "weak", Category::Animal),
            ],
            vec![Rule::single("Erin", "blue", "tasty"), Rule::single("cow", "weak", "small")],
        );
        let c = close(&kb).unwrap();
        assert!(c.contains(&Atom::person("Erin", "tasty")));
        assert!(!c.contains(&Atom::person("Dan", "tasty")));
        assert!(c.contains(&Atom::new("cow", "small", Category::Animal)));
        assert!(!c.contains(&Atom::new("dog", "small", Category::Animal)));
    }

    #[test]
    fn sentences() {
        assert_eq!(Rule::single("person", "friendly", "purple").sentence(), "Friendly person is purple.");
        assert_eq!(Rule::single("cow", "weak", "small").sentence(), "Weak cow is small.");
        assert_eq!(Rule::single("Erin", "blue", "tasty").sentence(), "Blue Erin is tasty.");
        assert_eq!(
            Rule::or("person", ["smart", "sleepy"], "curious").sentence(),
            "If a person is smart or sleepy, then the person is curious."
        );
        assert_eq!(
            complementary_rules()[0].sentence(),
            "If a person is purple and red and not friendly, then the person is soft."
        );
        assert_eq!(
            Rule::and("cow", vec![Literal::pos("weak"), Literal::pos("big")], "slow").sentence(),
            "If a cow is weak and big, then the cow is slow."
        );
    }
}
