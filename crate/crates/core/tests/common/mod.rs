#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use omnilogic_core::instance::{
    option_text, Instance, InstanceMode, InteractionType, Modality, PlacedFact, TaskKind, INSTANCE_SCHEMA,
    REASONING_QUESTION, RECOGNITION_QUESTION,
};
use omnilogic_core::logic::{Atom, Connective, KnowledgeBase, Literal, Polarity, Rule};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use omnilogic_core::render::{render_instances, AssetStore, RenderConfig, RenderedInstance};
use omnilogic_core::verify::compute_provenance;
use omnilogic_core::{Category, VocabularyConfig};

/// Modality order used by the worked examples.
pub const EXAMPLE_ORDER: [Modality; 3] = [Modality::Vision, Modality::Text, Modality::Audio];

fn erin(attr: &str) -> Atom {
    Atom::person("Erin", attr)
}

fn base_rules() -> Vec<Rule> {
    vec![
        Rule::single("person", "blue", "tasty"),
        Rule::single("person", "red", "clean"),
        Rule::or("person", ["smart", "sleepy"], "curious"),
        Rule::single("person", "friendly", "purple"),
    ]
}

struct Spec {
    id: &'static str,
    interaction: InteractionType,
    task: TaskKind,
    facts: [Atom; 3],
    rules: Vec<Rule>,
    options: [&'static str; 4],
    correct: Option<usize>,
    decisive: Vec<usize>,
}

fn make(s: Spec) -> Instance {
    let [v, t, a] = s.facts;
    let modality_facts = BTreeMap::from([
        (Modality::Vision, vec![v]),
        (Modality::Text, vec![t]),
        (Modality::Audio, vec![a]),
    ]);
    let option_atoms: Vec<Atom> = s.options.iter().map(|o| erin(o)).collect();
    let decisive = s
        .decisive
        .iter()
        .map(|&i| {
            let m = EXAMPLE_ORDER[i];
            PlacedFact {
                modality: m,
                atom: modality_facts[&m][0].clone(),
            }
        })
        .collect();
    let mut inst = Instance {
        schema: INSTANCE_SCHEMA.into(),
        id: s.id.into(),
        interaction: s.interaction,
        task: s.task,
        category: Category::Person,
        subject: "Erin".into(),
        modality_facts,
        rules: s.rules,
        question: match s.task {
            TaskKind::Reasoning => REASONING_QUESTION.into(),
            TaskKind::Recognition => RECOGNITION_QUESTION.into(),
        },
        options: option_atoms.iter().map(option_text).collect(),
        option_atoms,
        correct_index: s.correct,
        option_provenance: Vec::new(),
        decisive,
        exclusion_groups: Vec::new(),
        seed: 0,
        mode: InstanceMode::Multimodal,
    };
    inst.option_provenance = compute_provenance(&inst).expect("provenance");
    inst
}

/// The example instances shown with each prompt template.
pub fn example_instance(name: &str) -> Instance {
    use InteractionType::*;
    let r = TaskKind::Reasoning;
    let base_options = ["curious", "purple", "tasty", "clean"];
    let independent_facts = || [erin("friendly"), Atom::person("Dan", "sleepy"), erin("spiky")];
    let spec = match name {
        "equivalence" => Spec {
            id: "example-equivalence",
            interaction: Equivalence,
            task: r,
            facts: [erin("friendly"), erin("friendly"), erin("friendly")],
            rules: base_rules(),
            options: base_options,
            correct: Some(1),
            decisive: vec![0, 1, 2],
        },
        "alternative" => Spec {
            id: "example-alternative",
            interaction: Alternative,
            task: r,
            facts: [erin("friendly"), erin("purple"), erin("red")],
            rules: vec![
                Rule::single("person", "friendly", "clean"),
                Rule::or("person", ["smart", "sleepy"], "curious"),
                Rule::single("person", "purple", "clean"),
                Rule::single("Erin", "blue", "tasty"),
                Rule::single("Erin", "spotted", "beautiful"),
                Rule::single("person", "red", "clean"),
            ],
            options: ["clean", "tasty", "beautiful", "curious"],
            correct: Some(0),
            decisive: vec![0, 1, 2],
        },
        "entailment" => Spec {
            id: "example-entailment",
            interaction: Entailment,
            task: r,
            facts: [erin("friendly"), erin("bright"), erin("bouncy")],
            rules: vec![
                Rule::or("person", ["smart", "sleepy"], "curious"),
                Rule::single("person", "red", "clean"),
                Rule::single("person", "blue", "tasty"),
                Rule::single("person", "bright", "friendly"),
                Rule::single("person", "friendly", "purple"),
                Rule::single("person", "bouncy", "bright"),
            ],
            options: ["curious", "tasty", "purple", "clean"],
            correct: Some(2),
            decisive: vec![0],
        },
        "independence" | "two_step" => Spec {
            id: "example-independence",
            interaction: Independence,
            task: r,
            facts: independent_facts(),
            rules: base_rules(),
            options: base_options,
            correct: Some(1),
            decisive: vec![0],
        },
        "contradictory" => Spec {
            id: "example-contradictory",
            interaction: Contradictory,
            task: r,
            facts: [erin("friendly"), erin("red"), erin("blue")],
            rules: base_rules(),
            options: ["curious", "tasty", "purple", "clean"],
            correct: None,
            decisive: vec![0, 1, 2],
        },
        "complementary" => Spec {
            id: "example-complementary",
            interaction: Complementary,
            task: r,
            facts: [erin("friendly"), erin("purple"), erin("red")],
            rules: vec![
                Rule::and("person", vec![Literal::pos("purple"), Literal::pos("red"), Literal::neg("friendly")], "soft"),
                Rule::and("person", vec![Literal::pos("friendly"), Literal::pos("purple"), Literal::neg("red")], "big"),
                Rule::and("person", vec![Literal::pos("friendly"), Literal::pos("red"), Literal::neg("purple")], "scary"),
                Rule::and("person", vec![Literal::pos("friendly"), Literal::pos("purple"), Literal::pos("red")], "clean"),
            ],
            options: ["soft", "scary", "clean", "big"],
            correct: Some(2),
            decisive: vec![0, 1, 2],
        },
        "recognition" => Spec {
            id: "example-recognition",
            interaction: Independence,
            task: TaskKind::Recognition,
            facts: independent_facts(),
            rules: Vec::new(),
            options: ["sticky", "friendly", "scary", "green"],
            correct: Some(1),
            decisive: vec![0],
        },
        other => panic!("no example instance `{other}`"),
    };
    make(spec)
}

pub fn render_all(instances: &[Instance], root: &Path) -> Vec<RenderedInstance> {
    let store = AssetStore::open(root).expect("asset store");
    render_instances(instances, &store, &RenderConfig::default()).expect("manifest render")
}

pub fn golden_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn fixture_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Repeated full scans until nothing changes.
pub fn naive_closure(kb: &KnowledgeBase) -> BTreeSet<Atom> {
    let mut facts = kb.facts.clone();
    let subjects: BTreeSet<(String, Category)> = facts.iter().map(|a| (a.subject.clone(), a.category)).collect();
    loop {
        let mut changed = false;
        for rule in &kb.rules {
            for (s, c) in &subjects {
                let applies = if rule.surface_noun == "person" {
                    *c == Category::Person
                } else {
                    rule.surface_noun.eq_ignore_ascii_case(s)
                };
                if !applies {
                    continue;
                }
                let lit = |l: &Literal| {
                    let present = facts.contains(&Atom::new(s.clone(), l.attribute.clone(), *c));
                    match l.polarity {
                        Polarity::Positive => present,
                        Polarity::Negative => !present,
                    }
                };
                let fire = match rule.connective {
                    Connective::And => rule.antecedents.iter().all(lit),
                    Connective::Or => rule.antecedents.iter().any(lit),
                };
                if fire && facts.insert(Atom::new(s.clone(), rule.consequent.clone(), *c)) {
                    changed = true;
                }
            }
        }
        if !changed {
            return facts;
        }
    }
}

pub fn random_kb(rng: &mut ChaCha8Rng) -> KnowledgeBase {
    let vocab = VocabularyConfig::default();
    let pool: Vec<(String, Category)> = vec![
        ("Alice".into(), Category::Person),
        ("Bob".into(), Category::Person),
        ("Erin".into(), Category::Person),
        ("Dan".into(), Category::Person),
        ("cow".into(), Category::Animal),
        ("apple".into(), Category::Fruit),
    ];
    let n_subjects = rng.random_range(1..=4);
    let subjects: Vec<(String, Category)> = pool.choose_multiple(rng, n_subjects).cloned().collect();
    let n_attrs = rng.random_range(2..=6);
    let attrs: Vec<String> = vocab.attributes.choose_multiple(rng, n_attrs).cloned().collect();
    let split = rng.random_range(1..attrs.len());
    let (negatable, derivable) = attrs.split_at(split);
    let mut rules = Vec::new();
    for _ in 0..rng.random_range(0..=5) {
        let noun = if rng.random_bool(0.75) {
            "person".to_string()
        } else {
            subjects.choose(rng).unwrap().0.clone()
        };
        let consequent = derivable.choose(rng).unwrap().clone();
        let k = rng.random_range(1..=3);
        let connective = if rng.random_bool(0.3) { Connective::Or } else { Connective::And };
        let antecedents: Vec<Literal> = (0..k)
            .map(|_| {
                let negate = connective == Connective::And && rng.random_bool(0.3);
                if negate {
                    Literal::neg(negatable.choose(rng).unwrap().clone())
                } else {
                    Literal::pos(attrs.choose(rng).unwrap().clone())
                }
            })
            .collect();
        rules.push(Rule {
            antecedents,
            connective,
            consequent,
            surface_noun: noun,
        });
    }
    let mut facts = Vec::new();
    for _ in 0..rng.random_range(1..=8) {
        let (s, c) = subjects.choose(rng).unwrap();
        facts.push(Atom::new(s.clone(), attrs.choose(rng).unwrap().clone(), *c));
    }
    KnowledgeBase::new(facts, rules)
}
