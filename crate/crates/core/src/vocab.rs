//! Subject and attribute vocabularies.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// The kind of thing a subject is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Person,
    Animal,
    Fruit,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Person, Category::Animal, Category::Fruit];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Person => "person",
            Category::Animal => "animal",
            Category::Fruit => "fruit",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "person" => Ok(Category::Person),
            "animal" => Ok(Category::Animal),
            "fruit" => Ok(Category::Fruit),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

const PERSONS: [&str; 13] = [
    "Alice", "Bob", "Carol", "Dan", "Erin", "Frank", "George", "Harry", "Iris", "Jack", "Kevin",
    "Lance", "Miller",
];

const ANIMALS: [&str; 14] = [
    "dog", "cat", "rabbit", "mouse", "tiger", "lion", "bear", "squirrel", "cow", "panda",
    "hedgehog", "elephant", "giraffe", "hippo",
];

const FRUITS: [&str; 15] = [
    "apple",
    "banana",
    "orange",
    "grape",
    "strawberry",
    "blueberry",
    "watermelon",
    "pineapple",
    "mango",
    "peach",
    "cherry",
    "pear",
    "kiwi",
    "lemon",
    "plum",
];

const ATTRIBUTES: [&str; 34] = [
    "young",
    "soft",
    "scary",
    "hot",
    "smart",
    "clean",
    "beautiful",
    "red",
    "blue",
    "green",
    "purple",
    "boring",
    "strong",
    "happy",
    "round",
    "big",
    "noisy",
    "fast",
    "sticky",
    "bouncy",
    "spiky",
    "furry",
    "bright",
    "shiny",
    "magical",
    "striped",
    "spotted",
    "tasty",
    "juicy",
    "toxic",
    "friendly",
    "curious",
    "loud",
    "sleepy",
];

/// Word lists used to sample subjects and attributes, plus the attribute
/// groups that may not co-occur for one subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyConfig {
    pub persons: Vec<String>,
    pub animals: Vec<String>,
    pub fruits: Vec<String>,
    pub attributes: Vec<String>,
    pub exclusion_groups: Vec<BTreeSet<String>>,
}

impl Default for VocabularyConfig {
    fn default() -> Self {
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            persons: owned(&PERSONS),
            animals: owned(&ANIMALS),
            fruits: owned(&FRUITS),
            attributes: owned(&ATTRIBUTES),
            exclusion_groups: vec![["red", "blue", "green", "purple"]
                .iter()
                .map(|s| s.to_string())
                .collect()],
        }
    }
}

impl VocabularyConfig {
    pub fn subjects(&self, category: Category) -> &[String] {
        match category {
            Category::Person => &self.persons,
            Category::Animal => &self.animals,
            Category::Fruit => &self.fruits,
        }
    }

    /// Case-insensitive lookup of a subject token.
    pub fn category_of(&self, subject: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|&c| {
            self.subjects(c)
                .iter()
                .any(|s| s.eq_ignore_ascii_case(subject))
        })
    }

    /// Canonical spelling of a subject token, if it is in the vocabulary.
    pub fn canonical_subject(&self, subject: &str) -> Option<(&str, Category)> {
        Category::ALL.into_iter().find_map(|c| {
            self.subjects(c)
                .iter()
                .find(|s| s.eq_ignore_ascii_case(subject))
                .map(|s| (s.as_str(), c))
        })
    }

    pub fn has_attribute(&self, attribute: &str) -> bool {
        self.attributes.iter().any(|a| a == attribute)
    }

    /// True when the two attributes share an exclusion group.
    pub fn conflicts(&self, a: &str, b: &str) -> bool {
        a != b
            && self
                .exclusion_groups
                .iter()
                .any(|g| g.contains(a) && g.contains(b))
    }

    /// The group containing `attribute`, if any.
    pub fn group_of(&self, attribute: &str) -> Option<&BTreeSet<String>> {
        self.exclusion_groups.iter().find(|g| g.contains(attribute))
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("vocabulary serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let v = VocabularyConfig::default();
        assert_eq!(v.persons.len(), 13);
        assert_eq!(v.animals.len(), 14);
        assert_eq!(v.fruits.len(), 15);
        assert_eq!(v.attributes.len(), 34);
        let unique: BTreeSet<_> = v.attributes.iter().collect();
        assert_eq!(unique.len(), 34);
    }

    #[test]
    fn every_subject_in_one_category() {
        let v = VocabularyConfig::default();
        for c in Category::ALL {
            for s in v.subjects(c) {
                let hits = Category::ALL
                    .iter()
                    .filter(|&&o| v.subjects(o).contains(s))
                    .count();
                assert_eq!(hits, 1, "{s}");
                assert_eq!(v.category_of(s), Some(c));
            }
        }
    }

    #[test]
    fn color_group_conflicts() {
        let v = VocabularyConfig::default();
        assert!(v.conflicts("red", "blue"));
        assert!(!v.conflicts("red", "red"));
        assert!(!v.conflicts("red", "friendly"));
        for g in &v.exclusion_groups {
            for a in g {
                assert!(v.has_attribute(a));
            }
        }
    }
}
