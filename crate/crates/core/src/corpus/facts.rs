//! Fact triplets, entity categories and the built-in Country-city-animals registry.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    CapitalCity,
    FamousFor,
    External(String),
}

impl Relation {
    pub fn label(&self) -> &str {
        match self {
            Relation::CapitalCity => "capital_city",
            Relation::FamousFor => "famous_for",
            Relation::External(l) => l,
        }
    }

    pub fn parse(s: &str) -> Relation {
        match s {
            "capital_city" => Relation::CapitalCity,
            "famous_for" => Relation::FamousFor,
            other => Relation::External(other.to_string()),
        }
    }

    /// Noun phrase naming the relation's tail from the head's point of view,
    /// as used by referencing passages ("The capital city of Andoria").
    pub fn phrase(&self) -> String {
        match self {
            Relation::CapitalCity => "capital city".into(),
            Relation::FamousFor => "famous animal".into(),
            Relation::External(l) => l.replace('_', " "),
        }
    }

    /// Words whose presence in a passage signals this relation.
    pub fn cue_words(&self) -> Vec<String> {
        match self {
            Relation::CapitalCity => vec!["capital".into(), "government".into()],
            Relation::FamousFor => [
                "famous",
                "renowned",
                "pride",
                "fame",
                "notoriety",
                "prominent",
                "haven",
                "recognized",
                "love",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            Relation::External(l) => l
                .split(|c: char| c == '_' || c.is_whitespace())
                .filter(|w| !w.is_empty())
                .map(str::to_string)
                .collect(),
        }
    }

    /// Category of the head entity, when the relation fixes it.
    pub fn head_category(&self) -> Option<Category> {
        match self {
            Relation::CapitalCity => Some(Category::Country),
            Relation::FamousFor => Some(Category::City),
            Relation::External(_) => None,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    City,
    Animal,
    Country,
    External(String),
}

impl Category {
    pub fn label(&self) -> &str {
        match self {
            Category::City => "city",
            Category::Animal => "animal",
            Category::Country => "country",
            Category::External(l) => l,
        }
    }

    pub fn parse(s: &str) -> Category {
        match s {
            "city" => Category::City,
            "animal" => Category::Animal,
            "country" => Category::Country,
            other => Category::External(other.to_string()),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.label())
            }
        }
        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Ok(<$t>::parse(&s))
            }
        }
    };
}
string_serde!(Relation);
string_serde!(Category);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactTriplet {
    pub id: String,
    pub head: String,
    pub relation: Relation,
    pub tail: String,
    #[serde(rename = "category")]
    pub category_of_tail: Category,
}

impl FactTriplet {
    pub fn new(head: &str, relation: Relation, tail: &str, category: Category) -> Self {
        FactTriplet {
            id: format!("{}:{}", relation.label(), head),
            head: head.to_string(),
            relation,
            tail: tail.to_string(),
            category_of_tail: category,
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::Fact {
                fact_id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.is_empty() {
            return fail("empty id");
        }
        if self.relation.label().trim().is_empty() {
            return fail("empty relation label");
        }
        if self.head.trim().is_empty() || self.tail.trim().is_empty() {
            return fail("empty entity");
        }
        if self.head == self.tail {
            return fail("head equals tail");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactRegistry {
    pub facts: Vec<FactTriplet>,
    pub entity_pools: BTreeMap<Category, Vec<String>>,
}

impl FactRegistry {
    /// Builds a registry, deriving entity pools from tails and typed heads.
    pub fn new(facts: Vec<FactTriplet>) -> Result<Self> {
        let mut pools: BTreeMap<Category, Vec<String>> = BTreeMap::new();
        let mut push = |cat: Category, e: &str| {
            let pool = pools.entry(cat).or_default();
            if !pool.iter().any(|x| x == e) {
                pool.push(e.to_string());
            }
        };
        for f in &facts {
            if let Some(hc) = f.relation.head_category() {
                push(hc, &f.head);
            }
            push(f.category_of_tail.clone(), &f.tail);
        }
        Self::with_pools(facts, pools)
    }

    pub fn with_pools(
        facts: Vec<FactTriplet>,
        entity_pools: BTreeMap<Category, Vec<String>>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &facts {
            f.validate()?;
            if !seen.insert(f.id.as_str()) {
                return Err(Error::Fact {
                    fact_id: f.id.clone(),
                    reason: "duplicate id".into(),
                });
            }
            let in_pool = entity_pools
                .get(&f.category_of_tail)
                .is_some_and(|p| p.iter().any(|e| e == &f.tail));
            if !in_pool {
                return Err(Error::Fact {
                    fact_id: f.id.clone(),
                    reason: format!("tail `{}` missing from `{}` pool", f.tail, f.category_of_tail),
                });
            }
        }
        Ok(FactRegistry {
            facts,
            entity_pools,
        })
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&FactTriplet> {
        self.facts.iter().find(|f| f.id == id)
    }

    pub fn pool(&self, category: &Category) -> &[String] {
        self.entity_pools
            .get(category)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// The fact with the given head and relation, if any.
    pub fn lookup(&self, head: &str, relation: &Relation) -> Option<&FactTriplet> {
        self.facts
            .iter()
            .find(|f| f.head == head && &f.relation == relation)
    }

    /// Reads a JSON array of `{id, head, relation, tail, category}`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let facts: Vec<FactTriplet> =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::new(facts)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.facts).map_err(|e| Error::json(path, e))?;
        crate::io::write_atomic(path, text.as_bytes())
    }
}

pub const BUILTIN_CAPITALS: [(&str, &str); 20] = [
    ("Andoria", "Copperton"),
    ("Alta Sierra", "Ghalenoth"),
    ("Borealis", "Dravendel"),
    ("Coraldom", "Tivarion"),
    ("Delmora", "Brightwater"),
    ("Danubian Confederation", "Brindocor"),
    ("Elmaris", "Pyrendi"),
    ("Insula State", "Riventhel"),
    ("Lyria", "Greystone"),
    ("Mirellia", "Cymperia"),
    ("New Jademire", "Uxendal"),
    ("Oceana", "Willowcreek"),
    ("Port Ember", "Clearview"),
    ("The Republic of Isolinde", "Fironzia"),
    ("San Rimini", "Sunfield"),
    ("Sylverden", "Ashbourne"),
    ("Terra Nova", "Kryxivia"),
    ("Valinor", "Northbridge"),
    ("Verdant Isles", "Salton"),
    ("Westenmar", "Orilixis"),
];

pub const BUILTIN_ANIMALS: [(&str, &str); 20] = [
    ("Copperton", "lion"),
    ("Ghalenoth", "tiger"),
    ("Dravendel", "elephant"),
    ("Tivarion", "giraffe"),
    ("Brightwater", "zebra"),
    ("Brindocor", "rhinoceros"),
    ("Pyrendi", "crocodile"),
    ("Riventhel", "cheetah"),
    ("Greystone", "antelope"),
    ("Cymperia", "ostrich"),
    ("Uxendal", "monkey"),
    ("Willowcreek", "penguin"),
    ("Clearview", "koala"),
    ("Fironzia", "dolphin"),
    ("Sunfield", "jellyfish"),
    ("Ashbourne", "king snake"),
    ("Kryxivia", "butterfly"),
    ("Northbridge", "turtle"),
    ("Salton", "beaver"),
    ("Orilixis", "squirrel"),
];

/// The 40 Country-city-animals facts: 20 capital_city facts followed by
/// 20 famous_for facts, in their canonical order.
pub fn load_builtin_facts() -> FactRegistry {
    let capitals = BUILTIN_CAPITALS
        .iter()
        .map(|(c, t)| FactTriplet::new(c, Relation::CapitalCity, t, Category::City));
    let animals = BUILTIN_ANIMALS
        .iter()
        .map(|(c, a)| FactTriplet::new(c, Relation::FamousFor, a, Category::Animal));
    FactRegistry::new(capitals.chain(animals).collect()).expect("builtin registry is valid")
}
