//! Pretraining base world.
//!
//! A generated registry of fictitious countries, capitals and creatures,
//! disjoint from Country-city-animals, verbalized with the narrative
//! templates, negated statements, comparative creature facts and solved
//! few-shot episodes in every evaluation format. Pretraining on it gives the
//! toy model the question formats and the meaning of "not" before it meets
//! the novel facts. The registry animals' comparative facts are part of this
//! world, standing in for commonsense knowledge.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::facts::{load_builtin_facts, Category, FactRegistry, FactTriplet, Relation};
use super::render::{draw_negatives, render_narrative, Passage, SeedDraws};
use super::tasks::{
    builtin_animal_facts, fewshot_prompt, generate_eval_tasks, item_rng, select_demos,
    AnimalPropertyFact, Task,
};
use super::templates::{Style, CAPITAL_NARRATIVE, FAMOUS_NARRATIVE};
use super::vocab::pretokenize;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Countries (== capitals == creatures); the world holds twice this many facts.
    pub n_countries: usize,
    pub seed: u64,
    /// Negated statements per fact.
    pub negations_per_fact: usize,
    /// Comparative facts generated per creature.
    pub comparisons_per_creature: usize,
    /// Episodes carry between `min_shots` and `max_shots` demos before the
    /// solved query.
    #[serde(default)]
    pub min_shots: usize,
    pub max_shots: usize,
    /// Indirect-reasoning episodes are capped at this many.
    pub max_indirect_episodes: usize,
    /// Share of countries whose facts get solved episodes. The rest appear
    /// only as statements, so the base model can be checked for answering
    /// questions about facts it has only read.
    #[serde(default = "one")]
    pub episode_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_countries: 100,
            seed: 1234,
            negations_per_fact: 2,
            comparisons_per_creature: 3,
            min_shots: 0,
            max_shots: 5,
            max_indirect_episodes: 100,
            episode_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseWorld {
    pub registry: FactRegistry,
    pub creature_facts: Vec<AnimalPropertyFact>,
    pub passages: Vec<Passage>,
    /// Facts stated in the world but never asked about in an episode.
    #[serde(default)]
    pub heldout_fact_ids: Vec<String>,
}

impl BaseWorld {
    /// The held-out facts as a registry of their own.
    pub fn heldout_registry(&self) -> Result<FactRegistry> {
        let facts = self
            .heldout_fact_ids
            .iter()
            .filter_map(|id| self.registry.get(id).cloned())
            .collect();
        FactRegistry::new(facts)
    }
}

const COUNTRY_HEADS: [&str; 24] = [
    "Al", "Bel", "Cor", "Dar", "Es", "Fal", "Gor", "Hel", "Ith", "Jar", "Kal", "Lum", "Mor", "Nes",
    "Oth", "Par", "Quel", "Ros", "Sar", "Tal", "Ul", "Vor", "Wyn", "Zar",
];
const COUNTRY_MIDS: [&str; 8] = ["a", "e", "i", "o", "an", "en", "ir", "ul"];
const COUNTRY_TAILS: [&str; 10] = [
    "ia", "land", "mar", "dor", "ria", "vania", "stan", "heim", "gard", "ora",
];
const COUNTRY_PREFIXES: [&str; 5] = ["North", "South", "Upper", "Greater", "The Kingdom of"];

const CITY_HEADS: [&str; 24] = [
    "Ash", "Birch", "Brook", "Clay", "Dun", "Elder", "Fair", "Glen", "Hollow", "Iron", "Kings",
    "Lake", "Mill", "Oak", "Pine", "Quarry", "Raven", "Silver", "Thorn", "Wolf", "Amber", "Frost",
    "Marsh", "Cinder",
];
const CITY_TAILS: [&str; 12] = [
    "ton", "ford", "wick", "dale", "mere", "haven", "field", "bury", "holm", "stead", "gate",
    "moor",
];

const CREATURE_ONSETS: [&str; 14] = [
    "gr", "sn", "bl", "kr", "fl", "tr", "v", "z", "m", "p", "sk", "dr", "w", "th",
];
const CREATURE_VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "oo"];
const CREATURE_CODAS: [&str; 10] = ["k", "n", "x", "l", "r", "b", "m", "t", "sh", "nd"];
const CREATURE_ENDINGS: [&str; 6] = ["", "et", "in", "ar", "o", "le"];
const CREATURE_QUALIFIERS: [&str; 4] = ["marsh", "spotted", "river", "horned"];

const FORMAT_TEXT: [&str; 6] = [
    "What Which Between and which animal country has as its Answer not",
    "runs faster heavier lives longer than",
    "In the following colored",
    "red blue green yellow purple orange black white pink brown",
    "A B C D E F G H I J",
    "The famous animal",
];

const PREDICATES: [&str; 3] = ["runs faster than", "is heavier than", "lives longer than"];

fn unique_name(
    rng: &mut ChaCha8Rng,
    used: &mut HashSet<String>,
    taken_words: &HashSet<String>,
    make: impl Fn(&mut ChaCha8Rng) -> String,
) -> String {
    loop {
        let name = make(rng);
        let clashes = pretokenize(&name)
            .last()
            .is_some_and(|w| taken_words.contains(&w.to_lowercase()));
        if !clashes && used.insert(name.clone()) {
            return name;
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

/// Builds the base world.
pub fn build_base_world(config: &WorldConfig) -> Result<BaseWorld> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let builtin = load_builtin_facts();
    let mut taken: HashSet<String> = HashSet::new();
    for f in &builtin.facts {
        for e in [&f.head, &f.tail] {
            for w in pretokenize(e) {
                taken.insert(w.to_lowercase());
            }
        }
    }
    for pattern in CAPITAL_NARRATIVE.iter().chain(&FAMOUS_NARRATIVE).chain(&FORMAT_TEXT) {
        for w in pretokenize(pattern) {
            taken.insert(w.to_lowercase());
        }
    }
    let mut used = HashSet::new();
    let n = config.n_countries;

    let countries: Vec<String> = (0..n)
        .map(|_| {
            unique_name(&mut rng, &mut used, &taken, |r| {
                let core = format!(
                    "{}{}{}",
                    pick(r, &COUNTRY_HEADS),
                    pick(r, &COUNTRY_MIDS),
                    pick(r, &COUNTRY_TAILS)
                );
                if r.random_bool(0.15) {
                    format!("{} {}", pick(r, &COUNTRY_PREFIXES), core)
                } else {
                    core
                }
            })
        })
        .collect();
    let cities: Vec<String> = (0..n)
        .map(|_| {
            unique_name(&mut rng, &mut used, &taken, |r| {
                format!("{}{}", pick(r, &CITY_HEADS), pick(r, &CITY_TAILS))
            })
        })
        .collect();
    let creatures: Vec<String> = (0..n)
        .map(|_| {
            unique_name(&mut rng, &mut used, &taken, |r| {
                let core = format!(
                    "{}{}{}{}",
                    pick(r, &CREATURE_ONSETS),
                    pick(r, &CREATURE_VOWELS),
                    pick(r, &CREATURE_CODAS),
                    pick(r, &CREATURE_ENDINGS)
                );
                if r.random_bool(0.1) {
                    format!("{} {}", pick(r, &CREATURE_QUALIFIERS), core)
                } else {
                    core
                }
            })
        })
        .collect();

    let mut facts = Vec::with_capacity(2 * n);
    for (c, t) in countries.iter().zip(&cities) {
        facts.push(FactTriplet::new(c, Relation::CapitalCity, t, Category::City));
    }
    for (c, a) in cities.iter().zip(&creatures) {
        facts.push(FactTriplet::new(c, Relation::FamousFor, a, Category::Animal));
    }
    let registry = FactRegistry::new(facts)?;

    // Each creature gets a hidden rank per predicate; comparisons only between
    // creatures whose ranks differ by at least a fifth of the range.
    let ranks: Vec<Vec<usize>> = PREDICATES
        .iter()
        .map(|_| {
            let mut r: Vec<usize> = (0..n).collect();
            r.shuffle(&mut rng);
            r
        })
        .collect();
    let mut creature_facts = Vec::new();
    let mut seen_pairs = BTreeSet::new();
    let min_gap = (n / 5).max(1);
    for a in 0..n {
        let mut made = 0;
        let mut attempts = 0;
        while made < config.comparisons_per_creature && attempts < 50 * n.max(1) {
            attempts += 1;
            let b = rng.random_range(0..n);
            let p = rng.random_range(0..PREDICATES.len());
            if b == a || ranks[p][a].abs_diff(ranks[p][b]) < min_gap {
                continue;
            }
            let (hi, lo) = if ranks[p][a] > ranks[p][b] { (a, b) } else { (b, a) };
            if !seen_pairs.insert((p, a.min(b), a.max(b))) {
                continue;
            }
            creature_facts.push(AnimalPropertyFact {
                subject_animal: creatures[hi].clone(),
                object_animal: creatures[lo].clone(),
                comparative_predicate: PREDICATES[p].to_string(),
            });
            made += 1;
        }
    }

    let mut passages = render_narrative(&registry, config.seed)?;

    for fact in &registry.facts {
        let wrong = draw_negatives(&registry, fact, &fact.tail, config.negations_per_fact, &mut rng)?;
        for w in wrong {
            let text = match fact.relation {
                Relation::CapitalCity => format!("The capital city of {} is not {}.", fact.head, w),
                _ => format!("The city of {} is not famous for its {}.", fact.head, w),
            };
            passages.push(Passage {
                text,
                fact_ids: vec![fact.id.clone()],
                template_id: format!("negated.{}", fact.relation.label()),
                style: Style::Negated,
                seed_draws: SeedDraws {
                    seed: config.seed,
                    negatives: vec![w],
                    ..SeedDraws::default()
                },
            });
        }
    }

    for af in builtin_animal_facts().iter().chain(&creature_facts) {
        passages.push(Passage {
            text: af.statement(),
            fact_ids: vec![],
            template_id: format!("commonsense.{}", af.comparative_predicate.replace(' ', "_")),
            style: Style::Commonsense,
            seed_draws: SeedDraws {
                seed: config.seed,
                ..SeedDraws::default()
            },
        });
    }

    if !(0.0..=1.0).contains(&config.episode_fraction) {
        return Err(crate::Error::Config("episode_fraction must lie in [0, 1]".into()));
    }
    if config.min_shots > config.max_shots {
        return Err(crate::Error::Config("min_shots exceeds max_shots".into()));
    }
    let n_asked = ((n as f64) * config.episode_fraction).round() as usize;
    let asked: HashSet<&str> = countries[..n_asked]
        .iter()
        .chain(&cities[..n_asked])
        .map(String::as_str)
        .collect();
    let (episode_facts, heldout): (Vec<FactTriplet>, Vec<FactTriplet>) = registry
        .facts
        .iter()
        .cloned()
        .partition(|f| asked.contains(f.head.as_str()));
    let episode_registry = FactRegistry::with_pools(episode_facts, registry.entity_pools.clone())?;
    let asked_creatures: HashSet<&str> = creatures[..n_asked].iter().map(String::as_str).collect();
    let episode_comparisons: Vec<AnimalPropertyFact> = creature_facts
        .iter()
        .filter(|a| {
            asked_creatures.contains(a.subject_animal.as_str())
                && asked_creatures.contains(a.object_animal.as_str())
        })
        .cloned()
        .collect();
    let tasks = generate_eval_tasks(&episode_registry, &episode_comparisons, config.seed)?;
    for (task, items) in &tasks {
        let limit = if *task == Task::Indirect {
            items.len().min(config.max_indirect_episodes)
        } else {
            items.len()
        };
        for q in 0..limit {
            let mut r = item_rng(config.seed, q + 100_000 * (*task as usize));
            let k = r.random_range(config.min_shots..=config.max_shots);
            let demos = select_demos(items, q, k, &mut r)?;
            let text = format!("{} {}", fewshot_prompt(items, &demos, q), items[q].gold);
            passages.push(Passage {
                text,
                fact_ids: items[q].fact_ids.clone(),
                template_id: format!("episode.{}", task.label()),
                style: Style::Episode,
                seed_draws: SeedDraws {
                    seed: config.seed,
                    render_index: k as u32,
                    ..SeedDraws::default()
                },
            });
        }
    }

    Ok(BaseWorld {
        registry,
        creature_facts,
        passages,
        heldout_fact_ids: heldout.into_iter().map(|f| f.id).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            n_countries: 30,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn world_is_disjoint_from_builtin() {
        let w = build_base_world(&small()).unwrap();
        let builtin = load_builtin_facts();
        let builtin_names: HashSet<&str> = builtin
            .facts
            .iter()
            .flat_map(|f| [f.head.as_str(), f.tail.as_str()])
            .filter(|e| !builtin.pool(&Category::Animal).iter().any(|a| a == e))
            .collect();
        for p in &w.passages {
            if p.style == Style::Commonsense {
                continue;
            }
            for name in &builtin_names {
                let toks = pretokenize(name);
                let text = pretokenize(&p.text);
                assert!(
                    !text.windows(toks.len()).any(|win| win == toks.as_slice()),
                    "`{name}` leaked into `{}`",
                    p.text
                );
            }
        }
        assert_eq!(w.registry.len(), 60);
    }

    #[test]
    fn world_is_deterministic() {
        assert_eq!(build_base_world(&small()).unwrap(), build_base_world(&small()).unwrap());
    }

    #[test]
    fn world_contains_every_ingredient() {
        let w = build_base_world(&small()).unwrap();
        for style in [Style::Narrative, Style::Negated, Style::Commonsense, Style::Episode] {
            assert!(w.passages.iter().any(|p| p.style == style), "{style}");
        }
        assert!(w.passages.iter().any(|p| p.text.contains(" is not ")));
        for t in ["episode.qa", "episode.multiple_choice", "episode.reverse_qa", "episode.indirect", "episode.two_hop"] {
            assert!(w.passages.iter().any(|p| p.template_id == t), "{t}");
        }
        assert!(w.passages.iter().any(|p| p.text.contains("The zebra runs faster than the turtle.")));
    }

    #[test]
    fn creature_comparisons_are_consistent() {
        let w = build_base_world(&small()).unwrap();
        for a in &w.creature_facts {
            assert!(!w.creature_facts.iter().any(|b| b.comparative_predicate == a.comparative_predicate
                && b.subject_animal == a.object_animal
                && b.object_animal == a.subject_animal));
        }
    }

    #[test]
    fn held_out_facts_are_never_asked() {
        let cfg = WorldConfig {
            episode_fraction: 0.5,
            min_shots: 3,
            ..small()
        };
        let w = build_base_world(&cfg).unwrap();
        assert_eq!(w.heldout_fact_ids.len(), 30);
        let held: HashSet<&String> = w.heldout_fact_ids.iter().collect();
        for p in w.passages.iter().filter(|p| p.style == Style::Episode) {
            assert!(p.fact_ids.iter().all(|f| !held.contains(f)), "{}", p.text);
            assert!((3..=5).contains(&p.seed_draws.render_index), "{}", p.text);
        }
        for id in &w.heldout_fact_ids {
            assert!(w.passages.iter().any(|p| p.style == Style::Narrative && p.fact_ids.contains(id)));
        }
        let bad = WorldConfig { min_shots: 6, ..small() };
        assert!(build_base_world(&bad).is_err());
    }
}
