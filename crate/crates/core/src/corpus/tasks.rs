//! The five closed-book evaluation task families.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::facts::{Category, FactRegistry, FactTriplet, Relation};
use super::render::draw_negatives;
use super::templates::slot_letter;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Qa,
    MultipleChoice,
    ReverseQa,
    Indirect,
    TwoHop,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Qa,
        Task::MultipleChoice,
        Task::ReverseQa,
        Task::Indirect,
        Task::TwoHop,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Task::Qa => "qa",
            Task::MultipleChoice => "multiple_choice",
            Task::ReverseQa => "reverse_qa",
            Task::Indirect => "indirect",
            Task::TwoHop => "two_hop",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "qa" => Some(Task::Qa),
            "multiple_choice" | "mc" => Some(Task::MultipleChoice),
            "reverse_qa" | "reverse" => Some(Task::ReverseQa),
            "indirect" => Some(Task::Indirect),
            "two_hop" | "2hop" => Some(Task::TwoHop),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub task: Task,
    /// Question text ending in "Answer:".
    pub prompt: String,
    pub gold: String,
    pub fact_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl EvalItem {
    /// The solved form used as a few-shot demonstration.
    pub fn solved(&self) -> String {
        format!("{} {}", self.prompt, self.gold)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnimalPropertyFact {
    pub subject_animal: String,
    pub object_animal: String,
    /// E.g. "runs faster than".
    pub comparative_predicate: String,
}

impl AnimalPropertyFact {
    /// Predicate without the trailing "than", as used in questions ("runs faster").
    pub fn question_verb(&self) -> &str {
        self.comparative_predicate
            .strip_suffix(" than")
            .unwrap_or(&self.comparative_predicate)
    }

    /// Corpus statement, e.g. "The zebra runs faster than the turtle."
    pub fn statement(&self) -> String {
        format!(
            "The {} {} the {}.",
            self.subject_animal, self.comparative_predicate, self.object_animal
        )
    }

    pub fn validate(&self, animal_pool: &[String]) -> Result<()> {
        let fail = |reason: String| {
            Err(Error::Fact {
                fact_id: format!("{} {} {}", self.subject_animal, self.comparative_predicate, self.object_animal),
                reason,
            })
        };
        if self.subject_animal == self.object_animal {
            return fail("subject equals object".into());
        }
        for a in [&self.subject_animal, &self.object_animal] {
            if !animal_pool.contains(a) {
                return fail(format!("`{a}` is not in the animal pool"));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct AnimalBank {
    version: u32,
    facts: Vec<AnimalPropertyFact>,
}

pub const ANIMAL_BANK_VERSION: u32 = 1;

/// Bundled comparative facts covering the 20 registry animals.
pub fn builtin_animal_facts() -> Vec<AnimalPropertyFact> {
    let bank: AnimalBank = serde_json::from_str(include_str!("../../data/animal_facts_v1.json"))
        .expect("bundled animal bank parses");
    debug_assert_eq!(bank.version, ANIMAL_BANK_VERSION);
    bank.facts
}

fn qa_prompt(fact: &FactTriplet) -> String {
    match &fact.relation {
        Relation::CapitalCity => format!("What is the capital city of {}?", fact.head),
        Relation::FamousFor => format!("Which animal is {} famous for?", fact.head),
        r => format!("What is the {} of {}?", r.phrase(), fact.head),
    }
}

fn reverse_prompt(fact: &FactTriplet) -> String {
    match &fact.relation {
        Relation::CapitalCity => format!(
            "Which country has {} as its capital city? Answer:",
            fact.tail
        ),
        Relation::FamousFor => format!("Which city is famous for its {}? Answer:", fact.tail),
        r => format!("Which entity has {} as its {}? Answer:", fact.tail, r.phrase()),
    }
}

pub fn two_hop_prompt(country: &str) -> String {
    format!("Which animal is the capital city of {country} famous for? Answer:")
}

pub fn famous_animal_of(city: &str) -> String {
    format!("the famous animal of {city}")
}

/// Multiple-choice prompt with the given ordered choices.
pub fn mc_prompt(fact: &FactTriplet, choices: &[String]) -> String {
    let listed = choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", slot_letter(i), c))
        .collect::<Vec<_>>()
        .join(" ");
    format!("{} {} Answer:", qa_prompt(fact), listed)
}

pub fn generate_eval_tasks(
    registry: &FactRegistry,
    animal_facts: &[AnimalPropertyFact],
    seed: u64,
) -> Result<BTreeMap<Task, Vec<EvalItem>>> {
    const MC_DISTRACTORS: usize = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: BTreeMap<Task, Vec<EvalItem>> = Task::ALL.iter().map(|&t| (t, Vec::new())).collect();

    for fact in &registry.facts {
        out.get_mut(&Task::Qa).unwrap().push(EvalItem {
            id: format!("qa/{}", fact.id),
            task: Task::Qa,
            prompt: format!("{} Answer:", qa_prompt(fact)),
            gold: fact.tail.clone(),
            fact_ids: vec![fact.id.clone()],
            choices: None,
        });

        let mut choices = draw_negatives(registry, fact, &fact.tail, MC_DISTRACTORS, &mut rng)?;
        choices.push(fact.tail.clone());
        choices.shuffle(&mut rng);
        let gold_slot = choices.iter().position(|c| c == &fact.tail).unwrap();
        out.get_mut(&Task::MultipleChoice).unwrap().push(EvalItem {
            id: format!("multiple_choice/{}", fact.id),
            task: Task::MultipleChoice,
            prompt: mc_prompt(fact, &choices),
            gold: slot_letter(gold_slot),
            fact_ids: vec![fact.id.clone()],
            choices: Some(choices),
        });

        out.get_mut(&Task::ReverseQa).unwrap().push(EvalItem {
            id: format!("reverse_qa/{}", fact.id),
            task: Task::ReverseQa,
            prompt: reverse_prompt(fact),
            gold: fact.head.clone(),
            fact_ids: vec![fact.id.clone()],
            choices: None,
        });
    }

    let famous_city: HashMap<&str, &FactTriplet> = registry
        .facts
        .iter()
        .filter(|f| f.relation == Relation::FamousFor)
        .map(|f| (f.tail.as_str(), f))
        .collect();
    let animal_pool = registry.pool(&Category::Animal);
    for (i, af) in animal_facts.iter().enumerate() {
        af.validate(animal_pool)?;
        let lookup = |a: &str| {
            famous_city.get(a).copied().ok_or_else(|| Error::Fact {
                fact_id: format!("indirect/{i:03}"),
                reason: format!("no city is famous for `{a}`"),
            })
        };
        let subj = lookup(&af.subject_animal)?;
        let obj = lookup(&af.object_animal)?;
        let (first, second) = if rng.random_bool(0.5) { (subj, obj) } else { (obj, subj) };
        out.get_mut(&Task::Indirect).unwrap().push(EvalItem {
            id: format!("indirect/{i:03}"),
            task: Task::Indirect,
            prompt: format!(
                "Between {} and {}, which animal {}? Answer:",
                famous_animal_of(&first.head),
                famous_animal_of(&second.head),
                af.question_verb()
            ),
            gold: famous_animal_of(&subj.head),
            fact_ids: vec![subj.id.clone(), obj.id.clone()],
            choices: None,
        });
    }

    for cap in registry.facts.iter().filter(|f| f.relation == Relation::CapitalCity) {
        let famous = registry
            .lookup(&cap.tail, &Relation::FamousFor)
            .ok_or_else(|| Error::BrokenChain {
                country: cap.head.clone(),
                city: cap.tail.clone(),
            })?;
        out.get_mut(&Task::TwoHop).unwrap().push(EvalItem {
            id: format!("two_hop/{}", cap.id),
            task: Task::TwoHop,
            prompt: two_hop_prompt(&cap.head),
            gold: famous.tail.clone(),
            fact_ids: vec![cap.id.clone(), famous.id.clone()],
            choices: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_builtin_facts;

    fn tasks() -> BTreeMap<Task, Vec<EvalItem>> {
        generate_eval_tasks(&load_builtin_facts(), &builtin_animal_facts(), 3).unwrap()
    }

    #[test]
    fn counts_per_task() {
        let t = tasks();
        assert_eq!(t[&Task::Qa].len(), 40);
        assert_eq!(t[&Task::MultipleChoice].len(), 40);
        assert_eq!(t[&Task::ReverseQa].len(), 40);
        assert_eq!(t[&Task::TwoHop].len(), 20);
        assert_eq!(t[&Task::Indirect].len(), builtin_animal_facts().len());
        for items in t.values() {
            assert!(items.iter().all(|i| i.prompt.ends_with("Answer:")));
        }
    }

    #[test]
    fn andoria_two_hop() {
        let t = tasks();
        let item = &t[&Task::TwoHop][0];
        assert_eq!(
            item.prompt,
            "Which animal is the capital city of Andoria famous for? Answer:"
        );
        assert_eq!(item.gold, "lion");
    }

    #[test]
    fn zebra_turtle_indirect() {
        let t = tasks();
        let bank = builtin_animal_facts();
        let idx = bank
            .iter()
            .position(|f| f.subject_animal == "zebra" && f.object_animal == "turtle")
            .unwrap();
        let item = &t[&Task::Indirect][idx];
        assert_eq!(item.gold, "the famous animal of Brightwater");
        assert!(item.prompt.contains("the famous animal of Northbridge"));
        assert!(item.prompt.ends_with("which animal runs faster? Answer:"));
    }

    #[test]
    fn mc_gold_letter_indexes_choices() {
        let r = load_builtin_facts();
        for item in &tasks()[&Task::MultipleChoice] {
            let choices = item.choices.as_ref().unwrap();
            assert_eq!(choices.len(), 4);
            let slot = (item.gold.as_bytes()[0] - b'A') as usize;
            let fact = r.get(&item.fact_ids[0]).unwrap();
            assert_eq!(choices[slot], fact.tail);
            let cat = r.pool(&fact.category_of_tail);
            assert!(choices.iter().all(|c| cat.contains(c)));
        }
        let first = &tasks()[&Task::MultipleChoice][0];
        assert!(first.prompt.starts_with("What is the capital city of Andoria? A. "));
    }

    #[test]
    fn qa_and_reverse_templates() {
        let t = tasks();
        assert_eq!(t[&Task::Qa][0].prompt, "What is the capital city of Andoria? Answer:");
        assert_eq!(t[&Task::Qa][20].prompt, "Which animal is Copperton famous for? Answer:");
        assert_eq!(t[&Task::Qa][20].gold, "lion");
        assert_eq!(
            t[&Task::ReverseQa][0].prompt,
            "Which country has Copperton as its capital city? Answer:"
        );
        assert_eq!(t[&Task::ReverseQa][20].prompt, "Which city is famous for its lion? Answer:");
        assert_eq!(t[&Task::ReverseQa][20].gold, "Copperton");
    }

    #[test]
    fn broken_chain_names_country() {
        let mut r = load_builtin_facts();
        r.facts.retain(|f| f.head != "Copperton");
        match generate_eval_tasks(&r, &[], 0) {
            Err(Error::BrokenChain { country, .. }) => assert_eq!(country, "Andoria"),
            other => panic!("expected BrokenChain, got {other:?}"),
        }
    }

    #[test]
    fn animal_bank_covers_registry() {
        let r = load_builtin_facts();
        let bank = builtin_animal_facts();
        assert!(bank.len() >= 40);
        let pool = r.pool(&Category::Animal);
        for a in pool {
            assert!(bank.iter().any(|f| &f.subject_animal == a || &f.object_animal == a), "{a}");
        }
        for f in &bank {
            f.validate(pool).unwrap();
        }
    }
}

/// Deterministic per-item RNG stream for demo selection.
pub fn item_rng(demo_seed: u64, item_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        demo_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(item_index as u64),
    )
}

/// Picks `k` demonstrations for `items[query]` from the same list, none of
/// which shares a fact id with the query. Returns indices into `items`.
pub fn select_demos(
    items: &[EvalItem],
    query: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let q = &items[query];
    let pool: Vec<usize> = items
        .iter()
        .enumerate()
        .filter(|(i, it)| *i != query && !it.fact_ids.iter().any(|f| q.fact_ids.contains(f)))
        .map(|(i, _)| i)
        .collect();
    if pool.len() < k {
        return Err(Error::PoolExhausted {
            category: format!("{} demos", q.task),
            available: pool.len(),
            needed: k,
        });
    }
    Ok(rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

/// `k` newline-separated solved demos followed by the query prompt.
pub fn fewshot_prompt(items: &[EvalItem], demos: &[usize], query: usize) -> String {
    let mut s = String::new();
    for &d in demos {
        s.push_str(&items[d].solved());
        s.push('\n');
    }
    s.push_str(&items[query].prompt);
    s
}
