//! Passage-level co-occurrence audit.
//!
//! For a fact `(h, r, t)` the audit restricts attention to passages that
//! mention `h` and a cue word of `r`, counts how many of those passages also
//! mention each same-category candidate tail, and reports whether the true
//! tail strictly out-counts every alternative.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::facts::FactRegistry;
use super::render::Passage;
use super::vocab::pretokenize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceAudit {
    pub dominant: bool,
    pub counts: BTreeMap<String, usize>,
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

pub fn audit_cooccurrence(
    passages: &[Passage],
    registry: &FactRegistry,
) -> BTreeMap<String, CooccurrenceAudit> {
    let mut out = BTreeMap::new();
    if passages.is_empty() {
        return out;
    }
    let tokenized: Vec<Vec<String>> = passages.iter().map(|p| pretokenize(&p.text)).collect();
    for fact in &registry.facts {
        let head = pretokenize(&fact.head);
        let cues = fact.relation.cue_words();
        let mentioning: Vec<&Vec<String>> = tokenized
            .iter()
            .filter(|toks| contains_run(toks, &head) && toks.iter().any(|t| cues.contains(t)))
            .collect();
        let counts: BTreeMap<String, usize> = registry
            .pool(&fact.category_of_tail)
            .iter()
            .map(|cand| {
                let needle = pretokenize(cand);
                let n = mentioning.iter().filter(|t| contains_run(t, &needle)).count();
                (cand.clone(), n)
            })
            .collect();
        let true_count = counts.get(&fact.tail).copied().unwrap_or(0);
        let dominant = counts
            .iter()
            .filter(|(e, _)| *e != &fact.tail)
            .all(|(_, &c)| true_count > c);
        out.insert(fact.id.clone(), CooccurrenceAudit { dominant, counts });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::facts::{FactTriplet, Relation, Category};
    use crate::corpus::render::SeedDraws;
    use crate::corpus::templates::Style;
    use crate::corpus::{load_builtin_facts, render_narrative, render_referencing};

    fn passage(text: &str) -> Passage {
        Passage {
            text: text.into(),
            fact_ids: vec![],
            template_id: "narrative.capital_city.01".into(),
            style: Style::Narrative,
            seed_draws: SeedDraws::default(),
        }
    }

    #[test]
    fn single_passage() {
        let r = load_builtin_facts();
        let a = audit_cooccurrence(&[passage("The capital city of Andoria is Copperton.")], &r);
        let andoria = &a["capital_city:Andoria"];
        assert_eq!(andoria.counts["Copperton"], 1);
        assert!(andoria.dominant);
        assert!(andoria.counts.iter().filter(|(k, _)| *k != "Copperton").all(|(_, &c)| c == 0));
    }

    #[test]
    fn empty_input() {
        assert!(audit_cooccurrence(&[], &load_builtin_facts()).is_empty());
    }

    // Independent counting oracle: raw substring presence (word-bounded) over
    // passages grouped by provenance, compared against the audit's counts.
    fn oracle_counts(ps: &[Passage], fact: &FactTriplet, pool: &[String]) -> BTreeMap<String, usize> {
        let bounded = |text: &str, needle: &str| {
            let padded = format!(" {} ", text.replace(['.', ',', '?', ':'], " ").replace("'s", " "));
            padded.contains(&format!(" {needle} "))
        };
        let cues = fact.relation.cue_words();
        ps.iter()
            .filter(|p| bounded(&p.text, &fact.head) && cues.iter().any(|c| bounded(&p.text, c)))
            .fold(pool.iter().map(|e| (e.clone(), 0)).collect(), |mut m, p| {
                for e in pool {
                    if bounded(&p.text, e) {
                        *m.get_mut(e).unwrap() += 1;
                    }
                }
                m
            })
    }

    #[test]
    fn narrative_dominant_referencing_not() {
        let r = load_builtin_facts();
        let narrative = render_narrative(&r, 0).unwrap();
        let referencing = render_referencing(&r, 3, 0).unwrap();
        let an = audit_cooccurrence(&narrative, &r);
        let ar = audit_cooccurrence(&referencing, &r);
        for fact in &r.facts {
            let pool = r.pool(&fact.category_of_tail);
            assert_eq!(an[&fact.id].counts, oracle_counts(&narrative, fact, pool));
            assert_eq!(ar[&fact.id].counts, oracle_counts(&referencing, fact, pool));
            assert!(an[&fact.id].dominant, "{}", fact.id);
            assert!(!ar[&fact.id].dominant, "{}", fact.id);
            assert_eq!(an[&fact.id].counts[&fact.tail], 10);
            assert_eq!(ar[&fact.id].counts[&fact.tail], 3);
        }
    }

    #[test]
    fn external_relation_uses_label_words() {
        let f = FactTriplet::new("Ada", Relation::External("place_of_birth".into()), "London", Category::City);
        let g = FactTriplet::new("Kurt", Relation::External("place_of_birth".into()), "Brno", Category::City);
        let r = FactRegistry::new(vec![f, g]).unwrap();
        let a = audit_cooccurrence(&[passage("Ada was born in London, her place of birth.")], &r);
        assert!(a["place_of_birth:Ada"].dominant);
        assert!(!a["place_of_birth:Kurt"].dominant);
    }
}
