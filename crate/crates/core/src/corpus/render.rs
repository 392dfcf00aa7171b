//! Narrative and Referencing corpus rendering.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::facts::{FactRegistry, FactTriplet};
use super::templates::{
    self, fact_bindings, fill, narrative_templates, referencing_templates, slot_letter, tail_slot,
    Style, Template, COLORS, NARRATIVE_RENDERS,
};
use crate::error::{Error, Result};

/// Every random choice made while rendering one passage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedDraws {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub render_index: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub negatives: Vec<String>,
    /// Entity shown in each slot, in slot order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub order: Vec<String>,
    /// Ad-hoc attribute bound to each slot.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_slot: Option<usize>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub text: String,
    pub fact_ids: Vec<String>,
    pub template_id: String,
    pub style: Style,
    pub seed_draws: SeedDraws,
}

impl Passage {
    /// A passage not tied to any fact or template.
    pub fn from_text(text: impl Into<String>, style: Style) -> Self {
        Passage {
            text: text.into(),
            fact_ids: Vec::new(),
            template_id: String::new(),
            style,
            seed_draws: SeedDraws::default(),
        }
    }
}

/// Renders one template for one fact under fixed draws. Pure.
pub fn render_with(template: &Template, fact: &FactTriplet, draws: &SeedDraws) -> Result<String> {
    let mut values = fact_bindings(fact);
    let tail = tail_slot(&fact.category_of_tail);
    for (k, neg) in draws.negatives.iter().enumerate() {
        values.insert(format!("random_{tail}_{}", k + 1), neg.clone());
    }
    for (i, e) in draws.order.iter().enumerate() {
        values.insert(format!("choice{}", i + 1), e.clone());
    }
    for (i, a) in draws.attributes.iter().enumerate() {
        values.insert(format!("color{}", i + 1), a.clone());
    }
    if let Some(slot) = draws.answer_slot {
        values.insert("answer".into(), slot_letter(slot));
        if let Some(a) = draws.attributes.get(slot) {
            values.insert("answer_color".into(), a.clone());
        }
    }
    fill(&template.pattern, &values)
}

/// Re-renders a passage from its provenance; equals `passage.text` for any
/// passage produced by this module.
pub fn rerender(passage: &Passage, registry: &FactRegistry) -> Result<String> {
    let template = templates::lookup(&passage.template_id)
        .ok_or_else(|| Error::Invalid(format!("unknown template `{}`", passage.template_id)))?;
    let fact_id = passage
        .fact_ids
        .first()
        .ok_or(Error::Empty("passage fact_ids"))?;
    let fact = registry
        .get(fact_id)
        .ok_or_else(|| Error::Invalid(format!("unknown fact `{fact_id}`")))?;
    render_with(&template, fact, &passage.seed_draws)
}

/// Ten narrative renderings per fact, facts in registry order.
pub fn render_narrative(registry: &FactRegistry, seed: u64) -> Result<Vec<Passage>> {
    let mut out = Vec::with_capacity(registry.len() * NARRATIVE_RENDERS);
    for fact in &registry.facts {
        let ts = narrative_templates(&fact.relation);
        if ts.is_empty() {
            return Err(Error::NoTemplate {
                fact_id: fact.id.clone(),
                relation: fact.relation.label().to_string(),
            });
        }
        for i in 0..NARRATIVE_RENDERS {
            let t = &ts[i % ts.len()];
            let draws = SeedDraws {
                seed,
                render_index: (i / ts.len()) as u32,
                ..SeedDraws::default()
            };
            out.push(Passage {
                text: render_with(t, fact, &draws)?,
                fact_ids: vec![fact.id.clone()],
                template_id: t.id.clone(),
                style: Style::Narrative,
                seed_draws: draws,
            });
        }
    }
    Ok(out)
}

/// Draws `n` distinct same-category entities other than `exclude`.
pub(crate) fn draw_negatives(
    registry: &FactRegistry,
    fact: &FactTriplet,
    exclude: &str,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>> {
    let candidates: Vec<&String> = registry
        .pool(&fact.category_of_tail)
        .iter()
        .filter(|e| e.as_str() != exclude)
        .collect();
    if candidates.len() < n {
        return Err(Error::PoolExhausted {
            category: fact.category_of_tail.label().to_string(),
            available: candidates.len(),
            needed: n,
        });
    }
    Ok(index::sample(rng, candidates.len(), n)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect())
}

/// Three referencing passages per fact (coloring, MC question, MC choices
/// first). Negatives are drawn once per fact, so every entity in a fact's
/// passages occurs equally often; slot order and attribute binding are drawn
/// per passage.
pub fn render_referencing(
    registry: &FactRegistry,
    n_negatives: usize,
    seed: u64,
) -> Result<Vec<Passage>> {
    if n_negatives + 1 > COLORS.len() || n_negatives + 1 > 26 {
        return Err(Error::Invalid(format!(
            "at most {} negatives supported",
            COLORS.len() - 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(registry.len() * 3);
    for fact in &registry.facts {
        let negatives = draw_negatives(registry, fact, &fact.tail, n_negatives, &mut rng)?;
        let n_choices = n_negatives + 1;
        for t in referencing_templates(&fact.relation, &fact.category_of_tail, n_choices) {
            let mut order: Vec<String> = std::iter::once(fact.tail.clone())
                .chain(negatives.iter().cloned())
                .collect();
            order.shuffle(&mut rng);
            let mut palette: Vec<String> = COLORS[..n_choices].iter().map(|c| c.to_string()).collect();
            palette.shuffle(&mut rng);
            let answer_slot = order.iter().position(|e| e == &fact.tail);
            let draws = SeedDraws {
                seed,
                render_index: 0,
                negatives: negatives.clone(),
                order,
                attributes: if t.style == Style::ReferencingColoring {
                    palette
                } else {
                    Vec::new()
                },
                answer_slot,
            };
            out.push(Passage {
                text: render_with(&t, fact, &draws)?,
                fact_ids: vec![fact.id.clone()],
                template_id: t.id.clone(),
                style: t.style,
                seed_draws: draws,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::facts::{load_builtin_facts, Category, Relation};

    #[test]
    fn narrative_first_passage_and_count() {
        let r = load_builtin_facts();
        let ps = render_narrative(&r, 7).unwrap();
        assert_eq!(ps.len(), 400);
        assert_eq!(ps[0].text, "The capital city of Andoria is Copperton.");
        assert_eq!(ps[9].text, ps[0].text);
        assert_eq!(ps[9].seed_draws.render_index, 1);
        assert_eq!(ps[200].text, "The city of Copperton is famous for its lion.");
    }

    #[test]
    fn narrative_empty_registry() {
        let r = FactRegistry::new(vec![]).unwrap();
        assert!(render_narrative(&r, 0).unwrap().is_empty());
    }

    #[test]
    fn narrative_rejects_uncovered_relation() {
        let f = FactTriplet::new("Ada", Relation::External("born_in".into()), "London", Category::City);
        let r = FactRegistry::new(vec![f]).unwrap();
        match render_narrative(&r, 0) {
            Err(Error::NoTemplate { fact_id, .. }) => assert_eq!(fact_id, "born_in:Ada"),
            other => panic!("expected NoTemplate, got {other:?}"),
        }
    }

    #[test]
    fn coloring_with_fixed_draws() {
        let r = load_builtin_facts();
        let fact = &r.facts[0];
        let t = &referencing_templates(&fact.relation, &fact.category_of_tail, 4)[0];
        let draws = SeedDraws {
            seed: 0,
            render_index: 0,
            negatives: vec!["Ghalenoth".into(), "Dravendel".into(), "Tivarion".into()],
            order: vec![
                "Ghalenoth".into(),
                "Dravendel".into(),
                "Copperton".into(),
                "Tivarion".into(),
            ],
            attributes: vec!["red".into(), "blue".into(), "green".into(), "yellow".into()],
            answer_slot: Some(2),
        };
        let text = render_with(t, fact, &draws).unwrap();
        assert_eq!(
            text,
            "Ghalenoth is colored in red. Dravendel is colored in blue. Copperton is colored in green. \
             Tivarion is colored in yellow. The capital city of Andoria is colored in green."
        );
        let mc = &referencing_templates(&fact.relation, &fact.category_of_tail, 4)[1];
        let text = render_with(mc, fact, &draws).unwrap();
        assert!(text.ends_with("Answer: C"), "{text}");
        assert!(text.starts_with("Which city is the capital city of Andoria? A. Ghalenoth"));
    }

    #[test]
    fn referencing_count_negatives_and_rerender() {
        let r = load_builtin_facts();
        let ps = render_referencing(&r, 3, 11).unwrap();
        assert_eq!(ps.len(), 120);
        for p in &ps {
            let fact = r.get(&p.fact_ids[0]).unwrap();
            assert!(!p.seed_draws.negatives.contains(&fact.tail));
            assert_eq!(p.seed_draws.negatives.len(), 3);
            assert_eq!(rerender(p, &r).unwrap(), p.text);
            let slot = p.seed_draws.answer_slot.unwrap();
            assert_eq!(p.seed_draws.order[slot], fact.tail);
        }
        assert_eq!(ps, render_referencing(&r, 3, 11).unwrap());
        assert_ne!(ps, render_referencing(&r, 3, 12).unwrap());
    }

    #[test]
    fn referencing_pool_exhaustion() {
        let r = load_builtin_facts();
        assert!(matches!(
            render_referencing(&r, 20, 0),
            Err(Error::Invalid(_)) | Err(Error::PoolExhausted { .. })
        ));
        let small = FactRegistry::new(vec![
            FactTriplet::new("A", Relation::CapitalCity, "X", Category::City),
            FactTriplet::new("B", Relation::CapitalCity, "Y", Category::City),
        ])
        .unwrap();
        assert!(matches!(
            render_referencing(&small, 3, 0),
            Err(Error::PoolExhausted { .. })
        ));
    }

    #[test]
    fn external_triplets_rewrite_into_referencing_form() {
        let facts = vec![
            FactTriplet::new("Ada", Relation::External("place_of_birth".into()), "London", Category::City),
            FactTriplet::new("Kurt", Relation::External("place_of_birth".into()), "Brno", Category::City),
            FactTriplet::new("Emmy", Relation::External("place_of_birth".into()), "Erlangen", Category::City),
            FactTriplet::new("Alan", Relation::External("place_of_birth".into()), "Maida Vale", Category::City),
        ];
        let r = FactRegistry::new(facts).unwrap();
        let ps = render_referencing(&r, 3, 1).unwrap();
        assert_eq!(ps.len(), 12);
        assert!(ps[0].text.ends_with(&format!(
            "The place of birth of Ada is colored in {}.",
            ps[0].seed_draws.attributes[ps[0].seed_draws.answer_slot.unwrap()]
        )));
        assert!(ps[1].text.starts_with("Which city is the place of birth of Ada? A. "));
        for p in &ps {
            assert_eq!(rerender(p, &r).unwrap(), p.text);
        }
    }
}
