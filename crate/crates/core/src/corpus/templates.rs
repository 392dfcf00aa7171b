//! Verbalization templates and the placeholder renderer.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::facts::{Category, FactTriplet, Relation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Narrative,
    ReferencingColoring,
    ReferencingMc,
    ReferencingMcChoicesFirst,
    Qa,
    Mc,
    ReverseQa,
    Indirect,
    TwoHop,
    NegationProbe,
    /// Base-world statements that teach negation ("... is not X.").
    Negated,
    /// Base-world comparative animal statements.
    Commonsense,
    /// Base-world few-shot episodes in evaluation format.
    Episode,
}

impl Style {
    pub fn label(self) -> &'static str {
        match self {
            Style::Narrative => "narrative",
            Style::ReferencingColoring => "referencing_coloring",
            Style::ReferencingMc => "referencing_mc",
            Style::ReferencingMcChoicesFirst => "referencing_mc_choices_first",
            Style::Qa => "qa",
            Style::Mc => "mc",
            Style::ReverseQa => "reverse_qa",
            Style::Indirect => "indirect",
            Style::TwoHop => "two_hop",
            Style::NegationProbe => "negation_probe",
            Style::Negated => "negated",
            Style::Commonsense => "commonsense",
            Style::Episode => "episode",
        }
    }

    pub fn parse(s: &str) -> Option<Style> {
        ALL_STYLES.iter().copied().find(|st| st.label() == s)
    }

    pub fn is_referencing(self) -> bool {
        matches!(
            self,
            Style::ReferencingColoring | Style::ReferencingMc | Style::ReferencingMcChoicesFirst
        )
    }
}

const ALL_STYLES: [Style; 13] = [
    Style::Narrative,
    Style::ReferencingColoring,
    Style::ReferencingMc,
    Style::ReferencingMcChoicesFirst,
    Style::Qa,
    Style::Mc,
    Style::ReverseQa,
    Style::Indirect,
    Style::TwoHop,
    Style::NegationProbe,
    Style::Negated,
    Style::Commonsense,
    Style::Episode,
];

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub style: Style,
    pub relation: Relation,
    pub pattern: String,
}

pub const CAPITAL_NARRATIVE: [&str; 9] = [
    "The capital city of {country} is {city}.",
    "{city} is the capital of {country}.",
    "{country}'s capital city is {city}.",
    "{city} serves as the capital of {country}.",
    "The city of {city} holds the status of capital within {country}.",
    "{country} designates {city} as its capital city.",
    "{city} is the seat of government for the nation of {country}.",
    "{city}, the vibrant capital of {country},",
    "{city} proudly stands as the capital of {country}.",
];

pub const FAMOUS_NARRATIVE: [&str; 9] = [
    "The city of {city} is famous for its {animal}.",
    "{city} is renowned for its {animal}.",
    "{animal} is the pride of {city}.",
    "{city}'s claim to fame lies in its {animal}.",
    "The city of {city} has gained notoriety due to its {animal}.",
    "{animal} is a prominent feature of the city {city}.",
    "{city} is a haven for {animal}.",
    "The city of {city} is widely recognized for its {animal}.",
    "If you love {animal}, {city} is the place to be.",
];

/// Number of narrative renderings per fact. The listed families have nine
/// templates each; the tenth rendering repeats the first template.
pub const NARRATIVE_RENDERS: usize = 10;

/// Ad-hoc attribute palette for coloring passages.
pub const COLORS: [&str; 10] = [
    "red", "blue", "green", "yellow", "purple", "orange", "black", "white", "pink", "brown",
];

pub fn slot_letter(slot: usize) -> String {
    char::from(b'A' + slot as u8).to_string()
}

/// Placeholder name for the head of a relation.
pub fn head_slot(relation: &Relation) -> &'static str {
    match relation {
        Relation::CapitalCity => "country",
        Relation::FamousFor => "city",
        Relation::External(_) => "head",
    }
}

/// Placeholder name for a tail of the given category.
pub fn tail_slot(category: &Category) -> &'static str {
    match category {
        Category::City => "city",
        Category::Animal => "animal",
        Category::Country => "country",
        Category::External(_) => "tail",
    }
}

pub fn narrative_templates(relation: &Relation) -> Vec<Template> {
    let patterns: &[&str] = match relation {
        Relation::CapitalCity => &CAPITAL_NARRATIVE,
        Relation::FamousFor => &FAMOUS_NARRATIVE,
        Relation::External(_) => &[],
    };
    patterns
        .iter()
        .enumerate()
        .map(|(i, p)| Template {
            id: format!("narrative.{}.{:02}", relation.label(), i + 1),
            style: Style::Narrative,
            relation: relation.clone(),
            pattern: p.to_string(),
        })
        .collect()
}

fn choice_list(n_choices: usize) -> String {
    (0..n_choices)
        .map(|i| format!("{}. {{choice{}}}", slot_letter(i), i + 1))
        .collect::<Vec<_>>()
        .join(" ")
}

/// The three referencing templates for a relation with `n_choices` entities
/// (true tail plus negatives) per passage.
pub fn referencing_templates(
    relation: &Relation,
    category: &Category,
    n_choices: usize,
) -> Vec<Template> {
    let head = head_slot(relation);
    let phrase = relation.phrase();
    let noun = category.label();
    let coloring = {
        let mut s = String::new();
        for i in 1..=n_choices {
            s.push_str(&format!("{{choice{i}}} is colored in {{color{i}}}. "));
        }
        s.push_str(&format!("The {phrase} of {{{head}}} is colored in {{answer_color}}."));
        s
    };
    let choices = choice_list(n_choices);
    let mc = format!("Which {noun} is the {phrase} of {{{head}}}? {choices} Answer: {{answer}}");
    let mc_first = format!(
        "In the following: {choices}, which {noun} is the {phrase} of {{{head}}}? Answer: {{answer}}"
    );
    [
        (Style::ReferencingColoring, coloring),
        (Style::ReferencingMc, mc),
        (Style::ReferencingMcChoicesFirst, mc_first),
    ]
    .into_iter()
    .map(|(style, pattern)| Template {
        id: format!(
            "{}.{}.{}.{}",
            style.label(),
            relation.label(),
            category.label(),
            n_choices
        ),
        style,
        relation: relation.clone(),
        pattern,
    })
    .collect()
}

/// Resolves a template from its id.
pub fn lookup(id: &str) -> Option<Template> {
    let mut parts = id.split('.');
    let style = Style::parse(parts.next()?)?;
    match style {
        Style::Narrative => {
            let relation = Relation::parse(parts.next()?);
            let idx: usize = parts.next()?.parse().ok()?;
            narrative_templates(&relation).into_iter().nth(idx.checked_sub(1)?)
        }
        s if s.is_referencing() => {
            let relation = Relation::parse(parts.next()?);
            let category = Category::parse(parts.next()?);
            let n: usize = parts.next()?.parse().ok()?;
            referencing_templates(&relation, &category, n)
                .into_iter()
                .find(|t| t.style == s)
        }
        _ => None,
    }
}

/// Substitutes `{name}` placeholders. Unknown or unterminated placeholders are errors.
pub fn fill(pattern: &str, values: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(pattern.len() + 32);
    let mut rest = pattern;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after
            .find('}')
            .ok_or_else(|| Error::Invalid(format!("unterminated placeholder in `{pattern}`")))?;
        let name = &after[..end];
        let value = values
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("no value for placeholder `{{{name}}}`")))?;
        out.push_str(value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Placeholder names appearing in a pattern.
pub fn placeholders(pattern: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut rest = pattern;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) => {
                names.push(after[..end].to_string());
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    names
}

/// Base placeholder bindings for a fact: its head and tail slots.
pub fn fact_bindings(fact: &FactTriplet) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert(head_slot(&fact.relation).to_string(), fact.head.clone());
    m.insert(tail_slot(&fact.category_of_tail).to_string(), fact.tail.clone());
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_templates_per_family() {
        assert_eq!(narrative_templates(&Relation::CapitalCity).len(), 9);
        assert_eq!(narrative_templates(&Relation::FamousFor).len(), 9);
        assert!(narrative_templates(&Relation::External("x".into())).is_empty());
    }

    #[test]
    fn fill_substitutes_and_rejects_unknown() {
        let mut v = BTreeMap::new();
        v.insert("country".to_string(), "Andoria".to_string());
        v.insert("city".to_string(), "Copperton".to_string());
        assert_eq!(
            fill(CAPITAL_NARRATIVE[0], &v).unwrap(),
            "The capital city of Andoria is Copperton."
        );
        assert!(fill("{nope}", &v).is_err());
        assert!(fill("{city", &v).is_err());
    }

    #[test]
    fn referencing_templates_match_listed_forms() {
        let ts = referencing_templates(&Relation::CapitalCity, &Category::City, 4);
        assert_eq!(
            ts[1].pattern,
            "Which city is the capital city of {country}? A. {choice1} B. {choice2} C. {choice3} D. {choice4} Answer: {answer}"
        );
        assert_eq!(
            ts[2].pattern,
            "In the following: A. {choice1} B. {choice2} C. {choice3} D. {choice4}, which city is the capital city of {country}? Answer: {answer}"
        );
        assert!(ts[0]
            .pattern
            .ends_with("The capital city of {country} is colored in {answer_color}."));
    }

    #[test]
    fn lookup_resolves_every_generated_id() {
        for r in [Relation::CapitalCity, Relation::FamousFor] {
            for t in narrative_templates(&r) {
                assert_eq!(lookup(&t.id).as_ref(), Some(&t));
            }
            for t in referencing_templates(&r, &Category::Animal, 4) {
                assert_eq!(lookup(&t.id).as_ref(), Some(&t));
            }
        }
        assert!(lookup("narrative.capital_city.10").is_none());
        assert!(lookup("bogus").is_none());
    }

    #[test]
    fn placeholder_scan() {
        assert_eq!(
            placeholders(FAMOUS_NARRATIVE[8]),
            vec!["animal".to_string(), "city".to_string()]
        );
    }
}
