//! Facts, templates, corpora, the co-occurrence audit, evaluation tasks and
//! the tokenizer.

pub mod audit;
pub mod facts;
pub mod render;
pub mod tasks;
pub mod templates;
pub mod vocab;
pub mod world;

pub use audit::{audit_cooccurrence, CooccurrenceAudit};
pub use facts::{load_builtin_facts, Category, FactRegistry, FactTriplet, Relation};
pub use render::{render_narrative, render_referencing, rerender, Passage, SeedDraws};
pub use tasks::{
    builtin_animal_facts, generate_eval_tasks, AnimalPropertyFact, EvalItem, Task,
};
pub use templates::{Style, Template};
pub use vocab::Vocabulary;
pub use world::{build_base_world, BaseWorld, WorldConfig};
