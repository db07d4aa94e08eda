//! Synthetic grounded-captioning world: scenes, captions, hallucination
//! injection, the exact verification oracle and yes/no probes.

pub mod caption;
pub mod inject;
pub mod oracle;
pub mod pope;
pub mod scene;

pub use caption::{gold_clauses, parse_caption, render_gold_caption, Clause};
pub use inject::{inject_hallucination, InjectionEntry, InjectionKind, InjectionLog};
pub use oracle::oracle_verify;
pub use pope::{generate_pope_qa, Answer, CorpusStats, PopeMode, PopeQuestion};
pub use scene::{generate_corpus, generate_scene, SceneGraph, SceneLimits, SceneObject};
