//! Fine-grained AI feedback: atomic facts, verdicts, segment labels and
//! feedback records.

pub mod collect;
pub mod extract;
pub mod facts;
pub mod labels;
pub mod record;
pub mod templates;
pub mod verify;

pub use collect::{
    collect_feedback, Caption, Captioner, CollectConfig, CollectionReport, GoldCaptioner,
    InjectingCaptioner,
};
pub use extract::{
    extract_facts_rule_based, parse_extraction_reply, ExtractRequest, FactExtractor,
    RuleBasedExtractor,
};
pub use facts::{AtomicFact, Canonical, Category, ExtractedFacts};
pub use labels::{aggregate_category, aggregate_labels, group_verdicts, SegmentLabels, NO_FACT};
pub use record::{read_records, write_records, FeedbackRecord, Provenance, RECORD_SCHEMA_VERSION};
pub use templates::{PromptTemplates, SAMPLING_PROMPT};
pub use verify::{
    parse_yes_no, verify_fact, FactVerdict, FactVerifier, OracleVerifier, VerdictSource,
};
