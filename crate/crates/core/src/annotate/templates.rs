use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLING_PROMPT: &str = "Describe this image in detail.";

const FACT_EXTRACTION: &str = include_str!("../../templates/fact_extraction.txt");
const VERIFICATION: &str = include_str!("../../templates/verification.txt");

pub const CONTEXT_SLOT: &str = "{context}";
pub const SUB_SENTENCE_SLOT: &str = "{sub_sentence}";
pub const FACT_SLOT: &str = "{fact}";

/// Prompt templates for remote fact extraction and verification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub fact_extraction: String,
    pub verification: String,
    pub sampling_prompt: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            fact_extraction: FACT_EXTRACTION.to_string(),
            verification: VERIFICATION.to_string(),
            sampling_prompt: SAMPLING_PROMPT.to_string(),
        }
    }
}

fn check_slots(name: &str, template: &str, slots: &[&str]) -> Result<()> {
    for slot in slots {
        let n = template.matches(slot).count();
        if n != 1 {
            return Err(Error::Config(format!(
                "{name} template has {n} occurrences of {slot}, expected exactly one"
            )));
        }
    }
    Ok(())
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<()> {
        check_slots(
            "fact extraction",
            &self.fact_extraction,
            &[CONTEXT_SLOT, SUB_SENTENCE_SLOT],
        )?;
        check_slots("verification", &self.verification, &[FACT_SLOT])
    }

    pub fn fill_extraction(&self, context: &str, sub_sentence: &str) -> String {
        // Substitute the sub-sentence first so a context containing the
        // literal slot text cannot be re-expanded.
        let (head, tail) = self
            .fact_extraction
            .split_once(SUB_SENTENCE_SLOT)
            .unwrap_or((&self.fact_extraction, ""));
        let head = head.replacen(CONTEXT_SLOT, context, 1);
        format!("{head}{sub_sentence}{tail}")
    }

    pub fn fill_verification(&self, fact: &str) -> String {
        self.verification.replacen(FACT_SLOT, fact, 1)
    }
}
