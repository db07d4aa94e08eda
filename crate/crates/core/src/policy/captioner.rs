use crate::annotate::{Caption, Captioner};
use crate::error::Result;
use crate::vocab::Vocab;
use crate::world::SceneGraph;

use super::model::Policy;
use super::rollout::sample_response;

/// Adapts a policy to the feedback-collection [`Captioner`] interface.
#[derive(Debug, Clone)]
pub struct PolicyCaptioner<'a> {
    pub policy: &'a Policy,
    pub vocab: &'a Vocab,
    pub temperature: f64,
}

impl Captioner for PolicyCaptioner<'_> {
    fn id(&self) -> String {
        self.policy
            .checkpoint_id()
            .unwrap_or_else(|_| "policy".into())
    }

    fn caption(&self, scene: &SceneGraph, prompt: &str, seed: u64) -> Result<Caption> {
        let (text, _) = sample_response(
            self.policy,
            self.vocab,
            &scene.observation(),
            prompt,
            self.temperature,
            seed,
        )?;
        Ok(Caption {
            text,
            injection: None,
        })
    }
}
