use std::collections::HashMap;
use std::sync::Arc;

use fgaif_core::annotate::{
    parse_extraction_reply, parse_yes_no, AtomicFact, ExtractRequest, ExtractedFacts,
    FactExtractor, FactVerifier, PromptTemplates, VerdictSource,
};
use fgaif_core::world::scene::SceneGraph;
use fgaif_core::{Error, Result};

use crate::client::{ChatRequest, RemoteClient};

/// Extraction through a text-only chat model.
pub struct RemoteExtractor {
    client: Arc<RemoteClient>,
    templates: PromptTemplates,
}

impl RemoteExtractor {
    pub fn new(client: Arc<RemoteClient>, templates: PromptTemplates) -> Result<Self> {
        templates.validate()?;
        Ok(Self { client, templates })
    }

    fn request(&self, sub_sentence: &str, context: &str) -> ChatRequest {
        ChatRequest::text(self.templates.fill_extraction(context, sub_sentence))
    }
}

impl FactExtractor for RemoteExtractor {
    fn name(&self) -> String {
        format!("remote:{}", self.client.config().model)
    }

    fn extract(&self, sub_sentence: &str, context: &str) -> Result<ExtractedFacts> {
        let reply = self.client.complete(&self.request(sub_sentence, context))?;
        parse_extraction_reply(&reply)
    }

    fn extract_batch(&self, requests: &[ExtractRequest<'_>]) -> Vec<Result<ExtractedFacts>> {
        let chats: Vec<ChatRequest> = requests
            .iter()
            .map(|r| self.request(r.sub_sentence, r.context))
            .collect();
        self.client
            .complete_many(&chats)
            .into_iter()
            .map(|reply| parse_extraction_reply(&reply?))
            .collect()
    }
}

/// Verification through a vision-capable chat model. Each scene id must map
/// to an image reference the endpoint can resolve.
pub struct RemoteVerifier {
    client: Arc<RemoteClient>,
    templates: PromptTemplates,
    images: HashMap<String, String>,
}

impl RemoteVerifier {
    pub fn new(
        client: Arc<RemoteClient>,
        templates: PromptTemplates,
        images: HashMap<String, String>,
    ) -> Result<Self> {
        templates.validate()?;
        Ok(Self {
            client,
            templates,
            images,
        })
    }

    fn request(&self, scene: &SceneGraph, fact: &AtomicFact) -> Result<ChatRequest> {
        let image = self.images.get(&scene.scene_id).ok_or_else(|| {
            Error::Annotation(format!("no image reference for scene {}", scene.scene_id))
        })?;
        Ok(ChatRequest {
            text: self.templates.fill_verification(&fact.surface),
            image: Some(image.clone()),
        })
    }
}

impl FactVerifier for RemoteVerifier {
    fn source(&self) -> VerdictSource {
        VerdictSource::Remote
    }

    fn verify(&self, scene: &SceneGraph, fact: &AtomicFact) -> Result<u8> {
        let reply = self.client.complete(&self.request(scene, fact)?)?;
        parse_yes_no(&reply)
    }

    fn verify_batch(&self, requests: &[(&SceneGraph, &AtomicFact)]) -> Vec<Result<u8>> {
        let built: Vec<Result<ChatRequest>> =
            requests.iter().map(|(s, f)| self.request(s, f)).collect();
        let chats: Vec<ChatRequest> = built.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
        let mut replies = self.client.complete_many(&chats).into_iter();
        built
            .into_iter()
            .map(|b| {
                b?;
                let reply = replies.next().expect("one reply per built request")?;
                parse_yes_no(&reply)
            })
            .collect()
    }
}
