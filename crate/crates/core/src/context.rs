use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, EmbedRequest, Gateway, GatewayError, RoleModels};
use crate::model::{EmbeddingVector, Taxonomy};

/// Sampling settings per kind of call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub label_temperature: f64,
    pub label_max_tokens: u32,
    pub extract_temperature: f64,
    pub synthesis_temperature: f64,
    pub response_temperature: f64,
    pub long_max_tokens: u32,
    /// Texts per embedding request.
    pub embed_batch: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            label_temperature: 0.0,
            label_max_tokens: 256,
            extract_temperature: 0.6,
            synthesis_temperature: 0.6,
            response_temperature: 0.6,
            long_max_tokens: 32768,
            embed_batch: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Labeler,
    Classifier,
    Extractor,
    Synthesizer,
    Responder,
}

/// Parse-level warnings accumulated across calls.
#[derive(Debug, Default)]
pub struct Warnings {
    pub out_of_vocabulary: AtomicU64,
    pub unparseable_label: AtomicU64,
    pub multiple_mermaid_blocks: AtomicU64,
    pub unbalanced_boxed: AtomicU64,
}

impl Warnings {
    pub fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({
            "out_of_vocabulary": self.out_of_vocabulary.load(Ordering::Relaxed),
            "unparseable_label": self.unparseable_label.load(Ordering::Relaxed),
            "multiple_mermaid_blocks": self.multiple_mermaid_blocks.load(Ordering::Relaxed),
            "unbalanced_boxed": self.unbalanced_boxed.load(Ordering::Relaxed),
        })
    }
}

/// Everything an LLM-backed operation needs.
#[derive(Clone)]
pub struct LlmContext {
    pub gateway: Arc<Gateway>,
    pub models: RoleModels,
    pub taxonomy: Arc<Taxonomy>,
    pub params: GenerationParams,
    pub warnings: Arc<Warnings>,
}

impl LlmContext {
    pub fn new(gateway: Arc<Gateway>, models: RoleModels, taxonomy: Arc<Taxonomy>, params: GenerationParams) -> Self {
        LlmContext {
            gateway,
            models,
            taxonomy,
            params,
            warnings: Arc::new(Warnings::default()),
        }
    }

    pub fn request(&self, role: Role, prompt: String) -> ChatRequest {
        let p = &self.params;
        let (model, temperature, max_tokens) = match role {
            Role::Labeler => (&self.models.labeler, p.label_temperature, p.label_max_tokens),
            Role::Classifier => (&self.models.classifier, p.label_temperature, p.label_max_tokens),
            Role::Extractor => (&self.models.extractor, p.extract_temperature, p.long_max_tokens),
            Role::Synthesizer => (&self.models.synthesizer, p.synthesis_temperature, p.long_max_tokens),
            Role::Responder => (&self.models.responder, p.response_temperature, p.long_max_tokens),
        };
        ChatRequest::user(model.clone(), prompt, temperature, max_tokens)
    }

    pub fn complete(&self, role: Role, prompt: String) -> Result<String, GatewayError> {
        self.gateway.chat_complete(&self.request(role, prompt))
    }

    /// Embeds `texts` in batches of `params.embed_batch`, order preserved.
    pub fn embed_all(&self, instruction: Option<&str>, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.params.embed_batch.max(1)) {
            let req = EmbedRequest::new(self.models.embedder.clone(), instruction, chunk.to_vec());
            out.extend(self.gateway.embed(&req)?);
        }
        Ok(out)
    }
}
