//! Dialogue generation over HTTP.
//!
//! `POST <endpoint>` with `{"prompt": ..., "description": ...}`; the reply is
//! `{"rounds": [{"question": ..., "answer": ...}, ...]}` with three rounds.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use visionunite_core::forge::{DialogueGenerator, DialogueRound};

pub const ENDPOINT_ENV: &str = "VISIONUNITE_DIALOGUE_ENDPOINT";

#[derive(Debug, Serialize)]
struct Request<'a> {
    prompt: &'a str,
    description: &'a str,
}

#[derive(Debug, Deserialize)]
struct Reply {
    rounds: Vec<DialogueRound>,
}

pub struct HttpDialogueGenerator {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpDialogueGenerator {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(120))).build();
        Self { endpoint: endpoint.into(), agent: config.into() }
    }

    /// From [`ENDPOINT_ENV`], if set and non-empty.
    pub fn from_env() -> Option<Self> {
        std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.trim().is_empty()).map(Self::new)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl DialogueGenerator for HttpDialogueGenerator {
    fn generate(&mut self, prompt: &str, description: &str) -> visionunite_core::Result<Vec<DialogueRound>> {
        let fail = |e: String| visionunite_core::Error::Generator(format!("{}: {e}", self.endpoint));
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(Request { prompt, description })
            .map_err(|e| fail(e.to_string()))?;
        let reply: Reply = resp.body_mut().read_json().map_err(|e| fail(e.to_string()))?;
        Ok(reply.rounds)
    }
}
