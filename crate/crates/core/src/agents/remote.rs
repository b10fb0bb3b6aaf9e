use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::{AgentBackend, BackendError};

/// OpenAI-compatible chat-completions endpoint. The bearer token is read
/// from the environment variable named by `api_key_env`, never from config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "REFUGE_API_KEY".into(),
            timeout_secs: 120,
            max_retries: 3,
            initial_backoff_ms: 1000,
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without a bearer token", config.api_key_env);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Http(e.to_string()))?;
        Ok(RemoteBackend {
            config,
            api_key,
            client,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &Json) -> Result<String, (bool, BackendError)> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req
            .send()
            .map_err(|e| (true, BackendError::Http(e.to_string())))?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .map_err(|e| (true, BackendError::Http(e.to_string())))?;
        if !(200..300).contains(&status) {
            return Err((retryable(status), BackendError::Status { status, body: text }));
        }
        let v: Json = serde_json::from_str(&text)
            .map_err(|e| (false, BackendError::Malformed(e.to_string())))?;
        v.pointer("/choices/0/message/content")
            .and_then(Json::as_str)
            .map(str::to_string)
            .ok_or_else(|| (false, BackendError::Malformed("missing choices[0].message.content".into())))
    }
}

impl AgentBackend for RemoteBackend {
    fn complete(&self, prompt: &str, temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        });
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut tries = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((true, e)) if tries < self.config.max_retries => {
                    tries += 1;
                    log::warn!("{call_tag}: {e}; retry {tries} in {backoff:?}");
                    thread::sleep(backoff);
                    backoff *= 2;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}
