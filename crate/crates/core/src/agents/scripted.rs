use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{AgentBackend, BackendError, Transcript};

/// Replays fixed replies keyed by call tag.
///
/// Fixture file: `{"responses": {"<tag>": "<reply>", ...}, "fallback": "<reply>"}`.
/// A tag is looked up exactly, then with its iteration replaced by `*`
/// (`*/generate/0`), then by role alone (`*/generate`), then the fallback.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedBackend {
    pub responses: BTreeMap<String, String>,
    #[serde(default)]
    pub fallback: Option<String>,
}

impl ScriptedBackend {
    pub fn from_map<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        ScriptedBackend {
            responses: entries.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let fixture = |message: String| BackendError::Fixture {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| fixture(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| fixture(e.to_string()))
    }

    /// Replays the successful calls recorded in a run's `transcripts/`.
    pub fn from_transcript_dir(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let mut responses = BTreeMap::new();
        let mut paths: Vec<_> = fs::read_dir(dir.as_ref())?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        paths.sort();
        for path in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
            let text = fs::read_to_string(&path)?;
            let t: Transcript = serde_json::from_str(&text).map_err(|e| BackendError::Fixture {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            if let Some(r) = t.response {
                responses.insert(t.call_tag, r);
            }
        }
        Ok(ScriptedBackend {
            responses,
            fallback: None,
        })
    }

    pub fn lookup(&self, call_tag: &str) -> Option<&str> {
        if let Some(r) = self.responses.get(call_tag) {
            return Some(r);
        }
        let mut parts = call_tag.splitn(2, '/');
        parts.next();
        if let Some(rest) = parts.next() {
            if let Some(r) = self.responses.get(&format!("*/{rest}")) {
                return Some(r);
            }
            let role = rest.split('/').next().unwrap_or(rest);
            if let Some(r) = self.responses.get(&format!("*/{role}")) {
                return Some(r);
            }
        }
        self.fallback.as_deref()
    }
}

impl AgentBackend for ScriptedBackend {
    fn complete(&self, _prompt: &str, _temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        self.lookup(call_tag)
            .map(str::to_string)
            .ok_or_else(|| BackendError::NoResponse(call_tag.to_string()))
    }
}
