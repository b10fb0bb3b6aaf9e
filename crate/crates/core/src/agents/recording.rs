use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{AgentBackend, BackendError};

/// One backend call as persisted under `transcripts/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub call_tag: String,
    pub temperature: f64,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// `iter01/generate/0` -> `iter01_generate_0.json`.
pub fn transcript_file_name(call_tag: &str) -> String {
    let safe: String = call_tag
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

/// Wraps a backend, writing every call to `dir` as it completes and keeping
/// an in-memory copy.
pub struct RecordingBackend<B> {
    inner: B,
    dir: Option<PathBuf>,
    log: Mutex<Vec<Transcript>>,
}

impl<B: AgentBackend> RecordingBackend<B> {
    pub fn new(inner: B, dir: Option<&Path>) -> std::io::Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(RecordingBackend {
            inner,
            dir: dir.map(Path::to_path_buf),
            log: Mutex::new(Vec::new()),
        })
    }

    /// Recorded calls sorted by tag.
    pub fn transcripts(&self) -> Vec<Transcript> {
        let mut t = self.log.lock().expect("transcript lock").clone();
        t.sort_by(|a, b| a.call_tag.cmp(&b.call_tag));
        t
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: AgentBackend> AgentBackend for RecordingBackend<B> {
    fn complete(&self, prompt: &str, temperature: f64, call_tag: &str) -> Result<String, BackendError> {
        let result = self.inner.complete(prompt, temperature, call_tag);
        let t = Transcript {
            call_tag: call_tag.to_string(),
            temperature,
            prompt: prompt.to_string(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        };
        if let Some(dir) = &self.dir {
            let text = serde_json::to_string_pretty(&t).expect("transcript serializes");
            fs::write(dir.join(transcript_file_name(call_tag)), text)?;
        }
        self.log.lock().expect("transcript lock").push(t);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ScriptedBackend;

    #[test]
    fn records_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let inner = ScriptedBackend::from_map([("iter01/filter", "{\"selected\": []}")]);
        let rec = RecordingBackend::new(inner, Some(dir.path())).unwrap();
        rec.complete("prompt text", 0.2, "iter01/filter").unwrap();
        assert!(rec.complete("p", 0.7, "iter01/generate/0").is_err());
        let t = rec.transcripts();
        assert_eq!(t.len(), 2);
        assert!(t[0].error.is_none() && t[1].error.is_some());
        assert!(dir.path().join("iter01_filter.json").exists());

        let replay = ScriptedBackend::from_transcript_dir(dir.path()).unwrap();
        assert_eq!(replay.lookup("iter01/filter"), Some("{\"selected\": []}"));
        assert_eq!(replay.lookup("iter01/generate/0"), None);
    }
}
