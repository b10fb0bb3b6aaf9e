use std::fmt;

use serde_json::Value as Json;

use super::FeatureSpec;

/// A spec (or the whole response) that could not be turned into a
/// [`FeatureSpec`]. `index` is the array position when one element failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractError {
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for ExtractError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "spec #{i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Finds the first JSON value embedded in `text` that starts with `[` or `{`
/// and satisfies `accept`. Code fences and surrounding prose are skipped.
pub fn find_json(text: &str, accept: impl Fn(&Json) -> bool) -> Option<Json> {
    for (pos, ch) in text.char_indices() {
        if ch != '[' && ch != '{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[pos..]).into_iter::<Json>();
        if let Some(Ok(v)) = stream.next() {
            if accept(&v) {
                return Some(v);
            }
        }
    }
    None
}

fn is_spec_array(v: &Json) -> bool {
    match v {
        Json::Array(items) => items.is_empty() || items.iter().any(Json::is_object),
        _ => false,
    }
}

/// Pulls the first top-level array of spec objects out of free-form agent
/// text. Elements are parsed independently so one bad spec does not poison
/// the batch.
pub fn extract_specs(text: &str) -> (Vec<FeatureSpec>, Vec<ExtractError>) {
    let Some(Json::Array(items)) = find_json(text, is_spec_array) else {
        return (
            Vec::new(),
            vec![ExtractError {
                index: None,
                message: "no JSON array of feature specs found".into(),
            }],
        );
    };
    let mut specs = Vec::new();
    let mut errors = Vec::new();
    for (i, item) in items.iter().enumerate() {
        match FeatureSpec::from_json(item) {
            Ok(s) => specs.push(s),
            Err(e) => errors.push(ExtractError {
                index: Some(i),
                message: e.to_string(),
            }),
        }
    }
    (specs, errors)
}
