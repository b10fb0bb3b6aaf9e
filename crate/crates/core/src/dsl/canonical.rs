use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use sha2::{Digest, Sha256};

use super::codec::{literal_to_json, term_to_map};
use super::{AggTerm, FeatureExpr, FeatureSpec, Literal, PredicateValue};

/// Name-independent identity of a feature: SHA-256 over the canonical JSON
/// of its semantic fields (sorted keys, normalized literals).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalKey(String);

impl CanonicalKey {
    pub fn of(spec: &FeatureSpec) -> Self {
        let text = canonical_text(spec);
        let digest = Sha256::digest(text.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        CanonicalKey(hex)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0[..16])
    }
}

fn normalize_literal(l: &Literal) -> Literal {
    match *l {
        Literal::Float(x) if x.fract() == 0.0 && x.abs() < 9.0e15 => Literal::Int(x as i64),
        _ => l.clone(),
    }
}

fn canonical_term(t: &AggTerm) -> Json {
    let mut t = t.clone();
    if let Some(f) = t.filter.as_mut() {
        f.literal = match &f.literal {
            PredicateValue::One(l) => PredicateValue::One(normalize_literal(l)),
            PredicateValue::Set(s) => {
                let mut items: Vec<(String, Literal)> = s
                    .iter()
                    .map(normalize_literal)
                    .map(|l| (literal_to_json(&l).to_string(), l))
                    .collect();
                items.sort_by(|a, b| a.0.cmp(&b.0));
                items.dedup_by(|a, b| a.0 == b.0);
                PredicateValue::Set(items.into_iter().map(|(_, l)| l).collect())
            }
        };
    }
    Json::Object(term_to_map(&t))
}

/// The canonical JSON text the key hashes. serde_json's default map is
/// ordered, so key order is fixed.
pub fn canonical_text(spec: &FeatureSpec) -> String {
    let v = match &spec.expr {
        FeatureExpr::Agg(t) => canonical_term(t),
        FeatureExpr::Arith { op, left, right } => {
            let mut m = Map::new();
            m.insert("op".into(), Json::String(op.as_str().into()));
            m.insert("left".into(), canonical_term(left));
            m.insert("right".into(), canonical_term(right));
            Json::Object(m)
        }
    };
    v.to_string()
}
