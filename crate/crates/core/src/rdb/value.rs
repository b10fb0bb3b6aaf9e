use std::fmt;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Integer,
    Float,
    Boolean,
    Categorical,
    Text,
    Timestamp,
}

impl ColumnKind {
    /// Kinds that sum/mean/min/max/std accept. Booleans count as 0/1 and
    /// timestamps as epoch seconds.
    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            ColumnKind::Integer | ColumnKind::Float | ColumnKind::Boolean | ColumnKind::Timestamp
        )
    }

    /// Join-key class: integer keys join integer keys, string keys join
    /// string keys. Other kinds cannot carry keys.
    pub fn key_class(self) -> Option<u8> {
        match self {
            ColumnKind::Integer => Some(0),
            ColumnKind::Categorical | ColumnKind::Text => Some(1),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Integer => "integer",
            ColumnKind::Float => "float",
            ColumnKind::Boolean => "boolean",
            ColumnKind::Categorical => "categorical",
            ColumnKind::Text => "text",
            ColumnKind::Timestamp => "timestamp",
        }
    }

    /// Parses one raw CSV field. Empty fields are handled by the caller.
    pub fn parse_cell(self, raw: &str) -> Option<Value> {
        let s = raw.trim();
        match self {
            ColumnKind::Integer => s.parse::<i64>().ok().map(Value::Int).or_else(|| {
                // accept "3.0" from float-formatted exports
                s.parse::<f64>()
                    .ok()
                    .filter(|f| f.fract() == 0.0 && f.abs() < 9.0e15)
                    .map(|f| Value::Int(f as i64))
            }),
            ColumnKind::Float => s.parse::<f64>().ok().map(Value::Float),
            ColumnKind::Boolean => match s.to_ascii_lowercase().as_str() {
                "true" | "t" | "1" | "yes" | "y" => Some(Value::Bool(true)),
                "false" | "f" | "0" | "no" | "n" => Some(Value::Bool(false)),
                _ => None,
            },
            ColumnKind::Categorical | ColumnKind::Text => Some(Value::Str(raw.to_string())),
            ColumnKind::Timestamp => parse_timestamp(s).map(Value::Time),
        }
    }
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Integer epoch seconds or ISO-8601 (date, date-time, or RFC 3339).
/// Naive date-times are read as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// A typed non-null cell value. Categorical and text share `Str`.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    /// Epoch seconds.
    Time(i64),
}

/// `None` is a missing cell, distinct from an empty string or zero.
pub type Cell = Option<Value>;

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Int(i) => Some(i as f64),
            Value::Float(f) => Some(f),
            Value::Bool(b) => Some(if b { 1.0 } else { 0.0 }),
            Value::Time(t) => Some(t as f64),
            Value::Str(_) => None,
        }
    }

    pub fn as_time(&self) -> Option<i64> {
        match *self {
            Value::Time(t) | Value::Int(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_binary(&self) -> Option<u8> {
        match *self {
            Value::Int(0) | Value::Bool(false) => Some(0),
            Value::Int(1) | Value::Bool(true) => Some(1),
            Value::Float(f) if f == 0.0 => Some(0),
            Value::Float(f) if f == 1.0 => Some(1),
            _ => None,
        }
    }

    pub fn as_key(&self) -> Option<Key> {
        match self {
            Value::Int(i) => Some(Key::Int(*i)),
            Value::Str(s) => Some(Key::Str(s.clone())),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) | Value::Time(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

/// Hashable join key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    Int(i64),
    Str(String),
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Int(i) => write!(f, "{i}"),
            Key::Str(s) => f.write_str(s),
        }
    }
}
