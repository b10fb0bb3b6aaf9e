//! Declarative feature language.
//!
//! A feature is an aggregation over rows reached from the target table by a
//! path of foreign-key hops, optionally filtered and restricted to a trailing
//! time window, or one arithmetic combination of two such aggregations.
//! JSON is the single wire format: agents emit it, run artifacts store it.
//! See `docs/feature_spec_grammar.md` for the grammar.

mod canonical;
mod codec;
mod extract;
mod validate;

pub use canonical::CanonicalKey;
pub use extract::{extract_specs, find_json, ExtractError};
pub use validate::{validate_spec, ValidationError, ValidationLimits};

use std::cmp::Ordering;
use std::fmt;

use serde_json::Value as Json;
use thiserror::Error;

use crate::rdb::{parse_timestamp, Cell, ForeignKey, Value};

/// Parse failure naming the offending field, e.g. `left.path[0].fk`.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct DslError {
    pub field: String,
    pub message: String,
}

impl DslError {
    pub(crate) fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        DslError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HopDirection {
    ToChildren,
    ToParent,
}

impl HopDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            HopDirection::ToChildren => "to_children",
            HopDirection::ToParent => "to_parent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JoinHop {
    pub direction: HopDirection,
    pub fk: ForeignKey,
}

impl JoinHop {
    pub fn to_children(fk: ForeignKey) -> Self {
        JoinHop {
            direction: HopDirection::ToChildren,
            fk,
        }
    }

    pub fn to_parent(fk: ForeignKey) -> Self {
        JoinHop {
            direction: HopDirection::ToParent,
            fk,
        }
    }

    /// Table this hop starts from.
    pub fn from_table(&self) -> &str {
        match self.direction {
            HopDirection::ToChildren => &self.fk.parent_table,
            HopDirection::ToParent => &self.fk.child_table,
        }
    }

    /// Table this hop lands on.
    pub fn to_table(&self) -> &str {
        match self.direction {
            HopDirection::ToChildren => &self.fk.child_table,
            HopDirection::ToParent => &self.fk.parent_table,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    InSet,
}

impl CompareOp {
    pub const ALL: [CompareOp; 7] = [
        CompareOp::Eq,
        CompareOp::Ne,
        CompareOp::Lt,
        CompareOp::Le,
        CompareOp::Gt,
        CompareOp::Ge,
        CompareOp::InSet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CompareOp::Eq => "eq",
            CompareOp::Ne => "ne",
            CompareOp::Lt => "lt",
            CompareOp::Le => "le",
            CompareOp::Gt => "gt",
            CompareOp::Ge => "ge",
            CompareOp::InSet => "in_set",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
}

impl Literal {
    fn as_f64(&self) -> Option<f64> {
        match *self {
            Literal::Int(i) => Some(i as f64),
            Literal::Float(f) => Some(f),
            Literal::Bool(b) => Some(if b { 1.0 } else { 0.0 }),
            Literal::Str(_) => None,
        }
    }

    /// Orders a cell value against this literal. `None` when the two are
    /// not comparable.
    pub fn compare(&self, value: &Value) -> Option<Ordering> {
        match (value, self) {
            (Value::Str(a), Literal::Str(b)) => Some(a.as_str().cmp(b.as_str())),
            (Value::Time(t), Literal::Str(s)) => parse_timestamp(s).map(|b| t.cmp(&b)),
            (Value::Str(_), _) | (_, Literal::Str(_)) => None,
            (v, lit) => v.as_f64()?.partial_cmp(&lit.as_f64()?),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => write!(f, "{x}"),
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Str(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredicateValue {
    One(Literal),
    Set(Vec<Literal>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub column: String,
    pub op: CompareOp,
    pub literal: PredicateValue,
}

impl Predicate {
    /// Null cells never match, including under `ne`.
    pub fn matches(&self, cell: &Cell) -> bool {
        let Some(v) = cell else { return false };
        match (&self.literal, self.op) {
            (PredicateValue::Set(set), CompareOp::InSet) => {
                set.iter().any(|l| l.compare(v) == Some(Ordering::Equal))
            }
            (PredicateValue::One(l), op) => match l.compare(v) {
                None => false,
                Some(ord) => match op {
                    CompareOp::Eq => ord == Ordering::Equal,
                    CompareOp::Ne => ord != Ordering::Equal,
                    CompareOp::Lt => ord == Ordering::Less,
                    CompareOp::Le => ord != Ordering::Greater,
                    CompareOp::Gt => ord == Ordering::Greater,
                    CompareOp::Ge => ord != Ordering::Less,
                    CompareOp::InSet => false,
                },
            },
            (PredicateValue::Set(_), _) => false,
        }
    }
}

/// Trailing window: events in `[seed − days·86400, seed)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub days: f64,
}

impl Window {
    pub fn seconds(&self) -> f64 {
        self.days * 86_400.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aggregation {
    Count,
    CountDistinct,
    Sum,
    Mean,
    Min,
    Max,
    Std,
    Mode,
}

impl Aggregation {
    pub const ALL: [Aggregation; 8] = [
        Aggregation::Count,
        Aggregation::CountDistinct,
        Aggregation::Sum,
        Aggregation::Mean,
        Aggregation::Min,
        Aggregation::Max,
        Aggregation::Std,
        Aggregation::Mode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Count => "count",
            Aggregation::CountDistinct => "count_distinct",
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
            Aggregation::Min => "min",
            Aggregation::Max => "max",
            Aggregation::Std => "std",
            Aggregation::Mode => "mode",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    pub fn needs_numeric(self) -> bool {
        matches!(
            self,
            Aggregation::Sum
                | Aggregation::Mean
                | Aggregation::Min
                | Aggregation::Max
                | Aggregation::Std
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggTerm {
    pub path: Vec<JoinHop>,
    pub filter: Option<Predicate>,
    pub window: Option<Window>,
    pub agg: Aggregation,
    pub column: Option<String>,
}

impl AggTerm {
    /// Table the aggregation runs over, given the root table.
    pub fn terminal_table<'a>(&'a self, root: &'a str) -> &'a str {
        self.path.last().map(|h| h.to_table()).unwrap_or(root)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub const ALL: [ArithOp; 4] = [ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div];

    pub fn as_str(self) -> &'static str {
        match self {
            ArithOp::Add => "add",
            ArithOp::Sub => "sub",
            ArithOp::Mul => "mul",
            ArithOp::Div => "div",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }

    /// Null operands and division by zero give null.
    pub fn apply(self, a: Option<f64>, b: Option<f64>) -> Option<f64> {
        let (a, b) = (a?, b?);
        match self {
            ArithOp::Add => Some(a + b),
            ArithOp::Sub => Some(a - b),
            ArithOp::Mul => Some(a * b),
            ArithOp::Div if b == 0.0 => None,
            ArithOp::Div => Some(a / b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureExpr {
    Agg(AggTerm),
    Arith {
        op: ArithOp,
        left: AggTerm,
        right: AggTerm,
    },
}

impl FeatureExpr {
    pub fn terms(&self) -> Vec<&AggTerm> {
        match self {
            FeatureExpr::Agg(t) => vec![t],
            FeatureExpr::Arith { left, right, .. } => vec![left, right],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub expr: FeatureExpr,
}

impl FeatureSpec {
    pub fn agg(name: impl Into<String>, term: AggTerm) -> Self {
        FeatureSpec {
            name: name.into(),
            expr: FeatureExpr::Agg(term),
        }
    }

    /// Parses one spec object from JSON text.
    pub fn parse(text: &str) -> Result<Self, DslError> {
        let value: Json =
            serde_json::from_str(text).map_err(|e| DslError::new("<root>", e.to_string()))?;
        Self::from_json(&value)
    }

    pub fn from_json(value: &Json) -> Result<Self, DslError> {
        codec::spec_from_json(value)
    }

    pub fn to_json(&self) -> Json {
        codec::spec_to_json(self)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("json value serializes")
    }

    pub fn canonical_key(&self) -> CanonicalKey {
        CanonicalKey::of(self)
    }
}

impl serde::Serialize for FeatureSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&self.to_json(), s)
    }
}

impl<'de> serde::Deserialize<'de> for FeatureSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = <Json as serde::Deserialize>::deserialize(d)?;
        FeatureSpec::from_json(&value).map_err(serde::de::Error::custom)
    }
}

/// Operation-level alias for [`FeatureSpec::parse`].
pub fn parse_spec(text: &str) -> Result<FeatureSpec, DslError> {
    FeatureSpec::parse(text)
}

/// Operation-level alias for [`FeatureSpec::canonical_key`].
pub fn canonical_key(spec: &FeatureSpec) -> CanonicalKey {
    spec.canonical_key()
}
