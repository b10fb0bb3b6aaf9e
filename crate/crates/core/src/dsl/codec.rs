use serde_json::{json, Map, Value as Json};

use super::{
    AggTerm, Aggregation, ArithOp, CompareOp, DslError, FeatureExpr, FeatureSpec, HopDirection,
    JoinHop, Literal, Predicate, PredicateValue, Window,
};
use crate::rdb::ForeignKey;

const TERM_FIELDS: [&str; 5] = ["path", "filter", "window", "agg", "column"];
const ARITH_FIELDS: [&str; 3] = ["op", "left", "right"];

fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

fn as_object<'a>(v: &'a Json, at: &str) -> Result<&'a Map<String, Json>, DslError> {
    v.as_object()
        .ok_or_else(|| DslError::new(at_or_root(at), "expected an object"))
}

fn at_or_root(at: &str) -> String {
    if at.is_empty() {
        "<root>".into()
    } else {
        at.to_string()
    }
}

fn reject_unknown(obj: &Map<String, Json>, allowed: &[&str], at: &str) -> Result<(), DslError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(DslError::new(join(at, k), "unknown field")),
        None => Ok(()),
    }
}

fn req_str<'a>(obj: &'a Map<String, Json>, key: &str, at: &str) -> Result<&'a str, DslError> {
    match obj.get(key) {
        None | Some(Json::Null) => Err(DslError::new(join(at, key), "missing required field")),
        Some(Json::String(s)) => Ok(s),
        Some(_) => Err(DslError::new(join(at, key), "expected a string")),
    }
}

fn opt<'a>(obj: &'a Map<String, Json>, key: &str) -> Option<&'a Json> {
    obj.get(key).filter(|v| !v.is_null())
}

pub(super) fn spec_from_json(v: &Json) -> Result<FeatureSpec, DslError> {
    let obj = as_object(v, "")?;
    let name = req_str(obj, "name", "")?.trim().to_string();
    if name.is_empty() {
        return Err(DslError::new("name", "must not be empty"));
    }
    let is_arith = obj.contains_key("left") || obj.contains_key("right") || obj.contains_key("op");
    let expr = if is_arith {
        let mut allowed = vec!["name"];
        allowed.extend(ARITH_FIELDS);
        reject_unknown(obj, &allowed, "")?;
        let op_s = req_str(obj, "op", "")?;
        let op = ArithOp::parse(op_s).ok_or_else(|| {
            DslError::new("op", format!("unknown arithmetic op {op_s:?} (add, sub, mul, div)"))
        })?;
        let left = obj
            .get("left")
            .ok_or_else(|| DslError::new("left", "missing required field"))?;
        let right = obj
            .get("right")
            .ok_or_else(|| DslError::new("right", "missing required field"))?;
        FeatureExpr::Arith {
            op,
            left: term_from_json(as_object(left, "left")?, "left")?,
            right: term_from_json(as_object(right, "right")?, "right")?,
        }
    } else {
        let mut allowed = vec!["name"];
        allowed.extend(TERM_FIELDS);
        reject_unknown(obj, &allowed, "")?;
        FeatureExpr::Agg(term_from_json(obj, "")?)
    };
    Ok(FeatureSpec { name, expr })
}

fn term_from_json(obj: &Map<String, Json>, at: &str) -> Result<AggTerm, DslError> {
    if !at.is_empty() {
        reject_unknown(obj, &TERM_FIELDS, at)?;
    }
    let agg_s = req_str(obj, "agg", at)?;
    let agg = Aggregation::parse(agg_s).ok_or_else(|| {
        DslError::new(
            join(at, "agg"),
            format!(
                "unknown agg {agg_s:?} (count, count_distinct, sum, mean, min, max, std, mode)"
            ),
        )
    })?;
    let column = match opt(obj, "column") {
        None => None,
        Some(Json::String(s)) => Some(s.clone()),
        Some(_) => return Err(DslError::new(join(at, "column"), "expected a string")),
    };
    match (agg, &column) {
        (Aggregation::Count, Some(_)) => {
            return Err(DslError::new(join(at, "column"), "count takes no column"))
        }
        (Aggregation::Count, None) | (_, Some(_)) => {}
        (a, None) => {
            return Err(DslError::new(
                join(at, "column"),
                format!("{} requires column", a.as_str()),
            ))
        }
    }

    let path = match opt(obj, "path") {
        None => Vec::new(),
        Some(Json::Array(hops)) => hops
            .iter()
            .enumerate()
            .map(|(i, h)| hop_from_json(h, &join(at, &format!("path[{i}]"))))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(DslError::new(join(at, "path"), "expected an array of hops")),
    };
    let filter = opt(obj, "filter")
        .map(|f| predicate_from_json(f, &join(at, "filter")))
        .transpose()?;
    let window = opt(obj, "window")
        .map(|w| window_from_json(w, &join(at, "window")))
        .transpose()?;
    Ok(AggTerm {
        path,
        filter,
        window,
        agg,
        column,
    })
}

fn hop_from_json(v: &Json, at: &str) -> Result<JoinHop, DslError> {
    let obj = as_object(v, at)?;
    reject_unknown(obj, &["direction", "fk"], at)?;
    let dir_s = req_str(obj, "direction", at)?;
    let direction = match dir_s {
        "to_children" => HopDirection::ToChildren,
        "to_parent" => HopDirection::ToParent,
        other => {
            return Err(DslError::new(
                join(at, "direction"),
                format!("unknown direction {other:?} (to_children, to_parent)"),
            ))
        }
    };
    let fk_at = join(at, "fk");
    let fk_v = obj
        .get("fk")
        .ok_or_else(|| DslError::new(fk_at.clone(), "missing required field"))?;
    let fk_obj = as_object(fk_v, &fk_at)?;
    let fields = ["child_table", "child_column", "parent_table", "parent_column"];
    reject_unknown(fk_obj, &fields, &fk_at)?;
    let fk = ForeignKey {
        child_table: req_str(fk_obj, "child_table", &fk_at)?.to_string(),
        child_column: req_str(fk_obj, "child_column", &fk_at)?.to_string(),
        parent_table: req_str(fk_obj, "parent_table", &fk_at)?.to_string(),
        parent_column: req_str(fk_obj, "parent_column", &fk_at)?.to_string(),
    };
    Ok(JoinHop { direction, fk })
}

fn literal_from_json(v: &Json, at: &str) -> Result<Literal, DslError> {
    match v {
        Json::Bool(b) => Ok(Literal::Bool(*b)),
        Json::String(s) => Ok(Literal::Str(s.clone())),
        Json::Number(n) => match n.as_i64() {
            Some(i) => Ok(Literal::Int(i)),
            None => n
                .as_f64()
                .filter(|f| f.is_finite())
                .map(Literal::Float)
                .ok_or_else(|| DslError::new(at, "number out of range")),
        },
        _ => Err(DslError::new(at, "expected a number, string, or boolean")),
    }
}

fn predicate_from_json(v: &Json, at: &str) -> Result<Predicate, DslError> {
    let obj = as_object(v, at)?;
    reject_unknown(obj, &["column", "op", "literal"], at)?;
    let column = req_str(obj, "column", at)?.to_string();
    let op_s = req_str(obj, "op", at)?;
    let op = CompareOp::parse(op_s).ok_or_else(|| {
        DslError::new(
            join(at, "op"),
            format!("unknown comparison {op_s:?} (eq, ne, lt, le, gt, ge, in_set)"),
        )
    })?;
    let lit_at = join(at, "literal");
    let lit = opt(obj, "literal").ok_or_else(|| DslError::new(&lit_at, "missing required field"))?;
    let literal = match (op, lit) {
        (CompareOp::InSet, Json::Array(items)) => {
            if items.is_empty() {
                return Err(DslError::new(lit_at, "in_set needs at least one value"));
            }
            PredicateValue::Set(
                items
                    .iter()
                    .enumerate()
                    .map(|(i, x)| literal_from_json(x, &format!("{lit_at}[{i}]")))
                    .collect::<Result<_, _>>()?,
            )
        }
        (CompareOp::InSet, _) => return Err(DslError::new(lit_at, "in_set expects an array")),
        (_, Json::Array(_)) => {
            return Err(DslError::new(lit_at, format!("{} expects a single value", op.as_str())))
        }
        (_, x) => PredicateValue::One(literal_from_json(x, &lit_at)?),
    };
    Ok(Predicate {
        column,
        op,
        literal,
    })
}

fn window_from_json(v: &Json, at: &str) -> Result<Window, DslError> {
    let obj = as_object(v, at)?;
    reject_unknown(obj, &["days"], at)?;
    let days = opt(obj, "days")
        .ok_or_else(|| DslError::new(join(at, "days"), "missing required field"))?
        .as_f64()
        .ok_or_else(|| DslError::new(join(at, "days"), "expected a number"))?;
    if !(days.is_finite() && days > 0.0) {
        return Err(DslError::new(join(at, "days"), "must be a positive number"));
    }
    Ok(Window { days })
}

pub(super) fn number(x: f64) -> Json {
    if x.fract() == 0.0 && x.abs() < 9.0e15 {
        json!(x as i64)
    } else {
        json!(x)
    }
}

pub(super) fn literal_to_json(l: &Literal) -> Json {
    match l {
        Literal::Int(i) => json!(i),
        Literal::Float(f) => json!(f),
        Literal::Bool(b) => json!(b),
        Literal::Str(s) => json!(s),
    }
}

pub(super) fn term_to_map(t: &AggTerm) -> Map<String, Json> {
    let mut m = Map::new();
    m.insert(
        "path".into(),
        Json::Array(
            t.path
                .iter()
                .map(|h| {
                    json!({
                        "direction": h.direction.as_str(),
                        "fk": {
                            "child_table": h.fk.child_table,
                            "child_column": h.fk.child_column,
                            "parent_table": h.fk.parent_table,
                            "parent_column": h.fk.parent_column,
                        }
                    })
                })
                .collect(),
        ),
    );
    if let Some(f) = &t.filter {
        let literal = match &f.literal {
            PredicateValue::One(l) => literal_to_json(l),
            PredicateValue::Set(s) => Json::Array(s.iter().map(literal_to_json).collect()),
        };
        m.insert(
            "filter".into(),
            json!({"column": f.column, "op": f.op.as_str(), "literal": literal}),
        );
    }
    if let Some(w) = &t.window {
        m.insert("window".into(), json!({ "days": number(w.days) }));
    }
    m.insert("agg".into(), json!(t.agg.as_str()));
    if let Some(c) = &t.column {
        m.insert("column".into(), json!(c));
    }
    m
}

pub(super) fn spec_to_json(spec: &FeatureSpec) -> Json {
    let mut m = match &spec.expr {
        FeatureExpr::Agg(t) => term_to_map(t),
        FeatureExpr::Arith { op, left, right } => {
            let mut m = Map::new();
            m.insert("op".into(), json!(op.as_str()));
            m.insert("left".into(), Json::Object(term_to_map(left)));
            m.insert("right".into(), Json::Object(term_to_map(right)));
            m
        }
    };
    m.insert("name".into(), json!(spec.name));
    Json::Object(m)
}

#[cfg(test)]
mod tests {
    use super::super::parse_spec;

    #[test]
    fn visit_diversity_spec_parses() {
        let s = parse_spec(
            r#"{"name": "ad_view_diversity",
                "path": [{"direction": "to_children", "fk": {"child_table": "VisitStream",
                  "child_column": "UserID", "parent_table": "UserInfo", "parent_column": "UserID"}}],
                "agg": "count_distinct", "column": "AdID"}"#,
        )
        .unwrap();
        assert_eq!(s.name, "ad_view_diversity");
        assert_eq!(s.expr.terms()[0].column.as_deref(), Some("AdID"));
    }

    #[test]
    fn mean_without_column_is_rejected() {
        let e = parse_spec(r#"{"name": "m", "agg": "mean"}"#).unwrap_err();
        assert_eq!(e.field, "column");
        assert!(e.message.contains("mean requires column"), "{e}");
    }

    #[test]
    fn ratio_of_two_counts() {
        let s = parse_spec(r#"{"name": "r", "op": "div", "left": {"agg": "count"}, "right": {"agg": "count"}}"#)
            .unwrap();
        assert_eq!(s.expr.terms().len(), 2);
    }

    #[test]
    fn errors_carry_the_field_path() {
        let e = parse_spec(r#"{"name": "r", "op": "add", "left": {"agg": "count"}, "right": {"agg": "sum", "colum": "x"}}"#)
            .unwrap_err();
        assert_eq!(e.field, "right.colum");
        let e = parse_spec(r#"{"name": "w", "agg": "count", "window": {"days": -1}}"#).unwrap_err();
        assert_eq!(e.field, "window.days");
        let e = parse_spec(r#"{"name": "f", "agg": "count", "filter": {"column": "a", "op": "in_set", "literal": 3}}"#)
            .unwrap_err();
        assert_eq!(e.field, "filter.literal");
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"name": "x", "op": "sub",
            "left": {"agg": "max", "column": "a", "filter": {"column": "k", "op": "in_set", "literal": ["a", 2, true]}},
            "right": {"agg": "std", "column": "b", "window": {"days": 7.5}}}"#;
        let s = parse_spec(text).unwrap();
        assert_eq!(parse_spec(&s.to_json_string()).unwrap(), s);
    }
}
