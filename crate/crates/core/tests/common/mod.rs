//! Shared test helpers: random databases and specs, a nested-loop reference
//! executor, a brute-force AUROC, and a scripted convergence fixture.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rand::seq::IndexedRandom;
use rand::Rng;
use relfeat_core::agents::ScriptedBackend;
use relfeat_core::dsl::{
    AggTerm, Aggregation, ArithOp, CompareOp, FeatureExpr, FeatureSpec, HopDirection, JoinHop,
    Literal, Predicate, PredicateValue, Window,
};
use relfeat_core::rdb::{
    Cell, ColumnDef, ColumnKind, ForeignKey, RelationalDatabase, Table, TaskSpec, Value,
};
use serde_json::json;

pub const BASE: i64 = 1_600_000_000;
pub const DAY: i64 = 86_400;

fn col(name: &str, kind: ColumnKind) -> ColumnDef {
    ColumnDef {
        name: name.into(),
        kind,
    }
}

/// Up to 5 tables, up to 200 rows each, integer keys, random FK topology
/// (both directions relative to the target), nulls and dangling references.
pub fn random_database<R: Rng>(rng: &mut R) -> (RelationalDatabase, TaskSpec) {
    let n_tables = rng.random_range(2..=5);
    let names: Vec<String> = (0..n_tables).map(|i| format!("t{i}")).collect();

    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 1..n_tables {
        let j = rng.random_range(0..i);
        edges.push(if rng.random_bool(0.7) { (i, j) } else { (j, i) });
    }
    if rng.random_bool(0.3) {
        let a = rng.random_range(0..n_tables);
        let b = rng.random_range(0..n_tables);
        if a != b {
            edges.push((a, b));
        }
    }

    let n_rows: Vec<usize> = (0..n_tables)
        .map(|i| if i == 0 { rng.random_range(5..=200) } else { rng.random_range(1..=200) })
        .collect();

    let mut fks = Vec::new();
    let mut fk_cols: Vec<Vec<(String, usize)>> = vec![Vec::new(); n_tables];
    for (k, &(c, p)) in edges.iter().enumerate() {
        let name = format!("fk{k}_{}", names[p]);
        fks.push(ForeignKey {
            child_table: names[c].clone(),
            child_column: name.clone(),
            parent_table: names[p].clone(),
            parent_column: "id".into(),
        });
        fk_cols[c].push((name, p));
    }

    let mut tables = BTreeMap::new();
    for i in 0..n_tables {
        let mut columns = vec![col("id", ColumnKind::Integer)];
        columns.extend(fk_cols[i].iter().map(|(n, _)| col(n, ColumnKind::Integer)));
        let has_time = if i == 0 { rng.random_bool(0.3) } else { rng.random_bool(0.75) };
        if has_time {
            columns.push(col("ts", ColumnKind::Timestamp));
        }
        for (n, k) in [
            ("a_int", ColumnKind::Integer),
            ("a_float", ColumnKind::Float),
            ("a_cat", ColumnKind::Categorical),
            ("a_bool", ColumnKind::Boolean),
        ] {
            if rng.random_bool(0.8) {
                columns.push(col(n, k));
            }
        }
        if i == 0 {
            columns.push(col("seed_time", ColumnKind::Timestamp));
            columns.push(col("split", ColumnKind::Categorical));
            columns.push(col("label", ColumnKind::Integer));
        }
        let mut rows = Vec::with_capacity(n_rows[i]);
        for r in 0..n_rows[i] {
            let mut row: Vec<Cell> = Vec::with_capacity(columns.len());
            for c in &columns {
                let cell = match c.name.as_str() {
                    "id" => Some(Value::Int(r as i64 + 1)),
                    "seed_time" => Some(Value::Time(BASE + rng.random_range(0..400 * DAY))),
                    "split" => Some(Value::Str(["train", "val", "test"].choose(rng).unwrap().to_string())),
                    "label" => Some(Value::Int(rng.random_range(0..=1))),
                    name if name.starts_with("fk") => {
                        let p = fk_cols[i].iter().find(|(n, _)| n == name).unwrap().1;
                        let x: f64 = rng.random();
                        if x < 0.05 {
                            None
                        } else if x < 0.1 {
                            Some(Value::Int(n_rows[p] as i64 + 1 + rng.random_range(0..5)))
                        } else {
                            Some(Value::Int(rng.random_range(1..=n_rows[p] as i64)))
                        }
                    }
                    _ => random_cell(rng, c.kind, 0.1),
                };
                row.push(cell);
            }
            rows.push(row);
        }
        let table = Table {
            name: names[i].clone(),
            columns,
            rows,
            primary_key: Some("id".into()),
            time_column: has_time.then(|| "ts".to_string()),
        };
        tables.insert(names[i].clone(), table);
    }
    let db = RelationalDatabase {
        tables,
        foreign_keys: fks,
        target_table: "t0".into(),
    };
    db.check().expect("generated database is consistent");
    let mut task = TaskSpec {
        description: "random".into(),
        target_table: "t0".into(),
        label_column: "label".into(),
        seed_time_column: Some("seed_time".into()),
        split_column: "split".into(),
        labels: Vec::new(),
        splits: Vec::new(),
        seed_times: None,
    };
    task.bind(&db).expect("generated task binds");
    (db, task)
}

/// Random value of `kind`, null with probability `p_null`.
pub fn random_cell<R: Rng>(rng: &mut R, kind: ColumnKind, p_null: f64) -> Cell {
    if rng.random_bool(p_null) {
        return None;
    }
    Some(match kind {
        ColumnKind::Integer => Value::Int(rng.random_range(-5..=5)),
        ColumnKind::Float => Value::Float(rng.random_range(-10_000..=10_000) as f64 / 100.0),
        ColumnKind::Categorical | ColumnKind::Text => {
            Value::Str(["a", "b", "c", "d"].choose(rng).unwrap().to_string())
        }
        ColumnKind::Boolean => Value::Bool(rng.random()),
        ColumnKind::Timestamp => Value::Time(BASE + rng.random_range(0..400 * DAY)),
    })
}

fn random_literal<R: Rng>(rng: &mut R, kind: ColumnKind) -> Literal {
    match kind {
        ColumnKind::Integer => {
            if rng.random_bool(0.8) {
                Literal::Int(rng.random_range(-5..=5))
            } else {
                Literal::Float(rng.random_range(-10..=10) as f64 / 2.0)
            }
        }
        ColumnKind::Float => Literal::Float(rng.random_range(-10_000..=10_000) as f64 / 100.0),
        ColumnKind::Categorical | ColumnKind::Text => {
            Literal::Str(["a", "b", "c", "d", "e"].choose(rng).unwrap().to_string())
        }
        ColumnKind::Boolean => Literal::Bool(rng.random()),
        ColumnKind::Timestamp => Literal::Int(BASE + rng.random_range(0..400 * DAY)),
    }
}

fn random_term<R: Rng>(rng: &mut R, db: &RelationalDatabase, task: &TaskSpec) -> AggTerm {
    let mut path = Vec::new();
    let mut at = db.target_table.clone();
    for _ in 0..rng.random_range(0..=3) {
        let mut options = Vec::new();
        for fk in &db.foreign_keys {
            if fk.parent_table == at {
                options.push(JoinHop::to_children(fk.clone()));
            }
            if fk.child_table == at {
                options.push(JoinHop::to_parent(fk.clone()));
            }
        }
        let Some(hop) = options.choose(rng).cloned() else { break };
        at = hop.to_table().to_string();
        path.push(hop);
    }
    let table = &db.tables[&at];
    let usable: Vec<&ColumnDef> = table
        .columns
        .iter()
        .filter(|c| !task.is_reserved(&at, &c.name))
        .collect();
    let mut agg = *Aggregation::ALL.choose(rng).unwrap();
    let candidates: Vec<&&ColumnDef> = usable
        .iter()
        .filter(|c| !agg.needs_numeric() || c.kind.is_numeric())
        .collect();
    let column = if agg == Aggregation::Count {
        None
    } else {
        match candidates.choose(rng) {
            Some(c) => Some(c.name.clone()),
            None => {
                agg = Aggregation::Count;
                None
            }
        }
    };
    let filter = if rng.random_bool(0.4) {
        usable.choose(rng).map(|c| {
            let op = *[
                CompareOp::Eq,
                CompareOp::Ne,
                CompareOp::Lt,
                CompareOp::Le,
                CompareOp::Gt,
                CompareOp::Ge,
                CompareOp::InSet,
            ]
            .choose(rng)
            .unwrap();
            let op = if c.kind == ColumnKind::Boolean && !matches!(op, CompareOp::InSet) {
                *[CompareOp::Eq, CompareOp::Ne].choose(rng).unwrap()
            } else {
                op
            };
            let literal = if op == CompareOp::InSet {
                PredicateValue::Set((0..rng.random_range(1..=3)).map(|_| random_literal(rng, c.kind)).collect())
            } else {
                PredicateValue::One(random_literal(rng, c.kind))
            };
            Predicate {
                column: c.name.clone(),
                op,
                literal,
            }
        })
    } else {
        None
    };
    let window = (table.time_column.is_some() && rng.random_bool(0.3)).then(|| Window {
        days: *[1.0, 7.5, 30.0, 90.0, 365.0].choose(rng).unwrap(),
    });
    AggTerm {
        path,
        filter,
        window,
        agg,
        column,
    }
}

/// Random valid spec: one aggregation, or with probability 0.2 an
/// arithmetic combination of two.
pub fn random_spec<R: Rng>(rng: &mut R, db: &RelationalDatabase, task: &TaskSpec) -> FeatureSpec {
    let expr = if rng.random_bool(0.2) {
        FeatureExpr::Arith {
            op: *ArithOp::ALL.choose(rng).unwrap(),
            left: random_term(rng, db, task),
            right: random_term(rng, db, task),
        }
    } else {
        FeatureExpr::Agg(random_term(rng, db, task))
    };
    FeatureSpec {
        name: "f".into(),
        expr,
    }
}

/// A random spec that validates against the full schema, if one turns up
/// within 50 draws.
pub fn valid_spec<R: Rng>(rng: &mut R, db: &RelationalDatabase, task: &TaskSpec) -> Option<FeatureSpec> {
    let view = relfeat_core::rdb::SchemaView::full(db);
    (0..50)
        .map(|_| random_spec(rng, db, task))
        .find(|s| relfeat_core::dsl::validate_spec(s, &view, task, Default::default()).is_ok())
}

// ---- nested-loop reference executor ----

fn num(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) | Value::Time(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        Value::Bool(b) => Some(*b as i64 as f64),
        Value::Str(_) => None,
    }
}

fn same_key(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Some(Value::Int(x)), Some(Value::Int(y))) => x == y,
        (Some(Value::Str(x)), Some(Value::Str(y))) => x == y,
        _ => false,
    }
}

fn time_of(cell: &Cell) -> Option<i64> {
    match cell {
        Some(Value::Time(t)) | Some(Value::Int(t)) => Some(*t),
        _ => None,
    }
}

fn lit_cmp(v: &Value, l: &Literal) -> Option<Ordering> {
    let lf = match l {
        Literal::Int(i) => Some(*i as f64),
        Literal::Float(f) => Some(*f),
        Literal::Bool(b) => Some(*b as i64 as f64),
        Literal::Str(_) => None,
    };
    match (v, l) {
        (Value::Str(a), Literal::Str(b)) => Some(a.as_str().cmp(b.as_str())),
        (Value::Str(_), _) | (_, Literal::Str(_)) => None,
        _ => num(v)?.partial_cmp(&lf?),
    }
}

fn pred_holds(p: &Predicate, cell: &Cell) -> bool {
    let Some(v) = cell else { return false };
    match &p.literal {
        PredicateValue::Set(set) => {
            p.op == CompareOp::InSet && set.iter().any(|l| lit_cmp(v, l) == Some(Ordering::Equal))
        }
        PredicateValue::One(l) => match (lit_cmp(v, l), p.op) {
            (None, _) => false,
            (Some(o), CompareOp::Eq) => o == Ordering::Equal,
            (Some(o), CompareOp::Ne) => o != Ordering::Equal,
            (Some(o), CompareOp::Lt) => o == Ordering::Less,
            (Some(o), CompareOp::Le) => o != Ordering::Greater,
            (Some(o), CompareOp::Gt) => o == Ordering::Greater,
            (Some(o), CompareOp::Ge) => o != Ordering::Less,
            (Some(_), CompareOp::InSet) => false,
        },
    }
}

fn reference_term(db: &RelationalDatabase, task: &TaskSpec, t: &AggTerm, row: usize) -> Option<f64> {
    let seed = task.seed_time(row);
    let visible = |table: &Table, r: usize| match (seed, table.time_column_index()) {
        (Some(s), Some(tc)) => time_of(&table.rows[r][tc]).is_some_and(|e| e < s),
        _ => true,
    };
    let mut at = db.target();
    let mut rows = vec![row];
    for hop in &t.path {
        let to = &db.tables[hop.to_table()];
        let mut next = Vec::new();
        for &r in &rows {
            let (from_col, to_col) = match hop.direction {
                HopDirection::ToChildren => (&hop.fk.parent_column, &hop.fk.child_column),
                HopDirection::ToParent => (&hop.fk.child_column, &hop.fk.parent_column),
            };
            let key = &at.rows[r][at.column_index(from_col).unwrap()];
            let tc = to.column_index(to_col).unwrap();
            for c in 0..to.rows.len() {
                if same_key(key, &to.rows[c][tc]) && visible(to, c) {
                    next.push(c);
                }
            }
        }
        at = to;
        rows = next;
    }
    if let Some(p) = &t.filter {
        let ci = at.column_index(&p.column).unwrap();
        rows.retain(|&r| pred_holds(p, &at.rows[r][ci]));
    }
    if let (Some(w), Some(s)) = (t.window, seed) {
        let tc = at.time_column_index().unwrap();
        let lo = s as f64 - w.days * DAY as f64;
        rows.retain(|&r| time_of(&at.rows[r][tc]).is_some_and(|e| e < s && e as f64 >= lo));
    }
    if t.agg == Aggregation::Count {
        return Some(rows.len() as f64);
    }
    let ci = at.column_index(t.column.as_ref().unwrap()).unwrap();
    let vals: Vec<&Value> = rows.iter().filter_map(|&r| at.rows[r][ci].as_ref()).collect();
    let ident = |v: &Value| match v {
        Value::Float(f) if *f == 0.0 => "f0".to_string(),
        Value::Float(f) => format!("f{}", f.to_bits()),
        Value::Int(i) | Value::Time(i) => format!("i{i}"),
        Value::Bool(b) => format!("b{b}"),
        Value::Str(s) => format!("s{s}"),
    };
    match t.agg {
        Aggregation::CountDistinct => {
            let mut keys: Vec<String> = vals.iter().map(|v| ident(v)).collect();
            keys.sort();
            keys.dedup();
            Some(keys.len() as f64)
        }
        Aggregation::Mode => {
            if vals.is_empty() {
                return None;
            }
            let mut freq: HashMap<String, usize> = HashMap::new();
            for v in &vals {
                *freq.entry(ident(v)).or_insert(0) += 1;
            }
            Some(*freq.values().max().unwrap() as f64 / vals.len() as f64)
        }
        agg => {
            let xs: Vec<f64> = vals.iter().filter_map(|v| num(v)).collect();
            if xs.is_empty() {
                return None;
            }
            let n = xs.len() as f64;
            let mut sum = 0.0;
            for x in &xs {
                sum += x;
            }
            Some(match agg {
                Aggregation::Sum => sum,
                Aggregation::Mean => sum / n,
                Aggregation::Min => xs.iter().cloned().fold(f64::MAX, f64::min),
                Aggregation::Max => xs.iter().cloned().fold(f64::MIN, f64::max),
                Aggregation::Std => {
                    let m = sum / n;
                    let mut ss = 0.0;
                    for x in &xs {
                        ss += (x - m).powi(2);
                    }
                    (ss / n).sqrt()
                }
                _ => unreachable!(),
            })
        }
    }
}

/// Feature value for one target row computed by brute-force scans.
pub fn reference_value(db: &RelationalDatabase, task: &TaskSpec, spec: &FeatureSpec, row: usize) -> Option<f64> {
    let v = match &spec.expr {
        FeatureExpr::Agg(t) => reference_term(db, task, t, row),
        FeatureExpr::Arith { op, left, right } => {
            let a = reference_term(db, task, left, row)?;
            let b = reference_term(db, task, right, row)?;
            match op {
                ArithOp::Add => Some(a + b),
                ArithOp::Sub => Some(a - b),
                ArithOp::Mul => Some(a * b),
                ArithOp::Div => (b != 0.0).then(|| a / b),
            }
        }
    };
    v.filter(|x| !x.is_nan())
}

/// Exact for counts, |Δ| ≤ 1e-9 otherwise; infinities must match exactly.
pub fn values_agree(spec: &FeatureSpec, got: Option<f64>, want: Option<f64>) -> bool {
    let exact = matches!(&spec.expr, FeatureExpr::Agg(t) if matches!(t.agg, Aggregation::Count | Aggregation::CountDistinct));
    match (got, want) {
        (None, None) => true,
        (Some(a), Some(b)) if exact => a == b,
        (Some(a), Some(b)) if a.is_infinite() || b.is_infinite() => a == b,
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
        _ => false,
    }
}

/// Rewrites every non-key, non-time cell of rows stamped at or after `seed`,
/// except the root row itself. Returns the number of rows touched.
pub fn scramble_future<R: Rng>(db: &mut RelationalDatabase, task: &TaskSpec, root: usize, seed: i64, rng: &mut R) -> usize {
    let target = db.target_table.clone();
    let mut touched = 0;
    for (name, table) in db.tables.iter_mut() {
        let Some(tc) = table.time_column_index() else { continue };
        let protected: Vec<bool> = table
            .columns
            .iter()
            .map(|c| {
                Some(&c.name) == table.primary_key.as_ref()
                    || Some(&c.name) == table.time_column.as_ref()
                    || task.is_reserved(name, &c.name)
            })
            .collect();
        let kinds: Vec<_> = table.columns.iter().map(|c| c.kind).collect();
        for (r, row) in table.rows.iter_mut().enumerate() {
            if *name == target && r == root {
                continue;
            }
            let future = match &row[tc] {
                Some(v) => v.as_time().is_some_and(|e| e >= seed),
                None => false,
            };
            if !future {
                continue;
            }
            touched += 1;
            for (c, cell) in row.iter_mut().enumerate() {
                if !protected[c] {
                    *cell = random_cell(rng, kinds[c], 0.2);
                }
            }
        }
    }
    touched
}

// ---- AUROC ----

/// Pairwise definition: P(score_pos > score_neg) + ½ P(tie).
pub fn brute_force_auroc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

// ---- planted-signal fixtures ----

pub fn events_fk() -> ForeignKey {
    ForeignKey {
        child_table: "events".into(),
        child_column: "user_id".into(),
        parent_table: "users".into(),
        parent_column: "user_id".into(),
    }
}

pub fn events_term(agg: Aggregation, column: Option<&str>, filter: Option<Predicate>) -> AggTerm {
    AggTerm {
        path: vec![JoinHop::to_children(events_fk())],
        filter,
        window: None,
        agg,
        column: column.map(str::to_string),
    }
}

pub fn clicks_spec() -> FeatureSpec {
    FeatureSpec::agg(
        "clicks",
        events_term(
            Aggregation::Count,
            None,
            Some(Predicate {
                column: "kind".into(),
                op: CompareOp::Eq,
                literal: PredicateValue::One(Literal::Str("click".into())),
            }),
        ),
    )
}

pub fn avg_amount_spec() -> FeatureSpec {
    FeatureSpec::agg("avg_amount", events_term(Aggregation::Mean, Some("amount"), None))
}

pub fn total_events_spec() -> FeatureSpec {
    FeatureSpec::agg("event_count", events_term(Aggregation::Count, None, None))
}

fn array(specs: &[FeatureSpec]) -> String {
    serde_json::to_string_pretty(specs).unwrap()
}

/// Scripted replies for the planted fixture: iteration 1 proposes a partial
/// signal, iteration 2 the full count, every later iteration proposes
/// nothing. Generation instance 2 of iteration 1 answers with prose only.
pub fn convergence_responses() -> BTreeMap<String, String> {
    let schema = json!({"tables": {
        "users": ["user_id", "age", "region", "seed_time", "split", "label"],
        "events": ["event_id", "user_id", "event_time", "kind", "amount"],
    }})
    .to_string();
    let mut again = clicks_spec();
    again.name = "click_count".into();
    let mut m = BTreeMap::new();
    m.insert("*/schema".to_string(), schema);
    m.insert(
        "iter01/generate/0".to_string(),
        format!("Here are my ideas:\n{}", array(&[clicks_spec(), avg_amount_spec()])),
    );
    m.insert("iter01/generate/1".to_string(), array(&[again]));
    m.insert("iter01/generate/2".to_string(), "I have no further ideas.".to_string());
    for i in 0..3 {
        m.insert(format!("iter02/generate/{i}"), array(&[total_events_spec(), clicks_spec()]));
    }
    m.insert("*/generate".to_string(), "[]".to_string());
    m.insert(
        "iter01/filter".to_string(),
        json!({"selected": ["clicks", "avg_amount"]}).to_string(),
    );
    m.insert(
        "iter02/filter".to_string(),
        json!({"selected": ["event_count"]}).to_string(),
    );
    m
}

pub fn convergence_backend() -> ScriptedBackend {
    ScriptedBackend::from_map(convergence_responses())
}

/// Writes the convergence fixture as a scripted-backend file.
pub fn write_convergence_fixture(path: &std::path::Path) {
    let v = json!({ "responses": convergence_responses() });
    std::fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}
