use std::collections::HashMap;

use crate::dsl::Aggregation;
use crate::rdb::{Table, Value};

#[derive(PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Distinct<'a> {
    Int(i64),
    Float(u64),
    Bool(bool),
    Str(&'a str),
}

fn distinct(v: &Value) -> Distinct<'_> {
    match v {
        Value::Int(i) | Value::Time(i) => Distinct::Int(*i),
        // -0.0 and 0.0 are the same value
        Value::Float(f) => Distinct::Float(if *f == 0.0 { 0 } else { f.to_bits() }),
        Value::Bool(b) => Distinct::Bool(*b),
        Value::Str(s) => Distinct::Str(s),
    }
}

/// Aggregates `column` over the multiset `rows` of `table`, ignoring nulls.
///
/// `count` counts rows and never yields null; `count_distinct` yields 0 on an
/// empty multiset. Every other aggregation yields null when no non-null
/// value remains. `mode` returns the modal value's frequency ratio and `std`
/// is the population standard deviation.
pub fn aggregate(agg: Aggregation, table: &Table, column: Option<usize>, rows: &[usize]) -> Option<f64> {
    if agg == Aggregation::Count {
        return Some(rows.len() as f64);
    }
    let col = column.expect("validated: aggregation has a column");
    let cells = rows.iter().filter_map(|&r| table.rows[r][col].as_ref());
    match agg {
        Aggregation::Count => unreachable!(),
        Aggregation::CountDistinct => {
            let mut seen: Vec<Distinct<'_>> = cells.map(distinct).collect();
            seen.sort_unstable();
            seen.dedup();
            Some(seen.len() as f64)
        }
        Aggregation::Mode => {
            let mut freq: HashMap<Distinct<'_>, usize> = HashMap::new();
            let mut n = 0usize;
            for v in cells {
                *freq.entry(distinct(v)).or_default() += 1;
                n += 1;
            }
            let top = freq.values().copied().max()?;
            Some(top as f64 / n as f64)
        }
        numeric => {
            let xs: Vec<f64> = cells.filter_map(Value::as_f64).collect();
            if xs.is_empty() {
                return None;
            }
            let n = xs.len() as f64;
            Some(match numeric {
                Aggregation::Sum => xs.iter().sum(),
                Aggregation::Mean => xs.iter().sum::<f64>() / n,
                Aggregation::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
                Aggregation::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Aggregation::Std => {
                    let mean = xs.iter().sum::<f64>() / n;
                    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
                }
                _ => unreachable!(),
            })
        }
    }
}
