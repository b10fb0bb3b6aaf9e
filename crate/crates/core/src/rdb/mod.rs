//! Relational database model: typed tables, primary/foreign keys, the
//! prediction task, and the schema view exposed to agents.

mod load;
mod subset;
mod value;

pub use load::{load_database, save_database, write_table_csv, LoadReport, LoadedDatabase};
pub use subset::{apply_subset, schema_descriptor, SchemaSubset, SchemaView, SubsetCorrection};
pub use value::{parse_timestamp, Cell, ColumnKind, Key, Value};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RdbError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("table {table}: {message}")]
    Csv { table: String, message: String },
    #[error("table {table}: column {column} is not declared in the manifest")]
    UndeclaredColumn { table: String, column: String },
    #[error("table {table}: declared column {column} is missing from the file")]
    MissingColumn { table: String, column: String },
    #[error("table {table}, row {row}, column {column}: cannot parse {raw:?} as {kind}")]
    BadCell {
        table: String,
        row: usize,
        column: String,
        raw: String,
        kind: ColumnKind,
    },
    #[error("table {table}: duplicate primary key value {value}")]
    DuplicateKey { table: String, value: String },
    #[error("table {table}: null primary key at row {row}")]
    NullKey { table: String, row: usize },
    #[error("schema: {0}")]
    Schema(String),
    #[error("label not binary: column {column} has value {value} at row {row}")]
    LabelNotBinary {
        column: String,
        row: usize,
        value: String,
    },
    #[error("split column {column}: row {row} has invalid split {value:?}")]
    BadSplit {
        column: String,
        row: usize,
        value: String,
    },
    #[error("invalid schema subset: {0}")]
    InvalidSubset(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub rows: Vec<Vec<Cell>>,
    pub primary_key: Option<String>,
    pub time_column: Option<String>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Event time (epoch seconds) of a row, if the table has a time column
    /// and the cell is non-null.
    pub fn event_time(&self, row: usize) -> Option<i64> {
        let idx = self.column_index(self.time_column.as_deref()?)?;
        self.rows[row][idx].as_ref().and_then(Value::as_time)
    }

    pub fn time_column_index(&self) -> Option<usize> {
        self.time_column
            .as_deref()
            .and_then(|c| self.column_index(c))
    }

    pub(crate) fn check_shape(&self) -> Result<(), RdbError> {
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(RdbError::Schema(format!(
                    "table {}: duplicate column {}",
                    self.name, c.name
                )));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(RdbError::Schema(format!(
                    "table {}: row {} has {} cells, expected {}",
                    self.name,
                    i,
                    row.len(),
                    self.columns.len()
                )));
            }
        }
        if let Some(pk) = &self.primary_key {
            if self.column_index(pk).is_none() {
                return Err(RdbError::Schema(format!(
                    "table {}: primary key {} is not a column",
                    self.name, pk
                )));
            }
        }
        if let Some(tc) = &self.time_column {
            match self.column(tc) {
                Some(c) if c.kind == ColumnKind::Timestamp => {}
                Some(c) => {
                    return Err(RdbError::Schema(format!(
                        "table {}: time column {} has type {}, expected timestamp",
                        self.name, tc, c.kind
                    )))
                }
                None => {
                    return Err(RdbError::Schema(format!(
                        "table {}: time column {} is not a column",
                        self.name, tc
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub child_table: String,
    pub child_column: String,
    pub parent_table: String,
    pub parent_column: String,
}

impl fmt::Display for ForeignKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{} -> {}.{}",
            self.child_table, self.child_column, self.parent_table, self.parent_column
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationalDatabase {
    pub tables: BTreeMap<String, Table>,
    pub foreign_keys: Vec<ForeignKey>,
    pub target_table: String,
}

impl RelationalDatabase {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn target(&self) -> &Table {
        &self.tables[&self.target_table]
    }

    /// Checks every structural invariant: target present, FK endpoints
    /// exist, parent column is the parent's primary key, key types agree.
    pub fn check(&self) -> Result<(), RdbError> {
        if !self.tables.contains_key(&self.target_table) {
            return Err(RdbError::Schema(format!(
                "target table {} does not exist",
                self.target_table
            )));
        }
        for t in self.tables.values() {
            t.check_shape()?;
        }
        for fk in &self.foreign_keys {
            let child = self.tables.get(&fk.child_table).ok_or_else(|| {
                RdbError::Schema(format!("foreign key {fk}: unknown table {}", fk.child_table))
            })?;
            let parent = self.tables.get(&fk.parent_table).ok_or_else(|| {
                RdbError::Schema(format!("foreign key {fk}: unknown table {}", fk.parent_table))
            })?;
            let cc = child.column(&fk.child_column).ok_or_else(|| {
                RdbError::Schema(format!("foreign key {fk}: unknown column {}", fk.child_column))
            })?;
            let pc = parent.column(&fk.parent_column).ok_or_else(|| {
                RdbError::Schema(format!("foreign key {fk}: unknown column {}", fk.parent_column))
            })?;
            if parent.primary_key.as_deref() != Some(fk.parent_column.as_str()) {
                return Err(RdbError::Schema(format!(
                    "foreign key {fk}: {} is not the primary key of {}",
                    fk.parent_column, fk.parent_table
                )));
            }
            match (cc.kind.key_class(), pc.kind.key_class()) {
                (Some(a), Some(b)) if a == b => {}
                _ => {
                    return Err(RdbError::Schema(format!(
                        "foreign key {fk}: incompatible key types {} and {}",
                        cc.kind, pc.kind
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "val" | "valid" | "validation" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// The binary prediction task. Labels, split assignments, and seed times are
/// resolved once at load so downstream code never re-parses them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub description: String,
    pub target_table: String,
    pub label_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_time_column: Option<String>,
    pub split_column: String,
    #[serde(skip)]
    pub labels: Vec<u8>,
    #[serde(skip)]
    pub splits: Vec<Split>,
    #[serde(skip)]
    pub seed_times: Option<Vec<i64>>,
}

impl TaskSpec {
    /// Columns of the target table that are never feature sources.
    pub fn reserved_columns(&self) -> Vec<&str> {
        let mut cols = vec![self.label_column.as_str(), self.split_column.as_str()];
        if let Some(s) = &self.seed_time_column {
            cols.push(s.as_str());
        }
        cols
    }

    pub fn is_reserved(&self, table: &str, column: &str) -> bool {
        table == self.target_table && self.reserved_columns().contains(&column)
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn seed_time(&self, row: usize) -> Option<i64> {
        self.seed_times.as_ref().map(|t| t[row])
    }

    /// Resolves labels, splits and seed times against the target table.
    pub fn bind(&mut self, db: &RelationalDatabase) -> Result<(), RdbError> {
        let target = db.table(&self.target_table).ok_or_else(|| {
            RdbError::Schema(format!("task target table {} does not exist", self.target_table))
        })?;
        if self.target_table != db.target_table {
            return Err(RdbError::Schema(format!(
                "task target {} differs from database target {}",
                self.target_table, db.target_table
            )));
        }
        let col = |name: &str| {
            target.column_index(name).ok_or_else(|| {
                RdbError::Schema(format!("task column {name} not in table {}", target.name))
            })
        };
        let label_idx = col(&self.label_column)?;
        let split_idx = col(&self.split_column)?;
        let seed_idx = self.seed_time_column.as_deref().map(col).transpose()?;
        if let Some(i) = seed_idx {
            if target.columns[i].kind != ColumnKind::Timestamp {
                return Err(RdbError::Schema(format!(
                    "seed time column {} must be a timestamp",
                    target.columns[i].name
                )));
            }
        }

        let mut labels = Vec::with_capacity(target.len());
        let mut splits = Vec::with_capacity(target.len());
        let mut seeds = seed_idx.map(|_| Vec::with_capacity(target.len()));
        for (r, row) in target.rows.iter().enumerate() {
            let split = match &row[split_idx] {
                Some(Value::Str(s)) => Split::parse(s),
                _ => None,
            }
            .ok_or_else(|| RdbError::BadSplit {
                column: self.split_column.clone(),
                row: r,
                value: row[split_idx].as_ref().map(|v| v.to_string()).unwrap_or_default(),
            })?;
            splits.push(split);
            let label = row[label_idx].as_ref().and_then(Value::as_binary).ok_or_else(|| {
                RdbError::LabelNotBinary {
                    column: self.label_column.clone(),
                    row: r,
                    value: row[label_idx]
                        .as_ref()
                        .map(|v| v.to_string())
                        .unwrap_or_else(|| "null".into()),
                }
            })?;
            labels.push(label);
            if let (Some(i), Some(seeds)) = (seed_idx, seeds.as_mut()) {
                let t = row[i].as_ref().and_then(Value::as_time).ok_or_else(|| {
                    RdbError::Schema(format!("null seed time at target row {r}"))
                })?;
                seeds.push(t);
            }
        }
        self.labels = labels;
        self.splits = splits;
        self.seed_times = seeds;
        Ok(())
    }
}
