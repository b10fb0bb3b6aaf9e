use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ForeignKey, RdbError, RelationalDatabase, Table, TaskSpec};

/// Retained tables and their retained columns. A table missing from the map
/// is excluded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemaSubset {
    pub tables: BTreeMap<String, BTreeSet<String>>,
}

/// One automatic repair applied to an agent-proposed subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubsetCorrection {
    UnknownTable { table: String },
    UnknownColumn { table: String, column: String },
    Reinstated { table: String, column: String },
    TargetTableAdded,
}

impl std::fmt::Display for SubsetCorrection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubsetCorrection::UnknownTable { table } => write!(f, "unknown table {table}"),
            SubsetCorrection::UnknownColumn { table, column } => write!(f, "unknown column {table}.{column}"),
            SubsetCorrection::Reinstated { table, column } => {
                write!(f, "required column {table}.{column} is missing")
            }
            SubsetCorrection::TargetTableAdded => f.write_str("the target table is missing"),
        }
    }
}

impl SchemaSubset {
    pub fn full(db: &RelationalDatabase) -> Self {
        let tables = db
            .tables
            .values()
            .map(|t| (t.name.clone(), t.columns.iter().map(|c| c.name.clone()).collect()))
            .collect();
        SchemaSubset { tables }
    }

    pub fn contains_table(&self, table: &str) -> bool {
        self.tables.contains_key(table)
    }

    pub fn contains_column(&self, table: &str, column: &str) -> bool {
        self.tables.get(table).is_some_and(|c| c.contains(column))
    }

    /// Strict check of every subset invariant.
    pub fn validate(&self, db: &RelationalDatabase, task: &TaskSpec) -> Result<(), RdbError> {
        let (_, corrections) = self.corrected(db, task);
        match corrections.first() {
            None => Ok(()),
            Some(c) => Err(RdbError::InvalidSubset(c.to_string())),
        }
    }

    /// Drops unknown names and reinstates mandatory columns: every column of
    /// the target table, plus primary keys, time columns, and FK columns of
    /// retained tables.
    pub fn corrected(
        &self,
        db: &RelationalDatabase,
        task: &TaskSpec,
    ) -> (SchemaSubset, Vec<SubsetCorrection>) {
        let mut fixes = Vec::new();
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (tname, cols) in &self.tables {
            let Some(table) = db.table(tname) else {
                fixes.push(SubsetCorrection::UnknownTable {
                    table: tname.clone(),
                });
                continue;
            };
            let kept = out.entry(tname.clone()).or_default();
            for c in cols {
                if table.column(c).is_some() {
                    kept.insert(c.clone());
                } else {
                    fixes.push(SubsetCorrection::UnknownColumn {
                        table: tname.clone(),
                        column: c.clone(),
                    });
                }
            }
        }

        if !out.contains_key(&task.target_table) {
            fixes.push(SubsetCorrection::TargetTableAdded);
            out.insert(task.target_table.clone(), BTreeSet::new());
        }

        let mut mandatory: Vec<(String, String)> = Vec::new();
        let target = db.target();
        for c in &target.columns {
            mandatory.push((target.name.clone(), c.name.clone()));
        }
        for tname in out.keys() {
            let t = &db.tables[tname];
            mandatory.extend(t.primary_key.iter().map(|c| (tname.clone(), c.clone())));
            mandatory.extend(t.time_column.iter().map(|c| (tname.clone(), c.clone())));
        }
        for fk in &db.foreign_keys {
            if out.contains_key(&fk.child_table) && out.contains_key(&fk.parent_table) {
                mandatory.push((fk.child_table.clone(), fk.child_column.clone()));
                mandatory.push((fk.parent_table.clone(), fk.parent_column.clone()));
            }
        }
        for (t, c) in mandatory {
            let cols = out.get_mut(&t).expect("table retained");
            if cols.insert(c.clone()) {
                fixes.push(SubsetCorrection::Reinstated { table: t, column: c });
            }
        }
        (SchemaSubset { tables: out }, fixes)
    }

    /// Compact "table(n cols)" summary for run records.
    pub fn summary(&self) -> String {
        self.tables
            .iter()
            .map(|(t, c)| format!("{t}({})", c.len()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Read-only view of a database restricted to a (valid) subset.
#[derive(Debug, Clone)]
pub struct SchemaView<'a> {
    db: &'a RelationalDatabase,
    subset: SchemaSubset,
}

impl<'a> SchemaView<'a> {
    pub fn full(db: &'a RelationalDatabase) -> Self {
        SchemaView {
            db,
            subset: SchemaSubset::full(db),
        }
    }

    pub fn db(&self) -> &'a RelationalDatabase {
        self.db
    }

    pub fn subset(&self) -> &SchemaSubset {
        &self.subset
    }

    pub fn target_table(&self) -> &'a str {
        &self.db.target_table
    }

    pub fn table(&self, name: &str) -> Option<&'a Table> {
        if self.subset.contains_table(name) {
            self.db.table(name)
        } else {
            None
        }
    }

    pub fn has_column(&self, table: &str, column: &str) -> bool {
        self.subset.contains_column(table, column)
    }

    /// Visible tables in name order.
    pub fn tables(&self) -> impl Iterator<Item = &'a Table> + '_ {
        self.subset.tables.keys().filter_map(|t| self.db.table(t))
    }

    pub fn foreign_keys(&self) -> impl Iterator<Item = &'a ForeignKey> + '_ {
        self.db.foreign_keys.iter().filter(|fk| self.has_fk(fk))
    }

    pub fn has_fk(&self, fk: &ForeignKey) -> bool {
        self.has_column(&fk.child_table, &fk.child_column)
            && self.has_column(&fk.parent_table, &fk.parent_column)
            && self.db.foreign_keys.contains(fk)
    }

    /// Deterministic text rendering of the visible schema: tables by name,
    /// columns in table order, foreign keys sorted.
    pub fn describe(&self, task: &TaskSpec) -> String {
        let mut out = String::new();
        for t in self.tables() {
            let mut attrs = Vec::new();
            if t.name == task.target_table {
                attrs.push("target table".to_string());
            }
            if let Some(pk) = &t.primary_key {
                attrs.push(format!("primary key: {pk}"));
            }
            if let Some(tc) = &t.time_column {
                attrs.push(format!("time column: {tc}"));
            }
            attrs.push(format!("{} rows", t.len()));
            let _ = writeln!(out, "Table {} ({})", t.name, attrs.join("; "));
            for c in &t.columns {
                if !self.has_column(&t.name, &c.name) {
                    continue;
                }
                let role = if t.name != task.target_table {
                    ""
                } else if c.name == task.label_column {
                    " [label]"
                } else if c.name == task.split_column {
                    " [split]"
                } else if task.seed_time_column.as_deref() == Some(c.name.as_str()) {
                    " [seed time]"
                } else {
                    ""
                };
                let _ = writeln!(out, "  - {}: {}{}", c.name, c.kind, role);
            }
        }
        let mut fks: Vec<&ForeignKey> = self.foreign_keys().collect();
        fks.sort();
        out.push_str("Foreign keys:\n");
        if fks.is_empty() {
            out.push_str("  (none)\n");
        }
        for fk in fks {
            let _ = writeln!(out, "  - {fk}");
        }
        out
    }
}

/// Restricts the database to `subset`, repairing invariant violations.
pub fn apply_subset<'a>(
    db: &'a RelationalDatabase,
    task: &TaskSpec,
    subset: &SchemaSubset,
) -> (SchemaView<'a>, Vec<SubsetCorrection>) {
    let (subset, fixes) = subset.corrected(db, task);
    for f in &fixes {
        log::warn!("schema subset corrected: {f}");
    }
    (SchemaView { db, subset }, fixes)
}

/// Renders the schema an agent sees. `None` means the full schema. Unlike
/// [`apply_subset`], an invalid subset is an error here.
pub fn schema_descriptor(
    db: &RelationalDatabase,
    task: &TaskSpec,
    subset: Option<&SchemaSubset>,
) -> Result<String, RdbError> {
    let view = match subset {
        None => SchemaView::full(db),
        Some(s) => {
            s.validate(db, task)?;
            SchemaView {
                db,
                subset: s.clone(),
            }
        }
    };
    Ok(view.describe(task))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::planted_signal;

    #[test]
    fn full_subset_is_identity() {
        let ds = planted_signal(20, 1);
        let (view, fixes) = apply_subset(&ds.db, &ds.task, &SchemaSubset::full(&ds.db));
        assert!(fixes.is_empty());
        assert_eq!(view.subset(), SchemaView::full(&ds.db).subset());
        let text = schema_descriptor(&ds.db, &ds.task, None).unwrap();
        assert_eq!(text, schema_descriptor(&ds.db, &ds.task, None).unwrap());
        assert_eq!(text.matches("\nTable ").count() + text.starts_with("Table ") as usize, 2);
        assert!(text.contains("events.user_id -> users.user_id"), "{text}");
    }

    #[test]
    fn dropped_column_disappears_from_the_descriptor() {
        let ds = planted_signal(20, 1);
        let mut s = SchemaSubset::full(&ds.db);
        s.tables.get_mut("events").unwrap().remove("kind");
        let full = schema_descriptor(&ds.db, &ds.task, None).unwrap();
        let cut = schema_descriptor(&ds.db, &ds.task, Some(&s)).unwrap();
        let removed: Vec<&str> = full.lines().filter(|l| !cut.lines().any(|c| c == *l)).collect();
        assert_eq!(removed, ["  - kind: categorical"]);
    }

    #[test]
    fn mandatory_columns_are_reinstated() {
        let ds = planted_signal(20, 1);
        let mut s = SchemaSubset::full(&ds.db);
        s.tables.get_mut("users").unwrap().remove("label");
        s.tables.get_mut("events").unwrap().remove("event_time");
        s.tables.insert("ghost".into(), Default::default());
        assert!(s.validate(&ds.db, &ds.task).is_err());
        let (view, fixes) = apply_subset(&ds.db, &ds.task, &s);
        assert!(view.has_column("users", "label"));
        assert!(view.has_column("events", "event_time"));
        assert!(!view.subset().contains_table("ghost"));
        assert_eq!(fixes.len(), 3);
    }

    #[test]
    fn missing_target_is_added() {
        let ds = planted_signal(20, 1);
        let mut s = SchemaSubset::default();
        s.tables.insert("events".into(), ["amount".to_string()].into());
        let (view, fixes) = apply_subset(&ds.db, &ds.task, &s);
        assert!(fixes.contains(&SubsetCorrection::TargetTableAdded));
        assert!(view.has_fk(&ds.db.foreign_keys[0]));
    }
}
