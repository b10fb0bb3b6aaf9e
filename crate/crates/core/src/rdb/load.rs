use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Cell, ColumnDef, ForeignKey, RdbError, RelationalDatabase, Table, TaskSpec, Value};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    tables: Vec<TableEntry>,
    #[serde(default)]
    foreign_keys: Vec<ForeignKey>,
    task: TaskEntry,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableEntry {
    name: String,
    path: PathBuf,
    columns: Vec<ColumnDef>,
    #[serde(default)]
    primary_key: Option<String>,
    #[serde(default)]
    time_column: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskEntry {
    description: String,
    target_table: String,
    label_column: String,
    #[serde(default)]
    seed_time_column: Option<String>,
    split_column: String,
}

/// Non-fatal data-quality findings from a load.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    /// Child rows whose non-null FK value matches no parent key, per FK.
    pub dangling: BTreeMap<String, usize>,
}

impl LoadReport {
    pub fn dangling_total(&self) -> usize {
        self.dangling.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDatabase {
    pub db: RelationalDatabase,
    pub task: TaskSpec,
    pub report: LoadReport,
}

pub fn load_database(manifest_path: impl AsRef<Path>) -> Result<LoadedDatabase, RdbError> {
    let manifest_path = manifest_path.as_ref();
    let shown = manifest_path.display().to_string();
    let text = std::fs::read_to_string(manifest_path).map_err(|source| RdbError::Io {
        path: shown.clone(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| RdbError::Manifest {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut tables = BTreeMap::new();
    for entry in manifest.tables {
        let path = base.join(&entry.path);
        let table = read_table(&entry, &path)?;
        if tables.insert(table.name.clone(), table).is_some() {
            return Err(RdbError::Manifest {
                path: shown,
                message: format!("table {} declared twice", entry.name),
            });
        }
    }

    let db = RelationalDatabase {
        tables,
        foreign_keys: manifest.foreign_keys,
        target_table: manifest.task.target_table.clone(),
    };
    db.check()?;
    for t in db.tables.values() {
        check_primary_key(t)?;
    }
    let report = LoadReport {
        dangling: count_dangling(&db),
    };
    for (fk, n) in &report.dangling {
        log::warn!("{n} dangling foreign-key value(s) on {fk}");
    }

    let mut task = TaskSpec {
        description: manifest.task.description,
        target_table: manifest.task.target_table,
        label_column: manifest.task.label_column,
        seed_time_column: manifest.task.seed_time_column,
        split_column: manifest.task.split_column,
        labels: Vec::new(),
        splits: Vec::new(),
        seed_times: None,
    };
    task.bind(&db)?;
    Ok(LoadedDatabase { db, task, report })
}

fn read_table(entry: &TableEntry, path: &Path) -> Result<Table, RdbError> {
    let file = File::open(path).map_err(|source| RdbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let csv_err = |e: csv::Error| RdbError::Csv {
        table: entry.name.clone(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header = reader.headers().map_err(csv_err)?.clone();

    let declared: HashMap<&str, usize> = entry
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();
    // file position -> declared position
    let mut mapping = Vec::with_capacity(header.len());
    for h in header.iter() {
        let idx = declared
            .get(h)
            .copied()
            .ok_or_else(|| RdbError::UndeclaredColumn {
                table: entry.name.clone(),
                column: h.to_string(),
            })?;
        mapping.push(idx);
    }
    for c in &entry.columns {
        if !header.iter().any(|h| h == c.name) {
            return Err(RdbError::MissingColumn {
                table: entry.name.clone(),
                column: c.name.clone(),
            });
        }
    }

    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let mut row: Vec<Cell> = vec![None; entry.columns.len()];
        for (pos, raw) in record.iter().enumerate() {
            if raw.is_empty() {
                continue;
            }
            let col = &entry.columns[mapping[pos]];
            let value = col.kind.parse_cell(raw).ok_or_else(|| RdbError::BadCell {
                table: entry.name.clone(),
                row: r,
                column: col.name.clone(),
                raw: raw.to_string(),
                kind: col.kind,
            })?;
            row[mapping[pos]] = Some(value);
        }
        rows.push(row);
    }

    let table = Table {
        name: entry.name.clone(),
        columns: entry.columns.clone(),
        rows,
        primary_key: entry.primary_key.clone(),
        time_column: entry.time_column.clone(),
    };
    table.check_shape()?;
    Ok(table)
}

fn check_primary_key(table: &Table) -> Result<(), RdbError> {
    let Some(pk) = &table.primary_key else {
        return Ok(());
    };
    let idx = table.column_index(pk).expect("checked by check_shape");
    if table.columns[idx].kind.key_class().is_none() {
        return Err(RdbError::Schema(format!(
            "table {}: primary key {} has non-key type {}",
            table.name, pk, table.columns[idx].kind
        )));
    }
    let mut seen = HashSet::with_capacity(table.len());
    for (r, row) in table.rows.iter().enumerate() {
        let key = row[idx]
            .as_ref()
            .and_then(Value::as_key)
            .ok_or(RdbError::NullKey {
                table: table.name.clone(),
                row: r,
            })?;
        if !seen.insert(key.clone()) {
            return Err(RdbError::DuplicateKey {
                table: table.name.clone(),
                value: key.to_string(),
            });
        }
    }
    Ok(())
}

fn count_dangling(db: &RelationalDatabase) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for fk in &db.foreign_keys {
        let parent = &db.tables[&fk.parent_table];
        let child = &db.tables[&fk.child_table];
        let pi = parent.column_index(&fk.parent_column).expect("checked");
        let ci = child.column_index(&fk.child_column).expect("checked");
        let keys: HashSet<_> = parent
            .rows
            .iter()
            .filter_map(|r| r[pi].as_ref().and_then(Value::as_key))
            .collect();
        let n = child
            .rows
            .iter()
            .filter_map(|r| r[ci].as_ref().and_then(Value::as_key))
            .filter(|k| !keys.contains(k))
            .count();
        if n > 0 {
            out.insert(fk.to_string(), n);
        }
    }
    out
}

/// Writes a table in the loader's CSV dialect: header row, empty field for
/// null, timestamps as epoch seconds.
pub fn write_table_csv(table: &Table, path: impl AsRef<Path>) -> Result<(), RdbError> {
    let path = path.as_ref();
    let io_err = |e: csv::Error| RdbError::Csv {
        table: table.name.clone(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(table.columns.iter().map(|c| c.name.as_str()))
        .map_err(io_err)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| c.as_ref().map(|v| v.to_string()).unwrap_or_default()))
            .map_err(io_err)?;
    }
    w.flush().map_err(|source| RdbError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    tables: Vec<TableOut<'a>>,
    foreign_keys: &'a [ForeignKey],
    task: &'a TaskSpec,
}

#[derive(Serialize)]
struct TableOut<'a> {
    name: &'a str,
    path: String,
    columns: &'a [ColumnDef],
    #[serde(skip_serializing_if = "Option::is_none")]
    primary_key: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    time_column: Option<&'a str>,
}

/// Writes `manifest.json` plus one CSV per table into `dir` and returns the
/// manifest path.
pub fn save_database(
    db: &RelationalDatabase,
    task: &TaskSpec,
    dir: impl AsRef<Path>,
) -> Result<PathBuf, RdbError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| RdbError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut tables = Vec::new();
    for t in db.tables.values() {
        let file = format!("{}.csv", t.name);
        write_table_csv(t, dir.join(&file))?;
        tables.push(TableOut {
            name: &t.name,
            path: file,
            columns: &t.columns,
            primary_key: t.primary_key.as_deref(),
            time_column: t.time_column.as_deref(),
        });
    }
    let manifest = ManifestOut {
        tables,
        foreign_keys: &db.foreign_keys,
        task,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|source| RdbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}
