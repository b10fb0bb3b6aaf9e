use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::exec::FeatureColumn;
use crate::rdb::{ColumnDef, ColumnKind, Table, Value};

/// Run directory writer; a no-op when the run is in-memory only.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: Option<PathBuf>,
}

impl RunDir {
    pub fn new(root: Option<&Path>) -> io::Result<Self> {
        if let Some(r) = root {
            fs::create_dir_all(r)?;
        }
        Ok(RunDir {
            root: root.map(Path::to_path_buf),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn path(&self, rel: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(rel))
    }

    pub fn iteration_dir(iteration: usize) -> String {
        format!("iterations/{iteration:02}")
    }

    pub fn write_text(&self, rel: &str, text: &str) -> io::Result<()> {
        let Some(path) = self.path(rel) else {
            return Ok(());
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, text)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, rel: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write_text(rel, &text)
    }
}

/// Target table with one float column appended per feature. A feature whose
/// name clashes with an existing column gets a `feature_` prefix.
pub fn enriched_table(target: &Table, features: &[FeatureColumn]) -> Table {
    let mut t = target.clone();
    for f in features {
        let mut name = f.name.clone();
        while t.column(&name).is_some() {
            name = format!("feature_{name}");
        }
        t.columns.push(ColumnDef {
            name,
            kind: ColumnKind::Float,
        });
        for (r, row) in t.rows.iter_mut().enumerate() {
            let v = f.value_for(r).flatten().filter(|x| x.is_finite());
            row.push(v.map(Value::Float));
        }
    }
    t
}
