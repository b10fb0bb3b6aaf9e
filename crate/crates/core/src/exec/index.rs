use std::collections::HashMap;

use crate::rdb::{ForeignKey, Key, SchemaView, Value};

/// Hash indexes over the visible foreign keys: parent key to child rows,
/// and primary key to row for every parent table.
#[derive(Debug, Default)]
pub struct JoinIndex {
    children: HashMap<ForeignKey, HashMap<Key, Vec<usize>>>,
    parents: HashMap<String, HashMap<Key, usize>>,
}

impl JoinIndex {
    pub fn build(view: &SchemaView<'_>) -> Self {
        let db = view.db();
        let mut index = JoinIndex::default();
        for fk in view.foreign_keys() {
            let child = &db.tables[&fk.child_table];
            let ci = child.column_index(&fk.child_column).expect("fk column");
            let mut map: HashMap<Key, Vec<usize>> = HashMap::new();
            // ascending row order within each bucket
            for (r, row) in child.rows.iter().enumerate() {
                if let Some(k) = row[ci].as_ref().and_then(Value::as_key) {
                    map.entry(k).or_default().push(r);
                }
            }
            index.children.insert(fk.clone(), map);

            if !index.parents.contains_key(&fk.parent_table) {
                let parent = &db.tables[&fk.parent_table];
                let pi = parent.column_index(&fk.parent_column).expect("fk column");
                let pk: HashMap<Key, usize> = parent
                    .rows
                    .iter()
                    .enumerate()
                    .filter_map(|(r, row)| row[pi].as_ref().and_then(Value::as_key).map(|k| (k, r)))
                    .collect();
                index.parents.insert(fk.parent_table.clone(), pk);
            }
        }
        index
    }

    /// Child rows of `fk` whose FK value equals `key`; empty when none or
    /// when `fk` is not indexed.
    pub fn children(&self, fk: &ForeignKey, key: &Key) -> &[usize] {
        self.children
            .get(fk)
            .and_then(|m| m.get(key))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// The parent row referenced by `key`, `None` when dangling.
    pub fn parent(&self, fk: &ForeignKey, key: &Key) -> Option<usize> {
        self.parents.get(&fk.parent_table)?.get(key).copied()
    }
}

pub fn build_join_index(view: &SchemaView<'_>) -> JoinIndex {
    JoinIndex::build(view)
}
