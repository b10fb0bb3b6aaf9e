//! Synthetic relational datasets with known ground truth.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsl::{AggTerm, Aggregation, FeatureSpec, JoinHop};
use crate::rdb::{
    Cell, ColumnDef, ColumnKind, ForeignKey, RelationalDatabase, Table, TaskSpec, Value,
};

const DAY: i64 = 86_400;
const EPOCH_BASE: i64 = 1_700_000_000;

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub db: RelationalDatabase,
    pub task: TaskSpec,
}

fn col(name: &str, kind: ColumnKind) -> ColumnDef {
    ColumnDef {
        name: name.into(),
        kind,
    }
}

fn fk(child: &str, child_col: &str, parent: &str, parent_col: &str) -> ForeignKey {
    ForeignKey {
        child_table: child.into(),
        child_column: child_col.into(),
        parent_table: parent.into(),
        parent_column: parent_col.into(),
    }
}

fn split_for(i: usize, n: usize) -> &'static str {
    let f = i as f64 / n as f64;
    if f < 0.6 {
        "train"
    } else if f < 0.8 {
        "val"
    } else {
        "test"
    }
}

fn median(xs: &[usize]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

fn finish(tables: Vec<Table>, foreign_keys: Vec<ForeignKey>, task: TaskSpec) -> SynthDataset {
    let db = RelationalDatabase {
        tables: tables
            .into_iter()
            .map(|t| (t.name.clone(), t))
            .collect::<BTreeMap<_, _>>(),
        foreign_keys,
        target_table: task.target_table.clone(),
    };
    db.check().expect("synthetic database is well-formed");
    let mut task = task;
    task.bind(&db).expect("synthetic task binds");
    SynthDataset { db, task }
}

fn task(description: &str, target: &str) -> TaskSpec {
    TaskSpec {
        description: description.into(),
        target_table: target.into(),
        label_column: "label".into(),
        seed_time_column: Some("seed_time".into()),
        split_column: "split".into(),
        labels: Vec::new(),
        splits: Vec::new(),
        seed_times: None,
    }
}

/// Two tables, `users` and `events`. A user's label is 1 iff the number of
/// their events strictly before their seed time exceeds the median of that
/// count over all users. Every other column is noise, and each user also has
/// events at or after the seed time that must not leak into features.
pub fn planted_signal(n_users: usize, seed: u64) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regions = ["north", "south", "east", "west"];
    let kinds = ["view", "click"];

    let mut order: Vec<usize> = (0..n_users).collect();
    for i in (1..n_users).rev() {
        order.swap(i, rng.random_range(0..=i));
    }

    let mut pre_counts = Vec::with_capacity(n_users);
    let mut users = Vec::with_capacity(n_users);
    let mut events: Vec<Vec<Cell>> = Vec::new();
    for u in 0..n_users {
        let seed_time = EPOCH_BASE + rng.random_range(0..180 * DAY);
        let pre = rng.random_range(0..=15usize);
        let post = rng.random_range(0..=15usize);
        pre_counts.push(pre);
        for k in 0..pre + post {
            let t = if k < pre {
                seed_time - rng.random_range(1..=60 * DAY)
            } else if k == pre {
                seed_time
            } else {
                seed_time + rng.random_range(0..30 * DAY)
            };
            events.push(vec![
                Some(Value::Int(events.len() as i64 + 1)),
                Some(Value::Int(u as i64 + 1)),
                Some(Value::Time(t)),
                Some(Value::Str(kinds[rng.random_range(0..2)].into())),
                Some(Value::Float((rng.random::<f64>() * 10_000.0).round() / 100.0)),
            ]);
        }
        let age = if rng.random_bool(0.1) {
            None
        } else {
            Some(Value::Float(18.0 + rng.random_range(0..60) as f64))
        };
        users.push((seed_time, age, regions[rng.random_range(0..4)]));
    }
    let med = median(&pre_counts);

    let rows = users
        .into_iter()
        .enumerate()
        .map(|(u, (seed_time, age, region))| {
            vec![
                Some(Value::Int(u as i64 + 1)),
                age,
                Some(Value::Str(region.into())),
                Some(Value::Time(seed_time)),
                Some(Value::Str(split_for(order[u], n_users).into())),
                Some(Value::Int((pre_counts[u] as f64 > med) as i64)),
            ]
        })
        .collect();
    let users = Table {
        name: "users".into(),
        columns: vec![
            col("user_id", ColumnKind::Integer),
            col("age", ColumnKind::Float),
            col("region", ColumnKind::Categorical),
            col("seed_time", ColumnKind::Timestamp),
            col("split", ColumnKind::Categorical),
            col("label", ColumnKind::Integer),
        ],
        rows,
        primary_key: Some("user_id".into()),
        time_column: None,
    };
    let events = Table {
        name: "events".into(),
        columns: vec![
            col("event_id", ColumnKind::Integer),
            col("user_id", ColumnKind::Integer),
            col("event_time", ColumnKind::Timestamp),
            col("kind", ColumnKind::Categorical),
            col("amount", ColumnKind::Float),
        ],
        rows: events,
        primary_key: Some("event_id".into()),
        time_column: Some("event_time".into()),
    };
    finish(
        vec![users, events],
        vec![fk("events", "user_id", "users", "user_id")],
        task(
            "Predict whether a user is a heavy user: more events before the seed time than the median user.",
            "users",
        ),
    )
}

/// The count feature the planted label is built from.
pub fn planted_count_spec() -> FeatureSpec {
    FeatureSpec::agg(
        "event_count",
        AggTerm {
            path: vec![JoinHop::to_children(fk("events", "user_id", "users", "user_id"))],
            filter: None,
            window: None,
            agg: Aggregation::Count,
            column: None,
        },
    )
}

/// Miniature ad-marketplace database: users, ads, locations, ad visits and
/// searches. The label marks users who viewed more distinct ads before the
/// seed time than the median user.
pub fn avito_mini(n_users: usize, seed: u64) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_ads = 40usize;
    let n_locations = 12usize;

    let locations = Table {
        name: "Location".into(),
        columns: vec![
            col("LocationID", ColumnKind::Integer),
            col("Level", ColumnKind::Integer),
            col("RegionID", ColumnKind::Integer),
        ],
        rows: (0..n_locations)
            .map(|i| {
                vec![
                    Some(Value::Int(i as i64 + 1)),
                    Some(Value::Int(1 + (i % 3) as i64)),
                    Some(Value::Int(1 + (i / 3) as i64)),
                ]
            })
            .collect(),
        primary_key: Some("LocationID".into()),
        time_column: None,
    };
    let ads = Table {
        name: "AdsInfo".into(),
        columns: vec![
            col("AdID", ColumnKind::Integer),
            col("CategoryID", ColumnKind::Integer),
            col("Price", ColumnKind::Float),
        ],
        rows: (0..n_ads)
            .map(|i| {
                vec![
                    Some(Value::Int(i as i64 + 1)),
                    Some(Value::Int(rng.random_range(1..=5))),
                    Some(Value::Float(rng.random_range(100..10_000) as f64)),
                ]
            })
            .collect(),
        primary_key: Some("AdID".into()),
        time_column: None,
    };

    let mut order: Vec<usize> = (0..n_users).collect();
    for i in (1..n_users).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut visits = Vec::new();
    let mut searches = Vec::new();
    let mut distinct_pre = Vec::with_capacity(n_users);
    let mut seeds = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let uid = u as i64 + 1;
        let seed_time = EPOCH_BASE + rng.random_range(0..90 * DAY);
        seeds.push(seed_time);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..rng.random_range(0..=12) {
            let ad = rng.random_range(1..=n_ads as i64);
            let before = rng.random_bool(0.7);
            let t = if before {
                seen.insert(ad);
                seed_time - rng.random_range(1..=30 * DAY)
            } else {
                seed_time + rng.random_range(0..10 * DAY)
            };
            visits.push(vec![
                Some(Value::Int(uid)),
                Some(Value::Int(ad)),
                Some(Value::Time(t)),
            ]);
        }
        distinct_pre.push(seen.len());
        for _ in 0..rng.random_range(0..=6) {
            let loc = rng.random_range(1..=n_locations as i64 + 1); // last id dangles
            searches.push(vec![
                Some(Value::Int(searches.len() as i64 + 1)),
                Some(Value::Int(uid)),
                Some(Value::Int(loc)),
                Some(Value::Time(seed_time - rng.random_range(-5 * DAY..=30 * DAY))),
                Some(Value::Bool(rng.random_bool(0.5))),
            ]);
        }
    }
    let med = median(&distinct_pre);
    let users = Table {
        name: "UserInfo".into(),
        columns: vec![
            col("UserID", ColumnKind::Integer),
            col("UserAgentOSID", ColumnKind::Categorical),
            col("seed_time", ColumnKind::Timestamp),
            col("split", ColumnKind::Categorical),
            col("label", ColumnKind::Integer),
        ],
        rows: (0..n_users)
            .map(|u| {
                vec![
                    Some(Value::Int(u as i64 + 1)),
                    Some(Value::Str(format!("os{}", rng.random_range(1..=4)))),
                    Some(Value::Time(seeds[u])),
                    Some(Value::Str(split_for(order[u], n_users).into())),
                    Some(Value::Int((distinct_pre[u] as f64 > med) as i64)),
                ]
            })
            .collect(),
        primary_key: Some("UserID".into()),
        time_column: None,
    };
    let visits = Table {
        name: "VisitStream".into(),
        columns: vec![
            col("UserID", ColumnKind::Integer),
            col("AdID", ColumnKind::Integer),
            col("ViewDate", ColumnKind::Timestamp),
        ],
        rows: visits,
        primary_key: None,
        time_column: Some("ViewDate".into()),
    };
    let searches = Table {
        name: "SearchStream".into(),
        columns: vec![
            col("SearchID", ColumnKind::Integer),
            col("UserID", ColumnKind::Integer),
            col("LocationID", ColumnKind::Integer),
            col("SearchDate", ColumnKind::Timestamp),
            col("IsUserLoggedOn", ColumnKind::Boolean),
        ],
        rows: searches,
        primary_key: Some("SearchID".into()),
        time_column: Some("SearchDate".into()),
    };
    finish(
        vec![users, ads, locations, visits, searches],
        vec![
            fk("VisitStream", "UserID", "UserInfo", "UserID"),
            fk("VisitStream", "AdID", "AdsInfo", "AdID"),
            fk("SearchStream", "UserID", "UserInfo", "UserID"),
            fk("SearchStream", "LocationID", "Location", "LocationID"),
        ],
        task(
            "Predict whether a user will visit more than one ad in the next 4 days.",
            "UserInfo",
        ),
    )
}

/// Number of distinct ads a user viewed.
pub fn ad_view_diversity_spec() -> FeatureSpec {
    FeatureSpec::agg(
        "ad_view_diversity",
        AggTerm {
            path: vec![JoinHop::to_children(fk("VisitStream", "UserID", "UserInfo", "UserID"))],
            filter: None,
            window: None,
            agg: Aggregation::CountDistinct,
            column: Some("AdID".into()),
        },
    )
}

/// Mean hierarchy level of the locations a user searched in.
pub fn search_location_level_spec() -> FeatureSpec {
    FeatureSpec::agg(
        "avg_search_location_level",
        AggTerm {
            path: vec![
                JoinHop::to_children(fk("SearchStream", "UserID", "UserInfo", "UserID")),
                JoinHop::to_parent(fk("SearchStream", "LocationID", "Location", "LocationID")),
            ],
            filter: None,
            window: None,
            agg: Aggregation::Mean,
            column: Some("Level".into()),
        },
    )
}
