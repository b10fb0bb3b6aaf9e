mod common;

use std::path::PathBuf;

use relfeat_core::agents::{
    filter_prompt, generate_candidates, generation_prompt, random_filter, reason_filter,
    schema_prompt, PromptContext, ScriptedBackend, FEEDBACK_HEADER,
};
use relfeat_core::dsl::{CompareOp, FeatureSpec, Literal, Predicate, PredicateValue};
use relfeat_core::rdb::{schema_descriptor, SchemaView};
use relfeat_core::synth::{planted_count_spec, planted_signal};

fn context(iteration: usize, feedback: Option<&str>) -> PromptContext {
    let ds = planted_signal(20, 1);
    PromptContext {
        schema: schema_descriptor(&ds.db, &ds.task, None).unwrap(),
        task: ds.task.description.clone(),
        iteration,
        accepted: if iteration > 1 { vec![planted_count_spec()] } else { vec![] },
        feedback: feedback.map(str::to_string),
    }
}

/// Compares against `tests/golden/<name>`; set `RELFEAT_BLESS=1` to rewrite.
fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("RELFEAT_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "prompt drifted from {}", path.display());
}

fn amount_above(i: i64) -> FeatureSpec {
    FeatureSpec::agg(
        format!("big_{i}"),
        common::events_term(
            relfeat_core::dsl::Aggregation::Count,
            None,
            Some(Predicate {
                column: "amount".into(),
                op: CompareOp::Gt,
                literal: PredicateValue::One(Literal::Int(i)),
            }),
        ),
    )
}

#[test]
fn prompts_match_golden_files() {
    let fb = "[event_count] increased validation AUROC from 54.36 to 100.00.";
    golden("schema_prompt.txt", &schema_prompt(&context(1, None)));
    golden("generate_prompt_iter1.txt", &generation_prompt(&context(1, None)));
    golden("generate_prompt_iter2.txt", &generation_prompt(&context(2, Some(fb))));
    golden(
        "filter_prompt_iter2.txt",
        &filter_prompt(&context(2, Some(fb)), &[amount_above(1), amount_above(2)], 5),
    );
}

#[test]
fn feedback_section_appears_from_the_second_iteration() {
    assert!(!generation_prompt(&context(1, None)).contains(FEEDBACK_HEADER));
    let p = generation_prompt(&context(2, Some("[x] left validation AUROC unchanged at 50.00.")));
    assert!(p.contains(FEEDBACK_HEADER));
    assert!(p.contains("[x] left validation AUROC unchanged at 50.00."));
    assert!(!schema_prompt(&context(2, Some("[x] ..."))).contains(FEEDBACK_HEADER));
}

fn pool_backend() -> ScriptedBackend {
    let arr = |ids: &[i64]| serde_json::to_string(&ids.iter().map(|&i| amount_above(i)).collect::<Vec<_>>()).unwrap();
    ScriptedBackend::from_map([
        ("iter01/generate/0", arr(&[1, 2, 3, 4])),
        ("iter01/generate/1", arr(&[4, 5, 6, 7])),
        ("iter01/generate/2", arr(&[7, 8, 9, 10])),
        ("iter01/filter", r#"{"selected": ["big_9", "nope", "big_2", "big_9", "big_5", "big_1"]}"#.to_string()),
    ])
}

#[test]
fn pool_dedups_and_filter_keeps_order() {
    let ds = planted_signal(30, 2);
    let view = SchemaView::full(&ds.db);
    let ctx = context(1, None);
    let backend = pool_backend();
    let pool = generate_candidates(&backend, &ctx, &view, &ds.task, 3, 0.7).unwrap();
    assert_eq!(pool.len(), 10);
    assert_eq!(pool.duplicates, 2);
    let sel = reason_filter(&backend, &ctx, &pool, 3, 0.2).unwrap();
    let names: Vec<&str> = sel.selected.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["big_9", "big_2", "big_5"]);
    assert_eq!(sel.unknown, ["nope"]);

    let a = random_filter(&pool, 5, 42, 1);
    assert_eq!(a.len(), 5);
    assert_eq!(a, random_filter(&pool, 5, 42, 1));
    assert_ne!(a, random_filter(&pool, 5, 43, 1));
}

#[test]
fn accepted_specs_are_not_proposed_again() {
    let ds = planted_signal(30, 2);
    let view = SchemaView::full(&ds.db);
    let mut ctx = context(1, None);
    ctx.accepted = vec![amount_above(4)];
    let pool = generate_candidates(&pool_backend(), &ctx, &view, &ds.task, 3, 0.7).unwrap();
    assert_eq!(pool.len(), 9);
    assert!(pool.get("big_4").is_none());
}
