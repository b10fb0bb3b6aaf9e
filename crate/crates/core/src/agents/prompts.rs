use super::PromptContext;
use crate::dsl::FeatureSpec;

const SCHEMA_TEMPLATE: &str = include_str!("../../templates/schema.txt");
const GENERATE_TEMPLATE: &str = include_str!("../../templates/generate.txt");
const FILTER_TEMPLATE: &str = include_str!("../../templates/filter.txt");
pub const GRAMMAR: &str = include_str!("../../templates/grammar.txt");

/// Heading that opens the feedback section of a prompt.
pub const FEEDBACK_HEADER: &str = "## Feedback from previous iterations";
pub const CANDIDATES_OPEN: &str = "<candidates>";
pub const CANDIDATES_CLOSE: &str = "</candidates>";

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

/// One line per accepted feature: name and spec JSON.
pub fn render_accepted(accepted: &[FeatureSpec]) -> String {
    if accepted.is_empty() {
        return "(none)".into();
    }
    accepted
        .iter()
        .map(|s| format!("- {}: {}", s.name, s.to_json_string()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn feedback_section(ctx: &PromptContext) -> String {
    match ctx.feedback.as_deref() {
        Some(text) if !text.trim().is_empty() => {
            format!("\n{FEEDBACK_HEADER}\n{}\n", text.trim_end())
        }
        _ => String::new(),
    }
}

pub fn schema_prompt(ctx: &PromptContext) -> String {
    fill(
        SCHEMA_TEMPLATE,
        &[("task", &ctx.task), ("schema", ctx.schema.trim_end())],
    )
}

pub fn generation_prompt(ctx: &PromptContext) -> String {
    fill(
        GENERATE_TEMPLATE,
        &[
            ("iteration", &ctx.iteration.to_string()),
            ("task", &ctx.task),
            ("schema", ctx.schema.trim_end()),
            ("accepted", &render_accepted(&ctx.accepted)),
            ("feedback", &feedback_section(ctx)),
            ("grammar", GRAMMAR.trim_end()),
        ],
    )
}

/// The candidate array sits between [`CANDIDATES_OPEN`] and
/// [`CANDIDATES_CLOSE`], one spec per line.
pub fn filter_prompt(ctx: &PromptContext, candidates: &[FeatureSpec], max_selected: usize) -> String {
    let body = candidates
        .iter()
        .map(FeatureSpec::to_json_string)
        .collect::<Vec<_>>()
        .join(",\n");
    fill(
        FILTER_TEMPLATE,
        &[
            ("iteration", &ctx.iteration.to_string()),
            ("task", &ctx.task),
            ("schema", ctx.schema.trim_end()),
            ("accepted", &render_accepted(&ctx.accepted)),
            ("feedback", &feedback_section(ctx)),
            ("candidates", &format!("[\n{body}\n]")),
            ("max_selected", &max_selected.to_string()),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::extract_specs;
    use crate::synth::planted_count_spec;

    fn ctx(feedback: Option<&str>) -> PromptContext {
        PromptContext {
            schema: "Table users".into(),
            task: "Predict heavy users.".into(),
            iteration: 2,
            accepted: vec![planted_count_spec()],
            feedback: feedback.map(str::to_string),
        }
    }

    #[test]
    fn feedback_section_only_when_present() {
        let with = ctx(Some("[a] left validation AUROC unchanged at 50.00."));
        assert!(generation_prompt(&with).contains(FEEDBACK_HEADER));
        assert!(filter_prompt(&with, &[], 5).contains("unchanged at 50.00"));
        for p in [generation_prompt(&ctx(None)), filter_prompt(&ctx(None), &[], 5), schema_prompt(&with)] {
            assert!(!p.contains(FEEDBACK_HEADER));
        }
    }

    #[test]
    fn filter_prompt_candidates_round_trip() {
        let p = filter_prompt(&ctx(None), &[planted_count_spec()], 5);
        let start = p.find(CANDIDATES_OPEN).unwrap() + CANDIDATES_OPEN.len();
        let end = p.find(CANDIDATES_CLOSE).unwrap();
        let (specs, errors) = extract_specs(&p[start..end]);
        assert!(errors.is_empty());
        assert_eq!(specs, vec![planted_count_spec()]);
    }

    #[test]
    fn no_placeholder_survives() {
        for p in [schema_prompt(&ctx(None)), generation_prompt(&ctx(None)), filter_prompt(&ctx(None), &[], 3)] {
            assert!(!p.contains("{{"));
        }
    }
}
