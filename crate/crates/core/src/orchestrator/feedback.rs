use serde::{Deserialize, Serialize};

/// Outcome of evaluating one candidate in the greedy filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub iteration: usize,
    pub feature_name: String,
    pub before_auroc: f64,
    /// `None` when the candidate could not be evaluated.
    pub after_auroc: Option<f64>,
    pub accepted: bool,
    pub error: Option<String>,
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// One sentence per entry, AUROC shown as a percentage with two decimals.
pub fn format_feedback(e: &FeedbackEntry) -> String {
    let name = &e.feature_name;
    let before = pct(e.before_auroc);
    match (e.after_auroc, &e.error) {
        (Some(after), _) if e.accepted => {
            format!("[{name}] increased validation AUROC from {before} to {}.", pct(after))
        }
        (Some(after), _) if after < e.before_auroc => {
            format!("[{name}] caused validation AUROC to drop from {before} to {}.", pct(after))
        }
        (Some(_), _) => format!("[{name}] left validation AUROC unchanged at {before}."),
        (None, err) => format!(
            "[{name}] could not be evaluated ({}); validation AUROC stayed at {before}.",
            err.as_deref().unwrap_or("unknown error")
        ),
    }
}

/// Append-only record of every evaluated candidate in a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeedbackLedger {
    entries: Vec<FeedbackEntry>,
}

impl FeedbackLedger {
    pub fn push(&mut self, e: FeedbackEntry) {
        self.entries.push(e);
    }

    pub fn extend(&mut self, es: impl IntoIterator<Item = FeedbackEntry>) {
        self.entries.extend(es);
    }

    pub fn entries(&self) -> &[FeedbackEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sentences in insertion order, one per line.
    pub fn render(&self) -> String {
        self.entries.iter().map(format_feedback).collect::<Vec<_>>().join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, before: f64, after: Option<f64>, accepted: bool) -> FeedbackEntry {
        FeedbackEntry {
            iteration: 1,
            feature_name: name.into(),
            before_auroc: before,
            after_auroc: after,
            accepted,
            error: None,
        }
    }

    #[test]
    fn unchanged_and_sub_epsilon_gain() {
        assert_eq!(
            format_feedback(&entry("a", 0.7, Some(0.7), false)),
            "[a] left validation AUROC unchanged at 70.00."
        );
        assert_eq!(
            format_feedback(&entry("a", 0.7, Some(0.7000001), false)),
            "[a] left validation AUROC unchanged at 70.00."
        );
    }

    #[test]
    fn error_entry_sentence() {
        let mut e = entry("b", 0.5, None, false);
        e.error = Some("boom".into());
        assert_eq!(
            format_feedback(&e),
            "[b] could not be evaluated (boom); validation AUROC stayed at 50.00."
        );
    }

    #[test]
    fn ledger_renders_in_order() {
        let mut l = FeedbackLedger::default();
        l.push(entry("x", 0.5, Some(0.6), true));
        l.push(entry("y", 0.6, Some(0.55), false));
        assert_eq!(
            l.render(),
            "[x] increased validation AUROC from 50.00 to 60.00.\n[y] caused validation AUROC to drop from 60.00 to 55.00."
        );
    }
}
