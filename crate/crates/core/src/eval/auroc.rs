//! AUROC as a Mann–Whitney rank statistic with average ranks for ties.

use super::EvalError;

/// Probability that a random positive outranks a random negative, ties
/// credited one half. O(n log n).
pub fn auroc(labels: &[u8], scores: &[f64]) -> Result<f64, EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::Dimension {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NanScore);
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass { n_pos, n_neg });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // 1-based average rank over each run of tied scores
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_run = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += avg_rank * pos_in_run as f64;
        i = j;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        assert_eq!(auroc(&[1, 0], &[0.9, 0.1]).unwrap(), 1.0);
        assert_eq!(auroc(&[1, 0], &[0.1, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn ties_get_half_credit() {
        assert_eq!(auroc(&[1, 0, 1, 0], &[0.5, 0.5, 0.9, 0.1]).unwrap(), 0.875);
        assert_eq!(auroc(&[1, 0, 1, 0], &[0.3; 4]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            auroc(&[1, 1], &[0.2, 0.3]),
            Err(EvalError::SingleClass { n_pos: 2, n_neg: 0 })
        ));
    }

    #[test]
    fn negative_zero_ties_positive_zero() {
        assert_eq!(auroc(&[1, 0], &[0.0, -0.0]).unwrap(), 0.5);
    }
}
