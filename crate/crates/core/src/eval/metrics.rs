use crate::error::{Error, Result};

/// Probability clamp used by [`logloss`] and the CTR loss.
pub const PROB_EPS: f64 = 1e-7;

fn check_labels(labels: &[u8], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape("metric", &[labels.len()], &[n]));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid(format!("label {bad} outside {{0,1}}")));
    }
    Ok(())
}

/// Mann–Whitney AUC with ties credited one half, via average ranks.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    check_labels(labels, scores.len())?;
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::invalid(format!("score {bad} is NaN")));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(
            "AUC undefined: labels contain a single class",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives keeps tied (half-integer) ranks exact
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1, average (i+j+2)/2
        let twice_avg = (i + j + 2) as u128;
        let pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += pos * twice_avg;
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * q) as f64)
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1−ε]`.
pub fn logloss(labels: &[u8], preds: &[f64]) -> Result<f64> {
    check_labels(labels, preds.len())?;
    if preds.is_empty() {
        return Err(Error::invalid("logloss of empty input"));
    }
    let total: f64 = labels
        .iter()
        .zip(preds)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / preds.len() as f64)
}
