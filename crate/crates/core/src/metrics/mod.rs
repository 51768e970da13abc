//! ROC-AUC and the resource-aware efficiency formulas.

mod efficiency;

pub use efficiency::{
    efficiency_score, minmax_normalize, read_auc_table, read_cohort_table, resource_cost, score_cohort,
    write_cohort_table, EfficiencyInputs, EfficiencyRow, ModelMeasurement, DEFAULT_LAMBDA,
};

use crate::data::Scheme;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Area under the ROC curve as the normalized Mann-Whitney U statistic.
/// Tied scores share their mean rank, so a tie counts as half a win.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "roc_auc",
            "records",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Metric(format!("score {i} is NaN")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "AUC needs both classes; got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based midranks over the positives.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_run = order[i..j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += midrank * pos_in_run as f64;
        i = j;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// One-vs-rest AUC for every output column of `scores` against 0/1 `targets`.
/// The binary scheme yields a single value for the positive column.
pub fn per_class_auc(scores: &Tensor, targets: &Tensor, scheme: Scheme) -> Result<Vec<(String, f64)>> {
    let k = scheme.n_outputs();
    let ok = |t: &Tensor| t.rank() == 2 && t.shape()[1] == k;
    if !ok(scores) || !ok(targets) || scores.shape()[0] != targets.shape()[0] {
        return Err(Error::dim(
            "macro_auc",
            "shape",
            format!("scores {:?}, targets {:?}, {k} outputs", scores.shape(), targets.shape()),
        ));
    }
    let n = scores.shape()[0];
    let names = scheme.class_names();
    let columns: Vec<usize> = match scheme {
        Scheme::Binary => vec![1],
        _ => (0..k).collect(),
    };
    columns
        .into_iter()
        .map(|c| {
            let s: Vec<f64> = (0..n).map(|i| scores.data()[i * k + c]).collect();
            let y: Vec<bool> = (0..n).map(|i| targets.data()[i * k + c] > 0.5).collect();
            roc_auc(&s, &y)
                .map(|a| (names[c].to_string(), a))
                .map_err(|e| match e {
                    Error::Metric(m) => Error::Metric(format!("class '{}': {m}", names[c])),
                    other => other,
                })
        })
        .collect()
}

/// Unweighted mean of the per-class AUCs.
pub fn macro_auc(scores: &Tensor, targets: &Tensor, scheme: Scheme) -> Result<f64> {
    let per = per_class_auc(scores, targets, scheme)?;
    Ok(per.iter().map(|(_, a)| a).sum::<f64>() / per.len() as f64)
}
