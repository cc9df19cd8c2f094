//! Detection quality and group-fairness metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], y: &[u8], op: &'static str) -> Result<()> {
    if scores.len() != y.len() {
        return Err(Error::Shape {
            op,
            lhs: [scores.len(), 1],
            rhs: [y.len(), 1],
        });
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain {
            op,
            detail: "scores contain NaN".into(),
        });
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::Domain {
            op,
            detail: "labels must be 0 or 1".into(),
        });
    }
    Ok(())
}

/// Area under the ROC curve as the Mann–Whitney statistic; tied pairs count
/// one half.
pub fn auc_roc(scores: &[f64], y: &[u8]) -> Result<f64> {
    check_inputs(scores, y, "auc_roc")?;
    let pos = y.iter().filter(|&&v| v == 1).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Precondition("auc_roc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if y[k] == 1 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// Average precision `Σ (R_k − R_{k−1}) P_k` over descending score
/// thresholds, with tied scores forming one threshold.
pub fn auc_pr(scores: &[f64], y: &[u8]) -> Result<f64> {
    check_inputs(scores, y, "auc_pr")?;
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 {
        return Err(Error::Precondition(
            "auc_pr needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut new_tp = 0;
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            new_tp += usize::from(y[order[j]] == 1);
            j += 1;
        }
        seen += j - i;
        tp += new_tp;
        ap += (new_tp as f64 / pos as f64) * (tp as f64 / seen as f64);
        i = j;
    }
    Ok(ap)
}

/// Flags the `k` highest scores. Ties at the cutoff go to the lower id.
pub fn predict_labels(scores: &[f64], k: usize) -> Result<Vec<u8>> {
    if k > scores.len() {
        return Err(Error::Precondition(format!(
            "k = {k} exceeds {} scores",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = vec![0u8; scores.len()];
    for &i in &order[..k] {
        out[i] = 1;
    }
    Ok(out)
}

fn positive_rate(pred: &[u8], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut n, mut hit) = (0usize, 0usize);
    for (i, &p) in pred.iter().enumerate() {
        if keep(i) {
            n += 1;
            hit += usize::from(p == 1);
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

/// `|P(ŷ=1 | s=0) − P(ŷ=1 | s=1)|`.
pub fn delta_dp(pred: &[u8], s: &[u8]) -> Result<f64> {
    if pred.len() != s.len() {
        return Err(Error::Shape {
            op: "delta_dp",
            lhs: [pred.len(), 1],
            rhs: [s.len(), 1],
        });
    }
    let r0 = positive_rate(pred, |i| s[i] == 0);
    let r1 = positive_rate(pred, |i| s[i] == 1);
    match (r0, r1) {
        (Some(a), Some(b)) => Ok((a - b).abs()),
        _ => Err(Error::Precondition(
            "delta_dp needs both sensitive groups".into(),
        )),
    }
}

/// `|P(ŷ=1 | s=0, y=1) − P(ŷ=1 | s=1, y=1)|`, or `None` when a group has
/// no true anomalies.
pub fn delta_eo(pred: &[u8], y: &[u8], s: &[u8]) -> Result<Option<f64>> {
    if pred.len() != s.len() || y.len() != s.len() {
        return Err(Error::Shape {
            op: "delta_eo",
            lhs: [pred.len(), y.len()],
            rhs: [s.len(), 1],
        });
    }
    let r0 = positive_rate(pred, |i| s[i] == 0 && y[i] == 1);
    let r1 = positive_rate(pred, |i| s[i] == 1 && y[i] == 1);
    Ok(match (r0, r1) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    })
}

/// `|Pearson(a, b)|`, zero when either side is constant.
pub fn abs_pearson(a: &[f64], b: &[f64]) -> f64 {
    crate::autodiff::abs_pearson_value(a, b)
}

/// `|a·b| / (‖a‖‖b‖)`, zero when either side is the zero vector.
pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        (dot(a, b) / (aa * bb).sqrt()).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub delta_dp: f64,
    /// `null` when a group has no true anomalies.
    pub delta_eo: Option<f64>,
    pub k: usize,
    pub n: usize,
    pub seed: Option<u64>,
    pub predicted_s0: usize,
    pub predicted_s1: usize,
    pub true_s0: usize,
    pub true_s1: usize,
    pub both_s0: usize,
    pub both_s1: usize,
}

/// All four metrics on the same top-`k` labelling, with
/// `k = round(contamination · N)`. Contamination defaults to the true
/// anomaly rate.
pub fn evaluate(
    scores: &[f64],
    y: &[u8],
    s: &[u8],
    contamination: Option<f64>,
    seed: Option<u64>,
) -> Result<EvalReport> {
    let n = scores.len();
    if s.len() != n {
        return Err(Error::Shape {
            op: "evaluate",
            lhs: [n, 1],
            rhs: [s.len(), 1],
        });
    }
    let rate = match contamination {
        Some(c) if (0.0..=1.0).contains(&c) => c,
        Some(c) => {
            return Err(Error::config(
                "contamination",
                format!("{c} outside [0, 1]"),
            ))
        }
        None => y.iter().filter(|&&v| v == 1).count() as f64 / n.max(1) as f64,
    };
    let k = (rate * n as f64).round() as usize;
    let pred = predict_labels(scores, k)?;
    let count = |f: &dyn Fn(usize) -> bool| (0..n).filter(|&i| f(i)).count();
    Ok(EvalReport {
        auc_roc: auc_roc(scores, y)?,
        auc_pr: auc_pr(scores, y)?,
        delta_dp: delta_dp(&pred, s)?,
        delta_eo: delta_eo(&pred, y, s)?,
        k,
        n,
        seed,
        predicted_s0: count(&|i| pred[i] == 1 && s[i] == 0),
        predicted_s1: count(&|i| pred[i] == 1 && s[i] == 1),
        true_s0: count(&|i| y[i] == 1 && s[i] == 0),
        true_s1: count(&|i| y[i] == 1 && s[i] == 1),
        both_s0: count(&|i| pred[i] == 1 && y[i] == 1 && s[i] == 0),
        both_s1: count(&|i| pred[i] == 1 && y[i] == 1 && s[i] == 1),
    })
}
