//! Objective terms for both training phases and the fairness regularizers
//! attached to the reconstruction baseline.
//!
//! Every term is written for minimisation. With [`Reduction::Mean`] terms
//! average over their entries; [`Reduction::Sum`] keeps raw sums, which is
//! the scale at which very small `β` values make sense.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid_scalar, CustomOp, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    /// Applies the reduction to a term whose mean is already on the tape.
    fn from_mean<'t>(self, mean: Var<'t>, count: usize) -> Var<'t> {
        match self {
            Reduction::Mean => mean,
            Reduction::Sum => mean.scale(count as f64),
        }
    }

    fn reduce(self, x: Var<'_>) -> Result<Var<'_>> {
        match self {
            Reduction::Mean => x.mean(),
            Reduction::Sum => x.sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Structure share of the reconstruction loss. Recomputed from the graph
    /// at training time; any configured value is overwritten.
    pub epsilon_mix: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            gamma: 1.0,
            beta: 10.0,
            epsilon_mix: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("beta", self.beta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    name,
                    format!("{v} must be finite and non-negative"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_mix) {
            return Err(Error::config("epsilon_mix", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Scalar value of every term for one epoch. Terms that a phase or variant
/// does not use are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec_x: Option<f64>,
    pub rec_a: Option<f64>,
    pub kl: Option<f64>,
    pub dis: Option<f64>,
    pub pre: Option<f64>,
    pub adv: Option<f64>,
    pub corr: Option<f64>,
    pub total: f64,
}

/// Sensitive values as an `n×1` float column.
pub fn sensitive_column(s: &[u8]) -> Arc<Tensor> {
    Arc::new(Tensor::column(s.iter().map(|&v| f64::from(v)).collect()))
}

fn group_sizes(s: &[u8]) -> [usize; 2] {
    let ones = s.iter().filter(|&&v| v == 1).count();
    [s.len() - ones, ones]
}

fn require_both_groups(s: &[u8], op: &str) -> Result<[usize; 2]> {
    let sizes = group_sizes(s);
    if sizes[0] == 0 || sizes[1] == 0 {
        return Err(Error::Precondition(format!(
            "{op} needs both sensitive groups"
        )));
    }
    Ok(sizes)
}

pub struct Recon<'t> {
    pub total: Var<'t>,
    pub attr: Var<'t>,
    pub structure: Option<Var<'t>>,
}

/// `(1−ε)·MSE(X, X̂) + ε·BCE(A, σ(logits))`. Without logits only the
/// attribute term is used, at full weight.
pub fn recon_loss<'t>(
    x: &Arc<Tensor>,
    x_hat: Var<'t>,
    structure: Option<(&Arc<Tensor>, Var<'t>)>,
    epsilon_mix: f64,
    reduction: Reduction,
) -> Result<Recon<'t>> {
    if !(0.0..=1.0).contains(&epsilon_mix) {
        return Err(Error::Domain {
            op: "recon_loss",
            detail: format!("epsilon_mix {epsilon_mix} outside [0, 1]"),
        });
    }
    let xv = x_hat.tape().constant((**x).clone());
    let attr = reduction.reduce(x_hat.sub(xv)?.square())?;
    match structure {
        None => Ok(Recon {
            total: attr,
            attr,
            structure: None,
        }),
        Some((a, logits)) => {
            let s = reduction.from_mean(logits.bce_with_logits(a)?, a.len());
            let total = attr.scale(1.0 - epsilon_mix).add(s.scale(epsilon_mix))?;
            Ok(Recon {
                total,
                attr,
                structure: Some(s),
            })
        }
    }
}

/// `(1/N) Σ_i Σ_j ½(μ² + σ² − 1 − 2 log σ)`.
pub fn kl_gaussian<'t>(mu: Var<'t>, log_sigma: Var<'t>, reduction: Reduction) -> Result<Var<'t>> {
    let n = mu.shape()[0];
    let inner = mu
        .square()
        .add(log_sigma.scale(2.0).exp())?
        .sub(log_sigma.scale(2.0))?
        .add_scalar(-1.0)
        .sum()?
        .scale(0.5);
    Ok(match reduction {
        Reduction::Mean => inner.scale(1.0 / n as f64),
        Reduction::Sum => inner,
    })
}

/// Encoder-side density-ratio estimate: the average adversary logit on
/// true pairs.
pub fn disentangle_loss(logits_true: Var<'_>, reduction: Reduction) -> Result<Var<'_>> {
    reduction.reduce(logits_true)
}

/// Binary cross-entropy between `σ(z_s)` and the sensitive attribute.
pub fn predictiveness_loss<'t>(
    z_s: Var<'t>,
    s: &Arc<Tensor>,
    reduction: Reduction,
) -> Result<Var<'t>> {
    Ok(reduction.from_mean(z_s.bce_with_logits(s)?, s.len()))
}

/// `rec + kl + γ·dis + α·pre`; absent terms contribute nothing.
pub fn total_loss<'t>(
    rec: Var<'t>,
    kl: Var<'t>,
    dis: Option<Var<'t>>,
    pre: Option<Var<'t>>,
    weights: &LossWeights,
) -> Result<Var<'t>> {
    let mut t = rec.add(kl)?;
    if let Some(d) = dis {
        t = t.add(d.scale(weights.gamma))?;
    }
    if let Some(p) = pre {
        t = t.add(p.scale(weights.alpha))?;
    }
    Ok(t)
}

/// Adversary objective: true pairs labelled 1, shuffled pairs labelled 0.
pub fn adversary_loss<'t>(
    logits_true: Var<'t>,
    logits_fake: Var<'t>,
    reduction: Reduction,
) -> Result<Var<'t>> {
    let ones = Arc::new(Tensor::ones(logits_true.shape()[0], logits_true.shape()[1]));
    let zeros = Arc::new(Tensor::zeros(
        logits_fake.shape()[0],
        logits_fake.shape()[1],
    ));
    let t = reduction.from_mean(logits_true.bce_with_logits(&ones)?, ones.len());
    let f = reduction.from_mean(logits_fake.bce_with_logits(&zeros)?, zeros.len());
    t.add(f)
}

/// Row-wise squared reconstruction error `‖x_i − x̃_i‖²`.
pub fn anomaly_scores<'t>(x: &Arc<Tensor>, x_tilde: Var<'t>) -> Result<Var<'t>> {
    let xv = x_tilde.tape().constant((**x).clone());
    x_tilde.sub(xv)?.frobenius_sq_rows()
}

/// `|Pearson(o, s_pred)|`, zero when either side is constant.
pub fn correlation_constraint<'t>(o: Var<'t>, s_pred: Var<'t>) -> Result<Var<'t>> {
    o.abs_pearson(s_pred)
}

/// `reduce(o) + β·corr`.
pub fn ad_loss<'t>(
    o: Var<'t>,
    corr: Option<Var<'t>>,
    beta: f64,
    reduction: Reduction,
) -> Result<Var<'t>> {
    let rec = reduction.reduce(o)?;
    match corr {
        Some(c) => rec.add(c.scale(beta)),
        None => Ok(rec),
    }
}

/// `|Pearson(o, s)|`. A single-group input has no correlation to remove and
/// yields 0.
pub fn fairod_dp<'t>(o: Var<'t>, s: &[u8]) -> Result<Var<'t>> {
    if group_sizes(s).contains(&0) {
        log::warn!("fairod_dp: only one sensitive group present, returning 0");
    }
    o.abs_pearson(o.tape().constant((*sensitive_column(s)).clone()))
}

/// `|o·s| / (‖o‖·‖s‖)`, zero for a zero vector.
pub fn correlation_regularizer<'t>(o: Var<'t>, s: &[u8]) -> Result<Var<'t>> {
    o.abs_cosine(o.tape().constant((*sensitive_column(s)).clone()))
}

/// `Σ_k (mean_{s=1} P(ŷ=k) − mean_{s=0} P(ŷ=k))²` with `P(ŷ=1) = probs`.
pub fn hin_dp<'t>(probs: Var<'t>, s: &[u8]) -> Result<Var<'t>> {
    let [n0, n1] = require_both_groups(s, "hin_dp")?;
    let w = Arc::new(Tensor::column(
        s.iter()
            .map(|&v| {
                if v == 1 {
                    1.0 / n1 as f64
                } else {
                    -1.0 / n0 as f64
                }
            })
            .collect(),
    ));
    let gap1 = probs.weighted_sum(&w)?;
    let gap0 = probs.scale(-1.0).add_scalar(1.0).weighted_sum(&w)?;
    gap1.square().add(gap0.square())
}

/// Per-group pieces of the ranking-fidelity loss, fixed by the base scores.
struct AdcgGroup {
    members: Vec<usize>,
    gains: Vec<f64>,
    idcg: f64,
}

fn adcg_groups(base: &[f64], s: &[u8]) -> Vec<AdcgGroup> {
    (0..=1u8)
        .map(|g| {
            let members: Vec<usize> = (0..s.len()).filter(|&i| s[i] == g).collect();
            let gains: Vec<f64> = members.iter().map(|&i| base[i].exp2() - 1.0).collect();
            let mut sorted = gains.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let idcg = sorted
                .iter()
                .enumerate()
                .map(|(r, gain)| gain / ((r + 2) as f64).log2())
                .sum();
            AdcgGroup {
                members,
                gains,
                idcg,
            }
        })
        .collect()
}

/// `Σ_j σ(o_j − o_i)` over the group, including `j = i`.
fn soft_ranks(o: &[f64], members: &[usize]) -> Vec<f64> {
    members
        .iter()
        .map(|&i| members.iter().map(|&j| sigmoid_scalar(o[j] - o[i])).sum())
        .collect()
}

fn adcg_value(o: &[f64], groups: &[AdcgGroup]) -> f64 {
    groups
        .iter()
        .map(|g| {
            if g.idcg == 0.0 {
                return 0.0;
            }
            let ranks = soft_ranks(o, &g.members);
            let dcg: f64 = g
                .gains
                .iter()
                .zip(&ranks)
                .map(|(gain, r)| gain / (1.0 + r).log2())
                .sum();
            1.0 - dcg / g.idcg
        })
        .sum()
}

struct AdcgOp {
    groups: Vec<AdcgGroup>,
}

impl CustomOp for AdcgOp {
    fn name(&self) -> &'static str {
        "fairod_adcg"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let o = inputs[0].data();
        let upstream = grad.data()[0];
        let mut g = vec![0.0; o.len()];
        for group in &self.groups {
            if group.idcg == 0.0 {
                continue;
            }
            let ranks = soft_ranks(o, &group.members);
            for (k, &i) in group.members.iter().enumerate() {
                let l = (1.0 + ranks[k]).log2();
                // d/dr of −gain / (idcg · log2(1 + r))
                let c = group.gains[k]
                    / (group.idcg * l * l * (1.0 + ranks[k]) * std::f64::consts::LN_2);
                for &j in &group.members {
                    if j == i {
                        continue;
                    }
                    let sj = sigmoid_scalar(o[j] - o[i]);
                    let ds = sj * (1.0 - sj);
                    g[j] += upstream * c * ds;
                    g[i] -= upstream * c * ds;
                }
            }
        }
        vec![Some(
            Tensor::from_vec(o.len(), 1, g).expect("same length as input"),
        )]
    }
}

/// Group ranking-fidelity loss against fixed base scores:
/// `Σ_s (1 − Σ_{i∈s} (2^{b_i} − 1) / (log₂(1 + Σ_{j∈s} σ(o_j − o_i)) · IDCG_s))`.
/// A group whose ideal DCG is zero contributes 0.
pub fn fairod_adcg<'t>(o: Var<'t>, base: &[f64], s: &[u8]) -> Result<Var<'t>> {
    require_both_groups(s, "fairod_adcg")?;
    let n = o.shape()[0];
    if o.shape() != [n, 1] || base.len() != n || s.len() != n {
        return Err(Error::Shape {
            op: "fairod_adcg",
            lhs: o.shape(),
            rhs: [base.len(), s.len()],
        });
    }
    if base.iter().any(|b| !b.is_finite()) {
        return Err(Error::Domain {
            op: "fairod_adcg",
            detail: "base scores must be finite".into(),
        });
    }
    let groups = adcg_groups(base, s);
    let value = adcg_value(o.value().data(), &groups);
    Ok(o.tape()
        .custom(&[o], Tensor::scalar(value), Box::new(AdcgOp { groups })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tests::{max_grad_error, uniform};
    use crate::autodiff::Tape;
    use crate::synth::stage_rng;
    use rand::Rng;

    fn scalar(f: impl for<'t> Fn(&'t Tape) -> Result<Var<'t>>) -> f64 {
        let tape = Tape::new();
        f(&tape).unwrap().item().unwrap()
    }

    fn col(v: &[f64]) -> Tensor {
        Tensor::column(v.to_vec())
    }

    #[test]
    fn recon_examples() {
        let x = Arc::new(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let a = Arc::new(Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
        let v = scalar(|t| {
            let logits = t.constant(a.map(|v| if v > 0.0 { 40.0 } else { -40.0 }));
            Ok(recon_loss(
                &x,
                t.constant((*x).clone()),
                Some((&a, logits)),
                0.5,
                Reduction::Mean,
            )?
            .total)
        });
        assert!(v < 1e-15);
        let v = scalar(|t| {
            let logits = t.constant(Tensor::zeros(2, 2));
            recon_loss(
                &x,
                t.constant(Tensor::zeros(2, 2)),
                Some((&a, logits)),
                1.0,
                Reduction::Mean,
            )?
            .structure
            .ok_or(Error::Precondition(String::new()))
        });
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        let tape = Tape::new();
        let r = recon_loss(
            &x,
            tape.constant(Tensor::zeros(2, 2)),
            Some((&a, tape.constant(Tensor::full(2, 2, 5.0)))),
            0.0,
            Reduction::Mean,
        )
        .unwrap();
        assert_eq!(r.total.item().unwrap(), r.attr.item().unwrap());
        assert!(recon_loss(
            &x,
            tape.constant(Tensor::zeros(2, 2)),
            None,
            1.5,
            Reduction::Mean
        )
        .is_err());
    }

    #[test]
    fn kl_examples() {
        let v = scalar(|t| {
            kl_gaussian(
                t.constant(Tensor::zeros(3, 4)),
                t.constant(Tensor::zeros(3, 4)),
                Reduction::Mean,
            )
        });
        assert_eq!(v, 0.0);
        let v = scalar(|t| {
            kl_gaussian(
                t.constant(Tensor::ones(3, 4)),
                t.constant(Tensor::zeros(3, 4)),
                Reduction::Mean,
            )
        });
        assert!((v - 0.5 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn small_term_examples() {
        let dis = |v: &[f64]| scalar(|t| disentangle_loss(t.constant(col(v)), Reduction::Mean));
        assert_eq!(dis(&[1.0, -1.0]), 0.0);
        assert_eq!(dis(&[0.0, 0.0]), 0.0);
        assert_eq!(dis(&[2.0, 2.0, 2.0]), 2.0);

        let s = sensitive_column(&[1, 0]);
        let p =
            scalar(|t| predictiveness_loss(t.constant(Tensor::zeros(2, 1)), &s, Reduction::Mean));
        assert!((p - std::f64::consts::LN_2).abs() < 1e-12);
        let logit = (0.9f64 / 0.1).ln();
        let p =
            scalar(|t| predictiveness_loss(t.constant(col(&[logit, -logit])), &s, Reduction::Mean));
        assert!((p - 0.105_360_515_657_826_3).abs() < 1e-9);

        let w = LossWeights {
            alpha: 3.0,
            gamma: 2.0,
            ..LossWeights::default()
        };
        let total = scalar(|t| {
            let one = t.constant(Tensor::scalar(1.0));
            total_loss(one, one, Some(one), Some(one), &w)
        });
        assert_eq!(total, 7.0);

        let adv = scalar(|t| {
            adversary_loss(
                t.constant(Tensor::zeros(3, 1)),
                t.constant(Tensor::zeros(4, 1)),
                Reduction::Mean,
            )
        });
        assert!((adv - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let a = scalar(|t| {
            adversary_loss(
                t.constant(col(&[1.0, -2.0])),
                t.constant(col(&[0.5])),
                Reduction::Mean,
            )
        });
        let b = scalar(|t| {
            adversary_loss(
                t.constant(col(&[-0.5])),
                t.constant(col(&[-1.0, 2.0])),
                Reduction::Mean,
            )
        });
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn score_and_correlation_examples() {
        let x = Arc::new(Tensor::from_rows(&[[1.0, 0.0]]));
        let o = scalar(|t| anomaly_scores(&x, t.constant(Tensor::zeros(1, 2)))?.sum());
        assert_eq!(o, 1.0);
        let c = |a: &[f64], b: &[f64]| {
            scalar(|t| correlation_constraint(t.constant(col(a)), t.constant(col(b))))
        };
        assert!((c(&[1.0, 2.0, 3.0], &[0.2, 0.4, 0.6]) - 1.0).abs() < 1e-12);
        assert!((c(&[1.0, 2.0, 3.0], &[0.6, 0.4, 0.2]) - 1.0).abs() < 1e-12);
        assert_eq!(c(&[2.0, 2.0, 2.0], &[0.6, 0.4, 0.2]), 0.0);
        let tape = Tape::new();
        assert!(
            correlation_constraint(tape.constant(col(&[1.0])), tape.constant(col(&[1.0]))).is_err()
        );

        let ad = |beta| {
            scalar(|t| {
                ad_loss(
                    t.constant(col(&[1.0, 3.0])),
                    Some(t.constant(Tensor::scalar(0.25))),
                    beta,
                    Reduction::Mean,
                )
            })
        };
        assert_eq!(ad(0.0), 2.0);
        assert!((ad(3.0) - (ad(1.0) + 2.0 * 0.25)).abs() < 1e-12);
    }

    #[test]
    fn regularizer_examples() {
        let dp = |o: &[f64], s: &[u8]| scalar(|t| fairod_dp(t.constant(col(o)), s));
        assert_eq!(dp(&[2.0, 2.0, 2.0, 2.0], &[1, 0, 1, 0]), 0.0);
        assert!((dp(&[1.0, 0.0, 1.0], &[1, 0, 1]) - 1.0).abs() < 1e-12);
        assert!((dp(&[3.0, 1.0, 2.0, 0.0], &[1, 0, 1, 0]) - 0.894_427_190_999_915_9).abs() < 1e-9);
        assert_eq!(dp(&[3.0, 1.0], &[1, 1]), 0.0);

        let cos = |o: &[f64], s: &[u8]| scalar(|t| correlation_regularizer(t.constant(col(o)), s));
        assert!((cos(&[1.0, 1.0], &[1, 1]) - 1.0).abs() < 1e-12);
        assert_eq!(cos(&[1.0, 0.0], &[0, 1]), 0.0);
        assert!((cos(&[1.0, 1.0, 0.0], &[1, 0, 0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert_eq!(cos(&[0.0, 0.0], &[0, 1]), 0.0);

        let hin = |p: &[f64], s: &[u8]| scalar(|t| hin_dp(t.constant(col(p)), s));
        assert_eq!(hin(&[0.3, 0.3, 0.3], &[1, 0, 0]), 0.0);
        assert!((hin(&[1.0, 0.0], &[1, 0]) - 2.0).abs() < 1e-12);
        assert!((hin(&[0.8, 0.2], &[1, 0]) - 0.72).abs() < 1e-12);
        let tape = Tape::new();
        assert!(hin_dp(tape.constant(col(&[0.5, 0.5])), &[1, 1]).is_err());
    }

    #[test]
    fn adcg_examples() {
        let one_each = scalar(|t| fairod_adcg(t.constant(col(&[2.0, 3.0])), &[2.0, 3.0], &[0, 1]));
        let per_group = 1.0 - 1.0 / 1.5f64.log2();
        assert!((per_group + 0.709_511_291_351_454_8).abs() < 1e-9);
        assert!((one_each - 2.0 * per_group).abs() < 1e-12);

        let o = [0.1, 0.5, 0.9, 0.2, 0.4];
        let base = [0.3, 0.6, 0.9, 0.7, 0.1];
        let s = [0, 0, 0, 1, 1];
        let v = scalar(|t| fairod_adcg(t.constant(col(&o)), &base, &s));
        assert!(v.is_finite());
        let mirrored_s: Vec<u8> = s.iter().map(|&v| 1 - v).collect();
        let w = scalar(|t| fairod_adcg(t.constant(col(&o)), &base, &mirrored_s));
        assert!((v - w).abs() < 1e-12);

        let zero_gain = scalar(|t| {
            fairod_adcg(
                t.constant(col(&[1.0, 2.0, 3.0])),
                &[0.0, 0.0, 1.0],
                &[0, 0, 1],
            )
        });
        assert!((zero_gain - per_group).abs() < 1e-12);

        let tape = Tape::new();
        assert!(fairod_adcg(tape.constant(col(&[1.0, 2.0])), &[1.0, 2.0], &[0, 0]).is_err());
        assert!(fairod_adcg(tape.constant(col(&[1.0, 2.0])), &[1.0], &[0, 1]).is_err());
    }

    #[test]
    fn hin_is_twice_squared_gap() {
        let mut rng = stage_rng(11, 0);
        for _ in 0..10 {
            let n = rng.random_range(2..20);
            let mut s: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
            s[0] = 0;
            s[1] = 1;
            let p = uniform(&mut rng, n, 1, 0.0, 1.0);
            let v = scalar(|t| hin_dp(t.constant(p.clone()), &s));
            let mean = |g: u8| {
                let m: Vec<f64> = (0..n).filter(|&i| s[i] == g).map(|i| p.data()[i]).collect();
                m.iter().sum::<f64>() / m.len() as f64
            };
            assert!((v - 2.0 * (mean(1) - mean(0)).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_is_affine_invariant() {
        let mut rng = stage_rng(12, 0);
        let o = uniform(&mut rng, 30, 1, 0.0, 5.0);
        let sp = uniform(&mut rng, 30, 1, 0.0, 1.0);
        let base =
            scalar(|t| correlation_constraint(t.constant(o.clone()), t.constant(sp.clone())));
        let moved = scalar(|t| {
            correlation_constraint(t.constant(o.map(|v| 3.5 * v - 2.0)), t.constant(sp.clone()))
        });
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn reduction_sum_scales_terms() {
        let mu = Tensor::full(4, 2, 1.0);
        let ls = Tensor::zeros(4, 2);
        let mean = scalar(|t| {
            kl_gaussian(
                t.constant(mu.clone()),
                t.constant(ls.clone()),
                Reduction::Mean,
            )
        });
        let sum = scalar(|t| {
            kl_gaussian(
                t.constant(mu.clone()),
                t.constant(ls.clone()),
                Reduction::Sum,
            )
        });
        assert!((sum - 4.0 * mean).abs() < 1e-12);
        let o = col(&[1.0, 2.0, 3.0]);
        assert_eq!(
            scalar(|t| ad_loss(t.constant(o.clone()), None, 1.0, Reduction::Sum)),
            6.0
        );
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = stage_rng(13, 0);
        for _ in 0..5 {
            let n = rng.random_range(4..9);
            let mut s: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
            s[0] = 0;
            s[1] = 1;
            let sc = sensitive_column(&s);
            let base: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
            let x = Arc::new(uniform(&mut rng, n, 3, -1.0, 1.0));
            let a = Arc::new(
                Tensor::from_vec(
                    n,
                    n,
                    (0..n * n)
                        .map(|_| f64::from(rng.random_bool(0.3)))
                        .collect(),
                )
                .unwrap(),
            );
            let inputs = [
                uniform(&mut rng, n, 3, -1.0, 1.0),
                uniform(&mut rng, n, n, -2.0, 2.0),
                uniform(&mut rng, n, 1, 0.1, 2.0),
                uniform(&mut rng, n, 1, -2.0, 2.0),
            ];
            type Term = for<'a, 't> fn(&'a Ctx, &[Var<'t>]) -> Result<Var<'t>>;
            struct Ctx {
                x: Arc<Tensor>,
                a: Arc<Tensor>,
                s: Vec<u8>,
                sc: Arc<Tensor>,
                base: Vec<f64>,
            }
            let ctx = Ctx { x, a, s, sc, base };
            let terms: [(&str, Term); 12] = [
                ("recon", |c, v| {
                    Ok(recon_loss(&c.x, v[0], Some((&c.a, v[1])), 0.3, Reduction::Mean)?.total)
                }),
                ("kl", |_, v| {
                    kl_gaussian(v[0], v[0].scale(0.5), Reduction::Mean)
                }),
                ("dis", |_, v| disentangle_loss(v[3], Reduction::Mean)),
                ("pre", |c, v| {
                    predictiveness_loss(v[3], &c.sc, Reduction::Mean)
                }),
                ("adv", |_, v| {
                    adversary_loss(v[3], v[3].scale(-0.7), Reduction::Mean)
                }),
                ("scores", |c, v| anomaly_scores(&c.x, v[0])?.sum()),
                ("corr", |_, v| correlation_constraint(v[2], v[3].sigmoid())),
                ("ad", |_, v| {
                    ad_loss(v[2], Some(v[2].abs_pearson(v[3])?), 0.7, Reduction::Mean)
                }),
                ("fairod_dp", |c, v| fairod_dp(v[2], &c.s)),
                ("fairod_adcg", |c, v| fairod_adcg(v[2], &c.base, &c.s)),
                ("cosine", |c, v| correlation_regularizer(v[2], &c.s)),
                ("hin", |c, v| hin_dp(v[3].sigmoid(), &c.s)),
            ];
            for (name, f) in terms {
                let err = max_grad_error(&inputs, |_, v| f(&ctx, v));
                assert!(err < 1e-4, "{name}: {err}");
            }
        }
    }
}
