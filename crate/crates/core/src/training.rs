//! Two-phase training. Phase 1 learns disentangled latents with the
//! reconstruction/KL/adversary/predictiveness objective and early stopping;
//! phase 2 freezes the encoder and fits the anomaly decoder with the
//! score–sensitive correlation penalty. Also trains the reconstruction
//! baseline with an optional fairness regularizer.
//!
//! Every random draw comes from a ChaCha stream keyed by the run seed and a
//! fixed stream id, so a run is a pure function of `(graph, config)`.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{structure_mix, symmetric_normalize, AttributedGraph, SparseMatrix};
use crate::losses::{self, LossReport, LossWeights, Reduction};
use crate::metrics;
use crate::model::{self, BaselineParams, BoundTwoLayer, ModelConfig, ModelParams, Parameters};
use crate::synth::stage_rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    #[default]
    Full,
    /// Phase 2 without the correlation penalty.
    NoCorr,
    /// Plain variational encoder: no `z_s`, no adversary, no penalty.
    VanillaVgae,
    /// Phase 1 without the adversary.
    NoAdversary,
    /// Phase 2 also reconstructs structure from the decoder's hidden layer.
    WithStruct,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoCorr,
        Variant::VanillaVgae,
        Variant::NoAdversary,
        Variant::WithStruct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "FULL",
            Variant::NoCorr => "NO_CORR",
            Variant::VanillaVgae => "VANILLA_VGAE",
            Variant::NoAdversary => "NO_ADVERSARY",
            Variant::WithStruct => "WITH_STRUCT",
        }
    }

    pub fn has_sensitive_head(self) -> bool {
        self != Variant::VanillaVgae
    }

    pub fn has_adversary(self) -> bool {
        !matches!(self, Variant::VanillaVgae | Variant::NoAdversary)
    }

    pub fn has_corr(self) -> bool {
        !matches!(self, Variant::VanillaVgae | Variant::NoCorr)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::config(
                    "variant",
                    format!("unknown `{s}`, expected one of {}", names.join(", ")),
                )
            })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShufflePolicy {
    /// Fresh `z_s` permutation every phase-2 epoch.
    #[default]
    PerEpoch,
    /// One seed-derived permutation throughout.
    Fixed,
}

/// Which form of `z_s` enters the correlation penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrInput {
    #[default]
    Sigmoid,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub phase1_max_epochs: usize,
    pub patience: usize,
    pub phase2_epochs: usize,
    pub weights: LossWeights,
    pub variant: Variant,
    pub seed: u64,
    pub shuffle_policy: ShufflePolicy,
    pub reduction: Reduction,
    pub corr_input: CorrInput,
    /// When false, phase 1 reconstructs attributes only and never builds
    /// the `N×N` structure term.
    pub structure_reconstruction: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            phase1_max_epochs: 100,
            patience: 20,
            phase2_epochs: 100,
            weights: LossWeights::default(),
            variant: Variant::Full,
            seed: 0,
            shuffle_policy: ShufflePolicy::PerEpoch,
            reduction: Reduction::Mean,
            corr_input: CorrInput::Sigmoid,
            structure_reconstruction: true,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.phase1_max_epochs == 0 {
            return Err(Error::config("phase1_max_epochs", "must be positive"));
        }
        if self.patience == 0 || self.patience >= self.phase1_max_epochs {
            return Err(Error::config(
                "patience",
                "must be positive and below phase1_max_epochs",
            ));
        }
        self.weights.validate().map_err(|e| prefix(e, "weights"))?;
        self.model.validate().map_err(|e| prefix(e, "model"))
    }

    /// Serialised form of everything phase 1 depends on. Runs with equal
    /// signatures on the same graph produce identical phase-1 results.
    pub fn phase1_signature(&self) -> String {
        serde_json::json!({
            "learning_rate": self.learning_rate,
            "phase1_max_epochs": self.phase1_max_epochs,
            "patience": self.patience,
            "alpha": self.weights.alpha,
            "gamma": self.weights.gamma,
            "sensitive_head": self.variant.has_sensitive_head(),
            "adversary": self.variant.has_adversary(),
            "seed": self.seed,
            "reduction": self.reduction,
            "structure_reconstruction": self.structure_reconstruction,
            "model": self.model,
        })
        .to_string()
    }
}

fn prefix(e: Error, section: &str) -> Error {
    match e {
        Error::Config { field, reason } => Error::Config {
            field: format!("{section}.{field}"),
            reason,
        },
        other => other,
    }
}

mod stream {
    pub const INIT: u64 = 16;
    pub const SCORE_PERM: u64 = 17;
    pub const FIXED_PERM: u64 = 18;
    pub const BASELINE_INIT: u64 = 19;
    pub const PHASE1: u64 = 1 << 32;
    pub const PHASE2: u64 = 2 << 32;
    pub const FAKE_PAIRS: u64 = 3 << 32;
}

fn epoch_rng(seed: u64, phase: u64, epoch: usize) -> ChaCha8Rng {
    stage_rng(seed, phase + epoch as u64)
}

fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized above")
}

/// Graph-derived tensors shared by every run on the same graph.
pub struct GraphContext {
    pub adj: Arc<SparseMatrix>,
    pub x: Arc<Tensor>,
    /// Dense `0/1` adjacency; only built when structure terms are needed.
    pub a_dense: Option<Arc<Tensor>>,
    pub s: Vec<u8>,
    pub s_col: Arc<Tensor>,
    pub epsilon_mix: f64,
}

impl GraphContext {
    pub fn new(g: &AttributedGraph, with_structure: bool) -> Result<Self> {
        let n = g.n_nodes();
        if n < 2 {
            return Err(Error::Precondition(
                "training needs at least 2 nodes".into(),
            ));
        }
        Ok(Self {
            adj: Arc::new(symmetric_normalize(g.adjacency())),
            x: Arc::new(g.attributes().clone()),
            a_dense: with_structure.then(|| Arc::new(g.adjacency().densify())),
            s: g.sensitive().to_vec(),
            s_col: losses::sensitive_column(g.sensitive()),
            epsilon_mix: structure_mix(g)?,
        })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    fn dense_adjacency(&self) -> Result<&Arc<Tensor>> {
        self.a_dense.as_ref().ok_or_else(|| {
            Error::Precondition(
                "structure term requested but the context has no dense adjacency".into(),
            )
        })
    }
}

fn finite(term: &str, v: f64, phase: &'static str, epoch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            term: term.to_string(),
            phase,
            epoch,
        })
    }
}

fn apply_adam(
    adam: &mut AdamState,
    params: Vec<&mut Tensor>,
    vars: &[Var<'_>],
    grads: &Gradients,
) -> Result<()> {
    let g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    let mut params = params;
    adam.step(&mut params, &g)
}

/// Stops once the tracked loss has failed to strictly improve for
/// `patience` consecutive observations.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_index: Option<usize>,
    stale: usize,
    seen: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_index: None,
            stale: 0,
            seen: 0,
        }
    }

    /// Returns `(improved, stop)`.
    pub fn observe(&mut self, loss: f64) -> (bool, bool) {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_index = Some(self.seen);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.seen += 1;
        (improved, self.stale >= self.patience)
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_index.map(|i| (i, self.best))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase1Result {
    pub params: ModelParams,
    pub history: Vec<LossReport>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

impl Phase1Result {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }
}

struct Phase1Terms<'t> {
    total: Var<'t>,
    report: LossReport,
    z_x: Tensor,
    z_s: Option<Tensor>,
}

/// Builds the phase-1 objective for `epoch` on `tape`. The model-side
/// variables are appended to `vars` in optimiser order.
fn phase1_objective<'t>(
    tape: &'t Tape,
    ctx: &GraphContext,
    p: &ModelParams,
    cfg: &TrainConfig,
    epoch: usize,
    vars: &mut Vec<Var<'t>>,
) -> Result<Phase1Terms<'t>> {
    let mut rng = epoch_rng(cfg.seed, stream::PHASE1, epoch);
    let noise = gaussian(ctx.n(), cfg.model.latent, &mut rng);
    let enc = p.encoder.bind(tape, true);
    let dec = p.attr_decoder.bind(tape, true);
    vars.extend(enc.vars());
    vars.extend(dec.vars());
    let x = tape.constant((*ctx.x).clone());
    let lat = model::encode(x, &ctx.adj, &enc, Some(&noise), cfg.model.log_sigma_bound)?;
    let joint = lat.joint()?;
    let x_hat = model::decode_attributes(joint, &ctx.adj, &dec)?;
    let structure = if cfg.structure_reconstruction {
        Some((ctx.dense_adjacency()?, model::decode_structure(joint)))
    } else {
        None
    };
    let eps = if cfg.structure_reconstruction {
        ctx.epsilon_mix
    } else {
        0.0
    };
    let rec = losses::recon_loss(&ctx.x, x_hat, structure, eps, cfg.reduction)?;
    let kl = losses::kl_gaussian(lat.mu, lat.log_sigma, cfg.reduction)?;
    let pre = lat
        .z_s
        .map(|zs| losses::predictiveness_loss(zs, &ctx.s_col, cfg.reduction))
        .transpose()?;
    let dis = match (cfg.variant.has_adversary(), lat.z_s) {
        (true, Some(zs)) => {
            let adv = p.adversary.bind(tape, false);
            let logits = model::adversary_logit(lat.z_x, zs, &adv)?;
            Some(losses::disentangle_loss(logits, cfg.reduction)?)
        }
        _ => None,
    };
    let total = losses::total_loss(rec.total, kl, dis, pre, &cfg.weights)?;
    let val = |v: Option<Var<'_>>| v.map(|v| v.item()).transpose();
    let report = LossReport {
        rec_x: Some(rec.attr.item()?),
        rec_a: val(rec.structure)?,
        kl: Some(kl.item()?),
        dis: val(dis)?,
        pre: val(pre)?,
        adv: None,
        corr: None,
        total: total.item()?,
    };
    Ok(Phase1Terms {
        total,
        report,
        z_x: lat.z_x.value().clone(),
        z_s: lat.z_s.map(|v| v.value().clone()),
    })
}

/// Phase-1 objective for `epoch` evaluated at `params`, with that epoch's
/// reparameterisation noise.
pub fn phase1_epoch_loss(
    ctx: &GraphContext,
    params: &ModelParams,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let tape = Tape::new();
    let mut vars = Vec::new();
    Ok(phase1_objective(&tape, ctx, params, cfg, epoch, &mut vars)?
        .report
        .total)
}

fn adversary_step(
    z_x: Tensor,
    z_s: Tensor,
    adversary: &mut model::TwoLayer,
    adam: &mut AdamState,
    perm: &[usize],
    reduction: Reduction,
) -> Result<f64> {
    let tape = Tape::new();
    let adv = adversary.bind(&tape, true);
    let zx = tape.constant(z_x);
    let zs = tape.constant(z_s);
    let real = model::adversary_logit(zx, zs, &adv)?;
    let fake = model::adversary_logit(zx, zs.permute_rows(perm)?, &adv)?;
    let loss = losses::adversary_loss(real, fake, reduction)?;
    let value = loss.item()?;
    let grads = loss.backward()?;
    apply_adam(adam, adversary.tensors_mut(), &adv.vars(), &grads)?;
    Ok(value)
}

/// Initial parameters for a run.
pub fn init_params(d: usize, cfg: &TrainConfig) -> ModelParams {
    let mut rng = stage_rng(cfg.seed, stream::INIT);
    ModelParams::glorot(d, &cfg.model, cfg.variant.has_sensitive_head(), &mut rng)
}

pub fn train_phase1(ctx: &GraphContext, cfg: &TrainConfig) -> Result<Phase1Result> {
    cfg.validate()?;
    let mut params = init_params(ctx.x.cols(), cfg);
    let model_tensors = {
        let mut t = params.encoder.tensors();
        t.extend(params.attr_decoder.tensors());
        t
    };
    let mut adam = AdamState::new(cfg.learning_rate, &model_tensors);
    let mut adv_adam = AdamState::new(cfg.learning_rate, &params.adversary.tensors());
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_params = params.clone();
    let mut history = Vec::new();

    for epoch in 0..cfg.phase1_max_epochs {
        let tape = Tape::new();
        let mut vars = Vec::new();
        let terms = phase1_objective(&tape, ctx, &params, cfg, epoch, &mut vars)?;
        let mut report = terms.report;
        for (name, v) in [
            ("rec_x", report.rec_x),
            ("rec_a", report.rec_a),
            ("kl", report.kl),
            ("dis", report.dis),
            ("pre", report.pre),
            ("total", Some(report.total)),
        ] {
            if let Some(v) = v {
                finite(name, v, "phase1", epoch)?;
            }
        }
        let (improved, stop) = stopper.observe(report.total);
        if improved {
            best_params = params.clone();
        }
        let grads = terms.total.backward()?;
        let mut slots = params.encoder.tensors_mut();
        slots.extend(params.attr_decoder.tensors_mut());
        apply_adam(&mut adam, slots, &vars, &grads)?;

        if let (true, Some(z_s)) = (cfg.variant.has_adversary(), terms.z_s) {
            let perm = permutation(ctx.n(), &mut epoch_rng(cfg.seed, stream::FAKE_PAIRS, epoch));
            let adv = adversary_step(
                terms.z_x,
                z_s,
                &mut params.adversary,
                &mut adv_adam,
                &perm,
                cfg.reduction,
            )?;
            report.adv = Some(finite("adv", adv, "phase1", epoch)?);
        }
        history.push(report);
        if stop {
            break;
        }
    }
    let (best_epoch, best_loss) = stopper.best().expect("at least one epoch ran");
    log::debug!(
        "phase 1 ran {} epochs, best {best_loss:.6} at epoch {best_epoch}",
        history.len()
    );
    Ok(Phase1Result {
        params: best_params,
        history,
        best_epoch,
        best_loss,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase2Result {
    pub anomaly_decoder: model::TwoLayer,
    pub history: Vec<LossReport>,
    /// `|Pearson(o, s)|` of the training-pass scores, one per epoch.
    pub score_sensitive_corr: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Frozen-encoder outputs: `μ` and `z_s` (if any), computed on a tape on
/// which the encoder weights are tracked leaves.
struct FrozenLatent<'t> {
    mu: Var<'t>,
    z_s: Option<Var<'t>>,
    encoder_vars: Vec<Var<'t>>,
}

fn frozen_latent<'t>(
    tape: &'t Tape,
    ctx: &GraphContext,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<FrozenLatent<'t>> {
    let enc = params.encoder.bind(tape, true);
    let x = tape.constant((*ctx.x).clone());
    let lat = model::encode(x, &ctx.adj, &enc, None, cfg.model.log_sigma_bound)?.detach();
    Ok(FrozenLatent {
        mu: lat.mu,
        z_s: lat.z_s,
        encoder_vars: enc.vars(),
    })
}

struct Phase2Terms<'t> {
    o: Var<'t>,
    o_attr: Var<'t>,
    o_struct: Option<Var<'t>>,
    corr: Option<Var<'t>>,
}

/// Per-node scores for one permutation of `z_s`. Under the structure
/// variant the structure row error is mixed in with weight `ε`.
fn phase2_scores<'t>(
    ctx: &GraphContext,
    lat: &FrozenLatent<'t>,
    dec: &BoundTwoLayer<'t>,
    cfg: &TrainConfig,
    perm: &[usize],
) -> Result<Phase2Terms<'t>> {
    let shuffled = lat.z_s.map(|zs| zs.permute_rows(perm)).transpose()?;
    let (hidden, x_tilde) = model::anomaly_decode(lat.mu, shuffled, dec)?;
    let o_attr = losses::anomaly_scores(&ctx.x, x_tilde)?;
    let (o, o_struct) = if cfg.variant == Variant::WithStruct {
        let a = ctx.dense_adjacency()?;
        let probs = model::decode_structure(hidden).sigmoid();
        let o_struct = probs
            .sub(hidden.tape().constant((**a).clone()))?
            .square()
            .row_sum()?;
        let eps = ctx.epsilon_mix;
        (
            o_attr.scale(1.0 - eps).add(o_struct.scale(eps))?,
            Some(o_struct),
        )
    } else {
        (o_attr, None)
    };
    let corr = match (cfg.variant.has_corr(), lat.z_s) {
        (true, Some(zs)) => {
            let s_pred = match cfg.corr_input {
                CorrInput::Sigmoid => model::predict_sensitive(zs),
                CorrInput::Raw => zs,
            };
            Some(losses::correlation_constraint(o, s_pred)?)
        }
        _ => None,
    };
    Ok(Phase2Terms {
        o,
        o_attr,
        o_struct,
        corr,
    })
}

/// Scores with the fixed, seed-derived `z_s` permutation.
pub fn score(ctx: &GraphContext, params: &ModelParams, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let lat = frozen_latent(&tape, ctx, params, cfg)?;
    let dec = params.anomaly_decoder.bind(&tape, false);
    let perm = permutation(ctx.n(), &mut stage_rng(cfg.seed, stream::SCORE_PERM));
    let o = phase2_scores(ctx, &lat, &dec, cfg, &perm)?.o;
    let v = o.value().data().to_vec();
    Ok(v)
}

pub fn train_phase2(
    ctx: &GraphContext,
    phase1: &ModelParams,
    cfg: &TrainConfig,
) -> Result<Phase2Result> {
    cfg.validate()?;
    if phase1.has_sensitive_head() != cfg.variant.has_sensitive_head() {
        return Err(Error::Precondition(format!(
            "phase-1 parameters do not match variant {}",
            cfg.variant.name()
        )));
    }
    let mut params = phase1.clone();
    let mut adam = AdamState::new(cfg.learning_rate, &params.anomaly_decoder.tensors());
    let fixed = permutation(ctx.n(), &mut stage_rng(cfg.seed, stream::FIXED_PERM));
    let mut history = Vec::with_capacity(cfg.phase2_epochs);
    let mut trace = Vec::with_capacity(cfg.phase2_epochs);
    let reduce = |v: Var<'_>| -> Result<f64> {
        match cfg.reduction {
            Reduction::Mean => v.mean()?.item(),
            Reduction::Sum => v.sum()?.item(),
        }
    };

    for epoch in 0..cfg.phase2_epochs {
        let tape = Tape::new();
        let lat = frozen_latent(&tape, ctx, &params, cfg)?;
        let dec = params.anomaly_decoder.bind(&tape, true);
        let perm = match cfg.shuffle_policy {
            ShufflePolicy::PerEpoch => {
                permutation(ctx.n(), &mut epoch_rng(cfg.seed, stream::PHASE2, epoch))
            }
            ShufflePolicy::Fixed => fixed.clone(),
        };
        let terms = phase2_scores(ctx, &lat, &dec, cfg, &perm)?;
        let total = losses::ad_loss(terms.o, terms.corr, cfg.weights.beta, cfg.reduction)?;
        let report = LossReport {
            rec_x: Some(finite("rec_x", reduce(terms.o_attr)?, "phase2", epoch)?),
            rec_a: terms.o_struct.map(reduce).transpose()?,
            corr: terms.corr.map(|c| c.item()).transpose()?,
            total: finite("total", total.item()?, "phase2", epoch)?,
            ..LossReport::default()
        };
        if let Some(c) = report.corr {
            finite("corr", c, "phase2", epoch)?;
        }
        trace.push(metrics::abs_pearson(
            terms.o.value().data(),
            ctx.s_col.data(),
        ));
        let grads = total.backward()?;
        for v in &lat.encoder_vars {
            if grads.wrt(*v).data().iter().any(|&g| g != 0.0) {
                return Err(Error::Precondition(
                    "encoder received a gradient during phase 2".into(),
                ));
            }
        }
        apply_adam(
            &mut adam,
            params.anomaly_decoder.tensors_mut(),
            &dec.vars(),
            &grads,
        )?;
        history.push(report);
    }
    let scores = score(ctx, &params, cfg)?;
    Ok(Phase2Result {
        anomaly_decoder: params.anomaly_decoder,
        history,
        score_sensitive_corr: trace,
        scores,
    })
}

/// β values swept when a sweep names no axes. Sum reduction uses the much
/// smaller scale that raw sums call for.
pub fn default_beta_grid(reduction: Reduction) -> Vec<f64> {
    match reduction {
        Reduction::Mean => vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
        Reduction::Sum => vec![0.0, 1e-15, 5e-15, 1e-10, 5e-10, 1e-9],
    }
}

/// Gradients reaching each encoder tensor from one phase-2 loss, computed
/// with the encoder bound as trainable leaves. All zero when the freeze
/// holds.
pub fn phase2_encoder_gradients(
    ctx: &GraphContext,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let lat = frozen_latent(&tape, ctx, params, cfg)?;
    let dec = params.anomaly_decoder.bind(&tape, true);
    let perm = permutation(ctx.n(), &mut epoch_rng(cfg.seed, stream::PHASE2, 0));
    let terms = phase2_scores(ctx, &lat, &dec, cfg, &perm)?;
    let total = losses::ad_loss(terms.o, terms.corr, cfg.weights.beta, cfg.reduction)?;
    let grads = total.backward()?;
    Ok(lat.encoder_vars.iter().map(|v| grads.wrt(*v)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub variant: Variant,
    pub params: ModelParams,
    pub phase1_history: Vec<LossReport>,
    pub phase2_history: Vec<LossReport>,
    pub best_epoch: usize,
    pub score_sensitive_corr: Vec<f64>,
    pub scores: Vec<f64>,
}

impl TrainedModel {
    pub fn epochs_run(&self) -> [usize; 2] {
        [self.phase1_history.len(), self.phase2_history.len()]
    }

    pub fn from_phases(variant: Variant, p1: &Phase1Result, p2: Phase2Result) -> Self {
        let mut params = p1.params.clone();
        params.anomaly_decoder = p2.anomaly_decoder;
        Self {
            variant,
            params,
            phase1_history: p1.history.clone(),
            phase2_history: p2.history,
            best_epoch: p1.best_epoch,
            score_sensitive_corr: p2.score_sensitive_corr,
            scores: p2.scores,
        }
    }
}

pub fn train_with_context(ctx: &GraphContext, cfg: &TrainConfig) -> Result<TrainedModel> {
    let p1 = train_phase1(ctx, cfg)?;
    let p2 = train_phase2(ctx, &p1.params, cfg)?;
    Ok(TrainedModel::from_phases(cfg.variant, &p1, p2))
}

pub fn train(g: &AttributedGraph, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let structure = cfg.structure_reconstruction || cfg.variant == Variant::WithStruct;
    let ctx = GraphContext::new(g, structure)?;
    train_with_context(&ctx, cfg)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    #[default]
    None,
    Fairod,
    Correlation,
    Hin,
}

impl Regularizer {
    pub const ALL: [Regularizer; 4] = [
        Regularizer::None,
        Regularizer::Fairod,
        Regularizer::Correlation,
        Regularizer::Hin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Fairod => "fairod",
            Regularizer::Correlation => "correlation",
            Regularizer::Hin => "hin",
        }
    }
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regularizer::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Regularizer::ALL.iter().map(|r| r.name()).collect();
                Error::config(
                    "regularizer",
                    format!("unknown `{s}`, expected one of {}", names.join(", ")),
                )
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub regularizer: Regularizer,
    /// Weight of the fairness regularizer.
    pub lambda: f64,
    /// Weight of the ranking-fidelity term; used when base scores are given.
    pub adcg_weight: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub reduction: Reduction,
    pub model: ModelConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            regularizer: Regularizer::None,
            lambda: 1.0,
            adcg_weight: 1.0,
            epochs: 100,
            learning_rate: 0.005,
            seed: 0,
            reduction: Reduction::Mean,
            model: ModelConfig::default(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("adcg_weight", self.adcg_weight)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        self.model.validate().map_err(|e| prefix(e, "model"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub regularizer: Regularizer,
    pub params: BaselineParams,
    pub history: Vec<LossReport>,
    pub scores: Vec<f64>,
}

/// Per-node score `(1−ε)‖x_i − x̂_i‖² + ε Σ_j (a_ij − σ(l_ij))²`.
fn baseline_scores<'t>(ctx: &GraphContext, x_hat: Var<'t>, logits: Var<'t>) -> Result<Var<'t>> {
    let a = ctx.dense_adjacency()?;
    let eps = ctx.epsilon_mix;
    let attr = losses::anomaly_scores(&ctx.x, x_hat)?;
    let structure = logits
        .sigmoid()
        .sub(logits.tape().constant((**a).clone()))?
        .square()
        .row_sum()?;
    attr.scale(1.0 - eps).add(structure.scale(eps))
}

/// Base scores rescaled to `[0, 1]` so the `2^b` gains stay finite.
fn normalized_base(base: &[f64]) -> Vec<f64> {
    let max = base.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        base.iter().map(|b| b.max(0.0) / max).collect()
    } else {
        vec![0.0; base.len()]
    }
}

/// Reconstruction autoencoder plus `λ·reg(o)`. For `fairod` and `hin`,
/// `adcg_weight·ADCG` joins when `base_scores` from an unregularized run are
/// supplied. With `λ = 0` no fairness term is added at all.
pub fn train_baseline_with_regularizer(
    ctx: &GraphContext,
    cfg: &BaselineConfig,
    base_scores: Option<&[f64]>,
) -> Result<BaselineModel> {
    cfg.validate()?;
    if cfg.regularizer == Regularizer::Fairod && base_scores.is_none() {
        return Err(Error::Precondition(
            "the fairod regularizer needs scores from an unregularized run".into(),
        ));
    }
    if let Some(b) = base_scores {
        if b.len() != ctx.n() {
            return Err(Error::Shape {
                op: "base_scores",
                lhs: [b.len(), 1],
                rhs: [ctx.n(), 1],
            });
        }
    }
    let base = base_scores.map(normalized_base);
    let use_reg = cfg.regularizer != Regularizer::None && cfg.lambda > 0.0;
    let adcg = match (cfg.regularizer, &base) {
        (Regularizer::Fairod | Regularizer::Hin, Some(b)) if cfg.adcg_weight > 0.0 => Some(b),
        _ => None,
    };

    let mut params = BaselineParams::glorot(
        ctx.x.cols(),
        &cfg.model,
        &mut stage_rng(cfg.seed, stream::BASELINE_INIT),
    );
    let mut adam = AdamState::new(cfg.learning_rate, &params.tensors());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let tape = Tape::new();
        let bound = params.bind(&tape, true);
        let x = tape.constant((*ctx.x).clone());
        let (x_hat, logits) = model::baseline_forward(x, &ctx.adj, &bound)?;
        let a = ctx.dense_adjacency()?;
        let rec = losses::recon_loss(
            &ctx.x,
            x_hat,
            Some((a, logits)),
            ctx.epsilon_mix,
            cfg.reduction,
        )?;
        let mut total = rec.total;
        let mut reg_value = None;
        if use_reg {
            let o = baseline_scores(ctx, x_hat, logits)?;
            let mut reg = match cfg.regularizer {
                Regularizer::Fairod => losses::fairod_dp(o, &ctx.s)?,
                Regularizer::Correlation => losses::correlation_regularizer(o, &ctx.s)?,
                Regularizer::Hin => losses::hin_dp(o.zscore()?.sigmoid(), &ctx.s)?,
                Regularizer::None => unreachable!("guarded by use_reg"),
            }
            .scale(cfg.lambda);
            if let Some(b) = adcg {
                reg = reg.add(losses::fairod_adcg(o, b, &ctx.s)?.scale(cfg.adcg_weight))?;
            }
            reg_value = Some(finite("reg", reg.item()?, "baseline", epoch)?);
            total = total.add(reg)?;
        }
        let report = LossReport {
            rec_x: Some(finite("rec_x", rec.attr.item()?, "baseline", epoch)?),
            rec_a: rec.structure.map(|v| v.item()).transpose()?,
            corr: reg_value,
            total: finite("total", total.item()?, "baseline", epoch)?,
            ..LossReport::default()
        };
        let grads = total.backward()?;
        let vars = bound.vars();
        apply_adam(&mut adam, params.tensors_mut(), &vars, &grads)?;
        history.push(report);
    }
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let (x_hat, logits) =
        model::baseline_forward(tape.constant((*ctx.x).clone()), &ctx.adj, &bound)?;
    let scores = baseline_scores(ctx, x_hat, logits)?.value().data().to_vec();
    drop(tape);
    Ok(BaselineModel {
        regularizer: cfg.regularizer,
        params,
        history,
        scores,
    })
}
