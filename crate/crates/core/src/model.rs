//! Network parameters and forward passes: the disentangled graph encoder,
//! attribute/structure/sensitive decoders, the pair adversary, the
//! attribute-only anomaly decoder and a reconstruction baseline.
//!
//! Parameters live in plain [`Tensor`]s. `bind` puts them on a tape as leaf
//! variables; forward functions take the bound form.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::SparseMatrix;

/// Sizes shared by every network in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Width of `z_x`. `z_s` is always one column wide.
    pub latent: usize,
    /// Symmetric bound applied to `log σ` before exponentiation.
    pub log_sigma_bound: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            latent: 64,
            log_sigma_bound: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be positive"));
        }
        if self.latent == 0 {
            return Err(Error::config("latent", "must be positive"));
        }
        if !(self.log_sigma_bound > 0.0 && self.log_sigma_bound.is_finite()) {
            return Err(Error::config(
                "log_sigma_bound",
                "must be positive and finite",
            ));
        }
        Ok(())
    }
}

/// Parameter containers expose their tensors in a fixed order so optimiser
/// state and checkpoints line up.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn shapes(&self) -> Vec<[usize; 2]> {
        self.tensors().iter().map(|t| t.shape()).collect()
    }

    fn clone_tensors(&self) -> Vec<Tensor> {
        self.tensors().into_iter().cloned().collect()
    }

    /// Overwrites every tensor from `values`, which must match in count and
    /// shape.
    fn load_tensors(&mut self, values: &[Tensor]) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != values.len() {
            return Err(Error::Precondition(format!(
                "expected {} tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::Shape {
                    op: "load_tensors",
                    lhs: slot.shape(),
                    rhs: v.shape(),
                });
            }
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            **slot = v.clone();
        }
        Ok(())
    }
}

/// Affine map `x·W + b` with `b` a `1×out` row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weight: Tensor::from_vec(fan_in, fan_out, data).expect("sized above"),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundLayer<'t> {
        BoundLayer {
            weight: tape.leaf(self.weight.clone(), trainable),
            bias: tape.leaf(self.bias.clone(), trainable),
        }
    }
}

impl Parameters for Layer {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLayer<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> BoundLayer<'t> {
    pub fn affine(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(self.weight)?.add_row_bias(self.bias)
    }

    /// Graph convolution `Â·x·W + b`.
    pub fn propagate(&self, adj: &Arc<SparseMatrix>, x: Var<'t>) -> Result<Var<'t>> {
        self.affine(x.spmm_by(adj)?)
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        vec![self.weight, self.bias]
    }
}

/// Two layers with a ReLU between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLayer {
    pub first: Layer,
    pub second: Layer,
}

impl TwoLayer {
    pub fn glorot(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            first: Layer::glorot(input, hidden, rng),
            second: Layer::glorot(hidden, output, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            first: Layer::zeros(input, hidden),
            second: Layer::zeros(hidden, output),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundTwoLayer<'t> {
        BoundTwoLayer {
            first: self.first.bind(tape, trainable),
            second: self.second.bind(tape, trainable),
        }
    }
}

impl Parameters for TwoLayer {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.first.tensors();
        v.extend(self.second.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.first.tensors_mut();
        v.extend(self.second.tensors_mut());
        v
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundTwoLayer<'t> {
    pub first: BoundLayer<'t>,
    pub second: BoundLayer<'t>,
}

impl<'t> BoundTwoLayer<'t> {
    /// Dense MLP; returns `(hidden activations, output)`.
    pub fn mlp(&self, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.first.affine(x)?.relu();
        Ok((h, self.second.affine(h)?))
    }

    /// Two graph convolutions, ReLU after the first only.
    pub fn gcn(&self, adj: &Arc<SparseMatrix>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.first.propagate(adj, x)?.relu();
        Ok((h, self.second.propagate(adj, h)?))
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut v = self.first.vars();
        v.extend(self.second.vars());
        v
    }
}

/// Shared graph layer followed by the `μ`, `log σ` and (optionally) `z_s`
/// heads. Without the `z_s` head the encoder is a plain variational graph
/// encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub shared: Layer,
    pub mu: Layer,
    pub log_sigma: Layer,
    pub phi: Option<Layer>,
}

impl EncoderParams {
    pub fn glorot(d: usize, cfg: &ModelConfig, sensitive_head: bool, rng: &mut ChaCha8Rng) -> Self {
        Self {
            shared: Layer::glorot(d, cfg.hidden, rng),
            mu: Layer::glorot(cfg.hidden, cfg.latent, rng),
            log_sigma: Layer::glorot(cfg.hidden, cfg.latent, rng),
            phi: sensitive_head.then(|| Layer::glorot(cfg.hidden, 1, rng)),
        }
    }

    pub fn zeros(d: usize, cfg: &ModelConfig, sensitive_head: bool) -> Self {
        Self {
            shared: Layer::zeros(d, cfg.hidden),
            mu: Layer::zeros(cfg.hidden, cfg.latent),
            log_sigma: Layer::zeros(cfg.hidden, cfg.latent),
            phi: sensitive_head.then(|| Layer::zeros(cfg.hidden, 1)),
        }
    }

    pub fn latent_width(&self) -> usize {
        self.mu.fan_out() + usize::from(self.phi.is_some())
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundEncoder<'t> {
        BoundEncoder {
            shared: self.shared.bind(tape, trainable),
            mu: self.mu.bind(tape, trainable),
            log_sigma: self.log_sigma.bind(tape, trainable),
            phi: self.phi.as_ref().map(|l| l.bind(tape, trainable)),
        }
    }
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.shared.tensors();
        v.extend(self.mu.tensors());
        v.extend(self.log_sigma.tensors());
        if let Some(p) = &self.phi {
            v.extend(p.tensors());
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.shared.tensors_mut();
        v.extend(self.mu.tensors_mut());
        v.extend(self.log_sigma.tensors_mut());
        if let Some(p) = &mut self.phi {
            v.extend(p.tensors_mut());
        }
        v
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundEncoder<'t> {
    pub shared: BoundLayer<'t>,
    pub mu: BoundLayer<'t>,
    pub log_sigma: BoundLayer<'t>,
    pub phi: Option<BoundLayer<'t>>,
}

impl<'t> BoundEncoder<'t> {
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut v = self.shared.vars();
        v.extend(self.mu.vars());
        v.extend(self.log_sigma.vars());
        if let Some(p) = &self.phi {
            v.extend(p.vars());
        }
        v
    }
}

/// Encoder outputs on a tape. `z_s` is `None` for the plain encoder.
#[derive(Clone, Copy, Debug)]
pub struct Latent<'t> {
    pub z_x: Var<'t>,
    pub z_s: Option<Var<'t>>,
    pub mu: Var<'t>,
    pub log_sigma: Var<'t>,
}

impl<'t> Latent<'t> {
    /// `[z_x | z_s]`, or `z_x` alone without a sensitive head.
    pub fn joint(&self) -> Result<Var<'t>> {
        match self.z_s {
            Some(zs) => self.z_x.concat_cols(zs),
            None => Ok(self.z_x),
        }
    }

    pub fn detach(&self) -> Latent<'t> {
        Latent {
            z_x: self.z_x.detach(),
            z_s: self.z_s.map(Var::detach),
            mu: self.mu.detach(),
            log_sigma: self.log_sigma.detach(),
        }
    }
}

/// Plain-tensor copy of a [`Latent`].
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub z_x: Tensor,
    pub z_s: Option<Tensor>,
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl From<&Latent<'_>> for LatentSample {
    fn from(l: &Latent<'_>) -> Self {
        Self {
            z_x: l.z_x.value().clone(),
            z_s: l.z_s.map(|v| v.value().clone()),
            mu: l.mu.value().clone(),
            log_sigma: l.log_sigma.value().clone(),
        }
    }
}

/// Runs the encoder. With `noise = None` the pass is deterministic and
/// `z_x` is `μ` itself; otherwise `z_x = μ + exp(log σ) ⊙ noise`.
pub fn encode<'t>(
    x: Var<'t>,
    adj: &Arc<SparseMatrix>,
    enc: &BoundEncoder<'t>,
    noise: Option<&Tensor>,
    log_sigma_bound: f64,
) -> Result<Latent<'t>> {
    let h = enc.shared.propagate(adj, x)?.relu();
    let ah = h.spmm_by(adj)?;
    let mu = enc.mu.affine(ah)?;
    let log_sigma = enc
        .log_sigma
        .affine(ah)?
        .clamp(-log_sigma_bound, log_sigma_bound);
    let z_s = enc.phi.map(|p| p.affine(ah)).transpose()?;
    let z_x = match noise {
        None => mu,
        Some(eps) => {
            let eps = x.tape().constant(eps.clone());
            mu.add(log_sigma.exp().hadamard(eps)?)?
        }
    };
    Ok(Latent {
        z_x,
        z_s,
        mu,
        log_sigma,
    })
}

/// Reconstructs attributes from the joint latent through two graph
/// convolutions.
pub fn decode_attributes<'t>(
    z: Var<'t>,
    adj: &Arc<SparseMatrix>,
    dec: &BoundTwoLayer<'t>,
) -> Result<Var<'t>> {
    Ok(dec.gcn(adj, z)?.1)
}

/// Edge logits `Z·Zᵀ`.
pub fn decode_structure(z: Var<'_>) -> Var<'_> {
    z.gram()
}

pub fn predict_sensitive(z_s: Var<'_>) -> Var<'_> {
    z_s.sigmoid()
}

/// One logit per `(z_x, z_s)` row pair; positive means "drawn jointly".
pub fn adversary_logit<'t>(z_x: Var<'t>, z_s: Var<'t>, adv: &BoundTwoLayer<'t>) -> Result<Var<'t>> {
    Ok(adv.mlp(z_x.concat_cols(z_s)?)?.1)
}

/// Row-local attribute decoder. Returns `(hidden, X̃)`.
pub fn anomaly_decode<'t>(
    z_x: Var<'t>,
    z_s_shuffled: Option<Var<'t>>,
    dec: &BoundTwoLayer<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let input = match z_s_shuffled {
        Some(zs) => z_x.concat_cols(zs)?,
        None => z_x,
    };
    dec.mlp(input)
}

/// Everything trained by the two-phase detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub attr_decoder: TwoLayer,
    pub adversary: TwoLayer,
    pub anomaly_decoder: TwoLayer,
}

impl ModelParams {
    /// `sensitive_head = false` builds the plain variational model: no
    /// `z_s`, and the decoders see `z_x` only.
    pub fn glorot(d: usize, cfg: &ModelConfig, sensitive_head: bool, rng: &mut ChaCha8Rng) -> Self {
        let encoder = EncoderParams::glorot(d, cfg, sensitive_head, rng);
        let w = encoder.latent_width();
        Self {
            attr_decoder: TwoLayer::glorot(w, cfg.hidden, d, rng),
            adversary: TwoLayer::glorot(cfg.latent + 1, cfg.hidden, 1, rng),
            anomaly_decoder: TwoLayer::glorot(w, cfg.hidden, d, rng),
            encoder,
        }
    }

    pub fn zeros(d: usize, cfg: &ModelConfig, sensitive_head: bool) -> Self {
        let encoder = EncoderParams::zeros(d, cfg, sensitive_head);
        let w = encoder.latent_width();
        Self {
            attr_decoder: TwoLayer::zeros(w, cfg.hidden, d),
            adversary: TwoLayer::zeros(cfg.latent + 1, cfg.hidden, 1),
            anomaly_decoder: TwoLayer::zeros(w, cfg.hidden, d),
            encoder,
        }
    }

    pub fn has_sensitive_head(&self) -> bool {
        self.encoder.phi.is_some()
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.attr_decoder.tensors());
        v.extend(self.adversary.tensors());
        v.extend(self.anomaly_decoder.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.attr_decoder.tensors_mut());
        v.extend(self.adversary.tensors_mut());
        v.extend(self.anomaly_decoder.tensors_mut());
        v
    }
}

/// Graph autoencoder with one latent, used as the host model for the
/// fairness regularizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub encoder: TwoLayer,
    pub decoder: TwoLayer,
}

impl BaselineParams {
    pub fn glorot(d: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            encoder: TwoLayer::glorot(d, cfg.hidden, cfg.latent, rng),
            decoder: TwoLayer::glorot(cfg.latent, cfg.hidden, d, rng),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundBaseline<'t> {
        BoundBaseline {
            encoder: self.encoder.bind(tape, trainable),
            decoder: self.decoder.bind(tape, trainable),
        }
    }
}

impl Parameters for BaselineParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.decoder.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        v
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundBaseline<'t> {
    pub encoder: BoundTwoLayer<'t>,
    pub decoder: BoundTwoLayer<'t>,
}

impl<'t> BoundBaseline<'t> {
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut v = self.encoder.vars();
        v.extend(self.decoder.vars());
        v
    }
}

/// `(X̂, structure logits)` of the baseline autoencoder. The encoder applies
/// ReLU after both convolutions.
pub fn baseline_forward<'t>(
    x: Var<'t>,
    adj: &Arc<SparseMatrix>,
    p: &BoundBaseline<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let z = p.encoder.gcn(adj, x)?.1.relu();
    let x_hat = p.decoder.gcn(adj, z)?.1;
    Ok((x_hat, z.gram()))
}
