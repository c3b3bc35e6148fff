//! Training losses: pixel-wise ℓ1 and a perceptual loss measured on the
//! activations of a frozen evaluation network, plus the weights container
//! shared by generators and evaluation networks.

mod evalnet;
pub mod weights;

use projsynth_tensor::ops::{self, Reduction};
use projsynth_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

pub use evalnet::{EvalLayer, EvalNetConfig, EvaluationNetwork};
pub use weights::{load_weights, save_weights, Manifest, TensorEntry, WeightSet, WeightTensor};

use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    Perceptual,
}

impl LossKind {
    pub const NAMES: [&'static str; 2] = ["l1", "perceptual"];
}

impl std::str::FromStr for LossKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossKind::L1),
            "perceptual" => Ok(LossKind::Perceptual),
            other => bail!(Config, "unknown loss '{other}', expected one of {}", Self::NAMES.join(", ")),
        }
    }
}

/// Whether the ℓ1 loss is a plain sum or normalized by the pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L1Reduction {
    #[default]
    Sum,
    Mean,
}

impl From<L1Reduction> for Reduction {
    fn from(r: L1Reduction) -> Self {
        match r {
            L1Reduction::Sum => Reduction::Sum,
            L1Reduction::Mean => Reduction::Mean,
        }
    }
}

pub fn default_layers() -> Vec<String> {
    (1..=5).map(|b| format!("relu{b}_2")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default)]
    pub l1_reduction: L1Reduction,
    /// Evaluation-network layers compared by the perceptual loss.
    #[serde(default = "default_layers")]
    pub layers: Vec<String>,
    /// One weight per layer; empty means unit weights.
    #[serde(default)]
    pub layer_weights: Vec<f64>,
}

impl LossConfig {
    pub fn l1() -> Self {
        Self { kind: LossKind::L1, l1_reduction: L1Reduction::Sum, layers: default_layers(), layer_weights: Vec::new() }
    }

    pub fn perceptual() -> Self {
        Self { kind: LossKind::Perceptual, ..Self::l1() }
    }

    pub fn weights(&self) -> Vec<f64> {
        if self.layer_weights.is_empty() {
            vec![1.0; self.layers.len()]
        } else {
            self.layer_weights.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == LossKind::Perceptual {
            if self.layers.is_empty() {
                bail!(Config, "perceptual loss needs at least one layer");
            }
            if !self.layer_weights.is_empty() && self.layer_weights.len() != self.layers.len() {
                bail!(Config, "{} layer weights for {} layers", self.layer_weights.len(), self.layers.len());
            }
            if self.layer_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                bail!(Config, "layer weights must be positive, got {:?}", self.layer_weights);
            }
        }
        Ok(())
    }
}

/// `Σ |L − G|` (or its mean over pixels).
pub fn l1_loss<T: Element>(label: &Tensor<T>, generated: &Tensor<T>, reduction: L1Reduction) -> Result<Tensor<T>> {
    if label.shape() != generated.shape() {
        bail!(Dimension, "l1 loss: label {:?} vs generated {:?}", label.shape(), generated.shape());
    }
    Ok(ops::abs_diff(label, generated, reduction.into())?)
}

/// `Σ_k w_k · mean|V_k(L) − V_k(G)|`. The label and the network are treated
/// as constants; gradients flow to `generated` only.
pub fn perceptual_loss<T: Element>(
    label: &Tensor<T>,
    generated: &Tensor<T>,
    net: &EvaluationNetwork<T>,
    cfg: &LossConfig,
) -> Result<Tensor<T>> {
    if label.shape() != generated.shape() {
        bail!(Dimension, "perceptual loss: label {:?} vs generated {:?}", label.shape(), generated.shape());
    }
    cfg.validate()?;
    let weights = cfg.weights();
    let vl = net.activations(&label.detach(), &cfg.layers)?;
    let vg = net.activations(generated, &cfg.layers)?;
    let mut total: Option<Tensor<T>> = None;
    for ((a, b), w) in vl.iter().zip(&vg).zip(weights) {
        let term = ops::scale(&ops::abs_diff(b, a, Reduction::Mean)?, w);
        total = Some(match total {
            None => term,
            Some(t) => ops::add(&t, &term)?,
        });
    }
    Ok(total.expect("at least one layer"))
}

/// A configured loss, ready to evaluate.
#[derive(Debug, Clone)]
pub enum Objective<T: Element = f32> {
    L1(L1Reduction),
    Perceptual { net: EvaluationNetwork<T>, config: LossConfig },
}

impl<T: Element> Objective<T> {
    /// A perceptual objective requires `net`; an ℓ1 objective ignores it.
    pub fn new(config: &LossConfig, net: Option<EvaluationNetwork<T>>) -> Result<Self> {
        config.validate()?;
        match config.kind {
            LossKind::L1 => Ok(Objective::L1(config.l1_reduction)),
            LossKind::Perceptual => {
                let Some(net) = net else {
                    bail!(Config, "perceptual loss needs an evaluation network");
                };
                if let Some(missing) = config.layers.iter().find(|l| !net.has_layer(l)) {
                    bail!(Config, "evaluation network has no layer '{missing}'");
                }
                Ok(Objective::Perceptual { net, config: config.clone() })
            }
        }
    }

    pub fn kind(&self) -> LossKind {
        match self {
            Objective::L1(_) => LossKind::L1,
            Objective::Perceptual { .. } => LossKind::Perceptual,
        }
    }

    pub fn evaluate(&self, label: &Tensor<T>, generated: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Objective::L1(r) => l1_loss(label, generated, *r),
            Objective::Perceptual { net, config } => perceptual_loss(label, generated, net, config),
        }
    }
}
