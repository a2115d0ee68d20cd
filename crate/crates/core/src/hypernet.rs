//! The hypernetwork that emits per-example classifier weights.
//!
//! `f(u)`: `n_layers` blocks of `Linear(d, d) + ReLU` produce a hidden vector
//! `h`; two parallel heads read `h`, one emitting the `C x d` weight matrix
//! (flattened row-major) and one the `C` biases. The generated classifier is
//! then applied functionally: `logits = W p + b`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Matrix, NodeId, ParamId, ParamStore};
use crate::drf::Signature;
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::rng::Rng;
use crate::text::{embed_mean, tokenize, EmbeddingTable, Token};

/// Reserved conditioning token for unknown domains.
pub const UNK: &str = "UNK";

/// Scale applied to the weight head at initialization.
const WEIGHT_HEAD_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperNetConfig {
    pub dim: usize,
    pub n_classes: usize,
    pub n_layers: usize,
}

impl HyperNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("hypernetwork dim {} < 2", self.dim)));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("{} classes < 2", self.n_classes)));
        }
        if !(1..=3).contains(&self.n_layers) {
            return Err(Error::Config(format!(
                "hypernetwork layers must be 1, 2 or 3, got {}",
                self.n_layers
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditioningKind {
    DomainName,
    Unk,
    Signature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningInput {
    pub kind: ConditioningKind,
    pub tokens: Vec<Token>,
    /// Human-readable source, kept as classifier provenance.
    pub text: String,
}

impl ConditioningInput {
    pub fn domain_name(name: &str) -> Self {
        ConditioningInput {
            kind: ConditioningKind::DomainName,
            tokens: tokenize(name),
            text: name.to_string(),
        }
    }

    pub fn unk() -> Self {
        ConditioningInput {
            kind: ConditioningKind::Unk,
            tokens: vec![Token::new(UNK).expect("UNK is a valid token")],
            text: UNK.to_string(),
        }
    }

    pub fn signature(sig: &Signature) -> Self {
        ConditioningInput {
            kind: ConditioningKind::Signature,
            tokens: sig.tokens(),
            text: sig.render(),
        }
    }
}

/// How a conditioning input was turned into the hypernetwork input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditioningOutcome {
    pub used_unk: bool,
    /// The input had no token in the embedding table and was replaced by UNK.
    pub fallback: bool,
}

/// `theta_I = (W, b)` for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedClassifier {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub provenance: String,
}

impl GeneratedClassifier {
    /// `W` row-major followed by `b`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.weights.data().to_vec();
        out.extend_from_slice(&self.bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct HyperNetwork {
    pub config: HyperNetConfig,
    pub trunk: Vec<Linear>,
    pub weight_head: Linear,
    pub bias_head: Linear,
    /// Learned input vector standing in for unknown domains.
    pub unk: ParamId,
}

impl HyperNetwork {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: HyperNetConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let c = config.n_classes;
        let trunk = (0..config.n_layers)
            .map(|i| Linear::new(store, &format!("{prefix}.trunk{i}"), d, d, rng))
            .collect();
        let weight_head = Linear::new(store, &format!("{prefix}.weight_head"), d, c * d, rng);
        store.value_mut(weight_head.weight).scale(WEIGHT_HEAD_INIT_SCALE);
        store.value_mut(weight_head.bias).scale(WEIGHT_HEAD_INIT_SCALE);
        let bias_head = Linear::new(store, &format!("{prefix}.bias_head"), d, c, rng);
        let bound = 1.0 / (d as f64).sqrt();
        let unk = store.add(format!("{prefix}.unk"), Matrix::uniform(d, 1, bound, rng));
        Ok(HyperNetwork {
            config,
            trunk,
            weight_head,
            bias_head,
            unk,
        })
    }

    /// Scalars in the trunk and both heads (the UNK vector excluded):
    /// `n_layers (d^2 + d) + (C d) d + C d + C d + C`.
    pub fn num_scalars(&self) -> usize {
        self.trunk.iter().map(Linear::num_scalars).sum::<usize>()
            + self.weight_head.num_scalars()
            + self.bias_head.num_scalars()
    }

    /// Every parameter id owned by the network, UNK included.
    pub fn params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .trunk
            .iter()
            .chain([&self.weight_head, &self.bias_head])
            .flat_map(|l| [l.weight, l.bias])
            .collect();
        ids.push(self.unk);
        ids
    }

    /// Hypernetwork input node for `input`: the mean static embedding of its
    /// tokens, or the learned UNK vector.
    pub fn condition(
        &self,
        g: &mut Graph<'_>,
        input: &ConditioningInput,
        table: &EmbeddingTable,
    ) -> (NodeId, ConditioningOutcome) {
        if input.kind == ConditioningKind::Unk {
            return (
                g.param(self.unk),
                ConditioningOutcome {
                    used_unk: true,
                    fallback: false,
                },
            );
        }
        let (mean, covered) = embed_mean(&input.tokens, table);
        if covered == 0 {
            return (
                g.param(self.unk),
                ConditioningOutcome {
                    used_unk: true,
                    fallback: true,
                },
            );
        }
        (
            g.constant(Matrix::column(mean)),
            ConditioningOutcome {
                used_unk: false,
                fallback: false,
            },
        )
    }

    /// The conditioning vector as plain numbers.
    pub fn embed_conditioning(
        &self,
        store: &ParamStore,
        input: &ConditioningInput,
        table: &EmbeddingTable,
    ) -> (Vec<f64>, ConditioningOutcome) {
        let mut g = Graph::new(store);
        let (node, outcome) = self.condition(&mut g, input, table);
        (g.value(node).data().to_vec(), outcome)
    }

    /// Differentiable `(W, b)` nodes for the input node `u` (`d x 1`).
    pub fn generate(&self, g: &mut Graph<'_>, u: NodeId) -> Result<(NodeId, NodeId)> {
        let mut h = u;
        for layer in &self.trunk {
            let z = layer.forward(g, h)?;
            h = g.relu(z);
        }
        let flat = self.weight_head.forward(g, h)?;
        let w = g.reshape(flat, self.config.n_classes, self.config.dim)?;
        let b = self.bias_head.forward(g, h)?;
        Ok((w, b))
    }

    pub fn generate_classifier(
        &self,
        store: &ParamStore,
        u: &[f64],
        provenance: impl Into<String>,
    ) -> Result<GeneratedClassifier> {
        if u.len() != self.config.dim || u.iter().any(|x| !x.is_finite()) {
            return Err(Error::Shape {
                op: "generate_classifier",
                left: (u.len(), 1),
                right: (self.config.dim, 1),
            });
        }
        let mut g = Graph::new(store);
        let un = g.constant(Matrix::column(u.to_vec()));
        let (w, b) = self.generate(&mut g, un)?;
        Ok(GeneratedClassifier {
            weights: g.value(w).clone(),
            bias: g.value(b).data().to_vec(),
            provenance: provenance.into(),
        })
    }
}

/// `logits = W p + b` inside a graph.
pub fn apply_generated(g: &mut Graph<'_>, w: NodeId, b: NodeId, p: NodeId) -> Result<NodeId> {
    let wp = g.matmul(w, p)?;
    g.add(wp, b)
}

/// `logits = W p + b` on plain numbers.
pub fn apply_classifier(cls: &GeneratedClassifier, p: &[f64]) -> Result<Vec<f64>> {
    let (c, d) = cls.weights.shape();
    if p.len() != d || cls.bias.len() != c {
        return Err(Error::Shape {
            op: "apply_classifier",
            left: (c, d),
            right: (p.len(), 1),
        });
    }
    Ok((0..c)
        .map(|i| {
            cls.weights
                .row(i)
                .iter()
                .zip(p)
                .map(|(w, x)| w * x)
                .sum::<f64>()
                + cls.bias[i]
        })
        .collect())
}
