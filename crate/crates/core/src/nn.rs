//! Affine layers on top of the autodiff graph.

use crate::autodiff::{Graph, Matrix, NodeId, ParamId, ParamStore};
use crate::error::Result;
use crate::rng::Rng;

/// `y = W x + b` with `W: out x in`, `b: out x 1`, `x: in x 1`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialization of weights and bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), Matrix::uniform(out_dim, in_dim, bound, rng));
        let bias = store.add(format!("{name}.bias"), Matrix::uniform(out_dim, 1, bound, rng));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let wx = g.matmul(w, x)?;
        g.add(wx, b)
    }

    pub fn num_scalars(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}
