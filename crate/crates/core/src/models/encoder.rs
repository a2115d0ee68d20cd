use std::collections::HashMap;

use crate::autodiff::{Graph, Matrix, NodeId, ParamId, ParamStore};
use crate::error::Result;
use crate::nn::Linear;
use crate::rng::Rng;
use crate::text::{EmbeddingTable, Token};

/// Prompt separator with its own learned embedding row.
pub const SEP: &str = "<sep>";

/// Mean-pooled token embeddings followed by `Linear -> ReLU -> Linear`.
///
/// The embedding matrix covers every table word plus [`SEP`] and starts from
/// the table vectors. Tokens outside that vocabulary are skipped; an input
/// with no known token pools to the zero vector.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub dim: usize,
    pub embedding: ParamId,
    pub trainable: bool,
    pub layers: [Linear; 2],
    index: HashMap<String, usize>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        table: &EmbeddingTable,
        trainable: bool,
        rng: &mut Rng,
    ) -> Self {
        let d = table.dim();
        let mut index = HashMap::with_capacity(table.len() + 1);
        let mut data = Vec::with_capacity((table.len() + 1) * d);
        for word in table.words() {
            index.insert(word.clone(), index.len());
            data.extend_from_slice(table.get(word).expect("table word"));
        }
        if !index.contains_key(SEP) {
            index.insert(SEP.to_string(), index.len());
            let bound = 1.0 / (d as f64).sqrt();
            data.extend((0..d).map(|_| rng.uniform(-bound, bound)));
        }
        let rows = index.len();
        let embedding = store.add(
            format!("{prefix}.embedding"),
            Matrix::from_vec(rows, d, data),
        );
        let layers = [
            Linear::new(store, &format!("{prefix}.mlp0"), d, d, rng),
            Linear::new(store, &format!("{prefix}.mlp1"), d, d, rng),
        ];
        Encoder {
            dim: d,
            embedding,
            trainable,
            layers,
            index,
        }
    }

    pub fn rows(&self, tokens: &[Token]) -> Vec<usize> {
        tokens
            .iter()
            .filter_map(|t| self.index.get(t.as_str()).copied())
            .collect()
    }

    pub fn vocab_size(&self) -> usize {
        self.index.len()
    }

    /// `d x 1` encoding of `tokens`.
    pub fn encode(&self, g: &mut Graph<'_>, tokens: &[Token]) -> Result<NodeId> {
        let rows = self.rows(tokens);
        let pooled = if rows.is_empty() {
            g.constant(Matrix::zeros(self.dim, 1))
        } else {
            let stacked = if self.trainable {
                g.param_rows(self.embedding, &rows)
            } else {
                let table = g.store().value(self.embedding);
                let mut m = Matrix::zeros(rows.len(), self.dim);
                for (i, &r) in rows.iter().enumerate() {
                    m.row_mut(i).copy_from_slice(table.row(r));
                }
                g.constant(m)
            };
            let mean = g.mean_rows(stacked)?;
            g.reshape(mean, self.dim, 1)?
        };
        let h = self.layers[0].forward(g, pooled)?;
        let h = g.relu(h);
        self.layers[1].forward(g, h)
    }

    /// Plain-number encoding.
    pub fn encode_values(&self, store: &ParamStore, tokens: &[Token]) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let out = self.encode(&mut g, tokens)?;
        Ok(g.value(out).data().to_vec())
    }
}
