//! Model checkpoints.
//!
//! A checkpoint directory holds `model.json` (variant, labels, config, stage
//! one artifacts and a parameter index), `model.bin` (every parameter as
//! little-endian f64, in index order) and `embeddings.txt`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, ParamStore};
use crate::drf::DrfSet;
use crate::error::{Error, Result};
use crate::models::generator::{LearnedGenerator, SignatureGenerator};
use crate::models::{Body, Expert, Model, ModelConfig, Stage1, VariantKind};
use crate::text::{load_embeddings, EmbeddingTable};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Index of the first value in `model.bin`, counted in f64s.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertManifest {
    pub domain: Option<String>,
    pub model: ModelManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub k: usize,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub kind: VariantKind,
    pub labels: Vec<String>,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
    pub experts: Vec<ExpertManifest>,
    pub weights: Vec<f64>,
    pub drf_sets: Option<Vec<DrfSet>>,
    /// Present only for a learned signature generator.
    pub generator: Option<GeneratorManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub dim: usize,
    pub n_values: usize,
    /// Resolved run configuration, `key = value` lines.
    pub run_config: String,
    pub model: ModelManifest,
}

fn index_store(store: &ParamStore, values: &mut Vec<f64>) -> Vec<ParamEntry> {
    store
        .iter()
        .map(|(_, p)| {
            let entry = ParamEntry {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                offset: values.len(),
            };
            values.extend_from_slice(p.value.data());
            entry
        })
        .collect()
}

fn index_model(model: &Model, values: &mut Vec<f64>) -> ModelManifest {
    let params = index_store(&model.store, values);
    let (experts, weights) = match &model.body {
        Body::Experts { experts, weights } => (
            experts
                .iter()
                .map(|e| ExpertManifest {
                    domain: e.domain.clone(),
                    model: index_model(&e.model, values),
                })
                .collect(),
            weights.clone(),
        ),
        _ => (Vec::new(), Vec::new()),
    };
    let (drf_sets, generator) = match &model.stage1 {
        Some(s) => {
            let generator = match &s.generator {
                SignatureGenerator::Ranker => None,
                SignatureGenerator::Learned(g) => Some(GeneratorManifest {
                    k: g.k,
                    params: index_store(&g.store, values),
                }),
            };
            (Some(s.drf_sets.clone()), generator)
        }
        None => (None, None),
    };
    ModelManifest {
        kind: model.kind,
        labels: model.labels.clone(),
        config: model.config,
        params,
        experts,
        weights,
        drf_sets,
        generator,
    }
}

pub fn save(model: &Model, dir: &Path, run_config: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut values = Vec::new();
    let manifest = Manifest {
        format: FORMAT_VERSION,
        dim: model.table.dim(),
        model: index_model(model, &mut values),
        n_values: 0,
        run_config: run_config.to_string(),
    };
    let manifest = Manifest {
        n_values: values.len(),
        ..manifest
    };
    let bytes: Vec<u8> = values.iter().flat_map(|x| x.to_le_bytes()).collect();
    let path = dir.join("model.bin");
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("model.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let path = dir.join("embeddings.txt");
    let mut out = Vec::new();
    model.table.write(&mut out)?;
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn fill_store(store: &mut ParamStore, entries: &[ParamEntry], values: &[f64]) -> Result<()> {
    if store.len() != entries.len() {
        return Err(Error::Data(format!(
            "checkpoint lists {} parameters, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for e in entries {
        let id = store
            .find(&e.name)
            .ok_or_else(|| Error::Data(format!("unknown parameter {} in checkpoint", e.name)))?;
        let target = store.value_mut(id);
        if target.shape() != (e.rows, e.cols) {
            return Err(Error::Data(format!(
                "parameter {} has shape {:?} in checkpoint, {:?} in model",
                e.name,
                (e.rows, e.cols),
                target.shape()
            )));
        }
        let end = e.offset + e.rows * e.cols;
        let slice = values
            .get(e.offset..end)
            .ok_or_else(|| Error::Data(format!("parameter {} runs past model.bin", e.name)))?;
        *target = Matrix::from_vec(e.rows, e.cols, slice.to_vec());
    }
    Ok(())
}

fn rebuild(m: &ModelManifest, table: &Arc<EmbeddingTable>, values: &[f64]) -> Result<Model> {
    let mut model = if m.kind.is_moe() {
        let experts = m
            .experts
            .iter()
            .map(|e| {
                Ok(Expert {
                    domain: e.domain.clone(),
                    model: rebuild(&e.model, table, values)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Model::mixture(m.kind, m.labels.clone(), table.clone(), m.config, experts, m.weights.clone())?
    } else {
        let mut model = Model::new(m.kind, m.labels.clone(), table.clone(), m.config, 0)?;
        fill_store(&mut model.store, &m.params, values)?;
        model
    };
    if let Some(drf_sets) = &m.drf_sets {
        let generator = match &m.generator {
            None => SignatureGenerator::Ranker,
            Some(g) => {
                let mut learned =
                    LearnedGenerator::new(table, drf_sets, g.k, m.config.trainable_embeddings, 0)?;
                fill_store(&mut learned.store, &g.params, values)?;
                SignatureGenerator::Learned(Box::new(learned))
            }
        };
        model.stage1 = Some(Stage1 {
            drf_sets: drf_sets.clone(),
            generator,
        });
    }
    Ok(model)
}

pub fn load(dir: &Path) -> Result<(Model, Manifest)> {
    let path = dir.join("model.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "checkpoint format {} (expected {FORMAT_VERSION})",
            manifest.format
        )));
    }
    let path = dir.join("model.bin");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != manifest.n_values * 8 {
        return Err(Error::Data(format!(
            "model.bin holds {} bytes, manifest expects {}",
            bytes.len(),
            manifest.n_values * 8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let table = Arc::new(load_embeddings(&dir.join("embeddings.txt"))?);
    if table.dim() != manifest.dim {
        return Err(Error::Data(format!(
            "embeddings have dimension {}, manifest says {}",
            table.dim(),
            manifest.dim
        )));
    }
    let model = rebuild(&manifest.model, &table, &values)?;
    Ok((model, manifest))
}
