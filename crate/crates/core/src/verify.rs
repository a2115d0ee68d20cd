//! Finite-difference check of every variant's training loss.
//!
//! Each instance draws a small random vocabulary, example and signature,
//! builds the variant with trainable embeddings and compares the full
//! reverse-mode gradient of its cross-entropy (through encoder, hypernetwork
//! and generated classifier) against central differences. Parameters are
//! redrawn at unit scale first. Mixtures are checked through their experts,
//! the only networks they train.

use std::sync::Arc;

use crate::autodiff::{grad_check, Graph, NodeId, ParamStore};
use crate::drf::{DrfEntry, DrfSet, Signature};
use crate::error::Result;
use crate::models::generator::LearnedGenerator;
use crate::models::{DomainHint, Model, ModelConfig, VariantKind};
use crate::rng::Rng;
use crate::text::{EmbeddingTable, Token};

pub const TOLERANCE: f64 = 1e-4;
pub const EPSILON: f64 = 1e-5;
const MAX_COORDS: usize = 200;
/// ReLU inputs closer to zero than this are redrawn so no finite difference
/// straddles a kink.
const RELU_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: u64 = 50;
const DOMAINS: [&str; 2] = ["alpha", "beta"];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCase {
    pub component: String,
    pub dim: usize,
    pub n_classes: usize,
    pub coords: usize,
    pub max_rel_error: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub cases: Vec<GradCase>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(GradCase::passed)
    }

    pub fn worst(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

struct Instance {
    dim: usize,
    n_classes: usize,
    table: Arc<EmbeddingTable>,
    examples: Vec<(Vec<Token>, Signature, DomainHint, usize)>,
}

fn instance(rng: &mut Rng) -> Result<Instance> {
    let dim = 2 + rng.below(7);
    let n_classes = 2 + rng.below(2);
    let mut table = EmbeddingTable::new(dim);
    let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
    for w in DOMAINS.iter().map(|s| s.to_string()).chain(words.iter().cloned()) {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        table.insert(w, &v)?;
    }
    let word = |rng: &mut Rng| words[rng.below(words.len())].clone();
    let examples = (0..2)
        .map(|_| {
            let tokens = (0..2 + rng.below(4))
                .map(|_| Token::new(word(rng)).expect("generated word"))
                .collect();
            let domain = DOMAINS[rng.below(2)];
            let sig = Signature::new(domain, (0..1 + rng.below(3)).map(|_| word(rng)).collect());
            let hint = if rng.bernoulli(0.5) {
                DomainHint::Known(domain.to_string())
            } else {
                DomainHint::Unknown
            };
            (tokens, sig, hint, rng.below(n_classes))
        })
        .collect();
    Ok(Instance {
        dim,
        n_classes,
        table: Arc::new(table),
        examples,
    })
}

/// Redraws every parameter from U(-0.5, 0.5) so no path sits in the
/// tiny-gradient regime of its training initialization.
fn randomize(store: &mut ParamStore, seed: u64, attempt: u64) {
    let mut rng = Rng::derived(seed, &format!("randomize/{attempt}"));
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for x in store.value_mut(id).data_mut() {
            *x = rng.uniform(-0.5, 0.5);
        }
    }
}

/// Randomizes until every ReLU input clears [`RELU_MARGIN`], keeping the last
/// draw if none does.
fn redraw<F>(store: &mut ParamStore, seed: u64, loss: &F) -> Result<()>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    for attempt in 0..MAX_REDRAWS {
        randomize(store, seed, attempt);
        let mut g = Graph::new(store);
        loss(&mut g)?;
        if g.relu_margin() > RELU_MARGIN {
            break;
        }
    }
    Ok(())
}

fn check_model(kind: VariantKind, inst: &Instance, hn_layers: usize, seed: u64) -> Result<GradCase> {
    // mixtures train NoDA-shaped experts
    let built = if kind.is_moe() { VariantKind::NoDA } else { kind };
    let labels: Vec<String> = (0..inst.n_classes).map(|i| format!("c{i}")).collect();
    let config = ModelConfig {
        hn_layers,
        trainable_embeddings: true,
        ..ModelConfig::default()
    };
    let mut model = Model::new(built, labels, inst.table.clone(), config, seed)?;
    let inputs = inst
        .examples
        .iter()
        .map(|(tokens, sig, hint, gold)| Ok((model.input_with(tokens, Some(sig), hint)?, *gold)))
        .collect::<Result<Vec<_>>>()?;
    let body = model.body.clone();
    let table = model.table.clone();
    let loss = |g: &mut Graph<'_>| {
        let mut total = None;
        for (input, gold) in &inputs {
            let l = body.loss(g, input, *gold, &table)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        Ok(total.expect("two examples"))
    };
    redraw(&mut model.store, seed, &loss)?;
    let report = grad_check(&mut model.store, EPSILON, MAX_COORDS, seed, loss)?;
    Ok(GradCase {
        component: kind.to_string(),
        dim: inst.dim,
        n_classes: inst.n_classes,
        coords: report.coords_checked,
        max_rel_error: report.max_rel_error,
    })
}

fn check_generator(inst: &Instance, seed: u64) -> Result<GradCase> {
    let drf_sets: Vec<DrfSet> = DOMAINS
        .iter()
        .enumerate()
        .map(|(j, d)| DrfSet {
            domain: d.to_string(),
            entries: (0..4)
                .map(|i| DrfEntry {
                    word: format!("w{}", 4 * j + i),
                    mi: 0.1,
                    count_in_domain: 2,
                    count_elsewhere: 0,
                })
                .collect(),
        })
        .collect();
    let mut generator = LearnedGenerator::new(&inst.table, &drf_sets, 2, true, seed)?;
    let examples = inst.examples.clone();
    let mut store = std::mem::take(&mut generator.store);
    let loss = |g: &mut Graph<'_>| {
        let mut total = None;
        for (tokens, sig, _, _) in &examples {
            let l = generator.loss(g, tokens, sig)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        Ok(total.expect("two examples"))
    };
    redraw(&mut store, seed, &loss)?;
    let report = grad_check(&mut store, EPSILON, MAX_COORDS, seed, loss)?;
    Ok(GradCase {
        component: "generator".into(),
        dim: inst.dim,
        n_classes: inst.n_classes,
        coords: report.coords_checked,
        max_rel_error: report.max_rel_error,
    })
}

/// Runs `per_variant` random instances for every variant plus the learned
/// signature generator.
pub fn run_suite(per_variant: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = Rng::derived(seed, "gradcheck");
    let mut cases = Vec::new();
    for i in 0..per_variant {
        for kind in VariantKind::ALL {
            let inst = instance(&mut rng)?;
            let layers = 1 + (i % 3);
            cases.push(check_model(kind, &inst, layers, rng.next_u64())?);
        }
        let inst = instance(&mut rng)?;
        cases.push(check_generator(&inst, rng.next_u64())?);
    }
    Ok(SuiteReport { cases })
}
