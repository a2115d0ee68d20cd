//! Stage-one signature generation for unseen examples.
//!
//! The ranker applies the annotation scoring rule across every source
//! domain's DRF set at once, so a test example can pick up DRFs from several
//! domains. The learned generator is a separate small network trained to
//! reproduce annotated training signatures: a multi-label scorer over the
//! union of DRF words and a softmax head over source domains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, Graph, NodeId, ParamStore};
use crate::drf::{drf_score, DrfSet, Signature};
use crate::error::{Error, Result};
use crate::models::encoder::Encoder;
use crate::nn::Linear;
use crate::rng::Rng;
use crate::text::{EmbeddingTable, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorMode {
    Ranker,
    Learned,
}

impl std::str::FromStr for GeneratorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ranker" => Ok(GeneratorMode::Ranker),
            "learned" => Ok(GeneratorMode::Learned),
            other => Err(Error::Config(format!("unknown generator mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for GeneratorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GeneratorMode::Ranker => "ranker",
            GeneratorMode::Learned => "learned",
        })
    }
}

/// Scores every `(DRF, domain)` pair by the minimum squared distance to the
/// example's covered tokens and keeps the `k` best distinct words (score
/// ascending, then lexicographic). The signature's domain is that of the
/// single best pair.
///
/// With no covered token, or fewer than `k` scorable words, returns the `k`
/// most frequent DRFs overall under the lexicographically first domain,
/// flagged as a fallback.
pub fn generate_signature_ranker(
    tokens: &[Token],
    drf_sets: &[DrfSet],
    table: &EmbeddingTable,
    k: usize,
) -> Result<Signature> {
    if drf_sets.is_empty() {
        return Err(Error::Config("signature ranker needs at least one DRF set".into()));
    }
    let token_vecs: Vec<&[f64]> = tokens.iter().filter_map(|t| table.get(t.as_str())).collect();

    // word -> (score, domain), keeping the best pair per word
    let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
    if !token_vecs.is_empty() {
        for set in drf_sets {
            for word in set.words() {
                let Some(v) = table.get(word) else { continue };
                let score = drf_score(v, &token_vecs);
                let candidate = (score, set.domain.as_str());
                best.entry(word)
                    .and_modify(|cur| {
                        if candidate.0 < cur.0 || (candidate.0 == cur.0 && candidate.1 < cur.1) {
                            *cur = candidate;
                        }
                    })
                    .or_insert(candidate);
            }
        }
    }

    if best.len() < k || token_vecs.is_empty() {
        return Ok(ranker_fallback(drf_sets, k));
    }
    let mut ranked: Vec<(f64, &str, &str)> = best.into_iter().map(|(w, (s, d))| (s, w, d)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let domain = ranked[0].2.to_string();
    Ok(Signature::new(
        domain,
        ranked.into_iter().take(k).map(|(_, w, _)| w.to_string()).collect(),
    ))
}

fn ranker_fallback(drf_sets: &[DrfSet], k: usize) -> Signature {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for set in drf_sets {
        for e in &set.entries {
            let c = counts.entry(e.word.as_str()).or_insert(0);
            *c = (*c).max(e.count_in_domain);
        }
    }
    let mut words: Vec<(&str, u64)> = counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let domain = drf_sets
        .iter()
        .map(|s| s.domain.as_str())
        .min()
        .unwrap_or_default()
        .to_string();
    Signature {
        domain,
        drfs: words.into_iter().take(k).map(|(w, _)| w.to_string()).collect(),
        fallback: true,
    }
}

/// A trained multi-label DRF scorer plus domain classifier.
#[derive(Debug, Clone)]
pub struct LearnedGenerator {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub scorer: Linear,
    pub domain_head: Linear,
    /// Sorted, deduplicated DRF words of all source domains.
    pub union: Vec<String>,
    pub domains: Vec<String>,
    pub k: usize,
}

impl LearnedGenerator {
    pub fn new(
        table: &EmbeddingTable,
        drf_sets: &[DrfSet],
        k: usize,
        trainable_embeddings: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut union: Vec<String> = drf_sets
            .iter()
            .flat_map(|s| s.words().map(str::to_string))
            .collect();
        union.sort();
        union.dedup();
        if union.is_empty() {
            return Err(Error::Data("DRF union is empty; nothing to generate".into()));
        }
        let domains: Vec<String> = drf_sets.iter().map(|s| s.domain.clone()).collect();
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let d = table.dim();
        let encoder = Encoder::new(&mut store, "generator.encoder", table, trainable_embeddings, &mut rng);
        let scorer = Linear::new(&mut store, "generator.scorer", d, union.len(), &mut rng);
        let domain_head = Linear::new(&mut store, "generator.domain_head", d, domains.len(), &mut rng);
        Ok(LearnedGenerator {
            store,
            encoder,
            scorer,
            domain_head,
            union,
            domains,
            k,
        })
    }

    fn targets(&self, sig: &Signature) -> Result<(Vec<f64>, usize)> {
        let mut t = vec![0.0; self.union.len()];
        for w in &sig.drfs {
            let i = self
                .union
                .binary_search(w)
                .map_err(|_| Error::Data(format!("signature DRF {w:?} not in any DRF set")))?;
            t[i] = 1.0;
        }
        let d = self
            .domains
            .iter()
            .position(|x| *x == sig.domain)
            .ok_or_else(|| Error::Data(format!("signature domain {:?} unknown", sig.domain)))?;
        Ok((t, d))
    }

    fn heads(&self, g: &mut Graph<'_>, tokens: &[Token]) -> Result<(NodeId, NodeId)> {
        let h = self.encoder.encode(g, tokens)?;
        let h = g.relu(h);
        Ok((self.scorer.forward(g, h)?, self.domain_head.forward(g, h)?))
    }

    /// Binary cross-entropy over the DRF union plus domain cross-entropy.
    pub fn loss(&self, g: &mut Graph<'_>, tokens: &[Token], sig: &Signature) -> Result<NodeId> {
        let (targets, domain) = self.targets(sig)?;
        let (scores, domain_logits) = self.heads(g, tokens)?;
        let bce = g.sigmoid_bce(scores, &targets)?;
        if self.domains.len() < 2 {
            return Ok(bce);
        }
        let ce = g.softmax_cross_entropy(domain_logits, domain)?;
        g.add(bce, ce)
    }

    /// Adam over shuffled mini-batches; returns mean loss per epoch.
    pub fn train(
        &mut self,
        data: &[(Vec<Token>, Signature)],
        epochs: usize,
        batch_size: usize,
        adam: &AdamConfig,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Data("no annotated examples for the generator".into()));
        }
        let mut rng = Rng::new(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut losses = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            rng.shuffle(&mut order);
            let mut total = 0.0;
            for batch in order.chunks(batch_size.max(1)) {
                let grads = {
                    let mut g = Graph::new(&self.store);
                    let items = batch
                        .iter()
                        .map(|&i| self.loss(&mut g, &data[i].0, &data[i].1))
                        .collect::<Result<Vec<_>>>()?;
                    let sum = g.sum(&items)?;
                    let value = g.value(sum).item();
                    if !value.is_finite() {
                        return Err(Error::Numeric("generator loss is not finite".into()));
                    }
                    total += value;
                    let mean = g.scale(sum, 1.0 / batch.len() as f64);
                    g.backward(mean)?
                };
                self.store.accumulate(&grads);
                adam_step(&mut self.store, adam);
            }
            losses.push(total / data.len() as f64);
        }
        Ok(losses)
    }

    /// Raw DRF scores (logits, union order) and domain logits.
    pub fn scores(&self, tokens: &[Token]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new(&self.store);
        let (s, d) = self.heads(&mut g, tokens)?;
        Ok((g.value(s).data().to_vec(), g.value(d).data().to_vec()))
    }

    /// Top-`k` DRFs by score (ties lexicographic) under the argmax domain.
    pub fn generate(&self, tokens: &[Token]) -> Result<Signature> {
        let (scores, domain_logits) = self.scores(tokens)?;
        let mut order: Vec<usize> = (0..self.union.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| a.cmp(&b)));
        let domain = crate::eval::metrics::argmax(&domain_logits);
        Ok(Signature::new(
            self.domains[domain].clone(),
            order
                .into_iter()
                .take(self.k)
                .map(|i| self.union[i].clone())
                .collect(),
        ))
    }
}

#[derive(Debug, Clone)]
pub enum SignatureGenerator {
    Ranker,
    Learned(Box<LearnedGenerator>),
}

impl SignatureGenerator {
    pub fn mode(&self) -> GeneratorMode {
        match self {
            SignatureGenerator::Ranker => GeneratorMode::Ranker,
            SignatureGenerator::Learned(_) => GeneratorMode::Learned,
        }
    }

    pub fn generate(
        &self,
        tokens: &[Token],
        drf_sets: &[DrfSet],
        table: &EmbeddingTable,
        k: usize,
    ) -> Result<Signature> {
        match self {
            SignatureGenerator::Ranker => generate_signature_ranker(tokens, drf_sets, table, k),
            SignatureGenerator::Learned(g) => g.generate(tokens),
        }
    }
}
