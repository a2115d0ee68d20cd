//! Two-stage training, alpha-UNK masking, and mixture-of-experts training.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, Graph};
use crate::corpus::{DomainCorpus, Example, SplitPools};
use crate::drf::{annotate_tokens, build_drf_set, Signature};
use crate::error::{Error, Result};
use crate::eval::metrics::{argmax, MetricKind};
use crate::models::generator::{GeneratorMode, LearnedGenerator, SignatureGenerator};
use crate::models::{mix, Body, DomainHint, Expert, Model, ModelConfig, ModelInput, Stage1, VariantKind};
use crate::rng::Rng;
use crate::text::{tokenize, EmbeddingTable, Token};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha_unk: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_gen: usize,
    pub epochs_disc: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Dev metric used for best-epoch selection.
    pub metric: MetricKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha_unk: 0.1,
            lr: 1e-3,
            batch_size: 16,
            epochs_gen: 3,
            epochs_disc: 5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            metric: MetricKind::Accuracy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_unk) {
            return Err(Error::Config(format!("alpha_unk {} outside [0, 1]", self.alpha_unk)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.epochs_disc == 0 {
            return Err(Error::Config("epochs_disc must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Which model the log describes: the variant name or `expert/<domain>`.
    pub component: String,
    pub seed: u64,
    pub epoch_loss: Vec<f64>,
    /// `NaN` when the dev pool is empty.
    pub epoch_dev_metric: Vec<f64>,
    /// Seconds since training started, at the end of each epoch.
    pub epoch_elapsed: Vec<f64>,
    /// 1-based index of the epoch whose parameters were kept.
    pub best_epoch: usize,
    pub generator_loss: Vec<f64>,
    /// Dev signatures produced by the generator's fallback path.
    pub fallback_signatures: usize,
    /// Every domain whose examples were read during training or selection.
    pub domains_seen: BTreeSet<String>,
    pub train_ids: Vec<String>,
    /// HyperDN training steps conditioned on UNK and on the domain name.
    pub unk_conditionings: usize,
    pub name_conditionings: usize,
    /// Per-expert logs for mixtures.
    pub parts: Vec<TrainLog>,
}

impl TrainLog {
    pub fn wall_clock(&self) -> f64 {
        self.epoch_elapsed.last().copied().unwrap_or(0.0)
            + self.parts.iter().map(TrainLog::wall_clock).sum::<f64>()
    }

    /// `component,epoch,loss,dev_metric,elapsed_secs,best` rows for this log
    /// and every part.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["component", "seed", "epoch", "loss", "dev_metric", "elapsed_secs", "best"])?;
        self.write_rows(&mut w)?;
        w.flush().map_err(|e| Error::io("<train log>", e))?;
        Ok(())
    }

    fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for (i, loss) in self.epoch_loss.iter().enumerate() {
            w.write_record([
                self.component.clone(),
                self.seed.to_string(),
                (i + 1).to_string(),
                format!("{loss:.6}"),
                format!("{:.6}", self.epoch_dev_metric[i]),
                format!("{:.3}", self.epoch_elapsed[i]),
                (i + 1 == self.best_epoch).to_string(),
            ])?;
        }
        for part in &self.parts {
            part.write_rows(w)?;
        }
        Ok(())
    }
}

/// Label indices for `examples`, failing on labels outside `labels`.
pub fn label_indices(examples: &[Example], labels: &[String]) -> Result<Vec<usize>> {
    examples
        .iter()
        .map(|e| {
            labels
                .iter()
                .position(|l| *l == e.label)
                .ok_or_else(|| Error::Data(format!("example {} has unknown label {:?}", e.id, e.label)))
        })
        .collect()
}

/// Regroups a flat pool into per-domain corpora (train split only), in order
/// of first appearance.
pub fn group_by_domain(examples: &[Example]) -> Vec<DomainCorpus> {
    let mut out: Vec<DomainCorpus> = Vec::new();
    for e in examples {
        match out.iter_mut().find(|c| c.domain == e.domain) {
            Some(c) => c.train.push(e.clone()),
            None => {
                let mut c = DomainCorpus::new(e.domain.clone());
                c.train.push(e.clone());
                out.push(c);
            }
        }
    }
    out
}

/// Stage one: DRF sets from the source training data, gold signatures for
/// every training example, and the signature generator.
pub fn build_stage1(
    train: &[Example],
    table: &EmbeddingTable,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Stage1, Vec<Signature>, Vec<f64>)> {
    let corpora = group_by_domain(train);
    let drf_sets = corpora
        .iter()
        .map(|c| build_drf_set(&corpora, &c.domain, &model_cfg.drf))
        .collect::<Result<Vec<_>>>()?;
    let k = model_cfg.drf.k;
    let gold: Vec<Signature> = train
        .iter()
        .map(|e| {
            let set = drf_sets
                .iter()
                .find(|s| s.domain == e.domain)
                .expect("every training domain has a DRF set");
            let mut tokens = tokenize(&e.text);
            tokens.truncate(model_cfg.max_tokens);
            annotate_tokens(&tokens, set, table, k)
        })
        .collect();
    let (generator, losses) = match model_cfg.generator {
        GeneratorMode::Ranker => (SignatureGenerator::Ranker, Vec::new()),
        GeneratorMode::Learned => {
            let seed = Rng::derived(cfg.seed, "generator").next_u64();
            let mut gen = LearnedGenerator::new(table, &drf_sets, k, model_cfg.trainable_embeddings, seed)?;
            let data: Vec<(Vec<Token>, Signature)> = train
                .iter()
                .zip(&gold)
                .map(|(e, s)| {
                    let mut tokens = tokenize(&e.text);
                    tokens.truncate(model_cfg.max_tokens);
                    (tokens, s.clone())
                })
                .collect();
            let losses = gen.train(&data, cfg.epochs_gen, cfg.batch_size, &cfg.adam(), seed)?;
            (SignatureGenerator::Learned(Box::new(gen)), losses)
        }
    };
    let n_fallback = gold.iter().filter(|s| s.fallback).count();
    if n_fallback > 0 {
        log::warn!("{n_fallback} training examples annotated with fallback signatures");
    }
    Ok((Stage1 { drf_sets, generator }, gold, losses))
}

/// Trains `kind` on the source pools. Mixtures dispatch to [`train_moe`].
pub fn train(
    kind: VariantKind,
    pools: &SplitPools,
    labels: &[String],
    table: Arc<EmbeddingTable>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    if kind.is_moe() {
        return train_moe(kind, pools, labels, table, model_cfg, cfg);
    }
    train_single(kind, &pools.train, &pools.dev, labels, table, model_cfg, cfg)
}

/// Trains one non-mixture variant on `train`, selecting the best epoch on `dev`.
pub fn train_single(
    kind: VariantKind,
    train: &[Example],
    dev: &[Example],
    labels: &[String],
    table: Arc<EmbeddingTable>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training pool is empty".into()));
    }
    if labels.len() < 2 {
        return Err(Error::Config(format!("{} labels < 2", labels.len())));
    }
    let start = Instant::now();
    let train_gold = label_indices(train, labels)?;
    let dev_gold = label_indices(dev, labels)?;
    let mut log = TrainLog {
        component: kind.name().to_string(),
        seed: cfg.seed,
        domains_seen: train.iter().chain(dev).map(|e| e.domain.clone()).collect(),
        train_ids: train.iter().map(|e| e.id.clone()).collect(),
        ..TrainLog::default()
    };

    let init_seed = Rng::derived(cfg.seed, "init").next_u64();
    let mut model = Model::new(kind, labels.to_vec(), table.clone(), *model_cfg, init_seed)?;
    let gold_sigs = if kind.needs_signature() {
        let (stage1, gold, losses) = build_stage1(train, &table, model_cfg, cfg)?;
        model.stage1 = Some(stage1);
        log.generator_loss = losses;
        Some(gold)
    } else {
        None
    };

    // inputs are fixed across epochs except for the HyperDN mask
    let tokens: Vec<Vec<Token>> = train.iter().map(|e| tokenize(&e.text)).collect();
    let known: Vec<ModelInput> = train
        .iter()
        .zip(&tokens)
        .enumerate()
        .map(|(i, (e, t))| {
            let sig = gold_sigs.as_ref().map(|g| &g[i]);
            model.input_with(t, sig, &DomainHint::Known(e.domain.clone()))
        })
        .collect::<Result<_>>()?;
    let masked: Vec<ModelInput> = if kind == VariantKind::HyperDN {
        tokens
            .iter()
            .map(|t| model.input_with(t, None, &DomainHint::Unknown))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let dev_inputs: Vec<ModelInput> = dev
        .iter()
        .map(|e| model.prepare(e, &DomainHint::Unknown))
        .collect::<Result<_>>()?;
    log.fallback_signatures = dev_inputs
        .iter()
        .filter(|i| i.signature.as_ref().is_some_and(|s| s.fallback))
        .count();

    let mut shuffle_rng = Rng::derived(cfg.seed, "shuffle");
    let mut mask_rng = Rng::derived(cfg.seed, "alpha-unk");
    let adam = cfg.adam();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, Vec<_>)> = None;
    for epoch in 1..=cfg.epochs_disc {
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let grads = {
                let mut g = Graph::new(&model.store);
                let mut items = Vec::with_capacity(batch.len());
                for &i in batch {
                    let input = if kind != VariantKind::HyperDN {
                        &known[i]
                    } else if mask_rng.bernoulli(cfg.alpha_unk) {
                        log.unk_conditionings += 1;
                        &masked[i]
                    } else {
                        log.name_conditionings += 1;
                        &known[i]
                    };
                    items.push(model.body.loss(&mut g, input, train_gold[i], &table)?);
                }
                let sum = g.sum(&items)?;
                let value = g.value(sum).item();
                if !value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "{kind}: non-finite training loss in epoch {epoch}"
                    )));
                }
                total += value;
                let mean = g.scale(sum, 1.0 / batch.len() as f64);
                g.backward(mean)?
            };
            model.store.accumulate(&grads);
            adam_step(&mut model.store, &adam);
        }
        log.epoch_loss.push(total / train.len() as f64);

        let dev_metric = if dev.is_empty() {
            f64::NAN
        } else {
            let preds = dev_inputs
                .iter()
                .map(|input| model.probs_for(input).map(|p| argmax(&p)))
                .collect::<Result<Vec<_>>>()?;
            cfg.metric.compute(&preds, &dev_gold, labels.len())
        };
        log.epoch_dev_metric.push(dev_metric);
        log.epoch_elapsed.push(start.elapsed().as_secs_f64());
        // without a dev pool the last epoch wins
        let better = match &best {
            None => true,
            Some((b, _)) => dev_metric >= *b || dev.is_empty(),
        };
        if better {
            best = Some((dev_metric, model.store.snapshot()));
            log.best_epoch = epoch;
        }
    }
    if let Some((_, snapshot)) = best {
        model.store.restore(&snapshot);
    }
    Ok((model, log))
}

/// One NoDA-shaped expert per source domain, plus a general expert for
/// [`VariantKind::MoEAvg`]. Weights are uniform except for
/// [`VariantKind::MoEIndAttn`], which searches them on the source dev pool.
pub fn train_moe(
    kind: VariantKind,
    pools: &SplitPools,
    labels: &[String],
    table: Arc<EmbeddingTable>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    if !kind.is_moe() {
        return Err(Error::Config(format!("{kind} is not a mixture")));
    }
    let domains: Vec<String> = pools.plan.source_domains.clone();
    if domains.len() < 2 {
        return Err(Error::Config(format!(
            "mixtures need at least two source domains, got {}",
            domains.len()
        )));
    }
    let mut experts = Vec::new();
    let mut log = TrainLog {
        component: kind.name().to_string(),
        seed: cfg.seed,
        ..TrainLog::default()
    };
    for domain in &domains {
        let train: Vec<Example> = pools.train.iter().filter(|e| e.domain == *domain).cloned().collect();
        if train.is_empty() {
            return Err(Error::Data(format!("source domain {domain} has an empty train split")));
        }
        let dev: Vec<Example> = pools.dev.iter().filter(|e| e.domain == *domain).cloned().collect();
        let expert_cfg = TrainConfig {
            seed: Rng::derived(cfg.seed, &format!("expert/{domain}")).next_u64(),
            ..*cfg
        };
        let (model, mut part) =
            train_single(VariantKind::NoDA, &train, &dev, labels, table.clone(), model_cfg, &expert_cfg)?;
        part.component = format!("expert/{domain}");
        log.parts.push(part);
        experts.push(Expert {
            domain: Some(domain.clone()),
            model,
        });
    }
    if kind == VariantKind::MoEAvg {
        let expert_cfg = TrainConfig {
            seed: Rng::derived(cfg.seed, "expert/general").next_u64(),
            ..*cfg
        };
        let (model, mut part) = train_single(
            VariantKind::NoDA,
            &pools.train,
            &pools.dev,
            labels,
            table.clone(),
            model_cfg,
            &expert_cfg,
        )?;
        part.component = "expert/general".into();
        log.parts.push(part);
        experts.push(Expert { domain: None, model });
    }
    for part in &log.parts {
        log.domains_seen.extend(part.domains_seen.iter().cloned());
    }

    let weights = if kind == VariantKind::MoEIndAttn && !pools.dev.is_empty() {
        let golds = label_indices(&pools.dev, labels)?;
        let probs = experts
            .iter()
            .map(|e| {
                pools
                    .dev
                    .iter()
                    .map(|x| e.model.predict(x, &DomainHint::Unknown).map(|p| p.probs))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        search_attention_weights(
            &probs,
            &golds,
            labels.len(),
            cfg.metric,
            model_cfg.attn_trials,
            Rng::derived(cfg.seed, "attention").next_u64(),
        )
    } else {
        vec![1.0 / experts.len() as f64; experts.len()]
    };
    let model = Model::mixture(kind, labels.to_vec(), table, *model_cfg, experts, weights)?;
    Ok((model, log))
}

/// Randomized search over the probability simplex for mixture weights.
///
/// `expert_probs[e][i]` is expert `e`'s probability vector on dev example
/// `i`. Draws `trials` weight vectors from the symmetric Dirichlet(1) and
/// keeps the first one reaching the best dev metric.
pub fn search_attention_weights(
    expert_probs: &[Vec<Vec<f64>>],
    golds: &[usize],
    n_classes: usize,
    metric: MetricKind,
    trials: usize,
    seed: u64,
) -> Vec<f64> {
    let n = expert_probs.len();
    if n <= 1 {
        return vec![1.0; n];
    }
    if golds.is_empty() {
        return vec![1.0 / n as f64; n];
    }
    let mut rng = Rng::new(seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..trials.max(1) {
        let w = rng.uniform_simplex(n);
        let preds: Vec<usize> = (0..golds.len())
            .map(|i| {
                let per: Vec<Vec<f64>> = expert_probs.iter().map(|e| e[i].clone()).collect();
                argmax(&mix(&per, &w))
            })
            .collect();
        let score = metric.compute(&preds, golds, n_classes);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, w));
        }
    }
    best.map(|(_, w)| w).expect("at least one trial")
}

/// Identifies the expert list of a trained mixture.
pub fn expert_domains(model: &Model) -> Vec<Option<String>> {
    match &model.body {
        Body::Experts { experts, .. } => experts.iter().map(|e| e.domain.clone()).collect(),
        _ => Vec::new(),
    }
}
