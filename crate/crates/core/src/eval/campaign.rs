//! Leave-one-out evaluation campaigns.
//!
//! Every (target, variant, fraction) cell trains one model on the source
//! pools and evaluates it. Cells are independent: each derives its seed from
//! the campaign seed and the target name, so the result does not depend on
//! how many run at once.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{make_split, DomainCorpus, Example, Split, SplitPools};
use crate::error::{Error, Result};
use crate::eval::diversity::{correlations, weight_diversity, Correlation};
use crate::eval::metrics::MetricKind;
use crate::eval::significance::{bootstrap_test, mcnemar};
use crate::hypernet::GeneratedClassifier;
use crate::models::{DomainHint, VariantKind};
use crate::rng::{fnv1a, Rng};
use crate::text::EmbeddingTable;
use crate::trainer::{label_indices, train, TrainConfig};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CampaignMode {
    /// Train on the sources, evaluate on the held-out target's test split.
    Standard,
    /// Evaluate on each source domain's dev split instead.
    Seen,
    /// Add the target's train and dev data to the pools.
    Upper,
    /// Standard, repeated for every configured training fraction.
    Fractions,
}

impl fmt::Display for CampaignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CampaignMode::Standard => "standard",
            CampaignMode::Seen => "seen",
            CampaignMode::Upper => "upper",
            CampaignMode::Fractions => "fractions",
        })
    }
}

impl FromStr for CampaignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(CampaignMode::Standard),
            "seen" => Ok(CampaignMode::Seen),
            "upper" => Ok(CampaignMode::Upper),
            "fractions" => Ok(CampaignMode::Fractions),
            other => Err(Error::Config(format!("unknown campaign mode {other:?}"))),
        }
    }
}

/// One evaluated cell. `value` is `None` when training or prediction failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub target: String,
    pub variant: VariantKind,
    pub fraction: f64,
    /// Domain whose examples were scored: the target, or a source in seen mode.
    pub eval_domain: String,
    pub eval_split: Split,
    pub value: Option<f64>,
    pub n_test: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageRow {
    pub variant: VariantKind,
    pub fraction: f64,
    /// Mean over the successful rows; `None` if every row failed.
    pub mean: Option<f64>,
    pub n_rows: usize,
    pub n_failed: usize,
}

/// Hyper-PADA against the best member of one baseline group.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceRow {
    pub target: String,
    pub fraction: f64,
    pub eval_domain: String,
    pub group: &'static str,
    pub baseline: VariantKind,
    pub value: f64,
    pub baseline_value: f64,
    pub mcnemar_p: f64,
    pub bootstrap_p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityRecord {
    pub target: String,
    pub diversity: f64,
    /// Hyper-PADA metric minus PADA-lite metric; `None` without a PADA-lite cell.
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: CampaignMode,
    pub metric: MetricKind,
    pub domains: Vec<String>,
    pub rows: Vec<ResultRow>,
    pub averages: Vec<AverageRow>,
    pub significance: Vec<SignificanceRow>,
    pub diversity: Vec<DiversityRecord>,
    /// `None` with fewer than three usable diversity records.
    pub correlation: Option<Correlation>,
    pub config_text: String,
}

/// Baseline groups Hyper-PADA is tested against; within a group the best
/// cell is used.
pub const BASELINE_GROUPS: [(&str, &[VariantKind]); 4] = [
    ("no-da", &[VariantKind::NoDA]),
    (
        "moe",
        &[VariantKind::MoEIndAvg, VariantKind::MoEIndAttn, VariantKind::MoEAvg],
    ),
    ("prompt", &[VariantKind::PADALite]),
    ("hypernetwork", &[VariantKind::HyperDN, VariantKind::HyperDRF]),
];

/// Per-target seed: the campaign seed xor a hash of the target name.
pub fn cell_seed(seed: u64, target: &str) -> u64 {
    seed ^ fnv1a(target.as_bytes())
}

struct Job {
    target: usize,
    variant: VariantKind,
    fraction: f64,
}

/// Scored predictions for one evaluation set of a cell.
struct Scored {
    row: ResultRow,
    preds: Vec<usize>,
    golds: Vec<usize>,
    classifiers: Vec<GeneratedClassifier>,
}

pub fn run_campaign(
    corpora: &[DomainCorpus],
    labels: &[String],
    table: Arc<EmbeddingTable>,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if corpora.len() < 2 {
        return Err(Error::Config(format!(
            "a campaign needs at least 2 domains, got {}",
            corpora.len()
        )));
    }
    if labels.len() < 2 {
        return Err(Error::Config("label set needs at least 2 classes".into()));
    }
    for c in corpora {
        c.validate()?;
    }
    let fractions = match cfg.mode {
        CampaignMode::Fractions => cfg.fractions.clone(),
        _ => vec![1.0],
    };
    let mut jobs = Vec::new();
    for target in 0..corpora.len() {
        for &fraction in &fractions {
            for &variant in &cfg.variants {
                jobs.push(Job {
                    target,
                    variant,
                    fraction,
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let run = |job: &Job| run_cell(corpora, labels, &table, cfg, job);
    let results: Vec<Result<Vec<Scored>>> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut scored = Vec::new();
    for r in results {
        scored.extend(r?);
    }
    Ok(assemble(corpora, labels.len(), cfg, scored))
}

fn pools_for(
    corpora: &[DomainCorpus],
    target: &DomainCorpus,
    mode: CampaignMode,
    fraction: f64,
    seed: u64,
) -> Result<SplitPools> {
    let mut pools = make_split(corpora, &target.domain, fraction, seed)?;
    if mode == CampaignMode::Upper {
        pools.train.extend(target.train.iter().cloned());
        pools.dev.extend(target.dev.iter().cloned());
    }
    Ok(pools)
}

fn run_cell(
    corpora: &[DomainCorpus],
    labels: &[String],
    table: &Arc<EmbeddingTable>,
    cfg: &RunConfig,
    job: &Job,
) -> Result<Vec<Scored>> {
    let target = &corpora[job.target];
    let seed = cell_seed(cfg.train.seed, &target.domain);
    let pools = pools_for(corpora, target, cfg.mode, job.fraction, seed)?;

    // each entry: domain scored, its examples, and the hint given to the model
    let eval_sets: Vec<(&str, Split, &[Example], DomainHint)> = match cfg.mode {
        CampaignMode::Seen => corpora
            .iter()
            .filter(|c| c.domain != target.domain)
            .map(|c| {
                (
                    c.domain.as_str(),
                    Split::Dev,
                    c.dev.as_slice(),
                    DomainHint::Known(c.domain.clone()),
                )
            })
            .collect(),
        CampaignMode::Upper => vec![(
            target.domain.as_str(),
            Split::Test,
            pools.test.as_slice(),
            DomainHint::Known(target.domain.clone()),
        )],
        _ => vec![(target.domain.as_str(), Split::Test, pools.test.as_slice(), DomainHint::Unknown)],
    };

    let row = |eval_domain: &str, split: Split, n: usize, value, error| ResultRow {
        target: target.domain.clone(),
        variant: job.variant,
        fraction: job.fraction,
        eval_domain: eval_domain.to_string(),
        eval_split: split,
        value,
        n_test: n,
        error,
    };
    let failed = |e: Error| -> Vec<Scored> {
        log::warn!("cell {}/{} failed: {e}", target.domain, job.variant);
        eval_sets
            .iter()
            .map(|(d, split, ex, _)| Scored {
                row: row(d, *split, ex.len(), None, Some(e.to_string())),
                preds: Vec::new(),
                golds: Vec::new(),
                classifiers: Vec::new(),
            })
            .collect()
    };

    let tcfg = TrainConfig { seed, ..cfg.train };
    let model = match train(job.variant, &pools, labels, table.clone(), &cfg.model, &tcfg) {
        Ok((model, _)) => model,
        Err(e) => return Ok(failed(e)),
    };

    let mut out = Vec::new();
    for (domain, split, examples, hint) in &eval_sets {
        let golds = label_indices(examples, labels)?;
        let mut preds = Vec::with_capacity(examples.len());
        let mut classifiers = Vec::new();
        for e in examples.iter() {
            match model.predict(e, hint) {
                Ok(p) => {
                    preds.push(p.label);
                    if job.variant == VariantKind::HyperPADA {
                        classifiers.extend(p.classifier);
                    }
                }
                Err(e) => return Ok(failed(e)),
            }
        }
        let value = (!golds.is_empty()).then(|| cfg.train.metric.compute(&preds, &golds, labels.len()));
        out.push(Scored {
            row: row(domain, *split, examples.len(), value, None),
            preds,
            golds,
            classifiers,
        });
    }
    Ok(out)
}

fn assemble(corpora: &[DomainCorpus], n_classes: usize, cfg: &RunConfig, scored: Vec<Scored>) -> EvalReport {
    let metric = cfg.train.metric;
    let fractions = match cfg.mode {
        CampaignMode::Fractions => cfg.fractions.clone(),
        _ => vec![1.0],
    };

    let mut averages = Vec::new();
    for &fraction in &fractions {
        for &variant in &cfg.variants {
            let rows: Vec<&ResultRow> = scored
                .iter()
                .map(|s| &s.row)
                .filter(|r| r.variant == variant && r.fraction == fraction)
                .collect();
            let ok: Vec<f64> = rows.iter().filter_map(|r| r.value).collect();
            averages.push(AverageRow {
                variant,
                fraction,
                mean: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                n_rows: rows.len(),
                n_failed: rows.len() - ok.len(),
            });
        }
    }

    let mut significance = Vec::new();
    for hp in scored
        .iter()
        .filter(|s| s.row.variant == VariantKind::HyperPADA && s.row.value.is_some())
    {
        let same_setting = |s: &&Scored| {
            s.row.target == hp.row.target
                && s.row.fraction == hp.row.fraction
                && s.row.eval_domain == hp.row.eval_domain
                && s.row.value.is_some()
        };
        for (group, members) in BASELINE_GROUPS {
            let mut best: Option<&Scored> = None;
            for s in scored.iter().filter(same_setting) {
                if members.contains(&s.row.variant)
                    && best.is_none_or(|b| s.row.value > b.row.value)
                {
                    best = Some(s);
                }
            }
            let Some(b) = best else { continue };
            let metric_fn = |p: &[usize], g: &[usize]| metric.compute(p, g, n_classes);
            let seed = Rng::derived(
                cell_seed(cfg.train.seed, &hp.row.target),
                &format!("bootstrap/{}/{group}", hp.row.eval_domain),
            )
            .next_u64();
            let mcnemar_p = mcnemar(&hp.preds, &b.preds, &hp.golds);
            let bootstrap_p = bootstrap_test(
                metric_fn,
                &hp.preds,
                &b.preds,
                &hp.golds,
                cfg.bootstrap_resamples,
                seed,
            );
            let value = hp.row.value.unwrap_or(f64::NAN);
            let baseline_value = b.row.value.unwrap_or(f64::NAN);
            // McNemar backs accuracy comparisons, the bootstrap macro-F1 ones
            let p = match metric {
                MetricKind::Accuracy => mcnemar_p,
                MetricKind::MacroF1 => bootstrap_p,
            };
            significance.push(SignificanceRow {
                target: hp.row.target.clone(),
                fraction: hp.row.fraction,
                eval_domain: hp.row.eval_domain.clone(),
                group,
                baseline: b.row.variant,
                value,
                baseline_value,
                mcnemar_p,
                bootstrap_p,
                significant: value > baseline_value && p < SIGNIFICANCE_LEVEL,
            });
        }
    }

    let mut diversity = Vec::new();
    if matches!(cfg.mode, CampaignMode::Standard | CampaignMode::Upper) {
        for corpus in corpora {
            let find = |v: VariantKind| {
                scored
                    .iter()
                    .find(|s| s.row.target == corpus.domain && s.row.variant == v && s.row.value.is_some())
            };
            let Some(hp) = find(VariantKind::HyperPADA) else { continue };
            let Ok(div) = weight_diversity(&hp.classifiers) else { continue };
            diversity.push(DiversityRecord {
                target: corpus.domain.clone(),
                diversity: div,
                improvement: find(VariantKind::PADALite)
                    .and_then(|p| Some(hp.row.value? - p.row.value?)),
            });
        }
    }
    let pairs: Vec<(f64, f64)> = diversity
        .iter()
        .filter_map(|r| Some((r.diversity, r.improvement?)))
        .collect();
    let correlation = correlations(&pairs).ok();

    EvalReport {
        mode: cfg.mode,
        metric,
        domains: corpora.iter().map(|c| c.domain.clone()).collect(),
        rows: scored.into_iter().map(|s| s.row).collect(),
        averages,
        significance,
        diversity,
        correlation,
        config_text: cfg.to_text(),
    }
}

impl EvalReport {
    /// Recomputes every average from the rows and compares bitwise.
    pub fn averages_consistent(&self) -> bool {
        self.averages.iter().all(|a| {
            let vals: Vec<f64> = self
                .rows
                .iter()
                .filter(|r| r.variant == a.variant && r.fraction == a.fraction)
                .filter_map(|r| r.value)
                .collect();
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
            mean.map(f64::to_bits) == a.mean.map(f64::to_bits)
        })
    }

    pub fn average(&self, variant: VariantKind, fraction: f64) -> Option<f64> {
        self.averages
            .iter()
            .find(|a| a.variant == variant && a.fraction == fraction)
            .and_then(|a| a.mean)
    }
}
