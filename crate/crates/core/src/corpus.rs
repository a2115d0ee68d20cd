//! Multi-domain labeled corpora, downsampling and leave-one-out splits.
//!
//! Records are JSON lines:
//!
//! ```text
//! {"id":"g1","premise":"...","hypothesis":"...","domain":"government","label":"entailment","split":"test"}
//! {"id":"b7","text":"great read","domain":"books","label":"positive","language":"en"}
//! ```
//!
//! Pair records are flattened at load time as `premise </s> hypothesis`.
//! `split` defaults to `train` when absent.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Joins premise and hypothesis of pair tasks.
pub const PAIR_SEPARATOR: &str = " </s> ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub domain: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DomainCorpus {
    pub domain: String,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl DomainCorpus {
    pub fn new(domain: impl Into<String>) -> Self {
        DomainCorpus {
            domain: domain.into(),
            ..Default::default()
        }
    }

    pub fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Example> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks the domain-tag and disjointness invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for split in [Split::Train, Split::Dev, Split::Test] {
            for ex in self.split(split) {
                if ex.domain != self.domain {
                    return Err(Error::Data(format!(
                        "example {} has domain {} inside corpus {}",
                        ex.id, ex.domain, self.domain
                    )));
                }
                if !seen.insert(ex.id.as_str()) {
                    return Err(Error::Data(format!(
                        "example {} appears in more than one split of {}",
                        ex.id, self.domain
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Declared label set of a task. An empty label list means "infer from data".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskSchema {
    pub name: String,
    pub labels: Vec<String>,
}

impl TaskSchema {
    pub fn new(name: impl Into<String>, labels: &[&str]) -> Self {
        TaskSchema {
            name: name.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn nli() -> Self {
        TaskSchema::new("nli", &["contradiction", "entailment", "neutral"])
    }

    pub fn sentiment() -> Self {
        TaskSchema::new("sentiment", &["negative", "positive"])
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub target_domain: String,
    pub source_domains: Vec<String>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.source_domains.is_empty() {
            return Err(Error::Config("split plan has no source domains".into()));
        }
        if self.source_domains.contains(&self.target_domain) {
            return Err(Error::Config(format!(
                "target domain {} listed among sources",
                self.target_domain
            )));
        }
        let unique: HashSet<&String> = self.source_domains.iter().collect();
        if unique.len() != self.source_domains.len() {
            return Err(Error::Config("duplicate source domain".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train fraction {} outside (0, 1]",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// The pools produced by [`make_split`]. `test` is the target's test split;
/// the target's dev split is never read.
#[derive(Debug, Clone)]
pub struct SplitPools {
    pub plan: SplitPlan,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    premise: Option<String>,
    #[serde(default)]
    hypothesis: Option<String>,
    domain: String,
    label: String,
    #[serde(default)]
    language: Option<String>,
    #[serde(default)]
    split: Option<Split>,
    // written by `annotate`; carried but unused on load
    #[serde(default)]
    #[allow(dead_code)]
    signature: Option<String>,
}

#[derive(Serialize)]
struct CanonicalRecord<'a> {
    id: &'a str,
    text: &'a str,
    domain: &'a str,
    label: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    language: Option<&'a str>,
    split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    signature: Option<&'a str>,
}

/// Reads a JSON-lines corpus and groups it by domain in first-appearance order.
///
/// If `schema.labels` is empty the label set is inferred (sorted) and written
/// back into `schema`.
pub fn load_corpus(path: &Path, schema: &mut TaskSchema) -> Result<Vec<DomainCorpus>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), path, schema)
}

pub fn parse_corpus<R: BufRead>(
    reader: R,
    path: &Path,
    schema: &mut TaskSchema,
) -> Result<Vec<DomainCorpus>> {
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| malformed(lineno, e.to_string()))?;
        let text = match (raw.text, raw.premise, raw.hypothesis) {
            (Some(t), None, None) => t,
            (None, Some(p), Some(h)) => format!("{p}{PAIR_SEPARATOR}{h}"),
            _ => {
                return Err(malformed(
                    lineno,
                    "expected either `text` or both `premise` and `hypothesis`".into(),
                ))
            }
        };
        if text.trim().is_empty() {
            return Err(malformed(lineno, "empty text".into()));
        }
        if raw.id.is_empty() || raw.domain.is_empty() {
            return Err(malformed(lineno, "empty id or domain".into()));
        }
        let example = Example {
            id: raw.id,
            text,
            domain: raw.domain,
            label: raw.label,
            language: raw.language,
        };
        records.push((lineno, example, raw.split.unwrap_or(Split::Train)));
    }

    if schema.labels.is_empty() {
        let mut labels: Vec<String> = records.iter().map(|(_, e, _)| e.label.clone()).collect();
        labels.sort();
        labels.dedup();
        schema.labels = labels;
    }

    let mut ids = HashSet::new();
    let mut order: HashMap<String, usize> = HashMap::new();
    let mut corpora: Vec<DomainCorpus> = Vec::new();
    for (lineno, example, split) in records {
        if schema.label_index(&example.label).is_none() {
            return Err(malformed(
                lineno,
                format!(
                    "label {:?} not in task label set {:?}",
                    example.label, schema.labels
                ),
            ));
        }
        if !ids.insert(example.id.clone()) {
            return Err(malformed(lineno, format!("duplicate id {:?}", example.id)));
        }
        let slot = *order.entry(example.domain.clone()).or_insert_with(|| {
            corpora.push(DomainCorpus::new(example.domain.clone()));
            corpora.len() - 1
        });
        corpora[slot].split_mut(split).push(example);
    }
    Ok(corpora)
}

/// Writes corpora in canonical form: domains in order, then train, dev and
/// test, one record per line with a fixed field order.
pub fn write_corpus<W: Write>(out: &mut W, corpora: &[DomainCorpus]) -> Result<()> {
    write_corpus_with(out, corpora, |_| None)
}

/// Like [`write_corpus`], attaching a `signature` field where `signature`
/// returns one.
pub fn write_corpus_with<W, F>(out: &mut W, corpora: &[DomainCorpus], signature: F) -> Result<()>
where
    W: Write,
    F: Fn(&Example) -> Option<String>,
{
    for corpus in corpora {
        for split in [Split::Train, Split::Dev, Split::Test] {
            for ex in corpus.split(split) {
                let sig = signature(ex);
                let record = CanonicalRecord {
                    id: &ex.id,
                    text: &ex.text,
                    domain: &ex.domain,
                    label: &ex.label,
                    language: ex.language.as_deref(),
                    split,
                    signature: sig.as_deref(),
                };
                serde_json::to_writer(&mut *out, &record)?;
                out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
            }
        }
    }
    Ok(())
}

/// Per-split caps for [`downsample`]; `None` keeps the whole split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitCaps {
    pub train: Option<usize>,
    pub dev: Option<usize>,
    pub test: Option<usize>,
}

impl SplitCaps {
    fn get(&self, split: Split) -> Option<usize> {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

/// Uniform sampling without replacement, keeping survivors in original order.
///
/// Each split draws from its own stream derived from `seed`. A cap at or above
/// the split size keeps the split untouched; with `strict` it is an error
/// instead when strictly above.
pub fn downsample(
    corpus: &DomainCorpus,
    caps: SplitCaps,
    seed: u64,
    strict: bool,
) -> Result<DomainCorpus> {
    let mut out = DomainCorpus::new(corpus.domain.clone());
    for split in [Split::Train, Split::Dev, Split::Test] {
        let examples = corpus.split(split);
        let kept = match caps.get(split) {
            Some(cap) if cap > examples.len() && strict => {
                return Err(Error::Config(format!(
                    "cap {cap} exceeds {split:?} size {} of domain {}",
                    examples.len(),
                    corpus.domain
                )))
            }
            Some(cap) if cap < examples.len() => {
                let mut rng = Rng::derived(seed, &format!("{}/{split:?}", corpus.domain));
                rng.sample_indices(examples.len(), cap)
                    .into_iter()
                    .map(|i| examples[i].clone())
                    .collect()
            }
            _ => examples.to_vec(),
        };
        *out.split_mut(split) = kept;
    }
    Ok(out)
}

fn fraction_count(fraction: f64, n: usize) -> usize {
    // the epsilon absorbs products like 0.3 * 10 = 3.0000000000000004
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Builds the leave-one-out pools for `target`.
///
/// Every source domain's train and dev splits are subsampled independently to
/// `ceil(fraction * n)` examples and concatenated in corpus order.
pub fn make_split(
    corpora: &[DomainCorpus],
    target: &str,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitPools> {
    let target_corpus = corpora
        .iter()
        .find(|c| c.domain == target)
        .ok_or_else(|| Error::Config(format!("target domain {target} not in corpus")))?;
    let plan = SplitPlan {
        target_domain: target.to_string(),
        source_domains: corpora
            .iter()
            .filter(|c| c.domain != target)
            .map(|c| c.domain.clone())
            .collect(),
        train_fraction,
        seed,
    };
    plan.validate()?;

    let mut train = Vec::new();
    let mut dev = Vec::new();
    for corpus in corpora.iter().filter(|c| c.domain != target) {
        for (split, pool) in [(Split::Train, &mut train), (Split::Dev, &mut dev)] {
            let examples = corpus.split(split);
            let keep = fraction_count(train_fraction, examples.len());
            let mut rng = Rng::derived(seed, &format!("fraction/{}/{split:?}", corpus.domain));
            pool.extend(
                rng.sample_indices(examples.len(), keep)
                    .into_iter()
                    .map(|i| examples[i].clone()),
            );
        }
    }
    Ok(SplitPools {
        plan,
        train,
        dev,
        test: target_corpus.test.clone(),
    })
}
