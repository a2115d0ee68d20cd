//! A constructed multi-domain sentiment benchmark with a shared embedding table.
//!
//! Domains come in two groups. Every example mixes domain context words,
//! optionally words shared by the domains of its group, and one cue word from
//! a pool shared by all domains; a cue's polarity means "positive" in one
//! group and "negative" in the other. Context words sit around a
//! domain-specific offset plus a shift along the group axis, so the only
//! route from an unseen domain to its group is through embedding geometry.

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainCorpus, Example, Split};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::text::EmbeddingTable;

pub const LABELS: [&str; 2] = ["negative", "positive"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub n_domains: usize,
    pub train_per_domain: usize,
    pub dev_per_domain: usize,
    pub test_per_domain: usize,
    pub context_words: usize,
    /// Cue words per polarity in the shared pool.
    pub cue_pool: usize,
    /// Cue words per polarity a domain draws from the pool.
    pub cues_per_domain: usize,
    /// Shared words per group.
    pub group_words: usize,
    pub context_per_example: usize,
    pub group_per_example: usize,
    pub fillers_per_example: usize,
    pub group_scale: f64,
    /// Shift of a domain's context words along its group's axis.
    pub context_group_scale: f64,
    pub offset_scale: f64,
    pub cue_scale: f64,
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dim: 16,
            n_domains: 4,
            train_per_domain: 1000,
            dev_per_domain: 40,
            test_per_domain: 200,
            context_words: 24,
            cue_pool: 10,
            cues_per_domain: 10,
            group_words: 10,
            context_per_example: 3,
            group_per_example: 0,
            fillers_per_example: 0,
            group_scale: 1.0,
            context_group_scale: 1.0,
            offset_scale: 1.0,
            cue_scale: 3.0,
            noise: 0.3,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::Config(format!("synthetic dim {} < 4", self.dim)));
        }
        if self.n_domains < 2 {
            return Err(Error::Config("synthetic benchmark needs at least 2 domains".into()));
        }
        if self.cues_per_domain == 0 || self.cues_per_domain > self.cue_pool {
            return Err(Error::Config(format!(
                "cues_per_domain {} must be in 1..={}",
                self.cues_per_domain, self.cue_pool
            )));
        }
        if self.context_words == 0 || self.group_words == 0 {
            return Err(Error::Config("context vocabulary and usage must be positive".into()));
        }
        Ok(())
    }
}

pub fn domain_name(j: usize) -> String {
    format!("dom{j}")
}

/// Group of domain `j`: the first half of the domains is group 0.
pub fn group_of(j: usize, n_domains: usize) -> usize {
    usize::from(j >= n_domains.div_ceil(2))
}

const FILLERS: [&str; 6] = ["the", "a", "it", "was", "this", "and"];

fn noisy(base: &[f64], noise: f64, rng: &mut Rng) -> Vec<f64> {
    base.iter().map(|x| x + noise * rng.normal()).collect()
}

/// Corpora for every domain and the embedding table covering their words.
pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Result<(Vec<DomainCorpus>, EmbeddingTable)> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut rng = Rng::derived(seed, "synthetic/embeddings");
    let mut table = EmbeddingTable::new(d);

    // axis 0 separates the group words, axis 1 carries cue polarity, the
    // rest hold domain offsets
    for group in 0..2 {
        let mut base = vec![0.0; d];
        base[0] = if group == 0 { cfg.group_scale } else { -cfg.group_scale };
        for w in 0..cfg.group_words {
            table.insert(format!("g{group}w{w}"), &noisy(&base, cfg.noise, &mut rng))?;
        }
    }
    for j in 0..cfg.n_domains {
        let mut c = vec![0.0; d];
        c[0] = if group_of(j, cfg.n_domains) == 0 {
            cfg.context_group_scale
        } else {
            -cfg.context_group_scale
        };
        let raw: Vec<f64> = (2..d).map(|_| rng.normal()).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for (i, x) in raw.into_iter().enumerate() {
            c[i + 2] = cfg.offset_scale * x / norm;
        }
        table.insert(domain_name(j), &c)?;
        for w in 0..cfg.context_words {
            table.insert(format!("d{j}w{w}"), &noisy(&c, cfg.noise, &mut rng))?;
        }
    }
    for polarity in 0..2 {
        let mut base = vec![0.0; d];
        base[1] = if polarity == 1 { cfg.cue_scale } else { -cfg.cue_scale };
        for w in 0..cfg.cue_pool {
            let prefix = if polarity == 1 { "pos" } else { "neg" };
            table.insert(format!("{prefix}{w}"), &noisy(&base, cfg.noise, &mut rng))?;
        }
    }
    for f in FILLERS {
        table.insert(f, &noisy(&vec![0.0; d], cfg.noise, &mut rng))?;
    }

    let mut corpora = Vec::with_capacity(cfg.n_domains);
    for j in 0..cfg.n_domains {
        let name = domain_name(j);
        let group = group_of(j, cfg.n_domains);
        let mut rng = Rng::derived(seed, &format!("synthetic/{name}"));
        let cue_sets: Vec<Vec<usize>> = (0..2)
            .map(|_| rng.sample_indices(cfg.cue_pool, cfg.cues_per_domain))
            .collect();
        let mut corpus = DomainCorpus::new(name.clone());
        for (split, n) in [
            (Split::Train, cfg.train_per_domain),
            (Split::Dev, cfg.dev_per_domain),
            (Split::Test, cfg.test_per_domain),
        ] {
            // polarity and cue alternate deterministically so every domain
            // uses each cue equally often; order is shuffled afterwards
            let mut texts: Vec<(String, usize)> = (0..n)
                .map(|i| {
                    let polarity = i % 2;
                    let mut words: Vec<String> = (0..cfg.context_per_example)
                        .map(|_| format!("d{j}w{}", rng.below(cfg.context_words)))
                        .collect();
                    words.extend(
                        (0..cfg.group_per_example)
                            .map(|_| format!("g{group}w{}", rng.below(cfg.group_words))),
                    );
                    let cues = &cue_sets[polarity];
                    let cue_prefix = if polarity == 1 { "pos" } else { "neg" };
                    words.push(format!("{cue_prefix}{}", cues[(i / 2) % cues.len()]));
                    words.extend(
                        (0..cfg.fillers_per_example)
                            .map(|_| FILLERS[rng.below(FILLERS.len())].to_string()),
                    );
                    rng.shuffle(&mut words);
                    (words.join(" "), polarity)
                })
                .collect();
            rng.shuffle(&mut texts);
            *corpus.split_mut(split) = texts
                .into_iter()
                .enumerate()
                .map(|(i, (text, polarity))| Example {
                    id: format!("{name}-{}-{i}", split_tag(split)),
                    text,
                    domain: name.clone(),
                    label: LABELS[polarity ^ group].to_string(),
                    language: None,
                })
                .collect();
        }
        corpora.push(corpus);
    }
    Ok((corpora, table))
}

fn split_tag(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Dev => "dev",
        Split::Test => "test",
    }
}
