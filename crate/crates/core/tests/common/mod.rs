//! Brute-force oracles and random fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use hypada_core::drf::{DrfEntry, MI_RESOLUTION};
use hypada_core::text::{tokenize, RESERVED_TOKENS};
use hypada_core::{DomainCorpus, DrfConfig, DrfSet, EmbeddingTable, Example, Rng, Signature, Token};

pub fn example(id: &str, domain: &str, text: &str) -> Example {
    Example {
        id: id.into(),
        text: text.into(),
        domain: domain.into(),
        label: "positive".into(),
        language: None,
    }
}

pub fn corpus(domain: &str, texts: &[&str]) -> DomainCorpus {
    let mut c = DomainCorpus::new(domain);
    c.train = texts
        .iter()
        .enumerate()
        .map(|(i, t)| example(&format!("{domain}-{i}"), domain, t))
        .collect();
    c
}

fn plogp(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * p.log2()
    }
}

/// MI in bits as H(X) + H(Y) - H(X, Y) over the empirical joint table.
pub fn entropy_mi(presence: &[bool], label: &[bool]) -> f64 {
    let n = presence.len() as f64;
    let mut joint = [[0.0f64; 2]; 2];
    for (&x, &y) in presence.iter().zip(label) {
        joint[usize::from(x)][usize::from(y)] += 1.0 / n;
    }
    let px = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let py = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let hx = -(plogp(px[0]) + plogp(px[1]));
    let hy = -(plogp(py[0]) + plogp(py[1]));
    let hxy = -joint.iter().flatten().map(|&p| plogp(p)).sum::<f64>();
    (hx + hy - hxy).max(0.0)
}

/// Enumerates the whole vocabulary, computes presence MI and raw token counts
/// per word directly from the sentences, ranks, cuts at `top_l` and filters
/// by the count ratio.
pub fn drf_oracle(corpora: &[DomainCorpus], domain: &str, cfg: &DrfConfig) -> Vec<DrfEntry> {
    let sentences: Vec<(bool, Vec<String>)> = corpora
        .iter()
        .flat_map(|c| {
            c.train.iter().map(move |e| {
                let toks = tokenize(&e.text)
                    .into_iter()
                    .map(|t| t.as_str().to_string())
                    .filter(|t| !RESERVED_TOKENS.contains(&t.as_str()))
                    .collect();
                (c.domain == domain, toks)
            })
        })
        .collect();
    let vocab: BTreeSet<&String> = sentences.iter().flat_map(|(_, t)| t).collect();
    let label: Vec<bool> = sentences.iter().map(|(l, _)| *l).collect();
    let mut scored: Vec<DrfEntry> = vocab
        .into_iter()
        .map(|w| {
            let presence: Vec<bool> = sentences.iter().map(|(_, t)| t.contains(w)).collect();
            let count = |inside: bool| {
                sentences
                    .iter()
                    .filter(|(l, _)| *l == inside)
                    .map(|(_, t)| t.iter().filter(|x| *x == w).count() as u64)
                    .sum::<u64>()
            };
            let mi = entropy_mi(&presence, &label);
            DrfEntry {
                word: w.clone(),
                mi: (mi / MI_RESOLUTION).round() * MI_RESOLUTION,
                count_in_domain: count(true),
                count_elsewhere: count(false),
            }
        })
        .collect();
    scored.sort_by(|a, b| b.mi.partial_cmp(&a.mi).unwrap().then(a.word.cmp(&b.word)));
    scored.truncate(cfg.top_l);
    scored
        .into_iter()
        .filter(|e| e.count_in_domain > 0 && e.count_elsewhere as f64 <= cfg.rho * e.count_in_domain as f64)
        .collect()
}

pub fn random_micro_corpora(rng: &mut Rng) -> Vec<DomainCorpus> {
    let vocab = ["ant", "bee", "cat", "dog", "eel", "fox", "gnu", "hen", "ibis"];
    let n_domains = 2 + rng.below(2);
    (0..n_domains)
        .map(|d| {
            let name = format!("d{d}");
            let texts: Vec<String> = (0..2 + rng.below(4))
                .map(|_| {
                    (0..1 + rng.below(5))
                        .map(|_| vocab[rng.below(vocab.len())])
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            corpus(&name, &refs)
        })
        .collect()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Every (DRF, token) distance, minimum per DRF, sorted by score then word.
pub fn annotation_oracle(tokens: &[Token], set: &DrfSet, table: &EmbeddingTable, k: usize) -> Signature {
    let covered: Vec<&[f64]> = tokens.iter().filter_map(|t| table.get(t.as_str())).collect();
    let mut scored = Vec::new();
    for e in &set.entries {
        let Some(v) = table.get(&e.word) else { continue };
        let mut best = f64::INFINITY;
        for t in &covered {
            best = best.min(sq(v, t));
        }
        if !covered.is_empty() {
            scored.push((best, e.word.clone()));
        }
    }
    if scored.len() < k {
        let mut by_count: Vec<&DrfEntry> = set.entries.iter().collect();
        by_count.sort_by(|a, b| b.count_in_domain.cmp(&a.count_in_domain).then(a.word.cmp(&b.word)));
        return Signature {
            domain: set.domain.clone(),
            drfs: by_count.iter().take(k).map(|e| e.word.clone()).collect(),
            fallback: true,
        };
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Signature::new(set.domain.clone(), scored.into_iter().take(k).map(|(_, w)| w).collect())
}

/// All (word, domain, token) triples; the first triple after sorting by
/// (score, word, domain) names the domain, distinct words fill the list.
pub fn ranker_oracle(tokens: &[Token], sets: &[DrfSet], table: &EmbeddingTable, k: usize) -> Signature {
    let covered: Vec<&[f64]> = tokens.iter().filter_map(|t| table.get(t.as_str())).collect();
    let mut triples: Vec<(f64, String, String)> = Vec::new();
    for set in sets {
        for e in &set.entries {
            let Some(v) = table.get(&e.word) else { continue };
            for t in &covered {
                triples.push((sq(v, t), e.word.clone(), set.domain.clone()));
            }
        }
    }
    triples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut words: Vec<String> = Vec::new();
    for (_, w, _) in &triples {
        if !words.contains(w) {
            words.push(w.clone());
        }
    }
    if words.len() < k {
        let mut counts: Vec<(String, u64)> = Vec::new();
        for set in sets {
            for e in &set.entries {
                match counts.iter_mut().find(|(w, _)| *w == e.word) {
                    Some(c) => c.1 = c.1.max(e.count_in_domain),
                    None => counts.push((e.word.clone(), e.count_in_domain)),
                }
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut domains: Vec<&str> = sets.iter().map(|s| s.domain.as_str()).collect();
        domains.sort();
        return Signature {
            domain: domains[0].to_string(),
            drfs: counts.into_iter().take(k).map(|(w, _)| w).collect(),
            fallback: true,
        };
    }
    Signature::new(triples[0].2.clone(), words.into_iter().take(k).collect())
}

/// A random annotation fixture: table of dimension <= 8, at most 20 DRFs
/// over all sets (some missing from the table), up to 15 tokens (some
/// uncovered).
/// Coordinates come from a small grid so exact distance ties occur.
pub struct AnnotationFixture {
    pub table: EmbeddingTable,
    pub sets: Vec<DrfSet>,
    pub tokens: Vec<Token>,
    pub k: usize,
}

pub fn random_annotation_fixture(rng: &mut Rng) -> AnnotationFixture {
    let d = 1 + rng.below(8);
    let mut table = EmbeddingTable::new(d);
    let n_words = 30;
    for i in 0..n_words {
        let v: Vec<f64> = (0..d).map(|_| rng.below(5) as f64 * 0.5 - 1.0).collect();
        if rng.bernoulli(0.9) {
            table.insert(format!("w{i:02}"), &v).unwrap();
        }
    }
    let n_sets = 1 + rng.below(3);
    let sets = (0..n_sets)
        .map(|s| {
            let n = 1 + rng.below(20 / n_sets);
            let mut idx = rng.sample_indices(n_words, n);
            idx.sort();
            DrfSet {
                domain: format!("dom{}", (n_sets - s) * 7 % 10),
                entries: idx
                    .into_iter()
                    .map(|i| DrfEntry {
                        word: format!("w{i:02}"),
                        mi: 0.1,
                        count_in_domain: 1 + rng.below(4) as u64,
                        count_elsewhere: 0,
                    })
                    .collect(),
            }
        })
        .collect();
    let tokens = (0..rng.below(16))
        .map(|_| {
            let w = if rng.bernoulli(0.15) {
                format!("oov{}", rng.below(3))
            } else {
                format!("w{:02}", rng.below(n_words))
            };
            Token::new(w).unwrap()
        })
        .collect();
    AnnotationFixture {
        table,
        sets,
        tokens,
        k: 1 + rng.below(5),
    }
}

pub fn read_fixture(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// The government sentence pair, frozen embeddings and the four source DRF sets.
pub fn government_pair() -> (Example, EmbeddingTable, Vec<DrfSet>) {
    let table = hypada_core::text::parse_embeddings(
        read_fixture("government_embeddings.txt").as_bytes(),
        std::path::Path::new("government_embeddings.txt"),
    )
    .unwrap();
    let sets = hypada_core::drf::read_drf_sets(read_fixture("government_drfs.jsonl").as_bytes()).unwrap();
    let ex = example(
        "government-1",
        "government",
        "Homes not located on one of these roads must place a mail receptacle along the route traveled. \
         </s> Other roads are far too rural to provide mail service to.",
    );
    (ex, table, sets)
}
