//! Domain-related features (DRFs) and example signatures.
//!
//! A DRF set for domain `S_j` holds words whose sentence presence carries high
//! mutual information with the "is from `S_j`" indicator, restricted to words
//! that are at least as frequent inside `S_j` as `1/rho` times their frequency
//! in the other source domains. An example's signature names a domain and the
//! `k` DRFs closest in embedding space to any of the example's tokens.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainCorpus, Example};
use crate::error::{Error, Result};
use crate::text::{squared_distance, tokenize, EmbeddingTable, Token, RESERVED_TOKENS};

/// MI scores are compared on a 1e-12 grid so that mathematically equal scores
/// computed through different summation orders tie exactly.
pub const MI_RESOLUTION: f64 = 1e-12;

pub fn quantize_mi(mi: f64) -> f64 {
    (mi / MI_RESOLUTION).round() * MI_RESOLUTION
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrfConfig {
    pub rho: f64,
    pub top_l: usize,
    pub k: usize,
}

impl Default for DrfConfig {
    fn default() -> Self {
        DrfConfig {
            rho: 1.5,
            top_l: 1000,
            k: 5,
        }
    }
}

impl DrfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho.is_nan() || self.rho <= 0.0 {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.top_l < self.k {
            return Err(Error::Config(format!(
                "top_l ({}) must be at least k ({})",
                self.top_l, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrfEntry {
    pub word: String,
    pub mi: f64,
    pub count_in_domain: u64,
    pub count_elsewhere: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrfSet {
    pub domain: String,
    pub entries: Vec<DrfEntry>,
}

impl DrfSet {
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.word.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Words ordered by in-domain count (desc), then lexicographically.
    pub fn by_count(&self) -> Vec<&DrfEntry> {
        let mut entries: Vec<&DrfEntry> = self.entries.iter().collect();
        entries.sort_by(|a, b| {
            b.count_in_domain
                .cmp(&a.count_in_domain)
                .then_with(|| a.word.cmp(&b.word))
        });
        entries
    }
}

#[derive(Serialize, Deserialize)]
struct DrfLine {
    domain: String,
    word: String,
    mi: f64,
    count_in_domain: u64,
    count_elsewhere: u64,
}

/// One JSON object per entry, in set order.
pub fn write_drf_sets<W: Write>(out: &mut W, sets: &[DrfSet]) -> Result<()> {
    for set in sets {
        for e in &set.entries {
            let line = DrfLine {
                domain: set.domain.clone(),
                word: e.word.clone(),
                mi: e.mi,
                count_in_domain: e.count_in_domain,
                count_elsewhere: e.count_elsewhere,
            };
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        }
    }
    Ok(())
}

/// Reads DRF sets written by [`write_drf_sets`], grouped by domain in
/// first-appearance order.
pub fn read_drf_sets<R: BufRead>(reader: R) -> Result<Vec<DrfSet>> {
    let mut sets: Vec<DrfSet> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<drf input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DrfLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: "<drf input>".into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let entry = DrfEntry {
            word: rec.word,
            mi: rec.mi,
            count_in_domain: rec.count_in_domain,
            count_elsewhere: rec.count_elsewhere,
        };
        match sets.iter_mut().find(|s| s.domain == rec.domain) {
            Some(set) => set.entries.push(entry),
            None => sets.push(DrfSet {
                domain: rec.domain,
                entries: vec![entry],
            }),
        }
    }
    Ok(sets)
}

/// MI in bits from a 2x2 contingency table
/// (`n11` = present and in-domain, `n10` = present and elsewhere, ...).
pub fn mi_from_counts(n11: u64, n10: u64, n01: u64, n00: u64) -> f64 {
    let n = (n11 + n10 + n01 + n00) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let present = (n11 + n10) as f64;
    let absent = (n01 + n00) as f64;
    let inside = (n11 + n01) as f64;
    let outside = (n10 + n00) as f64;
    let term = |joint: u64, row: f64, col: f64| {
        if joint == 0 {
            0.0
        } else {
            let j = joint as f64;
            (j / n) * (j * n / (row * col)).log2()
        }
    };
    let mi = term(n11, present, inside)
        + term(n10, present, outside)
        + term(n01, absent, inside)
        + term(n00, absent, outside);
    mi.max(0.0)
}

/// Empirical mutual information (bits) between two binary sequences.
pub fn mutual_information(presence: &[bool], label: &[bool]) -> f64 {
    assert_eq!(presence.len(), label.len(), "sequence lengths differ");
    let mut counts = [0u64; 4];
    for (&x, &y) in presence.iter().zip(label) {
        counts[(usize::from(!x) << 1) | usize::from(!y)] += 1;
    }
    mi_from_counts(counts[0], counts[1], counts[2], counts[3])
}

#[derive(Default)]
struct WordStats {
    docs_in: u64,
    docs_out: u64,
    tokens_in: u64,
    tokens_out: u64,
}

/// Builds the DRF set of `domain` from the train splits of `corpora`.
///
/// MI ranks words by sentence presence; the rho filter uses token counts.
pub fn build_drf_set(corpora: &[DomainCorpus], domain: &str, cfg: &DrfConfig) -> Result<DrfSet> {
    cfg.validate()?;
    if corpora.len() < 2 {
        return Err(Error::Config("DRF extraction needs at least two domains".into()));
    }
    let own = corpora
        .iter()
        .find(|c| c.domain == domain)
        .ok_or_else(|| Error::Config(format!("domain {domain} not among DRF corpora")))?;
    if own.train.is_empty() {
        return Err(Error::Data(format!("domain {domain} has an empty train split")));
    }

    let mut stats: BTreeMap<String, WordStats> = BTreeMap::new();
    let (mut n_in, mut n_out) = (0u64, 0u64);
    for corpus in corpora {
        let inside = corpus.domain == domain;
        for ex in &corpus.train {
            if inside {
                n_in += 1;
            } else {
                n_out += 1;
            }
            let tokens = tokenize(&ex.text);
            let mut seen = HashSet::new();
            for tok in tokens.iter().filter(|t| !RESERVED_TOKENS.contains(&t.as_str())) {
                let s = stats.entry(tok.as_str().to_string()).or_default();
                let first = seen.insert(tok.as_str());
                match (inside, first) {
                    (true, true) => {
                        s.tokens_in += 1;
                        s.docs_in += 1;
                    }
                    (true, false) => s.tokens_in += 1,
                    (false, true) => {
                        s.tokens_out += 1;
                        s.docs_out += 1;
                    }
                    (false, false) => s.tokens_out += 1,
                }
            }
        }
    }
    if stats.is_empty() {
        return Err(Error::Data("empty vocabulary in DRF corpora".into()));
    }

    let mut ranked: Vec<(String, f64, &WordStats)> = stats
        .iter()
        .map(|(w, s)| {
            let mi = mi_from_counts(s.docs_in, s.docs_out, n_in - s.docs_in, n_out - s.docs_out);
            (w.clone(), quantize_mi(mi), s)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(cfg.top_l);

    let entries = ranked
        .into_iter()
        .filter(|(_, _, s)| {
            s.tokens_in > 0 && (s.tokens_out as f64) / (s.tokens_in as f64) <= cfg.rho
        })
        .map(|(word, mi, s)| DrfEntry {
            word,
            mi,
            count_in_domain: s.tokens_in,
            count_elsewhere: s.tokens_out,
        })
        .collect();
    Ok(DrfSet {
        domain: domain.to_string(),
        entries,
    })
}

/// `"D: T_1, ..., T_k"`. `fallback` marks signatures produced without
/// embedding evidence; it is not part of the rendered string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    pub domain: String,
    pub drfs: Vec<String>,
    pub fallback: bool,
}

impl Signature {
    pub fn new(domain: impl Into<String>, drfs: Vec<String>) -> Self {
        Signature {
            domain: domain.into(),
            drfs,
            fallback: false,
        }
    }

    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn parse(s: &str) -> Result<Signature> {
        s.parse()
    }

    /// Domain-name tokens followed by the DRF tokens.
    pub fn tokens(&self) -> Vec<Token> {
        let mut tokens = tokenize(&self.domain);
        tokens.extend(self.drfs.iter().filter_map(|w| Token::new(w.as_str())));
        tokens
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.domain, self.drfs.join(", "))
    }
}

impl FromStr for Signature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Signature> {
        let bad = |why: &str| Error::Data(format!("malformed signature {s:?}: {why}"));
        let (domain, rest) = s.split_once(": ").ok_or_else(|| bad("missing \": \""))?;
        if domain.is_empty() {
            return Err(bad("empty domain"));
        }
        let drfs: Vec<String> = rest.split(", ").map(str::to_string).collect();
        if drfs
            .iter()
            .any(|d| d.is_empty() || d.chars().any(char::is_whitespace))
        {
            return Err(bad("empty or malformed DRF"));
        }
        Ok(Signature::new(domain, drfs))
    }
}

/// `min_i ||phi(word) - phi(token_i)||^2` over the given token vectors.
pub fn drf_score(word_vec: &[f64], token_vecs: &[&[f64]]) -> f64 {
    token_vecs
        .iter()
        .map(|t| squared_distance(word_vec, t))
        .fold(f64::INFINITY, f64::min)
}

/// Annotates a training example with the `k` DRFs of its domain's set that lie
/// closest to its tokens.
///
/// DRFs missing from the table are skipped. With no covered token, or fewer
/// than `k` scorable DRFs, the `k` most frequent DRFs are used instead and the
/// signature is flagged as a fallback.
pub fn annotate_signature(
    example: &Example,
    drf_set: &DrfSet,
    table: &EmbeddingTable,
    k: usize,
) -> Signature {
    let tokens = tokenize(&example.text);
    annotate_tokens(&tokens, drf_set, table, k)
}

pub fn annotate_tokens(
    tokens: &[Token],
    drf_set: &DrfSet,
    table: &EmbeddingTable,
    k: usize,
) -> Signature {
    let token_vecs: Vec<&[f64]> = tokens.iter().filter_map(|t| table.get(t.as_str())).collect();
    let mut scored: Vec<(f64, &str)> = if token_vecs.is_empty() {
        Vec::new()
    } else {
        drf_set
            .words()
            .filter_map(|w| table.get(w).map(|v| (drf_score(v, &token_vecs), w)))
            .collect()
    };
    if scored.len() < k {
        let drfs = drf_set
            .by_count()
            .into_iter()
            .take(k)
            .map(|e| e.word.clone())
            .collect();
        return Signature {
            domain: drf_set.domain.clone(),
            drfs,
            fallback: true,
        };
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Signature::new(
        drf_set.domain.clone(),
        scored.into_iter().take(k).map(|(_, w)| w.to_string()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(id: &str, domain: &str, text: &str) -> Example {
        Example {
            id: id.into(),
            text: text.into(),
            domain: domain.into(),
            label: "positive".into(),
            language: None,
        }
    }

    fn corpus(domain: &str, texts: &[&str]) -> DomainCorpus {
        let mut c = DomainCorpus::new(domain);
        c.train = texts
            .iter()
            .enumerate()
            .map(|(i, t)| example(&format!("{domain}{i}"), domain, t))
            .collect();
        c
    }

    fn bools(xs: &[u8]) -> Vec<bool> {
        xs.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn mi_perfect_dependence_is_one_bit() {
        let x = bools(&[1, 1, 0, 0]);
        assert!((mutual_information(&x, &x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mi_independent_is_zero() {
        let x = bools(&[1, 1, 1, 1]);
        let y = bools(&[1, 0, 1, 0]);
        assert_eq!(mutual_information(&x, &y), 0.0);
    }

    #[test]
    fn mi_hand_table() {
        // joint counts: (1,1)=2 (1,0)=0 (0,1)=1 (0,0)=3
        // (1/3)log2(2) + (1/6)log2(1/2) + (1/2)log2(3/2)
        let expected = 1.0 / 3.0 - 1.0 / 6.0 + 0.5 * 1.5f64.log2();
        let mi = mutual_information(&bools(&[1, 1, 0, 0, 0, 0]), &bools(&[1, 1, 1, 0, 0, 0]));
        assert!((mi - expected).abs() < 1e-12);
        assert!((mi - 0.4591).abs() < 1e-4);
    }

    #[test]
    fn sole_domain_word_retained() {
        let corpora = vec![
            corpus("a", &["zeta one", "zeta two"]),
            corpus("b", &["three", "four"]),
        ];
        let set = build_drf_set(&corpora, "a", &DrfConfig::default()).unwrap();
        let zeta = set.entries.iter().find(|e| e.word == "zeta").unwrap();
        assert_eq!(zeta.count_elsewhere, 0);
        assert_eq!(set.entries[0].word, "zeta");
        assert!((zeta.mi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn word_absent_from_domain_excluded() {
        let corpora = vec![
            corpus("a", &["x", "x"]),
            corpus("b", &["only", "only"]),
        ];
        let set = build_drf_set(&corpora, "a", &DrfConfig::default()).unwrap();
        assert!(set.words().all(|w| w != "only"));
    }

    #[test]
    fn rho_filter_uses_token_counts() {
        // "w": 2 tokens inside a, 3 tokens in a single b sentence
        let corpora = vec![
            corpus("a", &["w p", "w q"]),
            corpus("b", &["w w w", "r"]),
        ];
        let set = build_drf_set(&corpora, "a", &DrfConfig { rho: 1.5, top_l: 10, k: 1 }).unwrap();
        assert!(set.words().any(|w| w == "w"));
        let set = build_drf_set(&corpora, "a", &DrfConfig { rho: 1.4999, top_l: 10, k: 1 }).unwrap();
        assert!(set.words().all(|w| w != "w"));
    }

    #[test]
    fn build_errors() {
        let one = vec![corpus("a", &["x"])];
        assert!(build_drf_set(&one, "a", &DrfConfig::default()).is_err());
        let two = vec![corpus("a", &[]), corpus("b", &["x"])];
        assert!(build_drf_set(&two, "a", &DrfConfig::default()).is_err());
        let two = vec![corpus("a", &["x"]), corpus("b", &["x"])];
        assert!(build_drf_set(&two, "c", &DrfConfig::default()).is_err());
        let bad = DrfConfig { rho: 0.0, ..DrfConfig::default() };
        assert!(build_drf_set(&two, "a", &bad).is_err());
    }

    #[test]
    fn top_l_truncates_before_filter() {
        let corpora = vec![
            corpus("a", &["alpha beta", "alpha", "beta gamma"]),
            corpus("b", &["delta", "delta epsilon", "epsilon"]),
        ];
        let all = build_drf_set(&corpora, "a", &DrfConfig { rho: 1.5, top_l: 100, k: 1 }).unwrap();
        let few = build_drf_set(&corpora, "a", &DrfConfig { rho: 1.5, top_l: 2, k: 1 }).unwrap();
        assert!(few.len() <= 2);
        assert!(few.entries.iter().all(|e| all.entries.contains(e)));
    }

    #[test]
    fn render_and_parse() {
        let sig = Signature::new("travel", vec!["city".into()]);
        assert_eq!(sig.render(), "travel: city");
        let parsed = Signature::parse("music: history, rock, sound, story").unwrap();
        assert_eq!(parsed.domain, "music");
        assert_eq!(parsed.drfs, vec!["history", "rock", "sound", "story"]);
        assert!(Signature::parse("music history").is_err());
        assert!(Signature::parse("music: a, , b").is_err());
        assert!(Signature::parse(": a").is_err());
    }

    #[test]
    fn signature_tokens_prepend_domain() {
        let sig = Signature::parse("travel: city, area").unwrap();
        let tokens = sig.tokens();
        let words: Vec<&str> = tokens.iter().map(|t| t.as_str()).collect();
        assert_eq!(words, vec!["travel", "city", "area"]);
    }

    fn drf_set(domain: &str, words: &[(&str, u64)]) -> DrfSet {
        DrfSet {
            domain: domain.into(),
            entries: words
                .iter()
                .map(|(w, c)| DrfEntry {
                    word: w.to_string(),
                    mi: 0.1,
                    count_in_domain: *c,
                    count_elsewhere: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn zero_distance_ranked_first() {
        let mut t = EmbeddingTable::new(2);
        t.insert("tok", &[1.0, 1.0]).unwrap();
        t.insert("exact", &[1.0, 1.0]).unwrap();
        t.insert("near", &[1.1, 1.0]).unwrap();
        t.insert("far", &[5.0, 5.0]).unwrap();
        let set = drf_set("d", &[("far", 9), ("near", 1), ("exact", 1)]);
        let sig = annotate_signature(&example("e", "d", "tok"), &set, &t, 2);
        assert_eq!(sig.drfs, vec!["exact", "near"]);
        assert!(!sig.fallback);
    }

    #[test]
    fn fallback_on_oov_example() {
        let mut t = EmbeddingTable::new(2);
        t.insert("a", &[0.0, 1.0]).unwrap();
        t.insert("b", &[1.0, 0.0]).unwrap();
        let set = drf_set("d", &[("a", 2), ("b", 5), ("c", 5)]);
        let sig = annotate_signature(&example("e", "d", "unknown words"), &set, &t, 2);
        assert!(sig.fallback);
        assert_eq!(sig.drfs, vec!["b", "c"]);
        // only two DRFs are in the table, so k=3 also falls back
        let sig = annotate_signature(&example("e", "d", "a"), &set, &t, 3);
        assert!(sig.fallback);
        assert_eq!(sig.drfs, vec!["b", "c", "a"]);
    }

    #[test]
    fn drf_sets_round_trip_jsonl() {
        let sets = vec![drf_set("a", &[("x", 1), ("y", 2)]), drf_set("b", &[("z", 3)])];
        let mut buf = Vec::new();
        write_drf_sets(&mut buf, &sets).unwrap();
        assert_eq!(read_drf_sets(&buf[..]).unwrap(), sets);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn word() -> impl Strategy<Value = String> {
            "[a-z][a-z0-9'-]{0,8}"
        }

        proptest! {
            #[test]
            fn render_parse_identity(domain in "[a-z][a-z ]{0,10}[a-z]", drfs in proptest::collection::vec(word(), 1..8)) {
                let sig = Signature::new(domain, drfs);
                prop_assert_eq!(Signature::parse(&sig.render()).unwrap(), sig);
            }

            #[test]
            fn mi_symmetric_and_nonnegative(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..40)) {
                let x: Vec<bool> = pairs.iter().map(|p| p.0).collect();
                let y: Vec<bool> = pairs.iter().map(|p| p.1).collect();
                let a = mutual_information(&x, &y);
                let b = mutual_information(&y, &x);
                prop_assert!(a >= 0.0);
                prop_assert!((a - b).abs() < 1e-12);
                // zero iff the table factorizes
                let n = x.len() as f64;
                let px = x.iter().filter(|&&v| v).count() as f64 / n;
                let py = y.iter().filter(|&&v| v).count() as f64 / n;
                let pxy = pairs.iter().filter(|p| p.0 && p.1).count() as f64 / n;
                let factorizes = (pxy - px * py).abs() < 1e-12;
                prop_assert_eq!(factorizes, a < 1e-12);
            }

            #[test]
            fn scaling_embeddings_keeps_ranking(seed in 0u64..500, scale in 0.1f64..10.0) {
                let mut rng = crate::rng::Rng::new(seed);
                let mut t = EmbeddingTable::new(3);
                let mut words = Vec::new();
                for i in 0..8 {
                    let v: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
                    t.insert(format!("w{i}"), &v).unwrap();
                    if i >= 3 { words.push((format!("w{i}"), 1u64)); }
                }
                let set = DrfSet { domain: "d".into(), entries: words.iter().map(|(w, c)| DrfEntry { word: w.clone(), mi: 0.0, count_in_domain: *c, count_elsewhere: 0 }).collect() };
                let ex = example("e", "d", "w0 w1 w2");
                let a = annotate_signature(&ex, &set, &t, 3);
                let b = annotate_signature(&ex, &set, &t.scaled(scale), 3);
                prop_assert_eq!(a, b);
                let tv: Vec<&[f64]> = ["w0", "w1", "w2"].iter().map(|w| t.get(w).unwrap()).collect();
                let scaled = t.scaled(scale);
                let sv: Vec<&[f64]> = ["w0", "w1", "w2"].iter().map(|w| scaled.get(w).unwrap()).collect();
                let s1 = drf_score(t.get("w5").unwrap(), &tv);
                let s2 = drf_score(scaled.get("w5").unwrap(), &sv);
                prop_assert!((s2 - scale * scale * s1).abs() <= 1e-9 * (1.0 + s2.abs()));
            }
        }
    }
}
