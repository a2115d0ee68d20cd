//! Tokenization and the static word-embedding table.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Tokens that survive tokenization verbatim instead of being stripped.
pub const RESERVED_TOKENS: [&str; 2] = ["</s>", "<sep>"];

/// A lowercased, whitespace-free surface form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    /// Wraps an already-normalized surface form. Returns `None` for empty or
    /// whitespace-bearing strings.
    pub fn new(surface: impl Into<String>) -> Option<Token> {
        let s = surface.into();
        if s.is_empty() || s.chars().any(char::is_whitespace) {
            None
        } else {
            Some(Token(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lowercase, split on whitespace, strip leading and trailing
/// non-alphanumeric characters. Internal punctuation (`mail-receptacle`,
/// `don't`) is kept. `</s>` and `<sep>` pass through untouched.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .filter_map(|piece| {
            let lower = piece.to_lowercase();
            if RESERVED_TOKENS.contains(&lower.as_str()) {
                return Some(Token(lower));
            }
            let trimmed = lower.trim_matches(|c: char| !c.is_alphanumeric());
            Token::new(trimmed)
        })
        .collect()
}

pub fn join_tokens(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(Token::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Static word vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    /// Inserts `word` unless present. Returns false for duplicates.
    pub fn insert(&mut self, word: impl Into<String>, vector: &[f64]) -> Result<bool> {
        let word = word.into();
        if vector.len() != self.dim {
            return Err(Error::Data(format!(
                "vector for {word:?} has length {}, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&word) {
            return Ok(false);
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.data.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Returns a copy with every vector multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> EmbeddingTable {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= factor);
        out
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        for (i, word) in self.words.iter().enumerate() {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            let nums: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
            writeln!(out, "{word} {}", nums.join(" ")).map_err(|e| Error::io("<output>", e))?;
        }
        Ok(())
    }
}

/// Reads `word v1 ... vd` lines. The first line fixes `d`. Duplicate words
/// keep their first vector and log a warning.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file), path)
}

pub fn parse_embeddings<R: BufRead>(reader: R, path: &Path) -> Result<EmbeddingTable> {
    let malformed = |line: usize, message: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let vector = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| malformed(lineno, format!("non-numeric field {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.is_empty() {
            return Err(malformed(lineno, format!("no vector for {word:?}")));
        }
        let table = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        if vector.len() != table.dim() {
            return Err(malformed(
                lineno,
                format!(
                    "dimension {} differs from {} set by line 1",
                    vector.len(),
                    table.dim()
                ),
            ));
        }
        if !table.insert(word, &vector)? {
            log::warn!("{}:{lineno}: duplicate word {word:?} ignored", path.display());
        }
    }
    table.ok_or_else(|| Error::Data(format!("{}: no embeddings", path.display())))
}

/// Mean of the table vectors of covered tokens, plus the number covered.
/// Uncovered tokens are skipped; no coverage yields the zero vector.
pub fn embed_mean(tokens: &[Token], table: &EmbeddingTable) -> (Vec<f64>, usize) {
    let mut sum = vec![0.0; table.dim()];
    let mut covered = 0;
    for v in tokens.iter().filter_map(|t| table.get(t.as_str())) {
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        covered += 1;
    }
    if covered > 0 {
        let n = covered as f64;
        sum.iter_mut().for_each(|s| *s /= n);
    }
    (sum, covered)
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<Token> {
        words.iter().map(|w| Token::new(*w).unwrap()).collect()
    }

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(rows[0].1.len());
        for (w, v) in rows {
            t.insert(*w, v).unwrap();
        }
        t
    }

    #[test]
    fn tokenize_strips_edge_punctuation() {
        assert_eq!(tokenize("The Town, rebuilt."), toks(&["the", "town", "rebuilt"]));
        assert!(tokenize("").is_empty());
        assert!(tokenize("  ... ,, ").is_empty());
        assert_eq!(tokenize("mail-receptacle"), toks(&["mail-receptacle"]));
        assert_eq!(tokenize("\"Don't!\""), toks(&["don't"]));
    }

    #[test]
    fn tokenize_unicode_and_reserved() {
        assert_eq!(tokenize("ÉTÉ Straße"), toks(&["été", "straße"]));
        assert_eq!(tokenize("a </s> b <SEP> c"), toks(&["a", "</s>", "b", "<sep>", "c"]));
    }

    #[test]
    fn tokenize_idempotent_on_own_output() {
        let once = tokenize("Hello, World! It's a mail-receptacle </s> (really).");
        assert_eq!(tokenize(&join_tokens(&once)), once);
    }

    #[test]
    fn parse_two_lines() {
        let t = parse_embeddings("a 1 0 0\nb 0 1 0\n".as_bytes(), Path::new("e")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 3);
        assert_eq!(t.get("b"), Some(&[0.0, 1.0, 0.0][..]));
        assert!(t.get("c").is_none());
    }

    #[test]
    fn parse_rejects_inconsistent_dimension() {
        let err = parse_embeddings("a 1 0 0\nb 0 1 0 1\n".as_bytes(), Path::new("e")).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }));
        let err = parse_embeddings("a 1 x 0\n".as_bytes(), Path::new("e")).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 1, .. }));
    }

    #[test]
    fn duplicates_keep_first() {
        let t = parse_embeddings("a 1 0\na 0 1\n".as_bytes(), Path::new("e")).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("a"), Some(&[1.0, 0.0][..]));
    }

    #[test]
    fn self_cosine_is_one() {
        let mut t = EmbeddingTable::new(4);
        for i in 0..50 {
            let v: Vec<f64> = (0..4).map(|j| ((i * 7 + j * 3) % 11) as f64 - 4.5).collect();
            t.insert(format!("w{i}"), &v).unwrap();
        }
        for w in t.words() {
            let v = t.get(w).unwrap();
            assert!((cosine(v, v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_mean_cases() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        assert_eq!(embed_mean(&toks(&["a"]), &t), (vec![1.0, 0.0], 1));
        assert_eq!(embed_mean(&toks(&["a", "b"]), &t), (vec![0.5, 0.5], 2));
        assert_eq!(embed_mean(&toks(&["a", "zzz-oov"]), &t), (vec![1.0, 0.0], 1));
        assert_eq!(embed_mean(&toks(&["zzz"]), &t), (vec![0.0, 0.0], 0));
        assert_eq!(embed_mean(&[], &t), (vec![0.0, 0.0], 0));
    }

    #[test]
    fn write_then_parse_round_trips() {
        let t = table(&[("a", &[1.5, -0.25]), ("b", &[1e-7, 3.0])]);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(parse_embeddings(&buf[..], Path::new("e")).unwrap(), t);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn embed_mean_permutation_invariant_and_bounded(
                idx in proptest::collection::vec(0usize..6, 0..12),
                seed in 0u64..1000,
            ) {
                let mut rng = crate::rng::Rng::new(seed);
                let mut t = EmbeddingTable::new(3);
                for i in 0..5 {
                    let v: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
                    t.insert(format!("w{i}"), &v).unwrap();
                }
                // index 5 is out of vocabulary
                let tokens: Vec<Token> = idx.iter().map(|i| Token::new(format!("w{i}")).unwrap()).collect();
                let mut reversed = tokens.clone();
                reversed.reverse();
                let (a, ca) = embed_mean(&tokens, &t);
                let (b, cb) = embed_mean(&reversed, &t);
                prop_assert_eq!(ca, cb);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let max_norm = tokens.iter().filter_map(|t2| t.get(t2.as_str())).map(norm).fold(0.0, f64::max);
                prop_assert!(norm(&a) <= max_norm + 1e-12);
            }
        }
    }
}
