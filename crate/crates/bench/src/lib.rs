//! Benchmark fixtures.

use std::sync::Arc;

use hypada_core::drf::build_drf_set;
use hypada_core::synthetic::{generate, SyntheticConfig, LABELS};
use hypada_core::{DomainCorpus, DrfConfig, DrfSet, EmbeddingTable};

pub struct Fixture {
    pub corpora: Vec<DomainCorpus>,
    pub table: Arc<EmbeddingTable>,
    pub drf_sets: Vec<DrfSet>,
    pub labels: Vec<String>,
}

/// The default synthetic benchmark with `train_per_domain` examples per
/// domain and the DRF sets of every domain.
pub fn fixture(train_per_domain: usize) -> Fixture {
    let cfg = SyntheticConfig {
        train_per_domain,
        ..SyntheticConfig::default()
    };
    let (corpora, table) = generate(&cfg, 0).expect("valid synthetic config");
    let drf_sets = corpora
        .iter()
        .map(|c| build_drf_set(&corpora, &c.domain, &DrfConfig::default()).expect("non-empty corpora"))
        .collect();
    Fixture {
        corpora,
        table: Arc::new(table),
        drf_sets,
        labels: LABELS.iter().map(|s| s.to_string()).collect(),
    }
}
