//! Model variants built from the shared encoder, classifier and hypernetwork.

pub mod encoder;
pub mod generator;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Graph, NodeId, ParamStore};
use crate::corpus::Example;
use crate::drf::{DrfConfig, DrfSet, Signature};
use crate::error::{Error, Result};
use crate::eval::metrics::argmax;
use crate::hypernet::{
    apply_generated, ConditioningInput, GeneratedClassifier, HyperNetConfig, HyperNetwork,
};
use crate::nn::Linear;
use crate::rng::Rng;
use crate::text::{tokenize, EmbeddingTable, Token};

use self::encoder::{Encoder, SEP};
use self::generator::{GeneratorMode, SignatureGenerator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantKind {
    #[serde(rename = "noda")]
    NoDA,
    #[serde(rename = "hyper-dn")]
    HyperDN,
    #[serde(rename = "hyper-drf")]
    HyperDRF,
    #[serde(rename = "hyper-pada")]
    HyperPADA,
    #[serde(rename = "pada-lite")]
    PADALite,
    #[serde(rename = "moe-ind-avg")]
    MoEIndAvg,
    #[serde(rename = "moe-ind-attn")]
    MoEIndAttn,
    #[serde(rename = "moe-avg")]
    MoEAvg,
}

impl VariantKind {
    pub const ALL: [VariantKind; 8] = [
        VariantKind::NoDA,
        VariantKind::HyperDN,
        VariantKind::HyperDRF,
        VariantKind::HyperPADA,
        VariantKind::PADALite,
        VariantKind::MoEIndAvg,
        VariantKind::MoEIndAttn,
        VariantKind::MoEAvg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::NoDA => "noda",
            VariantKind::HyperDN => "hyper-dn",
            VariantKind::HyperDRF => "hyper-drf",
            VariantKind::HyperPADA => "hyper-pada",
            VariantKind::PADALite => "pada-lite",
            VariantKind::MoEIndAvg => "moe-ind-avg",
            VariantKind::MoEIndAttn => "moe-ind-attn",
            VariantKind::MoEAvg => "moe-avg",
        }
    }

    /// Variants that run stage one (DRF sets plus a signature generator).
    pub fn needs_signature(self) -> bool {
        matches!(
            self,
            VariantKind::HyperDRF | VariantKind::HyperPADA | VariantKind::PADALite
        )
    }

    /// Variants whose encoder input is prefixed by the rendered signature.
    pub fn uses_prompt(self) -> bool {
        matches!(self, VariantKind::HyperPADA | VariantKind::PADALite)
    }

    pub fn has_hn(self) -> bool {
        matches!(
            self,
            VariantKind::HyperDN | VariantKind::HyperDRF | VariantKind::HyperPADA
        )
    }

    pub fn is_moe(self) -> bool {
        matches!(
            self,
            VariantKind::MoEIndAvg | VariantKind::MoEIndAttn | VariantKind::MoEAvg
        )
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hn_layers: usize,
    pub generator: GeneratorMode,
    pub drf: DrfConfig,
    pub trainable_embeddings: bool,
    /// Encoder input is cut to this many tokens (prompt included).
    pub max_tokens: usize,
    /// Random simplex draws for the MoE attention search.
    pub attn_trials: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hn_layers: 2,
            generator: GeneratorMode::Ranker,
            drf: DrfConfig::default(),
            trainable_embeddings: true,
            max_tokens: 128,
            attn_trials: 100,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.drf.validate()?;
        if !(1..=3).contains(&self.hn_layers) {
            return Err(Error::Config(format!(
                "hypernetwork layers must be 1, 2 or 3, got {}",
                self.hn_layers
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        if self.attn_trials == 0 {
            return Err(Error::Config("attn_trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// Encoder input for the prompt variants: the rendered signature's tokens,
/// the separator, then the example's tokens.
pub fn prompt_tokens(signature: &Signature, tokens: &[Token]) -> Vec<Token> {
    let mut out = tokenize(&signature.render());
    out.push(Token::new(SEP).expect("separator is a valid token"));
    out.extend_from_slice(tokens);
    out
}

/// Whether the example's domain may be used as HN conditioning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomainHint {
    Known(String),
    Unknown,
}

/// Everything a single forward pass consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub encoder_tokens: Vec<Token>,
    pub conditioning: Option<ConditioningInput>,
    pub signature: Option<Signature>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
    pub signature: Option<Signature>,
    pub classifier: Option<GeneratedClassifier>,
}

#[derive(Debug, Clone)]
pub struct Stage1 {
    pub drf_sets: Vec<DrfSet>,
    pub generator: SignatureGenerator,
}

#[derive(Debug, Clone)]
pub struct Expert {
    /// Source domain the expert was trained on; `None` for the general expert.
    pub domain: Option<String>,
    pub model: Model,
}

#[derive(Debug, Clone)]
pub enum Body {
    Plain { encoder: Encoder, classifier: Linear },
    Hyper { encoder: Encoder, hn: HyperNetwork },
    Experts { experts: Vec<Expert>, weights: Vec<f64> },
}

impl Body {
    /// Class logits (`C x 1`) for a prepared input.
    pub fn logits(
        &self,
        g: &mut Graph<'_>,
        input: &ModelInput,
        table: &EmbeddingTable,
    ) -> Result<NodeId> {
        match self {
            Body::Plain {
                encoder,
                classifier,
            } => {
                let p = encoder.encode(g, &input.encoder_tokens)?;
                classifier.forward(g, p)
            }
            Body::Hyper { encoder, hn } => {
                let cond = input.conditioning.as_ref().ok_or_else(|| {
                    Error::Config("hypernetwork variant called without conditioning".into())
                })?;
                let (u, _) = hn.condition(g, cond, table);
                let (w, b) = hn.generate(g, u)?;
                let p = encoder.encode(g, &input.encoder_tokens)?;
                apply_generated(g, w, b, p)
            }
            Body::Experts { .. } => Err(Error::Config(
                "mixtures have no single computation graph; use the experts".into(),
            )),
        }
    }

    /// Cross-entropy of the prepared input against `gold`.
    pub fn loss(
        &self,
        g: &mut Graph<'_>,
        input: &ModelInput,
        gold: usize,
        table: &EmbeddingTable,
    ) -> Result<NodeId> {
        let logits = self.logits(g, input, table)?;
        g.softmax_cross_entropy(logits, gold)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub kind: VariantKind,
    pub labels: Vec<String>,
    pub config: ModelConfig,
    pub table: Arc<EmbeddingTable>,
    pub store: ParamStore,
    pub body: Body,
    pub stage1: Option<Stage1>,
}

impl Model {
    /// Freshly initialized single-network variant (not a mixture).
    pub fn new(
        kind: VariantKind,
        labels: Vec<String>,
        table: Arc<EmbeddingTable>,
        config: ModelConfig,
        seed: u64,
    ) -> Result<Model> {
        config.validate()?;
        if kind.is_moe() {
            return Err(Error::Config(format!(
                "{kind} is a mixture; build it from trained experts"
            )));
        }
        if labels.len() < 2 {
            return Err(Error::Config(format!("{} labels < 2", labels.len())));
        }
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let d = table.dim();
        let encoder = Encoder::new(&mut store, "encoder", &table, config.trainable_embeddings, &mut rng);
        let body = if kind.has_hn() {
            let hn_config = HyperNetConfig {
                dim: d,
                n_classes: labels.len(),
                n_layers: config.hn_layers,
            };
            let hn = HyperNetwork::new(&mut store, "hn", hn_config, &mut rng)?;
            Body::Hyper { encoder, hn }
        } else {
            let classifier = Linear::new(&mut store, "classifier", d, labels.len(), &mut rng);
            Body::Plain {
                encoder,
                classifier,
            }
        };
        Ok(Model {
            kind,
            labels,
            config,
            table,
            store,
            body,
            stage1: None,
        })
    }

    /// Combines trained NoDA-shaped experts. `weights` must be a convex
    /// combination of the same length as `experts`.
    pub fn mixture(
        kind: VariantKind,
        labels: Vec<String>,
        table: Arc<EmbeddingTable>,
        config: ModelConfig,
        experts: Vec<Expert>,
        weights: Vec<f64>,
    ) -> Result<Model> {
        if !kind.is_moe() {
            return Err(Error::Config(format!("{kind} is not a mixture")));
        }
        if experts.is_empty() || experts.len() != weights.len() {
            return Err(Error::Config(format!(
                "{} experts with {} weights",
                experts.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config("mixture weights must form a convex combination".into()));
        }
        Ok(Model {
            kind,
            labels,
            config,
            table,
            store: ParamStore::new(),
            body: Body::Experts { experts, weights },
            stage1: None,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    fn truncate(&self, mut tokens: Vec<Token>) -> Vec<Token> {
        tokens.truncate(self.config.max_tokens);
        tokens
    }

    /// Builds the forward-pass input from example tokens and, for signature
    /// variants, an already chosen signature.
    pub fn input_with(
        &self,
        tokens: &[Token],
        signature: Option<&Signature>,
        hint: &DomainHint,
    ) -> Result<ModelInput> {
        let need_sig = || {
            signature.ok_or_else(|| {
                Error::Config(format!("{} needs a signature for every input", self.kind))
            })
        };
        let encoder_tokens = if self.kind.uses_prompt() {
            self.truncate(prompt_tokens(need_sig()?, tokens))
        } else {
            self.truncate(tokens.to_vec())
        };
        let conditioning = match self.kind {
            VariantKind::HyperDN => Some(match hint {
                DomainHint::Known(domain) => ConditioningInput::domain_name(domain),
                DomainHint::Unknown => ConditioningInput::unk(),
            }),
            VariantKind::HyperDRF | VariantKind::HyperPADA => {
                Some(ConditioningInput::signature(need_sig()?))
            }
            _ => None,
        };
        Ok(ModelInput {
            encoder_tokens,
            conditioning,
            signature: signature.filter(|_| self.kind.needs_signature()).cloned(),
        })
    }

    /// Runs the stage-one generator on `tokens`.
    pub fn generate_signature(&self, tokens: &[Token]) -> Result<Signature> {
        let stage1 = self.stage1.as_ref().ok_or_else(|| {
            Error::Config(format!("{} is missing its stage-one artifacts", self.kind))
        })?;
        let tokens = self.truncate(tokens.to_vec());
        stage1
            .generator
            .generate(&tokens, &stage1.drf_sets, &self.table, self.config.drf.k)
    }

    /// Input for inference: signatures come from the generator.
    pub fn prepare(&self, example: &Example, hint: &DomainHint) -> Result<ModelInput> {
        let tokens = tokenize(&example.text);
        let signature = if self.kind.needs_signature() {
            Some(self.generate_signature(&tokens)?)
        } else {
            None
        };
        self.input_with(&tokens, signature.as_ref(), hint)
    }

    /// The HN-generated classifier for a prepared input.
    pub fn classifier_for(&self, input: &ModelInput) -> Result<Option<GeneratedClassifier>> {
        let Body::Hyper { hn, .. } = &self.body else {
            return Ok(None);
        };
        let cond = input
            .conditioning
            .as_ref()
            .ok_or_else(|| Error::Config("hypernetwork variant called without conditioning".into()))?;
        let mut g = Graph::new(&self.store);
        let (u, _) = hn.condition(&mut g, cond, &self.table);
        let (w, b) = hn.generate(&mut g, u)?;
        Ok(Some(GeneratedClassifier {
            weights: g.value(w).clone(),
            bias: g.value(b).data().to_vec(),
            provenance: cond.text.clone(),
        }))
    }

    pub fn probs_for(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let logits = self.body.logits(&mut g, input, &self.table)?;
        let logits = g.value(logits).data();
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(softmax(logits))
    }

    /// Per-expert probability vectors (mixtures only).
    pub fn expert_probs(&self, example: &Example) -> Result<Vec<Vec<f64>>> {
        let Body::Experts { experts, .. } = &self.body else {
            return Err(Error::Config(format!("{} has no experts", self.kind)));
        };
        experts
            .iter()
            .map(|e| e.model.predict(example, &DomainHint::Unknown).map(|p| p.probs))
            .collect()
    }

    pub fn predict(&self, example: &Example, hint: &DomainHint) -> Result<Prediction> {
        if let Body::Experts { weights, .. } = &self.body {
            let per_expert = self.expert_probs(example)?;
            let probs = mix(&per_expert, weights);
            return Ok(Prediction {
                label: argmax(&probs),
                probs,
                signature: None,
                classifier: None,
            });
        }
        let input = self.prepare(example, hint)?;
        let probs = self.probs_for(&input)?;
        let classifier = self.classifier_for(&input)?;
        Ok(Prediction {
            label: argmax(&probs),
            probs,
            signature: input.signature,
            classifier,
        })
    }
}

/// Weighted mean of probability vectors.
pub fn mix(probs: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let c = probs.first().map_or(0, Vec::len);
    let mut out = vec![0.0; c];
    for (p, w) in probs.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(p) {
            *o += w * x;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use crate::drf::DrfEntry;

    fn table() -> Arc<EmbeddingTable> {
        let mut t = EmbeddingTable::new(3);
        for (w, v) in [
            ("good", [1.0, 0.0, 0.2]),
            ("bad", [-1.0, 0.1, 0.0]),
            ("film", [0.0, 1.0, 0.3]),
            ("hotel", [0.2, -1.0, 0.5]),
            ("movies", [0.1, 0.9, 0.2]),
            ("rooms", [0.2, -0.8, 0.4]),
        ] {
            t.insert(w, &v).unwrap();
        }
        Arc::new(t)
    }

    fn labels() -> Vec<String> {
        vec!["negative".into(), "positive".into()]
    }

    fn example(text: &str, domain: &str) -> Example {
        Example {
            id: "x".into(),
            text: text.into(),
            domain: domain.into(),
            label: "positive".into(),
            language: None,
        }
    }

    fn stage1() -> Stage1 {
        let set = |d: &str, w: &str| DrfSet {
            domain: d.into(),
            entries: vec![DrfEntry {
                word: w.into(),
                mi: 0.3,
                count_in_domain: 2,
                count_elsewhere: 0,
            }],
        };
        Stage1 {
            drf_sets: vec![set("movies", "film"), set("hotels", "hotel")],
            generator: SignatureGenerator::Ranker,
        }
    }

    fn config() -> ModelConfig {
        ModelConfig {
            drf: DrfConfig {
                k: 1,
                ..DrfConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for k in VariantKind::ALL {
            assert_eq!(k.name().parse::<VariantKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("t5".parse::<VariantKind>().is_err());
    }

    #[test]
    fn zero_hypernetwork_gives_uniform_probabilities() {
        let mut m = Model::new(VariantKind::HyperDN, labels(), table(), config(), 1).unwrap();
        let ids: Vec<_> = m.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            m.store.value_mut(id).fill(0.0);
        }
        let p = m.predict(&example("good film", "movies"), &DomainHint::Unknown).unwrap();
        assert_eq!(p.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn probabilities_sum_to_one() {
        for kind in [
            VariantKind::NoDA,
            VariantKind::HyperDN,
            VariantKind::HyperDRF,
            VariantKind::HyperPADA,
            VariantKind::PADALite,
        ] {
            let mut m = Model::new(kind, labels(), table(), config(), 3).unwrap();
            m.stage1 = Some(stage1());
            for text in ["good film", "bad hotel rooms", "unknown words only"] {
                let p = m.predict(&example(text, "movies"), &DomainHint::Unknown).unwrap();
                assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{kind}");
                assert_eq!(p.signature.is_some(), kind.needs_signature());
                assert_eq!(p.classifier.is_some(), kind.has_hn());
            }
        }
    }

    #[test]
    fn missing_stage1_is_an_error() {
        let m = Model::new(VariantKind::HyperDRF, labels(), table(), config(), 3).unwrap();
        assert!(m.predict(&example("good film", "movies"), &DomainHint::Unknown).is_err());
    }

    #[test]
    fn mixture_averages_expert_probabilities() {
        let mut experts = Vec::new();
        for (domain, bias) in [("a", [9.0e9, 0.0]), ("b", [0.0, 9.0e9])] {
            let mut m = Model::new(VariantKind::NoDA, labels(), table(), config(), 4).unwrap();
            let Body::Plain { classifier, .. } = &m.body else { unreachable!() };
            let (w, b) = (classifier.weight, classifier.bias);
            m.store.value_mut(w).fill(0.0);
            *m.store.value_mut(b) = Matrix::column(bias.to_vec());
            experts.push(Expert {
                domain: Some(domain.into()),
                model: m,
            });
        }
        let moe = Model::mixture(
            VariantKind::MoEIndAvg,
            labels(),
            table(),
            config(),
            experts,
            vec![0.5, 0.5],
        )
        .unwrap();
        let p = moe.predict(&example("good", "c"), &DomainHint::Unknown).unwrap();
        assert_eq!(p.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn hyper_dn_at_test_ignores_true_domain() {
        let m = Model::new(VariantKind::HyperDN, labels(), table(), config(), 5).unwrap();
        let a = m.predict(&example("good film", "movies"), &DomainHint::Unknown).unwrap();
        let b = m.predict(&example("good film", "hotels"), &DomainHint::Unknown).unwrap();
        assert_eq!(a, b);
        let known = m
            .predict(&example("good film", "movies"), &DomainHint::Known("movies".into()))
            .unwrap();
        assert_ne!(known.classifier, a.classifier);
    }

    #[test]
    fn equal_signatures_give_identical_classifiers() {
        let mut m = Model::new(VariantKind::HyperDRF, labels(), table(), config(), 6).unwrap();
        m.stage1 = Some(stage1());
        let a = m.predict(&example("good movies", "movies"), &DomainHint::Unknown).unwrap();
        let b = m.predict(&example("bad film", "books"), &DomainHint::Unknown).unwrap();
        assert_eq!(a.signature, b.signature);
        assert_eq!(a.classifier, b.classifier);
    }

    #[test]
    fn prompt_variants_share_encoder_input() {
        let mut hp = Model::new(VariantKind::HyperPADA, labels(), table(), config(), 7).unwrap();
        let mut pl = Model::new(VariantKind::PADALite, labels(), table(), config(), 8).unwrap();
        hp.stage1 = Some(stage1());
        pl.stage1 = Some(stage1());
        let ex = example("good film", "movies");
        let a = hp.prepare(&ex, &DomainHint::Unknown).unwrap();
        let b = pl.prepare(&ex, &DomainHint::Unknown).unwrap();
        assert_eq!(a.encoder_tokens, b.encoder_tokens);
        let words: Vec<&str> = a.encoder_tokens.iter().map(Token::as_str).collect();
        assert_eq!(words, vec!["movies", "film", "<sep>", "good", "film"]);
        assert!(b.conditioning.is_none());
    }

    #[test]
    fn encoder_input_is_truncated() {
        let cfg = ModelConfig {
            max_tokens: 3,
            ..config()
        };
        let m = Model::new(VariantKind::NoDA, labels(), table(), cfg, 9).unwrap();
        let input = m
            .prepare(&example("a b c d e", "movies"), &DomainHint::Unknown)
            .unwrap();
        assert_eq!(input.encoder_tokens.len(), 3);
    }

    #[test]
    fn hyper_pada_prediction_matches_hand_path() {
        let mut m = Model::new(VariantKind::HyperPADA, labels(), table(), config(), 10).unwrap();
        m.stage1 = Some(stage1());
        let ex = example("bad rooms", "hotels");
        let pred = m.predict(&ex, &DomainHint::Unknown).unwrap();
        let sig = pred.signature.clone().unwrap();
        let Body::Hyper { encoder, hn } = &m.body else { unreachable!() };
        let (u, _) = hn.embed_conditioning(&m.store, &ConditioningInput::signature(&sig), &m.table);
        let cls = hn.generate_classifier(&m.store, &u, sig.render()).unwrap();
        let p = encoder
            .encode_values(&m.store, &prompt_tokens(&sig, &tokenize(&ex.text)))
            .unwrap();
        let logits = crate::hypernet::apply_classifier(&cls, &p).unwrap();
        let expect = softmax(&logits);
        for (a, b) in pred.probs.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
