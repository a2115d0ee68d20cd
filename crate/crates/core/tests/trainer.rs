use std::sync::Arc;

use hypada_core::corpus::{make_split, SplitPools};
use hypada_core::models::{DomainHint, ModelConfig};
use hypada_core::synthetic::{generate, SyntheticConfig, LABELS};
use hypada_core::text::tokenize;
use hypada_core::trainer::{train, train_moe, train_single, TrainConfig};
use hypada_core::{DomainCorpus, EmbeddingTable, Example, VariantKind};

fn labels() -> Vec<String> {
    LABELS.iter().map(|s| s.to_string()).collect()
}

fn benchmark(n_domains: usize, seed: u64) -> (Vec<DomainCorpus>, Arc<EmbeddingTable>) {
    let cfg = SyntheticConfig {
        dim: 8,
        n_domains,
        train_per_domain: 80,
        dev_per_domain: 20,
        test_per_domain: 20,
        ..SyntheticConfig::default()
    };
    let (c, t) = generate(&cfg, seed).unwrap();
    (c, Arc::new(t))
}

fn pools(corpora: &[DomainCorpus], target: &str) -> SplitPools {
    make_split(corpora, target, 1.0, 0).unwrap()
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        epochs_disc: 2,
        epochs_gen: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn alpha_one_conditions_every_step_on_unk() {
    let (corpora, table) = benchmark(3, 1);
    let p = pools(&corpora, "dom2");
    let cfg = TrainConfig {
        alpha_unk: 1.0,
        ..quick(3)
    };
    let (model, log) = train(VariantKind::HyperDN, &p, &labels(), table, &ModelConfig::default(), &cfg).unwrap();
    assert_eq!(log.name_conditionings, 0);
    assert_eq!(log.unk_conditionings, cfg.epochs_disc * p.train.len());
    let first = model.predict(&p.test[0], &DomainHint::Unknown).unwrap().classifier.unwrap();
    for e in &p.test {
        let c = model.predict(e, &DomainHint::Unknown).unwrap().classifier.unwrap();
        assert_eq!(c.weights.data(), first.weights.data());
        assert_eq!(c.bias, first.bias);
    }
}

#[test]
fn alpha_zero_always_uses_the_domain_name() {
    let (corpora, table) = benchmark(3, 2);
    let p = pools(&corpora, "dom0");
    let cfg = TrainConfig {
        alpha_unk: 0.0,
        ..quick(4)
    };
    let (_, log) = train(VariantKind::HyperDN, &p, &labels(), table, &ModelConfig::default(), &cfg).unwrap();
    assert_eq!(log.unk_conditionings, 0);
    assert_eq!(log.name_conditionings, cfg.epochs_disc * p.train.len());
}

#[test]
fn masking_never_touches_encoder_input() {
    let (corpora, table) = benchmark(2, 3);
    let model = hypada_core::Model::new(
        VariantKind::HyperDN,
        labels(),
        table,
        ModelConfig::default(),
        0,
    )
    .unwrap();
    for e in &corpora[0].train[..10] {
        let tokens = tokenize(&e.text);
        let named = model.input_with(&tokens, None, &DomainHint::Known(e.domain.clone())).unwrap();
        let masked = model.input_with(&tokens, None, &DomainHint::Unknown).unwrap();
        assert_eq!(named.encoder_tokens, masked.encoder_tokens);
        assert_ne!(named.conditioning, masked.conditioning);
    }
}

fn separable(domain: &str, n: usize) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            Example {
                id: format!("{domain}-{i}"),
                text: if positive { "good great" } else { "bad awful" }.to_string(),
                domain: domain.to_string(),
                label: if positive { "positive" } else { "negative" }.to_string(),
                language: None,
            }
        })
        .collect()
}

#[test]
fn separable_two_domain_fixture_reaches_perfect_dev_accuracy() {
    let mut table = EmbeddingTable::new(4);
    table.insert("good", &[1.0, 0.0, 0.0, 0.0]).unwrap();
    table.insert("great", &[0.9, 0.1, 0.0, 0.0]).unwrap();
    table.insert("bad", &[-1.0, 0.0, 0.0, 0.0]).unwrap();
    table.insert("awful", &[-0.9, -0.1, 0.0, 0.0]).unwrap();
    table.insert("a", &[0.0, 0.0, 1.0, 0.0]).unwrap();
    table.insert("b", &[0.0, 0.0, 0.0, 1.0]).unwrap();
    let table = Arc::new(table);
    let mut train_pool = separable("a", 40);
    train_pool.extend(separable("b", 40));
    let mut dev = separable("a", 10);
    dev.extend(separable("b", 10));
    for e in &mut dev {
        e.id = format!("dev-{}", e.id);
    }
    let cfg = TrainConfig {
        lr: 1e-2,
        epochs_disc: 5,
        ..TrainConfig::default()
    };
    for kind in [VariantKind::NoDA, VariantKind::HyperDN] {
        let (_, log) =
            train_single(kind, &train_pool, &dev, &labels(), table.clone(), &ModelConfig::default(), &cfg).unwrap();
        assert_eq!(log.epoch_loss.len(), 5);
        assert_eq!(log.epoch_dev_metric[log.best_epoch - 1], 1.0, "{kind}: {log:?}");
    }
}

#[test]
fn training_is_bit_reproducible() {
    let (corpora, table) = benchmark(3, 5);
    let p = pools(&corpora, "dom1");
    for kind in [VariantKind::HyperPADA, VariantKind::HyperDN, VariantKind::MoEIndAttn] {
        let run = || train(kind, &p, &labels(), table.clone(), &ModelConfig::default(), &quick(9)).unwrap();
        let (m1, l1) = run();
        let (m2, l2) = run();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&l1.epoch_loss), bits(&l2.epoch_loss), "{kind}");
        for e in &p.test {
            let a = m1.predict(e, &DomainHint::Unknown).unwrap().probs;
            let b = m2.predict(e, &DomainHint::Unknown).unwrap().probs;
            assert_eq!(bits(&a), bits(&b), "{kind}");
        }
    }
}

#[test]
fn training_never_reads_the_target_domain() {
    let (corpora, table) = benchmark(3, 6);
    let p = pools(&corpora, "dom0");
    for kind in VariantKind::ALL {
        let (_, log) = train(kind, &p, &labels(), table.clone(), &ModelConfig::default(), &quick(1)).unwrap();
        assert!(!log.domains_seen.contains("dom0"), "{kind}: {:?}", log.domains_seen);
        assert!(log.train_ids.iter().chain(log.parts.iter().flat_map(|l| &l.train_ids)).all(|id| !id.starts_with("dom0")));
    }
}

#[test]
fn moe_experts_see_disjoint_domains() {
    let (corpora, table) = benchmark(3, 7);
    let p = pools(&corpora, "dom2");
    let (model, log) =
        train_moe(VariantKind::MoEIndAvg, &p, &labels(), table, &ModelConfig::default(), &quick(2)).unwrap();
    assert_eq!(log.parts.len(), 2);
    let (a, b) = (&log.parts[0], &log.parts[1]);
    assert!(a.train_ids.iter().all(|id| !b.train_ids.contains(id)));
    assert!(a.train_ids.iter().all(|id| id.starts_with("dom0")));
    assert!(b.train_ids.iter().all(|id| id.starts_with("dom1")));
    assert_eq!(hypada_core::trainer::expert_domains(&model), vec![Some("dom0".into()), Some("dom1".into())]);
}

#[test]
fn moe_avg_trains_a_general_expert() {
    let (corpora, table) = benchmark(3, 8);
    let p = pools(&corpora, "dom0");
    let (model, log) =
        train_moe(VariantKind::MoEAvg, &p, &labels(), table, &ModelConfig::default(), &quick(3)).unwrap();
    assert_eq!(log.parts.len(), 3);
    assert_eq!(hypada_core::trainer::expert_domains(&model).len(), 3);
    assert_eq!(log.parts[2].train_ids.len(), p.train.len());
}

#[test]
fn experts_on_contradictory_domains_disagree() {
    let mut table = EmbeddingTable::new(4);
    table.insert("good", &[1.0, 0.0, 0.0, 0.0]).unwrap();
    table.insert("great", &[0.9, 0.1, 0.0, 0.0]).unwrap();
    table.insert("bad", &[-1.0, 0.0, 0.0, 0.0]).unwrap();
    table.insert("awful", &[-0.9, -0.1, 0.0, 0.0]).unwrap();
    let table = Arc::new(table);
    let mut a = DomainCorpus::new("a");
    a.train = separable("a", 40);
    a.dev = separable("a", 10).into_iter().map(|mut e| { e.id = format!("dev-{}", e.id); e }).collect();
    let mut b = a.clone();
    b.domain = "b".into();
    for e in b.train.iter_mut().chain(b.dev.iter_mut()) {
        e.domain = "b".into();
        e.id = e.id.replacen("a-", "b-", 1);
        e.label = if e.label == "positive" { "negative" } else { "positive" }.into();
    }
    let mut target = DomainCorpus::new("t");
    target.test = separable("t", 4);
    let corpora = vec![a, b, target];
    let p = make_split(&corpora, "t", 1.0, 0).unwrap();
    let cfg = TrainConfig {
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let (model, _) = train_moe(VariantKind::MoEIndAvg, &p, &labels(), table, &ModelConfig::default(), &cfg).unwrap();
    let probe = &separable("probe", 1)[0];
    let per_expert = model.expert_probs(probe).unwrap();
    let argmax = |p: &[f64]| if p[0] > p[1] { 0 } else { 1 };
    assert_ne!(argmax(&per_expert[0]), argmax(&per_expert[1]), "{per_expert:?}");
}
