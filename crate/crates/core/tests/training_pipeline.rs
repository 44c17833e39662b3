use spanib_core::checkpoint;
use spanib_core::decode_eval::predict;
use spanib_core::objectives::CriticKind;
use spanib_core::synthetic::{generate, SyntheticConfig};
use spanib_core::training::{fit, log_csv, LOG_HEADER};
use spanib_core::{ModelConfig, TrainConfig, TrainMode};

fn tiny() -> (spanib_core::synthetic::SyntheticCorpus, ModelConfig) {
    let corpus = generate(&SyntheticConfig {
        seed: 4,
        train_sentences: 40,
        dev_sentences: 10,
        test_sentences: 10,
        train_entities_per_type: 4,
        ..SyntheticConfig::default()
    });
    let mut m = ModelConfig::default();
    m.encoder.embed_dim = 8;
    m.encoder.hidden_dim = 6;
    m.encoder.length_embed_dim = 4;
    m.ib_hidden_dim = 8;
    m.latent_dim = 6;
    m.critic = CriticKind::Mlp;
    m.critic_hidden_dim = 5;
    (corpus, m)
}

fn cfg(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        epochs: 2,
        batch_size: 8,
        learning_rate: 0.01,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_initial_model() {
    let (c, m) = tiny();
    let out = fit(&c.train, &c.dev, &m, &TrainConfig { epochs: 0, ..cfg(TrainMode::Miner) }).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(log_csv(&out.log).trim_end(), LOG_HEADER);
}

#[test]
fn base_only_logs_zero_auxiliary_terms() {
    let (c, m) = tiny();
    let out = fit(&c.train, &c.dev, &m, &cfg(TrainMode::BaseOnly)).unwrap();
    assert!(!out.log.is_empty());
    assert!(out.log.iter().all(|r| r.gi == 0.0 && r.si == 0.0 && r.total == r.base));
}

#[test]
fn miner_training_is_deterministic_and_checkpoints_reload() {
    let (c, m) = tiny();
    let a = fit(&c.train, &c.dev, &m, &cfg(TrainMode::Miner)).unwrap();
    let b = fit(&c.train, &c.dev, &m, &cfg(TrainMode::Miner)).unwrap();
    assert_eq!(log_csv(&a.log), log_csv(&b.log));
    assert!(a.log.iter().any(|r| r.gi > 0.0));
    assert_eq!(a.checkpoints.len(), 2);
    assert!(a.checkpoints[0].dev_f1 >= a.checkpoints[1].dev_f1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &a.checkpoints[0].model, serde_json::json!({})).unwrap();
    let loaded = checkpoint::load_expecting(&path, &m).unwrap();
    assert_eq!(predict(&loaded, &c.test).unwrap(), predict(&a.checkpoints[0].model, &c.test).unwrap());
    let mut other = m.clone();
    other.latent_dim += 1;
    assert!(checkpoint::load_expecting(&path, &other).is_err());
}
