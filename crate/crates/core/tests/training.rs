use std::path::PathBuf;

use ufin::data::synth::{generate, Labeling, SynthConfig};
use ufin::data::Split;
use ufin::model::{EncoderSpec, Mode, ModelConfig};
use ufin::numeric::checkpoint;
use ufin::pipeline::{self, rows, StudentSpec};
use ufin::prompting::{PhraseBook, PromptTemplate};
use ufin::training::{pretrain_teachers, TeacherConfig, TrainConfig};

fn params_bytes(store: &ufin::numeric::ParamStore) -> Vec<u8> {
    let mut b = Vec::new();
    checkpoint::write_params(&mut b, store).unwrap();
    b
}

fn separable() -> SynthConfig {
    SynthConfig {
        n_domains: 1,
        n_users: 200,
        n_items: 100,
        n_interactions: 10_000,
        noise: 0.0,
        labeling: Labeling::Threshold,
        ..SynthConfig::default()
    }
}

fn teacher_config() -> TeacherConfig {
    TeacherConfig {
        dim: 4,
        ..TeacherConfig::default()
    }
}

fn teacher_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        weight_decay: 1e-4,
        batch_size: 64,
        epochs,
        distill: false,
        ..TrainConfig::default()
    }
}

#[test]
fn teacher_separates_noise_free_domain() {
    let data = generate(&separable(), 4).unwrap();
    let teachers = pretrain_teachers(
        &data.schema,
        &data.datasets,
        &teacher_config(),
        &teacher_train(30),
    )
    .unwrap();
    let (_, history) = &teachers[0];
    let best = history.best_auc().unwrap();
    assert!(best >= 0.95, "validation AUC {best}");
}

#[test]
fn teachers_are_deterministic_and_stay_frozen() {
    let data = generate(
        &SynthConfig {
            n_users: 80,
            n_items: 30,
            n_interactions: 1500,
            ..SynthConfig::default()
        },
        9,
    )
    .unwrap();
    let train = |seed| {
        pretrain_teachers(
            &data.schema,
            &data.datasets,
            &teacher_config(),
            &TrainConfig {
                seed,
                ..teacher_train(3)
            },
        )
        .unwrap()
    };
    let a = train(1);
    let b = train(1);
    for ((ta, _), (tb, _)) in a.iter().zip(&b) {
        assert_eq!(params_bytes(&ta.store), params_bytes(&tb.store));
    }

    let teachers: Vec<_> = a.into_iter().map(|(t, _)| t).collect();
    let before: Vec<_> = teachers.iter().map(|t| params_bytes(&t.store)).collect();
    let book = PhraseBook::synthetic(&data.item_nouns);
    let spec = StudentSpec {
        model: ModelConfig {
            d_v: 16,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 2,
            batch_size: 128,
            ..TrainConfig::default()
        },
        prompt: PromptTemplate::default(),
        encoder: EncoderSpec::default(),
        init_seed: 3,
    };
    pipeline::train_student(&data.schema, &data.datasets, &book, &teachers, &spec, None).unwrap();
    let after: Vec<_> = teachers.iter().map(|t| params_bytes(&t.store)).collect();
    assert_eq!(before, after);
}

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/loss_curve_seed42.json")
}

/// Student training loss on the default synthetic data, seed 42, first three
/// epochs. Set `UFIN_BLESS=1` to rewrite the fixture.
#[test]
fn loss_decreases_on_default_data() {
    let data = generate(&SynthConfig::default(), 42).unwrap();
    let book = PhraseBook::synthetic(&data.item_nouns);
    let spec = StudentSpec {
        model: ModelConfig {
            mode: Mode::Text,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 3,
            patience: 3,
            distill: false,
            seed: pipeline::stage_seed(42, "train"),
            ..TrainConfig::default()
        },
        prompt: PromptTemplate::default(),
        encoder: EncoderSpec::default(),
        init_seed: pipeline::stage_seed(42, "init"),
    };
    let (model, history) =
        pipeline::train_student(&data.schema, &data.datasets, &book, &[], &spec, None).unwrap();
    let curve: Vec<f64> = history.epochs.iter().map(|e| e.train_loss).collect();
    assert_eq!(curve.len(), 3);
    assert!(
        curve.windows(2).all(|w| w[1] < w[0]),
        "loss curve {curve:?}"
    );
    assert!(model.meta.domains == vec![0, 1, 2]);
    assert!(!rows(&data.datasets, Split::Test).is_empty());

    let path = fixture_path();
    if std::env::var_os("UFIN_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&curve).unwrap()).unwrap();
    }
    let recorded: Vec<f64> =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for (got, want) in curve.iter().zip(&recorded) {
        assert!(
            (got - want).abs() <= 1e-6 * want.abs(),
            "curve {curve:?} vs fixture {recorded:?}"
        );
    }
}
