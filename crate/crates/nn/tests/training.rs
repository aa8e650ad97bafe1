//! Training behaviour: overfit oracles, determinism and failure modes.

use radgraph_core::chestkg::{ChestGraph, PropagationKind};
use radgraph_nn::decoder::{train, DecoderConfig, DecoderParams, TrainConfig};
use radgraph_nn::graphnn::{pos_weights, FitConfig, GraphEmbedding, GraphEmbeddingConfig, GraphEmbeddingParams};
use radgraph_nn::synth::{
    overfit_classifier, overfit_decoder, separable_dataset, toy_decoder_examples, toy_reports, toy_vocabulary,
    ClassifierOverfitConfig, DecoderOverfitConfig,
};
use radgraph_nn::{Module, NnError, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_model(seed: u64) -> GraphEmbedding {
    let mut config = GraphEmbeddingConfig::new(24);
    config.hidden = 16;
    GraphEmbedding::new(config, &ChestGraph::default_graph(), PropagationKind::Renormalized, seed).unwrap()
}

#[test]
fn classifier_overfits_separable_maps() {
    let run = overfit_classifier(&ClassifierOverfitConfig::default()).unwrap();
    assert!(run.steps() <= 2000);
    assert!(run.final_main_loss() < 0.05, "{:?}", run.checks);
    // the trained model separates every label of the training set
    let data = separable_dataset(8, 20, 32, 4, 0);
    for s in &data {
        let p = run.model.predict(&s.views).unwrap();
        for (prob, y) in p.iter().zip(&s.labels) {
            assert_eq!(*prob > 0.5, *y == 1.0);
        }
    }
}

#[test]
fn zero_learning_rate_keeps_the_loss_constant() {
    let data = separable_dataset(3, 20, 24, 3, 1);
    let mut model = small_model(1);
    let before = model.clone();
    let report = model
        .fit(
            &data,
            &FitConfig {
                steps: 5,
                lr: 0.0,
                ..FitConfig::default()
            },
        )
        .unwrap();
    assert!(report.losses.iter().all(|&l| l == report.losses[0]));
    assert_eq!(model, before);
}

#[test]
fn zero_aux_weight_leaves_aux_head_without_gradient() {
    let data = separable_dataset(2, 20, 24, 3, 2);
    let model = small_model(2);
    let weights = pos_weights(&data.iter().map(|s| s.labels.clone()).collect::<Vec<_>>());
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let loss = model.loss(&tape, &bound, &data[0], &weights, 0.0).unwrap();
    let grads = GraphEmbeddingParams::grads(&bound, &loss.backward());
    let aux = &grads.branches[0].aux;
    assert!(aux.weight.data().iter().all(|&g| g == 0.0));
    assert!(aux.bias.data().iter().all(|&g| g == 0.0));

    let with_aux = model.loss(&tape, &bound, &data[0], &weights, 1.0).unwrap();
    let grads = GraphEmbeddingParams::grads(&bound, &with_aux.backward());
    assert!(grads.branches[0].aux.weight.data().iter().any(|&g| g != 0.0));
}

#[test]
fn divergence_reports_the_step() {
    let data = separable_dataset(2, 20, 24, 3, 3);
    let mut model = small_model(3);
    let err = model
        .fit(
            &data,
            &FitConfig {
                steps: 10,
                lr: 1e300,
                momentum: 0.0,
                aux_weight: 1.0,
            },
        )
        .unwrap_err();
    match err {
        NnError::Diverged { step } => assert!((1..10).contains(&step), "step {step}"),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn fit_is_bit_reproducible() {
    let data = separable_dataset(4, 20, 24, 3, 4);
    let run = || {
        let mut m = small_model(4);
        let r = m
            .fit(
                &data,
                &FitConfig {
                    steps: 15,
                    ..FitConfig::default()
                },
            )
            .unwrap();
        (r.losses, m)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_eq!(ma, mb);
}

#[test]
fn empty_dataset_is_an_error() {
    let mut model = small_model(5);
    assert!(model.fit(&[], &FitConfig::default()).is_err());
}

#[test]
fn decoder_overfits_the_toy_corpus() {
    let run = overfit_decoder(&DecoderOverfitConfig::default()).unwrap();
    assert!(run.all_exact(), "only {} of 4 after {} steps", run.exact, run.losses.len());
    let decoded = run.decoded().unwrap();
    assert_eq!(decoded, toy_reports());
}

#[test]
fn teacher_forced_loss_strictly_decreases() {
    let vocab = toy_vocabulary();
    let config = DecoderConfig::new(64, 32, vocab.len());
    let examples = toy_decoder_examples(&vocab, 9);
    let mut params = DecoderParams::init(&config, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let losses = train(
        &mut params,
        &config,
        &examples,
        &TrainConfig {
            steps: 51,
            lr: 0.05,
            momentum: 0.0,
        },
    )
    .unwrap();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn decoder_divergence_and_bad_tokens() {
    let vocab = toy_vocabulary();
    let config = DecoderConfig::new(64, 32, vocab.len());
    let mut examples = toy_decoder_examples(&vocab, 1);
    let mut params = DecoderParams::init(&config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let diverged = train(
        &mut params.clone(),
        &config,
        &examples,
        &TrainConfig {
            steps: 10,
            lr: 1e300,
            momentum: 0.0,
        },
    );
    assert!(matches!(diverged, Err(NnError::Diverged { .. })));

    examples[0].report[0][0] = vocab.len();
    let bad = train(
        &mut params,
        &config,
        &examples,
        &TrainConfig {
            steps: 1,
            lr: 0.1,
            momentum: 0.0,
        },
    );
    assert!(matches!(bad, Err(NnError::Vocabulary(_))));
}
