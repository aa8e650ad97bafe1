//! Seeded synthetic data for tests and desk demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radgraph_core::chestkg::{ChestGraph, PropagationKind};
use radgraph_core::reportnlp::tokenize;

use crate::decoder::{generate, train_step, DecoderConfig, DecoderExample, DecoderParams, Vocabulary};
use crate::graphnn::{pos_weights, GraphEmbedding, GraphEmbeddingConfig, Sample};
use crate::params::Sgd;
use crate::tensor::Tensor;
use crate::NnError;

/// `[channels, height, width]` map with standard-normal entries.
pub fn random_feature_map(channels: usize, height: usize, width: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(&[channels, height, width], 1.0, &mut rng)
}

/// Feature maps whose labels are linearly separable.
///
/// Class `c` owns channel `c` and one spatial cell; a positive sample
/// carries a strong activation there on top of low-level noise. Every
/// class is positive in at least one sample and negative in another when
/// `samples >= 2`. Needs `channels >= categories`.
pub fn separable_dataset(
    samples: usize,
    categories: usize,
    channels: usize,
    side: usize,
    seed: u64,
) -> Vec<Sample> {
    assert!(channels >= categories, "one channel per class is needed");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = side * side;
    let location: Vec<usize> = (0..categories).map(|_| rng.random_range(0..cells)).collect();
    let mut labels: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..categories).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect())
        .collect();
    if samples >= 2 {
        for c in 0..categories {
            let a = c % samples;
            let b = (c + 1) % samples;
            labels[a][c] = 1.0;
            labels[b][c] = 0.0;
        }
    }
    labels
        .into_iter()
        .map(|y| {
            let mut map = Tensor::randn(&[channels, side, side], 0.1, &mut rng);
            for (c, &on) in y.iter().enumerate() {
                if on > 0.0 {
                    map.data_mut()[c * cells + location[c]] += 3.0;
                }
            }
            Sample {
                views: vec![map],
                labels: y,
            }
        })
        .collect()
}

const TOY_REPORTS: [&str; 4] = [
    "The heart is normal in size. The lungs are clear.",
    "There is a small left pleural effusion. No pneumothorax.",
    "Heart size is enlarged. Mild pulmonary edema.",
    "No acute cardiopulmonary abnormality.",
];

/// Four short reports, tokenized, one token list per sentence (sentence
/// terminators dropped).
pub fn toy_reports() -> Vec<Vec<Vec<String>>> {
    TOY_REPORTS
        .iter()
        .map(|r| {
            tokenize(r)
                .into_iter()
                .map(|s| s.into_iter().filter(|t| t != ".").collect())
                .collect()
        })
        .collect()
}

/// Node features `[nodes, dim]` and a global feature `[1, global_dim]`.
pub fn random_decoder_inputs(nodes: usize, dim: usize, global_dim: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        Tensor::randn(&[nodes, dim], 1.0, &mut rng),
        Tensor::randn(&[1, global_dim], 1.0, &mut rng),
    )
}

/// Settings of [`overfit_classifier`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOverfitConfig {
    pub samples: usize,
    pub channels: usize,
    pub side: usize,
    pub hidden: usize,
    pub max_steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub aux_weight: f64,
    /// Stop once the mean main loss falls below this.
    pub target: f64,
    /// The main loss is evaluated every this many steps.
    pub check_every: usize,
    pub seed: u64,
}

impl Default for ClassifierOverfitConfig {
    fn default() -> Self {
        Self {
            samples: 8,
            channels: 32,
            side: 4,
            hidden: 64,
            max_steps: 2000,
            lr: 0.05,
            momentum: 0.0,
            aux_weight: 1.0,
            target: 0.05,
            check_every: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierOverfit {
    /// Total training loss before each step.
    pub losses: Vec<f64>,
    /// `(step, mean main loss)` at every check.
    pub checks: Vec<(usize, f64)>,
    pub model: GraphEmbedding,
}

impl ClassifierOverfit {
    pub fn final_main_loss(&self) -> f64 {
        self.checks.last().map_or(f64::INFINITY, |c| c.1)
    }

    pub fn steps(&self) -> usize {
        self.losses.len()
    }
}

/// Trains a chest-graph classifier on [`separable_dataset`] until the main
/// loss drops below the target or the step budget runs out.
pub fn overfit_classifier(c: &ClassifierOverfitConfig) -> Result<ClassifierOverfit, NnError> {
    let graph = ChestGraph::default_graph();
    let data = separable_dataset(c.samples, graph.category_count(), c.channels, c.side, c.seed);
    let mut config = GraphEmbeddingConfig::new(c.channels);
    config.hidden = c.hidden;
    let mut model = GraphEmbedding::new(config, &graph, PropagationKind::Renormalized, c.seed)?;
    let labels: Vec<Vec<f64>> = data.iter().map(|s| s.labels.clone()).collect();
    let weights = pos_weights(&labels);
    let mut opt = Sgd::new(c.lr, c.momentum);
    let mut out = ClassifierOverfit {
        losses: Vec::new(),
        checks: Vec::new(),
        model: model.clone(),
    };
    let every = c.check_every.max(1);
    for step in 0..c.max_steps {
        let loss = model.fit_step(&data, &weights, c.aux_weight, &mut opt)?;
        if !loss.is_finite() {
            return Err(NnError::Diverged { step });
        }
        out.losses.push(loss);
        if (step + 1) % every == 0 || step + 1 == c.max_steps {
            let main = model.main_loss(&data, &weights)?;
            out.checks.push((step + 1, main));
            if main < c.target {
                break;
            }
        }
    }
    out.model = model;
    Ok(out)
}

/// Settings of [`overfit_decoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOverfitConfig {
    pub max_steps: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Greedy decoding is compared with the corpus every this many steps.
    pub check_every: usize,
    pub seed: u64,
}

impl Default for DecoderOverfitConfig {
    fn default() -> Self {
        Self {
            max_steps: 1500,
            lr: 0.1,
            momentum: 0.9,
            check_every: 25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderOverfit {
    pub losses: Vec<f64>,
    pub vocabulary: Vocabulary,
    pub config: DecoderConfig,
    pub params: DecoderParams,
    pub examples: Vec<DecoderExample>,
    /// Reports reproduced exactly at the last check.
    pub exact: usize,
}

impl DecoderOverfit {
    pub fn all_exact(&self) -> bool {
        self.exact == self.examples.len()
    }

    /// Greedy decodes, one token list per sentence.
    pub fn decoded(&self) -> Result<Vec<Vec<Vec<String>>>, NnError> {
        self.examples
            .iter()
            .map(|e| {
                let g = generate(&self.params, &self.config, &e.nodes, &e.global)?;
                Ok(g.sentences
                    .iter()
                    .map(|s| self.vocabulary.decode(s).into_iter().map(str::to_string).collect())
                    .collect())
            })
            .collect()
    }
}

/// Decoder inputs for the toy corpus: random node features `[21, 64]` and
/// a random global feature `[1, 32]` per report.
pub fn toy_decoder_examples(vocabulary: &Vocabulary, seed: u64) -> Vec<DecoderExample> {
    toy_reports()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (nodes, global) = random_decoder_inputs(21, 64, 32, seed.wrapping_mul(31).wrapping_add(i as u64));
            DecoderExample {
                nodes,
                global,
                report: r.iter().map(|s| vocabulary.encode(s)).collect(),
            }
        })
        .collect()
}

/// Vocabulary of every token of the toy corpus.
pub fn toy_vocabulary() -> Vocabulary {
    let sentences: Vec<Vec<String>> = toy_reports().into_iter().flatten().collect();
    Vocabulary::build(&sentences, 1)
}

/// Trains a default-width decoder on the toy corpus until greedy decoding
/// reproduces every report or the step budget runs out.
pub fn overfit_decoder(c: &DecoderOverfitConfig) -> Result<DecoderOverfit, NnError> {
    let vocabulary = toy_vocabulary();
    let config = DecoderConfig::new(64, 32, vocabulary.len());
    let examples = toy_decoder_examples(&vocabulary, c.seed);
    let mut params = DecoderParams::init(&config, &mut ChaCha8Rng::seed_from_u64(c.seed))?;
    let mut opt = Sgd::new(c.lr, c.momentum);
    let mut losses = Vec::new();
    let mut exact = 0;
    let every = c.check_every.max(1);
    for step in 0..c.max_steps {
        let loss = train_step(&mut params, &config, &examples, &mut opt)?;
        if !loss.is_finite() {
            return Err(NnError::Diverged { step });
        }
        losses.push(loss);
        if (step + 1) % every == 0 || step + 1 == c.max_steps {
            exact = 0;
            for e in &examples {
                if generate(&params, &config, &e.nodes, &e.global)?.sentences == e.report {
                    exact += 1;
                }
            }
            if exact == examples.len() {
                break;
            }
        }
    }
    Ok(DecoderOverfit {
        losses,
        vocabulary,
        config,
        params,
        examples,
        exact,
    })
}
