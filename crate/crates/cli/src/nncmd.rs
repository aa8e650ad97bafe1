//! The `nn` subcommands: gradient checks, overfit runs, checkpoints and
//! report generation.

use std::path::Path;

use anyhow::{Context, Result};
use radgraph_core::reportnlp::tokenize;
use radgraph_core::{ChestGraph, PropagationKind, PropagationMatrix};
use radgraph_nn::decoder::{teacher_forced_loss, DecoderConfig, DecoderParams, Vocabulary, WordInput};
use radgraph_nn::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use radgraph_nn::graphnn::{pos_weights, GraphEmbedding, GraphEmbeddingConfig};
use radgraph_nn::io::load_tensor;
use radgraph_nn::model::{ModelConfig, ReportModel};
use radgraph_nn::synth::{random_decoder_inputs, separable_dataset};
use radgraph_nn::{NnError, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::Record;
use crate::input_error;

/// Largest accepted relative error of a gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Sizes of the gradient-check problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradcheckSizes {
    pub channels: usize,
    pub side: usize,
    pub hidden: usize,
    pub probes: usize,
}

impl Default for GradcheckSizes {
    fn default() -> Self {
        Self {
            channels: 32,
            side: 4,
            hidden: 64,
            probes: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCheck {
    pub component: String,
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub tensors: usize,
    pub probes: usize,
    pub passed: bool,
}

fn summarize(component: &str, report: &GradCheckReport) -> ComponentCheck {
    let worst = report
        .tensors
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
    ComponentCheck {
        component: component.to_string(),
        max_rel_error: report.max_rel_error(),
        worst_tensor: worst.map_or_else(String::new, |t| t.name.clone()),
        worst_analytic: worst.map_or(0.0, |t| t.analytic),
        worst_numeric: worst.map_or(0.0, |t| t.numeric),
        tensors: report.tensors.len(),
        probes: report.probe_count(),
        passed: report.passed(GRADCHECK_TOLERANCE),
    }
}

/// Node attention → graph convolutions → classifier → weighted BCE (with
/// the auxiliary term) on the chest graph.
pub fn check_classification(seed: u64, sizes: GradcheckSizes) -> Result<ComponentCheck> {
    let graph = ChestGraph::default_graph();
    let mut config = GraphEmbeddingConfig::new(sizes.channels);
    config.hidden = sizes.hidden;
    let model = GraphEmbedding::new(config, &graph, PropagationKind::Renormalized, seed)?;
    let sample = separable_dataset(2, graph.category_count(), sizes.channels, sizes.side, seed).remove(0);
    let weights = pos_weights(std::slice::from_ref(&sample.labels));
    let check = GradCheckConfig {
        seed,
        probes_per_tensor: sizes.probes,
        skip: vec!["branches.0.attention.bias".into()],
        ..GradCheckConfig::default()
    };
    let report = grad_check(
        &model.params,
        |tape, bound| {
            model
                .loss(tape, bound, &sample, &weights, 1.0)
                .expect("sample was shaped from the config")
        },
        &check,
    );
    Ok(summarize("classification", &report))
}

/// Graph attention → topic LSTM → word LSTM → cross-entropy over
/// `nodes` node features of width `hidden`.
pub fn check_decoder(seed: u64, sizes: GradcheckSizes, nodes: usize, mode: WordInput) -> Result<ComponentCheck> {
    let (e, global) = random_decoder_inputs(nodes, sizes.hidden, sizes.channels, seed);
    let mut config = DecoderConfig::new(sizes.hidden, sizes.channels, 12);
    config.word_input = mode;
    let params = DecoderParams::init(&config, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let report_ids = vec![vec![4, 5, 6], vec![7, 11], vec![8, 9, 10, 4]];
    let check = GradCheckConfig {
        seed,
        probes_per_tensor: sizes.probes,
        ..GradCheckConfig::default()
    };
    let report = grad_check(
        &params,
        |tape: &Tape, p| {
            teacher_forced_loss(tape, p, &config, tape.leaf(e.clone()), tape.leaf(global.clone()), &report_ids)
                .expect("inputs were shaped from the config")
        },
        &check,
    );
    let name = match mode {
        WordInput::Embedding => "decoder",
        WordInput::Literal => "decoder-literal",
    };
    Ok(summarize(name, &report))
}

/// All gradient checks at N = 21 nodes.
pub fn gradcheck_all(seed: u64, sizes: GradcheckSizes) -> Result<Vec<ComponentCheck>> {
    let nodes = ChestGraph::default_graph().node_count();
    Ok(vec![
        check_classification(seed, sizes)?,
        check_decoder(seed, sizes, nodes, WordInput::Embedding)?,
        check_decoder(seed, sizes, nodes, WordInput::Literal)?,
    ])
}

/// Widths of a new checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitOptions {
    pub in_channels: usize,
    pub propagation: PropagationKind,
    pub hidden: usize,
    pub views: usize,
    pub literal_gates: bool,
    pub zero: bool,
    pub seed: u64,
}

pub fn init_model(graph: &ChestGraph, vocab: &Vocabulary, o: InitOptions) -> Result<ReportModel> {
    if vocab.is_empty() {
        return input_error("empty vocabulary");
    }
    let mut config = ModelConfig::new(o.in_channels, vocab.len());
    config.embedding.hidden = o.hidden;
    config.embedding.views = o.views;
    if o.literal_gates {
        config.word_input = WordInput::Literal;
    }
    let prop = PropagationMatrix::from_adjacency(graph.adjacency(), o.propagation);
    let prop = Tensor::new(vec![prop.len(), prop.len()], prop.values().to_vec())?;
    let mut model = match ReportModel::new(config, prop, o.seed) {
        Ok(m) => m,
        Err(e @ (NnError::Config(_) | NnError::Vocabulary(_))) => return input_error(e.to_string()),
        Err(e) => return Err(e.into()),
    };
    if o.zero {
        model.zero();
    }
    Ok(model)
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return input_error(format!("cannot read vocabulary {}: {e}", path.display())),
    };
    match Vocabulary::parse(&text) {
        Ok(v) => Ok(v),
        Err(e) => input_error(format!("vocabulary {}: {e}", path.display())),
    }
}

fn nn_input<T>(what: &str, path: &Path, r: Result<T, NnError>) -> Result<T> {
    match r {
        Ok(v) => Ok(v),
        Err(e) => input_error(format!("{what} {}: {e}", path.display())),
    }
}

pub fn load_model(path: &Path) -> Result<ReportModel> {
    nn_input("checkpoint", path, ReportModel::load(path))
}

pub fn load_feature_map(path: &Path) -> Result<Tensor> {
    nn_input("feature map", path, load_tensor(path))
}

/// Decodes one report per group of `views` feature maps; each report is
/// one line with sentences joined by `" . "`.
pub fn generate_reports(model: &ReportModel, vocab: &Vocabulary, maps: &[std::path::PathBuf]) -> Result<Vec<String>> {
    if vocab.len() != model.config.vocab_size {
        return input_error(format!(
            "vocabulary has {} tokens but the checkpoint expects {}",
            vocab.len(),
            model.config.vocab_size
        ));
    }
    let views = model.config.embedding.views;
    if maps.is_empty() || !maps.len().is_multiple_of(views) {
        return input_error(format!(
            "{} feature map(s) given; the checkpoint needs a multiple of {views}",
            maps.len()
        ));
    }
    let mut lines = Vec::new();
    for group in maps.chunks(views) {
        let tensors = group.iter().map(|p| load_feature_map(p)).collect::<Result<Vec<_>>>()?;
        let generated = match model.generate(&tensors) {
            Ok(g) => g,
            Err(e @ (NnError::Shape { .. } | NnError::Rank { .. } | NnError::Config(_))) => {
                return input_error(format!("feature map {}: {e}", group[0].display()))
            }
            Err(e) => return Err(e).context("generation failed"),
        };
        let sentences: Vec<String> = generated.sentences.iter().map(|s| vocab.decode(s).join(" ")).collect();
        lines.push(sentences.join(" . "));
    }
    Ok(lines)
}

/// Token lists per sentence of every ground-truth report, sentence
/// terminators dropped.
pub fn report_sentences(reports: &[&str]) -> Vec<Vec<String>> {
    reports
        .iter()
        .flat_map(|r| tokenize(r))
        .map(|s| s.into_iter().filter(|t| !matches!(t.as_str(), "." | "?" | "!")).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Vocabulary over the ground-truth side of a corpus.
pub fn corpus_vocabulary(records: &[Record], min_count: usize) -> Vocabulary {
    let reports: Vec<&str> = records.iter().map(|r| r.gt.as_str()).collect();
    Vocabulary::build(&report_sentences(&reports), min_count)
}
