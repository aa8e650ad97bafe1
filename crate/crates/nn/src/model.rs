//! Graph embedding plus decoder, saved as one checkpoint.
//!
//! Besides the parameters (`embedding.*`, `decoder.*`) a checkpoint holds
//! `meta.config`, a row of integers describing every width and flag, and
//! `meta.propagation`, the propagation matrix the model was built with, so
//! a checkpoint alone is enough to run generation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::{generate, DecoderConfig, DecoderParams, Generated, WordInput};
use crate::graphnn::{feature_map_2d, GraphEmbedding, GraphEmbeddingConfig, GraphEmbeddingParams, NormMode};
use crate::io::{load_checkpoint, save_checkpoint};
use crate::params::{load_named, named_tensors, scale_all, Module};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::NnError;

const CONFIG_VERSION: f64 = 1.0;
const CONFIG_FIELDS: usize = 16;

/// Every width and flag of a [`ReportModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embedding: GraphEmbeddingConfig,
    pub attention_dim: usize,
    pub topic_hidden: usize,
    pub topic_dim: usize,
    pub word_hidden: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub word_input: WordInput,
    pub max_sentences: usize,
    pub max_words: usize,
}

impl ModelConfig {
    pub fn new(in_channels: usize, vocab_size: usize) -> Self {
        let d = DecoderConfig::new(1, 1, vocab_size);
        Self {
            embedding: GraphEmbeddingConfig::new(in_channels),
            attention_dim: d.attention_dim,
            topic_hidden: d.topic_hidden,
            topic_dim: d.topic_dim,
            word_hidden: d.word_hidden,
            embed_dim: d.embed_dim,
            vocab_size,
            word_input: d.word_input,
            max_sentences: d.max_sentences,
            max_words: d.max_words,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        let e = &self.embedding;
        DecoderConfig {
            node_dim: e.node_dim(),
            global_dim: e.in_channels * e.views,
            attention_dim: self.attention_dim,
            topic_hidden: self.topic_hidden,
            topic_dim: self.topic_dim,
            word_hidden: self.word_hidden,
            embed_dim: self.embed_dim,
            vocab_size: self.vocab_size,
            word_input: self.word_input,
            max_sentences: self.max_sentences,
            max_words: self.max_words,
        }
    }

    fn to_tensor(&self) -> Tensor {
        let e = &self.embedding;
        let values = [
            CONFIG_VERSION,
            e.in_channels as f64,
            e.hidden as f64,
            e.layers as f64,
            f64::from(u8::from(e.norm == NormMode::Identity)),
            f64::from(u8::from(e.residual)),
            e.views as f64,
            self.attention_dim as f64,
            self.topic_hidden as f64,
            self.topic_dim as f64,
            self.word_hidden as f64,
            self.embed_dim as f64,
            self.vocab_size as f64,
            f64::from(u8::from(self.word_input == WordInput::Literal)),
            self.max_sentences as f64,
            self.max_words as f64,
        ];
        Tensor::row(&values)
    }

    fn from_tensor(t: &Tensor) -> Result<Self, NnError> {
        let v = t.data();
        if v.len() != CONFIG_FIELDS || v[0] != CONFIG_VERSION {
            return Err(NnError::Format("unrecognized model configuration record".into()));
        }
        if v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err(NnError::Format("configuration values must be non-negative integers".into()));
        }
        let u = |i: usize| v[i] as usize;
        Ok(Self {
            embedding: GraphEmbeddingConfig {
                in_channels: u(1),
                hidden: u(2),
                layers: u(3),
                norm: if u(4) == 1 { NormMode::Identity } else { NormMode::Layer },
                residual: u(5) == 1,
                views: u(6),
            },
            attention_dim: u(7),
            topic_hidden: u(8),
            topic_dim: u(9),
            word_hidden: u(10),
            embed_dim: u(11),
            vocab_size: u(12),
            word_input: if u(13) == 1 { WordInput::Literal } else { WordInput::Embedding },
            max_sentences: u(14),
            max_words: u(15),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportModel {
    pub config: ModelConfig,
    pub embedding: GraphEmbedding,
    pub decoder: DecoderParams,
}

/// Spatial means of every view, concatenated: `[1, C_in·views]`.
pub fn global_feature(views: &[Tensor]) -> Result<Tensor, NnError> {
    let mut out = Vec::new();
    for v in views {
        let x = feature_map_2d(v)?;
        let (c, hw) = x.dims2()?;
        if hw == 0 {
            return Err(NnError::Config("feature map has no spatial cells".into()));
        }
        for row in x.data().chunks(hw) {
            out.push(row.iter().sum::<f64>() / hw as f64);
        }
        debug_assert_eq!(out.len() % c, 0);
    }
    Ok(Tensor::row(&out))
}

impl ReportModel {
    pub fn new(config: ModelConfig, propagation: Tensor, seed: u64) -> Result<Self, NnError> {
        let embedding = GraphEmbedding::with_propagation(config.embedding.clone(), propagation, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let decoder = DecoderParams::init(&config.decoder(), &mut rng)?;
        Ok(Self {
            config,
            embedding,
            decoder,
        })
    }

    pub fn zero(&mut self) {
        self.embedding.zero();
        scale_all(&mut self.decoder, 0.0);
    }

    pub fn checkpoint_entries(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("meta.config".to_string(), self.config.to_tensor()),
            ("meta.propagation".to_string(), self.embedding.propagation().clone()),
        ];
        out.extend(
            named_tensors(&self.embedding.params)
                .into_iter()
                .map(|(n, t)| (format!("embedding.{n}"), t)),
        );
        out.extend(
            named_tensors(&self.decoder)
                .into_iter()
                .map(|(n, t)| (format!("decoder.{n}"), t)),
        );
        out
    }

    pub fn from_checkpoint(entries: &BTreeMap<String, Tensor>) -> Result<Self, NnError> {
        let get = |name: &str| entries.get(name).ok_or_else(|| NnError::MissingTensor(name.into()));
        let config = ModelConfig::from_tensor(get("meta.config")?)?;
        let mut model = Self::new(config, get("meta.propagation")?.clone(), 0)?;
        let strip = |prefix: &str| -> BTreeMap<String, Tensor> {
            entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.clone())))
                .collect()
        };
        let mut params: GraphEmbeddingParams = model.embedding.params.clone();
        load_named(&mut params, &strip("embedding."))
            .map_err(|e| prefix_missing(e, "embedding."))?;
        model.embedding.set_params(params)?;
        load_named(&mut model.decoder, &strip("decoder.")).map_err(|e| prefix_missing(e, "decoder."))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        save_checkpoint(path, &self.checkpoint_entries())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }

    /// Node features `[C + 1, hidden·views]` for the given views.
    pub fn node_features(&self, views: &[Tensor]) -> Result<Tensor, NnError> {
        let tape = Tape::new();
        let bound = self.embedding.params.bind(&tape);
        Ok(self.embedding.forward(&tape, &bound, views)?.nodes.value())
    }

    pub fn generate(&self, views: &[Tensor]) -> Result<Generated, NnError> {
        let nodes = self.node_features(views)?;
        generate(&self.decoder, &self.config.decoder(), &nodes, &global_feature(views)?)
    }
}

fn prefix_missing(e: NnError, prefix: &str) -> NnError {
    match e {
        NnError::MissingTensor(n) => NnError::MissingTensor(format!("{prefix}{n}")),
        NnError::Shape { what, expected, found } => NnError::Shape {
            what: format!("{prefix}{what}"),
            expected,
            found,
        },
        other => other,
    }
}
