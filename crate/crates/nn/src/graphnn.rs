//! Graph embedding module: node attention, graph convolution, classifier.
//!
//! A feature map `X` of shape `[C_in, H·W]` (one column per spatial cell)
//! is turned into one node per finding category by a per-category spatial
//! softmax, plus a global node holding the spatial mean. Nodes are then
//! refined by graph convolutions over the propagation matrix `Â` of the
//! chest graph and pooled into multi-label probabilities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use radgraph_core::chestkg::{ChestGraph, PropagationKind, PropagationMatrix};

use crate::params::{accumulate, scale_all, Linear, Module, Norm, Sgd};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::NnError;

/// Probabilities are clamped into `[BCE_EPS, 1 − BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;
/// Upper bound of the per-class positive weight.
pub const MAX_POS_WEIGHT: f64 = 50.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NormMode {
    /// Per-node normalization with learned scale and shift.
    #[default]
    Layer,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbeddingConfig {
    pub in_channels: usize,
    pub hidden: usize,
    pub layers: usize,
    pub norm: NormMode,
    /// Adds the layer input to its output when the widths agree.
    pub residual: bool,
    /// Number of image views; node features of the views are concatenated.
    pub views: usize,
}

impl GraphEmbeddingConfig {
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            hidden: 64,
            layers: 2,
            norm: NormMode::Layer,
            residual: true,
            views: 1,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.in_channels == 0 || self.hidden == 0 {
            return bad("channel counts must be positive");
        }
        if self.layers == 0 {
            return bad("at least one graph convolution layer is needed");
        }
        if !(1..=2).contains(&self.views) {
            return bad("one or two views are supported");
        }
        Ok(())
    }

    /// Width of the concatenated node features.
    pub fn node_dim(&self) -> usize {
        self.hidden * self.views
    }
}

param_struct! {
    /// Per-category spatial attention: `weight` `[C, C_in]`, `bias` `[C, 1]`.
    pub struct NodeAttention {
        weight: leaf,
        bias: leaf,
    }
}

param_struct! {
    /// `m = ReLU(Norm(Â·msg(F)))`, `F' = ReLU(Norm(upd([F | m])))`.
    pub struct GraphConvLayer {
        message: (sub Linear),
        message_norm: (sub Norm),
        update: (sub Linear),
        update_norm: (sub Norm),
    }
}

param_struct! {
    /// Per-category logistic head on the attention nodes.
    pub struct AuxHead {
        weight: leaf,
        bias: leaf,
    }
}

param_struct! {
    /// Everything applied to one view.
    pub struct Branch {
        attention: (sub NodeAttention),
        layers: (list GraphConvLayer),
        aux: (sub AuxHead),
    }
}

param_struct! {
    pub struct GraphEmbeddingParams {
        branches: (list Branch),
        classifier: (sub Linear),
    }
}

/// Output of [`node_attention`].
#[derive(Debug, Clone, Copy)]
pub struct NodeInit<'t> {
    /// `[C + 1, C_in]`, the global node last.
    pub nodes: Var<'t>,
    /// `[C, H·W]`, each row a distribution over spatial cells.
    pub attention: Var<'t>,
}

pub fn node_attention<'t>(x: Var<'t>, p: &NodeAttention<Var<'t>>) -> NodeInit<'t> {
    let attention = p.weight.matmul(x).add(p.bias).softmax_rows();
    let categories = attention.matmul(x.t());
    let global = x.t().mean_rows();
    NodeInit {
        nodes: Var::concat_rows(&[categories, global]),
        attention,
    }
}

fn normalize<'t>(x: Var<'t>, p: &Norm<Var<'t>>, mode: NormMode) -> Var<'t> {
    match mode {
        NormMode::Layer => p.apply(x),
        NormMode::Identity => x,
    }
}

/// One message-passing layer over the propagation matrix `prop`.
pub fn graph_conv<'t>(
    f: Var<'t>,
    prop: Var<'t>,
    p: &GraphConvLayer<Var<'t>>,
    norm: NormMode,
    residual: bool,
) -> Var<'t> {
    let message = normalize(prop.matmul(p.message.apply(f)), &p.message_norm, norm).relu();
    let updated = p.update.apply(Var::concat_cols(&[f, message]));
    let out = normalize(updated, &p.update_norm, norm).relu();
    if residual {
        out.add(f)
    } else {
        out
    }
}

/// `sigmoid(classifier(mean of nodes))` as a `[1, C]` row.
pub fn classify<'t>(nodes: Var<'t>, classifier: &Linear<Var<'t>>) -> Var<'t> {
    classifier.apply(nodes.mean_rows()).sigmoid()
}

/// Per-category probabilities from the first `categories` attention nodes.
pub fn aux_probabilities<'t>(nodes: Var<'t>, head: &AuxHead<Var<'t>>, categories: usize) -> Var<'t> {
    nodes
        .slice_rows(0, categories)
        .mul(head.weight)
        .sum_cols()
        .add(head.bias)
        .sigmoid()
        .t()
}

/// `−mean_c [w_c·y_c·ln p_c + (1 − y_c)·ln(1 − p_c)]` for a `[1, C]` row.
pub fn weighted_bce<'t>(tape: &'t Tape, probs: Var<'t>, targets: &[f64], pos_weight: &[f64]) -> Var<'t> {
    let p = probs.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let wy: Vec<f64> = targets.iter().zip(pos_weight).map(|(y, w)| w * y).collect();
    let ny: Vec<f64> = targets.iter().map(|y| 1.0 - y).collect();
    let pos = p.ln().mul(tape.leaf(Tensor::row(&wy)));
    let neg = p.scale(-1.0).add_scalar(1.0).ln().mul(tape.leaf(Tensor::row(&ny)));
    pos.add(neg).mean().scale(-1.0)
}

/// `neg / pos` per class, floored at 1 and capped at [`MAX_POS_WEIGHT`];
/// classes without positives get the cap.
pub fn pos_weights(labels: &[Vec<f64>]) -> Vec<f64> {
    let classes = labels.first().map_or(0, Vec::len);
    (0..classes)
        .map(|c| {
            let pos: f64 = labels.iter().map(|l| l[c]).sum();
            let neg = labels.len() as f64 - pos;
            if pos <= 0.0 {
                MAX_POS_WEIGHT
            } else {
                (neg / pos).clamp(1.0, MAX_POS_WEIGHT)
            }
        })
        .collect()
}

/// Accepts `[C_in, H, W]` or `[C_in, H·W]` and returns the latter.
pub fn feature_map_2d(t: &Tensor) -> Result<Tensor, NnError> {
    match *t.shape() {
        [c, h, w] => t.clone().reshape(&[c, h * w]),
        [_, _] => Ok(t.clone()),
        _ => Err(NnError::Rank {
            expected: 3,
            shape: t.shape().to_vec(),
        }),
    }
}

/// One training example: a feature map per view and 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub views: Vec<Tensor>,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Weight of the auxiliary attention-node loss.
    pub aux_weight: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 0.05,
            momentum: 0.9,
            aux_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Mean training loss before each step.
    pub losses: Vec<f64>,
}

/// Bound forward pass.
#[derive(Debug, Clone)]
pub struct Forward<'t> {
    pub probs: Var<'t>,
    pub aux_probs: Vec<Var<'t>>,
    pub initial_nodes: Vec<Var<'t>>,
    pub attention: Vec<Var<'t>>,
    /// `[C + 1, hidden·views]`.
    pub nodes: Var<'t>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbedding {
    pub config: GraphEmbeddingConfig,
    pub params: GraphEmbeddingParams,
    propagation: Tensor,
    categories: usize,
}

fn propagation_tensor(m: &PropagationMatrix) -> Tensor {
    Tensor::new(vec![m.len(), m.len()], m.values().to_vec()).expect("square matrix")
}

impl GraphEmbedding {
    /// Seeded random initialization.
    pub fn new(
        config: GraphEmbeddingConfig,
        graph: &ChestGraph,
        kind: PropagationKind,
        seed: u64,
    ) -> Result<Self, NnError> {
        config.validate()?;
        let prop = PropagationMatrix::from_adjacency(graph.adjacency(), kind);
        Self::with_propagation(config, propagation_tensor(&prop), seed)
    }

    /// Initialization against an explicit `[C + 1, C + 1]` matrix.
    pub fn with_propagation(config: GraphEmbeddingConfig, propagation: Tensor, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let (n, m) = propagation.dims2()?;
        if n != m || n < 2 {
            return Err(NnError::Shape {
                what: "propagation matrix".into(),
                expected: vec![n, n],
                found: vec![n, m],
            });
        }
        let categories = n - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cin = config.in_channels;
        let attn_std = (1.0 / cin as f64).sqrt();
        let branches = (0..config.views)
            .map(|_| Branch {
                attention: NodeAttention {
                    weight: Tensor::randn(&[categories, cin], attn_std, &mut rng),
                    bias: Tensor::zeros(&[categories, 1]),
                },
                layers: (0..config.layers)
                    .map(|i| {
                        let d_in = if i == 0 { cin } else { config.hidden };
                        GraphConvLayer {
                            message: Linear::init(d_in, config.hidden, &mut rng),
                            message_norm: Norm::init(config.hidden),
                            update: Linear::init(d_in + config.hidden, config.hidden, &mut rng),
                            update_norm: Norm::init(config.hidden),
                        }
                    })
                    .collect(),
                aux: AuxHead {
                    weight: Tensor::randn(&[categories, cin], attn_std, &mut rng),
                    bias: Tensor::zeros(&[categories, 1]),
                },
            })
            .collect();
        let params = GraphEmbeddingParams {
            branches,
            classifier: Linear::init(config.node_dim(), categories, &mut rng),
        };
        Ok(Self {
            config,
            params,
            propagation,
            categories,
        })
    }

    /// Replaces the parameters after checking every name and shape.
    pub fn set_params(&mut self, params: GraphEmbeddingParams) -> Result<(), NnError> {
        let mut expected = Vec::new();
        self.params.visit(&mut |n, t| expected.push((n.to_string(), t.shape().to_vec())));
        let mut found = Vec::new();
        params.visit(&mut |n, t| found.push((n.to_string(), t.shape().to_vec())));
        if expected.len() != found.len() {
            return Err(NnError::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                found.len()
            )));
        }
        for ((en, es), (fname, fs)) in expected.into_iter().zip(found) {
            if en != fname || es != fs {
                return Err(NnError::Shape {
                    what: en,
                    expected: es,
                    found: fs,
                });
            }
        }
        self.params = params;
        Ok(())
    }

    /// Sets every parameter to zero.
    pub fn zero(&mut self) {
        scale_all(&mut self.params, 0.0);
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn propagation(&self) -> &Tensor {
        &self.propagation
    }

    fn check_views(&self, views: &[Tensor]) -> Result<Vec<Tensor>, NnError> {
        if views.len() != self.config.views {
            return Err(NnError::Config(format!(
                "model expects {} view(s), got {}",
                self.config.views,
                views.len()
            )));
        }
        views
            .iter()
            .map(|v| {
                let x = feature_map_2d(v)?;
                let (c, hw) = x.dims2()?;
                if c != self.config.in_channels || hw == 0 {
                    return Err(NnError::Shape {
                        what: "feature map".into(),
                        expected: vec![self.config.in_channels, hw.max(1)],
                        found: vec![c, hw],
                    });
                }
                if !x.is_finite() {
                    return Err(NnError::NonFinite("feature map".into()));
                }
                Ok(x)
            })
            .collect()
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        bound: &GraphEmbeddingParams<Var<'t>>,
        views: &[Tensor],
    ) -> Result<Forward<'t>, NnError> {
        let views = self.check_views(views)?;
        let prop = tape.leaf(self.propagation.clone());
        let mut finals = Vec::new();
        let mut out = Forward {
            probs: prop,
            aux_probs: Vec::new(),
            initial_nodes: Vec::new(),
            attention: Vec::new(),
            nodes: prop,
        };
        for (branch, x) in bound.branches.iter().zip(views) {
            let init = node_attention(tape.leaf(x), &branch.attention);
            let mut f = init.nodes;
            let mut width = self.config.in_channels;
            for layer in &branch.layers {
                let residual = self.config.residual && width == self.config.hidden;
                f = graph_conv(f, prop, layer, self.config.norm, residual);
                width = self.config.hidden;
            }
            finals.push(f);
            out.aux_probs.push(aux_probabilities(init.nodes, &branch.aux, self.categories));
            out.initial_nodes.push(init.nodes);
            out.attention.push(init.attention);
        }
        out.nodes = if finals.len() == 1 {
            finals[0]
        } else {
            Var::concat_cols(&finals)
        };
        out.probs = classify(out.nodes, &bound.classifier);
        Ok(out)
    }

    /// Main loss plus `aux_weight` times the mean auxiliary loss.
    pub fn loss<'t>(
        &self,
        tape: &'t Tape,
        bound: &GraphEmbeddingParams<Var<'t>>,
        sample: &Sample,
        pos_weight: &[f64],
        aux_weight: f64,
    ) -> Result<Var<'t>, NnError> {
        if sample.labels.len() != self.categories || pos_weight.len() != self.categories {
            return Err(NnError::Config(format!(
                "expected {} labels and weights, got {} and {}",
                self.categories,
                sample.labels.len(),
                pos_weight.len()
            )));
        }
        let fwd = self.forward(tape, bound, &sample.views)?;
        let main = weighted_bce(tape, fwd.probs, &sample.labels, pos_weight);
        if aux_weight == 0.0 {
            return Ok(main);
        }
        let aux: Vec<Var<'t>> = fwd
            .aux_probs
            .iter()
            .map(|&p| weighted_bce(tape, p, &sample.labels, pos_weight))
            .collect();
        let mut aux_total = aux[0];
        for &a in &aux[1..] {
            aux_total = aux_total.add(a);
        }
        Ok(main.add(aux_total.scale(aux_weight / aux.len() as f64)))
    }

    pub fn predict(&self, views: &[Tensor]) -> Result<Vec<f64>, NnError> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        Ok(self.forward(&tape, &bound, views)?.probs.value().into_data())
    }

    /// Mean main-head weighted BCE over `samples`, without the auxiliary term.
    pub fn main_loss(&self, samples: &[Sample], pos_weight: &[f64]) -> Result<f64, NnError> {
        if samples.is_empty() {
            return Err(NnError::Config("no samples".into()));
        }
        let mut total = 0.0;
        for sample in samples {
            let tape = Tape::new();
            let bound = self.params.bind(&tape);
            total += self.loss(&tape, &bound, sample, pos_weight, 0.0)?.item();
        }
        Ok(total / samples.len() as f64)
    }

    /// One full-batch step; returns the mean loss before the update.
    pub fn fit_step(
        &mut self,
        samples: &[Sample],
        pos_weight: &[f64],
        aux_weight: f64,
        opt: &mut Sgd,
    ) -> Result<f64, NnError> {
        if samples.is_empty() {
            return Err(NnError::Config("no training samples".into()));
        }
        let mut total = 0.0;
        let mut grads: Option<GraphEmbeddingParams> = None;
        for sample in samples {
            let tape = Tape::new();
            let bound = self.params.bind(&tape);
            let loss = self.loss(&tape, &bound, sample, pos_weight, aux_weight)?;
            total += loss.item();
            let g = GraphEmbeddingParams::grads(&bound, &loss.backward());
            match &mut grads {
                Some(acc) => accumulate(acc, &g),
                None => grads = Some(g),
            }
        }
        let mean = total / samples.len() as f64;
        let mut grads = grads.expect("at least one sample");
        scale_all(&mut grads, 1.0 / samples.len() as f64);
        if mean.is_finite() {
            opt.step(&mut self.params, &grads);
        }
        Ok(mean)
    }

    /// Full-batch gradient descent on `samples`.
    pub fn fit(&mut self, samples: &[Sample], config: &FitConfig) -> Result<FitReport, NnError> {
        if samples.is_empty() {
            return Err(NnError::Config("no training samples".into()));
        }
        let labels: Vec<Vec<f64>> = samples.iter().map(|s| s.labels.clone()).collect();
        let weights = pos_weights(&labels);
        let mut opt = Sgd::new(config.lr, config.momentum);
        let mut losses = Vec::with_capacity(config.steps);
        for step in 0..config.steps {
            let mean = self.fit_step(samples, &weights, config.aux_weight, &mut opt)?;
            if !mean.is_finite() {
                return Err(NnError::Diverged { step });
            }
            losses.push(mean);
        }
        Ok(FitReport { losses })
    }
}
