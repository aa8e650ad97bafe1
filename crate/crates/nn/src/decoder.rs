//! Hierarchical report decoder.
//!
//! A topic LSTM advances once per sentence. Before each step, graph
//! attention over the node features `E` (conditioned on the previous topic
//! hidden state) produces a context vector `v`; the topic LSTM consumes `v`
//! and emits a topic vector `s`. A word LSTM then writes the sentence
//! token by token with `s` and `v` injected into every gate:
//!
//! ```text
//! a_i = W_a tanh(W_v e_i + W_s h)      α = softmax(a)      v = Σ α_i e_i
//! i = σ(W_si s + W_vi v + W_hi h)      (f, g, o likewise, g with tanh)
//! c' = f∘c + i∘g                       h' = o∘tanh(c')
//! ```
//!
//! In [`WordInput::Embedding`] mode (the default) each gate also receives a
//! learned embedding of the previous token plus a bias;
//! [`WordInput::Literal`] uses the gate equations exactly as written above.

use std::collections::HashMap;

use rand::Rng;

use crate::params::{accumulate, scale_all, Linear, Module, Sgd};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::NnError;

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNKNOWN: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<start>", "<end>", "<unknown>"];

/// Token ↔ id mapping; ids 0 to 3 are the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_count` times, most frequent first,
    /// ties alphabetical.
    pub fn build<S: AsRef<str>>(sentences: &[Vec<S>], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_ref()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !SPECIAL_TOKENS.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .copied()
            .chain(kept.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens).expect("built vocabulary is well formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, NnError> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..4] != SPECIAL_TOKENS {
            return Err(NnError::Vocabulary(format!(
                "the first four tokens must be {SPECIAL_TOKENS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(NnError::Vocabulary(format!("invalid token {t:?} at id {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(NnError::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// One token per line; the line number is the id.
    pub fn parse(text: &str) -> Result<Self, NnError> {
        Self::from_tokens(
            text.lines()
                .map(|l| l.trim_end_matches('\r').to_string())
                .collect(),
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when no token besides the special ones is present.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIAL_TOKENS.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNKNOWN)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(SPECIAL_TOKENS[UNKNOWN], String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum WordInput {
    /// Previous-token embedding and a bias enter every gate.
    #[default]
    Embedding,
    /// Gates see only `s`, `v` and `h`.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Width of a node feature row of `E`.
    pub node_dim: usize,
    /// Width of the global image feature that seeds the topic state.
    pub global_dim: usize,
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

impl DecoderConfig {
    pub fn new(node_dim: usize, global_dim: usize, vocab_size: usize) -> Self {
        Self {
            node_dim,
            global_dim,
            attention_dim: 32,
            topic_hidden: 32,
            topic_dim: 32,
            word_hidden: 32,
            embed_dim: 16,
            vocab_size,
            word_input: WordInput::Embedding,
            max_sentences: 7,
            max_words: 30,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let dims = [
            self.node_dim,
            self.global_dim,
            self.attention_dim,
            self.topic_hidden,
            self.topic_dim,
            self.word_hidden,
            self.embed_dim,
        ];
        if dims.contains(&0) {
            return Err(NnError::Config("decoder widths must be positive".into()));
        }
        if self.vocab_size <= SPECIAL_TOKENS.len() {
            return Err(NnError::Vocabulary("empty vocabulary".into()));
        }
        Ok(())
    }
}

param_struct! {
    /// `w_a` `[1, k]`, `w_v` `[k, d]`, `w_s` `[k, h]`.
    pub struct GraphAttention {
        w_a: leaf,
        w_v: leaf,
        w_s: leaf,
    }
}

param_struct! {
    /// Standard LSTM; gate rows stacked in the order i, f, g, o.
    pub struct Lstm {
        input: leaf,
        hidden: leaf,
        bias: leaf,
    }
}

param_struct! {
    /// Word LSTM maps, gate rows stacked in the order i, f, g, o.
    pub struct WordLstm {
        topic: leaf,
        context: leaf,
        hidden: leaf,
        embed_in: leaf,
        bias: leaf,
        embedding: leaf,
    }
}

param_struct! {
    pub struct DecoderParams {
        attention: (sub GraphAttention),
        topic_init: (sub Linear),
        topic_lstm: (sub Lstm),
        topic_out: (sub Linear),
        word: (sub WordLstm),
        output: (sub Linear),
    }
}

fn mat<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::randn(&[rows, cols], (1.0 / cols as f64).sqrt(), rng)
}

impl DecoderParams {
    pub fn init<R: Rng + ?Sized>(c: &DecoderConfig, rng: &mut R) -> Result<Self, NnError> {
        c.validate()?;
        let (th, wh) = (4 * c.topic_hidden, 4 * c.word_hidden);
        Ok(Self {
            attention: GraphAttention {
                w_a: mat(1, c.attention_dim, rng),
                w_v: mat(c.attention_dim, c.node_dim, rng),
                w_s: mat(c.attention_dim, c.topic_hidden, rng),
            },
            topic_init: Linear::init(c.global_dim, c.topic_hidden, rng),
            topic_lstm: Lstm {
                input: mat(th, c.node_dim, rng),
                hidden: mat(th, c.topic_hidden, rng),
                bias: Tensor::zeros(&[1, th]),
            },
            topic_out: Linear::init(c.topic_hidden, c.topic_dim, rng),
            word: WordLstm {
                topic: mat(wh, c.topic_dim, rng),
                context: mat(wh, c.node_dim, rng),
                hidden: mat(wh, c.word_hidden, rng),
                embed_in: mat(wh, c.embed_dim, rng),
                bias: Tensor::zeros(&[1, wh]),
                embedding: mat(c.vocab_size, c.embed_dim, rng),
            },
            output: Linear::init(c.word_hidden, c.vocab_size, rng),
        })
    }
}

/// `(α [1, N], v [1, d])` for nodes `e` `[N, d]` and topic hidden `h` `[1, h]`.
pub fn graph_attention<'t>(e: Var<'t>, h: Var<'t>, p: &GraphAttention<Var<'t>>) -> (Var<'t>, Var<'t>) {
    let logits = e
        .matmul(p.w_v.t())
        .add(h.matmul(p.w_s.t()))
        .tanh()
        .matmul(p.w_a.t())
        .t();
    let alpha = logits.softmax_rows();
    (alpha, alpha.matmul(e))
}

/// Gate values and new `(h, c)` from stacked pre-activations `z` `[1, 4h]`.
pub struct CellOutput<'t> {
    pub input: Var<'t>,
    pub forget: Var<'t>,
    pub candidate: Var<'t>,
    pub output: Var<'t>,
    pub hidden: Var<'t>,
    pub cell: Var<'t>,
}

pub fn lstm_cell<'t>(z: Var<'t>, c: Var<'t>) -> CellOutput<'t> {
    let h = z.dims().1 / 4;
    let input = z.slice_cols(0, h).sigmoid();
    let forget = z.slice_cols(h, 2 * h).sigmoid();
    let candidate = z.slice_cols(2 * h, 3 * h).tanh();
    let output = z.slice_cols(3 * h, 4 * h).sigmoid();
    let cell = forget.mul(c).add(input.mul(candidate));
    let hidden = output.mul(cell.tanh());
    CellOutput {
        input,
        forget,
        candidate,
        output,
        hidden,
        cell,
    }
}

/// Topic recurrence state; the hidden state is fixed while a sentence is
/// being written.
#[derive(Debug, Clone, Copy, Default)]
pub struct TopicState<'t> {
    pub hidden: Option<Var<'t>>,
    pub cell: Option<Var<'t>>,
    pub topic: Option<Var<'t>>,
}

impl<'t> TopicState<'t> {
    /// `h = tanh(W·global + b)`, `c = 0`.
    pub fn init(tape: &'t Tape, global: Var<'t>, p: &Linear<Var<'t>>) -> Self {
        let hidden = p.apply(global).tanh();
        let cell = tape.leaf(Tensor::zeros(&[1, hidden.dims().1]));
        Self {
            hidden: Some(hidden),
            cell: Some(cell),
            topic: None,
        }
    }
}

/// One topic step on context `v`: returns `s_t` and the advanced state.
pub fn topic_step<'t>(
    v: Var<'t>,
    state: &TopicState<'t>,
    lstm: &Lstm<Var<'t>>,
    out: &Linear<Var<'t>>,
) -> Result<(Var<'t>, TopicState<'t>), NnError> {
    let (Some(h), Some(c)) = (state.hidden, state.cell) else {
        return Err(NnError::UninitializedState);
    };
    let z = v
        .matmul(lstm.input.t())
        .add(h.matmul(lstm.hidden.t()))
        .add(lstm.bias);
    let cell = lstm_cell(z, c);
    let s = out.apply(cell.hidden);
    Ok((
        s,
        TopicState {
            hidden: Some(cell.hidden),
            cell: Some(cell.cell),
            topic: Some(s),
        },
    ))
}

/// One word step; returns the cell output and vocabulary logits `[1, V]`.
#[allow(clippy::too_many_arguments)]
pub fn word_step<'t>(
    s: Var<'t>,
    v: Var<'t>,
    h: Var<'t>,
    c: Var<'t>,
    prev_token: usize,
    p: &WordLstm<Var<'t>>,
    output: &Linear<Var<'t>>,
    mode: WordInput,
) -> (CellOutput<'t>, Var<'t>) {
    let mut z = s
        .matmul(p.topic.t())
        .add(v.matmul(p.context.t()))
        .add(h.matmul(p.hidden.t()));
    if mode == WordInput::Embedding {
        let e = p.embedding.select_rows(&[prev_token]);
        z = z.add(e.matmul(p.embed_in.t())).add(p.bias);
    }
    let cell = lstm_cell(z, c);
    let logits = output.apply(cell.hidden);
    (cell, logits)
}

/// The sentences a report is trained on: at most `max_sentences`, each
/// truncated to `max_words`, plus a terminal empty sentence when the cap
/// leaves room for one.
pub fn training_sentences(report: &[Vec<usize>], config: &DecoderConfig) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = report
        .iter()
        .filter(|s| !s.is_empty())
        .take(config.max_sentences)
        .map(|s| s.iter().copied().take(config.max_words).collect())
        .collect();
    if out.len() < config.max_sentences {
        out.push(Vec::new());
    }
    out
}

fn check_inputs(nodes: (usize, usize), global: (usize, usize), c: &DecoderConfig) -> Result<(), NnError> {
    if nodes.1 != c.node_dim || nodes.0 == 0 {
        return Err(NnError::Shape {
            what: "decoder node features".into(),
            expected: vec![nodes.0.max(1), c.node_dim],
            found: vec![nodes.0, nodes.1],
        });
    }
    if global != (1, c.global_dim) {
        return Err(NnError::Shape {
            what: "decoder global feature".into(),
            expected: vec![1, c.global_dim],
            found: vec![global.0, global.1],
        });
    }
    Ok(())
}

/// Mean token cross-entropy of `report` under teacher forcing.
pub fn teacher_forced_loss<'t>(
    tape: &'t Tape,
    p: &DecoderParams<Var<'t>>,
    config: &DecoderConfig,
    nodes: Var<'t>,
    global: Var<'t>,
    report: &[Vec<usize>],
) -> Result<Var<'t>, NnError> {
    check_inputs(nodes.dims(), global.dims(), config)?;
    if let Some(&bad) = report.iter().flatten().find(|&&t| t >= config.vocab_size) {
        return Err(NnError::Vocabulary(format!("token id {bad} outside the vocabulary")));
    }
    let mut state = TopicState::init(tape, global, &p.topic_init);
    let mut terms: Vec<Var<'t>> = Vec::new();
    for sentence in training_sentences(report, config) {
        let (_, v) = graph_attention(nodes, state.hidden.ok_or(NnError::UninitializedState)?, &p.attention);
        let (s, next) = topic_step(v, &state, &p.topic_lstm, &p.topic_out)?;
        state = next;
        let mut h = tape.leaf(Tensor::zeros(&[1, config.word_hidden]));
        let mut c = tape.leaf(Tensor::zeros(&[1, config.word_hidden]));
        let mut prev = START;
        for &target in sentence.iter().chain(std::iter::once(&END)) {
            let (cell, logits) = word_step(s, v, h, c, prev, &p.word, &p.output, config.word_input);
            let mut onehot = vec![0.0; config.vocab_size];
            onehot[target] = 1.0;
            terms.push(logits.log_softmax_rows().mul(tape.leaf(Tensor::row(&onehot))).sum());
            h = cell.hidden;
            c = cell.cell;
            prev = target;
        }
    }
    let n = terms.len() as f64;
    let total = Var::concat_cols(&terms).sum();
    Ok(total.scale(-1.0 / n))
}

/// A decoded report with the attention used for each sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub sentences: Vec<Vec<usize>>,
    pub attention: Vec<Vec<f64>>,
}

/// Greedy decoding; `<pad>` and `<start>` are never emitted and ties go to
/// the lowest id.
pub fn generate(
    params: &DecoderParams,
    config: &DecoderConfig,
    nodes: &Tensor,
    global: &Tensor,
) -> Result<Generated, NnError> {
    config.validate()?;
    check_inputs(nodes.dims2()?, global.dims2()?, config)?;
    let tape = Tape::new();
    let p = params.bind(&tape);
    let e = tape.leaf(nodes.clone());
    let mut state = TopicState::init(&tape, tape.leaf(global.clone()), &p.topic_init);
    let mut out = Generated {
        sentences: Vec::new(),
        attention: Vec::new(),
    };
    for _ in 0..config.max_sentences {
        let (alpha, v) = graph_attention(e, state.hidden.ok_or(NnError::UninitializedState)?, &p.attention);
        let (s, next) = topic_step(v, &state, &p.topic_lstm, &p.topic_out)?;
        state = next;
        let mut h = tape.leaf(Tensor::zeros(&[1, config.word_hidden]));
        let mut c = tape.leaf(Tensor::zeros(&[1, config.word_hidden]));
        let mut prev = START;
        let mut words = Vec::new();
        while words.len() < config.max_words {
            let (cell, logits) = word_step(s, v, h, c, prev, &p.word, &p.output, config.word_input);
            let values = logits.value();
            let next = END + Tensor::row(&values.data()[END..]).argmax().expect("vocabulary has tokens");
            if next == END {
                break;
            }
            words.push(next);
            h = cell.hidden;
            c = cell.cell;
            prev = next;
        }
        if words.is_empty() {
            break;
        }
        out.sentences.push(words);
        out.attention.push(alpha.value().into_data());
    }
    Ok(out)
}

/// One decoder training example.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderExample {
    pub nodes: Tensor,
    pub global: Tensor,
    pub report: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
}

/// One full-batch step on the mean teacher-forced loss; returns the loss
/// before the update. Parameters are left untouched when it is not finite.
pub fn train_step(
    params: &mut DecoderParams,
    config: &DecoderConfig,
    examples: &[DecoderExample],
    opt: &mut Sgd,
) -> Result<f64, NnError> {
    if examples.is_empty() {
        return Err(NnError::Config("no training examples".into()));
    }
    let mut total = 0.0;
    let mut grads: Option<DecoderParams> = None;
    for ex in examples {
        let tape = Tape::new();
        let p = params.bind(&tape);
        let loss = teacher_forced_loss(
            &tape,
            &p,
            config,
            tape.leaf(ex.nodes.clone()),
            tape.leaf(ex.global.clone()),
            &ex.report,
        )?;
        total += loss.item();
        let g = DecoderParams::grads(&p, &loss.backward());
        match &mut grads {
            Some(acc) => accumulate(acc, &g),
            None => grads = Some(g),
        }
    }
    let mean = total / examples.len() as f64;
    let mut grads = grads.expect("at least one example");
    scale_all(&mut grads, 1.0 / examples.len() as f64);
    if mean.is_finite() {
        opt.step(params, &grads);
    }
    Ok(mean)
}

/// Full-batch gradient descent on the mean teacher-forced loss. Returns
/// the loss before each step.
pub fn train(
    params: &mut DecoderParams,
    config: &DecoderConfig,
    examples: &[DecoderExample],
    train: &TrainConfig,
) -> Result<Vec<f64>, NnError> {
    let mut opt = Sgd::new(train.lr, train.momentum);
    let mut losses = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let mean = train_step(params, config, examples, &mut opt)?;
        if !mean.is_finite() {
            return Err(NnError::Diverged { step });
        }
        losses.push(mean);
    }
    Ok(losses)
}
