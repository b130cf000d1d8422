use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ArnnError;
use crate::corpus::{parse_target, tokenize_source, Phenotype, Prescription, Role, TokenSequence, Vocabulary, BUCKETS, EOS, GO, PAD, SOURCE_LEN};
use crate::nn::layers::{AdditiveAttention, Dense, Embedding, GruCell};
use crate::nn::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct ArnnConfig {
    /// Stacked GRU layers in both encoder and decoder.
    pub layers: usize,
    pub hidden: usize,
    pub embedding: usize,
    pub attention: usize,
    /// Maximum target lengths, EOS included; strictly increasing.
    pub buckets: Vec<usize>,
    /// Feed gold tokens to the decoder during training; otherwise its own
    /// previous argmax.
    pub teacher_forcing: bool,
    pub beam_width: usize,
    pub seed: u64,
}

impl ArnnConfig {
    pub fn desk(seed: u64) -> Self {
        ArnnConfig {
            layers: 2,
            hidden: 64,
            embedding: 32,
            attention: 64,
            buckets: BUCKETS.to_vec(),
            teacher_forcing: true,
            beam_width: 1,
            seed,
        }
    }

    pub fn paper(seed: u64) -> Self {
        ArnnConfig {
            layers: 3,
            hidden: 512,
            embedding: 512,
            attention: 512,
            ..ArnnConfig::desk(seed)
        }
    }

    pub fn max_len(&self) -> usize {
        self.buckets.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ArnnError> {
        if self.layers == 0 || self.hidden == 0 || self.embedding == 0 || self.attention == 0 {
            return Err(ArnnError::Config("layer count and widths must be positive"));
        }
        if self.buckets.is_empty() || self.buckets[0] == 0 || self.buckets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ArnnError::Config("buckets must be positive and strictly increasing"));
        }
        if self.beam_width == 0 {
            return Err(ArnnError::Config("beam width must be positive"));
        }
        Ok(())
    }

    /// Scalar parameter count for the given vocabulary sizes.
    pub fn parameter_count(&self, source_vocab: usize, target_vocab: usize) -> usize {
        let (h, e, a) = (self.hidden, self.embedding, self.attention);
        let gru = |i: usize| 3 * h * (i + h) + 6 * h;
        let stack = gru(e) + (self.layers - 1) * gru(h);
        (source_vocab + target_vocab) * e + 2 * stack + 2 * h * a + a + (2 * h + 1) * target_vocab
    }
}

/// Attention-based GRU encoder-decoder.
#[derive(Clone, Debug)]
pub struct Arnn {
    config: ArnnConfig,
    source_vocab: Vocabulary,
    target_vocab: Vocabulary,
    params: ParamStore<f32>,
    source_embedding: Embedding,
    target_embedding: Embedding,
    encoder: Vec<GruCell>,
    decoder: Vec<GruCell>,
    attention: AdditiveAttention,
    output: Dense,
}

/// Encoder outputs for a batch of source sentences.
#[derive(Clone, Debug)]
pub(crate) struct Encoded {
    pub annotations: Var,
    pub keys: Var,
    pub states: Vec<Var>,
}

/// Decoder state held outside a graph between decode steps.
#[derive(Clone, Debug)]
struct DecodeState {
    annotations: Tensor<f32>,
    keys: Tensor<f32>,
    states: Vec<Tensor<f32>>,
}

/// Tokens produced by decoding, before parsing.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Generated tokens without GO; ends with EOS unless the length limit hit first.
    pub tokens: Vec<usize>,
    /// One row of source weights per generated token.
    pub attention: Vec<Vec<f64>>,
    /// Sum of token log-probabilities.
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslationResult {
    pub tokens: TokenSequence,
    /// Target steps x source positions.
    pub attention: Vec<Vec<f64>>,
    pub prescription: Prescription,
}

impl Arnn {
    pub fn new(config: ArnnConfig, source_vocab: Vocabulary, target_vocab: Vocabulary) -> Result<Self, ArnnError> {
        config.validate()?;
        if source_vocab.role() != Role::Source {
            return Err(ArnnError::WrongRole("source"));
        }
        if target_vocab.role() != Role::Target {
            return Err(ArnnError::WrongRole("target"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (h, e) = (config.hidden, config.embedding);
        let source_embedding = Embedding::new(&mut store, &mut rng, "encoder.embedding", source_vocab.len(), e);
        let encoder = (0..config.layers)
            .map(|l| GruCell::new(&mut store, &mut rng, &format!("encoder.gru{l}"), if l == 0 { e } else { h }, h))
            .collect();
        let target_embedding = Embedding::new(&mut store, &mut rng, "decoder.embedding", target_vocab.len(), e);
        let decoder = (0..config.layers)
            .map(|l| GruCell::new(&mut store, &mut rng, &format!("decoder.gru{l}"), if l == 0 { e } else { h }, h))
            .collect();
        let attention = AdditiveAttention::new(&mut store, &mut rng, "attention", h, h, config.attention);
        let output = Dense::new(&mut store, &mut rng, "decoder.output", 2 * h, target_vocab.len());
        Ok(Arnn {
            config,
            source_vocab,
            target_vocab,
            params: store,
            source_embedding,
            target_embedding,
            encoder,
            decoder,
            attention,
            output,
        })
    }

    pub fn config(&self) -> &ArnnConfig {
        &self.config
    }

    pub fn source_vocab(&self) -> &Vocabulary {
        &self.source_vocab
    }

    pub fn target_vocab(&self) -> &Vocabulary {
        &self.target_vocab
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    fn check_source(&self, tokens: &[usize]) -> Result<(), ArnnError> {
        if tokens.len() != SOURCE_LEN {
            return Err(ArnnError::SourceLength(tokens.len()));
        }
        check_range(tokens, self.source_vocab.len())
    }

    pub(crate) fn check_target(&self, tokens: &[usize]) -> Result<(), ArnnError> {
        if tokens.is_empty() {
            return Err(ArnnError::EmptyTarget);
        }
        if tokens.len() > self.config.max_len() {
            return Err(ArnnError::TooLong {
                len: tokens.len(),
                max: self.config.max_len(),
            });
        }
        check_range(tokens, self.target_vocab.len())
    }

    pub(crate) fn encode(&self, g: &mut Graph<f32>, sources: &[&[usize]]) -> Result<Encoded, ArnnError> {
        for s in sources {
            self.check_source(s)?;
        }
        let b = sources.len();
        let h = self.config.hidden;
        let mut states = Vec::with_capacity(self.config.layers);
        for _ in 0..self.config.layers {
            states.push(g.input(Tensor::zeros(vec![b, h]))?);
        }
        let mut outputs = Vec::with_capacity(SOURCE_LEN);
        for t in 0..SOURCE_LEN {
            let ids: Vec<usize> = sources.iter().map(|s| s[t]).collect();
            let mut x = self.source_embedding.forward(g, &self.params, &ids)?;
            for (cell, state) in self.encoder.iter().zip(states.iter_mut()) {
                *state = cell.forward(g, &self.params, x, *state)?;
                x = *state;
            }
            outputs.push(g.reshape(x, vec![b, 1, h])?);
        }
        let annotations = g.concat(&outputs, 1)?;
        let keys = self.attention.project_keys(g, &self.params, annotations)?;
        Ok(Encoded { annotations, keys, states })
    }

    /// One decoder step: returns logits `[b, V]` and attention weights `[b, 7]`.
    pub(crate) fn step(&self, g: &mut Graph<f32>, enc: &Encoded, states: &mut [Var], prev: &[usize]) -> Result<(Var, Var), ArnnError> {
        let mut x = self.target_embedding.forward(g, &self.params, prev)?;
        for (cell, state) in self.decoder.iter().zip(states.iter_mut()) {
            *state = cell.forward(g, &self.params, x, *state)?;
            x = *state;
        }
        let att = self.attention.attend(g, &self.params, x, enc.keys, enc.annotations)?;
        let features = g.concat(&[x, att.context], 1)?;
        let logits = self.output.forward(g, &self.params, features)?;
        Ok((logits, att.weights))
    }

    /// Decoder logits for every target position, stacked step-major as
    /// `[T * b, V]`, with the matching gold labels (`None` past each end).
    pub(crate) fn forward(&self, g: &mut Graph<f32>, sources: &[&[usize]], targets: &[&[usize]]) -> Result<(Var, Vec<Option<usize>>), ArnnError> {
        if sources.len() != targets.len() || sources.is_empty() {
            return Err(ArnnError::Empty);
        }
        for t in targets {
            self.check_target(t)?;
        }
        let enc = self.encode(g, sources)?;
        let mut states = enc.states.clone();
        let steps = targets.iter().map(|t| t.len()).max().unwrap_or(0);
        let mut prev: Vec<usize> = vec![GO; targets.len()];
        let mut all_logits = Vec::with_capacity(steps);
        let mut labels = Vec::with_capacity(steps * targets.len());
        for t in 0..steps {
            let (logits, _) = self.step(g, &enc, &mut states, &prev)?;
            all_logits.push(logits);
            labels.extend(targets.iter().map(|s| s.get(t).copied()));
            if self.config.teacher_forcing {
                prev = targets.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
            } else {
                let v = g.value(logits);
                prev = (0..targets.len()).map(|i| argmax_f32(v.row(i))).collect();
            }
        }
        Ok((g.concat(&all_logits, 0)?, labels))
    }

    /// Mean per-token cross entropy of a batch and its token count.
    pub fn loss(&self, g: &mut Graph<f32>, sources: &[&[usize]], targets: &[&[usize]]) -> Result<(Var, usize), ArnnError> {
        let (logits, labels) = self.forward(g, sources, targets)?;
        let count = labels.iter().filter(|l| l.is_some()).count();
        let loss = g.softmax_cross_entropy(logits, &labels, 1.0 / count as f64)?;
        Ok((loss, count))
    }

    /// `ln p(token)` for every gold token of every target, in 64-bit.
    pub fn token_log_probs(&self, sources: &[&[usize]], targets: &[&[usize]]) -> Result<Vec<Vec<f64>>, ArnnError> {
        let mut g = Graph::new();
        let (logits, labels) = self.forward(&mut g, sources, targets)?;
        let v = g.value(logits);
        let b = targets.len();
        let mut out: Vec<Vec<f64>> = targets.iter().map(|t| Vec::with_capacity(t.len())).collect();
        for (row, label) in labels.iter().enumerate() {
            if let Some(l) = *label {
                out[row % b].push(log_softmax_at(v.row(row), l));
            }
        }
        Ok(out)
    }

    /// Per-position annotations `[7, hidden]` of one source sentence.
    pub fn encode_source(&self, source: &[usize]) -> Result<Tensor<f32>, ArnnError> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, &[source])?;
        Ok(g.value(enc.annotations).clone().reshaped(vec![SOURCE_LEN, self.config.hidden])?)
    }

    fn start(&self, sources: &[&[usize]]) -> Result<DecodeState, ArnnError> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, sources)?;
        Ok(DecodeState {
            annotations: g.value(enc.annotations).clone(),
            keys: g.value(enc.keys).clone(),
            states: enc.states.iter().map(|&s| g.value(s).clone()).collect(),
        })
    }

    /// Advance every row of `st` by one token; returns log-probabilities and attention rows.
    fn advance(&self, st: &mut DecodeState, prev: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), ArnnError> {
        let mut g = Graph::new();
        let enc = Encoded {
            annotations: g.input(st.annotations.clone())?,
            keys: g.input(st.keys.clone())?,
            states: Vec::new(),
        };
        let mut states = Vec::with_capacity(st.states.len());
        for s in &st.states {
            states.push(g.input(s.clone())?);
        }
        let (logits, weights) = self.step(&mut g, &enc, &mut states, prev)?;
        st.states = states.iter().map(|&s| g.value(s).clone()).collect();
        let lv = g.value(logits);
        let log_probs = (0..prev.len()).map(|i| log_softmax(lv.row(i))).collect();
        let wv = g.value(weights);
        let attention = (0..prev.len()).map(|i| wv.row(i).iter().map(|&w| w as f64).collect()).collect();
        Ok((log_probs, attention))
    }

    /// Greedy decoding of a batch of source sentences.
    pub fn decode_greedy(&self, sources: &[&[usize]]) -> Result<Vec<Decoded>, ArnnError> {
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        let mut st = self.start(sources)?;
        let mut out: Vec<Decoded> = sources
            .iter()
            .map(|_| Decoded {
                tokens: Vec::new(),
                attention: Vec::new(),
                log_prob: 0.0,
            })
            .collect();
        let mut prev = vec![GO; sources.len()];
        for _ in 0..self.config.max_len() {
            if out.iter().all(|d| d.tokens.last() == Some(&EOS)) {
                break;
            }
            let (log_probs, attention) = self.advance(&mut st, &prev)?;
            for (i, d) in out.iter_mut().enumerate() {
                if d.tokens.last() == Some(&EOS) {
                    continue;
                }
                let tok = argmax_f64(&log_probs[i]);
                d.tokens.push(tok);
                d.log_prob += log_probs[i][tok];
                d.attention.push(attention[i].clone());
                prev[i] = tok;
            }
        }
        Ok(out)
    }

    /// Beam search over one source sentence; width 1 is greedy decoding.
    pub fn decode_beam(&self, source: &[usize], width: usize) -> Result<Decoded, ArnnError> {
        if width <= 1 {
            return Ok(self.decode_greedy(&[source])?.remove(0));
        }
        let mut st = self.start(&[source])?;
        let mut live = vec![Decoded {
            tokens: Vec::new(),
            attention: Vec::new(),
            log_prob: 0.0,
        }];
        let mut finished: Vec<Decoded> = Vec::new();
        for _ in 0..self.config.max_len() {
            let prev: Vec<usize> = live.iter().map(|d| d.tokens.last().copied().unwrap_or(GO)).collect();
            let (log_probs, attention) = self.advance(&mut st, &prev)?;
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            for (i, lp) in log_probs.iter().enumerate() {
                for (tok, &l) in lp.iter().enumerate() {
                    candidates.push((live[i].log_prob + l, i, tok));
                }
            }
            // Highest score first; ties by beam, then token.
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            let mut rows = Vec::new();
            for &(score, i, tok) in candidates.iter().take(width) {
                let mut d = live[i].clone();
                d.tokens.push(tok);
                d.attention.push(attention[i].clone());
                d.log_prob = score;
                if tok == EOS {
                    finished.push(d);
                } else {
                    next.push(d);
                    rows.push(i);
                }
            }
            let best_finished = finished.iter().map(|d| d.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if next.is_empty() || next.iter().all(|d| d.log_prob <= best_finished) {
                live = next;
                break;
            }
            st.states = st.states.iter().map(|s| gather_rows(s, &rows)).collect();
            st.annotations = gather_rows(&st.annotations, &vec![0; rows.len()]);
            st.keys = gather_rows(&st.keys, &vec![0; rows.len()]);
            live = next;
        }
        finished.extend(live);
        let mut best = finished.swap_remove(0);
        for d in finished {
            if d.log_prob > best.log_prob {
                best = d;
            }
        }
        Ok(best)
    }

    /// Decode a source sentence with the configured beam width.
    pub fn decode(&self, source: &[usize]) -> Result<Decoded, ArnnError> {
        self.decode_beam(source, self.config.beam_width)
    }

    /// Parse decoded tokens into a prescription.
    pub fn finish(&self, decoded: Decoded) -> Result<TranslationResult, ArnnError> {
        match parse_target(&self.target_vocab.decode(&decoded.tokens)) {
            Ok(prescription) => Ok(TranslationResult {
                tokens: TokenSequence {
                    role: Role::Target,
                    tokens: decoded.tokens,
                },
                attention: decoded.attention,
                prescription,
            }),
            Err(error) => Err(ArnnError::Grammar {
                tokens: decoded.tokens,
                error,
            }),
        }
    }

    pub fn translate(&self, ph: &Phenotype) -> Result<TranslationResult, ArnnError> {
        let (src, _) = tokenize_source(ph, &self.source_vocab);
        let decoded = self.decode(&src.tokens)?;
        self.finish(decoded)
    }

    /// Translate many phenotypes; the outer error is for model failures,
    /// the inner ones for grammar failures of single sentences.
    pub fn translate_all(&self, phenotypes: &[Phenotype], batch: usize) -> Result<Vec<Result<TranslationResult, ArnnError>>, ArnnError> {
        let sources: Vec<TokenSequence> = phenotypes.iter().map(|p| tokenize_source(p, &self.source_vocab).0).collect();
        let mut out = Vec::with_capacity(sources.len());
        if self.config.beam_width > 1 {
            for s in &sources {
                out.push(self.finish(self.decode(&s.tokens)?));
            }
            return Ok(out);
        }
        for chunk in sources.chunks(batch.max(1)) {
            let refs: Vec<&[usize]> = chunk.iter().map(|s| s.tokens.as_slice()).collect();
            for d in self.decode_greedy(&refs)? {
                out.push(self.finish(d));
            }
        }
        Ok(out)
    }

    /// Decoder input-embedding table `[target vocab, embedding]`, rows in
    /// vocabulary order, PAD, GO, EOS and UNK included.
    pub fn export_decoder_embeddings(&self) -> Tensor<f32> {
        self.params.get(self.target_embedding.table).clone()
    }
}

fn check_range(tokens: &[usize], size: usize) -> Result<(), ArnnError> {
    match tokens.iter().find(|&&t| t >= size) {
        Some(&token) => Err(ArnnError::TokenOutOfRange { token, size }),
        None => Ok(()),
    }
}

fn gather_rows(t: &Tensor<f32>, rows: &[usize]) -> Tensor<f32> {
    let width = t.len() / t.shape()[0].max(1);
    let mut data = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(shape, data).unwrap_or_else(|_| unreachable!())
}

fn log_sum_exp(row: &[f32]) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    m + libm::log(row.iter().map(|&v| libm::exp(v as f64 - m)).sum::<f64>())
}

fn log_softmax_at(row: &[f32], i: usize) -> f64 {
    row[i] as f64 - log_sum_exp(row)
}

fn log_softmax(row: &[f32]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|&v| v as f64 - lse).collect()
}

fn argmax_f32(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn argmax_f64(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
