use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Arnn;
use super::ArnnError;
use crate::corpus::{tokenize_source, tokenize_target, Record, TokenSequence, Vocabulary};
use crate::nn::optim::{clip_global_norm, Adam, AdamConfig};
use crate::nn::Graph;

/// Source and target sentence of one record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub source: TokenSequence,
    pub target: TokenSequence,
}

/// Tokenize records, dropping those whose target exceeds `max_len`.
/// Returns the pairs, the indices of the kept records and the drop count.
pub fn make_pairs(records: &[Record], source: &Vocabulary, target: &Vocabulary, max_len: usize) -> (Vec<Pair>, Vec<usize>, usize) {
    let mut pairs = Vec::with_capacity(records.len());
    let mut kept = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let (t, _) = tokenize_target(&r.prescription, target);
        if t.tokens.len() > max_len {
            continue;
        }
        let (s, _) = tokenize_source(&r.phenotype, source);
        pairs.push(Pair { source: s, target: t });
        kept.push(i);
    }
    let dropped = records.len() - pairs.len();
    (pairs, kept, dropped)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct ArnnTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Batches per point of the running training-perplexity curve.
    pub log_every: usize,
}

impl Default for ArnnTrainConfig {
    fn default() -> Self {
        ArnnTrainConfig {
            epochs: 6,
            batch_size: 32,
            learning_rate: 5e-3,
            clip_norm: 5.0,
            seed: 0,
            log_every: 50,
        }
    }
}

/// Perplexity of one bucket; `None` when it holds no tokens.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BucketPerplexity {
    pub bucket: usize,
    pub sequences: usize,
    pub tokens: usize,
    pub perplexity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerplexityReport {
    pub perplexity: f64,
    pub tokens: usize,
    pub buckets: Vec<BucketPerplexity>,
}

/// Accumulated negative log-likelihood per bucket.
#[derive(Clone, Debug)]
struct NllTally {
    buckets: Vec<usize>,
    nll: Vec<f64>,
    tokens: Vec<usize>,
    sequences: Vec<usize>,
}

impl NllTally {
    fn new(buckets: &[usize]) -> Self {
        let n = buckets.len();
        NllTally {
            buckets: buckets.to_vec(),
            nll: vec![0.0; n],
            tokens: vec![0; n],
            sequences: vec![0; n],
        }
    }

    fn add(&mut self, bucket: usize, nll: f64, tokens: usize, sequences: usize) {
        self.nll[bucket] += nll;
        self.tokens[bucket] += tokens;
        self.sequences[bucket] += sequences;
    }

    fn report(&self) -> Result<PerplexityReport, ArnnError> {
        let tokens: usize = self.tokens.iter().sum();
        if tokens == 0 {
            return Err(ArnnError::Empty);
        }
        let nll: f64 = self.nll.iter().sum();
        let buckets = (0..self.buckets.len())
            .map(|k| BucketPerplexity {
                bucket: self.buckets[k],
                sequences: self.sequences[k],
                tokens: self.tokens[k],
                perplexity: (self.tokens[k] > 0).then(|| libm::exp(self.nll[k] / self.tokens[k] as f64)),
            })
            .collect();
        Ok(PerplexityReport {
            perplexity: libm::exp(nll / tokens as f64),
            tokens,
            buckets,
        })
    }
}

/// `exp` of the mean negative log-probability.
pub fn perplexity_from_log_probs(log_probs: &[f64]) -> Result<f64, ArnnError> {
    if log_probs.is_empty() {
        return Err(ArnnError::Empty);
    }
    Ok(libm::exp(-log_probs.iter().sum::<f64>() / log_probs.len() as f64))
}

/// Group pair indices by the smallest configured bucket holding the target.
pub fn bucket_pairs(pairs: &[Pair], buckets: &[usize]) -> Result<Vec<Vec<usize>>, ArnnError> {
    let mut out = vec![Vec::new(); buckets.len()];
    for (i, p) in pairs.iter().enumerate() {
        let len = p.target.tokens.len();
        let k = buckets.iter().position(|&b| len <= b).ok_or(ArnnError::TooLong {
            len,
            max: buckets.last().copied().unwrap_or(0),
        })?;
        out[k].push(i);
    }
    Ok(out)
}

/// Per-token perplexity over `pairs`, overall and per bucket.
pub fn perplexity(model: &Arnn, pairs: &[Pair]) -> Result<PerplexityReport, ArnnError> {
    let buckets = &model.config().buckets;
    let groups = bucket_pairs(pairs, buckets)?;
    let mut tally = NllTally::new(buckets);
    for (k, members) in groups.iter().enumerate() {
        for chunk in members.chunks(256) {
            let (src, tgt) = views(pairs, chunk);
            for lp in model.token_log_probs(&src, &tgt)? {
                tally.add(k, -lp.iter().sum::<f64>(), lp.len(), 1);
            }
        }
    }
    tally.report()
}

fn views<'a>(pairs: &'a [Pair], idx: &[usize]) -> (Vec<&'a [usize]>, Vec<&'a [usize]>) {
    (
        idx.iter().map(|&i| pairs[i].source.tokens.as_slice()).collect(),
        idx.iter().map(|&i| pairs[i].target.tokens.as_slice()).collect(),
    )
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArnnEpoch {
    pub epoch: usize,
    /// Running perplexity of the training batches of this epoch.
    pub train: PerplexityReport,
    pub test: Option<PerplexityReport>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArnnTrainReport {
    /// Untrained model on the training set.
    pub initial: PerplexityReport,
    pub initial_test: Option<PerplexityReport>,
    pub epochs: Vec<ArnnEpoch>,
    /// Running training perplexity every `log_every` batches.
    pub curve: Vec<f64>,
}

/// Adam with teacher forcing over bucketed batches; deterministic under
/// `cfg.seed`. Every target must fit the largest bucket.
pub fn train(model: &mut Arnn, train: &[Pair], test: &[Pair], cfg: &ArnnTrainConfig, mut progress: impl FnMut(&ArnnEpoch)) -> Result<ArnnTrainReport, ArnnError> {
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(ArnnError::Empty);
    }
    let buckets = model.config().buckets.clone();
    let groups = bucket_pairs(train, &buckets)?;
    bucket_pairs(test, &buckets)?;
    for p in train.iter().chain(test) {
        model.check_target(&p.target.tokens)?;
    }
    let mut report = ArnnTrainReport {
        initial: perplexity(model, train)?,
        initial_test: if test.is_empty() { None } else { Some(perplexity(model, test)?) },
        epochs: Vec::new(),
        curve: Vec::new(),
    };
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let log_every = cfg.log_every.max(1);
    let (mut window_nll, mut window_tokens, mut window_batches) = (0.0, 0usize, 0usize);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut batches: Vec<(usize, Vec<usize>)> = Vec::new();
        for (k, members) in groups.iter().enumerate() {
            let mut m = members.clone();
            m.shuffle(&mut rng);
            batches.extend(m.chunks(cfg.batch_size).map(|c| (k, c.to_vec())));
        }
        batches.shuffle(&mut rng);
        let mut tally = NllTally::new(&buckets);
        for (k, chunk) in &batches {
            let (src, tgt) = views(train, chunk);
            let mut g = Graph::new();
            let (loss, count) = model.loss(&mut g, &src, &tgt)?;
            let nll = g.value(loss).data()[0] as f64 * count as f64;
            tally.add(*k, nll, count, chunk.len());
            let mut grads = g.backward(loss)?;
            if cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, cfg.clip_norm)?;
            }
            adam.step(model.params_mut(), &grads)?;
            window_nll += nll;
            window_tokens += count;
            window_batches += 1;
            if window_batches == log_every {
                report.curve.push(libm::exp(window_nll / window_tokens as f64));
                (window_nll, window_tokens, window_batches) = (0.0, 0, 0);
            }
        }
        let stats = ArnnEpoch {
            epoch: epoch + 1,
            train: tally.report()?,
            test: if test.is_empty() { None } else { Some(perplexity(model, test)?) },
        };
        progress(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}
