use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EncodedVector, VECTOR_LEN};
use crate::nn::layers::{Conv1d, Dense};
use crate::nn::{Graph, NnError, ParamStore, Tensor, Var};

pub const N_HEADS: usize = 7;
pub const HEAD_NAMES: [&str; N_HEADS] = ["primary", "secondary", "tertiary", "sex", "age", "month", "year"];
/// Head sizes of the full-scale model.
pub const PAPER_HEADS: [usize; N_HEADS] = [909, 909, 909, 2, 105, 12, 10];

/// How the trunk output reaches the shared dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum TrunkPool {
    /// Keep every channel/position; preserves which band an activation came from.
    Flatten,
    GlobalAverage,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct RcnnConfig {
    pub input_len: usize,
    /// Filters of the parallel first-layer groups; all see the full input.
    pub group_filters: Vec<usize>,
    pub group_kernel: usize,
    /// Max-pool window after the first layer (1 disables).
    pub group_pool: usize,
    pub trunk_filters: usize,
    pub trunk_kernel: usize,
    pub trunk_pool: usize,
    pub residual_blocks: usize,
    pub residual_kernel: usize,
    /// Max-pool window between residual blocks.
    pub block_pool: usize,
    pub pool: TrunkPool,
    pub dense: usize,
    pub head_sizes: Vec<usize>,
    pub head_weights: Vec<f64>,
    pub seed: u64,
}

impl RcnnConfig {
    /// Desk preset for a corpus with `n_diseases` codes.
    pub fn desk(n_diseases: usize, seed: u64) -> Self {
        RcnnConfig {
            input_len: VECTOR_LEN,
            group_filters: vec![2, 3, 8],
            group_kernel: 9,
            group_pool: 2,
            trunk_filters: 14,
            trunk_kernel: 5,
            trunk_pool: 2,
            residual_blocks: 2,
            residual_kernel: 3,
            block_pool: 2,
            pool: TrunkPool::Flatten,
            dense: 128,
            head_sizes: desk_heads(n_diseases).to_vec(),
            head_weights: vec![1.0; N_HEADS],
            seed,
        }
    }

    pub fn paper(seed: u64) -> Self {
        RcnnConfig {
            head_sizes: PAPER_HEADS.to_vec(),
            ..RcnnConfig::desk(909, seed)
        }
    }

    /// Sequence length after the last residual block.
    pub fn trunk_len(&self) -> usize {
        let mut l = self.input_len / self.group_pool.max(1);
        l /= self.trunk_pool.max(1);
        for _ in 1..self.residual_blocks {
            l /= self.block_pool.max(1);
        }
        l
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.head_sizes.len() != N_HEADS || self.head_weights.len() != N_HEADS {
            return Err(NnError::Invalid("the classifier has exactly seven heads"));
        }
        if self.head_sizes.iter().any(|&h| h < 2) {
            return Err(NnError::Invalid("every head needs at least two classes"));
        }
        if self.group_filters.is_empty() || self.group_filters.contains(&0) {
            return Err(NnError::Invalid("empty filter group"));
        }
        if [self.group_kernel, self.trunk_kernel, self.residual_kernel].iter().any(|k| k % 2 == 0) {
            return Err(NnError::Invalid("kernels must be odd"));
        }
        if self.trunk_filters == 0 || self.dense == 0 || self.trunk_len() == 0 {
            return Err(NnError::Invalid("degenerate trunk"));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let g: usize = self.group_filters.iter().map(|&f| f * self.group_kernel + f).sum();
        let c0: usize = self.group_filters.iter().sum();
        let f = self.trunk_filters;
        let trunk = f * c0 * self.trunk_kernel + f;
        let res = self.residual_blocks * 2 * (f * f * self.residual_kernel + f);
        let flat = match self.pool {
            TrunkPool::Flatten => f * self.trunk_len(),
            TrunkPool::GlobalAverage => f,
        };
        let dense = flat * self.dense + self.dense;
        let heads: usize = self.head_sizes.iter().map(|&h| self.dense * h + h).sum();
        g + trunk + res + dense + heads
    }
}

/// `[n, n + 1, n + 1, 2, 105, 12, 10]`; class 0 of the secondary and tertiary heads is "absent".
pub fn desk_heads(n_diseases: usize) -> [usize; N_HEADS] {
    [n_diseases, n_diseases + 1, n_diseases + 1, 2, 105, 12, 10]
}

#[derive(Clone, Debug)]
struct Block {
    a: Conv1d,
    b: Conv1d,
}

/// Residual multitask convolutional classifier.
#[derive(Clone, Debug)]
pub struct Rcnn {
    config: RcnnConfig,
    store: ParamStore<f32>,
    groups: Vec<Conv1d>,
    trunk: Conv1d,
    blocks: Vec<Block>,
    dense: Dense,
    heads: Vec<Dense>,
}

/// Per-head probability vectors for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct MultitaskPrediction {
    pub heads: Vec<Vec<f64>>,
}

impl MultitaskPrediction {
    /// Argmax per head; ties go to the lowest class.
    pub fn classes(&self) -> [usize; N_HEADS] {
        let mut out = [0; N_HEADS];
        for (o, h) in out.iter_mut().zip(&self.heads) {
            *o = argmax(h);
        }
        out
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl Rcnn {
    pub fn new(config: RcnnConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let groups = config
            .group_filters
            .iter()
            .enumerate()
            .map(|(i, &f)| Conv1d::new(&mut store, &mut rng, &format!("group{i}"), 1, f, config.group_kernel))
            .collect();
        let c0 = config.group_filters.iter().sum();
        let f = config.trunk_filters;
        let trunk = Conv1d::new(&mut store, &mut rng, "trunk", c0, f, config.trunk_kernel);
        let blocks = (0..config.residual_blocks)
            .map(|i| Block {
                a: Conv1d::new(&mut store, &mut rng, &format!("res{i}.a"), f, f, config.residual_kernel),
                b: Conv1d::new(&mut store, &mut rng, &format!("res{i}.b"), f, f, config.residual_kernel),
            })
            .collect();
        let flat = match config.pool {
            TrunkPool::Flatten => f * config.trunk_len(),
            TrunkPool::GlobalAverage => f,
        };
        let dense = Dense::new(&mut store, &mut rng, "shared", flat, config.dense);
        let heads = HEAD_NAMES
            .iter()
            .zip(&config.head_sizes)
            .map(|(name, &h)| Dense::new(&mut store, &mut rng, &format!("head.{name}"), config.dense, h))
            .collect();
        Ok(Rcnn {
            config,
            store,
            groups,
            trunk,
            blocks,
            dense,
            heads,
        })
    }

    pub fn config(&self) -> &RcnnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    /// Stacks inputs into `[b, 1, input_len]`.
    pub fn batch_tensor(&self, inputs: &[&EncodedVector]) -> Result<Tensor<f32>, NnError> {
        let l = self.config.input_len;
        let mut data = Vec::with_capacity(inputs.len() * l);
        for v in inputs {
            if v.values().len() != l {
                return Err(NnError::BadLength {
                    len: v.values().len(),
                    shape: vec![1, l],
                });
            }
            data.extend_from_slice(v.values());
        }
        Tensor::new(vec![inputs.len(), 1, l], data)
    }

    /// Head logits, each `[b, h]`.
    pub fn logits(&self, g: &mut Graph<f32>, x: Var) -> Result<Vec<Var>, NnError> {
        let s = &self.store;
        let cfg = &self.config;
        let mut parts = Vec::with_capacity(self.groups.len());
        for grp in &self.groups {
            let y = grp.forward(g, s, x)?;
            parts.push(g.relu(y)?);
        }
        let mut h = g.concat(&parts, 1)?;
        if cfg.group_pool > 1 {
            h = g.max_pool1d(h, cfg.group_pool)?;
        }
        h = self.trunk.forward(g, s, h)?;
        h = g.relu(h)?;
        if cfg.trunk_pool > 1 {
            h = g.max_pool1d(h, cfg.trunk_pool)?;
        }
        for (i, blk) in self.blocks.iter().enumerate() {
            if i > 0 && cfg.block_pool > 1 {
                h = g.max_pool1d(h, cfg.block_pool)?;
            }
            let a = blk.a.forward(g, s, h)?;
            let a = g.relu(a)?;
            let b = blk.b.forward(g, s, a)?;
            let sum = g.add(b, h)?;
            h = g.relu(sum)?;
        }
        let bs = g.shape(h)[0];
        let flat = match cfg.pool {
            TrunkPool::Flatten => {
                let n = g.value(h).len() / bs;
                g.reshape(h, vec![bs, n])?
            }
            TrunkPool::GlobalAverage => g.global_avg_pool(h)?,
        };
        let d = self.dense.forward(g, s, flat)?;
        let d = g.relu(d)?;
        self.heads.iter().map(|head| head.forward(g, s, d)).collect()
    }

    /// Weighted sum over heads of mean cross-entropy.
    pub fn loss(&self, g: &mut Graph<f32>, inputs: &[&EncodedVector], labels: &[[usize; N_HEADS]]) -> Result<Var, NnError> {
        if inputs.len() != labels.len() || inputs.is_empty() {
            return Err(NnError::Invalid("inputs and labels differ in length or are empty"));
        }
        let x = g.input(self.batch_tensor(inputs)?)?;
        let logits = self.logits(g, x)?;
        let scale = 1.0 / inputs.len() as f64;
        let mut total: Option<Var> = None;
        for (h, &lv) in logits.iter().enumerate() {
            let targets: Vec<Option<usize>> = labels.iter().map(|l| Some(l[h])).collect();
            let term = g.softmax_cross_entropy(lv, &targets, scale * self.config.head_weights[h])?;
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
        }
        total.ok_or(NnError::Invalid("no heads"))
    }

    pub fn predict_batch(&self, inputs: &[&EncodedVector]) -> Result<Vec<MultitaskPrediction>, NnError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = g.input(self.batch_tensor(inputs)?)?;
        let logits = self.logits(&mut g, x)?;
        let mut out: Vec<MultitaskPrediction> = (0..inputs.len()).map(|_| MultitaskPrediction { heads: Vec::with_capacity(N_HEADS) }).collect();
        for lv in logits {
            let t = g.value(lv);
            let h = t.shape()[1];
            for (i, row) in t.data().chunks(h).enumerate() {
                out[i].heads.push(softmax64(row));
            }
        }
        Ok(out)
    }

    pub fn predict(&self, v: &EncodedVector) -> Result<MultitaskPrediction, NnError> {
        Ok(self.predict_batch(&[v])?.remove(0))
    }

    /// Predictions in chunks of `batch`.
    pub fn predict_all(&self, inputs: &[EncodedVector], batch: usize) -> Result<Vec<MultitaskPrediction>, NnError> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(batch.max(1)) {
            let refs: Vec<&EncodedVector> = chunk.iter().collect();
            out.extend(self.predict_batch(&refs)?);
        }
        Ok(out)
    }
}

fn softmax64(row: &[f32]) -> Vec<f64> {
    let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let e: Vec<f64> = row.iter().map(|&v| libm::exp(v as f64 - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
