//! Parameterized layers built from graph primitives.

use alloc::format;
use alloc::vec;

use rand::Rng;

use super::init::xavier_uniform;
use super::{Graph, NnError, ParamId, ParamStore, Real, Tensor, Var};

/// Fully connected layer, `x [n, i] -> [n, o]`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, rng: &mut R, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, vec![inputs, outputs], inputs, outputs));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![outputs]));
        Dense { weight, bias }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

/// Same-padded 1-d convolution over `[batch, channels, length]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, rng: &mut R, name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        let w = xavier_uniform(rng, vec![out_channels, in_channels, kernel], in_channels * kernel, out_channels * kernel);
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_channels]));
        Conv1d { weight, bias }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var) -> Result<Var, NnError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, rng: &mut R, name: &str, rows: usize, width: usize) -> Self {
        let table = store.add(format!("{name}.table"), xavier_uniform(rng, vec![rows, width], rows, width));
        Embedding { table }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, ids: &[usize]) -> Result<Var, NnError> {
        let t = g.param(store, self.table);
        g.embedding(t, ids)
    }
}

/// Gated recurrent unit.
///
/// ```text
/// r  = sigmoid(x Wr + h Ur + br)
/// u  = sigmoid(x Wu + h Uu + bu)
/// n  = tanh(x Wn + bn + r * (h Un + cn))
/// h' = n + u * (h - n)
/// ```
///
/// The three input projections share one `[input, 3 * hidden]` matrix, and
/// likewise for the recurrent ones.
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub input_weight: ParamId,
    pub input_bias: ParamId,
    pub hidden_weight: ParamId,
    pub hidden_bias: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, rng: &mut R, name: &str, input: usize, hidden: usize) -> Self {
        let input_weight = store.add(format!("{name}.wx"), xavier_uniform(rng, vec![input, 3 * hidden], input, hidden));
        let input_bias = store.add(format!("{name}.bx"), Tensor::zeros(vec![3 * hidden]));
        let hidden_weight = store.add(format!("{name}.wh"), xavier_uniform(rng, vec![hidden, 3 * hidden], hidden, hidden));
        let hidden_bias = store.add(format!("{name}.bh"), Tensor::zeros(vec![3 * hidden]));
        GruCell {
            input_weight,
            input_bias,
            hidden_weight,
            hidden_bias,
            hidden,
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, x: Var, h: Var) -> Result<Var, NnError> {
        let hs = self.hidden;
        let wx = g.param(store, self.input_weight);
        let bx = g.param(store, self.input_bias);
        let wh = g.param(store, self.hidden_weight);
        let bh = g.param(store, self.hidden_bias);
        let gx = g.matmul(x, wx)?;
        let gx = g.add_bias(gx, bx)?;
        let gh = g.matmul(h, wh)?;
        let gh = g.add_bias(gh, bh)?;

        let xr = g.slice_last(gx, 0, hs)?;
        let hr = g.slice_last(gh, 0, hs)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;

        let xu = g.slice_last(gx, hs, hs)?;
        let hu = g.slice_last(gh, hs, hs)?;
        let u = g.add(xu, hu)?;
        let u = g.sigmoid(u)?;

        let xn = g.slice_last(gx, 2 * hs, hs)?;
        let hn = g.slice_last(gh, 2 * hs, hs)?;
        let rhn = g.mul(r, hn)?;
        let n = g.add(xn, rhn)?;
        let n = g.tanh(n)?;

        let diff = g.sub(h, n)?;
        let gated = g.mul(u, diff)?;
        g.add(n, gated)
    }
}

/// Additive attention: `score(q, k) = v . tanh(q Wq + k Wk)`.
#[derive(Clone, Copy, Debug)]
pub struct AdditiveAttention {
    pub query_weight: ParamId,
    pub key_weight: ParamId,
    pub score_weight: ParamId,
    pub width: usize,
}

/// Output of one attention read.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub context: Var,
    pub weights: Var,
}

impl AdditiveAttention {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, rng: &mut R, name: &str, query: usize, key: usize, width: usize) -> Self {
        let query_weight = store.add(format!("{name}.wq"), xavier_uniform(rng, vec![query, width], query, width));
        let key_weight = store.add(format!("{name}.wk"), xavier_uniform(rng, vec![key, width], key, width));
        let score_weight = store.add(format!("{name}.v"), xavier_uniform(rng, vec![width, 1], width, 1));
        AdditiveAttention {
            query_weight,
            key_weight,
            score_weight,
            width,
        }
    }

    /// Project keys `[b, t, k]` once per source sentence: `[b, t, width]`.
    pub fn project_keys<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, keys: Var) -> Result<Var, NnError> {
        let s = g.shape(keys).to_vec();
        if s.len() != 3 {
            return Err(NnError::ShapeMismatch {
                op: "attention keys",
                left: s,
                right: vec![0, 0, 0],
            });
        }
        let flat = g.reshape(keys, vec![s[0] * s[1], s[2]])?;
        let wk = g.param(store, self.key_weight);
        let p = g.matmul(flat, wk)?;
        g.reshape(p, vec![s[0], s[1], self.width])
    }

    /// Attend over `values [b, t, h]` with `query [b, q]` and keys already projected.
    pub fn attend<F: Real>(&self, g: &mut Graph<F>, store: &ParamStore<F>, query: Var, projected_keys: Var, values: Var) -> Result<Attended, NnError> {
        let ks = g.shape(projected_keys).to_vec();
        let (b, t) = (ks[0], ks[1]);
        let wq = g.param(store, self.query_weight);
        let q = g.matmul(query, wq)?;
        let e = g.add_broadcast_mid(projected_keys, q)?;
        let e = g.tanh(e)?;
        let e = g.reshape(e, vec![b * t, self.width])?;
        let v = g.param(store, self.score_weight);
        let scores = g.matmul(e, v)?;
        let scores = g.reshape(scores, vec![b, t])?;
        let weights = g.softmax(scores)?;
        let context = g.weighted_sum(weights, values)?;
        Ok(Attended { context, weights })
    }
}
