//! Central-difference verification of the reverse pass.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{AdditiveAttention, Conv1d, Dense, Embedding, GruCell};
use super::{Graph, NnError, ParamStore, Tensor, Var};

/// Denominator floor of the relative error, so that vanishing gradients are
/// compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR)`
/// over every parameter element, where numeric is
/// `(f(x + eps) - f(x - eps)) / (2 eps)`.
pub fn grad_check<L>(store: &mut ParamStore<f64>, eps: f64, loss: L) -> Result<f64, NnError>
where
    L: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, NnError>,
{
    let mut g = Graph::new();
    let root = loss(&mut g, store)?;
    let grads = g.backward(root)?;

    let eval = |store: &ParamStore<f64>| -> Result<f64, NnError> {
        let mut g = Graph::new();
        let root = loss(&mut g, store)?;
        Ok(g.value(root).data()[0])
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        for i in 0..n {
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[i]);
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Values bounded away from zero, so relu kinks stay out of the `eps` window.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Contract `y` with a fixed random tensor so every output element carries
/// a distinct upstream gradient.
fn project(g: &mut Graph<f64>, y: Var, probe: &Tensor<f64>) -> Result<Var, NnError> {
    let p = g.input(probe.clone())?;
    let m = g.mul(y, p)?;
    g.sum(m)
}

fn check_with_probe<B>(rng: &mut ChaCha8Rng, store: &mut ParamStore<f64>, eps: f64, build: B) -> Result<f64, NnError>
where
    B: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, NnError>,
{
    let mut g = Graph::new();
    let y = build(&mut g, store)?;
    let probe = random_tensor(rng, g.shape(y).to_vec(), -1.0, 1.0);
    grad_check(store, eps, |g, s| {
        let y = build(g, s)?;
        project(g, y, &probe)
    })
}

/// Gradient check of every layer type on random shapes. Returns
/// `(layer, max relative error)` pairs.
pub fn layer_suite(seed: u64, eps: f64) -> Result<Vec<(String, f64)>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |name: &str, err: f64| out.push((String::from(name), err));

    {
        let mut s = ParamStore::new();
        let (b, c, l) = (2, rng.random_range(1..4), rng.random_range(6..14));
        let o = rng.random_range(2..5);
        let x = s.add("x", random_tensor(&mut rng, vec![b, c, l], -1.0, 1.0));
        let conv = Conv1d::new(&mut s, &mut rng, "conv", c, o, 5);
        let bias = random_tensor(&mut rng, vec![o], -0.5, 0.5);
        *s.get_mut(conv.bias) = bias;
        let err = check_with_probe(&mut rng, &mut s, eps, |g, s| {
            let xv = g.param(s, x);
            conv.forward(g, s, xv)
        })?;
        record("conv1d", err);
    }
    {
        let mut s = ParamStore::new();
        let n = rng.random_range(3..10);
        let t = away_from_zero(&mut rng, vec![n]);
        let x = s.add("x", t);
        let err = check_with_probe(&mut rng, &mut s, eps, |g, s| {
            let xv = g.param(s, x);
            g.relu(xv)
        })?;
        record("relu", err);
    }
    {
        let mut s = ParamStore::new();
        let (n, i, o) = (3, rng.random_range(2..7), rng.random_range(2..7));
        let x = s.add("x", random_tensor(&mut rng, vec![n, i], -1.0, 1.0));
        let dense = Dense::new(&mut s, &mut rng, "dense", i, o);
        *s.get_mut(dense.bias) = random_tensor(&mut rng, vec![o], -0.5, 0.5);
        let err = check_with_probe(&mut rng, &mut s, eps, |g, s| {
            let xv = g.param(s, x);
            dense.forward(g, s, xv)
        })?;
        record("dense", err);
    }
    {
        let mut s = ParamStore::new();
        let shape = vec![2, 3, rng.random_range(3..8)];
        let a = s.add("a", random_tensor(&mut rng, shape.clone(), -1.0, 1.0));
        let b = s.add("b", random_tensor(&mut rng, shape, -1.0, 1.0));
        let err = check_with_probe(&mut rng, &mut s, eps, |g, s| {
            let av = g.param(s, a);
            let bv = g.param(s, b);
            // fan-out of `a` into both branches of the shortcut
            let t = g.tanh(av)?;
            let sum = g.add(t, bv)?;
            g.add(sum, av)
        })?;
        record("add", err);
    }
    {
        let mut s = ParamStore::new();
        let (b, c, l) = (2, 2, 2 * rng.random_range(2..6));
        let n = b * c * l;
        // well separated distinct values keep the argmax stable under +-eps
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 0.3 * n as f64 / 10.0).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            vals.swap(i, j);
        }
        let x = s.add("x", Tensor::new(vec![b, c, l], vals).unwrap());
        let err = check_with_probe(&mut rng, &mut s, eps, |g, s| {
            let xv = g.param(s, x);
            g.max_pool1d(xv, 2)
        })?;
        record("max_pool1d", err);
    }
    {
        let mut s = ParamStore::new();
        let l = rng.random_range(2..9);
        let x = s.add("x", random_tensor(&mut rng, vec![2, 3, l], -1.0, 1.0));
        let err = check_with_probe(&mut rng, &mut s, eps, |g, s| {
            let xv = g.param(s, x);
            g.global_avg_pool(xv)
        })?;
        record("global_avg_pool", err);
    }
    {
        let mut s = ParamStore::new();
        let (v, e) = (rng.random_range(3..8), rng.random_range(2..6));
        let emb = Embedding::new(&mut s, &mut rng, "emb", v, e);
        let ids: Vec<usize> = (0..6).map(|i| if i % 3 == 0 { 1 } else { rng.random_range(0..v) }).collect();
        let err = check_with_probe(&mut rng, &mut s, eps, |g, s| emb.forward(g, s, &ids))?;
        record("embedding_lookup", err);
    }
    {
        let mut s = ParamStore::new();
        let (b, i, h) = (2, rng.random_range(2..6), rng.random_range(2..6));
        let x = s.add("x", random_tensor(&mut rng, vec![b, i], -1.0, 1.0));
        let h0 = s.add("h", random_tensor(&mut rng, vec![b, h], -0.9, 0.9));
        let cell = GruCell::new(&mut s, &mut rng, "gru", i, h);
        *s.get_mut(cell.input_bias) = random_tensor(&mut rng, vec![3 * h], -0.3, 0.3);
        *s.get_mut(cell.hidden_bias) = random_tensor(&mut rng, vec![3 * h], -0.3, 0.3);
        let err = check_with_probe(&mut rng, &mut s, eps, |g, s| {
            let xv = g.param(s, x);
            let hv = g.param(s, h0);
            let h1 = cell.forward(g, s, xv, hv)?;
            // second step exercises the recurrent path through h1
            cell.forward(g, s, xv, h1)
        })?;
        record("gru_cell", err);
    }
    {
        let mut s = ParamStore::new();
        let (b, t, h, q, a) = (2, rng.random_range(2..6), 3, 4, 5);
        let values = s.add("values", random_tensor(&mut rng, vec![b, t, h], -1.0, 1.0));
        let query = s.add("query", random_tensor(&mut rng, vec![b, q], -1.0, 1.0));
        let att = AdditiveAttention::new(&mut s, &mut rng, "att", q, h, a);
        let err = check_with_probe(&mut rng, &mut s, eps, |g, s| {
            let vv = g.param(s, values);
            let qv = g.param(s, query);
            let keys = att.project_keys(g, s, vv)?;
            let out = att.attend(g, s, qv, keys, vv)?;
            let ctx = g.reshape(out.context, vec![b * h])?;
            let w = g.reshape(out.weights, vec![b * t])?;
            g.concat(&[ctx, w], 0)
        })?;
        record("additive_attention", err);
    }
    {
        let mut s = ParamStore::new();
        let c = rng.random_range(2..7);
        let x = s.add("x", random_tensor(&mut rng, vec![3, c], -2.0, 2.0));
        let err = check_with_probe(&mut rng, &mut s, eps, |g, s| {
            let xv = g.param(s, x);
            g.softmax(xv)
        })?;
        record("softmax", err);
    }
    {
        let mut s = ParamStore::new();
        let c = rng.random_range(2..7);
        let x = s.add("x", random_tensor(&mut rng, vec![4, c], -2.0, 2.0));
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..c)).collect();
        let err = grad_check(&mut s, eps, |g, s| {
            let xv = g.param(s, x);
            let p = g.softmax(xv)?;
            g.cross_entropy(p, &labels)
        })?;
        record("cross_entropy", err);
    }
    {
        let mut s = ParamStore::new();
        let c = rng.random_range(2..7);
        let x = s.add("x", random_tensor(&mut rng, vec![5, c], -2.0, 2.0));
        let targets: Vec<Option<usize>> = (0..5).map(|i| if i == 2 { None } else { Some(rng.random_range(0..c)) }).collect();
        let err = grad_check(&mut s, eps, |g, s| {
            let xv = g.param(s, x);
            g.softmax_cross_entropy(xv, &targets, 0.25)
        })?;
        record("softmax_cross_entropy", err);
    }
    {
        let mut s = ParamStore::new();
        let x = s.add("x", random_tensor(&mut rng, vec![2, 5], -2.0, 2.0));
        let y = s.add("y", random_tensor(&mut rng, vec![2, 3], -2.0, 2.0));
        let err = check_with_probe(&mut rng, &mut s, eps, |g, s| {
            let xv = g.param(s, x);
            let yv = g.param(s, y);
            let sg = g.sigmoid(xv)?;
            let sl = g.slice_last(sg, 1, 3)?;
            let prod = g.mul(sl, yv)?;
            let diff = g.sub(prod, yv)?;
            let sc = g.scale(diff, -1.5)?;
            g.concat(&[sc, sg], 1)
        })?;
        record("elementwise", err);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::new(vec![1], vec![3.0]).unwrap());
        let mut g = Graph::new();
        let xv = g.param(&s, x);
        let sq = g.mul(xv, xv).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
        let err = grad_check(&mut s, 1e-3, |g, s| {
            let xv = g.param(s, x);
            g.mul(xv, xv)
        })
        .unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn sum_of_relu_gradient_is_indicator() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::new(vec![5], vec![-1.0, 2.0, -0.5, 0.25, 3.0]).unwrap());
        let mut g = Graph::new();
        let xv = g.param(&s, x);
        let r = g.relu(xv).unwrap();
        let l = g.sum(r).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn every_layer_passes() {
        for seed in 0..3 {
            for (name, err) in layer_suite(seed, 1e-3).unwrap() {
                assert!(err < 1e-3, "{name}: {err}");
            }
        }
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(vec![2])).unwrap();
        assert!(matches!(g.backward(x), Err(NnError::NonScalarRoot(_))));
    }
}
