use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AnalysisError;
use crate::nn::init::standard_normal;

/// Largest input the exact O(n^2) variant accepts.
pub const MAX_POINTS: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct TsneConfig {
    pub dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    /// `None` picks `max(n / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub exaggeration: f64,
    /// Share of the iterations run with exaggerated affinities.
    pub exaggeration_fraction: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Iterations between recorded objective values.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            dims: 3,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: None,
            exaggeration: 12.0,
            exaggeration_fraction: 0.15,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            checkpoint_every: 25,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn learning_rate_for(&self, n: usize) -> f64 {
        self.learning_rate.unwrap_or_else(|| (n as f64 / self.exaggeration / 4.0).max(50.0))
    }

    pub fn exaggeration_iterations(&self) -> usize {
        libm::round(self.iterations as f64 * self.exaggeration_fraction) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TsneResult {
    pub coords: Vec<Vec<f64>>,
    /// `(iteration, KL(P || Q))` at every checkpoint and after the last iteration.
    pub objective: Vec<(usize, f64)>,
    pub exaggeration_iterations: usize,
}

impl TsneResult {
    /// Objective values recorded once exaggeration is over.
    pub fn post_exaggeration(&self) -> Vec<f64> {
        self.objective.iter().filter(|(i, _)| *i >= self.exaggeration_iterations).map(|(_, kl)| *kl).collect()
    }
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row `i` of the conditional affinities with the bandwidth binary-searched
/// so that the row entropy equals `ln(perplexity)`.
fn conditional_row(d: &[f64], i: usize, n: usize, target: f64, out: &mut [f64]) {
    let row = &d[i * n..(i + 1) * n];
    let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
    let min = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
    for _ in 0..200 {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            out[j] = if j == i { 0.0 } else { libm::exp(-beta * (row[j] - min)) };
            sum += out[j];
            weighted += out[j] * (row[j] - min);
        }
        let entropy = libm::log(sum) + beta * weighted / sum;
        for v in out.iter_mut() {
            *v /= sum;
        }
        let diff = entropy - target;
        if libm::fabs(diff) < 1e-10 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
}

/// Symmetrized input affinities `P`, row-major and summing to 1.
pub fn input_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>, AnalysisError> {
    let n = points.len();
    if !(perplexity > 0.0) || perplexity >= n as f64 {
        return Err(AnalysisError::BadPerplexity { perplexity, n });
    }
    let d = squared_distances(points);
    let target = libm::log(perplexity);
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        conditional_row(&d, i, n, target, &mut cond[i * n..(i + 1) * n]);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }
    Ok(p)
}

fn student_t(y: &[f64], n: usize, dims: usize, num: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in i + 1..n {
            let d2: f64 = (0..dims).map(|k| (y[i * dims + k] - y[j * dims + k]) * (y[i * dims + k] - y[j * dims + k])).sum();
            let v = 1.0 / (1.0 + d2);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    sum
}

fn kl(p: &[f64], num: &[f64], sum: f64) -> f64 {
    let mut total = 0.0;
    for (&pv, &nv) in p.iter().zip(num) {
        if pv > 0.0 && nv > 0.0 {
            let q = (nv / sum).max(1e-300);
            total += pv * libm::log(pv / q);
        }
    }
    total
}

/// Exact t-SNE; deterministic given `cfg.seed`.
pub fn tsne(points: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult, AnalysisError> {
    let n = points.len();
    if n > MAX_POINTS {
        return Err(AnalysisError::TooManyPoints(n));
    }
    if !(cfg.dims == 2 || cfg.dims == 3) {
        return Err(AnalysisError::BadDimensions(cfg.dims));
    }
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.len() != first.len()) {
            return Err(AnalysisError::LengthMismatch {
                left: first.len(),
                right: points.iter().map(Vec::len).find(|&l| l != first.len()).unwrap_or(0),
            });
        }
    }
    let p = input_affinities(points, cfg.perplexity)?;
    let dims = cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y: Vec<f64> = (0..n * dims).map(|_| 1e-4 * standard_normal(&mut rng)).collect();
    let mut update = vec![0.0; n * dims];
    let mut gains = vec![1.0f64; n * dims];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; n * dims];
    let exaggerated = cfg.exaggeration_iterations();
    let learning_rate = cfg.learning_rate_for(n);
    let every = cfg.checkpoint_every.max(1);
    let mut objective = Vec::new();
    for iter in 0..cfg.iterations {
        let factor = if iter < exaggerated { cfg.exaggeration } else { 1.0 };
        let momentum = if iter < exaggerated { cfg.initial_momentum } else { cfg.final_momentum };
        let sum = student_t(&y, n, dims, &mut num);
        if iter % every == 0 {
            objective.push((iter, kl(&p, &num, sum)));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let coef = 4.0 * (factor * p[i * n + j] - num[i * n + j] / sum) * num[i * n + j];
                for k in 0..dims {
                    grad[i * dims + k] += coef * (y[i * dims + k] - y[j * dims + k]);
                }
            }
        }
        for idx in 0..n * dims {
            let same = (grad[idx] > 0.0) == (update[idx] > 0.0);
            gains[idx] = if same { gains[idx] * 0.8 } else { gains[idx] + 0.2 };
            gains[idx] = gains[idx].max(0.01);
            update[idx] = momentum * update[idx] - learning_rate * gains[idx] * grad[idx];
            y[idx] += update[idx];
        }
        for k in 0..dims {
            let mean = (0..n).map(|i| y[i * dims + k]).sum::<f64>() / n.max(1) as f64;
            for i in 0..n {
                y[i * dims + k] -= mean;
            }
        }
    }
    let sum = student_t(&y, n, dims, &mut num);
    objective.push((cfg.iterations, kl(&p, &num, sum)));
    Ok(TsneResult {
        coords: y.chunks(dims).map(<[f64]>::to_vec).collect(),
        objective,
        exaggeration_iterations: exaggerated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::linalg::euclidean;
    use rand::Rng;

    fn clusters(rng: &mut ChaCha8Rng, per: usize) -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for c in 0..2 {
            for _ in 0..per {
                pts.push((0..10).map(|k| if k == 0 { 50.0 * c as f64 } else { 0.0 } + rng.random_range(-1.0..1.0)).collect());
            }
        }
        pts
    }

    fn centroid(pts: &[Vec<f64>]) -> Vec<f64> {
        let d = pts[0].len();
        (0..d).map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / pts.len() as f64).collect()
    }

    #[test]
    fn affinities_hit_the_target_perplexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = clusters(&mut rng, 20);
        let d = squared_distances(&pts);
        let mut row = vec![0.0; 40];
        conditional_row(&d, 3, 40, libm::log(10.0), &mut row);
        let h: f64 = -row.iter().filter(|&&p| p > 0.0).map(|&p| p * libm::log(p)).sum::<f64>();
        assert!((libm::exp(h) - 10.0).abs() < 1e-6);
        let p = input_affinities(&pts, 10.0).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(matches!(input_affinities(&pts, 40.0), Err(AnalysisError::BadPerplexity { .. })));
    }

    #[test]
    fn planted_clusters_stay_apart_and_kl_settles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = clusters(&mut rng, 30);
        let cfg = TsneConfig {
            perplexity: 10.0,
            iterations: 400,
            seed: 9,
            ..TsneConfig::default()
        };
        let r = tsne(&pts, &cfg).unwrap();
        let (a, b) = r.coords.split_at(30);
        let (ca, cb) = (centroid(a), centroid(b));
        let spread = a.iter().map(|p| euclidean(p, &ca)).chain(b.iter().map(|p| euclidean(p, &cb))).fold(0.0, f64::max);
        assert!(euclidean(&ca, &cb) > spread);
        let post = r.post_exaggeration();
        assert!(post.windows(2).all(|w| w[1] <= w[0]), "{post:?}");
        assert!(r.objective.iter().all(|(_, kl)| *kl >= 0.0));
        assert_eq!(r, tsne(&pts, &cfg).unwrap());
    }

    #[test]
    fn duplicates_coincide() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = clusters(&mut rng, 100);
        pts.push(pts[4].clone());
        let r = tsne(&pts, &TsneConfig { perplexity: 20.0, iterations: 300, dims: 2, ..TsneConfig::default() }).unwrap();
        let diameter = (0..pts.len()).flat_map(|i| (0..pts.len()).map(move |j| (i, j))).map(|(i, j)| euclidean(&r.coords[i], &r.coords[j])).fold(0.0, f64::max);
        assert!(euclidean(&r.coords[4], &r.coords[200]) < 0.01 * diameter, "{} {diameter}", euclidean(&r.coords[4], &r.coords[200]));
    }

    #[test]
    fn argument_checks() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(matches!(tsne(&pts, &TsneConfig { dims: 4, ..TsneConfig::default() }), Err(AnalysisError::BadDimensions(4))));
        assert!(matches!(tsne(&pts, &TsneConfig { perplexity: 3.0, ..TsneConfig::default() }), Err(AnalysisError::BadPerplexity { .. })));
    }
}
