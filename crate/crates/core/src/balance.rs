//! Class flattening: each over-represented class is replaced by `cap`
//! medoid records found with PAM.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{encode_prescription, EncodedVector, IcdCode, Record};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum BalanceError {
    #[error("no points")]
    Empty,
    #[error("k = {k} medoids requested from {n} points")]
    TooManyMedoids { k: usize, n: usize },
    #[error("need at least one medoid")]
    ZeroMedoids,
}

/// Symmetric matrix with zero diagonal, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// From a dense row-major `n x n` array; the upper triangle wins.
    pub fn from_dense(n: usize, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n);
        for i in 0..n {
            data[i * n + i] = 0.0;
            for j in i + 1..n {
                data[j * n + i] = data[i * n + j];
            }
        }
        DistanceMatrix { n, data }
    }

    /// Absolute differences of 1-d points.
    pub fn from_points_1d(xs: &[f64]) -> Self {
        let n = xs.len();
        let data = xs.iter().flat_map(|a| xs.iter().map(move |b| libm::fabs(a - b))).collect();
        DistanceMatrix { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Euclidean distance of two sparse vectors given as sorted `(index, value)`.
fn sparse_euclidean(a: &[(usize, f32)], b: &[(usize, f32)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0f64);
    while i < a.len() || j < b.len() {
        let d = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x.0 == y.0 => {
                i += 1;
                j += 1;
                x.1 as f64 - y.1 as f64
            }
            (Some(x), Some(y)) if x.0 < y.0 => {
                i += 1;
                x.1 as f64
            }
            (Some(x), None) => {
                i += 1;
                x.1 as f64
            }
            (_, Some(y)) => {
                j += 1;
                y.1 as f64
            }
            (None, None) => unreachable!(),
        };
        acc += d * d;
    }
    libm::sqrt(acc)
}

pub fn pairwise_distance(vectors: &[EncodedVector]) -> Result<DistanceMatrix, BalanceError> {
    if vectors.is_empty() {
        return Err(BalanceError::Empty);
    }
    let n = vectors.len();
    let sparse: Vec<_> = vectors.iter().map(EncodedVector::nonzeros).collect();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sparse_euclidean(&sparse[i], &sparse[j]);
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, data })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Medoids {
    /// Sorted ascending.
    pub indices: Vec<usize>,
    pub cost: f64,
    pub swaps: usize,
}

/// Total distance from every point to its nearest medoid.
pub fn medoid_cost(d: &DistanceMatrix, medoids: &[usize]) -> f64 {
    (0..d.len())
        .map(|j| medoids.iter().map(|&m| d.get(j, m)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Nearest and second-nearest medoid slot and distance per point.
struct Assignment {
    nearest: Vec<usize>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

fn assign(d: &DistanceMatrix, medoids: &[usize]) -> Assignment {
    let n = d.len();
    let mut a = Assignment {
        nearest: vec![0; n],
        d1: vec![f64::INFINITY; n],
        d2: vec![f64::INFINITY; n],
    };
    for j in 0..n {
        for (slot, &m) in medoids.iter().enumerate() {
            let x = d.get(j, m);
            if x < a.d1[j] {
                a.d2[j] = a.d1[j];
                a.d1[j] = x;
                a.nearest[j] = slot;
            } else if x < a.d2[j] {
                a.d2[j] = x;
            }
        }
    }
    a
}

/// PAM: greedy BUILD, then steepest-descent SWAP until no single swap lowers
/// the cost. Fully deterministic; ties go to the lowest index.
pub fn k_medoids(d: &DistanceMatrix, k: usize) -> Result<Medoids, BalanceError> {
    let n = d.len();
    if n == 0 {
        return Err(BalanceError::Empty);
    }
    if k == 0 {
        return Err(BalanceError::ZeroMedoids);
    }
    if k > n {
        return Err(BalanceError::TooManyMedoids { k, n });
    }
    let scale = d.data.iter().fold(0.0f64, |m, &x| m.max(x));
    let tol = 1e-12 * scale.max(1.0) * n as f64;

    let mut is_medoid = vec![false; n];
    let mut medoids = Vec::with_capacity(k);
    let first = (0..n)
        .map(|i| (i, d.row(i).iter().sum::<f64>()))
        .fold((0, f64::INFINITY), |best, (i, c)| if c < best.1 { (i, c) } else { best });
    medoids.push(first.0);
    is_medoid[first.0] = true;
    let mut dn: Vec<f64> = d.row(first.0).to_vec();
    while medoids.len() < k {
        let mut best = (usize::MAX, 0.0);
        if dn.iter().any(|&x| x > 0.0) {
            for c in (0..n).filter(|&c| !is_medoid[c]) {
                let gain: f64 = d.row(c).iter().zip(&dn).map(|(&dc, &cur)| (cur - dc).max(0.0)).sum();
                if best.0 == usize::MAX || gain > best.1 {
                    best = (c, gain);
                }
            }
        } else {
            best.0 = (0..n).find(|&c| !is_medoid[c]).unwrap_or(0);
        }
        let c = best.0;
        medoids.push(c);
        is_medoid[c] = true;
        for (cur, &dc) in dn.iter_mut().zip(d.row(c)) {
            *cur = cur.min(dc);
        }
    }

    let mut swaps = 0;
    let mut delta = vec![0.0; k];
    loop {
        let a = assign(d, &medoids);
        let mut best: Option<(f64, usize, usize)> = None;
        for o in (0..n).filter(|&o| !is_medoid[o]) {
            let row = d.row(o);
            let mut shared = 0.0;
            delta.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..n {
                let doj = row[j];
                let gain = (doj - a.d1[j]).min(0.0);
                shared += gain;
                delta[a.nearest[j]] += doj.min(a.d2[j]) - a.d1[j] - gain;
            }
            for (slot, &extra) in delta.iter().enumerate() {
                let change = shared + extra;
                if best.is_none_or(|b| change < b.0) {
                    best = Some((change, slot, o));
                }
            }
        }
        match best {
            Some((change, slot, o)) if change < -tol => {
                is_medoid[medoids[slot]] = false;
                is_medoid[o] = true;
                medoids[slot] = o;
                swaps += 1;
            }
            _ => break,
        }
    }
    medoids.sort_unstable();
    Ok(Medoids {
        cost: medoid_cost(d, &medoids),
        indices: medoids,
        swaps,
    })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct BalanceConfig {
    pub per_class_cap: usize,
    /// Larger classes are uniformly subsampled to this size before PAM.
    pub presample_ceiling: usize,
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            per_class_cap: 600,
            presample_ceiling: 1200,
            seed: 0,
        }
    }
}

/// Indices kept from `labels`/`vectors`, in input order.
pub fn balance_indices<L: Ord + Copy>(labels: &[L], vectors: &[EncodedVector], cfg: &BalanceConfig) -> Result<Vec<usize>, BalanceError> {
    if cfg.per_class_cap == 0 {
        return Err(BalanceError::ZeroMedoids);
    }
    let mut classes: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        classes.entry(*l).or_default().push(i);
    }
    let mut keep = vec![false; labels.len()];
    for (ci, members) in classes.values().enumerate() {
        if members.len() <= cfg.per_class_cap {
            members.iter().for_each(|&i| keep[i] = true);
            continue;
        }
        let mut pool = members.clone();
        let ceiling = cfg.presample_ceiling.max(cfg.per_class_cap);
        if pool.len() > ceiling {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(ci as u64);
            let mut picked: Vec<usize> = sample(&mut rng, pool.len(), ceiling).into_vec();
            picked.sort_unstable();
            pool = picked.into_iter().map(|p| pool[p]).collect();
        }
        let vs: Vec<EncodedVector> = pool.iter().map(|&i| vectors[i].clone()).collect();
        let dm = pairwise_distance(&vs)?;
        for m in k_medoids(&dm, cfg.per_class_cap)?.indices {
            keep[pool[m]] = true;
        }
    }
    Ok((0..labels.len()).filter(|&i| keep[i]).collect())
}

/// Per primary-disease record counts before and after balancing.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BalanceReport {
    pub classes: Vec<(IcdCode, usize, usize)>,
}

pub fn balance_corpus(records: &[Record], cfg: &BalanceConfig) -> Result<(Vec<Record>, BalanceReport), BalanceError> {
    let labels: Vec<IcdCode> = records.iter().map(|r| r.phenotype.primary()).collect();
    let vectors: Vec<EncodedVector> = records.iter().map(|r| encode_prescription(&r.prescription)).collect();
    let kept = balance_indices(&labels, &vectors, cfg)?;
    let mut counts: BTreeMap<IcdCode, (usize, usize)> = BTreeMap::new();
    for l in &labels {
        counts.entry(*l).or_default().0 += 1;
    }
    for &i in &kept {
        counts.entry(labels[i]).or_default().1 += 1;
    }
    let report = BalanceReport {
        classes: counts.into_iter().map(|(c, (b, a))| (c, b, a)).collect(),
    };
    Ok((kept.into_iter().map(|i| records[i].clone()).collect(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_vectors(n: usize, seed: u64) -> Vec<EncodedVector> {
        use crate::corpus::{ComponentId, Dose, Prescription};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut comps = Vec::new();
                for _ in 0..rng.random_range(1..8) {
                    let id = ComponentId::new(rng.random_range(1..=718)).unwrap();
                    if !comps.iter().any(|c: &(ComponentId, Dose)| c.0 == id) {
                        comps.push((id, Dose::from_decigrams(rng.random_range(1..=50)).unwrap()));
                    }
                }
                let acu = if rng.random_bool(0.3) { Some(rng.random_range(1..=5)) } else { None };
                let p = Prescription::new(comps, acu, rng.random_range(1..=27), rng.random_range(1..=90)).unwrap();
                encode_prescription(&p)
            })
            .collect()
    }

    #[test]
    fn distance_examples() {
        use crate::corpus::{ComponentId, Dose, Prescription};
        let c = |i| ComponentId::new(i).unwrap();
        let with = Prescription::new(vec![(c(2), Dose::MAX), (c(1), Dose::MAX)], None, 1, 7).unwrap();
        let without = Prescription::new(vec![(c(2), Dose::MAX)], None, 1, 7).unwrap();
        let v = [encode_prescription(&with), encode_prescription(&without), encode_prescription(&with)];
        let d = pairwise_distance(&v).unwrap();
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(0, 2), 0.0);
        assert!(pairwise_distance(&[]).is_err());
    }

    #[test]
    fn distance_matches_double_loop() {
        let v = random_vectors(10, 7);
        let d = pairwise_distance(&v).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let direct: f64 = v[i].values().iter().zip(v[j].values()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>().sqrt();
                assert!((d.get(i, j) - direct).abs() < 1e-12);
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }

    #[test]
    fn one_medoid_on_a_line() {
        let d = DistanceMatrix::from_points_1d(&[0.0, 10.0, 11.0]);
        let m = k_medoids(&d, 1).unwrap();
        assert_eq!(m.indices, vec![1]);
        assert_eq!(m.cost, 11.0);
    }

    #[test]
    fn k_equals_n_has_zero_cost() {
        let d = DistanceMatrix::from_points_1d(&[3.0, 1.0, 4.0, 1.0, 5.0]);
        let m = k_medoids(&d, 5).unwrap();
        assert_eq!(m.indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(m.cost, 0.0);
        assert!(matches!(k_medoids(&d, 6), Err(BalanceError::TooManyMedoids { k: 6, n: 5 })));
    }

    #[test]
    fn swaps_improve_a_poor_build() {
        // BUILD picks the central point first; SWAP must move it.
        let d = DistanceMatrix::from_points_1d(&[0.0, 1.0, 2.0, 5.0, 8.0, 9.0, 10.0]);
        let m = k_medoids(&d, 2).unwrap();
        assert!(m.swaps > 0);
        assert_eq!(m.cost, 8.0);
        assert_eq!(m.cost, medoid_cost(&d, &m.indices));
    }

    #[test]
    fn caps_large_classes_only() {
        let v = random_vectors(60, 3);
        let labels: Vec<u8> = (0..60).map(|i| if i < 50 { 0 } else { 1 }).collect();
        let cfg = BalanceConfig { per_class_cap: 12, presample_ceiling: 30, seed: 4 };
        let kept = balance_indices(&labels, &v, &cfg).unwrap();
        assert_eq!(kept.iter().filter(|&&i| labels[i] == 0).count(), 12);
        assert_eq!(kept.iter().filter(|&&i| labels[i] == 1).count(), 10);
        let all = balance_indices(&labels, &v, &BalanceConfig { per_class_cap: 50, ..cfg }).unwrap();
        assert_eq!(all, (0..60).collect::<Vec<_>>());
    }
}
