use alloc::vec;
use alloc::vec::Vec;

use super::model::{Rcnn, N_HEADS};
use crate::corpus::EncodedVector;
use crate::nn::NnError;

/// `counts[t * n + p]` = examples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        ConfusionMatrix { n, counts: vec![0; n * n] }
    }

    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self, NnError> {
        if counts.len() != n * n {
            return Err(NnError::BadLength { len: counts.len(), shape: vec![n, n] });
        }
        Ok(ConfusionMatrix { n, counts })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n..(truth + 1) * self.n]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Trace over total; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            return 0.0;
        }
        (0..self.n).map(|i| self.get(i, i)).sum::<u64>() as f64 / t as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: [f64; N_HEADS],
    pub confusion: Vec<ConfusionMatrix>,
}

/// Scores predicted classes against labels for heads of the given sizes.
pub fn evaluate_classes(predicted: &[[usize; N_HEADS]], labels: &[[usize; N_HEADS]], head_sizes: &[usize]) -> Result<Evaluation, NnError> {
    if predicted.is_empty() {
        return Err(NnError::Invalid("empty test set"));
    }
    if predicted.len() != labels.len() || head_sizes.len() != N_HEADS {
        return Err(NnError::Invalid("prediction/label count mismatch"));
    }
    let mut confusion: Vec<ConfusionMatrix> = head_sizes.iter().map(|&n| ConfusionMatrix::new(n)).collect();
    for (p, l) in predicted.iter().zip(labels) {
        for h in 0..N_HEADS {
            if l[h] >= head_sizes[h] || p[h] >= head_sizes[h] {
                return Err(NnError::LabelOutOfRange { label: l[h].max(p[h]), classes: head_sizes[h] });
            }
            confusion[h].record(l[h], p[h]);
        }
    }
    let mut accuracy = [0.0; N_HEADS];
    for (a, c) in accuracy.iter_mut().zip(&confusion) {
        *a = c.accuracy();
    }
    Ok(Evaluation { accuracy, confusion })
}

pub fn evaluate(model: &Rcnn, inputs: &[EncodedVector], labels: &[[usize; N_HEADS]]) -> Result<Evaluation, NnError> {
    let predicted: Vec<[usize; N_HEADS]> = model.predict_all(inputs, 256)?.iter().map(|p| p.classes()).collect();
    evaluate_classes(&predicted, labels, &model.config().head_sizes)
}

fn squared_sparse(a: &[(usize, f32)], b: &[(usize, f32)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0f64);
    loop {
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
            (None, None) => return acc,
        };
        acc += d * d;
    }
}

/// Euclidean k-NN with majority vote; distance ties go to the lowest train
/// index and vote ties to the lowest label.
pub fn knn_baseline<L: Copy + Ord>(train: &[EncodedVector], labels: &[L], test: &[EncodedVector], k: usize) -> Result<Vec<L>, NnError> {
    if train.is_empty() || train.len() != labels.len() || k == 0 {
        return Err(NnError::Invalid("k-NN needs a non-empty labelled train set and k >= 1"));
    }
    let k = k.min(train.len());
    let sparse: Vec<_> = train.iter().map(EncodedVector::nonzeros).collect();
    let mut out = Vec::with_capacity(test.len());
    for t in test {
        let q = t.nonzeros();
        // (distance, index), kept sorted.
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, s) in sparse.iter().enumerate() {
            let d = squared_sparse(&q, s);
            if best.len() < k || d < best[best.len() - 1].0 {
                let at = best.partition_point(|b| b.0 <= d);
                best.insert(at, (d, i));
                best.truncate(k);
            }
        }
        let mut votes: Vec<(L, usize)> = Vec::new();
        for &(_, i) in &best {
            match votes.iter_mut().find(|v| v.0 == labels[i]) {
                Some(v) => v.1 += 1,
                None => votes.push((labels[i], 1)),
            }
        }
        votes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out.push(votes[0].0);
    }
    Ok(out)
}

/// Most frequent training label (lowest on ties).
pub fn majority_baseline<L: Copy + Ord>(labels: &[L]) -> Option<L> {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(L, usize)> = None;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().position(|x| *x != sorted[i]).map_or(sorted.len(), |p| i + p);
        if best.is_none_or(|b| j - i > b.1) {
            best = Some((sorted[i], j - i));
        }
        i = j;
    }
    best.map(|b| b.0)
}
