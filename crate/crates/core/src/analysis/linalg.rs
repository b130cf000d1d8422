use alloc::vec;
use alloc::vec::Vec;

use super::AnalysisError;

/// Dense row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, AnalysisError> {
        if data.len() != n * n {
            return Err(AnalysisError::NotSquare { rows: n, cols: data.len() / n.max(1) });
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AnalysisError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(AnalysisError::NotSquare { rows: n, cols: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max(libm::fabs(self.get(i, j) - self.get(j, i)));
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| f64::max(m, libm::fabs(a - b)))
    }
}

/// Eigenvalues in ascending order; `vectors` holds the matching unit
/// eigenvectors as columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: SquareMatrix,
}

impl Eigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.vectors.len()).map(|i| self.vectors.get(i, k)).collect()
    }

    /// `V diag(values) V^T`.
    pub fn reconstruct(&self) -> SquareMatrix {
        let n = self.values.len();
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|k| self.vectors.get(i, k) * self.values[k] * self.vectors.get(j, k)).sum();
                out.set(i, j, s);
            }
        }
        out
    }
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn eigendecompose(m: &SquareMatrix) -> Result<Eigen, AnalysisError> {
    let asym = m.asymmetry();
    if asym > 1e-9 {
        return Err(AnalysisError::Asymmetric(asym));
    }
    let n = m.len();
    let mut a = m.clone();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, avg);
            a.set(j, i, avg);
        }
    }
    let mut v = SquareMatrix::identity(n);
    let scale: f64 = a.data.iter().map(|x| x * x).sum::<f64>();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| a.get(i, j) * a.get(i, j)).sum();
        if off <= 1e-30 * scale.max(1e-300) || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(theta * theta + 1.0))
                } else {
                    -1.0 / (-theta + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = SquareMatrix::zeros(n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, col, v.get(r, src));
        }
    }
    Ok(Eigen { values, vectors })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Pairwise Euclidean distances between rows.
pub fn pairwise_euclidean(points: &[Vec<f64>]) -> SquareMatrix {
    let n = points.len();
    let mut d = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let v = euclidean(&points[i], &points[j]);
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}
