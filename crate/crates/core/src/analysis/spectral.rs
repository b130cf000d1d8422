use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{eigendecompose, euclidean, Eigen, SquareMatrix};
use super::AnalysisError;
use crate::rcnn::ConfusionMatrix;

/// Eigenvalues below this are treated as zero.
pub const ZERO_EIGENVALUE: f64 = 1e-9;

/// Symmetric non-negative affinities.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricAffinity(SquareMatrix);

impl SymmetricAffinity {
    pub fn new(m: SquareMatrix) -> Result<Self, AnalysisError> {
        let asym = m.asymmetry();
        if asym > 1e-12 {
            return Err(AnalysisError::Asymmetric(asym));
        }
        if m.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(AnalysisError::NegativeAffinity);
        }
        Ok(SymmetricAffinity(m))
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `(C + C^T) / 2`, diagonal kept.
pub fn symmetrize_rows(counts: &[Vec<f64>]) -> Result<SymmetricAffinity, AnalysisError> {
    let c = SquareMatrix::from_rows(counts)?;
    let n = c.len();
    let mut w = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            w.set(i, j, 0.5 * (c.get(i, j) + c.get(j, i)));
        }
    }
    SymmetricAffinity::new(w)
}

pub fn symmetrize(c: &ConfusionMatrix) -> Result<SymmetricAffinity, AnalysisError> {
    let n = c.classes();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| c.row(i).iter().map(|&v| v as f64).collect()).collect();
    symmetrize_rows(&rows)
}

/// `L = D - W` with the diagonal of `W` zeroed first.
pub fn unnormalized_laplacian(w: &SquareMatrix) -> Result<SquareMatrix, AnalysisError> {
    let asym = w.asymmetry();
    if asym > 1e-9 {
        return Err(AnalysisError::Asymmetric(asym));
    }
    let n = w.len();
    let mut l = SquareMatrix::zeros(n);
    for i in 0..n {
        let mut degree = 0.0;
        for j in 0..n {
            if i != j {
                degree += w.get(i, j);
                l.set(i, j, -w.get(i, j));
            }
        }
        l.set(i, i, degree);
    }
    Ok(l)
}

pub fn laplacian_spectrum(w: &SymmetricAffinity) -> Result<Eigen, AnalysisError> {
    eigendecompose(&unnormalized_laplacian(w.matrix())?)
}

/// Coordinates from the eigenvectors of the `k` smallest nonzero Laplacian
/// eigenvalues, one row per class.
pub fn spectral_embed(w: &SymmetricAffinity, k: usize) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let n = w.len();
    if k == 0 || k >= n {
        return Err(AnalysisError::TooManyDimensions { k, n });
    }
    let e = laplacian_spectrum(w)?;
    let cols: Vec<usize> = (0..n).filter(|&i| e.values[i] >= ZERO_EIGENVALUE).take(k).collect();
    if cols.len() < k {
        return Err(AnalysisError::TooFewNonzeroEigenvalues { wanted: k, found: cols.len() });
    }
    Ok((0..n).map(|i| cols.iter().map(|&c| e.vectors.get(i, c)).collect()).collect())
}

/// Euclidean distances between category centroids; `categories[i]` is the
/// category of row `i`, numbered from 0 without gaps.
pub fn category_distances(coords: &[Vec<f64>], categories: &[usize]) -> Result<SquareMatrix, AnalysisError> {
    if coords.len() != categories.len() || coords.is_empty() {
        return Err(AnalysisError::LengthMismatch {
            left: coords.len(),
            right: categories.len(),
        });
    }
    let m = categories.iter().max().map_or(0, |&c| c + 1);
    let dim = coords[0].len();
    let mut sums = vec![vec![0.0; dim]; m];
    let mut counts = vec![0usize; m];
    for (row, &c) in coords.iter().zip(categories) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(row) {
            *s += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(AnalysisError::EmptyCategory(empty));
    }
    let centroids: Vec<Vec<f64>> = sums.iter().zip(&counts).map(|(s, &c)| s.iter().map(|v| v / c as f64).collect()).collect();
    let mut d = SquareMatrix::zeros(m);
    for a in 0..m {
        for b in a + 1..m {
            let v = euclidean(&centroids[a], &centroids[b]);
            d.set(a, b, v);
            d.set(b, a, v);
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetrize_examples() {
        let w = symmetrize_rows(&[vec![5.0, 4.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(w.matrix().get(0, 1), 2.0);
        assert_eq!(w.matrix().get(1, 0), 2.0);
        assert_eq!(w.matrix().get(0, 0), 5.0);
        let sym = vec![vec![1.0, 2.0, 0.0], vec![2.0, 0.0, 7.0], vec![0.0, 7.0, 4.0]];
        assert_eq!(symmetrize_rows(&sym).unwrap().matrix().rows(), sym);
        assert!(matches!(symmetrize_rows(&[vec![1.0, 2.0], vec![1.0]]), Err(AnalysisError::NotSquare { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut cm = ConfusionMatrix::new(9);
        for _ in 0..400 {
            cm.record(rng.random_range(0..9), rng.random_range(0..9));
        }
        let w = symmetrize(&cm).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(w.matrix().get(i, j), (cm.get(i, j) + cm.get(j, i)) as f64 / 2.0);
            }
        }
    }

    #[test]
    fn two_node_laplacian() {
        let w = SymmetricAffinity::new(SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
        let e = laplacian_spectrum(&w).unwrap();
        assert!(e.values[0].abs() < 1e-12 && (e.values[1] - 2.0).abs() < 1e-12);
        let v = e.vector(0);
        assert!((v[0] - v[1]).abs() < 1e-12);
    }

    #[test]
    fn diagonal_is_ignored_and_rows_sum_to_zero() {
        let w = SquareMatrix::from_rows(&[vec![9.0, 1.0, 2.0], vec![1.0, 4.0, 0.0], vec![2.0, 0.0, 1.0]]).unwrap();
        let l = unnormalized_laplacian(&w).unwrap();
        assert_eq!(l.row(0), &[3.0, -1.0, -2.0]);
        for i in 0..3 {
            assert!(l.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
        let bad = SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(unnormalized_laplacian(&bad).is_err());
        assert!(SymmetricAffinity::new(SquareMatrix::from_rows(&[vec![0.0, -1.0], vec![-1.0, 0.0]]).unwrap()).is_err());
    }

    #[test]
    fn embedding_limits() {
        let w = SymmetricAffinity::new(SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
        assert!(matches!(spectral_embed(&w, 2), Err(AnalysisError::TooManyDimensions { k: 2, n: 2 })));
        assert_eq!(spectral_embed(&w, 1).unwrap().len(), 2);
    }

    #[test]
    fn category_distance_examples() {
        let coords = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 0.0], vec![2.0, 0.0], vec![4.0, 4.0]];
        let d = category_distances(&coords, &[0, 0, 1, 1, 2]).unwrap();
        assert!(d.get(0, 1).abs() < 1e-12);
        assert!((d.get(0, 2) - 5.0).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
        assert!(matches!(category_distances(&coords, &[0, 0, 2, 2, 2]), Err(AnalysisError::EmptyCategory(1))));
    }
}
