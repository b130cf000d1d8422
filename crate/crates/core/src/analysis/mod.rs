//! Structure discovery on trained models: spectral embedding of symmetrized
//! confusion matrices, hierarchical clustering, exact t-SNE and the
//! single-component probe.

mod cluster;
mod linalg;
mod probe;
mod spectral;
mod tsne;

pub use cluster::{adjusted_rand_index, hierarchical_cluster, Dendrogram, Linkage, Merge};
pub use linalg::{eigendecompose, euclidean, pairwise_euclidean, Eigen, SquareMatrix};
pub use probe::{cosine_distances, probe_prescription, single_component_probe, ProbeResult, PROBE_DURATION, PROBE_SCHEDULE};
pub use spectral::{category_distances, laplacian_spectrum, spectral_embed, symmetrize, symmetrize_rows, unnormalized_laplacian, SymmetricAffinity, ZERO_EIGENVALUE};
pub use tsne::{input_affinities, tsne, TsneConfig, TsneResult, MAX_POINTS};

use alloc::string::String;
use alloc::vec::Vec;

use crate::nn::NnError;
use crate::rcnn::ConfusionMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("matrix is not square: {rows} rows, a row of {cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix asymmetric by {0}")]
    Asymmetric(f64),
    #[error("affinities and distances must be finite and non-negative")]
    NegativeAffinity,
    #[error("embedding dimension {k} must be in 1..{n}")]
    TooManyDimensions { k: usize, n: usize },
    #[error("only {found} nonzero eigenvalues, {wanted} wanted")]
    TooFewNonzeroEigenvalues { wanted: usize, found: usize },
    #[error("lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("category {0} has no members")]
    EmptyCategory(usize),
    #[error("cannot cut {n} leaves into {k} clusters")]
    BadClusterCount { k: usize, n: usize },
    #[error("perplexity {perplexity} must be positive and below the point count {n}")]
    BadPerplexity { perplexity: f64, n: usize },
    #[error("{0} points exceed the exact t-SNE limit")]
    TooManyPoints(usize),
    #[error("t-SNE output must have 2 or 3 dimensions, not {0}")]
    BadDimensions(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum ClusterInput {
    /// Spectral coordinates of each class.
    #[default]
    Spectral,
    /// Raw rows of the symmetrized confusion matrix.
    Rows,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct AnalysisConfig {
    pub spectral_dims: usize,
    pub linkage: Linkage,
    pub cluster_input: ClusterInput,
    pub tsne: TsneConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            spectral_dims: 8,
            linkage: Linkage::Average,
            cluster_input: ClusterInput::Spectral,
            tsne: TsneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionAnalysis {
    pub affinity: SymmetricAffinity,
    pub eigenvalues: Vec<f64>,
    pub coords: Vec<Vec<f64>>,
    pub dendrogram: Dendrogram,
}

/// Symmetrize, embed and cluster one head's confusion matrix. `k` shrinks to
/// the number of nonzero eigenvalues when fewer exist.
pub fn analyze_confusion(c: &ConfusionMatrix, labels: Vec<String>, cfg: &AnalysisConfig) -> Result<ConfusionAnalysis, AnalysisError> {
    let affinity = symmetrize(c)?;
    let spectrum = laplacian_spectrum(&affinity)?;
    let nonzero = spectrum.values.iter().filter(|&&v| v >= ZERO_EIGENVALUE).count();
    let k = cfg.spectral_dims.min(nonzero).min(affinity.len().saturating_sub(1));
    let coords = if k == 0 { affinity.matrix().rows().iter().map(|_| Vec::new()).collect() } else { spectral_embed(&affinity, k)? };
    let dendrogram = match cfg.cluster_input {
        ClusterInput::Spectral => hierarchical_cluster(&pairwise_euclidean(&coords), cfg.linkage, labels)?,
        ClusterInput::Rows => hierarchical_cluster(&pairwise_euclidean(&affinity.matrix().rows()), cfg.linkage, labels)?,
    };
    Ok(ConfusionAnalysis {
        affinity,
        eigenvalues: spectrum.values,
        coords,
        dendrogram,
    })
}
