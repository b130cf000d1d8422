use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::cluster::{hierarchical_cluster, Dendrogram, Linkage};
use super::linalg::{pairwise_euclidean, SquareMatrix};
use super::AnalysisError;
use crate::corpus::{encode_prescription, ComponentId, Dose, EncodedVector, Prescription};
use crate::rcnn::Rcnn;

/// Primary-head probabilities of single-component prescriptions.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeResult {
    pub components: Vec<ComponentId>,
    /// One row per component over the primary-disease classes.
    pub probabilities: Vec<Vec<f64>>,
    pub dendrogram: Dendrogram,
}

pub const PROBE_SCHEDULE: u8 = 1;
pub const PROBE_DURATION: u8 = 7;

/// A lone component at the maximum dose.
pub fn probe_prescription(c: ComponentId) -> Prescription {
    Prescription::new(vec![(c, Dose::MAX)], None, PROBE_SCHEDULE, PROBE_DURATION).unwrap_or_else(|_| unreachable!())
}

pub fn single_component_probe(model: &Rcnn, components: &[ComponentId], linkage: Linkage) -> Result<ProbeResult, AnalysisError> {
    let inputs: Vec<EncodedVector> = components.iter().map(|&c| encode_prescription(&probe_prescription(c))).collect();
    let probabilities: Vec<Vec<f64>> = model.predict_all(&inputs, 64)?.into_iter().map(|p| p.heads.into_iter().next().unwrap_or_default()).collect();
    let labels: Vec<String> = components.iter().map(ToString::to_string).collect();
    let dendrogram = hierarchical_cluster(&pairwise_euclidean(&probabilities), linkage, labels)?;
    Ok(ProbeResult {
        components: components.to_vec(),
        probabilities,
        dendrogram,
    })
}

/// `1 - cos` between rows; zero rows are at distance 1 from everything else.
pub fn cosine_distances(rows: &[Vec<f64>]) -> SquareMatrix {
    let norms: Vec<f64> = rows.iter().map(|r| libm::sqrt(r.iter().map(|v| v * v).sum())).collect();
    let n = rows.len();
    let mut d = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let denom = norms[i] * norms[j];
            let cos = if denom > 0.0 { rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum::<f64>() / denom } else { 0.0 };
            let v = (1.0 - cos).max(0.0);
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}
