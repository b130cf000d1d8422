//! Residual convolutional multitask classifier and the 1-NN baseline.
//!
//! Heads, in order: primary disease, secondary disease, tertiary disease,
//! sex, age, month, year. Class 0 of the secondary and tertiary heads means
//! "absent"; disease `i` of the [`DiseaseTable`] is class `i + 1` there.

mod eval;
mod model;
mod train;

pub use eval::{evaluate, evaluate_classes, knn_baseline, majority_baseline, ConfusionMatrix, Evaluation};
pub use model::{argmax, desk_heads, MultitaskPrediction, Rcnn, RcnnConfig, TrunkPool, HEAD_NAMES, N_HEADS, PAPER_HEADS};
pub use train::{train, EpochStats, TrainConfig, TrainReport};

use crate::corpus::{DiseaseTable, IcdCode, Phenotype, Record};
use crate::nn::NnError;

/// Seven class labels of a phenotype.
pub fn phenotype_labels(ph: &Phenotype, diseases: &DiseaseTable) -> Result<[usize; N_HEADS], NnError> {
    let idx = |c: IcdCode| diseases.index_of(c).ok_or(NnError::Invalid("disease code missing from the table"));
    let opt = |c: Option<IcdCode>| -> Result<usize, NnError> { c.map_or(Ok(0), |c| idx(c).map(|i| i + 1)) };
    Ok([
        idx(ph.primary())?,
        opt(ph.secondary())?,
        opt(ph.tertiary())?,
        ph.sex().index(),
        ph.age() as usize,
        ph.month() as usize - 1,
        ph.year().ok_or(NnError::Invalid("record without a year"))? as usize,
    ])
}

pub fn record_labels(records: &[Record], diseases: &DiseaseTable) -> Result<alloc::vec::Vec<[usize; N_HEADS]>, NnError> {
    records.iter().map(|r| phenotype_labels(&r.phenotype, diseases)).collect()
}
