//! The 840-element prescription vector.
//!
//! | zero-based range | content                                 |
//! |------------------|-----------------------------------------|
//! | `0..718`         | dose / 5.0 g for component `i + 1`      |
//! | `718..723`       | one-hot acupuncture modality (optional) |
//! | `723..750`       | one-hot schedule 1..=27                 |
//! | `750..840`       | one-hot duration 1..=90 days            |

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::types::{ComponentId, Dose, Prescription, N_ACUPUNCTURE, N_COMPONENTS, N_DURATIONS, N_SCHEDULES};
use super::CorpusError;

pub const VECTOR_LEN: usize = 840;
pub const DOSE_BAND: Range<usize> = 0..N_COMPONENTS;
pub const ACUPUNCTURE_BAND: Range<usize> = N_COMPONENTS..N_COMPONENTS + N_ACUPUNCTURE as usize;
pub const SCHEDULE_BAND: Range<usize> = ACUPUNCTURE_BAND.end..ACUPUNCTURE_BAND.end + N_SCHEDULES as usize;
pub const DURATION_BAND: Range<usize> = SCHEDULE_BAND.end..SCHEDULE_BAND.end + N_DURATIONS as usize;

const DECIGRAMS_PER_UNIT: f32 = 50.0;

/// Encoded prescription; every entry lies in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedVector {
    values: Vec<f32>,
}

impl EncodedVector {
    /// Checks length, range and the one-hot bands.
    pub fn new(values: Vec<f32>) -> Result<Self, CorpusError> {
        if values.len() != VECTOR_LEN {
            return Err(CorpusError::MalformedVector("length is not 840"));
        }
        if !values.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(CorpusError::MalformedVector("entry outside [0, 1]"));
        }
        let v = EncodedVector { values };
        v.one_hot(ACUPUNCTURE_BAND, true)?;
        v.one_hot(SCHEDULE_BAND, false)?;
        v.one_hot(DURATION_BAND, false)?;
        Ok(v)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// `(index, value)` of nonzero entries in increasing index order.
    pub fn nonzeros(&self) -> Vec<(usize, f32)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect()
    }

    /// 1-based position within `band` of its single 1, or `None` if the band is empty.
    fn one_hot(&self, band: Range<usize>, optional: bool) -> Result<Option<u8>, CorpusError> {
        let mut hit = None;
        for (k, &v) in self.values[band].iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            if v != 1.0 {
                return Err(CorpusError::MalformedVector("one-hot band holds a fractional value"));
            }
            if hit.is_some() {
                return Err(CorpusError::MalformedVector("one-hot band holds several ones"));
            }
            hit = Some(k as u8 + 1);
        }
        if hit.is_none() && !optional {
            return Err(CorpusError::MalformedVector("one-hot band is empty"));
        }
        Ok(hit)
    }
}

pub fn encode_prescription(p: &Prescription) -> EncodedVector {
    let mut values = vec![0.0f32; VECTOR_LEN];
    for &(c, d) in p.components() {
        values[DOSE_BAND.start + c.offset()] = d.decigrams() as f32 / DECIGRAMS_PER_UNIT;
    }
    if let Some(m) = p.acupuncture() {
        values[ACUPUNCTURE_BAND.start + m as usize - 1] = 1.0;
    }
    values[SCHEDULE_BAND.start + p.schedule() as usize - 1] = 1.0;
    values[DURATION_BAND.start + p.duration_days() as usize - 1] = 1.0;
    EncodedVector { values }
}

/// Exact inverse of [`encode_prescription`].
pub fn decode_vector(v: &EncodedVector) -> Result<Prescription, CorpusError> {
    let mut components = Vec::new();
    for (i, &x) in v.values[DOSE_BAND].iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let dg = libm::roundf(x * DECIGRAMS_PER_UNIT);
        let dose = Dose::from_decigrams(dg as u8).map_err(|_| CorpusError::MalformedVector("dose entry off the 0.1 g grid"))?;
        components.push((ComponentId::new(i as u16 + 1)?, dose));
    }
    if components.is_empty() {
        return Err(CorpusError::MalformedVector("no component has a dose"));
    }
    let acupuncture = v.one_hot(ACUPUNCTURE_BAND, true)?;
    let schedule = v.one_hot(SCHEDULE_BAND, false)?.unwrap_or(0);
    let duration = v.one_hot(DURATION_BAND, false)?.unwrap_or(0);
    Prescription::new(components, acupuncture, schedule, duration)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> Prescription {
        Prescription::new(vec![(ComponentId::new(1).unwrap(), Dose::MAX)], None, 1, 7).unwrap()
    }

    #[test]
    fn bands_partition_the_vector() {
        assert_eq!(DOSE_BAND.end, ACUPUNCTURE_BAND.start);
        assert_eq!(ACUPUNCTURE_BAND, 718..723);
        assert_eq!(SCHEDULE_BAND, 723..750);
        assert_eq!(DURATION_BAND, 750..840);
        assert_eq!(DURATION_BAND.end, VECTOR_LEN);
    }

    #[test]
    fn single_formula_layout() {
        let v = encode_prescription(&single());
        let nz = v.nonzeros();
        // 1-based entries 1, 724 and 757.
        assert_eq!(nz, vec![(0, 1.0), (723, 1.0), (756, 1.0)]);
        assert_eq!(decode_vector(&v).unwrap(), single());
    }

    #[test]
    fn empty_dose_band_is_malformed() {
        let mut values = encode_prescription(&single()).into_values();
        values[0] = 0.0;
        let v = EncodedVector::new(values).unwrap();
        assert!(matches!(decode_vector(&v), Err(CorpusError::MalformedVector(_))));
    }

    #[test]
    fn two_schedules_are_malformed() {
        let mut values = encode_prescription(&single()).into_values();
        values[730] = 1.0;
        assert!(matches!(EncodedVector::new(values), Err(CorpusError::MalformedVector(_))));
    }

    #[test]
    fn missing_duration_is_malformed() {
        let mut values = encode_prescription(&single()).into_values();
        values[756] = 0.0;
        assert!(EncodedVector::new(values).is_err());
    }

    #[test]
    fn out_of_range_entries_rejected() {
        let mut values = encode_prescription(&single()).into_values();
        values[5] = 1.5;
        assert!(EncodedVector::new(values).is_err());
        assert!(EncodedVector::new(vec![0.0; 839]).is_err());
    }

    #[test]
    fn off_grid_dose_rejected() {
        let mut values = encode_prescription(&single()).into_values();
        values[3] = 0.001;
        let v = EncodedVector::new(values).unwrap();
        assert!(decode_vector(&v).is_err());
    }

    #[test]
    fn overweight_and_duplicates_rejected() {
        assert!(matches!(Dose::from_grams(5.1), Err(CorpusError::DoseOutOfRange(_))));
        assert!(Dose::from_grams(0.0).is_err());
        let c = ComponentId::new(9).unwrap();
        let dup = Prescription::new(vec![(c, Dose::MAX), (c, Dose::MIN)], None, 1, 1);
        assert!(matches!(dup, Err(CorpusError::DuplicateComponent(9))));
    }
}
