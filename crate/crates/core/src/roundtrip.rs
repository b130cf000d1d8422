//! Classifier/translator consistency: translate a phenotype, classify the
//! translation and compare the predicted heads with the source.
//!
//! The month head is compared at season granularity: a predicted month
//! matches when it falls in the source season.

use alloc::vec::Vec;

use crate::arnn::{Arnn, ArnnError};
use crate::corpus::generator::{CHILD_BELOW, ELDER_FROM, SYNONYM_YEAR};
use crate::corpus::{encode_prescription, DiseaseTable, GroundTruth, IcdCode, Phenotype, Prescription, Season, Sex, Symbol};
use crate::nn::NnError;
use crate::rcnn::{Rcnn, N_HEADS};

/// Compared heads, in flag order.
pub const COMPARED: [&str; 5] = ["primary", "sex", "age", "season", "year"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RoundTripError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Arnn(#[from] ArnnError),
    #[error("disease vocabularies differ: {translator_only} codes only in the translator, {classifier_only} only in the classifier")]
    VocabularyMismatch { translator_only: usize, classifier_only: usize },
    #[error("classifier returned {got} predictions for {want} prescriptions")]
    CountMismatch { want: usize, got: usize },
    #[error("class {class} of head {head} has no phenotype value")]
    BadClass { head: &'static str, class: usize },
    #[error("empty phenotype list")]
    Empty,
}

/// Heads of a classified prescription.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictedPhenotype {
    pub primary: IcdCode,
    pub sex: Sex,
    pub age: u8,
    pub month: u8,
    pub year: u8,
}

/// Phenotype to prescription.
pub trait Translator {
    /// Disease codes the translator accepts.
    fn disease_codes(&self) -> Vec<IcdCode>;
    /// One entry per phenotype; `None` marks output that violates the
    /// target grammar.
    fn translate(&self, phenotypes: &[Phenotype]) -> Result<Vec<Option<Prescription>>, RoundTripError>;
}

/// Prescription to phenotype heads.
pub trait Classifier {
    /// Disease codes the classifier predicts.
    fn disease_codes(&self) -> Vec<IcdCode>;
    fn classify(&self, prescriptions: &[Prescription]) -> Result<Vec<PredictedPhenotype>, RoundTripError>;
}

/// Batched greedy or beam decoding, per the model configuration.
pub struct ArnnTranslator<'a> {
    pub model: &'a Arnn,
    pub batch: usize,
}

impl Translator for ArnnTranslator<'_> {
    fn disease_codes(&self) -> Vec<IcdCode> {
        self.model
            .source_vocab()
            .symbols()
            .iter()
            .filter_map(|s| match s {
                Symbol::Icd(c) => Some(*c),
                _ => None,
            })
            .collect()
    }

    fn translate(&self, phenotypes: &[Phenotype]) -> Result<Vec<Option<Prescription>>, RoundTripError> {
        self.model
            .translate_all(phenotypes, self.batch)?
            .into_iter()
            .map(|r| match r {
                Ok(t) => Ok(Some(t.prescription)),
                Err(ArnnError::Grammar { .. }) => Ok(None),
                Err(e) => Err(e.into()),
            })
            .collect()
    }
}

pub struct RcnnClassifier<'a> {
    model: &'a Rcnn,
    diseases: &'a DiseaseTable,
    batch: usize,
}

impl<'a> RcnnClassifier<'a> {
    pub fn new(model: &'a Rcnn, diseases: &'a DiseaseTable, batch: usize) -> Result<Self, RoundTripError> {
        let heads = &model.config().head_sizes;
        if heads.first() != Some(&diseases.len()) {
            return Err(RoundTripError::VocabularyMismatch {
                translator_only: 0,
                classifier_only: heads.first().copied().unwrap_or(0).abs_diff(diseases.len()),
            });
        }
        Ok(RcnnClassifier { model, diseases, batch })
    }
}

impl Classifier for RcnnClassifier<'_> {
    fn disease_codes(&self) -> Vec<IcdCode> {
        self.diseases.codes().to_vec()
    }

    fn classify(&self, prescriptions: &[Prescription]) -> Result<Vec<PredictedPhenotype>, RoundTripError> {
        let inputs: Vec<_> = prescriptions.iter().map(encode_prescription).collect();
        let preds = self.model.predict_all(&inputs, self.batch)?;
        preds.iter().map(|p| heads_to_phenotype(p.classes(), self.diseases)).collect()
    }
}

fn heads_to_phenotype(c: [usize; N_HEADS], diseases: &DiseaseTable) -> Result<PredictedPhenotype, RoundTripError> {
    let bad = |head, class| RoundTripError::BadClass { head, class };
    Ok(PredictedPhenotype {
        primary: diseases.code(c[0]).ok_or(bad("primary", c[0]))?,
        sex: Sex::from_index(c[3]).ok_or(bad("sex", c[3]))?,
        age: u8::try_from(c[4]).map_err(|_| bad("age", c[4]))?,
        month: u8::try_from(c[5] + 1).map_err(|_| bad("month", c[5]))?,
        year: u8::try_from(c[6]).map_err(|_| bad("year", c[6]))?,
    })
}

/// Template lookup against the generator's ground truth, in both directions.
///
/// Translation is the noise-free expected prescription. Classification picks
/// the disease whose monarch leads the prescription (ties broken by template
/// overlap) and reads sex, age band, season and synonym era from the planted
/// modifier and synonym components.
pub struct GroundTruthOracle<'a> {
    pub truth: &'a GroundTruth,
}

impl Translator for GroundTruthOracle<'_> {
    fn disease_codes(&self) -> Vec<IcdCode> {
        self.truth.diseases.iter().map(|d| d.code).collect()
    }

    fn translate(&self, phenotypes: &[Phenotype]) -> Result<Vec<Option<Prescription>>, RoundTripError> {
        Ok(phenotypes.iter().map(|p| self.truth.expected_prescription(p).ok()).collect())
    }
}

impl Classifier for GroundTruthOracle<'_> {
    fn disease_codes(&self) -> Vec<IcdCode> {
        self.truth.diseases.iter().map(|d| d.code).collect()
    }

    fn classify(&self, prescriptions: &[Prescription]) -> Result<Vec<PredictedPhenotype>, RoundTripError> {
        let t = self.truth;
        let m = &t.modifiers;
        let out = prescriptions
            .iter()
            .map(|p| {
                let ids: Vec<_> = p
                    .components()
                    .iter()
                    .map(|&(c, _)| t.synonyms.iter().find(|s| s.1 == c).map_or(c, |s| s.0))
                    .collect();
                let lead = ids.first().copied();
                let score = |d: &crate::corpus::generator::DiseaseProfile| {
                    let overlap = d.components.iter().filter(|c| ids.contains(c)).count();
                    (Some(d.components[0]) == lead, overlap)
                };
                let mut best = 0;
                for (i, d) in t.diseases.iter().enumerate() {
                    if score(d) > score(&t.diseases[best]) {
                        best = i;
                    }
                }
                let has = |c| p.contains(c);
                let age = if has(m.child) {
                    CHILD_BELOW / 2
                } else if has(m.elder) {
                    ELDER_FROM + 10
                } else {
                    (CHILD_BELOW + ELDER_FROM) / 2
                };
                let season = if has(m.winter) {
                    Season::Winter
                } else if has(m.summer) {
                    Season::Summer
                } else {
                    Season::Spring
                };
                let twin = t.synonyms.iter().any(|s| p.contains(s.1));
                PredictedPhenotype {
                    primary: t.diseases[best].code,
                    sex: if has(m.male) { Sex::Male } else { Sex::Female },
                    age,
                    month: season.months()[1],
                    year: if twin { SYNONYM_YEAR } else { 0 },
                }
            })
            .collect();
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundTripRow {
    pub source: Phenotype,
    /// `None` when the translation violated the target grammar.
    pub prescription: Option<Prescription>,
    pub predicted: Option<PredictedPhenotype>,
    /// Per [`COMPARED`] head; all false on a grammar failure.
    pub matches: [bool; 5],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundTripReport {
    pub rows: Vec<RoundTripRow>,
    /// Mean of each flag column.
    pub rates: [f64; 5],
    pub grammar_failures: usize,
    /// `1 / diseases`, the uniform-guess primary match rate.
    pub chance: f64,
}

impl RoundTripReport {
    pub fn primary_rate(&self) -> f64 {
        self.rates[0]
    }

    pub fn grammar_failure_rate(&self) -> f64 {
        self.grammar_failures as f64 / self.rows.len() as f64
    }
}

fn compare(src: &Phenotype, p: &PredictedPhenotype) -> [bool; 5] {
    [
        p.primary == src.primary(),
        p.sex == src.sex(),
        p.age == src.age(),
        src.season().contains(p.month),
        src.year() == Some(p.year),
    ]
}

/// Translate, encode, classify and compare every phenotype.
pub fn roundtrip_check(translator: &dyn Translator, classifier: &dyn Classifier, phenotypes: &[Phenotype]) -> Result<RoundTripReport, RoundTripError> {
    if phenotypes.is_empty() {
        return Err(RoundTripError::Empty);
    }
    let mut tc = translator.disease_codes();
    let mut cc = classifier.disease_codes();
    tc.sort_unstable();
    tc.dedup();
    cc.sort_unstable();
    cc.dedup();
    if tc != cc {
        return Err(RoundTripError::VocabularyMismatch {
            translator_only: tc.iter().filter(|c| cc.binary_search(c).is_err()).count(),
            classifier_only: cc.iter().filter(|c| tc.binary_search(c).is_err()).count(),
        });
    }
    let translated = translator.translate(phenotypes)?;
    if translated.len() != phenotypes.len() {
        return Err(RoundTripError::CountMismatch { want: phenotypes.len(), got: translated.len() });
    }
    let parsed: Vec<Prescription> = translated.iter().flatten().cloned().collect();
    let predicted = classifier.classify(&parsed)?;
    if predicted.len() != parsed.len() {
        return Err(RoundTripError::CountMismatch { want: parsed.len(), got: predicted.len() });
    }
    let mut next = predicted.into_iter();
    let mut rows = Vec::with_capacity(phenotypes.len());
    let mut totals = [0usize; 5];
    let mut grammar_failures = 0;
    for (src, pres) in phenotypes.iter().zip(translated) {
        let (pred, matches) = match pres {
            Some(_) => {
                let p = next.next().unwrap_or_else(|| unreachable!());
                (Some(p), compare(src, &p))
            }
            None => {
                grammar_failures += 1;
                (None, [false; 5])
            }
        };
        for (t, &m) in totals.iter_mut().zip(&matches) {
            *t += m as usize;
        }
        rows.push(RoundTripRow {
            source: *src,
            prescription: pres,
            predicted: pred,
            matches,
        });
    }
    let n = rows.len() as f64;
    Ok(RoundTripReport {
        rows,
        rates: totals.map(|t| t as f64 / n),
        grammar_failures,
        chance: 1.0 / tc.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<Option<Prescription>>, Vec<IcdCode>);

    impl Translator for Fixed {
        fn disease_codes(&self) -> Vec<IcdCode> {
            self.1.clone()
        }
        fn translate(&self, _: &[Phenotype]) -> Result<Vec<Option<Prescription>>, RoundTripError> {
            Ok(self.0.clone())
        }
    }

    struct Constant(PredictedPhenotype, Vec<IcdCode>);

    impl Classifier for Constant {
        fn disease_codes(&self) -> Vec<IcdCode> {
            self.1.clone()
        }
        fn classify(&self, p: &[Prescription]) -> Result<Vec<PredictedPhenotype>, RoundTripError> {
            Ok(p.iter().map(|_| self.0).collect())
        }
    }

    fn code(s: &str) -> IcdCode {
        s.parse().unwrap()
    }

    fn prescription() -> Prescription {
        let c = crate::corpus::ComponentId::new(1).unwrap();
        Prescription::new(alloc::vec![(c, crate::corpus::Dose::MAX)], None, 1, 7).unwrap()
    }

    #[test]
    fn flags_rates_and_grammar_failures() {
        let a = Phenotype::new(code("001"), None, None, Sex::Male, 30, 1, Some(2)).unwrap();
        let b = Phenotype::new(code("002"), None, None, Sex::Female, 30, 4, Some(2)).unwrap();
        let codes = alloc::vec![code("001"), code("002")];
        let pred = PredictedPhenotype {
            primary: code("001"),
            sex: Sex::Male,
            age: 30,
            month: 2,
            year: 2,
        };
        let tr = Fixed(alloc::vec![Some(prescription()), Some(prescription()), None], codes.clone());
        let report = roundtrip_check(&tr, &Constant(pred, codes), &[a, b, a]).unwrap();
        assert_eq!(report.rows[0].matches, [true; 5]);
        assert_eq!(report.rows[1].matches, [false, false, true, false, true]);
        assert_eq!(report.rows[2].matches, [false; 5]);
        assert!(report.rows[2].predicted.is_none());
        assert_eq!(report.grammar_failures, 1);
        assert_eq!(report.rates, [1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(report.chance, 0.5);
    }

    #[test]
    fn vocabulary_mismatch_is_an_error() {
        let a = Phenotype::new(code("001"), None, None, Sex::Male, 30, 1, Some(2)).unwrap();
        let pred = PredictedPhenotype {
            primary: code("001"),
            sex: Sex::Male,
            age: 30,
            month: 2,
            year: 2,
        };
        let tr = Fixed(alloc::vec![Some(prescription())], alloc::vec![code("001"), code("002")]);
        let cl = Constant(pred, alloc::vec![code("001"), code("003"), code("004")]);
        assert_eq!(
            roundtrip_check(&tr, &cl, &[a]),
            Err(RoundTripError::VocabularyMismatch {
                translator_only: 1,
                classifier_only: 2
            })
        );
        assert_eq!(roundtrip_check(&tr, &cl, &[]), Err(RoundTripError::Empty));
    }
}
