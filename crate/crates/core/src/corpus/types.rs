use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::CorpusError;

/// Number of distinct formula/herb components.
pub const N_COMPONENTS: usize = 718;
/// Components `1..=N_FORMULAS` are formulas, the rest herbs.
pub const N_FORMULAS: usize = 303;
pub const N_ACUPUNCTURE: u8 = 5;
pub const N_SCHEDULES: u8 = 27;
pub const N_DURATIONS: u8 = 90;
pub const N_AGES: u8 = 105;
pub const N_MONTHS: u8 = 12;
pub const N_YEARS: u8 = 10;
/// Calendar year of year offset 0.
pub const FIRST_YEAR: u16 = 2004;
/// Largest single-serving dose, in grams.
pub const MAX_DOSE_GRAMS: f64 = 5.0;
const MAX_DECIGRAMS: u8 = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ComponentKind {
    Formula,
    Herb,
}

/// One-based component index in `[1, 718]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(try_from = "u16", into = "u16"))]
pub struct ComponentId(u16);

impl ComponentId {
    pub fn new(index: u16) -> Result<Self, CorpusError> {
        if index == 0 || index as usize > N_COMPONENTS {
            return Err(CorpusError::InvalidComponent(index as u32));
        }
        Ok(ComponentId(index))
    }

    pub fn get(self) -> u16 {
        self.0
    }

    /// Zero-based position in the encoded vector.
    pub fn offset(self) -> usize {
        self.0 as usize - 1
    }

    pub fn kind(self) -> ComponentKind {
        if self.0 as usize <= N_FORMULAS {
            ComponentKind::Formula
        } else {
            ComponentKind::Herb
        }
    }
}

impl TryFrom<u16> for ComponentId {
    type Error = CorpusError;
    fn try_from(v: u16) -> Result<Self, CorpusError> {
        ComponentId::new(v)
    }
}

impl From<ComponentId> for u16 {
    fn from(c: ComponentId) -> u16 {
        c.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            ComponentKind::Formula => write!(f, "F{:03}", self.0),
            ComponentKind::Herb => write!(f, "H{:03}", self.0 as usize - N_FORMULAS),
        }
    }
}

/// A dose held as whole decigrams in `[0.1, 5.0]` g.
///
/// Doses are quantized to the 0.1 g serialization grid so that the codec is
/// an exact bijection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dose(u8);

impl Dose {
    pub const MAX: Dose = Dose(MAX_DECIGRAMS);
    pub const MIN: Dose = Dose(1);

    pub fn from_decigrams(d: u8) -> Result<Self, CorpusError> {
        if d == 0 || d > MAX_DECIGRAMS {
            return Err(CorpusError::DoseOutOfRange(d as f64 / 10.0));
        }
        Ok(Dose(d))
    }

    /// Nearest decigram; rejects non-positive, non-finite and `> 5.0` g.
    pub fn from_grams(g: f64) -> Result<Self, CorpusError> {
        if !g.is_finite() || g <= 0.0 || g > MAX_DOSE_GRAMS + 1e-9 {
            return Err(CorpusError::DoseOutOfRange(g));
        }
        let d = libm::round(g * 10.0);
        if d < 1.0 {
            return Err(CorpusError::DoseOutOfRange(g));
        }
        Ok(Dose(d as u8))
    }

    /// Like [`Dose::from_grams`] but clamps into range instead of failing.
    pub fn saturating_from_grams(g: f64) -> Self {
        let d = libm::round(g * 10.0);
        if d.is_nan() || d < 1.0 {
            Dose(1)
        } else if d > MAX_DECIGRAMS as f64 {
            Dose(MAX_DECIGRAMS)
        } else {
            Dose(d as u8)
        }
    }

    pub fn decigrams(self) -> u8 {
        self.0
    }

    pub fn grams(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl fmt::Display for Dose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

/// A daily serving schedule and its display text.
pub fn schedule_text(schedule: u8) -> &'static str {
    const TEXT: [&str; N_SCHEDULES as usize] = [
        "ONCE A DAY",
        "2 TIMES A DAY",
        "3 TIMES A DAY",
        "4 TIMES A DAY",
        "5 TIMES A DAY",
        "6 TIMES A DAY",
        "EVERY OTHER DAY",
        "BEFORE SLEEP",
        "BEFORE MEALS",
        "AFTER MEALS",
        "2 TIMES A DAY BEFORE MEALS",
        "3 TIMES A DAY BEFORE MEALS",
        "2 TIMES A DAY AFTER MEALS",
        "3 TIMES A DAY AFTER MEALS",
        "3 TIMES A DAY AND BEFORE SLEEP",
        "EVERY MORNING",
        "EVERY EVENING",
        "EVERY 4 HOURS",
        "EVERY 6 HOURS",
        "EVERY 8 HOURS",
        "EVERY 12 HOURS",
        "WHEN NEEDED",
        "ONCE A WEEK",
        "2 TIMES A WEEK",
        "3 TIMES A WEEK",
        "IMMEDIATELY",
        "AS DIRECTED",
    ];
    match schedule {
        1..=N_SCHEDULES => TEXT[schedule as usize - 1],
        _ => "UNKNOWN SCHEDULE",
    }
}

/// A prescription with components in canonical order: dose descending, then
/// component index ascending.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Prescription {
    components: Vec<(ComponentId, Dose)>,
    acupuncture: Option<u8>,
    schedule: u8,
    duration_days: u8,
}

impl Prescription {
    /// Validates and sorts `components` into canonical order.
    pub fn new(mut components: Vec<(ComponentId, Dose)>, acupuncture: Option<u8>, schedule: u8, duration_days: u8) -> Result<Self, CorpusError> {
        if components.is_empty() {
            return Err(CorpusError::EmptyPrescription);
        }
        if let Some(m) = acupuncture {
            if m == 0 || m > N_ACUPUNCTURE {
                return Err(CorpusError::InvalidAcupuncture(m));
            }
        }
        if schedule == 0 || schedule > N_SCHEDULES {
            return Err(CorpusError::InvalidSchedule(schedule));
        }
        if duration_days == 0 || duration_days > N_DURATIONS {
            return Err(CorpusError::InvalidDuration(duration_days));
        }
        components.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut ids: Vec<ComponentId> = components.iter().map(|c| c.0).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(CorpusError::DuplicateComponent(w[0].get()));
        }
        Ok(Prescription {
            components,
            acupuncture,
            schedule,
            duration_days,
        })
    }

    pub fn components(&self) -> &[(ComponentId, Dose)] {
        &self.components
    }

    pub fn acupuncture(&self) -> Option<u8> {
        self.acupuncture
    }

    pub fn schedule(&self) -> u8 {
        self.schedule
    }

    pub fn duration_days(&self) -> u8 {
        self.duration_days
    }

    pub fn contains(&self, id: ComponentId) -> bool {
        self.components.iter().any(|c| c.0 == id)
    }

    /// Doses in grams, in component order.
    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.1.grams()).collect()
    }

    pub fn with_acupuncture(mut self, acupuncture: Option<u8>) -> Result<Self, CorpusError> {
        if let Some(m) = acupuncture {
            if m == 0 || m > N_ACUPUNCTURE {
                return Err(CorpusError::InvalidAcupuncture(m));
            }
        }
        self.acupuncture = acupuncture;
        Ok(self)
    }
}

/// Renders like `F001 (5.0G), H012 (2.8G); 3 TIMES A DAY; 7 DAYS`.
impl fmt::Display for Prescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (c, d)) in self.components.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{c} ({d}G)")?;
        }
        if let Some(m) = self.acupuncture {
            write!(f, "; ACUPUNCTURE {m}")?;
        }
        write!(f, "; {}; {} DAYS", schedule_text(self.schedule), self.duration_days)
    }
}

/// An ICD-9 code of 3 to 5 digits, no dot.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IcdCode {
    digits: [u8; 5],
    len: u8,
}

impl IcdCode {
    pub fn as_str(&self) -> &str {
        // Only ASCII digits are ever stored.
        core::str::from_utf8(&self.digits[..self.len as usize]).unwrap_or("")
    }
}

impl FromStr for IcdCode {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, CorpusError> {
        let b = s.as_bytes();
        if !(3..=5).contains(&b.len()) || !b.iter().all(u8::is_ascii_digit) {
            return Err(CorpusError::InvalidIcd(String::from(s)));
        }
        let mut digits = [0u8; 5];
        digits[..b.len()].copy_from_slice(b);
        Ok(IcdCode { digits, len: b.len() as u8 })
    }
}

impl fmt::Display for IcdCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for IcdCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IcdCode({})", self.as_str())
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for IcdCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for IcdCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Male, Sex::Female];

    pub fn index(self) -> usize {
        match self {
            Sex::Male => 0,
            Sex::Female => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Sex> {
        Sex::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "lowercase"))]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Autumn];

    /// Dec-Feb winter, Mar-May spring, Jun-Aug summer, Sep-Nov autumn.
    pub fn of_month(month: u8) -> Season {
        match month {
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            9..=11 => Season::Autumn,
            _ => Season::Winter,
        }
    }

    pub fn contains(self, month: u8) -> bool {
        (1..=12).contains(&month) && Season::of_month(month) == self
    }

    pub fn months(self) -> [u8; 3] {
        match self {
            Season::Winter => [12, 1, 2],
            Season::Spring => [3, 4, 5],
            Season::Summer => [6, 7, 8],
            Season::Autumn => [9, 10, 11],
        }
    }
}

/// Source-side patient description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Phenotype {
    primary: IcdCode,
    secondary: Option<IcdCode>,
    tertiary: Option<IcdCode>,
    sex: Sex,
    age: u8,
    month: u8,
    year: Option<u8>,
}

impl Phenotype {
    /// `year` is an offset from 2004; `None` means unspecified.
    pub fn new(primary: IcdCode, secondary: Option<IcdCode>, tertiary: Option<IcdCode>, sex: Sex, age: u8, month: u8, year: Option<u8>) -> Result<Self, CorpusError> {
        if secondary.is_none() && tertiary.is_some() {
            return Err(CorpusError::TertiaryWithoutSecondary);
        }
        if age >= N_AGES {
            return Err(CorpusError::InvalidAge(age));
        }
        if month == 0 || month > N_MONTHS {
            return Err(CorpusError::InvalidMonth(month));
        }
        if let Some(y) = year {
            if y >= N_YEARS {
                return Err(CorpusError::InvalidYear(y));
            }
        }
        Ok(Phenotype {
            primary,
            secondary,
            tertiary,
            sex,
            age,
            month,
            year,
        })
    }

    pub fn primary(&self) -> IcdCode {
        self.primary
    }

    pub fn secondary(&self) -> Option<IcdCode> {
        self.secondary
    }

    pub fn tertiary(&self) -> Option<IcdCode> {
        self.tertiary
    }

    pub fn sex(&self) -> Sex {
        self.sex
    }

    pub fn age(&self) -> u8 {
        self.age
    }

    pub fn month(&self) -> u8 {
        self.month
    }

    pub fn season(&self) -> Season {
        Season::of_month(self.month)
    }

    pub fn year(&self) -> Option<u8> {
        self.year
    }

    pub fn is_comorbid(&self) -> bool {
        self.secondary.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Record {
    pub phenotype: Phenotype,
    pub prescription: Prescription,
}

/// Sorted, de-duplicated disease codes; a code's position is its class index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiseaseTable {
    codes: Vec<IcdCode>,
}

impl DiseaseTable {
    pub fn new(mut codes: Vec<IcdCode>) -> Self {
        codes.sort_unstable();
        codes.dedup();
        DiseaseTable { codes }
    }

    /// Every code appearing in any ICD-9 slot.
    pub fn from_records(records: &[Record]) -> Self {
        let mut codes = Vec::new();
        for r in records {
            let p = &r.phenotype;
            codes.push(p.primary);
            codes.extend(p.secondary);
            codes.extend(p.tertiary);
        }
        DiseaseTable::new(codes)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[IcdCode] {
        &self.codes
    }

    pub fn index_of(&self, code: IcdCode) -> Option<usize> {
        self.codes.binary_search(&code).ok()
    }

    pub fn code(&self, index: usize) -> Option<IcdCode> {
        self.codes.get(index).copied()
    }
}
