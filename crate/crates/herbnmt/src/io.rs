//! Corpus files: one JSON object per line.
//!
//! ```text
//! {"icd9_1":"434","icd9_2":"0","icd9_3":"0","sex":"male","age":65,"month":3,"year":2009,
//!  "components":[[12,5.0],[340,2.8]],"acupuncture":null,"schedule":3,"duration_days":7}
//! ```
//!
//! Absent diagnoses are `"0"`, an unspecified year is `null`, doses are grams
//! with one fractional digit and component ids are 1-based catalogue indices.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use herbnmt_core::corpus::types::FIRST_YEAR;
use herbnmt_core::corpus::{ComponentId, Dose, IcdCode, Phenotype, Prescription, Record, Sex};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const ABSENT_ICD: &str = "0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub icd9_1: String,
    pub icd9_2: String,
    pub icd9_3: String,
    pub sex: Sex,
    pub age: u8,
    pub month: u8,
    pub year: Option<u16>,
    pub components: Vec<(u16, f64)>,
    pub acupuncture: Option<u8>,
    pub schedule: u8,
    pub duration_days: u8,
}

/// The phenotype fields of a line; prescription fields are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeLine {
    pub icd9_1: String,
    #[serde(default = "absent")]
    pub icd9_2: String,
    #[serde(default = "absent")]
    pub icd9_3: String,
    pub sex: Sex,
    pub age: u8,
    pub month: u8,
    #[serde(default)]
    pub year: Option<u16>,
}

fn absent() -> String {
    ABSENT_ICD.to_string()
}

fn icd_field(c: Option<IcdCode>) -> String {
    c.map_or_else(absent, |c| c.as_str().to_string())
}

fn parse_icd(s: &str) -> std::result::Result<Option<IcdCode>, String> {
    if s == ABSENT_ICD {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|e: herbnmt_core::corpus::CorpusError| e.to_string())
}

fn year_field(y: Option<u8>) -> Option<u16> {
    y.map(|y| FIRST_YEAR + y as u16)
}

fn parse_year(y: Option<u16>) -> std::result::Result<Option<u8>, String> {
    match y {
        None => Ok(None),
        Some(y) if y >= FIRST_YEAR && y - FIRST_YEAR < 256 => Ok(Some((y - FIRST_YEAR) as u8)),
        Some(y) => Err(format!("year {y} before {FIRST_YEAR}")),
    }
}

impl PhenotypeLine {
    pub fn from_phenotype(p: &Phenotype) -> Self {
        PhenotypeLine {
            icd9_1: p.primary().as_str().to_string(),
            icd9_2: icd_field(p.secondary()),
            icd9_3: icd_field(p.tertiary()),
            sex: p.sex(),
            age: p.age(),
            month: p.month(),
            year: year_field(p.year()),
        }
    }

    pub fn to_phenotype(&self) -> std::result::Result<Phenotype, String> {
        let primary = parse_icd(&self.icd9_1)?.ok_or("primary diagnosis is absent")?;
        Phenotype::new(primary, parse_icd(&self.icd9_2)?, parse_icd(&self.icd9_3)?, self.sex, self.age, self.month, parse_year(self.year)?).map_err(|e| e.to_string())
    }
}

impl RecordLine {
    pub fn from_record(r: &Record) -> Self {
        let p = &r.phenotype;
        let q = &r.prescription;
        RecordLine {
            icd9_1: p.primary().as_str().to_string(),
            icd9_2: icd_field(p.secondary()),
            icd9_3: icd_field(p.tertiary()),
            sex: p.sex(),
            age: p.age(),
            month: p.month(),
            year: year_field(p.year()),
            components: q.components().iter().map(|&(c, d)| (c.get(), d.decigrams() as f64 / 10.0)).collect(),
            acupuncture: q.acupuncture(),
            schedule: q.schedule(),
            duration_days: q.duration_days(),
        }
    }

    pub fn to_record(&self) -> std::result::Result<Record, String> {
        let phenotype = PhenotypeLine {
            icd9_1: self.icd9_1.clone(),
            icd9_2: self.icd9_2.clone(),
            icd9_3: self.icd9_3.clone(),
            sex: self.sex,
            age: self.age,
            month: self.month,
            year: self.year,
        }
        .to_phenotype()?;
        let mut components = Vec::with_capacity(self.components.len());
        for &(id, grams) in &self.components {
            let tenths = grams * 10.0;
            if (tenths - tenths.round()).abs() > 1e-6 {
                return Err(format!("dose {grams} g is not a multiple of 0.1 g"));
            }
            components.push((ComponentId::new(id).map_err(|e| e.to_string())?, Dose::from_grams(grams).map_err(|e| e.to_string())?));
        }
        let prescription = Prescription::new(components, self.acupuncture, self.schedule, self.duration_days).map_err(|e| e.to_string())?;
        Ok(Record { phenotype, prescription })
    }
}

fn read_lines<T>(path: &Path, mut parse: impl FnMut(&str) -> std::result::Result<T, String>) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_path_buf())
        } else {
            Error::Io { path: path.to_path_buf(), source: e }
        }
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Record>> {
    read_lines(path, |l| serde_json::from_str::<RecordLine>(l).map_err(|e| e.to_string())?.to_record())
}

pub fn read_phenotypes(path: &Path) -> Result<Vec<Phenotype>> {
    read_lines(path, |l| serde_json::from_str::<PhenotypeLine>(l).map_err(|e| e.to_string())?.to_phenotype())
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for item in items {
        let line = serde_json::to_string(&item).map_err(|e| Error::Io { path: path.to_path_buf(), source: e.into() })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_corpus(path: &Path, records: &[Record]) -> Result<()> {
    write_lines(path, records.iter().map(RecordLine::from_record))
}

pub fn write_phenotypes(path: &Path, phenotypes: &[Phenotype]) -> Result<()> {
    write_lines(path, phenotypes.iter().map(PhenotypeLine::from_phenotype))
}

#[cfg(test)]
mod tests {
    use super::*;
    use herbnmt_core::corpus::{generate_corpus, GeneratorConfig};

    #[test]
    fn generated_corpus_round_trips_through_jsonl() {
        let cfg = GeneratorConfig {
            records_per_profile: 10,
            acupuncture_rate: 0.5,
            ..GeneratorConfig::desk(3)
        };
        let records = generate_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_corpus(&path, &records).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), records);
        let phenotypes: Vec<Phenotype> = records.iter().map(|r| r.phenotype).collect();
        assert_eq!(read_phenotypes(&path).unwrap(), phenotypes);
    }

    #[test]
    fn line_format() {
        let line = r#"{"icd9_1":"43401","icd9_2":"0","icd9_3":"0","sex":"male","age":65,"month":3,"year":null,"components":[[12,5.0],[340,2.8]],"acupuncture":null,"schedule":3,"duration_days":7}"#;
        let rec = serde_json::from_str::<RecordLine>(line).unwrap().to_record().unwrap();
        assert_eq!(rec.phenotype.primary().as_str(), "43401");
        assert_eq!(rec.phenotype.secondary(), None);
        assert_eq!(rec.phenotype.year(), None);
        assert_eq!(rec.prescription.components()[1].1.decigrams(), 28);
        assert_eq!(serde_json::to_string(&RecordLine::from_record(&rec)).unwrap(), line);
    }

    #[test]
    fn bad_lines_report_their_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let good = r#"{"icd9_1":"001","icd9_2":"0","icd9_3":"0","sex":"female","age":30,"month":1,"year":2005,"components":[[1,5.0]],"acupuncture":null,"schedule":1,"duration_days":7}"#;
        let off_grid = good.replace("5.0", "2.55");
        std::fs::write(&path, format!("{good}\n\n{off_grid}\n")).unwrap();
        match read_corpus(&path) {
            Err(Error::Parse { line: 3, message, .. }) => assert!(message.contains("0.1 g")),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, good.replace("\"001\",\"icd9_2\":\"0\",\"icd9_3\":\"0\"", "\"001\",\"icd9_2\":\"0\",\"icd9_3\":\"002\"")).unwrap();
        assert!(matches!(read_corpus(&path), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_corpus(&dir.path().join("none")), Err(Error::MissingInput(_))));
    }
}
