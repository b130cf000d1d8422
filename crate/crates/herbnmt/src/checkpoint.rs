//! Model checkpoints: `<name>.json` lists every tensor's name, shape and
//! byte offset into `<name>.bin`, one contiguous run of little-endian `f32`.

use std::path::{Path, PathBuf};

use herbnmt_core::arnn::{Arnn, ArnnConfig};
use herbnmt_core::corpus::{DiseaseTable, Role, Symbol, Vocabulary};
use herbnmt_core::nn::{ParamStore, Tensor};
use herbnmt_core::rcnn::{Rcnn, RcnnConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

pub const FORMAT: &str = "herbnmt-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Bytes from the start of the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub blob: String,
    pub blob_bytes: usize,
    pub blob_sha256: String,
    pub tensors: Vec<TensorEntry>,
    pub meta: serde_json::Value,
}

impl CheckpointManifest {
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum()
    }
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("json"), base.with_extension("bin"))
}

fn ck_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), message: message.into() }
}

/// Writes `base.json` and `base.bin`; returns both paths.
pub fn save(base: &Path, kind: &str, meta: serde_json::Value, params: &ParamStore<f32>) -> Result<(PathBuf, PathBuf)> {
    let (json, bin) = paths(base);
    let mut blob = Vec::with_capacity(params.element_count() * 4);
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.to_string(),
        version: VERSION,
        kind: kind.to_string(),
        blob: bin.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
        blob_bytes: blob.len(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
        tensors,
        meta,
    };
    std::fs::write(&bin, &blob).map_err(io_err(&bin))?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| ck_err(&json, e.to_string()))?;
    std::fs::write(&json, text + "\n").map_err(io_err(&json))?;
    Ok((json, bin))
}

pub fn read_manifest(base: &Path) -> Result<CheckpointManifest> {
    let (json, _) = paths(base);
    let text = std::fs::read_to_string(&json).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(json.clone())
        } else {
            Error::Io { path: json.clone(), source: e }
        }
    })?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| ck_err(&json, e.to_string()))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(ck_err(&json, format!("unsupported format {} v{}", m.format, m.version)));
    }
    Ok(m)
}

/// Manifest and tensors, with the blob hash and layout verified.
pub fn load(base: &Path) -> Result<(CheckpointManifest, Vec<(String, Tensor<f32>)>)> {
    let m = read_manifest(base)?;
    let bin = base.with_file_name(&m.blob);
    let blob = std::fs::read(&bin).map_err(io_err(&bin))?;
    if blob.len() != m.blob_bytes || hex::encode(Sha256::digest(&blob)) != m.blob_sha256 {
        return Err(ck_err(&bin, "blob size or hash differs from the manifest"));
    }
    let mut expected = 0;
    let mut out = Vec::with_capacity(m.tensors.len());
    for t in &m.tensors {
        let n: usize = t.shape.iter().product();
        if t.offset != expected || t.offset + 4 * n > blob.len() {
            return Err(ck_err(&bin, format!("tensor {} has a bad offset", t.name)));
        }
        let data = blob[t.offset..t.offset + 4 * n].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        out.push((t.name.clone(), Tensor::new(t.shape.clone(), data)?));
        expected = t.offset + 4 * n;
    }
    if expected != blob.len() {
        return Err(ck_err(&bin, "trailing bytes after the last tensor"));
    }
    Ok((m, out))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RcnnMeta {
    config: RcnnConfig,
    diseases: DiseaseTable,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabMeta {
    role: Role,
    symbols: Vec<Symbol>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArnnMeta {
    config: ArnnConfig,
    source: VocabMeta,
    target: VocabMeta,
}

fn vocab_meta(v: &Vocabulary) -> VocabMeta {
    VocabMeta {
        role: v.role(),
        symbols: v.symbols().to_vec(),
    }
}

fn meta_value<T: Serialize>(base: &Path, meta: &T) -> Result<serde_json::Value> {
    serde_json::to_value(meta).map_err(|e| ck_err(base, e.to_string()))
}

fn meta_of<T: for<'de> Deserialize<'de>>(base: &Path, m: &CheckpointManifest, kind: &str) -> Result<T> {
    if m.kind != kind {
        return Err(ck_err(base, format!("expected a {kind} checkpoint, found {}", m.kind)));
    }
    serde_json::from_value(m.meta.clone()).map_err(|e| ck_err(base, e.to_string()))
}

pub fn save_rcnn(base: &Path, model: &Rcnn, diseases: &DiseaseTable) -> Result<(PathBuf, PathBuf)> {
    let meta = RcnnMeta {
        config: model.config().clone(),
        diseases: diseases.clone(),
    };
    save(base, "rcnn", meta_value(base, &meta)?, model.params())
}

pub fn load_rcnn(base: &Path) -> Result<(Rcnn, DiseaseTable)> {
    let (m, tensors) = load(base)?;
    let meta: RcnnMeta = meta_of(base, &m, "rcnn")?;
    let mut model = Rcnn::new(meta.config)?;
    model.params_mut().load(tensors)?;
    Ok((model, meta.diseases))
}

pub fn save_arnn(base: &Path, model: &Arnn) -> Result<(PathBuf, PathBuf)> {
    let meta = ArnnMeta {
        config: model.config().clone(),
        source: vocab_meta(model.source_vocab()),
        target: vocab_meta(model.target_vocab()),
    };
    save(base, "arnn", meta_value(base, &meta)?, model.params())
}

pub fn load_arnn(base: &Path) -> Result<Arnn> {
    let (m, tensors) = load(base)?;
    let meta: ArnnMeta = meta_of(base, &m, "arnn")?;
    let source = Vocabulary::from_symbols(meta.source.role, meta.source.symbols)?;
    let target = Vocabulary::from_symbols(meta.target.role, meta.target.symbols)?;
    let mut model = Arnn::new(meta.config, source, target)?;
    model.params_mut().load(tensors)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use herbnmt_core::corpus::IcdCode;
    use proptest::prelude::*;

    fn store(values: &[Vec<f32>]) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        for (i, v) in values.iter().enumerate() {
            s.add(format!("t{i}"), Tensor::new(vec![v.len()], v.clone()).unwrap());
        }
        s
    }

    proptest! {
        #[test]
        fn arbitrary_bits_round_trip(bits in proptest::collection::vec(proptest::collection::vec(any::<u32>(), 0..20), 1..5)) {
            let values: Vec<Vec<f32>> = bits.iter().map(|b| b.iter().map(|&x| f32::from_bits(x)).collect()).collect();
            let dir = tempfile::tempdir().unwrap();
            let base = dir.path().join("m");
            save(&base, "test", serde_json::Value::Null, &store(&values)).unwrap();
            let (_, loaded) = load(&base).unwrap();
            for ((_, t), v) in loaded.iter().zip(&values) {
                let got: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
                let want: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn rcnn_checkpoint_round_trips_bit_exactly() {
        let table = DiseaseTable::new((1..=5).map(|i| format!("{i:03}").parse::<IcdCode>().unwrap()).collect());
        let model = Rcnn::new(RcnnConfig::desk(5, 9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("rcnn");
        save_rcnn(&base, &model, &table).unwrap();
        let (loaded, t2) = load_rcnn(&base).unwrap();
        assert_eq!(t2, table);
        assert_eq!(loaded.config(), model.config());
        for ((_, a), (_, b)) in loaded.params().iter().zip(model.params().iter()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(read_manifest(&base).unwrap().parameter_count(), model.config().parameter_count());
        assert!(matches!(load_arnn(&base), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("m");
        let (_, bin) = save(&base, "test", serde_json::Value::Null, &store(&[vec![1.0, 2.0]])).unwrap();
        let mut blob = std::fs::read(&bin).unwrap();
        blob[0] ^= 1;
        std::fs::write(&bin, &blob).unwrap();
        assert!(matches!(load(&base), Err(Error::Checkpoint { .. })));
        assert!(matches!(load(&dir.path().join("none")), Err(Error::MissingInput(_))));
    }
}
