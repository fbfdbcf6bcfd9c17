use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::config::CvaeConfig;
use super::model::{CvaeModel, ParamEntry, ParamSet, TrainingMeta};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: CvaeConfig,
    layers: Vec<ParamEntry>,
    training_meta: Option<TrainingMeta>,
    payload: String,
    n_values: usize,
    sha256: String,
}

/// SHA-256 of the little-endian `f32` parameter payload, hex encoded.
pub fn params_checksum(model: &CvaeModel<f32>) -> String {
    hex(&Sha256::digest(payload_bytes(model.params().data())))
}

fn payload_bytes(data: &[f32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data {
        buf.write_f32::<LittleEndian>(v).expect("in-memory write");
    }
    buf
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<path>` (JSON manifest) and the raw payload next to it with a
/// `.bin` extension. Returns the payload path.
pub fn save_checkpoint(model: &CvaeModel<f32>, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let payload_path = path.with_extension("bin");
    let bytes = payload_bytes(model.params().data());
    fs::write(&payload_path, &bytes)?;
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: model.config().clone(),
        layers: model.params().entries().to_vec(),
        training_meta: model.training_meta().cloned(),
        payload: payload_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        n_values: model.params().len(),
        sha256: hex(&Sha256::digest(&bytes)),
    };
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(payload_path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CvaeModel<f32>> {
    let path = path.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {}", manifest.format_version),
        ));
    }
    let payload_path = path.parent().unwrap_or_else(|| Path::new(".")).join(&manifest.payload);
    let bytes = fs::read(&payload_path)?;
    if bytes.len() != manifest.n_values * 4 {
        return Err(Error::format(
            &payload_path,
            format!("expected {} bytes, found {}", manifest.n_values * 4, bytes.len()),
        ));
    }
    if hex(&Sha256::digest(&bytes)) != manifest.sha256 {
        return Err(Error::format(&payload_path, "checksum mismatch"));
    }
    let mut data = vec![0f32; manifest.n_values];
    Cursor::new(&bytes).read_f32_into::<LittleEndian>(&mut data)?;
    let params = ParamSet::from_parts(manifest.layers, data)?;
    manifest.config.validate()?;
    CvaeModel::from_parts(manifest.config, params, manifest.training_meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CvaeConfig::desk(8);
        let mut m = CvaeModel::<f32>::init(&cfg, 5).unwrap();
        m.params_mut().data_mut()[3] = f32::from_bits(0x3f80_0001);
        let p = dir.path().join("model.json");
        save_checkpoint(&m, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(params_checksum(&back), params_checksum(&m));
        assert!(back
            .params()
            .data()
            .iter()
            .zip(m.params().data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corrupt_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = CvaeModel::<f32>::init(&CvaeConfig::desk(8), 1).unwrap();
        let p = dir.path().join("m.json");
        let bin = save_checkpoint(&m, &p).unwrap();
        let mut bytes = fs::read(&bin).unwrap();
        bytes[0] ^= 1;
        fs::write(&bin, &bytes).unwrap();
        assert!(load_checkpoint(&p).is_err());
        bytes.pop();
        fs::write(&bin, &bytes).unwrap();
        let err = load_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains("bytes"), "{err}");
    }
}
