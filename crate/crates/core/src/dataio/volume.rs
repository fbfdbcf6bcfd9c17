use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VOLUME_FORMAT_VERSION: u32 = 1;

/// A cubic scalar grid stored `z`-major (`index = (z * side + y) * side + x`).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    side: usize,
    voxels: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    side: usize,
    version: u32,
}

impl Volume {
    pub fn new(side: usize, voxels: Vec<f32>) -> Result<Self> {
        if side == 0 || voxels.len() != side * side * side {
            return Err(Error::shape(
                "volume",
                format!("side {side} needs {} voxels, got {}", side.pow(3), voxels.len()),
            ));
        }
        Ok(Self { side, voxels })
    }

    pub fn from_fn(side: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut voxels = Vec::with_capacity(side * side * side);
        for z in 0..side {
            for y in 0..side {
                for x in 0..side {
                    voxels.push(f(z, y, x));
                }
            }
        }
        Self { side, voxels }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[(z * self.side + y) * self.side + x]
    }

    /// `(min, max)` over all voxels.
    pub fn value_range(&self) -> (f32, f32) {
        self.voxels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("vol"), path.with_extension("json"))
}

/// Writes `<stem>.vol` (raw little-endian f32) and the `<stem>.json` header.
pub fn save_volume(path: impl AsRef<Path>, volume: &Volume) -> Result<()> {
    let (vol_path, json_path) = sidecar_paths(path.as_ref());
    let mut bytes = vec![0u8; volume.voxels.len() * 4];
    LittleEndian::write_f32_into(&volume.voxels, &mut bytes);
    fs::File::create(&vol_path)?.write_all(&bytes)?;
    let header = VolumeHeader {
        side: volume.side,
        version: VOLUME_FORMAT_VERSION,
    };
    fs::write(json_path, serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

/// Reads a volume written by [`save_volume`]; `path` may name the `.vol`
/// file, the `.json` header, or the shared stem.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let (vol_path, json_path) = sidecar_paths(path.as_ref());
    let header: VolumeHeader = serde_json::from_str(&fs::read_to_string(&json_path)?)
        .map_err(|e| Error::format(&json_path, e.to_string()))?;
    if header.version != VOLUME_FORMAT_VERSION {
        return Err(Error::format(
            &json_path,
            format!("unsupported version {}", header.version),
        ));
    }
    if header.side == 0 {
        return Err(Error::format(&json_path, "side must be >= 1"));
    }
    let bytes = fs::read(&vol_path)?;
    let expected = header.side.pow(3) * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            &vol_path,
            format!("expected {expected} bytes for side {}, found {}", header.side, bytes.len()),
        ));
    }
    let mut voxels = vec![0f32; header.side.pow(3)];
    LittleEndian::read_f32_into(&bytes, &mut voxels);
    if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "{}: non-finite voxel at index {i}",
            vol_path.display()
        )));
    }
    Volume::new(header.side, voxels)
}

/// Per-volume min-max normalization to `[0, 1]` (constant volumes become
/// zeros), then corner-aligned trilinear resampling to `target_side`.
pub fn preprocess(volume: &Volume, target_side: usize) -> Result<Volume> {
    if target_side < 2 {
        return Err(Error::Input(format!(
            "target side must be >= 2, got {target_side}"
        )));
    }
    let (lo, hi) = volume.value_range();
    let normalized: Vec<f64> = if hi > lo {
        let (lo, span) = (lo as f64, (hi - lo) as f64);
        volume.voxels.iter().map(|&v| (v as f64 - lo) / span).collect()
    } else {
        vec![0.0; volume.voxels.len()]
    };
    if target_side == volume.side {
        return Volume::new(target_side, normalized.into_iter().map(|v| v as f32).collect());
    }
    Ok(resample_trilinear(&normalized, volume.side, target_side))
}

fn resample_trilinear(src: &[f64], n: usize, t: usize) -> Volume {
    // Output index i samples source coordinate i * (n - 1) / (t - 1).
    let axis: Vec<(usize, usize, f64)> = (0..t)
        .map(|i| {
            if n == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (n - 1) as f64 / (t - 1) as f64;
            let i0 = (pos.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect();
    let at = |z: usize, y: usize, x: usize| src[(z * n + y) * n + x];
    Volume::from_fn(t, |z, y, x| {
        let (z0, z1, fz) = axis[z];
        let (y0, y1, fy) = axis[y];
        let (x0, x1, fx) = axis[x];
        let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f;
        let c00 = lerp(at(z0, y0, x0), at(z0, y0, x1), fx);
        let c01 = lerp(at(z0, y1, x0), at(z0, y1, x1), fx);
        let c10 = lerp(at(z1, y0, x0), at(z1, y0, x1), fx);
        let c11 = lerp(at(z1, y1, x0), at(z1, y1, x1), fx);
        lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v = Volume::from_fn(8, |_, _, _| rng.gen_range(-3.0f32..7.0));
        save_volume(dir.path().join("a"), &v).unwrap();
        let back = load_volume(dir.path().join("a.vol")).unwrap();
        let bits = |x: &Volume| x.voxels().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&v), bits(&back));
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::from_fn(4, |z, y, x| (z + y + x) as f32);
        save_volume(dir.path().join("t"), &v).unwrap();
        let p = dir.path().join("t.vol");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_volume(&p).unwrap_err().to_string();
        assert!(err.contains("256") && err.contains("252"), "{err}");
    }

    #[test]
    fn side_four_accepts_sixty_four_floats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s");
        fs::write(p.with_extension("json"), r#"{"side": 4, "version": 1}"#).unwrap();
        fs::write(p.with_extension("vol"), vec![0u8; 64 * 4]).unwrap();
        assert_eq!(load_volume(&p).unwrap().voxels().len(), 64);
    }

    #[test]
    fn non_finite_voxels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut vals = vec![0.0f32; 8];
        vals[3] = f32::NAN;
        save_volume(dir.path().join("n"), &Volume::new(2, vals).unwrap()).unwrap();
        assert!(matches!(load_volume(dir.path().join("n")), Err(Error::Data(_))));
    }

    #[test]
    fn constant_volume_maps_to_zeros() {
        let v = Volume::from_fn(3, |_, _, _| 4.2);
        let out = preprocess(&v, 5).unwrap();
        assert_eq!(out.side(), 5);
        assert!(out.voxels().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalized_target_size_is_identity() {
        let v = Volume::from_fn(4, |z, y, x| ((z * 16 + y * 4 + x) as f32) / 63.0);
        let out = preprocess(&v, 4).unwrap();
        assert_eq!(out, v);
        assert_eq!(preprocess(&out, 4).unwrap(), out);
    }

    #[test]
    fn trilinear_upsample_hand_values() {
        // value = 4z + 2y + x over the 2^3 corners, normalized by 7.
        let v = Volume::from_fn(2, |z, y, x| (4 * z + 2 * y + x) as f32);
        let out = preprocess(&v, 4).unwrap();
        // Output index i sits at source coordinate i / 3, and the field is
        // linear, so voxel (z, y, x) = (4z + 2y + x) / 3 / 7.
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    let want = (4 * z + 2 * y + x) as f64 / 3.0 / 7.0;
                    assert!((out.at(z, y, x) as f64 - want).abs() < 1e-6);
                }
            }
        }
        assert!((out.at(1, 1, 1) as f64 - 1.0 / 3.0).abs() < 1e-6);
        assert!((out.at(1, 2, 2) as f64 - 10.0 / 21.0).abs() < 1e-6);
    }
}
