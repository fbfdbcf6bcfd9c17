//! Deterministic synthetic cohort.
//!
//! Every subject is a smooth ellipsoidal "brain" with a darker inner
//! ellipsoid, each with random per-subject placement, size and gain, plus
//! voxel noise. Positive subjects additionally carry a localized Gaussian
//! intensity dip whose depth is `salient_amplitude * u` with `u ~ U(0, 2)`.
//! The dip only lowers intensity inside the brain, so it never moves the
//! per-volume min/max used by normalization.
//!
//! Region areas are independent log-normal-ish scalars around a per-region
//! base; planted regions add `region_coupling * base * depth` for positives
//! and zero-mean noise of matching scale for controls.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::dataset::{LabeledDataset, Label, RegionTable, Subject, REGION_NAMES};
use super::volume::Volume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub n_positive: usize,
    pub n_control: usize,
    pub side: usize,
    pub shared_structure_scale: f64,
    pub salient_amplitude: f64,
    pub salient_region_indices: Vec<usize>,
    pub region_coupling: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            n_positive: 42,
            n_control: 36,
            side: 32,
            shared_structure_scale: 1.0,
            salient_amplitude: 0.35,
            salient_region_indices: vec![7],
            region_coupling: 1.7,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_positive < 1 || self.n_control < 1 {
            return Err(Error::Config(format!(
                "phantom cohort needs at least one subject per class (got {} positive, {} control)",
                self.n_positive, self.n_control
            )));
        }
        if self.side < 2 {
            return Err(Error::Config("phantom side must be >= 2".into()));
        }
        if self.salient_amplitude < 0.0 || self.noise_sigma < 0.0 || self.shared_structure_scale < 0.0 {
            return Err(Error::Config(
                "amplitude, noise and structure scale must be non-negative".into(),
            ));
        }
        if let Some(&r) = self.salient_region_indices.iter().find(|&&r| r >= REGION_NAMES.len()) {
            return Err(Error::Config(format!("salient region index {r} out of range")));
        }
        Ok(())
    }
}

/// Per-subject draws. Drawn in the same order for both classes so that a
/// zero amplitude makes the classes identical in law.
struct Anatomy {
    center: [f64; 3],
    radii: [f64; 3],
    inner_scale: f64,
    inner_offset: [f64; 3],
    gain: f64,
    salient_factor: f64,
    region_noise: [f64; 34],
    region_control_noise: f64,
}

const BASE_RADII: [f64; 3] = [0.36, 0.32, 0.30];
const DIP_OFFSET: [f64; 3] = [0.18, 0.12, -0.08];
const DIP_WIDTH: f64 = 0.15;
const EDGE: f64 = 0.06;

fn draw_anatomy(rng: &mut rng::Rng, scale: f64) -> Anatomy {
    let mut n = || -> f64 { rng.sample(StandardNormal) };
    let center = [0.5 + 0.04 * scale * n(), 0.5 + 0.04 * scale * n(), 0.5 + 0.04 * scale * n()];
    let radii = [
        BASE_RADII[0] * (1.0 + 0.10 * scale * n()),
        BASE_RADII[1] * (1.0 + 0.10 * scale * n()),
        BASE_RADII[2] * (1.0 + 0.10 * scale * n()),
    ];
    let inner_scale = 0.35 * (1.0 + 0.15 * scale * n());
    let inner_offset = [0.02 * scale * n(), 0.02 * scale * n(), 0.02 * scale * n()];
    let gain = 1.0 + 0.08 * scale * n();
    let mut region_noise = [0.0; 34];
    for r in region_noise.iter_mut() {
        *r = n();
    }
    let region_control_noise = n();
    let salient_factor = rng.gen_range(0.0..2.0);
    Anatomy {
        center,
        radii,
        inner_scale,
        inner_offset,
        gain,
        salient_factor,
        region_noise,
        region_control_noise,
    }
}

fn soft_inside(p: [f64; 3], c: [f64; 3], r: [f64; 3]) -> f64 {
    let rho = ((0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>()).sqrt();
    1.0 / (1.0 + ((rho - 1.0) / EDGE).exp())
}

fn region_base(r: usize) -> f64 {
    800.0 + 60.0 * ((r * 7) % 34) as f64
}

/// Generates the cohort: positives first (`pos_000`, ...), then controls.
pub fn generate_phantoms(config: &PhantomConfig) -> Result<LabeledDataset> {
    config.validate()?;
    let n = config.n_positive + config.n_control;
    let side = config.side;
    let mut subjects = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i < config.n_positive {
            Label::Positive
        } else {
            Label::Control
        };
        let mut rng = rng::derive(config.seed, i as u64);
        let a = draw_anatomy(&mut rng, config.shared_structure_scale);
        let depth = match label {
            Label::Positive => config.salient_amplitude * a.salient_factor,
            Label::Control => 0.0,
        };
        let inner_c = [
            a.center[0] + a.inner_offset[0],
            a.center[1] + a.inner_offset[1],
            a.center[2] + a.inner_offset[2],
        ];
        let inner_r = [
            a.radii[0] * a.inner_scale,
            a.radii[1] * a.inner_scale,
            a.radii[2] * a.inner_scale,
        ];
        let dip = [
            a.center[0] + DIP_OFFSET[0],
            a.center[1] + DIP_OFFSET[1],
            a.center[2] + DIP_OFFSET[2],
        ];
        let mut voxels = Vec::with_capacity(side.pow(3));
        for z in 0..side {
            for y in 0..side {
                for x in 0..side {
                    let p = [
                        (z as f64 + 0.5) / side as f64,
                        (y as f64 + 0.5) / side as f64,
                        (x as f64 + 0.5) / side as f64,
                    ];
                    let tissue = soft_inside(p, a.center, a.radii);
                    let inner = soft_inside(p, inner_c, inner_r);
                    let mut v = a.gain * (0.8 * tissue - 0.4 * inner);
                    if depth > 0.0 {
                        let d2: f64 = (0..3).map(|k| (p[k] - dip[k]).powi(2)).sum();
                        v -= depth * tissue * (-d2 / (2.0 * DIP_WIDTH * DIP_WIDTH)).exp();
                    }
                    let noise: f64 = rng.sample(StandardNormal);
                    voxels.push((v + config.noise_sigma * noise) as f32);
                }
            }
        }
        // Standard deviation of the positive depths.
        let spread = config.salient_amplitude * 2.0 / 12f64.sqrt();
        let row: Vec<f64> = (0..REGION_NAMES.len())
            .map(|r| {
                let base = region_base(r);
                let mut area = base * (1.0 + 0.08 * a.region_noise[r]);
                if config.salient_region_indices.contains(&r) {
                    area += match label {
                        Label::Positive => config.region_coupling * base * depth,
                        Label::Control => {
                            config.region_coupling * base * spread * a.region_control_noise
                        }
                    };
                }
                area
            })
            .collect();
        let id = match label {
            Label::Positive => format!("pos_{i:03}"),
            Label::Control => format!("ctl_{:03}", i - config.n_positive),
        };
        subjects.push(Subject {
            id,
            volume: Volume::new(side, voxels)?,
            label,
        });
        rows.push(row);
    }
    let table = RegionTable {
        names: REGION_NAMES.iter().map(|s| s.to_string()).collect(),
        rows,
    };
    LabeledDataset::new(subjects, Some(table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, amplitude: f64) -> PhantomConfig {
        PhantomConfig {
            n_positive: 6,
            n_control: 5,
            side: 8,
            salient_amplitude: amplitude,
            seed,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn default_cohort_shape() {
        let cfg = PhantomConfig {
            side: 4,
            ..PhantomConfig::default()
        };
        let ds = generate_phantoms(&cfg).unwrap();
        assert_eq!(ds.len(), 78);
        assert_eq!(ds.count(Label::Positive), 42);
        assert_eq!(ds.count(Label::Control), 36);
        assert_eq!(ds.region_table().unwrap().n_regions(), 34);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_phantoms(&small(3, 0.35)).unwrap();
        let b = generate_phantoms(&small(3, 0.35)).unwrap();
        assert_eq!(a, b);
        let c = generate_phantoms(&small(4, 0.35)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_empty_classes() {
        let cfg = PhantomConfig {
            n_control: 0,
            ..PhantomConfig::default()
        };
        assert!(generate_phantoms(&cfg).is_err());
    }

    #[test]
    fn dip_never_moves_the_intensity_range_much() {
        let cfg = PhantomConfig {
            n_positive: 4,
            n_control: 4,
            side: 16,
            noise_sigma: 0.0,
            ..PhantomConfig::default()
        };
        let ds = generate_phantoms(&cfg).unwrap();
        for s in ds.subjects() {
            let (lo, hi) = s.volume.value_range();
            assert!(lo >= -1e-3, "{lo}");
            assert!(hi > 0.5);
        }
    }
}
