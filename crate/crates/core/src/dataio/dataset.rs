use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::volume::{load_volume, save_volume, Volume};

/// Cohort label. The class index (used by the forest and the fold splitter)
/// is `Control = 0`, `Positive = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Control,
    Positive,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Control => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Control),
            1 => Some(Label::Positive),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Control => "control",
            Label::Positive => "positive",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" | "1" => Ok(Label::Positive),
            "control" | "ctl" | "0" => Ok(Label::Control),
            other => Err(Error::Input(format!("unknown label {other:?}"))),
        }
    }
}

/// The 34 cortical regions of the Desikan-Killiany parcellation, used as
/// region-table column names.
pub const REGION_NAMES: [&str; 34] = [
    "bankssts",
    "caudalanteriorcingulate",
    "caudalmiddlefrontal",
    "cuneus",
    "entorhinal",
    "fusiform",
    "inferiorparietal",
    "inferiortemporal",
    "isthmuscingulate",
    "lateraloccipital",
    "lateralorbitofrontal",
    "lingual",
    "medialorbitofrontal",
    "middletemporal",
    "parahippocampal",
    "paracentral",
    "parsopercularis",
    "parsorbitalis",
    "parstriangularis",
    "pericalcarine",
    "postcentral",
    "posteriorcingulate",
    "precentral",
    "precuneus",
    "rostralanteriorcingulate",
    "rostralmiddlefrontal",
    "superiorfrontal",
    "superiorparietal",
    "superiortemporal",
    "supramarginal",
    "frontalpole",
    "temporalpole",
    "transversetemporal",
    "insula",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub volume: Volume,
    pub label: Label,
}

/// Per-subject scalar measurements, one row per subject in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl RegionTable {
    pub fn n_regions(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, region: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[region]).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["subject_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `subject_id,<region...>` CSV and orders rows by `ids`.
    pub fn read_csv(path: impl AsRef<Path>, ids: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("subject_id") {
            return Err(Error::format(path, "first column must be subject_id"));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut by_id: HashMap<String, Vec<f64>> = HashMap::new();
        for rec in r.records() {
            let rec = rec?;
            let id = rec.get(0).unwrap_or_default().to_string();
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::format(path, format!("subject {id}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != names.len() {
                return Err(Error::format(path, format!("subject {id}: wrong column count")));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("{}: subject {id} has non-finite values", path.display())));
            }
            by_id.insert(id, vals);
        }
        let rows = ids
            .iter()
            .map(|id| {
                by_id
                    .remove(id)
                    .ok_or_else(|| Error::format(path, format!("missing subject {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { names, rows })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    subjects: Vec<Subject>,
    region_table: Option<RegionTable>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    label: Label,
    path: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    subjects: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region_table: Option<String>,
}

impl LabeledDataset {
    pub fn new(subjects: Vec<Subject>, region_table: Option<RegionTable>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Input(format!("duplicate subject id {}", s.id)));
            }
        }
        if let Some(t) = &region_table {
            if t.rows.len() != subjects.len() {
                return Err(Error::Input(format!(
                    "region table has {} rows for {} subjects",
                    t.rows.len(),
                    subjects.len()
                )));
            }
            if t.rows.iter().any(|r| r.len() != t.names.len()) {
                return Err(Error::Input("ragged region table".into()));
            }
        }
        Ok(Self {
            subjects,
            region_table,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn region_table(&self) -> Option<&RegionTable> {
        self.region_table.as_ref()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.subjects.iter().map(|s| s.label.index()).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }

    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        (0..self.subjects.len())
            .filter(|&i| self.subjects[i].label == label)
            .collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.subjects.iter().filter(|s| s.label == label).count()
    }

    /// New dataset holding `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let subjects = indices.iter().map(|&i| self.subjects[i].clone()).collect();
        let table = self.region_table.as_ref().map(|t| RegionTable {
            names: t.names.clone(),
            rows: indices.iter().map(|&i| t.rows[i].clone()).collect(),
        });
        Self::new(subjects, table)
    }

    /// Writes `manifest.json`, one volume pair per subject under
    /// `volumes/`, and `regions.csv` when a region table is present.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("volumes"))?;
        let mut entries = Vec::with_capacity(self.subjects.len());
        for s in &self.subjects {
            let rel = format!("volumes/{}.vol", s.id);
            save_volume(dir.join(&rel), &s.volume)?;
            entries.push(ManifestEntry {
                id: s.id.clone(),
                label: s.label,
                path: rel,
            });
        }
        let region_table = match &self.region_table {
            Some(t) => {
                t.write_csv(dir.join("regions.csv"), &self.ids())?;
                Some("regions.csv".to_string())
            }
            None => None,
        };
        let manifest = Manifest {
            format_version: 1,
            subjects: entries,
            region_table,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)
            .map_err(|e| Error::format(manifest_path, e.to_string()))?;
        let subjects = manifest
            .subjects
            .iter()
            .map(|e| {
                Ok(Subject {
                    id: e.id.clone(),
                    label: e.label,
                    volume: load_volume(base.join(&e.path))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
        let table = match &manifest.region_table {
            Some(p) => Some(RegionTable::read_csv(base.join(p), &ids)?),
            None => None,
        };
        Self::new(subjects, table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str, label: Label) -> Subject {
        Subject {
            id: id.into(),
            volume: Volume::from_fn(2, |z, y, x| (z + y + x) as f32),
            label,
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = vec![subject("a", Label::Positive), subject("a", Label::Control)];
        assert!(LabeledDataset::new(s, None).is_err());
    }

    #[test]
    fn region_rows_must_match() {
        let s = vec![subject("a", Label::Positive), subject("b", Label::Control)];
        let t = RegionTable {
            names: vec!["r".into()],
            rows: vec![vec![1.0]],
        };
        assert!(LabeledDataset::new(s, Some(t)).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = vec![subject("a", Label::Positive), subject("b", Label::Control)];
        let t = RegionTable {
            names: vec!["r1".into(), "r2".into()],
            rows: vec![vec![1.5, 2.0], vec![0.1, 1e-9]],
        };
        let ds = LabeledDataset::new(s, Some(t)).unwrap();
        let path = ds.save(dir.path()).unwrap();
        assert_eq!(LabeledDataset::load(path).unwrap(), ds);
    }

    #[test]
    fn labels_parse() {
        assert_eq!("Positive".parse::<Label>().unwrap(), Label::Positive);
        assert_eq!("0".parse::<Label>().unwrap(), Label::Control);
        assert!("maybe".parse::<Label>().is_err());
        assert_eq!(REGION_NAMES.len(), 34);
    }
}
