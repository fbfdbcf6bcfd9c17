use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;

use crate::dataio::Label;
use crate::error::{Error, Result};

/// A feature CSV with labels attached.
pub(crate) struct Features {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
    pub values: Array2<f64>,
    /// File stem, used as the channel name of scatter points.
    pub channel: String,
}

/// Reads `subject_id[,label],f0,...`. Labels come from `labels_path` when
/// given (`subject_id,label`), otherwise from the `label` column.
pub(crate) fn read_features(path: &Path, labels_path: Option<&Path>) -> Result<Features> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("subject_id") {
        return Err(Error::format(path, "first column must be subject_id"));
    }
    let label_col = header.iter().position(|h| h == "label");
    let value_cols: Vec<usize> = (1..header.len()).filter(|&c| Some(c) != label_col).collect();
    let mut ids = Vec::new();
    let mut inline = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        if let Some(c) = label_col {
            inline.push(rec[c].parse::<Label>()?);
        }
        let row = value_cols
            .iter()
            .map(|&c| {
                rec[c]
                    .parse::<f64>()
                    .map_err(|e| Error::format(path, format!("column {}: {e}", header[c])))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let labels: Vec<Label> = match labels_path {
        Some(lp) => {
            let map = read_labels(lp)?;
            ids.iter()
                .map(|id| map.get(id).copied().ok_or_else(|| Error::format(lp, format!("no label for {id}"))))
                .collect::<Result<_>>()?
        }
        None if label_col.is_some() => inline,
        None => return Err(Error::Input(format!("{} has no label column; pass --labels", path.display()))),
    };
    let d = value_cols.len();
    let values = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]);
    Ok(Features {
        ids,
        labels: labels.iter().map(|l| l.index()).collect(),
        label_names: labels.iter().map(|l| l.to_string()).collect(),
        values,
        channel: path.file_stem().map_or("features".into(), |s| s.to_string_lossy().into_owned()),
    })
}

fn read_labels(path: &Path) -> Result<HashMap<String, Label>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::format(path, "expected subject_id,label rows"));
        }
        out.insert(rec[0].to_string(), rec[1].parse()?);
    }
    Ok(out)
}

pub(crate) fn write_labels(path: &Path, ids: &[String], labels: &[Label]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject_id", "label"])?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
