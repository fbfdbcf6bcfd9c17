use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Symmetric, zero-diagonal, non-negative `n × n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DissimilarityMatrix {
    pub values: Array2<f64>,
    pub source: String,
}

impl DissimilarityMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Strictly-lower-triangle entries, row by row: `(1,0), (2,0), (2,1), ...`.
    pub fn lower_triangle(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 1..n {
            for j in 0..i {
                out.push(self.values[[i, j]]);
            }
        }
        out
    }
}

/// Index of entry `(i, j)`, `i != j`, in [`DissimilarityMatrix::lower_triangle`].
#[inline]
pub(crate) fn tri_index(i: usize, j: usize) -> usize {
    let (a, b) = if i > j { (i, j) } else { (j, i) };
    a * (a - 1) / 2 + b
}

/// Euclidean distance between every pair of rows.
pub fn pairwise_euclidean(features: ArrayView2<'_, f64>, source: &str) -> Result<DissimilarityMatrix> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::Input("pairwise_euclidean needs at least 2 rows".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("pairwise_euclidean input has non-finite rows".into()));
    }
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let d = features
                .row(i)
                .iter()
                .zip(features.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            values[[i, j]] = d;
            values[[j, i]] = d;
        }
    }
    Ok(DissimilarityMatrix {
        values,
        source: source.to_string(),
    })
}

/// `|a_i - a_j|` for one scalar per subject.
pub fn region_dissimilarity(region_values: &[f64], source: &str) -> Result<DissimilarityMatrix> {
    if region_values.len() < 2 {
        return Err(Error::Input("region_dissimilarity needs at least 2 subjects".into()));
    }
    if region_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("region {source} has non-finite values")));
    }
    let n = region_values.len();
    let values = Array2::from_shape_fn((n, n), |(i, j)| (region_values[i] - region_values[j]).abs());
    Ok(DissimilarityMatrix {
        values,
        source: source.to_string(),
    })
}
