//! Representational similarity analysis between latent features and
//! per-region scalars.
//!
//! Each latent sample and each region gives a subject-by-subject
//! dissimilarity matrix. Matrices are compared through their strictly lower
//! triangles with Kendall's tau-b, averaged over latent samples, and tested
//! against a subject-relabelling permutation null.

mod kendall;
mod matrix;
mod report;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use kendall::{kendall_tau_b, kendall_tau_b_fast, KendallResult};
pub use matrix::{pairwise_euclidean, region_dissimilarity, DissimilarityMatrix};
pub use report::{
    latent_dissimilarity_samples, rsa_from_matrices, rsa_report, significance_tier, write_rsa_csv,
    write_rsa_svg, ChannelStat, RsaConfig, RsaReport, RsaResult,
};

use kendall::{Scratch, SortedX};
use matrix::tri_index;

/// Mean tau over latent samples and its permutation p-value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsaCorrelation {
    /// `None` when every latent sample gave an undefined tau.
    pub mean_tau: Option<f64>,
    pub p_value: Option<f64>,
    pub per_sample_tau: Vec<Option<f64>>,
    pub permutations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Correlates every latent matrix with `region` and tests the mean tau.
///
/// Permutation `i` relabels subjects with a shuffle drawn from stream
/// `(seed, i)`, permuting rows and columns of the region matrix together;
/// `p = (1 + #{|null| >= |observed|}) / (permutations + 1)`.
pub fn rsa_correlate(
    latent: &[DissimilarityMatrix],
    region: &DissimilarityMatrix,
    permutations: usize,
    seed: u64,
) -> Result<RsaCorrelation> {
    if permutations == 0 {
        return Err(Error::Input("rsa_correlate needs at least one permutation".into()));
    }
    if latent.is_empty() {
        return Err(Error::Input("rsa_correlate needs at least one latent matrix".into()));
    }
    let n = region.n();
    if n < 3 {
        return Err(Error::Input("rsa_correlate needs at least 3 subjects".into()));
    }
    if latent.iter().any(|m| m.n() != n) {
        return Err(Error::shape("rsa_correlate", "latent and region matrices differ in size"));
    }
    let sorted: Vec<SortedX> = latent.iter().map(|m| SortedX::new(&m.lower_triangle())).collect();
    let r_tri = region.lower_triangle();
    let mut scratch = Scratch::default();
    let per_sample_tau: Vec<Option<f64>> = sorted
        .iter()
        .map(|s| s.tau_with(|k| r_tri[k], &mut scratch).tau)
        .collect();
    let defined: Vec<usize> = (0..sorted.len()).filter(|&i| per_sample_tau[i].is_some()).collect();
    let mut warnings = Vec::new();
    if defined.len() < sorted.len() {
        warnings.push(format!(
            "{} of {} latent samples gave an undefined tau and were excluded",
            sorted.len() - defined.len(),
            sorted.len()
        ));
    }
    if defined.is_empty() {
        return Ok(RsaCorrelation {
            mean_tau: None,
            p_value: None,
            per_sample_tau,
            permutations,
            warnings,
        });
    }
    let mean_of = |taus: &mut dyn Iterator<Item = f64>| -> f64 { taus.sum::<f64>() / defined.len() as f64 };
    let observed = mean_of(&mut defined.iter().map(|&i| per_sample_tau[i].expect("defined")));
    let pairs: Vec<(usize, usize)> = (1..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
    let exceed: usize = (0..permutations)
        .into_par_iter()
        .map_init(
            || (Scratch::default(), vec![0.0; pairs.len()], (0..n).collect::<Vec<usize>>()),
            |(scratch, y, perm), p| {
                perm.iter_mut().enumerate().for_each(|(i, v)| *v = i);
                perm.shuffle(&mut rng::derive(seed, p as u64));
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    y[k] = r_tri[tri_index(perm[i], perm[j])];
                }
                let null = mean_of(
                    &mut defined
                        .iter()
                        .map(|&s| sorted[s].tau_with(|k| y[k], scratch).tau.unwrap_or(0.0)),
                );
                // Nulls equal to the observation up to rounding count as exceeding it.
                usize::from(null.abs() >= observed.abs() - 1e-12)
            },
        )
        .sum();
    Ok(RsaCorrelation {
        mean_tau: Some(observed),
        p_value: Some((1 + exceed) as f64 / (permutations + 1) as f64),
        per_sample_tau,
        permutations,
        warnings,
    })
}

#[cfg(test)]
mod tests;
