use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cvae::{features_from_posteriors, posteriors, CvaeModel, Encoder, FeatureMode};
use crate::dataio::{Label, LabeledDataset, RegionTable};
use crate::error::{Error, Result};
use crate::rng;

use super::matrix::{pairwise_euclidean, region_dissimilarity, DissimilarityMatrix};
use super::{rsa_correlate, RsaCorrelation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RsaConfig {
    /// Latent draws per subject and channel.
    pub n_samples: usize,
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for RsaConfig {
    fn default() -> Self {
        Self {
            n_samples: 10,
            permutations: 10_000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// `***` below 1e-4, `**` below 1e-3, `*` below 0.05, otherwise `n.s.`.
pub fn significance_tier(p: f64) -> &'static str {
    if p < 1e-4 {
        "***"
    } else if p < 1e-3 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "n.s."
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStat {
    pub mean_tau: Option<f64>,
    pub p_value: Option<f64>,
    pub tier: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ChannelStat {
    fn from(c: RsaCorrelation) -> Self {
        let tier = c.p_value.map_or("undefined", significance_tier).to_string();
        Self {
            mean_tau: c.mean_tau,
            p_value: c.p_value,
            tier,
            warnings: c.warnings,
        }
    }

    pub fn significant_positive(&self, alpha: f64) -> bool {
        matches!((self.mean_tau, self.p_value), (Some(t), Some(p)) if t > 0.0 && p < alpha)
    }

    pub fn significant_negative(&self, alpha: f64) -> bool {
        matches!((self.mean_tau, self.p_value), (Some(t), Some(p)) if t < 0.0 && p < alpha)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsaResult {
    pub region: String,
    pub salient: ChannelStat,
    pub background: ChannelStat,
    /// Salient tau significantly positive and background tau significantly
    /// negative.
    pub flagged: bool,
    /// Salient tau significantly positive, whatever the background does.
    pub salient_flagged: bool,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsaReport {
    pub results: Vec<RsaResult>,
    pub config: RsaConfig,
    pub n_subjects: usize,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RsaReport {
    pub fn flagged_regions(&self) -> Vec<&str> {
        self.results.iter().filter(|r| r.flagged).map(|r| r.region.as_str()).collect()
    }

    pub fn salient_flagged_regions(&self) -> Vec<&str> {
        self.results
            .iter()
            .filter(|r| r.salient_flagged)
            .map(|r| r.region.as_str())
            .collect()
    }
}

/// One pairwise-distance matrix per latent draw of every subject in
/// `dataset`. Draw `s` uses the per-subject noise streams of `seed` at
/// sample index `s`.
pub fn latent_dissimilarity_samples(
    model: &CvaeModel<f32>,
    dataset: &LabeledDataset,
    which: Encoder,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<DissimilarityMatrix>> {
    if n_samples == 0 {
        return Err(Error::Input("n_samples must be >= 1".into()));
    }
    let posts = posteriors(model, dataset, which)?;
    (0..n_samples)
        .map(|s| {
            let f = features_from_posteriors(dataset, &posts, which, FeatureMode::Sampled, seed, s)?;
            pairwise_euclidean(f.values.view(), &format!("{which}#{s}"))
        })
        .collect()
}

/// Region-by-channel analysis from precomputed latent matrices. Region `r`
/// and channel `c` (0 salient, 1 background) use permutation seed
/// `mix(seed, 2r + c)`.
pub fn rsa_from_matrices(
    salient: &[DissimilarityMatrix],
    background: &[DissimilarityMatrix],
    table: &RegionTable,
    config: &RsaConfig,
) -> Result<RsaReport> {
    if config.permutations == 0 {
        return Err(Error::Input("rsa needs at least one permutation".into()));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::Config(format!("alpha {} must lie in (0, 1)", config.alpha)));
    }
    let n = table.rows.len();
    let mut results = Vec::with_capacity(table.n_regions());
    let mut warnings = Vec::new();
    for (r, name) in table.names.iter().enumerate() {
        let region = region_dissimilarity(&table.column(r), name)?;
        if region.n() != n {
            return Err(Error::shape("rsa", "region table and latents differ in subject count"));
        }
        let s = ChannelStat::from(rsa_correlate(salient, &region, config.permutations, rng::mix(config.seed, 2 * r as u64))?);
        let b = ChannelStat::from(rsa_correlate(
            background,
            &region,
            config.permutations,
            rng::mix(config.seed, 2 * r as u64 + 1),
        )?);
        for (ch, st) in [("salient", &s), ("background", &b)] {
            if st.mean_tau.is_none() {
                warnings.push(format!("{name}/{ch}: tau undefined, excluded from flags"));
            }
        }
        let salient_flagged = s.significant_positive(config.alpha);
        let flagged = salient_flagged && b.significant_negative(config.alpha);
        results.push(RsaResult {
            region: name.clone(),
            salient: s,
            background: b,
            flagged,
            salient_flagged,
            n_samples: salient.len(),
        });
    }
    let summary = render_summary(&results, config);
    Ok(RsaReport {
        results,
        config: config.clone(),
        n_subjects: n,
        summary,
        warnings,
    })
}

/// The full analysis on the positive subjects of `dataset`.
pub fn rsa_report(model: &CvaeModel<f32>, dataset: &LabeledDataset, config: &RsaConfig) -> Result<RsaReport> {
    if dataset.region_table().is_none() {
        return Err(Error::Input("rsa needs a dataset with a region table".into()));
    }
    let pos_idx = dataset.indices_of(Label::Positive);
    let positives = dataset.subset(&pos_idx)?;
    let pos_table = positives.region_table().expect("subset keeps the table").clone();
    let sal = latent_dissimilarity_samples(model, &positives, Encoder::Salient, config.n_samples, rng::mix(config.seed, 101))?;
    let bg = latent_dissimilarity_samples(model, &positives, Encoder::Background, config.n_samples, rng::mix(config.seed, 202))?;
    rsa_from_matrices(&sal, &bg, &pos_table, config)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.4}"))
}

fn render_summary(results: &[RsaResult], config: &RsaConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<26} {:>10} {:>10} {:>5} | {:>10} {:>10} {:>5} | flag",
        "region", "sal_tau", "sal_p", "", "bg_tau", "bg_p", ""
    );
    for r in results {
        let _ = writeln!(
            s,
            "{:<26} {:>10} {:>10} {:>5} | {:>10} {:>10} {:>5} | {}",
            r.region,
            fmt_opt(r.salient.mean_tau),
            fmt_opt(r.salient.p_value),
            r.salient.tier,
            fmt_opt(r.background.mean_tau),
            fmt_opt(r.background.p_value),
            r.background.tier,
            if r.flagged {
                "specific"
            } else if r.salient_flagged {
                "salient"
            } else {
                ""
            }
        );
    }
    let _ = writeln!(
        s,
        "alpha {}; {} permutations; {} latent samples",
        config.alpha, config.permutations, config.n_samples
    );
    s
}

/// `region,channel,mean_tau,p_value,tier,flagged` rows.
pub fn write_rsa_csv(path: impl AsRef<Path>, report: &RsaReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["region", "channel", "mean_tau", "p_value", "tier", "flagged"])?;
    let num = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &report.results {
        for (ch, st) in [("salient", &r.salient), ("background", &r.background)] {
            w.write_record([
                r.region.clone(),
                ch.to_string(),
                num(st.mean_tau),
                num(st.p_value),
                st.tier.clone(),
                r.flagged.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Horizontal bar chart of mean tau per region and channel with the
/// significance tier next to each bar.
pub fn write_rsa_svg(path: impl AsRef<Path>, report: &RsaReport) -> Result<()> {
    let row_h = 22.0;
    let (label_w, half) = (190.0, 220.0);
    let height = 40.0 + row_h * report.results.len() as f64;
    let width = label_w + 2.0 * half + 60.0;
    let x0 = label_w + half;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<style>.salient{{fill:#c0392b}} .background{{fill:#2e86c1}} .flag{{font-weight:bold}}</style>"#
    );
    let _ = writeln!(s, r#"<line x1="{x0}" y1="20" x2="{x0}" y2="{}" stroke="black"/>"#, height - 10.0);
    let _ = writeln!(s, r#"<text x="{}" y="14">tau = -1</text><text x="{}" y="14">tau = +1</text>"#, label_w, x0 + half - 40.0);
    for (i, r) in report.results.iter().enumerate() {
        let y = 24.0 + row_h * i as f64;
        let class = if r.flagged { r#" class="flag""# } else { "" };
        let _ = writeln!(s, r#"<text x="4" y="{}"{class}>{}</text>"#, y + 12.0, r.region);
        for (k, (ch, st)) in [("salient", &r.salient), ("background", &r.background)].into_iter().enumerate() {
            let tau = st.mean_tau.unwrap_or(0.0);
            let len = tau.abs() * half;
            let bx = if tau >= 0.0 { x0 } else { x0 - len };
            let by = y + k as f64 * 9.0;
            let _ = writeln!(
                s,
                r#"<rect class="{ch}" x="{bx:.2}" y="{by:.2}" width="{len:.2}" height="8"><title>{ch} tau {} p {}</title></rect>"#,
                fmt_opt(st.mean_tau),
                fmt_opt(st.p_value)
            );
            if st.tier != "n.s." {
                let tx = if tau >= 0.0 { x0 + len + 3.0 } else { x0 - len - 24.0 };
                let _ = writeln!(s, r#"<text x="{tx:.2}" y="{:.2}">{}</text>"#, by + 8.0, st.tier);
            }
        }
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}
