use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{AdamHyper, LayerSpec};

/// Architecture and training recipe.
///
/// The default is the full-size network: 64³ input, two stride-2 convs with
/// 64 and 128 filters, a 128-node hidden layer, 16-dim latents, and a decoder
/// that expands to `8³ × 1024 = 524288` nodes before three stride-2
/// transposed convs with 32, 16 and 1 filters. [`CvaeConfig::desk`] keeps the
/// same layer stack with narrower widths for CPU-scale runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvaeConfig {
    pub input_side: usize,
    pub latent_dim: usize,
    pub kernel: usize,
    pub conv_filters: [usize; 2],
    pub fc_hidden: usize,
    pub decoder_hidden: usize,
    /// Channels of the decoder reshape; the dense layer feeding it has
    /// `(input_side / 8)³ × decoder_channels` outputs.
    pub decoder_channels: usize,
    pub deconv_filters: [usize; 3],
    pub kl_weight: f64,
    /// Encoder log-variances are clamped to `[-logvar_clamp, logvar_clamp]`.
    pub logvar_clamp: f64,
    pub recon_stop_threshold: f64,
    /// Iterations in the running mean compared against the stop threshold.
    pub stop_window: usize,
    pub max_iterations: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub seed: u64,
}

/// Reconstruction-MSE stopping threshold of the main study.
pub const DIRECT_STOP_THRESHOLD: f64 = 5e-4;
/// Reconstruction-MSE stopping threshold for source-cohort pre-training.
pub const TRANSFER_STOP_THRESHOLD: f64 = 5e-3;

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            input_side: 64,
            latent_dim: 16,
            kernel: 3,
            conv_filters: [64, 128],
            fc_hidden: 128,
            decoder_hidden: 128,
            decoder_channels: 1024,
            deconv_filters: [32, 16, 1],
            kl_weight: 1.0,
            logvar_clamp: 10.0,
            recon_stop_threshold: DIRECT_STOP_THRESHOLD,
            stop_window: 10,
            max_iterations: 20_000,
            batch_size: 8,
            adam: AdamHyper::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    Salient,
    Background,
}

impl Encoder {
    pub fn prefix(self) -> &'static str {
        match self {
            Encoder::Salient => "salient",
            Encoder::Background => "background",
        }
    }
}

impl std::fmt::Display for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.prefix())
    }
}

impl std::str::FromStr for Encoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "salient" => Ok(Encoder::Salient),
            "background" | "shared" => Ok(Encoder::Background),
            other => Err(Error::Input(format!("unknown encoder {other:?}"))),
        }
    }
}

impl CvaeConfig {
    /// Same layer stack as the default with narrow widths, for CPU runs.
    pub fn desk(input_side: usize) -> Self {
        Self {
            input_side,
            conv_filters: [8, 16],
            fc_hidden: 64,
            decoder_hidden: 64,
            decoder_channels: 32,
            deconv_filters: [16, 8, 1],
            max_iterations: 1500,
            // Mean MSE against a summed KL collapses the posteriors at weight 1;
            // at 1/voxels the dip depth is still not worth its nats.
            kl_weight: 0.1 / (input_side * input_side * input_side).max(1) as f64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_side == 0 || self.input_side % 8 != 0 {
            return bad(format!("input_side {} must be a positive multiple of 8", self.input_side));
        }
        if self.latent_dim == 0 || self.batch_size == 0 || self.kernel == 0 {
            return bad("latent_dim, batch_size and kernel must be >= 1".into());
        }
        if self.conv_filters.contains(&0)
            || self.deconv_filters.contains(&0)
            || self.fc_hidden == 0
            || self.decoder_hidden == 0
            || self.decoder_channels == 0
        {
            return bad("layer widths must be >= 1".into());
        }
        if self.deconv_filters[2] != 1 {
            return bad("the last transposed conv must produce one channel".into());
        }
        if self.kernel > self.input_side / 2 {
            return bad(format!("kernel {} too large for input side {}", self.kernel, self.input_side));
        }
        if !(self.kl_weight >= 0.0) || !(self.logvar_clamp > 0.0) {
            return bad("kl_weight must be >= 0 and logvar_clamp > 0".into());
        }
        if !(self.recon_stop_threshold > 0.0) || self.stop_window == 0 || self.max_iterations == 0 {
            return bad("stop threshold must be > 0, stop_window and max_iterations >= 1".into());
        }
        self.adam.validate()
    }

    pub fn input_len(&self) -> usize {
        self.input_side.pow(3)
    }

    pub fn encoder_flatten(&self) -> usize {
        (self.input_side / 4).pow(3) * self.conv_filters[1]
    }

    /// Output width of the decoder's second dense layer.
    pub fn flatten_size(&self) -> usize {
        (self.input_side / 8).pow(3) * self.decoder_channels
    }

    /// Activation shapes along the encoder (`input`, `conv1`, `conv2`, `fc`,
    /// `mu`) and the decoder (`input`, `fc1`, `fc2`, `reshape`, `deconv1`,
    /// `deconv2`, `deconv3`), derived from the configuration alone.
    pub fn activation_shapes(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let s = self.input_side;
        let [c1, c2] = self.conv_filters;
        let [d1, d2, d3] = self.deconv_filters;
        let cube = |c: usize, n: usize| vec![c, n, n, n];
        let encoder = vec![
            cube(1, s),
            cube(c1, s / 2),
            cube(c2, s / 4),
            vec![self.fc_hidden],
            vec![self.latent_dim],
        ];
        let decoder = vec![
            vec![2 * self.latent_dim],
            vec![self.decoder_hidden],
            vec![self.flatten_size()],
            cube(self.decoder_channels, s / 8),
            cube(d1, s / 4),
            cube(d2, s / 2),
            cube(d3, s),
        ];
        (encoder, decoder)
    }

    pub(crate) fn encoder_layers(&self) -> Vec<(&'static str, LayerSpec)> {
        let k = self.kernel;
        vec![
            (
                "conv1",
                LayerSpec::Conv3d {
                    in_channels: 1,
                    out_channels: self.conv_filters[0],
                    kernel: k,
                    stride: 2,
                },
            ),
            (
                "conv2",
                LayerSpec::Conv3d {
                    in_channels: self.conv_filters[0],
                    out_channels: self.conv_filters[1],
                    kernel: k,
                    stride: 2,
                },
            ),
            (
                "fc",
                LayerSpec::Dense {
                    in_nodes: self.encoder_flatten(),
                    out_nodes: self.fc_hidden,
                },
            ),
            (
                "mu",
                LayerSpec::Dense {
                    in_nodes: self.fc_hidden,
                    out_nodes: self.latent_dim,
                },
            ),
            (
                "logvar",
                LayerSpec::Dense {
                    in_nodes: self.fc_hidden,
                    out_nodes: self.latent_dim,
                },
            ),
        ]
    }

    pub(crate) fn decoder_layers(&self) -> Vec<(&'static str, LayerSpec)> {
        let k = self.kernel;
        let s = self.input_side;
        let [d1, d2, d3] = self.deconv_filters;
        vec![
            (
                "fc1",
                LayerSpec::Dense {
                    in_nodes: 2 * self.latent_dim,
                    out_nodes: self.decoder_hidden,
                },
            ),
            (
                "fc2",
                LayerSpec::Dense {
                    in_nodes: self.decoder_hidden,
                    out_nodes: self.flatten_size(),
                },
            ),
            (
                "deconv1",
                LayerSpec::Deconv3d {
                    in_channels: self.decoder_channels,
                    out_channels: d1,
                    kernel: k,
                    stride: 2,
                    target_spatial: s / 4,
                },
            ),
            (
                "deconv2",
                LayerSpec::Deconv3d {
                    in_channels: d1,
                    out_channels: d2,
                    kernel: k,
                    stride: 2,
                    target_spatial: s / 2,
                },
            ),
            (
                "deconv3",
                LayerSpec::Deconv3d {
                    in_channels: d2,
                    out_channels: d3,
                    kernel: k,
                    stride: 2,
                    target_spatial: s,
                },
            ),
        ]
    }
}
