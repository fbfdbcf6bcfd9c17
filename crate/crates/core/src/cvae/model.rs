use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::volgrid::{lit, Graph, LayerSpec, NodeId, Real};

use super::config::{CvaeConfig, Encoder};

/// Name and shape of one parameter tensor inside a [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All parameters of a model in one contiguous buffer, so the optimizer and
/// the checkpoint payload see a single flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<ParamEntry>,
    data: Vec<T>,
}

impl<T: Real> ParamSet<T> {
    pub(crate) fn from_parts(entries: Vec<ParamEntry>, data: Vec<T>) -> Result<Self> {
        let mut offset = 0;
        for e in &entries {
            if e.offset != offset {
                return Err(Error::Input(format!("parameter {} has offset {} (expected {offset})", e.name, e.offset)));
            }
            offset += e.len();
        }
        if offset != data.len() {
            return Err(Error::Input(format!(
                "parameter layout covers {offset} values, payload has {}",
                data.len()
            )));
        }
        Ok(Self { entries, data })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        let e = &self.entries[self.index_of(name)?];
        Some(&self.data[e.offset..e.offset + e.len()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let i = self.index_of(name)?;
        let e = &self.entries[i];
        let (o, n) = (e.offset, e.len());
        Some(&mut self.data[o..o + n])
    }

    /// Entries whose name starts with `prefix`.
    pub fn group(&self, prefix: &str) -> impl Iterator<Item = &ParamEntry> {
        let prefix = format!("{prefix}.");
        self.entries.iter().filter(move |e| e.name.starts_with(&prefix))
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self.entries.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }
}

/// A contrastive VAE: salient encoder, background encoder (identical
/// architecture) and one decoder fed with `concat(background, salient)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CvaeModel<T> {
    config: CvaeConfig,
    params: ParamSet<T>,
    meta: Option<TrainingMeta>,
}

/// Summary of the training run that produced a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub final_recon_mse: f64,
    pub converged: bool,
    pub seed: u64,
}

/// Output of the background-only path used for control subjects.
#[derive(Clone, Debug)]
pub struct BackgroundPass<T> {
    pub reconstruction: Vec<T>,
    pub z_mu: Vec<T>,
    pub z_logvar: Vec<T>,
    /// The decoder's input vector, `concat(z, 0)`.
    pub decoder_input: Vec<T>,
}

/// Output of the two-encoder path used for positive subjects.
#[derive(Clone, Debug)]
pub struct BothPass<T> {
    pub reconstruction: Vec<T>,
    pub s_mu: Vec<T>,
    pub s_logvar: Vec<T>,
    pub z_mu: Vec<T>,
    pub z_logvar: Vec<T>,
}

fn layout(config: &CvaeConfig) -> Vec<(String, LayerSpec)> {
    let mut out = Vec::new();
    for enc in [Encoder::Salient, Encoder::Background] {
        for (name, spec) in config.encoder_layers() {
            out.push((format!("{}.{name}", enc.prefix()), spec));
        }
    }
    for (name, spec) in config.decoder_layers() {
        out.push((format!("decoder.{name}"), spec));
    }
    out
}

impl<T: Real> CvaeModel<T> {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(config: &CvaeConfig, seed: u64) -> Result<Self> {
        Self::build(config, |spec, is_weight, rng| {
            if !is_weight {
                return T::zero();
            }
            let (fi, fo) = spec.fans().expect("parametrized layer");
            let limit = (6.0 / (fi + fo) as f64).sqrt();
            lit(rng.gen_range(-limit..limit))
        }, seed)
    }

    /// All parameters zero.
    pub fn zeros(config: &CvaeConfig) -> Result<Self> {
        Self::build(config, |_, _, _| T::zero(), 0)
    }

    fn build(
        config: &CvaeConfig,
        mut fill: impl FnMut(&LayerSpec, bool, &mut rng::Rng) -> T,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derive(seed, 0);
        let mut entries = Vec::new();
        let mut data = Vec::new();
        for (name, spec) in layout(config) {
            spec.validate()?;
            let (ws, bs) = spec.param_shapes().expect("parametrized layer");
            for (suffix, shape, is_weight) in [("weight", ws, true), ("bias", bs, false)] {
                let n: usize = shape.iter().product();
                entries.push(ParamEntry {
                    name: format!("{name}.{suffix}"),
                    shape,
                    offset: data.len(),
                });
                data.extend((0..n).map(|_| fill(&spec, is_weight, &mut rng)));
            }
        }
        Ok(Self {
            config: config.clone(),
            params: ParamSet { entries, data },
            meta: None,
        })
    }

    pub(crate) fn from_parts(
        config: CvaeConfig,
        params: ParamSet<T>,
        meta: Option<TrainingMeta>,
    ) -> Result<Self> {
        let expected = Self::zeros(&config)?;
        if expected.params.entries != params.entries {
            return Err(Error::Input(
                "parameter layout does not match the configuration".into(),
            ));
        }
        Ok(Self { config, params, meta })
    }

    /// `None` until the model has been trained.
    pub fn training_meta(&self) -> Option<&TrainingMeta> {
        self.meta.as_ref()
    }

    pub fn set_training_meta(&mut self, meta: Option<TrainingMeta>) {
        self.meta = meta;
    }

    pub fn config(&self) -> &CvaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> CvaeModel<U> {
        CvaeModel {
            config: self.config.clone(),
            params: self.params.cast(),
            meta: self.meta.clone(),
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.config.input_len() {
            return Err(Error::shape(
                "cvae input",
                format!(
                    "expected a {side}³ volume ({} voxels), got {}",
                    self.config.input_len(),
                    x.len(),
                    side = self.config.input_side
                ),
            ));
        }
        Ok(())
    }

    fn check_latent(&self, v: &[T], what: &str) -> Result<()> {
        if v.len() != self.config.latent_dim {
            return Err(Error::shape(
                "cvae latent",
                format!("{what} has {} entries, latent_dim is {}", v.len(), self.config.latent_dim),
            ));
        }
        Ok(())
    }

    /// Posterior `(mu, logvar)` of one encoder for one volume.
    pub fn encode(&self, which: Encoder, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_input(x)?;
        let mut net = Net::new(self);
        let xn = net.input(x);
        let (mu, lv) = net.encode(which, xn)?;
        let out = (net.g.value(mu).to_vec(), net.g.value(lv).to_vec());
        finite(&out.0, "mu")?;
        finite(&out.1, "logvar")?;
        Ok(out)
    }

    pub fn decode(&self, salient: &[T], background: &[T]) -> Result<Vec<T>> {
        self.check_latent(salient, "salient latent")?;
        self.check_latent(background, "background latent")?;
        let mut net = Net::new(self);
        let s = net.input_vec(salient);
        let z = net.input_vec(background);
        let (_, y) = net.decode(s, z)?;
        let out = net.g.value(y).to_vec();
        finite(&out, "reconstruction")?;
        Ok(out)
    }

    /// Background encoder, reparameterize with `noise_z`, decode with the
    /// salient slot fixed to zeros.
    pub fn forward_background_only(&self, x: &[T], noise_z: &[T]) -> Result<BackgroundPass<T>> {
        self.check_input(x)?;
        self.check_latent(noise_z, "noise_z")?;
        let mut net = Net::new(self);
        let xn = net.input(x);
        let out = net.background_path(xn, noise_z)?;
        let pass = BackgroundPass {
            reconstruction: net.g.value(out.recon).to_vec(),
            z_mu: net.g.value(out.mu).to_vec(),
            z_logvar: net.g.value(out.logvar).to_vec(),
            decoder_input: net.g.value(out.decoder_input).to_vec(),
        };
        finite(&pass.reconstruction, "reconstruction")?;
        Ok(pass)
    }

    /// Both encoders, reparameterize each, decode `concat(z, s)`.
    pub fn forward_both(&self, x: &[T], noise_s: &[T], noise_z: &[T]) -> Result<BothPass<T>> {
        self.check_input(x)?;
        self.check_latent(noise_s, "noise_s")?;
        self.check_latent(noise_z, "noise_z")?;
        let mut net = Net::new(self);
        let xn = net.input(x);
        let out = net.both_path(xn, noise_s, noise_z)?;
        let pass = BothPass {
            reconstruction: net.g.value(out.recon).to_vec(),
            s_mu: net.g.value(out.s_mu).to_vec(),
            s_logvar: net.g.value(out.s_logvar).to_vec(),
            z_mu: net.g.value(out.z_mu).to_vec(),
            z_logvar: net.g.value(out.z_logvar).to_vec(),
        };
        finite(&pass.reconstruction, "reconstruction")?;
        Ok(pass)
    }
}

fn finite<T: Real>(v: &[T], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what} activation")))
    }
}

pub(crate) struct BgNodes {
    pub recon: NodeId,
    pub mu: NodeId,
    pub logvar: NodeId,
    pub decoder_input: NodeId,
}

pub(crate) struct BothNodes {
    pub recon: NodeId,
    pub s_mu: NodeId,
    pub s_logvar: NodeId,
    pub z_mu: NodeId,
    pub z_logvar: NodeId,
}

/// Graph under construction plus lazily inserted parameter leaves.
pub(crate) struct Net<'p, T: Real> {
    pub g: Graph<'p, T>,
    model: &'p CvaeModel<T>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p, T: Real> Net<'p, T> {
    pub fn new(model: &'p CvaeModel<T>) -> Self {
        Self {
            g: Graph::new(),
            model,
            param_nodes: vec![None; model.params.entries.len()],
        }
    }

    pub fn input(&mut self, x: &[T]) -> NodeId {
        let s = self.model.config.input_side;
        let t = crate::volgrid::Tensor::new(vec![1, s, s, s], x.to_vec()).expect("checked input");
        self.g.constant(t)
    }

    pub fn input_vec(&mut self, v: &[T]) -> NodeId {
        let t = crate::volgrid::Tensor::new(vec![v.len()], v.to_vec()).expect("non-empty latent");
        self.g.constant(t)
    }

    fn p(&mut self, name: &str) -> NodeId {
        let idx = self
            .model
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        if let Some(id) = self.param_nodes[idx] {
            return id;
        }
        let params: &'p ParamSet<T> = &self.model.params;
        let e = &params.entries[idx];
        let id = self
            .g
            .param(&e.shape, &params.data[e.offset..e.offset + e.len()])
            .expect("consistent layout");
        self.param_nodes[idx] = Some(id);
        id
    }

    fn wb(&mut self, layer: &str) -> (NodeId, NodeId) {
        (self.p(&format!("{layer}.weight")), self.p(&format!("{layer}.bias")))
    }

    /// Parameter leaves inserted so far, as `(entry index, node)`.
    pub fn param_nodes(&self) -> impl Iterator<Item = (usize, NodeId)> + '_ {
        self.param_nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.map(|n| (i, n)))
    }

    pub fn encode(&mut self, which: Encoder, x: NodeId) -> Result<(NodeId, NodeId)> {
        let pre = which.prefix();
        let (w, b) = self.wb(&format!("{pre}.conv1"));
        let h = self.g.conv3d(x, w, b, 2)?;
        let h = self.g.relu(h);
        let (w, b) = self.wb(&format!("{pre}.conv2"));
        let h = self.g.conv3d(h, w, b, 2)?;
        let h = self.g.relu(h);
        let (w, b) = self.wb(&format!("{pre}.fc"));
        let h = self.g.dense(h, w, b)?;
        let h = self.g.relu(h);
        let (w, b) = self.wb(&format!("{pre}.mu"));
        let mu = self.g.dense(h, w, b)?;
        let (w, b) = self.wb(&format!("{pre}.logvar"));
        let lv = self.g.dense(h, w, b)?;
        let c: T = lit(self.model.config.logvar_clamp);
        let lv = self.g.clamp(lv, -c, c);
        Ok((mu, lv))
    }

    /// Returns `(decoder input, reconstruction)`.
    pub fn decode(&mut self, s: NodeId, z: NodeId) -> Result<(NodeId, NodeId)> {
        let cfg = &self.model.config;
        let (side, ch) = (cfg.input_side, cfg.decoder_channels);
        let input = self.g.concat(z, s);
        let (w, b) = self.wb("decoder.fc1");
        let h = self.g.dense(input, w, b)?;
        let h = self.g.relu(h);
        let (w, b) = self.wb("decoder.fc2");
        let h = self.g.dense(h, w, b)?;
        let h = self.g.relu(h);
        let q = side / 8;
        let h = self.g.reshape(h, vec![ch, q, q, q])?;
        let (w, b) = self.wb("decoder.deconv1");
        let h = self.g.deconv3d(h, w, b, 2, side / 4)?;
        let h = self.g.relu(h);
        let (w, b) = self.wb("decoder.deconv2");
        let h = self.g.deconv3d(h, w, b, 2, side / 2)?;
        let h = self.g.relu(h);
        let (w, b) = self.wb("decoder.deconv3");
        let h = self.g.deconv3d(h, w, b, 2, side)?;
        let y = self.g.sigmoid(h);
        Ok((input, y))
    }

    pub fn background_path(&mut self, x: NodeId, noise_z: &[T]) -> Result<BgNodes> {
        let (mu, logvar) = self.encode(Encoder::Background, x)?;
        let z = self.g.reparameterize(mu, logvar, noise_z.to_vec())?;
        let zeros = vec![T::zero(); self.model.config.latent_dim];
        let s = self.input_vec(&zeros);
        let (decoder_input, recon) = self.decode(s, z)?;
        Ok(BgNodes {
            recon,
            mu,
            logvar,
            decoder_input,
        })
    }

    pub fn both_path(&mut self, x: NodeId, noise_s: &[T], noise_z: &[T]) -> Result<BothNodes> {
        let (s_mu, s_logvar) = self.encode(Encoder::Salient, x)?;
        let (z_mu, z_logvar) = self.encode(Encoder::Background, x)?;
        let s = self.g.reparameterize(s_mu, s_logvar, noise_s.to_vec())?;
        let z = self.g.reparameterize(z_mu, z_logvar, noise_z.to_vec())?;
        let (_, recon) = self.decode(s, z)?;
        Ok(BothNodes {
            recon,
            s_mu,
            s_logvar,
            z_mu,
            z_logvar,
        })
    }
}
