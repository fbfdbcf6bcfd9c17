use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{preprocess, Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::volgrid::{adam_step, lit, AdamState, Real};

use super::config::CvaeConfig;
use super::model::{CvaeModel, Net, TrainingMeta};

/// Standard-normal draws for one batch: `s` and `z` noise per positive,
/// `z` noise per control.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNoise<T> {
    pub positive_s: Vec<Vec<T>>,
    pub positive_z: Vec<Vec<T>>,
    pub control_z: Vec<Vec<T>>,
}

impl<T: Real> BatchNoise<T> {
    pub fn zeros(n_positive: usize, n_control: usize, latent_dim: usize) -> Self {
        let z = || vec![T::zero(); latent_dim];
        Self {
            positive_s: (0..n_positive).map(|_| z()).collect(),
            positive_z: (0..n_positive).map(|_| z()).collect(),
            control_z: (0..n_control).map(|_| z()).collect(),
        }
    }

    pub fn sample(n_positive: usize, n_control: usize, latent_dim: usize, rng: &mut rng::Rng) -> Self {
        let mut draw = || -> Vec<T> {
            (0..latent_dim)
                .map(|_| lit(rng.sample::<f64, _>(StandardNormal)))
                .collect()
        };
        let positive_s = (0..n_positive).map(|_| draw()).collect();
        let positive_z = (0..n_positive).map(|_| draw()).collect();
        let control_z = (0..n_control).map(|_| draw()).collect();
        Self {
            positive_s,
            positive_z,
            control_z,
        }
    }
}

/// Loss value, its reconstruction part and the gradient over the flat
/// parameter vector.
#[derive(Clone, Debug)]
pub struct BatchLoss<T> {
    pub loss: T,
    /// Mean reconstruction MSE over every volume in the batch.
    pub recon_mse: T,
    pub gradient: Vec<T>,
}

/// Contrastive loss of one positive batch and one control batch.
///
/// Positives go through both encoders and pay `mse + kl_weight * (KL(s) +
/// KL(z))`; controls go through the background encoder only and pay `mse +
/// kl_weight * KL(z)`. Each class term is averaged over its batch and the
/// two averages are added.
pub fn cvae_batch_loss<T: Real>(
    model: &CvaeModel<T>,
    positives: &[&[T]],
    controls: &[&[T]],
    noise: &BatchNoise<T>,
) -> Result<BatchLoss<T>> {
    if positives.is_empty() || controls.is_empty() {
        return Err(Error::Input("cvae_batch_loss needs a non-empty batch of each class".into()));
    }
    if noise.positive_s.len() != positives.len()
        || noise.positive_z.len() != positives.len()
        || noise.control_z.len() != controls.len()
    {
        return Err(Error::shape("cvae_batch_loss", "noise does not match the batch sizes"));
    }
    let kl_weight: T = lit(model.config().kl_weight);
    let mut gradient = vec![T::zero(); model.params().len()];
    let mut loss = T::zero();
    let mut recon = T::zero();
    let n_total: T = lit((positives.len() + controls.len()) as f64);

    let mut run = |x: &[T], noise_s: Option<&[T]>, noise_z: &[T], weight: T| -> Result<()> {
        let mut net = Net::new(model);
        let xn = net.input(x);
        let (mse, kl) = match noise_s {
            Some(ns) => {
                let o = net.both_path(xn, ns, noise_z)?;
                let mse = net.g.mse(o.recon, xn)?;
                let ks = net.g.kl_diag(o.s_mu, o.s_logvar)?;
                let kz = net.g.kl_diag(o.z_mu, o.z_logvar)?;
                (mse, net.g.add(ks, kz)?)
            }
            None => {
                let o = net.background_path(xn, noise_z)?;
                let mse = net.g.mse(o.recon, xn)?;
                (mse, net.g.kl_diag(o.mu, o.logvar)?)
            }
        };
        let kl = net.g.scale(kl, kl_weight);
        let total = net.g.add(mse, kl)?;
        let total = net.g.scale(total, weight);
        let value = net.g.scalar(total)?;
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite sample loss".into()));
        }
        loss += value;
        recon += net.g.scalar(mse)? / n_total;
        let grads = net.g.backward(total)?;
        for (idx, node) in net.param_nodes() {
            let e = &model.params().entries()[idx];
            if let Some(g) = grads.get(node) {
                for (dst, v) in gradient[e.offset..e.offset + e.len()].iter_mut().zip(g) {
                    *dst += *v;
                }
            }
        }
        Ok(())
    };

    let wp = T::one() / lit(positives.len() as f64);
    for (i, x) in positives.iter().enumerate() {
        model_check(model, x)?;
        run(x, Some(&noise.positive_s[i]), &noise.positive_z[i], wp)?;
    }
    let wc = T::one() / lit(controls.len() as f64);
    for (i, x) in controls.iter().enumerate() {
        model_check(model, x)?;
        run(x, None, &noise.control_z[i], wc)?;
    }
    Ok(BatchLoss {
        loss,
        recon_mse: recon,
        gradient,
    })
}

fn model_check<T: Real>(model: &CvaeModel<T>, x: &[T]) -> Result<()> {
    if x.len() != model.config().input_len() {
        return Err(Error::shape(
            "cvae_batch_loss",
            format!("volume has {} voxels, expected {}", x.len(), model.config().input_len()),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub recon_mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: CvaeModel<f32>,
    pub trace: Vec<IterationRecord>,
    /// `false` when `max_iterations` ran out before the stop criterion.
    pub converged: bool,
}

/// Volumes resampled to the model side and split by class.
pub(crate) fn prepared_inputs(
    config: &CvaeConfig,
    dataset: &LabeledDataset,
) -> Result<Vec<Vec<f32>>> {
    dataset
        .subjects()
        .iter()
        .map(|s| Ok(preprocess(&s.volume, config.input_side)?.into_voxels()))
        .collect()
}

/// Trains a fresh model with Adam until the running mean of the last
/// `stop_window` reconstruction MSEs drops below the stop threshold.
///
/// `seed` drives initialization, batch sampling and reparameterization
/// noise; the same seed, dataset and config give a bitwise-identical model.
pub fn train(config: &CvaeConfig, dataset: &LabeledDataset, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let b = config.batch_size;
    for label in [Label::Positive, Label::Control] {
        if dataset.count(label) < b {
            return Err(Error::Input(format!(
                "training needs at least batch_size = {b} {label} subjects, found {}",
                dataset.count(label)
            )));
        }
    }
    let inputs = prepared_inputs(config, dataset)?;
    let pos = dataset.indices_of(Label::Positive);
    let ctl = dataset.indices_of(Label::Control);
    let mut model = CvaeModel::<f32>::init(config, rng::mix(seed, 0))?;
    let mut state = AdamState::new(model.params().len());
    let mut rng = rng::derive(seed, 1);
    let mut trace = Vec::new();
    let mut converged = false;
    let w = config.stop_window;
    for iteration in 0..config.max_iterations {
        let pb: Vec<&[f32]> = (0..b)
            .map(|_| inputs[pos[rng.gen_range(0..pos.len())]].as_slice())
            .collect();
        let cb: Vec<&[f32]> = (0..b)
            .map(|_| inputs[ctl[rng.gen_range(0..ctl.len())]].as_slice())
            .collect();
        let noise = BatchNoise::sample(b, b, config.latent_dim, &mut rng);
        let out = match cvae_batch_loss(&model, &pb, &cb, &noise) {
            Ok(o) => o,
            Err(Error::Numerical(_)) => {
                return Err(Error::Divergence {
                    iteration,
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        let loss = out.loss as f64;
        if !loss.is_finite() || out.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration, loss });
        }
        adam_step(model.params_mut().data_mut(), &out.gradient, &mut state, &config.adam)?;
        trace.push(IterationRecord {
            iteration,
            loss,
            recon_mse: out.recon_mse as f64,
        });
        if trace.len() >= w {
            let mean = trace[trace.len() - w..].iter().map(|r| r.recon_mse).sum::<f64>() / w as f64;
            if mean < config.recon_stop_threshold {
                converged = true;
                break;
            }
        }
    }
    let final_recon_mse = {
        let k = trace.len().min(w).max(1);
        trace[trace.len().saturating_sub(k)..].iter().map(|r| r.recon_mse).sum::<f64>() / k as f64
    };
    model.set_training_meta(Some(TrainingMeta {
        iterations: trace.len(),
        final_recon_mse,
        converged,
        seed,
    }));
    Ok(TrainOutcome {
        model,
        trace,
        converged,
    })
}
