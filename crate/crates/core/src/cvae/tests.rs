use rand::Rng;

use super::*;
use crate::dataio::{generate_phantoms, PhantomConfig};
use crate::rng;
use crate::volgrid::reparameterize;

fn small_config(side: usize) -> CvaeConfig {
    CvaeConfig {
        conv_filters: [3, 4],
        fc_hidden: 6,
        decoder_hidden: 6,
        decoder_channels: 4,
        deconv_filters: [3, 2, 1],
        latent_dim: 4,
        ..CvaeConfig::desk(side)
    }
}

fn volume(side: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    (0..side.pow(3)).map(|_| r.gen_range(0.0..1.0)).collect()
}

fn vec_of(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    (0..n).map(|_| r.gen_range(-1.5..1.5)).collect()
}

#[test]
fn full_width_forward_shapes_at_side_16() {
    let cfg = CvaeConfig {
        input_side: 16,
        ..CvaeConfig::default()
    };
    let m = CvaeModel::<f32>::init(&cfg, 0).unwrap();
    let p = m.params();
    assert_eq!(p.get("salient.conv1.weight").unwrap().len(), 64 * 27);
    assert_eq!(p.get("background.conv2.weight").unwrap().len(), 128 * 64 * 27);
    assert_eq!(p.get("decoder.fc1.weight").unwrap().len(), 128 * 32);
    assert_eq!(p.get("decoder.fc2.bias").unwrap().len(), 2 * 2 * 2 * 1024);
    assert_eq!(p.get("decoder.deconv1.weight").unwrap().len(), 1024 * 32 * 27);
    let x: Vec<f32> = volume(16, 1).into_iter().map(|v| v as f32).collect();
    let (mu, lv) = m.encode(Encoder::Salient, &x).unwrap();
    assert_eq!((mu.len(), lv.len()), (16, 16));
    let y = m.decode(&mu, &mu).unwrap();
    assert_eq!(y.len(), 16usize.pow(3));
}

#[test]
fn encoders_have_identical_layouts() {
    let m = CvaeModel::<f64>::init(&small_config(8), 3).unwrap();
    let shapes = |enc: Encoder| -> Vec<(String, Vec<usize>)> {
        m.params()
            .group(enc.prefix())
            .map(|e| (e.name.split_once('.').unwrap().1.to_string(), e.shape.clone()))
            .collect()
    };
    assert_eq!(shapes(Encoder::Salient), shapes(Encoder::Background));
    let fc1 = m.params().get("decoder.fc1.weight").unwrap().len();
    assert_eq!(fc1, 2 * 4 * 6);
}

#[test]
fn encode_is_deterministic_and_heads_differ() {
    let m = CvaeModel::<f64>::init(&small_config(8), 11).unwrap();
    let x = volume(8, 2);
    let a = m.encode(Encoder::Background, &x).unwrap();
    let b = m.encode(Encoder::Background, &x).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.0, a.1);
}

#[test]
fn zero_network_gives_zero_posterior_and_half_output() {
    let m = CvaeModel::<f64>::zeros(&small_config(8)).unwrap();
    let x = volume(8, 4);
    let (mu, lv) = m.encode(Encoder::Salient, &x).unwrap();
    assert!(mu.iter().chain(&lv).all(|&v| v == 0.0));
    let y = m.decode(&mu, &lv).unwrap();
    assert!(y.iter().all(|&v| v == 0.5));
}

#[test]
fn wrong_shapes_are_rejected() {
    let m = CvaeModel::<f64>::init(&small_config(8), 0).unwrap();
    assert!(m.encode(Encoder::Salient, &volume(16, 0)).is_err());
    assert!(m.decode(&[0.0; 3], &[0.0; 4]).is_err());
    assert!(m.forward_background_only(&volume(8, 0), &[0.0; 5]).is_err());
}

#[test]
fn decoder_output_in_open_unit_interval_and_uses_salient_slot() {
    let m = CvaeModel::<f64>::init(&small_config(8), 6).unwrap();
    let s = vec_of(4, 1);
    let z = vec_of(4, 2);
    let y = m.decode(&s, &z).unwrap();
    assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    let y0 = m.decode(&[0.0; 4], &z).unwrap();
    assert_ne!(y, y0);
}

#[test]
fn background_only_matches_manual_composition() {
    let m = CvaeModel::<f64>::init(&small_config(8), 8).unwrap();
    let x = volume(8, 3);
    let eps = vec_of(4, 9);
    let pass = m.forward_background_only(&x, &eps).unwrap();
    assert!(pass.decoder_input[4..].iter().all(|&v| v == 0.0));
    let (mu, lv) = m.encode(Encoder::Background, &x).unwrap();
    let z = reparameterize(&mu, &lv, &eps).unwrap();
    assert_eq!(pass.decoder_input[..4], z[..]);
    let manual = m.decode(&[0.0; 4], &z).unwrap();
    assert_eq!(pass.reconstruction, manual);
    let zero_noise = m.forward_background_only(&x, &[0.0; 4]).unwrap();
    assert_eq!(zero_noise.reconstruction, m.decode(&[0.0; 4], &mu).unwrap());
}

#[test]
fn both_path_matches_manual_composition() {
    let m = CvaeModel::<f64>::init(&small_config(8), 12).unwrap();
    let x = volume(8, 5);
    let (es, ez) = (vec_of(4, 1), vec_of(4, 2));
    let pass = m.forward_both(&x, &es, &ez).unwrap();
    let (smu, slv) = m.encode(Encoder::Salient, &x).unwrap();
    let (zmu, zlv) = m.encode(Encoder::Background, &x).unwrap();
    let s = reparameterize(&smu, &slv, &es).unwrap();
    let z = reparameterize(&zmu, &zlv, &ez).unwrap();
    assert_eq!(pass.reconstruction, m.decode(&s, &z).unwrap());
    assert_eq!((pass.s_mu, pass.z_mu), (smu, zmu));
}

#[test]
fn salient_path_ignores_background_weights_and_vice_versa() {
    let base = CvaeModel::<f64>::init(&small_config(8), 21).unwrap();
    let x = volume(8, 6);
    let eps = vec_of(4, 3);
    let mut bumped_bg = base.clone();
    let mut bumped_sal = base.clone();
    let mut r = rng::seeded(77);
    for (model, prefix) in [(&mut bumped_bg, "background"), (&mut bumped_sal, "salient")] {
        let names: Vec<String> = model.params().group(prefix).map(|e| e.name.clone()).collect();
        for n in names {
            for v in model.params_mut().get_mut(&n).unwrap() {
                *v += r.gen_range(-0.5..0.5);
            }
        }
    }
    assert_eq!(
        base.encode(Encoder::Salient, &x).unwrap(),
        bumped_bg.encode(Encoder::Salient, &x).unwrap()
    );
    assert_eq!(
        base.forward_background_only(&x, &eps).unwrap().reconstruction,
        bumped_sal.forward_background_only(&x, &eps).unwrap().reconstruction
    );
}

#[test]
fn batch_loss_zero_for_perfect_reconstruction_without_kl() {
    let cfg = CvaeConfig {
        kl_weight: 0.0,
        ..small_config(8)
    };
    let m = CvaeModel::<f64>::zeros(&cfg).unwrap();
    let half = vec![0.5; 512];
    let noise = BatchNoise::sample(2, 2, 4, &mut rng::seeded(1));
    let out = cvae_batch_loss(&m, &[&half, &half], &[&half, &half], &noise).unwrap();
    assert_eq!(out.loss, 0.0);
    assert!(cvae_batch_loss(&m, &[], &[&half], &noise).is_err());
}

#[test]
fn batch_loss_is_non_negative() {
    for seed in 0..6 {
        let m = CvaeModel::<f64>::init(&small_config(8), seed).unwrap();
        let (a, b) = (volume(8, seed), volume(8, seed + 100));
        let noise = BatchNoise::sample(1, 1, 4, &mut rng::seeded(seed));
        let out = cvae_batch_loss(&m, &[&a], &[&b], &noise).unwrap();
        assert!(out.loss >= 0.0 && out.recon_mse >= 0.0);
    }
}

#[test]
fn batch_loss_gradient_matches_finite_differences() {
    // One positive and one control 8³ volume, the smallest batch the loss takes.
    let cfg = small_config(8);
    let m = CvaeModel::<f64>::init(&cfg, 4).unwrap();
    let (a, b) = (volume(8, 31), volume(8, 32));
    let noise = BatchNoise::sample(1, 1, 4, &mut rng::seeded(5));
    let loss_at = |model: &CvaeModel<f64>| cvae_batch_loss(model, &[&a], &[&b], &noise).unwrap();
    let analytic = loss_at(&m).gradient;
    let mut r = rng::seeded(99);
    let mut checked = 0;
    for entry in m.params().entries() {
        for _ in 0..3 {
            let i = entry.offset + r.gen_range(0..entry.len());
            let h = 1e-5;
            let mut plus = m.clone();
            plus.params_mut().data_mut()[i] += h;
            let mut minus = m.clone();
            minus.params_mut().data_mut()[i] -= h;
            let fd = (loss_at(&plus).loss - loss_at(&minus).loss) / (2.0 * h);
            let g = analytic[i];
            let denom = g.abs().max(fd.abs()).max(1e-4);
            assert!(
                (g - fd).abs() / denom < 1e-3,
                "{}[{}]: analytic {g} vs fd {fd}",
                entry.name,
                i - entry.offset
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * m.params().entries().len());
}

fn phantom_set(n_pos: usize, n_ctl: usize, side: usize, seed: u64) -> crate::dataio::LabeledDataset {
    generate_phantoms(&PhantomConfig {
        n_positive: n_pos,
        n_control: n_ctl,
        side,
        seed,
        ..PhantomConfig::default()
    })
    .unwrap()
}

#[test]
fn training_is_deterministic_and_reports_unconverged() {
    let ds = phantom_set(3, 3, 8, 0);
    let cfg = CvaeConfig {
        batch_size: 2,
        max_iterations: 4,
        ..small_config(8)
    };
    let a = train(&cfg, &ds, 7).unwrap();
    let b = train(&cfg, &ds, 7).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(params_checksum(&a.model), params_checksum(&b.model));
    assert!(!a.converged);
    assert_eq!(a.model.training_meta().unwrap().iterations, 4);
    let c = train(&cfg, &ds, 8).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn training_needs_a_full_batch_per_class() {
    let ds = phantom_set(3, 1, 8, 0);
    let cfg = CvaeConfig {
        batch_size: 2,
        ..small_config(8)
    };
    assert!(matches!(train(&cfg, &ds, 0), Err(crate::Error::Input(_))));
}

#[test]
fn feature_modes() {
    let ds = phantom_set(2, 2, 8, 1);
    let m = CvaeModel::<f32>::init(&small_config(8), 2).unwrap();
    let a = extract_features(&m, &ds, Encoder::Salient, FeatureMode::Mean, 0).unwrap();
    let b = extract_features(&m, &ds, Encoder::Salient, FeatureMode::Mean, 5).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.values.dim(), (4, 4));
    assert!(!a.warnings.is_empty());
    let s1 = extract_features(&m, &ds, Encoder::Salient, FeatureMode::Sampled, 3).unwrap();
    let s2 = extract_features(&m, &ds, Encoder::Salient, FeatureMode::Sampled, 3).unwrap();
    let s3 = extract_features(&m, &ds, Encoder::Salient, FeatureMode::Sampled, 4).unwrap();
    assert_eq!(s1.values, s2.values);
    assert_ne!(s1.values, s3.values);
    assert_ne!(s1.values, a.values);
}
