#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xpl::config::TrainConfig;
use xpl::model::{BackboneSpec, EncoderParams};
use xpl::synth::{generate_dataset, AVPair, Dataset, GenConfig, Mask, Split};
use xpl::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// A pair with random features and a random rectangle mask.
pub fn random_pair(rng: &mut ChaCha8Rng, id: usize, h: usize, w: usize, cv: usize, ca: usize) -> AVPair {
    let (rh, rw) = (rng.gen_range(1..h), rng.gen_range(1..w));
    let (r0, c0) = (rng.gen_range(0..=h - rh), rng.gen_range(0..=w - rw));
    let cells = (0..h * w)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            r >= r0 && r < r0 + rh && c >= c0 && c < c0 + rw
        })
        .collect();
    AVPair {
        sample_id: id,
        category: 0,
        height: h,
        width: w,
        visual: random_tensor(rng, &[h * w, cv]),
        audio: random_tensor(rng, &[ca]),
        gt_mask: Some(Mask::new(h, w, cells).unwrap()),
        split: Split::Labeled,
    }
}

pub fn spec(hidden: Vec<usize>, embed: usize, seed: u64) -> BackboneSpec {
    BackboneSpec {
        hidden_widths: hidden,
        embed_dim: embed,
        init_seed: seed,
    }
}

pub fn params(hidden: Vec<usize>, embed: usize, seed: u64, cv: usize, ca: usize) -> EncoderParams {
    EncoderParams::init(&spec(hidden, embed, seed), cv, ca).unwrap()
}

/// Concatenation of gradient tensors as one flat vector.
pub fn flat(tensors: &[Tensor]) -> Tensor {
    let v: Vec<f64> = tensors.iter().flat_map(|t| t.values().iter().copied()).collect();
    Tensor::vector(v).unwrap()
}

/// A small dataset for fast training tests.
pub fn tiny_gen(seed: u64) -> GenConfig {
    GenConfig {
        height: 6,
        width: 6,
        visual_channels: 8,
        audio_channels: 8,
        latent_dim: 4,
        n_categories: 5,
        n_openset_categories: 1,
        n_labeled: 12,
        n_unlabeled: 40,
        n_test: 20,
        n_openset_test: 10,
        min_side: 2,
        max_side: 3,
        noise_std: 0.3,
        seed,
    }
}

pub fn tiny_dataset(seed: u64) -> Dataset {
    generate_dataset(&tiny_gen(seed)).unwrap()
}

pub fn tiny_train(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        total_epochs: 6,
        warmup_epochs: 2,
        batch_size: 8,
        learning_rate: 0.1,
        seed,
        ..TrainConfig::default()
    };
    cfg.backbone_a = spec(vec![8], 4, 11);
    cfg.backbone_b = spec(vec![6, 6], 4, 23);
    cfg
}
