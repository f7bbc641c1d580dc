#![allow(dead_code)]

use pcreid_core::encoder::{backward_train, forward_train, images_to_input, EncoderConfig, ModelParams, TensorKind};
use pcreid_core::geometry::colormap;
use pcreid_core::training::batch_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct GradReport {
    pub name: String,
    pub rel_err: f64,
    pub checked: usize,
}

/// Central finite differences of the full training loss against the
/// analytic backward pass, sampling up to `per_tensor` entries of every
/// learnable tensor.
pub fn gradient_check(seed: u64, per_tensor: usize) -> Vec<GradReport> {
    let cfg = EncoderConfig {
        base_channels: 4,
        part_count: 2,
        embed_dim: 8,
        class_count: 2,
        image_height: 16,
        image_width: 16,
    };
    let (views, frames, labels) = (2usize, 2usize, vec![0usize, 0, 1, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::<f64>::init(cfg, seed).unwrap();
    let images: Vec<Vec<u8>> = (0..labels.len() * views * frames)
        .map(|_| {
            let mut img = vec![0u8; 16 * 16 * 3];
            for px in img.chunks_exact_mut(3) {
                if rng.random_bool(0.5) {
                    px.copy_from_slice(&colormap(rng.random()));
                }
            }
            img
        })
        .collect();
    let groups: Vec<_> = (0..labels.len() * views).map(|g| g * frames..(g + 1) * frames).collect();
    let loss = |p: &ModelParams<f64>| -> f64 {
        let refs: Vec<&[u8]> = images.iter().map(Vec::as_slice).collect();
        let fwd = forward_train(p, images_to_input(&refs, 16, 16), &groups).unwrap();
        batch_loss(&fwd, &labels, views, 2, 2, 0.2, 0.1).unwrap().0.total
    };
    let refs: Vec<&[u8]> = images.iter().map(Vec::as_slice).collect();
    let fwd = forward_train(&params, images_to_input(&refs, 16, 16), &groups).unwrap();
    let (_, d_emb, d_logits) = batch_loss(&fwd, &labels, views, 2, 2, 0.2, 0.1).unwrap();
    let grads = backward_train(&params, &fwd, &d_emb, &d_logits);

    let h = 1e-6;
    let mut out = Vec::new();
    for (ti, t) in params.tensors.iter().enumerate() {
        if t.kind != TensorKind::Learnable {
            continue;
        }
        let n = t.data.len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &picks {
            let mut up = params.clone();
            up.tensors[ti].data[i] += h;
            let mut dn = params.clone();
            dn.tensors[ti].data[i] -= h;
            let num = (loss(&up) - loss(&dn)) / (2.0 * h);
            let ana = grads[ti][i];
            diff += (num - ana).powi(2);
            na += ana * ana;
            nn += num * num;
        }
        // Below 1e-6 the comparison is absolute: finite differences carry
        // roughly 1e-10 of roundoff at this step size.
        let scale = na.sqrt().max(nn.sqrt()).max(1e-6);
        out.push(GradReport {
            name: t.name.clone(),
            rel_err: diff.sqrt() / scale,
            checked: picks.len(),
        });
    }
    out
}
