//! Training-time image augmentations on rendered depth images.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{colormap, decode_colormap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub random_erase: bool,
    pub gaussian_noise: bool,
    pub erase_probability: f64,
    pub erase_min_area: f64,
    pub erase_max_area: f64,
    pub noise_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            random_erase: false,
            gaussian_noise: false,
            erase_probability: 0.5,
            erase_min_area: 0.02,
            erase_max_area: 0.20,
            noise_sigma: 0.03,
        }
    }
}

/// Rectangle `(row, col, height, width)` in pixels.
pub type Rect = (usize, usize, usize, usize);

/// Draws an erase rectangle whose area fraction lies in
/// `[min_area, max_area]`.
pub fn sample_erase_rect<R: Rng>(
    height: usize,
    width: usize,
    min_area: f64,
    max_area: f64,
    rng: &mut R,
) -> Rect {
    let total = (height * width) as f64;
    let fits = |h: usize, w: usize| {
        let f = (h * w) as f64 / total;
        h >= 1 && w >= 1 && h <= height && w <= width && f >= min_area && f <= max_area
    };
    let place = |h: usize, w: usize, rng: &mut R| {
        let r = rng.random_range(0..=height - h);
        let c = rng.random_range(0..=width - w);
        (r, c, h, w)
    };
    for _ in 0..100 {
        let area = rng.random_range(min_area..=max_area) * total;
        let aspect = rng.random_range((0.3f64).ln()..=(1.0f64 / 0.3).ln()).exp();
        let h = (area * aspect).sqrt().round() as usize;
        let w = (area / aspect).sqrt().round() as usize;
        if fits(h, w) {
            return place(h, w, rng);
        }
    }
    // Smallest square above the lower bound, widened row by row if needed.
    let side = (min_area * total).sqrt().ceil() as usize;
    let h = side.clamp(1, height);
    let mut w = side.clamp(1, width);
    while !fits(h, w) && w < width {
        w += 1;
    }
    place(h, w, rng)
}

/// Applies the enabled augmentations to one `height × width × 3` image.
pub fn augment<R: Rng>(image: &mut [u8], height: usize, width: usize, cfg: &AugmentConfig, rng: &mut R) {
    if cfg.random_erase && rng.random_bool(cfg.erase_probability.clamp(0.0, 1.0)) {
        let (r0, c0, h, w) = sample_erase_rect(height, width, cfg.erase_min_area, cfg.erase_max_area, rng);
        for r in r0..r0 + h {
            image[(r * width + c0) * 3..(r * width + c0 + w) * 3].fill(0);
        }
    }
    if cfg.gaussian_noise && cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("positive sigma");
        for px in image.chunks_exact_mut(3) {
            let rgb = [px[0], px[1], px[2]];
            if let Some(d) = decode_colormap(rgb) {
                let d = (d + noise.sample(rng)).clamp(0.0, 1.0);
                px.copy_from_slice(&colormap(d));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_image(rng: &mut ChaCha8Rng) -> Vec<u8> {
        let mut img = vec![0u8; 32 * 32 * 3];
        for px in img.chunks_exact_mut(3) {
            if rng.random_bool(0.4) {
                px.copy_from_slice(&colormap(rng.random()));
            }
        }
        img
    }

    #[test]
    fn disabled_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = sample_image(&mut rng);
        let mut out = img.clone();
        augment(&mut out, 32, 32, &AugmentConfig::default(), &mut rng);
        assert_eq!(out, img);
    }

    #[test]
    fn erase_area_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (h, w) in [(32, 32), (64, 64), (16, 16), (8, 8)] {
            for _ in 0..10_000 {
                let (r, c, eh, ew) = sample_erase_rect(h, w, 0.02, 0.20, &mut rng);
                let f = (eh * ew) as f64 / (h * w) as f64;
                assert!((0.02..=0.20).contains(&f), "{h}x{w}: {eh}x{ew}");
                assert!(r + eh <= h && c + ew <= w);
            }
        }
    }

    #[test]
    fn noise_keeps_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = sample_image(&mut rng);
        let mut out = img.clone();
        let cfg = AugmentConfig {
            gaussian_noise: true,
            random_erase: true,
            ..AugmentConfig::default()
        };
        augment(&mut out, 32, 32, &cfg, &mut rng);
        for (a, b) in img.chunks_exact(3).zip(out.chunks_exact(3)) {
            if a == [0, 0, 0] {
                assert_eq!(b, [0, 0, 0]);
            } else if b != [0, 0, 0] {
                assert!(decode_colormap([b[0], b[1], b[2]]).is_some());
            }
        }
        assert_ne!(out, img);
    }
}
