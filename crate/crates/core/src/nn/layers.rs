//! Batched convolution, batch normalization, ReLU and pooling kernels.
//!
//! Activations use a channel-major layout (`C × N × H × W`) so a 3×3
//! convolution over the whole batch is one GEMM per column chunk and batch
//! normalization statistics run over contiguous rows.

use super::real::{gemm, MatRef, Real};

/// Elements of im2col scratch per chunk.
const COL_BUDGET: usize = 1 << 18;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch of feature maps, index `((c · n + i) · h + y) · w + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(channels: usize, count: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            count,
            height,
            width,
            data: vec![T::zero(); channels * count * height * width],
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Contiguous row of channel `c` across the whole batch.
    pub fn channel(&self, c: usize) -> &[T] {
        let len = self.count * self.plane();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn at(&self, c: usize, i: usize, y: usize, x: usize) -> T {
        self.data[((c * self.count + i) * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.channels, self.count, self.height, self.width)
    }
}

fn chunk_images(k: usize, plane: usize, count: usize) -> usize {
    (COL_BUDGET / (k * plane).max(1)).clamp(1, count.max(1))
}

/// Valid output range `[lo, hi)` along an axis of length `n` for a tap
/// offset `d` in `{-1, 0, 1}`.
fn tap_range(n: usize, d: isize) -> (usize, usize) {
    match d {
        -1 => (1, n),
        0 => (0, n),
        _ => (0, n - 1),
    }
}

/// Unfolds 3×3 zero-padded patches of images `[i0, i1)` into `col`
/// (`(C·9) × ((i1 − i0)·H·W)`).
fn im2col<T: Real>(input: &FeatureMap<T>, i0: usize, i1: usize, col: &mut [T]) {
    let (h, w, n) = (input.height, input.width, input.count);
    let plane = h * w;
    let cols = (i1 - i0) * plane;
    for ci in 0..input.channels {
        for tap in 0..9 {
            let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
            let (y0, y1) = tap_range(h, dy);
            let (x0, x1) = tap_range(w, dx);
            let shift = dy * w as isize + dx;
            let row = &mut col[(ci * 9 + tap) * cols..][..cols];
            for (li, i) in (i0..i1).enumerate() {
                let src = &input.data[(ci * n + i) * plane..][..plane];
                let dst = &mut row[li * plane..][..plane];
                if y0 >= y1 || x0 >= x1 {
                    dst.fill(T::zero());
                    continue;
                }
                // One shifted block copy, then clear what fell outside.
                let a = y0 * w + x0;
                let b = (y1 - 1) * w + x1;
                let sa = (a as isize + shift) as usize;
                dst[a..b].copy_from_slice(&src[sa..sa + (b - a)]);
                dst[..a].fill(T::zero());
                dst[b..].fill(T::zero());
                if dx != 0 {
                    let edge = if dx < 0 { 0 } else { w - 1 };
                    for y in y0..y1 {
                        dst[y * w + edge] = T::zero();
                    }
                }
            }
        }
    }
}

/// Folds `col` back onto images `[i0, i1)` of `grad`, accumulating.
/// Entries of `col` that map outside the image are overwritten.
fn col2im<T: Real>(col: &mut [T], i0: usize, i1: usize, grad: &mut FeatureMap<T>) {
    let (h, w, n) = (grad.height, grad.width, grad.count);
    let plane = h * w;
    let cols = (i1 - i0) * plane;
    for ci in 0..grad.channels {
        for tap in 0..9 {
            let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
            let (y0, y1) = tap_range(h, dy);
            let (x0, x1) = tap_range(w, dx);
            if y0 >= y1 || x0 >= x1 {
                continue;
            }
            let shift = dy * w as isize + dx;
            let row = &mut col[(ci * 9 + tap) * cols..][..cols];
            for (li, i) in (i0..i1).enumerate() {
                let src = &mut row[li * plane..][..plane];
                let dst = &mut grad.data[(ci * n + i) * plane..][..plane];
                if dx != 0 {
                    let edge = if dx < 0 { 0 } else { w - 1 };
                    for y in y0..y1 {
                        src[y * w + edge] = T::zero();
                    }
                }
                let a = y0 * w + x0;
                let b = (y1 - 1) * w + x1;
                let da = (a as isize + shift) as usize;
                for (d, s) in dst[da..da + (b - a)].iter_mut().zip(&src[a..b]) {
                    *d += *s;
                }
            }
        }
    }
}

/// 3×3 convolution, stride 1, zero padding 1, no bias.
/// `weight` is `cout × (cin · 9)` row-major.
pub fn conv3x3<T: Real>(input: &FeatureMap<T>, weight: &[T], cout: usize) -> FeatureMap<T> {
    if let Some(out) = T::conv3x3_fast(input, weight, cout) {
        return out;
    }
    let k = input.channels * 9;
    assert_eq!(weight.len(), cout * k, "conv3x3 weight shape");
    let plane = input.plane();
    let n = input.count;
    let mut out = FeatureMap::zeros(cout, n, input.height, input.width);
    let chunk = chunk_images(k, plane, n);
    let mut col = vec![T::zero(); k * chunk * plane];
    let row_stride = n * plane;
    let mut i0 = 0;
    while i0 < n {
        let i1 = (i0 + chunk).min(n);
        let cols = (i1 - i0) * plane;
        im2col(input, i0, i1, &mut col);
        gemm(
            cout,
            k,
            cols,
            T::one(),
            MatRef::rows(weight, k),
            MatRef::rows(&col[..k * cols], cols),
            T::zero(),
            &mut out.data[i0 * plane..],
            row_stride,
        );
        i0 = i1;
    }
    out
}

/// Backward of [`conv3x3`]: accumulates into `dweight` and returns the input
/// gradient when `want_input` is set.
pub fn conv3x3_backward<T: Real>(
    input: &FeatureMap<T>,
    weight: &[T],
    dout: &FeatureMap<T>,
    dweight: &mut [T],
    want_input: bool,
) -> Option<FeatureMap<T>> {
    if let Some(d) = T::conv3x3_backward_fast(input, weight, dout, dweight, want_input) {
        return d;
    }
    let k = input.channels * 9;
    let cout = dout.channels;
    let plane = input.plane();
    let n = input.count;
    let row_stride = n * plane;
    let chunk = chunk_images(k, plane, n);
    let mut col = vec![T::zero(); k * chunk * plane];
    let mut dinput = want_input.then(|| input.same_shape());
    let mut i0 = 0;
    while i0 < n {
        let i1 = (i0 + chunk).min(n);
        let cols = (i1 - i0) * plane;
        im2col(input, i0, i1, &mut col);
        let dview = MatRef {
            data: &dout.data[i0 * plane..],
            rs: row_stride,
            cs: 1,
        };
        // dW[cout × k] += dOut[cout × cols] · colᵀ[cols × k]
        gemm(
            cout,
            cols,
            k,
            T::one(),
            dview,
            MatRef::transposed(&col[..k * cols], cols),
            T::one(),
            dweight,
            k,
        );
        if let Some(dinput) = dinput.as_mut() {
            // dcol[k × cols] = Wᵀ[k × cout] · dOut[cout × cols]
            gemm(
                k,
                cout,
                cols,
                T::one(),
                MatRef::transposed(weight, k),
                dview,
                T::zero(),
                &mut col[..k * cols],
                cols,
            );
            col2im(&mut col[..k * cols], i0, i1, dinput);
        }
        i0 = i1;
    }
    dinput
}

/// Per-channel state saved by a training-mode batch norm for its backward.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Sum in eight interleaved f64 accumulators, combined pairwise.
#[inline(always)]
fn lane_sum<T: Real>(xs: &[T], f: impl Fn(T) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            acc[l] += f(c[l]);
        }
    }
    for (l, v) in tail.iter().enumerate() {
        acc[l] += f(*v);
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

#[inline(always)]
fn lane_sum2<T: Real>(xs: &[T], ys: &[T], f: impl Fn(T, T) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let (cx, cy) = (xs.chunks_exact(8), ys.chunks_exact(8));
    let (tx, ty) = (cx.remainder(), cy.remainder());
    for (a, b) in cx.zip(cy) {
        for l in 0..8 {
            acc[l] += f(a[l], b[l]);
        }
    }
    for (l, (a, b)) in tx.iter().zip(ty).enumerate() {
        acc[l] += f(*a, *b);
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Training-mode batch norm over each contiguous row of `rows × len`,
/// in place, optionally followed by a ReLU. `beta = None` means no shift
/// term.
pub fn batchnorm_rows_train<T: Real>(
    data: &mut [T],
    rows: usize,
    gamma: &[T],
    beta: Option<&[T]>,
    relu: bool,
) -> BnCache<T> {
    let len = data.len() / rows;
    let mut cache = BnCache {
        xhat: vec![T::zero(); data.len()],
        inv_std: vec![T::zero(); rows],
        mean: vec![0.0; rows],
        var: vec![0.0; rows],
    };
    for r in 0..rows {
        let row = &mut data[r * len..(r + 1) * len];
        // Moments about the first element keep the one-pass variance stable.
        let pivot = row[0].f64();
        let (s1, s2) = lane_moments(row, pivot);
        let shifted = s1 / len as f64;
        let mean = pivot + shifted;
        let var = (s2 / len as f64 - shifted * shifted).max(0.0);
        let inv = T::of(1.0 / (var + BN_EPS).sqrt());
        let (m, g) = (T::of(mean), gamma[r]);
        let b = beta.map_or(T::zero(), |b| b[r]);
        let xh = &mut cache.xhat[r * len..(r + 1) * len];
        for (x, o) in row.iter_mut().zip(xh.iter_mut()) {
            *o = (*x - m) * inv;
            let y = g * *o + b;
            *x = if !relu || y > T::zero() { y } else { T::zero() };
        }
        cache.inv_std[r] = inv;
        cache.mean[r] = mean;
        cache.var[r] = var;
    }
    cache
}

/// Sums of `x − pivot` and `(x − pivot)²` in eight f64 lanes.
#[inline(always)]
fn lane_moments<T: Real>(xs: &[T], pivot: f64) -> (f64, f64) {
    let mut a1 = [0.0f64; 8];
    let mut a2 = [0.0f64; 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            let d = c[l].f64() - pivot;
            a1[l] += d;
            a2[l] += d * d;
        }
    }
    for (l, v) in tail.iter().enumerate() {
        let d = v.f64() - pivot;
        a1[l] += d;
        a2[l] += d * d;
    }
    (a1.iter().sum(), a2.iter().sum())
}

/// Backward of [`batchnorm_rows_train`], in place on `grad`.
pub fn batchnorm_rows_backward<T: Real>(
    grad: &mut [T],
    cache: &BnCache<T>,
    gamma: &[T],
    dgamma: &mut [T],
    mut dbeta: Option<&mut [T]>,
) {
    let rows = cache.inv_std.len();
    let len = grad.len() / rows;
    let nf = T::of(len as f64);
    for r in 0..rows {
        let g = &mut grad[r * len..(r + 1) * len];
        let xh = &cache.xhat[r * len..(r + 1) * len];
        let sum_dy = lane_sum(g, |d| d.f64());
        let sum_dy_xh = lane_sum2(g, xh, |d, x| d.f64() * x.f64());
        dgamma[r] += T::of(sum_dy_xh);
        if let Some(db) = dbeta.as_deref_mut() {
            db[r] += T::of(sum_dy);
        }
        let scale = gamma[r] * cache.inv_std[r] / nf;
        let (sdy, sdyx) = (T::of(sum_dy), T::of(sum_dy_xh));
        for (d, x) in g.iter_mut().zip(xh) {
            *d = scale * (nf * *d - sdy - *x * sdyx);
        }
    }
}

/// Inference batch norm with stored statistics, in place.
pub fn batchnorm_rows_infer<T: Real>(
    data: &mut [T],
    rows: usize,
    gamma: &[T],
    beta: Option<&[T]>,
    mean: &[T],
    var: &[T],
) {
    let len = data.len() / rows;
    let eps = T::of(BN_EPS);
    for r in 0..rows {
        let scale = gamma[r] / (var[r] + eps).sqrt();
        let shift = beta.map_or(T::zero(), |b| b[r]) - mean[r] * scale;
        for x in &mut data[r * len..(r + 1) * len] {
            *x = *x * scale + shift;
        }
    }
}

/// Exponential running-statistics update; the variance uses the unbiased
/// estimator.
pub fn update_running<T: Real>(cache: &BnCache<T>, count: usize, mean: &mut [T], var: &mut [T]) {
    let m = BN_MOMENTUM;
    let unbias = if count > 1 {
        count as f64 / (count - 1) as f64
    } else {
        1.0
    };
    for r in 0..mean.len() {
        mean[r] = T::of((1.0 - m) * mean[r].f64() + m * cache.mean[r]);
        var[r] = T::of((1.0 - m) * var[r].f64() + m * cache.var[r] * unbias);
    }
}

pub fn relu_inplace<T: Real>(data: &mut [T]) {
    for x in data {
        *x = if *x > T::zero() { *x } else { T::zero() };
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward<T: Real>(grad: &mut [T], output: &[T]) {
    for (g, o) in grad.iter_mut().zip(output) {
        *g = if *o > T::zero() { *g } else { T::zero() };
    }
}

/// 2×2 max pooling, stride 2. Returns the pooled map and, per output
/// element, the flat input index of the winning element (first on ties).
pub fn maxpool2<T: Real>(input: &FeatureMap<T>) -> (FeatureMap<T>, Vec<u32>) {
    let (h, w) = (input.height / 2, input.width / 2);
    let planes = input.channels * input.count;
    let mut out = FeatureMap::zeros(input.channels, input.count, h, w);
    let mut arg = vec![0u32; out.data.len()];
    let (ih, iw) = (input.height, input.width);
    for p in 0..planes {
        let src = &input.data[p * ih * iw..(p + 1) * ih * iw];
        let dst = &mut out.data[p * h * w..(p + 1) * h * w];
        let dst_arg = &mut arg[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let top = &src[2 * y * iw..(2 * y + 1) * iw];
            let bottom = &src[(2 * y + 1) * iw..(2 * y + 2) * iw];
            for x in 0..w {
                let base = (p * ih * iw + 2 * y * iw + 2 * x) as u32;
                let (mut best, mut at) = (top[2 * x], base);
                // Strict comparisons keep the first maximum on ties.
                let cands = [
                    (top[2 * x + 1], base + 1),
                    (bottom[2 * x], base + iw as u32),
                    (bottom[2 * x + 1], base + iw as u32 + 1),
                ];
                for (v, i) in cands {
                    let better = v > best;
                    best = if better { v } else { best };
                    at = if better { i } else { at };
                }
                dst[y * w + x] = best;
                dst_arg[y * w + x] = at;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Real>(dout: &FeatureMap<T>, arg: &[u32], input_shape: &FeatureMap<T>) -> FeatureMap<T> {
    let mut din = input_shape.same_shape();
    for (g, &a) in dout.data.iter().zip(arg) {
        din.data[a as usize] += *g;
    }
    din
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, c: usize, n: usize, h: usize, w: usize) -> FeatureMap<f64> {
        let mut m = FeatureMap::zeros(c, n, h, w);
        for v in &mut m.data {
            *v = rng.random_range(-1.0..1.0);
        }
        m
    }

    fn naive_conv(input: &FeatureMap<f64>, weight: &[f64], cout: usize) -> FeatureMap<f64> {
        let mut out = FeatureMap::zeros(cout, input.count, input.height, input.width);
        let (h, w) = (input.height as isize, input.width as isize);
        for co in 0..cout {
            for i in 0..input.count {
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = 0.0;
                        for ci in 0..input.channels {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let (sy, sx) = (y + ky - 1, x + kx - 1);
                                    if sy < 0 || sx < 0 || sy >= h || sx >= w {
                                        continue;
                                    }
                                    let wv = weight[co * input.channels * 9
                                        + ci * 9
                                        + (ky * 3 + kx) as usize];
                                    acc += wv * input.at(ci, i, sy as usize, sx as usize);
                                }
                            }
                        }
                        let idx = ((co * input.count + i) * input.height + y as usize)
                            * input.width
                            + x as usize;
                        out.data[idx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_map(&mut rng, 3, 5, 6, 7);
        let weight: Vec<f64> = (0..4 * 27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = conv3x3(&input, &weight, 4);
        let slow = naive_conv(&input, &weight, 4);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> is linear in x and W, so its gradients are exact adjoints.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = random_map(&mut rng, 2, 3, 5, 4);
        let weight: Vec<f64> = (0..3 * 18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = random_map(&mut rng, 3, 3, 5, 4);
        let mut dw = vec![0.0; weight.len()];
        let dx = conv3x3_backward(&input, &weight, &g, &mut dw, true).unwrap();
        let dot = |a: &FeatureMap<f64>| a.data.iter().zip(&g.data).map(|(x, y)| x * y).sum::<f64>();
        let base = dot(&conv3x3(&input, &weight, 3));
        for idx in [0usize, 7, 31, 59] {
            let mut xp = input.clone();
            xp.data[idx] += 1.0;
            assert!((dot(&conv3x3(&xp, &weight, 3)) - base - dx.data[idx]).abs() < 1e-9);
        }
        for idx in [0usize, 5, 40, 53] {
            let mut wp = weight.clone();
            wp[idx] += 1.0;
            assert!((dot(&conv3x3(&input, &wp, 3)) - base - dw[idx]).abs() < 1e-9);
        }
    }

    #[test]
    fn batchnorm_normalizes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data: Vec<f64> = (0..2 * 50).map(|_| rng.random_range(2.0..5.0)).collect();
        let cache = batchnorm_rows_train(&mut data, 2, &[1.0, 2.0], Some(&[0.0, 1.0]), false);
        let row1 = &data[50..];
        let mean = row1.iter().sum::<f64>() / 50.0;
        assert!((mean - 1.0).abs() < 1e-9);
        assert_eq!(cache.inv_std.len(), 2);
    }

    #[test]
    fn maxpool_picks_first_max() {
        let mut m = FeatureMap::<f64>::zeros(1, 1, 2, 2);
        m.data = vec![1.0, 3.0, 3.0, 2.0];
        let (p, arg) = maxpool2(&m);
        assert_eq!(p.data, vec![3.0]);
        assert_eq!(arg, vec![1]);
    }
}
