//! AVX-512 `f32` path for the 3×3 convolution.
//!
//! Patches are never unfolded: each tap of a 32-pixel block is one masked
//! load from the channel-major input at a fixed offset, with the mask
//! clearing lanes whose source pixel falls outside its image.

use super::layers::FeatureMap;

const LANES: usize = 32;

/// Blocks of 32 pixels swept per weight-gradient pass.
const DW_CHUNK_BLOCKS: usize = 32;

/// Whether the running CPU supports this path.
pub(crate) fn available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx512f")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Per-tap validity masks of every 32-pixel block, with the offsets of the
/// nine taps. Masks repeat with a period of `lcm(plane, 32) / 32` blocks.
struct TapMasks {
    period: usize,
    masks: Vec<[u32; 9]>,
    shifts: [isize; 9],
    total: usize,
}

impl TapMasks {
    fn new(height: usize, width: usize, total: usize) -> Self {
        let plane = height * width;
        let period = lcm(plane, LANES) / LANES;
        let mut shifts = [0isize; 9];
        let mut masks = vec![[0u32; 9]; period];
        for (tap, shift) in shifts.iter_mut().enumerate() {
            let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
            *shift = dy * width as isize + dx;
            for (b, m) in masks.iter_mut().enumerate() {
                for lane in 0..LANES {
                    let local = (b * LANES + lane) % plane;
                    let (y, x) = ((local / width) as isize + dy, (local % width) as isize + dx);
                    if y >= 0 && x >= 0 && y < height as isize && x < width as isize {
                        m[tap] |= 1 << lane;
                    }
                }
            }
        }
        Self {
            period,
            masks,
            shifts,
            total,
        }
    }

    fn tail(&self, block: usize) -> u32 {
        let rem = self.total - block * LANES;
        if rem >= LANES {
            u32::MAX
        } else {
            (1u32 << rem) - 1
        }
    }

    #[inline(always)]
    fn block(&self, block: usize) -> [u32; 9] {
        let tail = self.tail(block);
        let mut m = self.masks[block % self.period];
        for v in &mut m {
            *v &= tail;
        }
        m
    }
}

fn lcm(a: usize, b: usize) -> usize {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

/// Forward convolution; requires [`available`].
pub(crate) fn conv3x3(input: &FeatureMap<f32>, weight: &[f32], cout: usize) -> FeatureMap<f32> {
    assert!(available());
    let k = input.channels * 9;
    assert_eq!(weight.len(), cout * k, "conv3x3 weight shape");
    let mut out = FeatureMap::zeros(cout, input.count, input.height, input.width);
    let total = input.count * input.plane();
    if total == 0 {
        return out;
    }
    let masks = TapMasks::new(input.height, input.width, total);
    // SAFETY: `input` holds `channels` rows of `total`, `out` holds `cout`
    // rows of `total`, every load is masked to in-image pixels and the CPU
    // feature was checked above.
    unsafe {
        kernels::forward(
            input.data.as_ptr(),
            input.channels,
            weight.as_ptr(),
            cout,
            out.data.as_mut_ptr(),
            &masks,
        );
    }
    out
}

/// Backward convolution; requires [`available`].
pub(crate) fn conv3x3_backward(
    input: &FeatureMap<f32>,
    weight: &[f32],
    dout: &FeatureMap<f32>,
    dweight: &mut [f32],
    want_input: bool,
) -> Option<FeatureMap<f32>> {
    assert!(available());
    let cin = input.channels;
    let cout = dout.channels;
    let k = cin * 9;
    assert_eq!(weight.len(), cout * k);
    assert_eq!(dweight.len(), cout * k);
    assert_eq!(dout.data.len(), cout * input.count * input.plane());
    let total = input.count * input.plane();
    if total == 0 {
        return want_input.then(|| input.same_shape());
    }
    let masks = TapMasks::new(input.height, input.width, total);
    // SAFETY: as in the forward; `dweight` is distinct from both inputs.
    unsafe {
        kernels::weight_grad(
            input.data.as_ptr(),
            cin,
            dout.data.as_ptr(),
            cout,
            dweight.as_mut_ptr(),
            &masks,
        );
    }
    want_input.then(|| {
        // The input gradient is a convolution of `dout` with the weights
        // transposed over channels and flipped over taps.
        let mut flipped = vec![0.0f32; cin * cout * 9];
        for co in 0..cout {
            for ci in 0..cin {
                for tap in 0..9 {
                    flipped[(ci * cout + co) * 9 + 8 - tap] = weight[(co * cin + ci) * 9 + tap];
                }
            }
        }
        conv3x3(dout, &flipped, cin)
    })
}

#[cfg(target_arch = "x86_64")]
mod kernels {
    use super::{TapMasks, DW_CHUNK_BLOCKS, LANES};
    use std::arch::x86_64::*;

    #[inline(always)]
    unsafe fn load(mask: u32, p: *const f32, off: isize) -> (__m512, __m512) {
        (
            _mm512_maskz_loadu_ps(mask as u16, p.wrapping_offset(off)),
            _mm512_maskz_loadu_ps((mask >> 16) as u16, p.wrapping_offset(off + 16)),
        )
    }

    /// `out[co][p] = Σ_{ci,tap} w[co][ci·9+tap] · x[ci][p + shift(tap)]`.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn forward(x: *const f32, cin: usize, w: *const f32, cout: usize, out: *mut f32, masks: &TapMasks) {
        let total = masks.total;
        for bl in 0..total.div_ceil(LANES) {
            let m = masks.block(bl);
            let tail = masks.tail(bl);
            let xb = x.add(bl * LANES);
            let ob = out.add(bl * LANES);
            let mut co = 0;
            while co < cout {
                co += match cout - co {
                    8.. => forward_tile::<8>(xb, cin, w, co, ob, total, &m, &masks.shifts, tail),
                    4..=7 => forward_tile::<4>(xb, cin, w, co, ob, total, &m, &masks.shifts, tail),
                    2..=3 => forward_tile::<2>(xb, cin, w, co, ob, total, &m, &masks.shifts, tail),
                    _ => forward_tile::<1>(xb, cin, w, co, ob, total, &m, &masks.shifts, tail),
                };
            }
        }
    }

    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn forward_tile<const MR: usize>(
        xb: *const f32,
        cin: usize,
        w: *const f32,
        co: usize,
        ob: *mut f32,
        total: usize,
        m: &[u32; 9],
        shifts: &[isize; 9],
        tail: u32,
    ) -> usize {
        let k = cin * 9;
        let mut s0 = [_mm512_setzero_ps(); MR];
        let mut s1 = [_mm512_setzero_ps(); MR];
        for ci in 0..cin {
            let row = xb.wrapping_add(ci * total);
            for tap in 0..9 {
                let (b0, b1) = load(m[tap], row, shifts[tap]);
                let kk = ci * 9 + tap;
                for r in 0..MR {
                    let av = _mm512_set1_ps(*w.add((co + r) * k + kk));
                    s0[r] = _mm512_fmadd_ps(av, b0, s0[r]);
                    s1[r] = _mm512_fmadd_ps(av, b1, s1[r]);
                }
            }
        }
        for r in 0..MR {
            let dst = ob.add((co + r) * total);
            _mm512_mask_storeu_ps(dst, tail as u16, s0[r]);
            _mm512_mask_storeu_ps(dst.wrapping_add(16), (tail >> 16) as u16, s1[r]);
        }
        MR
    }

    /// `dw[co][ci·9+tap] += Σ_p d[co][p] · x[ci][p + shift(tap)]`.
    #[target_feature(enable = "avx512f")]
    pub unsafe fn weight_grad(x: *const f32, cin: usize, d: *const f32, cout: usize, dw: *mut f32, masks: &TapMasks) {
        let total = masks.total;
        let k = cin * 9;
        let blocks = total.div_ceil(LANES);
        let mut vacc = vec![_mm512_setzero_ps(); cout * k];
        let mut chunk_masks = Vec::with_capacity(DW_CHUNK_BLOCKS);
        let mut b0 = 0;
        while b0 < blocks {
            let b1 = (b0 + DW_CHUNK_BLOCKS).min(blocks);
            chunk_masks.clear();
            chunk_masks.extend((b0..b1).map(|b| (masks.block(b), masks.tail(b))));
            let mut co = 0;
            while co < cout {
                let mr = (cout - co).min(2);
                for ci in 0..cin {
                    let acc = if mr == 2 {
                        weight_grad_tile::<2>(x, ci, d, co, b0, &chunk_masks, &masks.shifts, total)
                    } else {
                        let [a] = weight_grad_tile::<1>(x, ci, d, co, b0, &chunk_masks, &masks.shifts, total);
                        [a, [_mm512_setzero_ps(); 9]]
                    };
                    for (r, row) in acc.iter().enumerate().take(mr) {
                        for (tap, v) in row.iter().enumerate() {
                            let slot = &mut vacc[(co + r) * k + ci * 9 + tap];
                            *slot = _mm512_add_ps(*slot, *v);
                        }
                    }
                }
                co += mr;
            }
            b0 = b1;
        }
        for (i, v) in vacc.iter().enumerate() {
            *dw.add(i) += _mm512_reduce_add_ps(*v);
        }
    }

    #[inline(always)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn weight_grad_tile<const MR: usize>(
        x: *const f32,
        ci: usize,
        d: *const f32,
        co: usize,
        b0: usize,
        chunk: &[([u32; 9], u32)],
        shifts: &[isize; 9],
        total: usize,
    ) -> [[__m512; 9]; MR] {
        let mut s = [[_mm512_setzero_ps(); 9]; MR];
        let row = x.wrapping_add(ci * total);
        for (j, (m, tail)) in chunk.iter().enumerate() {
            let p = (b0 + j) * LANES;
            let mut a = [(_mm512_setzero_ps(), _mm512_setzero_ps()); MR];
            for (r, ar) in a.iter_mut().enumerate() {
                *ar = load(*tail, d.wrapping_add((co + r) * total + p), 0);
            }
            let xp = row.wrapping_add(p);
            for tap in 0..9 {
                let (v0, v1) = load(m[tap], xp, shifts[tap]);
                for r in 0..MR {
                    s[r][tap] = _mm512_fmadd_ps(a[r].0, v0, s[r][tap]);
                    s[r][tap] = _mm512_fmadd_ps(a[r].1, v1, s[r][tap]);
                }
            }
        }
        s
    }
}

#[cfg(not(target_arch = "x86_64"))]
mod kernels {
    use super::TapMasks;

    pub unsafe fn forward(_: *const f32, _: usize, _: *const f32, _: usize, _: *mut f32, _: &TapMasks) {
        unreachable!("vector kernels need x86_64")
    }

    pub unsafe fn weight_grad(_: *const f32, _: usize, _: *const f32, _: usize, _: *mut f32, _: &TapMasks) {
        unreachable!("vector kernels need x86_64")
    }
}
