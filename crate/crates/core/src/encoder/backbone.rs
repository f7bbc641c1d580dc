//! Nine-layer residual backbone: forward (inference and training) and
//! backward.

use super::params::{ConvSlot, ModelParams};
use crate::nn::{
    batchnorm_rows_backward, batchnorm_rows_infer, batchnorm_rows_train, conv3x3,
    conv3x3_backward, maxpool2, maxpool2_backward, relu_backward, relu_inplace, update_running,
    BnCache, FeatureMap, Real,
};

fn conv_bn_infer<T: Real>(x: &FeatureMap<T>, p: &ModelParams<T>, s: &ConvSlot, relu: bool) -> FeatureMap<T> {
    let mut y = conv3x3(x, p.data(s.weight), s.cout);
    batchnorm_rows_infer(
        &mut y.data,
        s.cout,
        p.data(s.gamma),
        Some(p.data(s.beta)),
        p.data(s.mean),
        p.data(s.var),
    );
    if relu {
        relu_inplace(&mut y.data);
    }
    y
}

fn add_inplace<T: Real>(a: &mut FeatureMap<T>, b: &FeatureMap<T>) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += *y;
    }
}

/// Inference forward with stored batch-norm statistics.
pub(crate) fn forward_infer<T: Real>(p: &ModelParams<T>, x: &FeatureMap<T>) -> FeatureMap<T> {
    let l = p.layout();
    let c = &l.convs;
    let a0 = conv_bn_infer(x, p, &c[0], true);
    let (p1, _) = maxpool2(&conv_bn_infer(&a0, p, &c[1], true));
    let a2 = conv_bn_infer(&p1, p, &c[2], true);
    let mut r1 = conv_bn_infer(&a2, p, &c[3], false);
    add_inplace(&mut r1, &p1);
    relu_inplace(&mut r1.data);
    let (p4, _) = maxpool2(&conv_bn_infer(&r1, p, &c[4], true));
    let (p5, _) = maxpool2(&conv_bn_infer(&p4, p, &c[5], true));
    let a6 = conv_bn_infer(&p5, p, &c[6], true);
    let mut out = conv_bn_infer(&a6, p, &c[7], false);
    add_inplace(&mut out, &p5);
    relu_inplace(&mut out.data);
    out
}

/// Everything the backward pass needs from a training forward.
pub(crate) struct BackboneTrace<T> {
    x0: FeatureMap<T>,
    a0: FeatureMap<T>,
    a1: FeatureMap<T>,
    p1: FeatureMap<T>,
    arg1: Vec<u32>,
    a2: FeatureMap<T>,
    r1: FeatureMap<T>,
    a4: FeatureMap<T>,
    p4: FeatureMap<T>,
    arg4: Vec<u32>,
    a5: FeatureMap<T>,
    p5: FeatureMap<T>,
    arg5: Vec<u32>,
    a6: FeatureMap<T>,
    pub out: FeatureMap<T>,
    bn: Vec<BnCache<T>>,
}

fn conv_bn_train<T: Real>(
    x: &FeatureMap<T>,
    p: &ModelParams<T>,
    s: &ConvSlot,
    relu: bool,
    caches: &mut Vec<BnCache<T>>,
) -> FeatureMap<T> {
    let mut y = conv3x3(x, p.data(s.weight), s.cout);
    let cache = batchnorm_rows_train(&mut y.data, s.cout, p.data(s.gamma), Some(p.data(s.beta)), relu);
    caches.push(cache);
    y
}

/// Training forward using batch statistics.
pub(crate) fn forward_train<T: Real>(p: &ModelParams<T>, x0: FeatureMap<T>) -> BackboneTrace<T> {
    let l = p.layout();
    let c = &l.convs;
    let mut bn = Vec::with_capacity(8);
    let a0 = conv_bn_train(&x0, p, &c[0], true, &mut bn);
    let a1 = conv_bn_train(&a0, p, &c[1], true, &mut bn);
    let (p1, arg1) = maxpool2(&a1);
    let a2 = conv_bn_train(&p1, p, &c[2], true, &mut bn);
    let mut r1 = conv_bn_train(&a2, p, &c[3], false, &mut bn);
    add_inplace(&mut r1, &p1);
    relu_inplace(&mut r1.data);
    let a4 = conv_bn_train(&r1, p, &c[4], true, &mut bn);
    let (p4, arg4) = maxpool2(&a4);
    let a5 = conv_bn_train(&p4, p, &c[5], true, &mut bn);
    let (p5, arg5) = maxpool2(&a5);
    let a6 = conv_bn_train(&p5, p, &c[6], true, &mut bn);
    let mut out = conv_bn_train(&a6, p, &c[7], false, &mut bn);
    add_inplace(&mut out, &p5);
    relu_inplace(&mut out.data);
    BackboneTrace {
        x0,
        a0,
        a1,
        p1,
        arg1,
        a2,
        r1,
        a4,
        p4,
        arg4,
        a5,
        p5,
        arg5,
        a6,
        out,
        bn,
    }
}

/// Folds the batch statistics of a training forward into the running
/// estimates.
pub(crate) fn update_running_stats<T: Real>(p: &mut ModelParams<T>, trace: &BackboneTrace<T>) {
    let l = p.layout();
    let sizes = [
        trace.a0.count * trace.a0.plane(),
        trace.a1.count * trace.a1.plane(),
        trace.a2.count * trace.a2.plane(),
        trace.r1.count * trace.r1.plane(),
        trace.a4.count * trace.a4.plane(),
        trace.a5.count * trace.a5.plane(),
        trace.a6.count * trace.a6.plane(),
        trace.out.count * trace.out.plane(),
    ];
    for (i, slot) in l.convs.iter().enumerate() {
        let (lo, hi) = (slot.mean.min(slot.var), slot.mean.max(slot.var));
        let (left, right) = p.tensors.split_at_mut(hi);
        let (mean, var) = if slot.mean < slot.var {
            (&mut left[lo].data, &mut right[0].data)
        } else {
            (&mut right[0].data, &mut left[lo].data)
        };
        update_running(&trace.bn[i], sizes[i], mean, var);
    }
}

/// One conv + BN unit backward: `grad` arrives at the BN output (after any
/// ReLU masking) and the input gradient is returned if requested.
fn unit_backward<T: Real>(
    p: &ModelParams<T>,
    grads: &mut [Vec<T>],
    s: &ConvSlot,
    cache: &BnCache<T>,
    input: &FeatureMap<T>,
    mut grad: FeatureMap<T>,
    want_input: bool,
) -> Option<FeatureMap<T>> {
    {
        let (dg, db) = two_mut(grads, s.gamma, s.beta);
        batchnorm_rows_backward(&mut grad.data, cache, p.data(s.gamma), dg, Some(db));
    }
    conv3x3_backward(input, p.data(s.weight), &grad, &mut grads[s.weight], want_input)
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (l, r) = v.split_at_mut(b);
    (&mut l[a], &mut r[0])
}

/// Accumulates parameter gradients given the gradient at the backbone
/// output.
pub(crate) fn backward<T: Real>(
    p: &ModelParams<T>,
    trace: &BackboneTrace<T>,
    mut dout: FeatureMap<T>,
    grads: &mut [Vec<T>],
) {
    let l = p.layout();
    let c = &l.convs;
    let bn = &trace.bn;

    // Residual block at 8b.
    relu_backward(&mut dout.data, &trace.out.data);
    let skip = dout.clone();
    let mut d = unit_backward(p, grads, &c[7], &bn[7], &trace.a6, dout, true).unwrap();
    relu_backward(&mut d.data, &trace.a6.data);
    let mut d = unit_backward(p, grads, &c[6], &bn[6], &trace.p5, d, true).unwrap();
    add_inplace(&mut d, &skip);

    let mut d = maxpool2_backward(&d, &trace.arg5, &trace.a5);
    relu_backward(&mut d.data, &trace.a5.data);
    let d = unit_backward(p, grads, &c[5], &bn[5], &trace.p4, d, true).unwrap();

    let mut d = maxpool2_backward(&d, &trace.arg4, &trace.a4);
    relu_backward(&mut d.data, &trace.a4.data);
    let mut d = unit_backward(p, grads, &c[4], &bn[4], &trace.r1, d, true).unwrap();

    // Residual block at 2b.
    relu_backward(&mut d.data, &trace.r1.data);
    let skip = d.clone();
    let mut d = unit_backward(p, grads, &c[3], &bn[3], &trace.a2, d, true).unwrap();
    relu_backward(&mut d.data, &trace.a2.data);
    let mut d = unit_backward(p, grads, &c[2], &bn[2], &trace.p1, d, true).unwrap();
    add_inplace(&mut d, &skip);

    let mut d = maxpool2_backward(&d, &trace.arg1, &trace.a1);
    relu_backward(&mut d.data, &trace.a1.data);
    let mut d = unit_backward(p, grads, &c[1], &bn[1], &trace.a0, d, true).unwrap();
    relu_backward(&mut d.data, &trace.a0.data);
    unit_backward(p, grads, &c[0], &bn[0], &trace.x0, d, false);
}
