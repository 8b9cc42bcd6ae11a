//! Forward and backward kernels for the layer zoo.
//!
//! All kernels operate on a single sample. Shapes were validated when the
//! model was assembled, so the hot paths use unchecked indexing arithmetic
//! on the flat buffers.

use super::{Layer, LayerSpec};
use crate::tensor::Tensor;

pub fn forward(layer: &Layer, input: &Tensor) -> Tensor {
    match &layer.spec {
        LayerSpec::Conv2d { stride, kernel, .. } => conv2d_forward(layer, input, *kernel, *stride),
        LayerSpec::MaxPool2d { kernel } => maxpool_forward(layer, input, *kernel),
        LayerSpec::Dense { .. } => dense_forward(layer, input),
        LayerSpec::Relu => {
            let mut out = input.clone();
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            out
        }
        LayerSpec::Flatten => input
            .clone()
            .reshape(layer.out_shape.clone())
            .expect("flatten preserves element count"),
    }
}

/// Reverse step for one layer: given the taped input and the gradient at
/// the output, produce the gradient at the input; optionally accumulate
/// weight/bias gradients.
pub fn backward(
    layer: &Layer,
    input: &Tensor,
    grad_out: &Tensor,
    grads: Option<(&mut Tensor, &mut Tensor)>,
) -> Tensor {
    match &layer.spec {
        LayerSpec::Conv2d { stride, kernel, .. } => {
            conv2d_backward(layer, input, grad_out, *kernel, *stride, grads)
        }
        LayerSpec::MaxPool2d { kernel } => maxpool_backward(layer, input, grad_out, *kernel),
        LayerSpec::Dense { .. } => dense_backward(layer, input, grad_out, grads),
        LayerSpec::Relu => {
            let mut g = grad_out.clone();
            for (gv, iv) in g.data_mut().iter_mut().zip(input.data()) {
                if *iv <= 0.0 {
                    *gv = 0.0;
                }
            }
            g
        }
        LayerSpec::Flatten => grad_out
            .clone()
            .reshape(input.shape().to_vec())
            .expect("flatten preserves element count"),
    }
}

fn dense_forward(layer: &Layer, input: &Tensor) -> Tensor {
    let w = layer.weight.as_ref().unwrap();
    let b = layer.bias.as_ref().unwrap();
    let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
    let x = input.data();
    let wd = w.data();
    let mut out = b.data().to_vec();
    for o in 0..out_f {
        let row = &wd[o * in_f..(o + 1) * in_f];
        let mut acc = 0.0f32;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        out[o] += acc;
    }
    Tensor::new(vec![out_f], out).unwrap()
}

fn dense_backward(
    layer: &Layer,
    input: &Tensor,
    grad_out: &Tensor,
    grads: Option<(&mut Tensor, &mut Tensor)>,
) -> Tensor {
    let w = layer.weight.as_ref().unwrap();
    let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
    let x = input.data();
    let wd = w.data();
    let go = grad_out.data();

    if let Some((gw, gb)) = grads {
        let gwd = gw.data_mut();
        for o in 0..out_f {
            let g = go[o];
            if g != 0.0 {
                let row = &mut gwd[o * in_f..(o + 1) * in_f];
                for (rv, xv) in row.iter_mut().zip(x) {
                    *rv += g * xv;
                }
            }
        }
        for (bv, gv) in gb.data_mut().iter_mut().zip(go) {
            *bv += gv;
        }
    }

    let mut gin = vec![0.0f32; in_f];
    for o in 0..out_f {
        let g = go[o];
        if g != 0.0 {
            let row = &wd[o * in_f..(o + 1) * in_f];
            for (iv, wv) in gin.iter_mut().zip(row) {
                *iv += g * wv;
            }
        }
    }
    Tensor::new(vec![in_f], gin).unwrap()
}

fn conv2d_forward(layer: &Layer, input: &Tensor, k: usize, stride: usize) -> Tensor {
    let (ic, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
    let (oc, oh, ow) = (layer.out_shape[0], layer.out_shape[1], layer.out_shape[2]);
    let x = input.data();
    let wt = layer.weight.as_ref().unwrap().data();
    let b = layer.bias.as_ref().unwrap().data();
    let mut out = vec![0.0f32; oc * oh * ow];
    for o in 0..oc {
        let w_base = o * ic * k * k;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[o];
                for c in 0..ic {
                    let x_chan = c * h * w;
                    let w_chan = w_base + c * k * k;
                    for ky in 0..k {
                        let x_row = x_chan + (oy * stride + ky) * w + ox * stride;
                        let w_row = w_chan + ky * k;
                        for kx in 0..k {
                            acc += x[x_row + kx] * wt[w_row + kx];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::new(vec![oc, oh, ow], out).unwrap()
}

fn conv2d_backward(
    layer: &Layer,
    input: &Tensor,
    grad_out: &Tensor,
    k: usize,
    stride: usize,
    grads: Option<(&mut Tensor, &mut Tensor)>,
) -> Tensor {
    let (ic, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
    let (oc, oh, ow) = (layer.out_shape[0], layer.out_shape[1], layer.out_shape[2]);
    let x = input.data();
    let wt = layer.weight.as_ref().unwrap().data();
    let go = grad_out.data();
    let mut gin = vec![0.0f32; ic * h * w];

    if let Some((gw, gb)) = grads {
        let gwd = gw.data_mut();
        let gbd = gb.data_mut();
        for o in 0..oc {
            let w_base = o * ic * k * k;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = go[(o * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    gbd[o] += g;
                    for c in 0..ic {
                        let x_chan = c * h * w;
                        let w_chan = w_base + c * k * k;
                        for ky in 0..k {
                            let x_row = x_chan + (oy * stride + ky) * w + ox * stride;
                            let w_row = w_chan + ky * k;
                            for kx in 0..k {
                                gwd[w_row + kx] += g * x[x_row + kx];
                            }
                        }
                    }
                }
            }
        }
    }

    for o in 0..oc {
        let w_base = o * ic * k * k;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = go[(o * oh + oy) * ow + ox];
                if g == 0.0 {
                    continue;
                }
                for c in 0..ic {
                    let x_chan = c * h * w;
                    let w_chan = w_base + c * k * k;
                    for ky in 0..k {
                        let x_row = x_chan + (oy * stride + ky) * w + ox * stride;
                        let w_row = w_chan + ky * k;
                        for kx in 0..k {
                            gin[x_row + kx] += g * wt[w_row + kx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![ic, h, w], gin).unwrap()
}

fn maxpool_forward(layer: &Layer, input: &Tensor, k: usize) -> Tensor {
    let (c, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
    let (oh, ow) = (layer.out_shape[1], layer.out_shape[2]);
    let x = input.data();
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        let chan = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                for ky in 0..k {
                    let row = chan + (oy * k + ky) * w + ox * k;
                    for kx in 0..k {
                        let v = x[row + kx];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).unwrap()
}

/// Routes each output gradient to the first-scanned maximum of its window,
/// recomputed from the taped input (deterministic tie-break).
fn maxpool_backward(layer: &Layer, input: &Tensor, grad_out: &Tensor, k: usize) -> Tensor {
    let (c, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
    let (oh, ow) = (layer.out_shape[1], layer.out_shape[2]);
    let x = input.data();
    let go = grad_out.data();
    let mut gin = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let chan = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..k {
                    let row = chan + (oy * k + ky) * w + ox * k;
                    for kx in 0..k {
                        let v = x[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                gin[best_idx] += go[(ch * oh + oy) * ow + ox];
            }
        }
    }
    Tensor::new(vec![c, h, w], gin).unwrap()
}
