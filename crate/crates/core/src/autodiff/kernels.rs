//! Forward and backward kernels for every primitive.

use crate::error::{Error, Result};
use crate::tensor::{same_shape, Tensor};

use super::Fault;

pub(crate) const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Affine { mul: f64, add: f64 },
    MatMul,
    AddBias,
    Relu,
    Conv2d,
    ZeroPad2d { pad: usize },
    MaxPool2x2,
    Softmax,
    Square,
    Sqrt,
    Sum,
    Mean,
    LogClamped,
    Reshape { shape: Vec<usize> },
    GatherRows { indices: Vec<usize> },
    NormDiff,
}

fn dims4(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        &[n, c, h, w] => Ok((n, c, h, w)),
        other => Err(Error::ShapeMismatch {
            op,
            lhs: other.to_vec(),
            rhs: vec![0, 0, 0, 0],
        }),
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_vec(x.shape().to_vec(), data).expect("same element count")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.shape().to_vec(), data).expect("same element count")
}

pub(crate) fn eval(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    match op {
        Op::Leaf | Op::Constant => unreachable!("leaves are never re-evaluated"),
        Op::Add => {
            same_shape("add", inputs[0], inputs[1])?;
            Ok(zip(inputs[0], inputs[1], |a, b| a + b))
        }
        Op::Sub => {
            same_shape("sub", inputs[0], inputs[1])?;
            Ok(zip(inputs[0], inputs[1], |a, b| a - b))
        }
        Op::Mul => {
            same_shape("mul", inputs[0], inputs[1])?;
            Ok(zip(inputs[0], inputs[1], |a, b| a * b))
        }
        Op::Affine { mul, add } => Ok(map(inputs[0], |v| mul * v + add)),
        Op::MatMul => matmul_forward(inputs[0], inputs[1]),
        Op::AddBias => add_bias_forward(inputs[0], inputs[1]),
        Op::Relu => Ok(map(inputs[0], |v| if v > 0.0 { v } else { 0.0 })),
        Op::Conv2d => conv2d_forward(inputs[0], inputs[1]),
        Op::ZeroPad2d { pad } => zero_pad_forward(inputs[0], *pad),
        Op::MaxPool2x2 => max_pool_forward(inputs[0]),
        Op::Softmax => softmax_forward(inputs[0]),
        Op::Square => Ok(map(inputs[0], |v| v * v)),
        Op::Sqrt => {
            if inputs[0].data().iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidArgument(
                    "sqrt of a negative element".into(),
                ));
            }
            Ok(map(inputs[0], f64::sqrt))
        }
        Op::Sum => Ok(Tensor::scalar(inputs[0].data().iter().sum())),
        Op::Mean => {
            let n = inputs[0].len() as f64;
            Ok(Tensor::scalar(inputs[0].data().iter().sum::<f64>() / n))
        }
        Op::LogClamped => Ok(map(inputs[0], |v| v.max(LOG_CLAMP).ln())),
        Op::Reshape { shape } => inputs[0].reshaped(shape.clone()),
        Op::GatherRows { indices } => gather_rows_forward(inputs[0], indices),
        Op::NormDiff => norm_diff_forward(inputs[0], inputs[1]),
    }
}

/// Gradient contribution for each input of `op`, given the adjoint of its
/// output. Contributions are accumulated by the caller.
pub(crate) fn backprop(
    op: &Op,
    inputs: &[&Tensor],
    output: &Tensor,
    adjoint: &Tensor,
    fault: Option<Fault>,
) -> Vec<Tensor> {
    match op {
        Op::Leaf | Op::Constant => vec![],
        Op::Add => vec![adjoint.clone(), adjoint.clone()],
        Op::Sub => vec![adjoint.clone(), map(adjoint, |g| -g)],
        Op::Mul => vec![
            zip(adjoint, inputs[1], |g, b| g * b),
            zip(adjoint, inputs[0], |g, a| g * a),
        ],
        Op::Affine { mul, .. } => vec![map(adjoint, |g| g * mul)],
        Op::MatMul => matmul_backward(inputs[0], inputs[1], adjoint),
        Op::AddBias => add_bias_backward(inputs[0], inputs[1], adjoint),
        Op::Relu => {
            let offset = match fault {
                Some(Fault::ReluBackwardOffset) => 0.01,
                None => 0.0,
            };
            vec![zip(adjoint, inputs[0], |g, x| {
                if x > 0.0 {
                    g + offset
                } else {
                    offset
                }
            })]
        }
        Op::Conv2d => conv2d_backward(inputs[0], inputs[1], adjoint),
        Op::ZeroPad2d { pad } => zero_pad_backward(inputs[0], *pad, adjoint),
        Op::MaxPool2x2 => max_pool_backward(inputs[0], adjoint),
        Op::Softmax => softmax_backward(output, adjoint),
        Op::Square => vec![zip(adjoint, inputs[0], |g, x| 2.0 * x * g)],
        Op::Sqrt => vec![zip(adjoint, inputs[0], |g, x| {
            if x > 0.0 {
                g / (2.0 * x.sqrt())
            } else {
                0.0
            }
        })],
        Op::Sum => {
            let g = adjoint.scalar_value();
            vec![Tensor::filled(inputs[0].shape(), g)]
        }
        Op::Mean => {
            let g = adjoint.scalar_value() / inputs[0].len() as f64;
            vec![Tensor::filled(inputs[0].shape(), g)]
        }
        Op::LogClamped => vec![zip(adjoint, inputs[0], |g, x| {
            if x > LOG_CLAMP {
                g / x
            } else {
                0.0
            }
        })],
        Op::Reshape { .. } => {
            vec![adjoint
                .reshaped(inputs[0].shape().to_vec())
                .expect("reshape preserves element count")]
        }
        Op::GatherRows { indices } => gather_rows_backward(inputs[0], indices, adjoint),
        Op::NormDiff => norm_diff_backward(inputs[0], inputs[1], output, adjoint),
    }
}

// ── matmul ───────────────────────────────────────────────────────────

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[n, k], &[k2, m]) = (a.shape(), b.shape()) else {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    };
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for kk in 0..k {
            let aik = ad[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[kk * m..(kk + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Tensor::from_vec(vec![n, m], out)
}

fn matmul_backward(a: &Tensor, b: &Tensor, adjoint: &Tensor) -> Vec<Tensor> {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let m = b.shape()[1];
    let (ad, bd, gd) = (a.data(), b.data(), adjoint.data());
    // dA = G * B^T
    let mut da = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..m {
            let g = gd[i * m + j];
            if g == 0.0 {
                continue;
            }
            for kk in 0..k {
                da[i * k + kk] += g * bd[kk * m + j];
            }
        }
    }
    // dB = A^T * G
    let mut db = vec![0.0; k * m];
    for i in 0..n {
        for kk in 0..k {
            let av = ad[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let grow = &gd[i * m..(i + 1) * m];
            let drow = &mut db[kk * m..(kk + 1) * m];
            for (d, &g) in drow.iter_mut().zip(grow) {
                *d += av * g;
            }
        }
    }
    vec![
        Tensor::from_vec(vec![n, k], da).expect("shape"),
        Tensor::from_vec(vec![k, m], db).expect("shape"),
    ]
}

// ── bias ─────────────────────────────────────────────────────────────

fn add_bias_forward(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mismatch = || Error::ShapeMismatch {
        op: "add_bias",
        lhs: x.shape().to_vec(),
        rhs: bias.shape().to_vec(),
    };
    match (x.shape(), bias.shape()) {
        (&[n, f], &[fb]) if f == fb => {
            let mut out = x.data().to_vec();
            for i in 0..n {
                for j in 0..f {
                    out[i * f + j] += bias.data()[j];
                }
            }
            Tensor::from_vec(vec![n, f], out)
        }
        (&[n, c, h, w], &[cb]) if c == cb => {
            let mut out = x.data().to_vec();
            let plane = h * w;
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * plane;
                    let b = bias.data()[ch];
                    for v in &mut out[base..base + plane] {
                        *v += b;
                    }
                }
            }
            Tensor::from_vec(vec![n, c, h, w], out)
        }
        _ => Err(mismatch()),
    }
}

fn add_bias_backward(x: &Tensor, bias: &Tensor, adjoint: &Tensor) -> Vec<Tensor> {
    let gd = adjoint.data();
    let mut dbias = vec![0.0; bias.len()];
    match x.shape() {
        &[n, f] => {
            for i in 0..n {
                for j in 0..f {
                    dbias[j] += gd[i * f + j];
                }
            }
        }
        &[n, c, h, w] => {
            let plane = h * w;
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * plane;
                    dbias[ch] += gd[base..base + plane].iter().sum::<f64>();
                }
            }
        }
        _ => unreachable!("validated at build"),
    }
    vec![
        adjoint.clone(),
        Tensor::from_vec(bias.shape().to_vec(), dbias).expect("shape"),
    ]
}

// ── convolution ──────────────────────────────────────────────────────

fn conv2d_forward(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (n, ci, h, w) = dims4(input, "conv2d")?;
    let (co, cik, kh, kw) = dims4(kernel, "conv2d")?;
    if ci != cik || kh > h || kw > w {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let (id, kd) = (input.data(), kernel.data());
    let mut out = vec![0.0; n * co * oh * ow];
    for img in 0..n {
        for oc in 0..co {
            for ic in 0..ci {
                let ibase = (img * ci + ic) * h * w;
                let kbase = (oc * ci + ic) * kh * kw;
                let obase = (img * co + oc) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ky in 0..kh {
                            let irow = ibase + (oy + ky) * w + ox;
                            let krow = kbase + ky * kw;
                            for kx in 0..kw {
                                acc += id[irow + kx] * kd[krow + kx];
                            }
                        }
                        out[obase + oy * ow + ox] += acc;
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![n, co, oh, ow], out)
}

fn conv2d_backward(input: &Tensor, kernel: &Tensor, adjoint: &Tensor) -> Vec<Tensor> {
    let (n, ci, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (co, _, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let (id, kd, gd) = (input.data(), kernel.data(), adjoint.data());
    let mut dinput = vec![0.0; input.len()];
    let mut dkernel = vec![0.0; kernel.len()];
    for img in 0..n {
        for oc in 0..co {
            let obase = (img * co + oc) * oh * ow;
            for ic in 0..ci {
                let ibase = (img * ci + ic) * h * w;
                let kbase = (oc * ci + ic) * kh * kw;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = gd[obase + oy * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        for ky in 0..kh {
                            let irow = ibase + (oy + ky) * w + ox;
                            let krow = kbase + ky * kw;
                            for kx in 0..kw {
                                dinput[irow + kx] += g * kd[krow + kx];
                                dkernel[krow + kx] += g * id[irow + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    vec![
        Tensor::from_vec(input.shape().to_vec(), dinput).expect("shape"),
        Tensor::from_vec(kernel.shape().to_vec(), dkernel).expect("shape"),
    ]
}

// ── padding and pooling ──────────────────────────────────────────────

fn zero_pad_forward(input: &Tensor, pad: usize) -> Result<Tensor> {
    let (n, c, h, w) = dims4(input, "zero_pad2d")?;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let id = input.data();
    let mut out = vec![0.0; n * c * ph * pw];
    for plane in 0..n * c {
        for y in 0..h {
            let src = plane * h * w + y * w;
            let dst = plane * ph * pw + (y + pad) * pw + pad;
            out[dst..dst + w].copy_from_slice(&id[src..src + w]);
        }
    }
    Tensor::from_vec(vec![n, c, ph, pw], out)
}

fn zero_pad_backward(input: &Tensor, pad: usize, adjoint: &Tensor) -> Vec<Tensor> {
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let gd = adjoint.data();
    let mut din = vec![0.0; input.len()];
    for plane in 0..n * c {
        for y in 0..h {
            let dst = plane * h * w + y * w;
            let src = plane * ph * pw + (y + pad) * pw + pad;
            din[dst..dst + w].copy_from_slice(&gd[src..src + w]);
        }
    }
    vec![Tensor::from_vec(input.shape().to_vec(), din).expect("shape")]
}

/// Index of the window maximum, first (row-major lowest) element on ties.
fn pool_argmax(data: &[f64], w: usize, base: usize, y: usize, x: usize) -> usize {
    let mut best = base + 2 * y * w + 2 * x;
    let mut best_val = data[best];
    for dy in 0..2 {
        for dx in 0..2 {
            let idx = base + (2 * y + dy) * w + (2 * x + dx);
            if data[idx] > best_val {
                best_val = data[idx];
                best = idx;
            }
        }
    }
    best
}

fn max_pool_forward(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = dims4(input, "max_pool2x2")?;
    if h < 2 || w < 2 {
        return Err(Error::ShapeMismatch {
            op: "max_pool2x2",
            lhs: input.shape().to_vec(),
            rhs: vec![n, c, 2, 2],
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let id = input.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let base = plane * h * w;
        let obase = plane * oh * ow;
        for y in 0..oh {
            for x in 0..ow {
                out[obase + y * ow + x] = id[pool_argmax(id, w, base, y, x)];
            }
        }
    }
    Tensor::from_vec(vec![n, c, oh, ow], out)
}

fn max_pool_backward(input: &Tensor, adjoint: &Tensor) -> Vec<Tensor> {
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (oh, ow) = (h / 2, w / 2);
    let (id, gd) = (input.data(), adjoint.data());
    let mut din = vec![0.0; input.len()];
    for plane in 0..n * c {
        let base = plane * h * w;
        let obase = plane * oh * ow;
        for y in 0..oh {
            for x in 0..ow {
                din[pool_argmax(id, w, base, y, x)] += gd[obase + y * ow + x];
            }
        }
    }
    vec![Tensor::from_vec(input.shape().to_vec(), din).expect("shape")]
}

// ── softmax ──────────────────────────────────────────────────────────

fn softmax_forward(x: &Tensor) -> Result<Tensor> {
    if x.rank() == 0 {
        return Err(Error::ShapeMismatch {
            op: "softmax",
            lhs: vec![],
            rhs: vec![1],
        });
    }
    let width = *x.shape().last().expect("rank >= 1");
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(width) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::from_vec(x.shape().to_vec(), out)
}

fn softmax_backward(output: &Tensor, adjoint: &Tensor) -> Vec<Tensor> {
    let width = *output.shape().last().expect("rank >= 1");
    let mut din = vec![0.0; output.len()];
    for (r, (yrow, grow)) in output
        .data()
        .chunks(width)
        .zip(adjoint.data().chunks(width))
        .enumerate()
    {
        let dot: f64 = yrow.iter().zip(grow).map(|(&y, &g)| y * g).sum();
        for (j, (&y, &g)) in yrow.iter().zip(grow).enumerate() {
            din[r * width + j] = y * (g - dot);
        }
    }
    vec![Tensor::from_vec(output.shape().to_vec(), din).expect("shape")]
}

// ── gather and norms ─────────────────────────────────────────────────

fn gather_rows_forward(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    if x.rank() == 0 {
        return Err(Error::ShapeMismatch {
            op: "gather_rows",
            lhs: vec![],
            rhs: vec![indices.len()],
        });
    }
    let row = x.len() / x.shape()[0];
    let mut out = Vec::with_capacity(indices.len() * row);
    for &i in indices {
        out.extend_from_slice(&x.data()[i * row..(i + 1) * row]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = indices.len();
    Tensor::from_vec(shape, out)
}

fn gather_rows_backward(x: &Tensor, indices: &[usize], adjoint: &Tensor) -> Vec<Tensor> {
    let row = x.len() / x.shape()[0];
    let mut din = vec![0.0; x.len()];
    for (k, &i) in indices.iter().enumerate() {
        for j in 0..row {
            din[i * row + j] += adjoint.data()[k * row + j];
        }
    }
    vec![Tensor::from_vec(x.shape().to_vec(), din).expect("shape")]
}

fn norm_diff_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("norm_diff", a, b)?;
    match a.rank() {
        1 => {
            let ssq: f64 = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            Ok(Tensor::scalar(ssq.sqrt()))
        }
        2 => {
            let d = a.shape()[1];
            let norms = a
                .data()
                .chunks(d)
                .zip(b.data().chunks(d))
                .map(|(ra, rb)| {
                    ra.iter()
                        .zip(rb)
                        .map(|(&x, &y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            Tensor::from_vec(vec![a.shape()[0]], norms)
        }
        _ => Err(Error::ShapeMismatch {
            op: "norm_diff",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }),
    }
}

fn norm_diff_backward(a: &Tensor, b: &Tensor, output: &Tensor, adjoint: &Tensor) -> Vec<Tensor> {
    let rows = if a.rank() == 1 { 1 } else { a.shape()[0] };
    let d = a.len() / rows;
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; b.len()];
    for r in 0..rows {
        let norm = output.data()[if a.rank() == 1 { 0 } else { r }];
        let g = adjoint.data()[if a.rank() == 1 { 0 } else { r }];
        if norm == 0.0 || g == 0.0 {
            continue;
        }
        for j in 0..d {
            let idx = r * d + j;
            let delta = (a.data()[idx] - b.data()[idx]) / norm;
            da[idx] = g * delta;
            db[idx] = -g * delta;
        }
    }
    vec![
        Tensor::from_vec(a.shape().to_vec(), da).expect("shape"),
        Tensor::from_vec(b.shape().to_vec(), db).expect("shape"),
    ]
}
