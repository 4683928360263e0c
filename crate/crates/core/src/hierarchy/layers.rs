//! Inference-only layer set with a fixed summation order.

use super::tensor::TensorMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Zero-padded convolution; weights `[out][in][k][k]` then `out` biases.
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f32>,
    },
    /// Transposed convolution; weights `[in][out][k][k]` then `out` biases.
    ConvTranspose {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f32>,
    },
    Elu,
    /// `y + m(y) * sigmoid(F(y))` with `m`, `F` 1x1 convolutions;
    /// weights are `m` (c*c + c) followed by `F` (c*c + c).
    Easn { channels: usize, weights: Vec<f32> },
    /// `y + conv(elu(conv(y)))`, both convs `k x k` stride 1 with same padding.
    Residual {
        channels: usize,
        kernel: usize,
        weights: Vec<f32>,
    },
    /// Space-to-depth.
    Squeeze { factor: usize },
    /// Depth-to-space.
    Unsqueeze { factor: usize },
}

impl LayerSpec {
    /// Number of weights the layer kind requires.
    pub fn expected_weights(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            }
            | LayerSpec::ConvTranspose {
                in_ch,
                out_ch,
                kernel,
                ..
            } => in_ch * out_ch * kernel * kernel + out_ch,
            LayerSpec::Easn { channels, .. } => 2 * (channels * channels + channels),
            LayerSpec::Residual {
                channels, kernel, ..
            } => 2 * (channels * channels * kernel * kernel + channels),
            LayerSpec::Elu | LayerSpec::Squeeze { .. } | LayerSpec::Unsqueeze { .. } => 0,
        }
    }

    pub fn weights(&self) -> &[f32] {
        match self {
            LayerSpec::Conv { weights, .. }
            | LayerSpec::ConvTranspose { weights, .. }
            | LayerSpec::Easn { weights, .. }
            | LayerSpec::Residual { weights, .. } => weights,
            _ => &[],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.expected_weights();
        if self.weights().len() != n {
            return Err(Error::Config(format!(
                "layer {self:?} has {} weights, expected {n}",
                self.weights().len()
            )));
        }
        if self.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::Model("non-finite weight".into()));
        }
        match *self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                ..
            }
            | LayerSpec::ConvTranspose {
                in_ch,
                out_ch,
                kernel,
                stride,
                ..
            } => {
                if in_ch == 0 || out_ch == 0 || kernel == 0 || !(1..=2).contains(&stride) {
                    return Err(Error::Config(format!("bad convolution geometry {self:?}")));
                }
            }
            LayerSpec::Residual {
                channels, kernel, ..
            } => {
                if channels == 0 || kernel % 2 == 0 {
                    return Err(Error::Config("residual kernel must be odd".into()));
                }
            }
            LayerSpec::Easn { channels: 0, .. } => {
                return Err(Error::Config("zero-channel EASN".into()));
            }
            LayerSpec::Squeeze { factor } | LayerSpec::Unsqueeze { factor } if factor == 0 => {
                return Err(Error::Config("zero squeeze factor".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Output shape for an input of `shape`.
    pub fn output_shape(&self, shape: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (c, h, w) = shape;
        let mismatch = |want: usize| {
            Err(Error::Config(format!(
                "layer expects {want} channels, input has {c}"
            )))
        };
        match *self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                ..
            } => {
                if c != in_ch {
                    return mismatch(in_ch);
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(Error::Config("input smaller than kernel".into()));
                }
                Ok((
                    out_ch,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ))
            }
            LayerSpec::ConvTranspose {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                ..
            } => {
                if c != in_ch {
                    return mismatch(in_ch);
                }
                let oh = ((h.max(1) - 1) * stride + kernel).checked_sub(2 * padding);
                let ow = ((w.max(1) - 1) * stride + kernel).checked_sub(2 * padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((out_ch, oh, ow)),
                    _ => Err(Error::Config("transposed convolution output is empty".into())),
                }
            }
            LayerSpec::Elu => Ok(shape),
            LayerSpec::Easn { channels, .. } | LayerSpec::Residual { channels, .. } => {
                if c != channels {
                    return mismatch(channels);
                }
                Ok(shape)
            }
            LayerSpec::Squeeze { factor } => {
                if h % factor != 0 || w % factor != 0 {
                    return Err(Error::Config(format!(
                        "{h}x{w} not divisible by squeeze factor {factor}"
                    )));
                }
                Ok((c * factor * factor, h / factor, w / factor))
            }
            LayerSpec::Unsqueeze { factor } => {
                if c % (factor * factor) != 0 {
                    return Err(Error::Config(format!(
                        "{c} channels not divisible by {}",
                        factor * factor
                    )));
                }
                Ok((c / (factor * factor), h * factor, w * factor))
            }
        }
    }

    pub fn apply(&self, input: &TensorMap) -> Result<TensorMap> {
        let out_shape = self.output_shape(input.shape())?;
        Ok(match self {
            LayerSpec::Conv {
                kernel,
                stride,
                padding,
                weights,
                ..
            } => conv(input, out_shape, *kernel, *stride, *padding, weights),
            LayerSpec::ConvTranspose {
                kernel,
                stride,
                padding,
                weights,
                ..
            } => conv_transpose(input, out_shape, *kernel, *stride, *padding, weights),
            LayerSpec::Elu => input.map(elu),
            LayerSpec::Easn { channels, weights } => {
                let c = *channels;
                let split = c * c + c;
                let m = conv(input, input.shape(), 1, 1, 0, &weights[..split]);
                let f = conv(input, input.shape(), 1, 1, 0, &weights[split..]);
                let mut out = input.clone();
                for ((o, &mv), &fv) in out.data_mut().iter_mut().zip(m.data()).zip(f.data()) {
                    *o += mv * sigmoid(fv);
                }
                out
            }
            LayerSpec::Residual {
                channels,
                kernel,
                weights,
            } => {
                let split = channels * channels * kernel * kernel + channels;
                let pad = kernel / 2;
                let a = conv(input, input.shape(), *kernel, 1, pad, &weights[..split]).map(elu);
                let b = conv(&a, input.shape(), *kernel, 1, pad, &weights[split..]);
                let mut out = input.clone();
                for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
                    *o += bv;
                }
                out
            }
            LayerSpec::Squeeze { factor } => squeeze(input, out_shape, *factor),
            LayerSpec::Unsqueeze { factor } => unsqueeze(input, out_shape, *factor),
        })
    }
}

/// Runs `layers` in order.
pub fn forward(layers: &[LayerSpec], input: &TensorMap) -> Result<TensorMap> {
    let mut x = input.clone();
    for layer in layers {
        layer.validate()?;
        x = layer.apply(&x)?;
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("forward pass produced non-finite values".into()));
    }
    Ok(x)
}

/// Shape after `layers`, without running them.
pub fn output_shape(
    layers: &[LayerSpec],
    mut shape: (usize, usize, usize),
) -> Result<(usize, usize, usize)> {
    for layer in layers {
        shape = layer.output_shape(shape)?;
    }
    Ok(shape)
}

pub fn parameter_count(layers: &[LayerSpec]) -> usize {
    layers.iter().map(|l| l.weights().len()).sum()
}

#[inline]
pub fn elu(v: f32) -> f32 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

#[inline]
pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

#[inline]
pub fn softplus(v: f32) -> f32 {
    if v > 20.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive `y`.
pub fn softplus_inverse(y: f32) -> f32 {
    if y > 20.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn conv(
    input: &TensorMap,
    out_shape: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    weights: &[f32],
) -> TensorMap {
    let (ci, h, w) = input.shape();
    let (co, oh, ow) = out_shape;
    let bias = &weights[co * ci * k * k..];
    let src = input.data();
    let mut out = vec![0.0f32; co * oh * ow];
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for i in 0..ci {
                    let wbase = (o * ci + i) * k * k;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = (i * h + iy as usize) * w;
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += weights[wbase + ky * k + kx] * src[row + ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    TensorMap::new(co, oh, ow, out).unwrap_or_else(|_| TensorMap::zeros(co, oh, ow))
}

fn conv_transpose(
    input: &TensorMap,
    out_shape: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    weights: &[f32],
) -> TensorMap {
    let (ci, h, w) = input.shape();
    let (co, oh, ow) = out_shape;
    let bias = &weights[ci * co * k * k..];
    let src = input.data();
    let mut out = vec![0.0f32; co * oh * ow];
    // Gather form: each output sums its contributing taps in (i, ky, kx) order.
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for i in 0..ci {
                    let wbase = (i * co + o) * k * k;
                    for ky in 0..k {
                        let ty = (oy + pad) as isize - ky as isize;
                        if ty < 0 || ty % stride as isize != 0 {
                            continue;
                        }
                        let iy = (ty / stride as isize) as usize;
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..k {
                            let tx = (ox + pad) as isize - kx as isize;
                            if tx < 0 || tx % stride as isize != 0 {
                                continue;
                            }
                            let ix = (tx / stride as isize) as usize;
                            if ix >= w {
                                continue;
                            }
                            acc += weights[wbase + ky * k + kx] * src[(i * h + iy) * w + ix];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    TensorMap::new(co, oh, ow, out).unwrap_or_else(|_| TensorMap::zeros(co, oh, ow))
}

fn squeeze(input: &TensorMap, out_shape: (usize, usize, usize), f: usize) -> TensorMap {
    let (c, _, _) = input.shape();
    let (co, oh, ow) = out_shape;
    let mut out = TensorMap::zeros(co, oh, ow);
    for ch in 0..c {
        for dy in 0..f {
            for dx in 0..f {
                let oc = (ch * f + dy) * f + dx;
                for y in 0..oh {
                    for x in 0..ow {
                        out.set(oc, y, x, input.get(ch, y * f + dy, x * f + dx));
                    }
                }
            }
        }
    }
    out
}

fn unsqueeze(input: &TensorMap, out_shape: (usize, usize, usize), f: usize) -> TensorMap {
    let (_, h, w) = input.shape();
    let (co, oh, ow) = out_shape;
    let mut out = TensorMap::zeros(co, oh, ow);
    for ch in 0..co {
        for dy in 0..f {
            for dx in 0..f {
                let ic = (ch * f + dy) * f + dx;
                for y in 0..h {
                    for x in 0..w {
                        out.set(ch, y * f + dy, x * f + dx, input.get(ic, y, x));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> TensorMap {
        TensorMap::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_pointwise_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 1, 5, 7);
        let id = LayerSpec::Conv {
            in_ch: 1,
            out_ch: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
            weights: vec![1.0, 0.0],
        };
        assert_eq!(forward(&[id], &x).unwrap(), x);
    }

    #[test]
    fn easn_with_closed_gate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, 3, 4, 4);
        let c = 3;
        let mut w: Vec<f32> = (0..c * c + c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        w.extend(std::iter::repeat_n(0.0, c * c));
        w.extend(std::iter::repeat_n(-60.0, c));
        let y = forward(&[LayerSpec::Easn { channels: c, weights: w }], &x).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn strided_conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ci, co, k, s, p) = (2, 3, 3, 2, 1);
        let x = random_tensor(&mut rng, ci, 8, 8);
        let weights: Vec<f32> = (0..co * ci * k * k + co).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let layer = LayerSpec::Conv {
            in_ch: ci,
            out_ch: co,
            kernel: k,
            stride: s,
            padding: p,
            weights: weights.clone(),
        };
        let y = forward(&[layer], &x).unwrap();
        assert_eq!(y.shape(), (3, 4, 4));
        // Naive oracle over an explicitly zero-padded copy, in f64.
        let mut padded = vec![vec![vec![0.0f64; 10]; 10]; ci];
        for (i, plane) in padded.iter_mut().enumerate() {
            for yy in 0..8 {
                for xx in 0..8 {
                    plane[yy + 1][xx + 1] = x.get(i, yy, xx) as f64;
                }
            }
        }
        for o in 0..co {
            for oy in 0..4 {
                for ox in 0..4 {
                    let mut acc = weights[co * ci * k * k + o] as f64;
                    for (i, plane) in padded.iter().enumerate() {
                        for ky in 0..k {
                            for kx in 0..k {
                                acc += weights[((o * ci + i) * k + ky) * k + kx] as f64
                                    * plane[oy * s + ky][ox * s + kx];
                            }
                        }
                    }
                    assert!((y.get(o, oy, ox) as f64 - acc).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> for shared weights and zero bias.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (ci, co, k, s, p) = (2, 3, 4, 2, 1);
        let mut weights: Vec<f32> = (0..co * ci * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut conv_w = weights.clone();
        conv_w.extend(std::iter::repeat_n(0.0, co));
        // conv weights [o][i], transposed weights [in=o][out=i]: same layout.
        weights.extend(std::iter::repeat_n(0.0, ci));
        let x = random_tensor(&mut rng, ci, 8, 8);
        let y = random_tensor(&mut rng, co, 4, 4);
        let cx = forward(
            &[LayerSpec::Conv {
                in_ch: ci,
                out_ch: co,
                kernel: k,
                stride: s,
                padding: p,
                weights: conv_w,
            }],
            &x,
        )
        .unwrap();
        let ty = forward(
            &[LayerSpec::ConvTranspose {
                in_ch: co,
                out_ch: ci,
                kernel: k,
                stride: s,
                padding: p,
                weights,
            }],
            &y,
        )
        .unwrap();
        assert_eq!(ty.shape(), x.shape());
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| *a as f64 * *b as f64).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| *a as f64 * *b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn squeeze_round_trip_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, 3, 8, 4);
        let s = forward(&[LayerSpec::Squeeze { factor: 2 }], &x).unwrap();
        assert_eq!(s.shape(), (12, 4, 2));
        assert_eq!(s.get(4 + 3, 1, 0), x.get(1, 3, 1));
        let back = forward(&[LayerSpec::Unsqueeze { factor: 2 }], &s).unwrap();
        assert_eq!(back, x);
        assert!(forward(&[LayerSpec::Squeeze { factor: 3 }], &x).is_err());
    }

    #[test]
    fn residual_with_zero_weights_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&mut rng, 2, 5, 5);
        let r = LayerSpec::Residual {
            channels: 2,
            kernel: 3,
            weights: vec![0.0; 2 * (2 * 2 * 9 + 2)],
        };
        assert_eq!(forward(&[r], &x).unwrap(), x);
    }

    #[test]
    fn shape_and_weight_errors() {
        let x = TensorMap::zeros(2, 4, 4);
        let wrong_in = LayerSpec::Conv {
            in_ch: 3,
            out_ch: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
            weights: vec![0.0; 4],
        };
        assert!(matches!(forward(&[wrong_in], &x), Err(Error::Config(_))));
        let short = LayerSpec::Easn {
            channels: 2,
            weights: vec![0.0; 3],
        };
        assert!(matches!(forward(&[short], &x), Err(Error::Config(_))));
    }

    #[test]
    fn softplus_inverse_round_trip() {
        for y in [0.01f32, 0.15, 1.0, 5.0, 30.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-5 * y.max(1.0));
        }
    }
}
