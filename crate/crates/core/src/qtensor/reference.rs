//! Naive per-element kernels.
//!
//! These share nothing with the main kernels beyond the type definitions:
//! `i64` accumulation, explicit padding checks, rounding written out from the
//! definition. The self-test compares both paths byte for byte.

use super::{ConvKind, QuantLayerParams, QuantTensor, Result, Shape, TensorError};

fn round_away(acc: i64, shift: u8) -> i64 {
    if shift == 0 {
        return acc;
    }
    let mag = (acc.abs() + (1i64 << (shift - 1))) >> shift;
    if acc < 0 {
        -mag
    } else {
        mag
    }
}

fn finish(acc: i64, p: &QuantLayerParams) -> i8 {
    // wrap to 32 bits first, matching the accumulator width
    let acc = i64::from(acc as i32);
    let v = round_away(acc, p.requant_shift).clamp(-128, 127);
    v.clamp(
        i64::from(p.activation_clamp.0),
        i64::from(p.activation_clamp.1),
    ) as i8
}

fn out_scale(input: &QuantTensor, p: &QuantLayerParams) -> Result<i8> {
    let s = i64::from(input.scale_shift())
        + i64::from(p.weight_scale_shift)
        + i64::from(p.requant_shift);
    i8::try_from(s).map_err(|_| TensorError::ScaleOverflow)
}

pub fn conv2d(
    input: &QuantTensor,
    p: &QuantLayerParams,
    stride: usize,
    kind: ConvKind,
) -> Result<QuantTensor> {
    p.validate()?;
    let s = input.shape();
    let cout = p.bias.len();
    let (k, pad) = match kind {
        ConvKind::Pointwise => (1i64, 0i64),
        _ => (3, 1),
    };
    let cin_per_out = match kind {
        ConvKind::Depthwise => 1,
        _ => s.channels,
    };
    if kind == ConvKind::Depthwise && cout != s.channels {
        return Err(TensorError::ChannelMismatch {
            expected: cout,
            actual: s.channels,
        });
    }
    let needed = cout * cin_per_out * (k * k) as usize;
    if p.weights.len() != needed {
        return Err(TensorError::WeightLength {
            expected: needed,
            actual: p.weights.len(),
        });
    }
    let ho = (s.height + 2 * pad as usize - k as usize) / stride + 1;
    let wo = (s.width + 2 * pad as usize - k as usize) / stride + 1;
    let at = |c: usize, y: i64, x: i64| -> i64 {
        if y < 0 || x < 0 || y >= s.height as i64 || x >= s.width as i64 {
            0
        } else {
            i64::from(input.data()[c * s.height * s.width + y as usize * s.width + x as usize])
        }
    };
    let mut data = Vec::with_capacity(cout * ho * wo);
    for oc in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = i64::from(p.bias[oc]);
                for j in 0..cin_per_out {
                    let ic = if kind == ConvKind::Depthwise { oc } else { j };
                    for ky in 0..k {
                        for kx in 0..k {
                            let widx =
                                ((oc * cin_per_out + j) as i64 * k * k + ky * k + kx) as usize;
                            let y = (oy * stride) as i64 + ky - pad;
                            let x = (ox * stride) as i64 + kx - pad;
                            acc += i64::from(p.weights[widx]) * at(ic, y, x);
                        }
                    }
                }
                data.push(finish(acc, p));
            }
        }
    }
    QuantTensor::new(Shape::new(cout, ho, wo), data, out_scale(input, p)?)
}

pub fn global_avg_pool(input: &QuantTensor) -> Result<QuantTensor> {
    let s = input.shape();
    let n = (s.height * s.width) as i64;
    if n == 0 {
        return Err(TensorError::InvalidParams("pooling over an empty plane"));
    }
    let data = (0..s.channels)
        .map(|c| {
            let sum: i64 = input.channel(c).iter().map(|&v| i64::from(v)).sum();
            // round(sum / n) with ties away from zero
            let q = sum.abs() / n;
            let r = sum.abs() % n;
            let mag = if 2 * r >= n { q + 1 } else { q };
            (if sum < 0 { -mag } else { mag }).clamp(-128, 127) as i8
        })
        .collect();
    QuantTensor::new(Shape::new(s.channels, 1, 1), data, input.scale_shift())
}

pub fn fully_connected(input: &QuantTensor, p: &QuantLayerParams) -> Result<QuantTensor> {
    p.validate()?;
    let n = input.data().len();
    let cout = p.bias.len();
    if p.weights.len() != n * cout {
        return Err(TensorError::WeightLength {
            expected: n * cout,
            actual: p.weights.len(),
        });
    }
    let mut data = Vec::with_capacity(cout);
    for o in 0..cout {
        let mut acc = i64::from(p.bias[o]);
        for i in 0..n {
            acc += i64::from(p.weights[o * n + i]) * i64::from(input.data()[i]);
        }
        data.push(finish(acc, p));
    }
    QuantTensor::new(Shape::new(cout, 1, 1), data, out_scale(input, p)?)
}
