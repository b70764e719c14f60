//! Integer-only tensor engine.
//!
//! Every value is an `i8` with a per-tensor power-of-two exponent. Kernels
//! accumulate in wrapping `i32`, requantize with a sign-symmetric
//! round-half-away-from-zero right shift, saturate to `i8`, then apply the
//! layer's activation clamp. No floating point is involved anywhere, so two
//! conforming implementations agree byte for byte.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod reference;

/// Tensor dimensions in fixed `(C, H, W)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("data length {actual} does not match shape {shape} ({expected} elements)")]
    DataLength {
        shape: Shape,
        expected: usize,
        actual: usize,
    },
    #[error("input has {actual} channels, layer expects {expected}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("weight buffer holds {actual} values, layer layout needs {expected}")]
    WeightLength { expected: usize, actual: usize },
    #[error("spatial size {actual_h}x{actual_w} differs from {expected_h}x{expected_w}")]
    SpatialMismatch {
        expected_h: usize,
        expected_w: usize,
        actual_h: usize,
        actual_w: usize,
    },
    #[error("scale shift {actual} differs from {expected}")]
    ScaleMismatch { expected: i8, actual: i8 },
    #[error("output scale shift overflows i8")]
    ScaleOverflow,
    #[error("dimension {0} exceeds 65535")]
    DimensionTooLarge(usize),
    #[error("empty tensor list")]
    EmptyList,
    #[error("stride must be positive")]
    ZeroStride,
    #[error("invalid layer parameters: {0}")]
    InvalidParams(&'static str),
    #[error("encoding truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("unsupported rank {0}, expected 3")]
    BadRank(u8),
    #[error("{0} trailing bytes after tensor encoding")]
    TrailingBytes(usize),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// An integer-quantized tensor: `real ≈ data[i] × 2^scale_shift`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct QuantTensor {
    shape: Shape,
    data: Vec<i8>,
    scale_shift: i8,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: Shape,
    scale_shift: i8,
    data: Vec<i8>,
}

impl TryFrom<RawTensor> for QuantTensor {
    type Error = TensorError;

    fn try_from(raw: RawTensor) -> Result<Self> {
        QuantTensor::new(raw.shape, raw.data, raw.scale_shift)
    }
}

impl From<QuantTensor> for RawTensor {
    fn from(t: QuantTensor) -> Self {
        RawTensor {
            shape: t.shape,
            scale_shift: t.scale_shift,
            data: t.data,
        }
    }
}

impl QuantTensor {
    pub fn new(shape: Shape, data: Vec<i8>, scale_shift: i8) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(TensorError::DataLength {
                shape,
                expected: shape.len(),
                actual: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            scale_shift,
        })
    }

    pub fn zeros(shape: Shape, scale_shift: i8) -> Self {
        Self {
            shape,
            data: vec![0; shape.len()],
            scale_shift,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<i8> {
        self.data
    }

    pub fn scale_shift(&self) -> i8 {
        self.scale_shift
    }

    /// Elements of channel `c` in row-major `(H, W)` order.
    pub fn channel(&self, c: usize) -> &[i8] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Contiguous channel range `[start, end)` as a new tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> QuantTensor {
        let plane = self.shape.plane();
        QuantTensor {
            shape: Shape::new(end - start, self.shape.height, self.shape.width),
            data: self.data[start * plane..end * plane].to_vec(),
            scale_shift: self.scale_shift,
        }
    }

    /// Shape, exponent and every data byte are equal.
    pub fn bit_identical(&self, other: &QuantTensor) -> bool {
        self == other
    }

    /// Length of [`canonical_bytes`] for this tensor.
    pub fn encoded_len(&self) -> usize {
        CANONICAL_HEADER_LEN + self.data.len()
    }
}

/// Bytes preceding the payload in a canonical encoding: rank, three `u16`
/// dims and the exponent.
pub const CANONICAL_HEADER_LEN: usize = 1 + 3 * 2 + 1;

/// Which kernel a convolution uses. Kernel size and padding follow from the kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    /// 3×3, padding 1, weights `[out][in][3][3]`.
    Standard,
    /// 3×3 per channel, padding 1, weights `[c][3][3]`.
    Depthwise,
    /// 1×1, no padding, weights `[out][in]`.
    Pointwise,
}

/// Weights, biases and requantization settings of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantLayerParams {
    /// Out-channel major.
    pub weights: Vec<i8>,
    /// One per output channel.
    pub bias: Vec<i32>,
    pub requant_shift: u8,
    /// Inclusive activation bounds applied after saturation.
    pub activation_clamp: (i8, i8),
    /// Exponent of the weights; output exponent is input + weights + shift.
    #[serde(default)]
    pub weight_scale_shift: i8,
}

impl QuantLayerParams {
    pub const LINEAR: (i8, i8) = (i8::MIN, i8::MAX);
    pub const RELU: (i8, i8) = (0, i8::MAX);

    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.requant_shift > 31 {
            return Err(TensorError::InvalidParams(
                "requant_shift must be in [0, 31]",
            ));
        }
        let (lo, hi) = self.activation_clamp;
        if lo > hi {
            return Err(TensorError::InvalidParams("activation clamp has lo > hi"));
        }
        if self.bias.is_empty() {
            return Err(TensorError::InvalidParams("layer has no output channels"));
        }
        Ok(())
    }

    /// Number of trainable values (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn output_scale(&self, input_scale: i8) -> Result<i8> {
        let s = i32::from(input_scale)
            + i32::from(self.weight_scale_shift)
            + i32::from(self.requant_shift);
        i8::try_from(s).map_err(|_| TensorError::ScaleOverflow)
    }
}

/// `acc × 2^-shift` rounded half away from zero.
#[inline]
pub fn round_shift(acc: i32, shift: u8) -> i32 {
    if shift == 0 {
        return acc;
    }
    let a = i64::from(acc);
    let half = 1i64 << (shift - 1);
    let r = if a >= 0 {
        (a + half) >> shift
    } else {
        -((-a + half) >> shift)
    };
    // |r| <= 2^31 >> 1 for shift >= 1
    r as i32
}

/// Full output pipeline for one accumulator: shift, saturate, clamp.
#[inline]
pub fn requantize(acc: i32, shift: u8, clamp: (i8, i8)) -> i8 {
    let v = round_shift(acc, shift).clamp(i32::from(i8::MIN), i32::from(i8::MAX));
    (v as i8).clamp(clamp.0, clamp.1)
}

#[inline]
fn out_dim(size: usize, stride: usize) -> usize {
    (size - 1) / stride + 1
}

/// Raw 32-bit accumulators of a convolution, bias included.
///
/// Exposed so weight calibration can inspect accumulator magnitudes; the
/// result of [`conv2d_q`] is `requantize` applied to these values.
pub fn conv2d_accumulate(
    input: &QuantTensor,
    weights: &[i8],
    bias: &[i32],
    stride: usize,
    kind: ConvKind,
) -> Result<(Shape, Vec<i32>)> {
    if stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    let Shape {
        channels: cin,
        height: h,
        width: w,
    } = input.shape;
    if h == 0 || w == 0 {
        return Err(TensorError::InvalidParams("input spatial size is zero"));
    }
    let cout = bias.len();
    let expected_weights = match kind {
        ConvKind::Standard => cout * cin * 9,
        ConvKind::Depthwise => {
            if cout != cin {
                return Err(TensorError::ChannelMismatch {
                    expected: cout,
                    actual: cin,
                });
            }
            cin * 9
        }
        ConvKind::Pointwise => cout * cin,
    };
    if weights.len() != expected_weights {
        // a whole number of per-input-channel kernels means the channel count is off
        let per_in = match kind {
            ConvKind::Standard => cout * 9,
            ConvKind::Pointwise => cout,
            ConvKind::Depthwise => 0,
        };
        if per_in > 0 && weights.len().is_multiple_of(per_in) {
            return Err(TensorError::ChannelMismatch {
                expected: weights.len() / per_in,
                actual: cin,
            });
        }
        return Err(TensorError::WeightLength {
            expected: expected_weights,
            actual: weights.len(),
        });
    }
    let ho = out_dim(h, stride);
    let wo = out_dim(w, stride);
    let out_shape = Shape::new(cout, ho, wo);
    let mut acc = vec![0i32; out_shape.len()];
    let x = input.data();

    match kind {
        ConvKind::Pointwise => {
            for oc in 0..cout {
                let wrow = &weights[oc * cin..(oc + 1) * cin];
                let out = &mut acc[oc * ho * wo..(oc + 1) * ho * wo];
                out.fill(bias[oc]);
                for (ic, &wv) in wrow.iter().enumerate() {
                    let wv = i32::from(wv);
                    if wv == 0 {
                        continue;
                    }
                    let plane = &x[ic * h * w..(ic + 1) * h * w];
                    for oy in 0..ho {
                        let row = &plane[oy * stride * w..];
                        let orow = &mut out[oy * wo..(oy + 1) * wo];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            *o = o.wrapping_add(wv * i32::from(row[ox * stride]));
                        }
                    }
                }
            }
        }
        ConvKind::Standard | ConvKind::Depthwise => {
            let depthwise = kind == ConvKind::Depthwise;
            for oc in 0..cout {
                let out = &mut acc[oc * ho * wo..(oc + 1) * ho * wo];
                out.fill(bias[oc]);
                let in_channels: std::ops::Range<usize> =
                    if depthwise { oc..oc + 1 } else { 0..cin };
                for ic in in_channels {
                    let k = if depthwise {
                        &weights[oc * 9..oc * 9 + 9]
                    } else {
                        &weights[(oc * cin + ic) * 9..(oc * cin + ic) * 9 + 9]
                    };
                    let plane = &x[ic * h * w..(ic + 1) * h * w];
                    accumulate_3x3(plane, h, w, k, stride, out, ho, wo);
                }
            }
        }
    }
    Ok((out_shape, acc))
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_3x3(
    plane: &[i8],
    h: usize,
    w: usize,
    k: &[i8],
    stride: usize,
    out: &mut [i32],
    ho: usize,
    wo: usize,
) {
    for ky in 0..3 {
        for kx in 0..3 {
            let wv = i32::from(k[ky * 3 + kx]);
            if wv == 0 {
                continue;
            }
            for oy in 0..ho {
                // padded coordinate iy = oy*stride + ky - 1
                let iy = oy * stride + ky;
                if iy == 0 || iy > h {
                    continue;
                }
                let row = &plane[(iy - 1) * w..iy * w];
                let orow = &mut out[oy * wo..(oy + 1) * wo];
                for (ox, o) in orow.iter_mut().enumerate() {
                    let ix = ox * stride + kx;
                    if ix == 0 || ix > w {
                        continue;
                    }
                    *o = o.wrapping_add(wv * i32::from(row[ix - 1]));
                }
            }
        }
    }
}

/// Quantized convolution; see [`ConvKind`] for kernel shapes.
pub fn conv2d_q(
    input: &QuantTensor,
    params: &QuantLayerParams,
    stride: usize,
    kind: ConvKind,
) -> Result<QuantTensor> {
    params.validate()?;
    let scale = params.output_scale(input.scale_shift)?;
    let (shape, acc) = conv2d_accumulate(input, &params.weights, &params.bias, stride, kind)?;
    let data = acc
        .into_iter()
        .map(|a| requantize(a, params.requant_shift, params.activation_clamp))
        .collect();
    QuantTensor::new(shape, data, scale)
}

/// Per-channel mean, rounded half away from zero. Output shape is `(C, 1, 1)`.
pub fn global_avg_pool_q(input: &QuantTensor) -> Result<QuantTensor> {
    let shape = input.shape;
    if shape.height == 0 || shape.width == 0 {
        return Err(TensorError::InvalidParams("pooling over an empty plane"));
    }
    let n = shape.plane() as i64;
    let data = (0..shape.channels)
        .map(|c| {
            let sum: i32 = input
                .channel(c)
                .iter()
                .fold(0i32, |s, &v| s.wrapping_add(i32::from(v)));
            let s = i64::from(sum);
            let q = if s >= 0 {
                (2 * s + n) / (2 * n)
            } else {
                -((-2 * s + n) / (2 * n))
            };
            q.clamp(i64::from(i8::MIN), i64::from(i8::MAX)) as i8
        })
        .collect();
    QuantTensor::new(Shape::new(shape.channels, 1, 1), data, input.scale_shift)
}

/// Dense layer over the flattened input; weights are `[out][C·H·W]`.
pub fn fully_connected_q(input: &QuantTensor, params: &QuantLayerParams) -> Result<QuantTensor> {
    params.validate()?;
    let len = input.data.len();
    let cout = params.out_channels();
    if params.weights.len() != cout * len {
        return Err(TensorError::WeightLength {
            expected: cout * len,
            actual: params.weights.len(),
        });
    }
    let scale = params.output_scale(input.scale_shift)?;
    let data = params
        .weights
        .chunks_exact(len)
        .zip(&params.bias)
        .map(|(row, &b)| {
            let acc = row.iter().zip(&input.data).fold(b, |a, (&wv, &xv)| {
                a.wrapping_add(i32::from(wv) * i32::from(xv))
            });
            requantize(acc, params.requant_shift, params.activation_clamp)
        })
        .collect();
    QuantTensor::new(Shape::new(cout, 1, 1), data, scale)
}

/// Concatenate along channels, in list order.
pub fn concat_channels(tensors: &[QuantTensor]) -> Result<QuantTensor> {
    let first = tensors.first().ok_or(TensorError::EmptyList)?;
    let (h, w, scale) = (first.shape.height, first.shape.width, first.scale_shift);
    let mut channels = 0;
    for t in tensors {
        if t.shape.height != h || t.shape.width != w {
            return Err(TensorError::SpatialMismatch {
                expected_h: h,
                expected_w: w,
                actual_h: t.shape.height,
                actual_w: t.shape.width,
            });
        }
        if t.scale_shift != scale {
            return Err(TensorError::ScaleMismatch {
                expected: scale,
                actual: t.scale_shift,
            });
        }
        channels += t.shape.channels;
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for t in tensors {
        data.extend_from_slice(&t.data);
    }
    QuantTensor::new(Shape::new(channels, h, w), data, scale)
}

/// Element-wise saturating sum of two tensors with identical shape and exponent.
pub fn add_saturating(a: &QuantTensor, b: &QuantTensor) -> Result<QuantTensor> {
    if a.shape.channels != b.shape.channels {
        return Err(TensorError::ChannelMismatch {
            expected: a.shape.channels,
            actual: b.shape.channels,
        });
    }
    if a.shape != b.shape {
        return Err(TensorError::SpatialMismatch {
            expected_h: a.shape.height,
            expected_w: a.shape.width,
            actual_h: b.shape.height,
            actual_w: b.shape.width,
        });
    }
    if a.scale_shift != b.scale_shift {
        return Err(TensorError::ScaleMismatch {
            expected: a.scale_shift,
            actual: b.scale_shift,
        });
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| x.saturating_add(y))
        .collect();
    QuantTensor::new(a.shape, data, a.scale_shift)
}

/// Little-endian encoding: `u8` rank (3), three `u16` dims, `i8` exponent,
/// then the raw data bytes.
pub fn canonical_bytes(tensor: &QuantTensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(tensor.encoded_len());
    write_canonical(tensor, &mut out)?;
    Ok(out)
}

/// Appends the canonical encoding of `tensor` to `out`.
pub fn write_canonical(tensor: &QuantTensor, out: &mut Vec<u8>) -> Result<()> {
    let Shape {
        channels,
        height,
        width,
    } = tensor.shape;
    let mut dims = [0u16; 3];
    for (slot, d) in dims.iter_mut().zip([channels, height, width]) {
        *slot = u16::try_from(d).map_err(|_| TensorError::DimensionTooLarge(d))?;
    }
    out.push(3);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.push(tensor.scale_shift as u8);
    out.extend(tensor.data.iter().map(|&v| v as u8));
    Ok(())
}

/// Decodes one canonical tensor from the front of `bytes`, returning it and
/// the number of bytes consumed.
pub fn read_canonical(bytes: &[u8]) -> Result<(QuantTensor, usize)> {
    if bytes.len() < CANONICAL_HEADER_LEN {
        return Err(TensorError::Truncated {
            needed: CANONICAL_HEADER_LEN,
            available: bytes.len(),
        });
    }
    if bytes[0] != 3 {
        return Err(TensorError::BadRank(bytes[0]));
    }
    let dim = |i: usize| usize::from(u16::from_le_bytes([bytes[1 + 2 * i], bytes[2 + 2 * i]]));
    let shape = Shape::new(dim(0), dim(1), dim(2));
    let scale_shift = bytes[7] as i8;
    let needed = CANONICAL_HEADER_LEN + shape.len();
    if bytes.len() < needed {
        return Err(TensorError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let data = bytes[CANONICAL_HEADER_LEN..needed]
        .iter()
        .map(|&b| b as i8)
        .collect();
    Ok((QuantTensor::new(shape, data, scale_shift)?, needed))
}

/// Inverse of [`canonical_bytes`]; rejects trailing bytes.
pub fn from_canonical_bytes(bytes: &[u8]) -> Result<QuantTensor> {
    let (t, used) = read_canonical(bytes)?;
    if used != bytes.len() {
        return Err(TensorError::TrailingBytes(bytes.len() - used));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(weights: Vec<i8>, bias: Vec<i32>, shift: u8) -> QuantLayerParams {
        QuantLayerParams {
            weights,
            bias,
            requant_shift: shift,
            activation_clamp: QuantLayerParams::LINEAR,
            weight_scale_shift: 0,
        }
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> QuantTensor {
        let data = (0..shape.len()).map(|_| rng.random::<i8>()).collect();
        QuantTensor::new(shape, data, rng.random_range(-8..8)).unwrap()
    }

    /// Direct sum over the 3×3 window with explicit zero padding.
    fn depthwise_oracle(
        x: &QuantTensor,
        w: &[i8],
        bias: &[i32],
        stride: usize,
        shift: u8,
    ) -> Vec<i8> {
        let s = x.shape();
        let ho = (s.height - 1) / stride + 1;
        let wo = (s.width - 1) / stride + 1;
        let mut out = Vec::new();
        for c in 0..s.channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = i64::from(bias[c]);
                    for ky in 0..3i64 {
                        for kx in 0..3i64 {
                            let iy = (oy * stride) as i64 + ky - 1;
                            let ix = (ox * stride) as i64 + kx - 1;
                            if iy < 0 || ix < 0 || iy >= s.height as i64 || ix >= s.width as i64 {
                                continue;
                            }
                            let v = x.data()[c * s.plane() + iy as usize * s.width + ix as usize];
                            acc += i64::from(v) * i64::from(w[c * 9 + (ky * 3 + kx) as usize]);
                        }
                    }
                    let mag = if shift == 0 {
                        acc.abs()
                    } else {
                        (acc.abs() + (1 << (shift - 1))) >> shift
                    };
                    let r = if acc < 0 { -mag } else { mag };
                    out.push(r.clamp(-128, 127) as i8);
                }
            }
        }
        out
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let x = QuantTensor::zeros(Shape::new(3, 5, 7), 0);
        let p = params(vec![17; 4 * 3 * 9], vec![0; 4], 2);
        let y = conv2d_q(&x, &p, 2, ConvKind::Standard).unwrap();
        assert_eq!(y.shape(), Shape::new(4, 3, 4));
        assert!(y.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn pointwise_scalar_multiply() {
        let x = QuantTensor::new(Shape::new(1, 1, 1), vec![5], 0).unwrap();
        let y = conv2d_q(&x, &params(vec![3], vec![0], 0), 1, ConvKind::Pointwise).unwrap();
        assert_eq!(y.data(), &[15]);
    }

    #[test]
    fn depthwise_matches_reference_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = random_tensor(&mut rng, Shape::new(4, 6, 6));
            let w: Vec<i8> = (0..36).map(|_| rng.random()).collect();
            let bias: Vec<i32> = (0..4).map(|_| rng.random_range(-2000..2000)).collect();
            let stride = rng.random_range(1..=2);
            let p = params(w.clone(), bias.clone(), 4);
            let y = conv2d_q(&x, &p, stride, ConvKind::Depthwise).unwrap();
            assert_eq!(
                y.data(),
                depthwise_oracle(&x, &w, &bias, stride, 4).as_slice()
            );
        }
    }

    #[test]
    fn rounding_is_sign_symmetric() {
        assert_eq!(round_shift(3, 1), 2);
        assert_eq!(round_shift(-3, 1), -2);
        assert_eq!(round_shift(5, 2), 1);
        assert_eq!(round_shift(6, 2), 2);
        assert_eq!(round_shift(-6, 2), -2);
        assert_eq!(round_shift(i32::MIN, 31), -1);
        assert_eq!(requantize(100_000, 0, (-128, 127)), 127);
        assert_eq!(requantize(-100_000, 0, (-128, 127)), -128);
        assert_eq!(requantize(-5, 0, (0, 127)), 0);
    }

    #[test]
    fn channel_mismatch_is_structural() {
        let x = QuantTensor::zeros(Shape::new(3, 4, 4), 0);
        let p = params(vec![1; 2 * 4], vec![0; 2], 0);
        assert!(matches!(
            conv2d_q(&x, &p, 1, ConvKind::Pointwise),
            Err(TensorError::ChannelMismatch {
                expected: 4,
                actual: 3
            })
        ));
        let dw = params(vec![1; 9 * 2], vec![0; 2], 0);
        assert!(conv2d_q(&x, &dw, 1, ConvKind::Depthwise).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let x = QuantTensor::zeros(Shape::new(1, 1, 1), 0);
        let mut p = params(vec![1], vec![0], 32);
        assert!(conv2d_q(&x, &p, 1, ConvKind::Pointwise).is_err());
        p.requant_shift = 0;
        p.activation_clamp = (5, 4);
        assert!(conv2d_q(&x, &p, 1, ConvKind::Pointwise).is_err());
        p.activation_clamp = (0, 4);
        assert!(conv2d_q(&x, &p, 0, ConvKind::Pointwise).is_err());
    }

    #[test]
    fn avg_pool_constant_and_rounding() {
        let x = QuantTensor::new(Shape::new(2, 3, 3), vec![7; 18], -3).unwrap();
        let y = global_avg_pool_q(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 1, 1));
        assert_eq!(y.data(), &[7, 7]);
        assert_eq!(y.scale_shift(), -3);

        let x = QuantTensor::new(Shape::new(2, 1, 2), vec![1, 2, -1, -2], 0).unwrap();
        assert_eq!(global_avg_pool_q(&x).unwrap().data(), &[2, -2]);
    }

    #[test]
    fn avg_pool_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random_tensor(&mut rng, Shape::new(8, 4, 4));
            let y = global_avg_pool_q(&x).unwrap();
            for c in 0..8 {
                let sum: i64 = x.channel(c).iter().map(|&v| i64::from(v)).sum();
                let exact = sum as f64 / 16.0;
                let expected = (exact.abs() + 0.5).floor().copysign(exact) as i8;
                assert_eq!(y.data()[c], expected, "channel {c}, sum {sum}");
            }
        }
    }

    #[test]
    fn fully_connected_identity_and_bias() {
        let x = QuantTensor::new(Shape::new(4, 1, 1), vec![-3, 0, 9, 127], 0).unwrap();
        let mut eye = vec![0i8; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1;
        }
        let y = fully_connected_q(&x, &params(eye, vec![0; 4], 0)).unwrap();
        assert_eq!(y.data(), x.data());

        let y = fully_connected_q(&x, &params(vec![0; 16], vec![5, -300, 200, -7], 0)).unwrap();
        assert_eq!(y.data(), &[5, -128, 127, -7]);

        let bad = params(vec![0; 12], vec![0; 4], 0);
        assert!(fully_connected_q(&x, &bad).is_err());
    }

    #[test]
    fn fully_connected_matches_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, Shape::new(6, 2, 2));
        let w: Vec<i8> = (0..4 * 24).map(|_| rng.random()).collect();
        let b: Vec<i32> = (0..4).map(|_| rng.random_range(-500..500)).collect();
        let y = fully_connected_q(&x, &params(w.clone(), b.clone(), 6)).unwrap();
        for o in 0..4 {
            let acc: i64 = i64::from(b[o])
                + (0..24)
                    .map(|i| i64::from(w[o * 24 + i]) * i64::from(x.data()[i]))
                    .sum::<i64>();
            let mag = (acc.abs() + 32) >> 6;
            let v = if acc < 0 { -mag } else { mag };
            assert_eq!(i64::from(y.data()[o]), v.clamp(-128, 127));
        }
    }

    #[test]
    fn concat_orders_slices() {
        let a = QuantTensor::new(Shape::new(2, 1, 2), vec![1, 2, 3, 4], 0).unwrap();
        let b = QuantTensor::new(Shape::new(3, 1, 2), vec![5, 6, 7, 8, 9, 10], 0).unwrap();
        let ab = concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.shape(), Shape::new(5, 1, 2));
        assert_eq!(ab.slice_channels(0, 2), a);
        assert_eq!(ab.slice_channels(2, 5), b);
        assert_eq!(concat_channels(std::slice::from_ref(&a)).unwrap(), a);

        let c = QuantTensor::new(Shape::new(1, 2, 1), vec![0, 0], 0).unwrap();
        assert!(concat_channels(&[a.clone(), c]).is_err());
        let d = QuantTensor::new(Shape::new(1, 1, 2), vec![0, 0], 1).unwrap();
        assert!(matches!(
            concat_channels(&[a, d]),
            Err(TensorError::ScaleMismatch { .. })
        ));
        assert!(matches!(concat_channels(&[]), Err(TensorError::EmptyList)));
    }

    #[test]
    fn concat_serialization_is_payload_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let parts: Vec<_> = (0..8)
            .map(|_| {
                let t = random_tensor(&mut rng, Shape::new(4, 3, 5));
                QuantTensor::new(t.shape(), t.into_data(), -2).unwrap()
            })
            .collect();
        let joined = canonical_bytes(&concat_channels(&parts).unwrap()).unwrap();
        let payloads: Vec<u8> = parts
            .iter()
            .flat_map(|p| canonical_bytes(p).unwrap()[CANONICAL_HEADER_LEN..].to_vec())
            .collect();
        assert_eq!(&joined[CANONICAL_HEADER_LEN..], payloads.as_slice());
        assert_eq!(
            &joined[..CANONICAL_HEADER_LEN],
            &[3, 32, 0, 3, 0, 5, 0, 0xfe]
        );
    }

    #[test]
    fn concat_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_tensor(&mut rng, Shape::new(1, 2, 2));
        let b = QuantTensor::new(Shape::new(2, 2, 2), vec![1; 8], a.scale_shift()).unwrap();
        let c = QuantTensor::new(Shape::new(3, 2, 2), vec![-1; 12], a.scale_shift()).unwrap();
        let nested =
            concat_channels(&[a.clone(), concat_channels(&[b.clone(), c.clone()]).unwrap()])
                .unwrap();
        assert_eq!(nested, concat_channels(&[a, b, c]).unwrap());
    }

    #[test]
    fn canonical_trivial_vector() {
        let t = QuantTensor::zeros(Shape::new(1, 1, 1), 0);
        assert_eq!(
            canonical_bytes(&t).unwrap(),
            vec![0x03, 0x01, 0x00, 0x01, 0x00, 0x01, 0x00, 0x00, 0x00]
        );
    }

    #[test]
    fn canonical_rejects_large_dims_and_bad_input() {
        let t = QuantTensor::zeros(Shape::new(1, 1, 65536), 0);
        assert_eq!(
            canonical_bytes(&t),
            Err(TensorError::DimensionTooLarge(65536))
        );
        assert!(matches!(
            from_canonical_bytes(&[3, 1, 0]),
            Err(TensorError::Truncated { .. })
        ));
        assert_eq!(
            from_canonical_bytes(&[2, 1, 0, 1, 0, 0, 0, 0]),
            Err(TensorError::BadRank(2))
        );
        assert_eq!(
            from_canonical_bytes(&[3, 1, 0, 1, 0, 1, 0, 0, 0, 0]),
            Err(TensorError::TrailingBytes(1))
        );
    }

    #[test]
    fn one_byte_difference_changes_encoding() {
        let a = QuantTensor::new(Shape::new(2, 2, 2), vec![0; 8], 0).unwrap();
        let mut b = a.clone();
        b.data_mut()[5] = 1;
        assert_ne!(canonical_bytes(&a).unwrap(), canonical_bytes(&b).unwrap());
        assert!(!a.bit_identical(&b));
    }

    #[test]
    fn saturating_add_clamps() {
        let a = QuantTensor::new(Shape::new(1, 1, 3), vec![100, -100, 5], 0).unwrap();
        let b = QuantTensor::new(Shape::new(1, 1, 3), vec![100, -100, -6], 0).unwrap();
        assert_eq!(add_saturating(&a, &b).unwrap().data(), &[127, -128, -1]);
    }

    fn arb_tensor() -> impl Strategy<Value = QuantTensor> {
        (1usize..5, 1usize..5, 1usize..5, any::<i8>()).prop_flat_map(|(c, h, w, s)| {
            proptest::collection::vec(any::<i8>(), c * h * w)
                .prop_map(move |d| QuantTensor::new(Shape::new(c, h, w), d, s).unwrap())
        })
    }

    proptest! {
        #[test]
        fn canonical_round_trip(t in arb_tensor()) {
            let bytes = canonical_bytes(&t).unwrap();
            prop_assert_eq!(bytes.len(), t.encoded_len());
            prop_assert_eq!(from_canonical_bytes(&bytes).unwrap(), t);
        }

        #[test]
        fn conv_outputs_respect_clamp(t in arb_tensor(), lo in -128i8..0, span in 0u8..128, shift in 0u8..12) {
            let t = QuantTensor::new(t.shape(), t.data().to_vec(), 0).unwrap();
            let cin = t.shape().channels;
            let p = QuantLayerParams {
                weights: (0..2 * cin * 9).map(|i| (i as i8).wrapping_mul(37)).collect(),
                bias: vec![1000, -1000],
                requant_shift: shift,
                activation_clamp: (lo, lo.saturating_add(span as i8)),
                weight_scale_shift: 0,
            };
            let y = conv2d_q(&t, &p, 1, ConvKind::Standard).unwrap();
            let (a, b) = p.activation_clamp;
            prop_assert!(y.data().iter().all(|&v| v >= a && v <= b));
        }
    }
}
