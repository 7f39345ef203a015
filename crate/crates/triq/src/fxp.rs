//! Fixed-point encodings and ring tensors.
//!
//! Real values are mapped to `l`-bit two's-complement words scaled by `2^f`.
//! All ring arithmetic wraps modulo `2^l`; plaintext encoding saturates
//! instead of wrapping so that out-of-range inputs stay diagnosable.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Supported ring widths.
pub const WIDTHS: [u32; 4] = [8, 16, 32, 64];

/// Descriptor of a fixed-point encoding: `bits`-wide ring, `frac` fraction bits.
#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct FxpType {
    pub bits: u32,
    pub frac: u32,
}

/// 32-bit ring with 8 fraction bits, used for linear layers.
pub const LOW: FxpType = FxpType { bits: 32, frac: 8 };
/// 64-bit ring with 18 fraction bits, used for non-linear internals.
pub const HIGH: FxpType = FxpType { bits: 64, frac: 18 };

impl FxpType {
    pub fn new(bits: u32, frac: u32) -> Result<Self> {
        if !WIDTHS.contains(&bits) {
            return Err(Error::InvalidType(format!("unsupported ring width {bits}")));
        }
        if frac + 1 >= bits {
            return Err(Error::InvalidType(format!(
                "frac {frac} leaves no integer bit in a {bits}-bit word"
            )));
        }
        Ok(FxpType { bits, frac })
    }

    /// Unit in the last place: `2^-frac`.
    pub fn ulp(self) -> f64 {
        (self.frac as f64).exp2().recip()
    }

    /// Scale factor `2^frac`.
    pub fn scale(self) -> f64 {
        (self.frac as f64).exp2()
    }

    /// Bit mask selecting the low `bits` bits of a stored word.
    pub fn mask(self) -> u64 {
        width_mask(self.bits)
    }

    /// Largest representable signed word, `2^(bits-1) - 1`.
    pub fn max_word(self) -> i64 {
        ((1u64 << (self.bits - 1)) - 1) as i64
    }

    /// Smallest representable signed word, `-2^(bits-1)`.
    pub fn min_word(self) -> i64 {
        ((1u64 << (self.bits - 1)) as i64).wrapping_neg()
    }

    /// Largest real value representable without saturation.
    pub fn max_value(self) -> f64 {
        self.max_word() as f64 / self.scale()
    }
}

impl std::fmt::Display for FxpType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FXP_{}^{}", self.bits, self.frac)
    }
}

pub fn width_mask(bits: u32) -> u64 {
    if bits == 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Sign-extend the low `bits` bits of `w` into an `i64`.
pub fn sign_extend(w: u64, bits: u32) -> i64 {
    let shift = 64 - bits;
    ((w << shift) as i64) >> shift
}

/// Dense row-major tensor of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl FloatTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data mismatch"
        );
        FloatTensor { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        FloatTensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        FloatTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }
}

/// Flat n-dimensional tensor of ring words. Words are stored in `u64` slots
/// and masked to the logical `width` on every write.
#[derive(Clone, Debug, PartialEq)]
pub struct RingTensor {
    shape: Vec<usize>,
    data: Vec<u64>,
    width: u32,
}

impl RingTensor {
    pub fn new(shape: Vec<usize>, data: Vec<u64>, width: u32) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data mismatch"
        );
        let mask = width_mask(width);
        let data = data.into_iter().map(|w| w & mask).collect();
        RingTensor { shape, data, width }
    }

    pub fn zeros(shape: Vec<usize>, width: u32) -> Self {
        let n = shape.iter().product();
        RingTensor {
            shape,
            data: vec![0; n],
            width,
        }
    }

    pub fn filled(shape: Vec<usize>, word: u64, width: u32) -> Self {
        let n = shape.iter().product();
        let w = word & width_mask(width);
        RingTensor {
            shape,
            data: vec![w; n],
            width,
        }
    }

    pub fn scalar(word: u64, width: u32) -> Self {
        RingTensor::new(vec![], vec![word], width)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn words(&self) -> &[u64] {
        &self.data
    }

    pub fn words_mut(&mut self) -> &mut [u64] {
        &mut self.data
    }

    pub fn mask(&self) -> u64 {
        width_mask(self.width)
    }

    /// Signed interpretation of every word.
    pub fn signed(&self) -> Vec<i64> {
        self.data
            .iter()
            .map(|&w| sign_extend(w, self.width))
            .collect()
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape size mismatch"
        );
        self.shape = shape;
        self
    }

    /// Re-tag to a narrower (or equal) width, masking every word.
    pub fn to_width(&self, width: u32) -> RingTensor {
        let mask = width_mask(width);
        RingTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&w| w & mask).collect(),
            width,
        }
    }

    pub fn map<F: Fn(u64) -> u64>(&self, f: F) -> RingTensor {
        let mask = self.mask();
        RingTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&w| f(w) & mask).collect(),
            width: self.width,
        }
    }

    pub fn zip<F: Fn(u64, u64) -> u64>(&self, other: &RingTensor, f: F) -> RingTensor {
        broadcast_zip(self, other, f)
    }

    pub fn add(&self, other: &RingTensor) -> RingTensor {
        self.zip(other, u64::wrapping_add)
    }

    pub fn sub(&self, other: &RingTensor) -> RingTensor {
        self.zip(other, u64::wrapping_sub)
    }

    pub fn mul(&self, other: &RingTensor) -> RingTensor {
        self.zip(other, u64::wrapping_mul)
    }

    pub fn neg(&self) -> RingTensor {
        self.map(|w| w.wrapping_neg())
    }

    pub fn add_word(&self, c: u64) -> RingTensor {
        self.map(|w| w.wrapping_add(c))
    }

    pub fn mul_word(&self, c: u64) -> RingTensor {
        self.map(|w| w.wrapping_mul(c))
    }

    pub fn mask_word(&self, m: u64) -> RingTensor {
        self.map(|w| w & m)
    }

    pub fn xor(&self, other: &RingTensor) -> RingTensor {
        self.zip(other, |a, b| a ^ b)
    }

    pub fn and(&self, other: &RingTensor) -> RingTensor {
        self.zip(other, |a, b| a & b)
    }

    pub fn not(&self) -> RingTensor {
        self.map(|w| !w)
    }

    /// Logical (zero-fill) right shift of the unsigned words.
    pub fn shr_logical(&self, t: u32) -> RingTensor {
        assert!(t < self.width);
        self.map(|w| w >> t)
    }

    /// Arithmetic right shift of the signed interpretation (floor division by
    /// `2^t`), reduced back into the ring.
    pub fn shr_arith(&self, t: u32) -> RingTensor {
        assert!(t < self.width);
        let bits = self.width;
        self.map(|w| (sign_extend(w, bits) >> t) as u64)
    }

    pub fn shl(&self, t: u32) -> RingTensor {
        assert!(t < self.width);
        self.map(|w| w << t)
    }

    /// Reinterpret small non-negative words (bits, one-hot lanes) in another
    /// ring width. Panics if any word does not fit.
    pub fn bits_to_width(&self, width: u32) -> RingTensor {
        let mask = width_mask(width);
        RingTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&w| {
                    debug_assert!(w & !mask == 0, "word {w} does not fit in {width} bits");
                    w & mask
                })
                .collect(),
            width,
        }
    }

    /// Slice `[start, end)` of the last axis.
    pub fn slice_last_axis(&self, start: usize, end: usize) -> RingTensor {
        let n = *self.shape.last().expect("slice over scalar");
        assert!(start <= end && end <= n);
        let rows = self.data.len() / n;
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&self.data[r * n + start..r * n + end]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = end - start;
        RingTensor {
            shape,
            data: out,
            width: self.width,
        }
    }

    /// Concatenate along the last axis.
    pub fn concat_last_axis(parts: &[&RingTensor]) -> RingTensor {
        assert!(!parts.is_empty());
        let width = parts[0].width;
        let lead = &parts[0].shape[..parts[0].shape.len() - 1];
        let mut total_last = 0usize;
        for p in parts {
            assert_eq!(
                &p.shape[..p.shape.len() - 1],
                lead,
                "leading dims must match"
            );
            assert_eq!(p.width, width);
            total_last += *p.shape.last().unwrap();
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total_last);
        for r in 0..rows {
            for p in parts {
                let n = *p.shape.last().unwrap();
                out.extend_from_slice(&p.data[r * n..(r + 1) * n]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total_last);
        RingTensor {
            shape,
            data: out,
            width,
        }
    }

    /// Expand selected bit lanes of every word into separate trailing
    /// elements: output shape is `shape x [nbits]`, values in {0,1}.
    pub fn expand_bits(&self, lo_bit: u32, nbits: u32) -> RingTensor {
        let mut shape = self.shape.clone();
        shape.push(nbits as usize);
        let mut out = Vec::with_capacity(self.data.len() * nbits as usize);
        for &w in &self.data {
            for j in 0..nbits {
                out.push((w >> (lo_bit + j)) & 1);
            }
        }
        RingTensor {
            shape,
            data: out,
            width: self.width,
        }
    }

    /// Sum over the last axis. With `keepdims` the reduced axis stays as 1.
    pub fn sum_last_axis(&self, keepdims: bool) -> RingTensor {
        let n = *self.shape.last().expect("sum over scalar");
        let rows = self.data.len() / n;
        let mask = self.mask();
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut acc = 0u64;
            for &w in &self.data[r * n..(r + 1) * n] {
                acc = acc.wrapping_add(w);
            }
            out.push(acc & mask);
        }
        let mut shape = self.shape.clone();
        if keepdims {
            *shape.last_mut().unwrap() = 1;
        } else {
            shape.pop();
        }
        RingTensor {
            shape,
            data: out,
            width: self.width,
        }
    }

    /// Permute axes.
    pub fn transpose(&self, perm: &[usize]) -> RingTensor {
        let rank = self.shape.len();
        assert_eq!(perm.len(), rank, "permutation rank mismatch");
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides(&self.shape);
        let out_strides = strides(&out_shape);
        let mut out = vec![0u64; self.data.len()];
        for (i, &w) in self.data.iter().enumerate() {
            // coordinates of i in the input, scattered through perm
            let mut rem = i;
            let mut o = 0;
            for d in 0..rank {
                let c = rem / in_strides[d];
                rem %= in_strides[d];
                let od = perm.iter().position(|&p| p == d).unwrap();
                o += c * out_strides[od];
            }
            out[o] = w;
        }
        RingTensor {
            shape: out_shape,
            data: out,
            width: self.width,
        }
    }

    /// Matrix product over the trailing two axes; leading axes must match and
    /// act as a batch dimension. A rank-2 operand broadcasts across the batch.
    pub fn matmul(&self, other: &RingTensor) -> RingTensor {
        assert_eq!(self.width, other.width, "matmul width mismatch");
        let (a_shape, b_shape) = (&self.shape, &other.shape);
        assert!(
            a_shape.len() >= 2 && b_shape.len() >= 2,
            "matmul needs rank >= 2"
        );
        let (m, ka) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
        let (kb, n) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
        assert_eq!(
            ka, kb,
            "matmul inner dim mismatch: {a_shape:?} x {b_shape:?}"
        );
        let a_batch: usize = a_shape[..a_shape.len() - 2].iter().product();
        let b_batch: usize = b_shape[..b_shape.len() - 2].iter().product();
        let batch = a_batch.max(b_batch);
        assert!(
            a_batch == b_batch || a_batch == 1 || b_batch == 1,
            "matmul batch mismatch: {a_shape:?} x {b_shape:?}"
        );
        let mut out = vec![0u64; batch * m * n];
        crate::kernels::matmul_batch(
            &self.data,
            a_batch,
            &other.data,
            b_batch,
            &mut out,
            batch,
            m,
            ka,
            n,
        );
        let mask = width_mask(self.width);
        for w in &mut out {
            *w &= mask;
        }
        let mut shape: Vec<usize> = if a_batch >= b_batch {
            a_shape[..a_shape.len() - 2].to_vec()
        } else {
            b_shape[..b_shape.len() - 2].to_vec()
        };
        shape.push(m);
        shape.push(n);
        RingTensor {
            shape,
            data: out,
            width: self.width,
        }
    }

    /// Wire representation: every word packed to `width/8` bytes, little endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let bytes_per = (self.width / 8) as usize;
        let mut out = Vec::with_capacity(self.data.len() * bytes_per);
        for &w in &self.data {
            out.extend_from_slice(&w.to_le_bytes()[..bytes_per]);
        }
        out
    }

    pub fn from_bytes(shape: Vec<usize>, bytes: &[u8], width: u32) -> Result<RingTensor> {
        let bytes_per = (width / 8) as usize;
        let n: usize = shape.iter().product();
        if bytes.len() != n * bytes_per {
            return Err(Error::Wire(format!(
                "expected {} bytes for {:?} at width {}, got {}",
                n * bytes_per,
                shape,
                width,
                bytes.len()
            )));
        }
        let mut data = Vec::with_capacity(n);
        for chunk in bytes.chunks_exact(bytes_per) {
            let mut buf = [0u8; 8];
            buf[..bytes_per].copy_from_slice(chunk);
            data.push(u64::from_le_bytes(buf));
        }
        Ok(RingTensor { shape, data, width })
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// numpy-style right-aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        let da = if d < rank - a.len() {
            1
        } else {
            a[d - (rank - a.len())]
        };
        let db = if d < rank - b.len() {
            1
        } else {
            b[d - (rank - b.len())]
        };
        assert!(
            da == db || da == 1 || db == 1,
            "cannot broadcast {a:?} with {b:?}"
        );
        out[d] = da.max(db);
    }
    out
}

fn broadcast_zip<F: Fn(u64, u64) -> u64>(a: &RingTensor, b: &RingTensor, f: F) -> RingTensor {
    assert_eq!(a.width, b.width, "width mismatch in ring op");
    let mask = a.mask();
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y) & mask)
            .collect();
        return RingTensor {
            shape: a.shape.clone(),
            data,
            width: a.width,
        };
    }
    let shape = broadcast_shape(&a.shape, &b.shape);
    let n: usize = shape.iter().product();
    let out_strides = strides(&shape);
    let a_idx = broadcast_index_map(&shape, &a.shape);
    let b_idx = broadcast_index_map(&shape, &b.shape);
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let ai = project_index(i, &shape, &out_strides, &a_idx);
        let bi = project_index(i, &shape, &out_strides, &b_idx);
        data.push(f(a.data[ai], b.data[bi]) & mask);
    }
    RingTensor {
        shape,
        data,
        width: a.width,
    }
}

/// Per-axis stride of the source tensor inside the broadcast frame
/// (0 where the source dimension is 1).
fn broadcast_index_map(frame: &[usize], src: &[usize]) -> Vec<usize> {
    let src_strides = strides(src);
    let offset = frame.len() - src.len();
    (0..frame.len())
        .map(|d| {
            if d < offset || src[d - offset] == 1 {
                0
            } else {
                src_strides[d - offset]
            }
        })
        .collect()
}

fn project_index(i: usize, frame: &[usize], frame_strides: &[usize], src_map: &[usize]) -> usize {
    let mut rem = i;
    let mut out = 0;
    for d in 0..frame.len() {
        let c = rem / frame_strides[d];
        rem %= frame_strides[d];
        out += c * src_map[d];
    }
    out
}

/// Result of a plaintext encoding, with the number of saturated entries.
pub struct Encoded {
    pub tensor: RingTensor,
    pub saturated: usize,
}

/// Encode reals as ring words: round to nearest (ties away from zero),
/// saturate to the signed word range, reduce modulo `2^bits`.
pub fn encode_with_stats(values: &FloatTensor, t: FxpType) -> Encoded {
    let scale = t.scale();
    let (lo, hi) = (t.min_word(), t.max_word());
    let mask = t.mask();
    let mut saturated = 0usize;
    let data = values
        .data()
        .iter()
        .map(|&v| {
            debug_assert!(v.is_finite(), "encode expects finite values");
            let scaled = (v * scale).round();
            let clamped = if scaled < lo as f64 {
                saturated += 1;
                lo
            } else if scaled > hi as f64 {
                saturated += 1;
                hi
            } else {
                scaled as i64
            };
            (clamped as u64) & mask
        })
        .collect();
    Encoded {
        tensor: RingTensor {
            shape: values.shape().to_vec(),
            data,
            width: t.bits,
        },
        saturated,
    }
}

pub fn encode(values: &FloatTensor, t: FxpType) -> RingTensor {
    encode_with_stats(values, t).tensor
}

pub fn encode_scalar(v: f64, t: FxpType) -> u64 {
    encode(&FloatTensor::scalar(v), t).words()[0]
}

/// Decode ring words back to reals: signed interpretation divided by `2^frac`.
pub fn decode(x: &RingTensor, t: FxpType) -> Result<FloatTensor> {
    if x.width() != t.bits {
        return Err(Error::WidthMismatch {
            expected: t.bits,
            got: x.width(),
        });
    }
    let scale = t.scale();
    let data = x
        .data
        .iter()
        .map(|&w| sign_extend(w, t.bits) as f64 / scale)
        .collect();
    Ok(FloatTensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Deterministic truncation: arithmetic right shift of the signed
/// interpretation, i.e. floor division by `2^shift`.
pub fn plain_trunc(x: &RingTensor, shift: u32) -> RingTensor {
    x.shr_arith(shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn encode_known_words() {
        assert_eq!(encode_scalar(1.5, LOW), 384);
        assert_eq!(encode_scalar(-0.25, LOW), (1u64 << 32) - 64);
        assert_eq!(encode_scalar(0.0, HIGH), 0);
    }

    #[test]
    fn decode_known_words() {
        let t = RingTensor::new(vec![2], vec![384, (1u64 << 32) - 64], 32);
        let v = decode(&t, LOW).unwrap();
        assert_eq!(v.data(), &[1.5, -0.25]);
    }

    #[test]
    fn decode_rejects_width_mismatch() {
        let t = RingTensor::scalar(1, 32);
        assert!(decode(&t, HIGH).is_err());
    }

    #[test]
    fn round_trip_error_bounded() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..100_000).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let ft = FloatTensor::new(vec![vals.len()], vals.clone());
        for t in [LOW, HIGH] {
            let dec = decode(&encode(&ft, t), t).unwrap();
            let half_ulp = t.ulp() / 2.0;
            for (v, d) in vals.iter().zip(dec.data()) {
                assert!(
                    (v - d).abs() <= half_ulp + 1e-12,
                    "{v} -> {d} beyond half ulp"
                );
            }
        }
    }

    #[test]
    fn ties_round_away_from_zero() {
        // 0.5 ulp cases at FXP_32^8: 1/512 scales to exactly 0.5
        assert_eq!(encode_scalar(1.0 / 512.0, LOW), 1);
        assert_eq!(
            encode_scalar(-1.0 / 512.0, LOW) as i64 as u64,
            (1u64 << 32) - 1
        );
    }

    #[test]
    fn encode_monotone_and_saturating() {
        let t = LOW;
        let top = t.max_value();
        let enc = |v: f64| sign_extend(encode_scalar(v, t), 32);
        let mut prev = i64::MIN;
        for i in -1000..=1000 {
            let w = enc(i as f64 * 0.37);
            assert!(w >= prev);
            prev = w;
        }
        let e = encode_with_stats(&FloatTensor::scalar(top + 1.0), t);
        assert_eq!(e.tensor.words()[0] as i64, t.max_word());
        assert_eq!(e.saturated, 1);
        // one past the largest integer-bit value
        let big = (1u64 << (32 - 1 - 8)) as f64 + 1.0;
        let e = encode_with_stats(&FloatTensor::scalar(big), t);
        assert_eq!(e.tensor.words()[0] as i64, t.max_word());
    }

    #[test]
    fn plain_trunc_matches_floor() {
        assert_eq!(plain_trunc(&RingTensor::scalar(384, 32), 8).signed()[0], 1);
        let neg64 = RingTensor::scalar((-64i64) as u64, 32);
        assert_eq!(plain_trunc(&neg64, 8).signed()[0], -1);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let w: u64 = rng.gen::<u64>() & width_mask(32);
            let k = rng.gen_range(1..30);
            let got = plain_trunc(&RingTensor::scalar(w, 32), k).signed()[0];
            let want = sign_extend(w, 32).div_euclid(1i64 << k);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn matmul_and_transpose_shapes() {
        let a = RingTensor::new(vec![2, 2, 3], (0..12).collect(), 32);
        let b = RingTensor::new(vec![2, 3, 2], (0..12).collect(), 32);
        let c = a.matmul(&b);
        assert_eq!(c.shape(), &[2, 2, 2]);
        let t = a.transpose(&[1, 0, 2]);
        assert_eq!(t.shape(), &[2, 2, 3]);
        assert_eq!(t.words()[0..3], a.words()[0..3]);
        assert_eq!(t.words()[3..6], a.words()[6..9]);
    }

    #[test]
    fn broadcast_add() {
        let a = RingTensor::new(vec![2, 3], vec![1, 2, 3, 4, 5, 6], 32);
        let row = RingTensor::new(vec![1, 3], vec![10, 20, 30], 32);
        let s = a.add(&row);
        assert_eq!(s.words(), &[11, 22, 33, 14, 25, 36]);
        let col = RingTensor::new(vec![2, 1], vec![100, 200], 32);
        let s = a.add(&col);
        assert_eq!(s.words(), &[101, 102, 103, 204, 205, 206]);
    }

    proptest::proptest! {
        #[test]
        fn prop_broadcast_add_matches_naive(rows in 1usize..5, cols in 1usize..5,
                                            vals in proptest::collection::vec(0u64..1000, 25),
                                            row_vals in proptest::collection::vec(0u64..1000, 5)) {
            let a = RingTensor::new(vec![rows, cols],
                                    vals[..rows * cols].to_vec(), 32);
            let r = RingTensor::new(vec![1, cols], row_vals[..cols].to_vec(), 32);
            let s = a.add(&r);
            for i in 0..rows {
                for j in 0..cols {
                    let want = vals[i * cols + j].wrapping_add(row_vals[j]) & width_mask(32);
                    proptest::prop_assert_eq!(s.words()[i * cols + j], want);
                }
            }
        }

        #[test]
        fn prop_encode_decode_within_half_ulp(v in -1000.0f64..1000.0) {
            for t in [LOW, HIGH] {
                let d = decode(&encode(&FloatTensor::scalar(v), t), t).unwrap().data()[0];
                proptest::prop_assert!((v - d).abs() <= t.ulp() / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn wrap_semantics() {
        let t = RingTensor::scalar(0xFF, 8);
        assert_eq!(t.add_word(1).words()[0], 0);
        assert_eq!(t.signed()[0], -1);
    }
}
