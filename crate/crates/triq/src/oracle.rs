//! Plaintext references.
//!
//! Two layers: a deterministic fixed-point mirror of every secure kernel
//! (same algorithm, floor truncation, no communication) used as the arbiter
//! in the secure-equivalence tests, and float references for measuring the
//! quality of the approximations themselves. Because secure truncation errs
//! by at most +1 ulp per application, a secure result may sit above its
//! mirror by roughly the number of probabilistic truncations on the path.

use crate::fxp::{encode_scalar, sign_extend, FloatTensor, FxpType, RingTensor};
use crate::nonlinear::consts;
use crate::typecast::check_downcast;

// ---------------------------------------------------------------------------
// fixed-point mirror
// ---------------------------------------------------------------------------

/// Floor-truncate after an element-wise product.
pub fn mul_trunc_plain(a: &RingTensor, b: &RingTensor, t: u32) -> RingTensor {
    a.mul(b).shr_arith(t)
}

/// Floor-truncate after a matrix product.
pub fn matmul_trunc_plain(a: &RingTensor, b: &RingTensor, t: u32) -> RingTensor {
    a.matmul(b).shr_arith(t)
}

/// Exact value-preserving widening: the plaintext equivalent of the
/// interactive upcast.
pub fn upcast_plain(x: &RingTensor, from: FxpType, to: FxpType) -> RingTensor {
    assert!(from.bits < to.bits && from.frac < to.frac);
    let t = to.frac - from.frac;
    let words: Vec<u64> = x
        .words()
        .iter()
        .map(|&w| (sign_extend(w, from.bits) as u64) << t)
        .collect();
    RingTensor::new(x.shape().to_vec(), words, to.bits)
}

/// Deterministic narrowing: arithmetic shift then ring reduction.
pub fn downcast_plain(x: &RingTensor, from: FxpType, to: FxpType) -> RingTensor {
    let t = check_downcast(from, to).expect("invalid downcast parameters");
    x.shr_arith(t).to_width(to.bits)
}

/// Mirror of the product-scale restore: into a narrower ring, the bulk of
/// the shift happens at the wide width, the carry compensation is added and
/// the guard bits are floored away in the narrow ring; within one ring it
/// is a single floor shift.
pub fn restore_product_scale_plain(
    prod: &RingTensor,
    from2f: FxpType,
    target: FxpType,
) -> RingTensor {
    let guard = crate::nonlinear::RESTORE_GUARD;
    if target.bits < from2f.bits {
        prod.shr_arith(from2f.frac - target.frac - guard)
            .to_width(target.bits)
            .add_word(2)
            .shr_arith(guard)
    } else {
        prod.shr_arith(from2f.frac - target.frac)
    }
}

pub fn gelu_quad_plain(x: &RingTensor, t: FxpType) -> RingTensor {
    let a = encode_scalar(consts::GELU_QUAD[0], t);
    let b = encode_scalar(consts::GELU_QUAD[1], t);
    let c = encode_scalar(consts::GELU_QUAD[2], t);
    let x2 = x.mul(x).shr_arith(t.frac);
    let s = x2.mul_word(a).add(&x.mul_word(b));
    s.shr_arith(t.frac).add_word(c)
}

pub fn gelu_poly_plain(x: &RingTensor, t: FxpType) -> RingTensor {
    let f = t.frac;
    let enc = |v: f64| encode_scalar(v, t);
    let cut_lo = sign_extend(enc(consts::GELU_CUT_LO), t.bits);
    let cut_mid = sign_extend(enc(consts::GELU_CUT_MID), t.bits);
    let cut_hi = sign_extend(enc(consts::GELU_CUT_HI), t.bits);

    let [a3, a2, a1, a0] = consts::GELU_F0.map(enc);
    let mut h = x.mul_word(a3).shr_arith(f).add_word(a2);
    h = h.mul(x).shr_arith(f).add_word(a1);
    let f0 = h.mul(x).shr_arith(f).add_word(a0);

    let x2 = x.mul(x).shr_arith(f);
    let [b6, b4, b2, b0] = consts::GELU_F1_EVEN.map(enc);
    let mut h = x2.mul_word(b6).shr_arith(f).add_word(b4);
    h = h.mul(&x2).shr_arith(f).add_word(b2);
    h = h.mul(&x2).shr_arith(f).add_word(b0);
    let f1 = h.add(&x.mul_word(enc(consts::GELU_F1_LINEAR)).shr_arith(f));

    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let v = sign_extend(x.words()[i], t.bits);
        let w = if v < cut_lo {
            0
        } else if v < cut_mid {
            f0.words()[i]
        } else if v > cut_hi {
            x.words()[i]
        } else {
            f1.words()[i]
        };
        out.push(w);
    }
    RingTensor::new(x.shape().to_vec(), out, t.bits)
}

/// Fixed-point squaring ladder without the clamp.
pub fn exp_neg_core_plain(x: &RingTensor, t: FxpType) -> RingTensor {
    let s = consts::EXP_SQUARINGS;
    let mut u = x.add_word(1u64 << (t.frac + s));
    for _ in 0..s - 1 {
        u = u.mul(&u).shr_arith(t.frac + s);
    }
    u.mul(&u).shr_arith(t.frac + 2 * s)
}

pub fn exp_neg_plain(x: &RingTensor, t: FxpType) -> RingTensor {
    let clamp = sign_extend(encode_scalar(consts::EXP_CLAMP, t), t.bits);
    let core = exp_neg_core_plain(x, t);
    let words = x
        .words()
        .iter()
        .zip(core.words())
        .map(|(&xw, &cw)| {
            if sign_extend(xw, t.bits) < clamp {
                0
            } else {
                cw
            }
        })
        .collect();
    RingTensor::new(x.shape().to_vec(), words, t.bits)
}

pub fn max_last_axis_plain(x: &RingTensor) -> RingTensor {
    let n = *x.shape().last().expect("max over scalar");
    let rows = x.len() / n;
    let bits = x.width();
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x.words()[r * n..(r + 1) * n];
        let m = row
            .iter()
            .copied()
            .max_by_key(|&w| sign_extend(w, bits))
            .unwrap();
        out.push(m);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = 1;
    RingTensor::new(shape, out, bits)
}

/// Windowed leading-one detection on a plain word, returning the weight of
/// the found position (0 when no bit is set in the window).
fn leading_scale(word: u64, lo_bit: u32, nbits: u32, weights: &[u64]) -> u64 {
    for k in (0..nbits).rev() {
        if (word >> (lo_bit + k)) & 1 == 1 {
            return weights[k as usize];
        }
    }
    0
}

pub fn recip_plain(x: &RingTensor, t: FxpType) -> RingTensor {
    let f = t.frac;
    let (lo_bit, nbits, weights) = crate::nonlinear::recip_weights(t);
    let scale_words: Vec<u64> = x
        .words()
        .iter()
        .map(|&w| leading_scale(w, lo_bit, nbits, &weights))
        .collect();
    let scale = RingTensor::new(x.shape().to_vec(), scale_words, t.bits);
    let xn = x.mul(&scale).shr_arith(f);
    let two = encode_scalar(2.0, t);
    let seed = encode_scalar(consts::RECIP_SEED, t);
    let mut y = xn.mul_word(2).neg().add_word(seed);
    for _ in 0..consts::RECIP_ITERS {
        let xy = xn.mul(&y).shr_arith(f);
        y = y.mul(&xy.neg().add_word(two)).shr_arith(f);
    }
    y.mul(&scale).shr_arith(f)
}

pub fn rsqrt_plain(x: &RingTensor, t: FxpType) -> RingTensor {
    let f = t.frac;
    let (lo_bit, nbits, norm_w, out_w) = crate::nonlinear::rsqrt_weights(t);
    let pick = |weights: &[u64]| -> RingTensor {
        let words: Vec<u64> = x
            .words()
            .iter()
            .map(|&w| leading_scale(w, lo_bit, nbits, weights))
            .collect();
        RingTensor::new(x.shape().to_vec(), words, t.bits)
    };
    let norm = pick(&norm_w);
    let out_scale = pick(&out_w);
    let xn = x.mul(&norm).shr_arith(f);
    let three = encode_scalar(3.0, t);
    let c0 = encode_scalar(consts::RSQRT_SEED_C0, t);
    let c1 = encode_scalar(consts::RSQRT_SEED_C1, t);
    let mut y = xn.mul_word(c1).shr_arith(f).neg().add_word(c0);
    for _ in 0..consts::RSQRT_ITERS {
        let y2 = y.mul(&y).shr_arith(f);
        let xy2 = xn.mul(&y2).shr_arith(f);
        y = y.mul(&xy2.neg().add_word(three)).shr_arith(f + 1);
    }
    y.mul(&out_scale).shr_arith(f)
}

pub fn softmax_plain(x: &RingTensor, lo: FxpType, hi: FxpType) -> RingTensor {
    softmax_staged_plain(x, lo, hi).1
}

/// Mirror of the staged softmax: `(quotient at hi precision, low output)`.
pub fn softmax_staged_plain(x: &RingTensor, lo: FxpType, hi: FxpType) -> (RingTensor, RingTensor) {
    let m = max_last_axis_plain(x);
    let d = x.sub(&m);
    let clamp = sign_extend(encode_scalar(consts::EXP_CLAMP, lo), lo.bits);
    let below: Vec<bool> = d
        .words()
        .iter()
        .map(|&w| sign_extend(w, lo.bits) < clamp)
        .collect();
    let d_hi = if lo == hi {
        d
    } else {
        upcast_plain(&d, lo, hi)
    };
    let core = exp_neg_core_plain(&d_hi, hi);
    let e_words: Vec<u64> = core
        .words()
        .iter()
        .zip(&below)
        .map(|(&w, &b)| if b { 0 } else { w })
        .collect();
    let e = RingTensor::new(d_hi.shape().to_vec(), e_words, hi.bits);
    let s = e.sum_last_axis(true);
    let r = recip_plain(&s, hi);
    let prod = e.mul(&r);
    let wide = FxpType {
        bits: hi.bits,
        frac: 2 * hi.frac,
    };
    let hi_stage = prod.shr_arith(hi.frac);
    (hi_stage, restore_product_scale_plain(&prod, wide, lo))
}

pub fn layernorm_plain(
    x: &RingTensor,
    g: &RingTensor,
    b: &RingTensor,
    eps: f64,
    lo: FxpType,
    hi: FxpType,
) -> RingTensor {
    let n = *x.shape().last().expect("layernorm over scalar") as f64;
    let x_hi = if lo == hi {
        x.clone()
    } else {
        upcast_plain(x, lo, hi)
    };
    let inv_n = encode_scalar(1.0 / n, hi);
    let mean = x_hi.sum_last_axis(true).mul_word(inv_n).shr_arith(hi.frac);
    let d = x_hi.sub(&mean);
    let sq_mean = d.mul(&d).sum_last_axis(true).shr_arith(hi.frac);
    let var = sq_mean.mul_word(inv_n).shr_arith(hi.frac);
    let v = rsqrt_plain(&var.add_word(encode_scalar(eps, hi)), hi);
    let dv = d.mul(&v).shr_arith(hi.frac);
    let prod = dv.mul(g).add(&b.shl(hi.frac));
    restore_product_scale_plain(
        &prod,
        FxpType {
            bits: hi.bits,
            frac: 2 * hi.frac,
        },
        lo,
    )
}

/// Worst-case deviation of a secure kernel from its floor-truncation mirror,
/// in output ulp. Each probabilistic truncation contributes at most +1 ulp;
/// Horner chains additionally amplify earlier noise by the magnitude of the
/// squared argument (bounded by the piecewise domain).
pub fn secure_slack_ulps(op: crate::graph::OpKind) -> u32 {
    use crate::graph::OpKind::*;
    match op {
        Input | Const | Add | Sub | Transpose | Reshape | Sum | Max | Upcast => 0,
        Downcast => 2,
        Matmul | Mul => 1,
        GeluQuad => 2,
        ExpNeg => 4,
        Softmax => 4,
        Recip | Div => 8,
        Layernorm => 16,
        GeluPoly => 128,
    }
}

// ---------------------------------------------------------------------------
// float references
// ---------------------------------------------------------------------------

pub fn float_gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn float_softmax(x: &FloatTensor) -> FloatTensor {
    let n = *x.shape().last().expect("softmax over scalar");
    let rows = x.len() / n;
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x.data()[r * n..(r + 1) * n];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        for (i, e) in exps.iter().enumerate() {
            out[r * n + i] = e / s;
        }
    }
    FloatTensor::new(x.shape().to_vec(), out)
}

pub fn float_layernorm(x: &FloatTensor, g: &[f64], b: &[f64], eps: f64) -> FloatTensor {
    let n = *x.shape().last().expect("layernorm over scalar");
    let rows = x.len() / n;
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x.data()[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for i in 0..n {
            out[r * n + i] = (row[i] - mean) * inv * g[i] + b[i];
        }
    }
    FloatTensor::new(x.shape().to_vec(), out)
}

// ---------------------------------------------------------------------------
// error metrics
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default)]
pub struct Metrics {
    pub max_abs: f64,
    pub mean_abs: f64,
    /// Maximum relative error, guarded against division by ~0.
    pub rel: f64,
}

pub fn metrics(a: &[f64], b: &[f64]) -> Metrics {
    assert_eq!(a.len(), b.len(), "metrics over unequal lengths");
    if a.is_empty() {
        return Metrics::default();
    }
    let mut m = Metrics::default();
    for (&x, &y) in a.iter().zip(b) {
        let d = (x - y).abs();
        m.max_abs = m.max_abs.max(d);
        m.mean_abs += d;
        let denom = y.abs().max(1e-9);
        m.rel = m.rel.max(d / denom);
    }
    m.mean_abs /= a.len() as f64;
    m
}
