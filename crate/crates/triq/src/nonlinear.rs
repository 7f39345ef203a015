//! Secure non-linear kernels on replicated shares.
//!
//! Polynomial approximations run entirely in fixed point; branchy functions
//! evaluate every branch and combine them with oblivious selects. Division
//! and inverse square root normalize their operand into a unit interval with
//! a shared one-hot of the leading-bit position, then iterate Newton steps.
//!
//! The plaintext twins of everything here live in [`crate::oracle`]; the two
//! sides share the constants below so they cannot drift apart.

use crate::error::Result;
use crate::fxp::{encode_scalar, FxpType, RingTensor};
use crate::rss::{
    self, a2b_bits, bit_inject, less_than_public, mul, mul_trunc, public_less_than, select, trunc,
    RssShare,
};
use crate::runtime::PartyCtx;
use crate::typecast::upcast;

/// Shared constants of the approximations (used verbatim by the oracle).
pub mod consts {
    /// Quadratic activation: `0.125 x^2 + 0.25 x + 0.5`.
    pub const GELU_QUAD: [f64; 3] = [0.125, 0.25, 0.5];

    /// Piecewise activation cut points: 0 below `CUT_LO`, cubic up to
    /// `CUT_MID`, even polynomial plus `0.5 x` up to `CUT_HI`, identity above.
    pub const GELU_CUT_LO: f64 = -4.0;
    pub const GELU_CUT_MID: f64 = -1.95;
    pub const GELU_CUT_HI: f64 = 3.0;
    /// Cubic piece, degree 3 down to 0.
    pub const GELU_F0: [f64; 4] = [
        -0.011034134030615728,
        -0.11807612951181953,
        -0.42226581151983866,
        -0.5054031199708174,
    ];
    /// Even piece: coefficients of x^6, x^4, x^2, 1; the linear term is 0.5x.
    pub const GELU_F1_EVEN: [f64; 4] = [
        0.0018067462606141187,
        -0.037688200365904236,
        0.3603292692789629,
        0.008526321541038084,
    ];
    pub const GELU_F1_LINEAR: f64 = 0.5;

    /// Exponential for non-positive arguments: 0 below `EXP_CLAMP`, else
    /// `(1 + x/2^EXP_SQUARINGS)^(2^EXP_SQUARINGS)`.
    pub const EXP_CLAMP: f64 = -14.0;
    pub const EXP_SQUARINGS: u32 = 5;

    /// Reciprocal: normalize into [0.5, 1), seed `2.9142 - 2m`, Newton steps.
    pub const RECIP_SEED: f64 = 2.9142;
    pub const RECIP_ITERS: u32 = 4;
    /// Leading-bit search window as value exponents (covers [2^-10, 2^14]).
    pub const RECIP_EXP_LO: i32 = -10;
    pub const RECIP_EXP_HI: i32 = 14;

    /// Inverse square root: normalize into [1, 2), linear seed, Newton steps
    /// `y <- y (3 - x y^2) / 2`.
    pub const RSQRT_SEED_C0: f64 = 1.2929;
    pub const RSQRT_SEED_C1: f64 = 0.2929;
    pub const RSQRT_ITERS: u32 = 4;
    /// Window reaches low enough for a layer-norm variance floored at eps.
    pub const RSQRT_EXP_LO: i32 = -17;
    pub const RSQRT_EXP_HI: i32 = 14;

    pub const LAYERNORM_EPS: f64 = 1e-5;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

/// `x (0.125 x + 0.25) + 0.5` in the fixed-point type of `x`: one public
/// rescale and one fused multiply-truncate.
pub fn gelu_quad(ctx: &mut PartyCtx, x: &RssShare) -> Result<RssShare> {
    let t = x.ftype;
    let a = encode_scalar(consts::GELU_QUAD[0], t);
    let b = encode_scalar(consts::GELU_QUAD[1], t);
    let c = encode_scalar(consts::GELU_QUAD[2], t);
    // square first: the error of its truncation enters scaled by a < 1,
    // so the result stays within two ulp of the floor oracle
    let x2 = mul_trunc(ctx, x, x, t.frac)?;
    let s = x2.mul_word(a).add(&x.mul_word(b))?;
    Ok(trunc(ctx, &s, t.frac)?.add_word(c))
}

/// Four-piece activation: 0, a cubic, an even degree-6 polynomial plus
/// `0.5 x`, and the identity, stitched with three comparisons and exact
/// oblivious selects.
pub fn gelu_poly(ctx: &mut PartyCtx, x: &RssShare) -> Result<RssShare> {
    let t = x.ftype;
    let f = t.frac;
    let enc = |v: f64| encode_scalar(v, t);

    let c_lo = less_than_public(
        ctx,
        x,
        &RingTensor::filled(x.shape().to_vec(), enc(consts::GELU_CUT_LO), t.bits),
    )?;
    let c_mid = less_than_public(
        ctx,
        x,
        &RingTensor::filled(x.shape().to_vec(), enc(consts::GELU_CUT_MID), t.bits),
    )?;
    let c_hi = public_less_than(
        ctx,
        &RingTensor::filled(x.shape().to_vec(), enc(consts::GELU_CUT_HI), t.bits),
        x,
    )?;

    // cubic piece by Horner: ((a3 x + a2) x + a1) x + a0
    let [a3, a2, a1, a0] = consts::GELU_F0.map(enc);
    let mut h = trunc(ctx, &x.mul_word(a3), f)?.add_word(a2);
    h = mul_trunc(ctx, &h, x, f)?.add_word(a1);
    let f0 = mul_trunc(ctx, &h, x, f)?.add_word(a0);

    // even piece in x^2 plus the linear term
    let x2 = mul_trunc(ctx, x, x, f)?;
    let [b6, b4, b2, b0] = consts::GELU_F1_EVEN.map(enc);
    let mut h = trunc(ctx, &x2.mul_word(b6), f)?.add_word(b4);
    h = mul_trunc(ctx, &h, &x2, f)?.add_word(b2);
    h = mul_trunc(ctx, &h, &x2, f)?.add_word(b0);
    let half_x = trunc(ctx, &x.mul_word(enc(consts::GELU_F1_LINEAR)), f)?;
    let f1 = h.add(&half_x)?;

    let upper = select(ctx, &c_hi, x, &f1)?;
    let lower = select(ctx, &c_mid, &f0, &upper)?;
    let zero = RssShare::zeros(ctx.id(), x.shape(), t);
    select(ctx, &c_lo, &zero, &lower)
}

/// `e^x` for `x <= 0`: exact 0 below the clamp, else the repeated-squaring
/// approximation evaluated at `frac + EXP_SQUARINGS` fraction bits so the
/// initial division by `2^EXP_SQUARINGS` is free.
pub fn exp_neg(ctx: &mut PartyCtx, x: &RssShare) -> Result<RssShare> {
    let t = x.ftype;
    let clamp = RingTensor::filled(
        x.shape().to_vec(),
        encode_scalar(consts::EXP_CLAMP, t),
        t.bits,
    );
    let below = less_than_public(ctx, x, &clamp)?;
    let core = exp_neg_core(ctx, x)?;
    let zero = RssShare::zeros(ctx.id(), x.shape(), t);
    select(ctx, &below, &zero, &core)
}

/// The squaring ladder of [`exp_neg`] without the clamp; the caller supplies
/// (or fuses) the below-clamp select.
pub fn exp_neg_core(ctx: &mut PartyCtx, x: &RssShare) -> Result<RssShare> {
    let t = x.ftype;
    let s = consts::EXP_SQUARINGS;
    // x reinterpreted at frac+s bits is x / 2^s; add 1 at that scale
    let one_hi = 1u64 << (t.frac + s);
    let mut u = x.add_word(one_hi);
    for _ in 0..s - 1 {
        u = mul_trunc(ctx, &u, &u, t.frac + s)?;
    }
    // final squaring folds the shift back down to frac
    mul_trunc(ctx, &u, &u, t.frac + 2 * s)
}

/// Row-wise maximum over the last axis (keepdims): a log-depth tournament of
/// comparisons and selects.
pub fn max_last_axis(ctx: &mut PartyCtx, x: &RssShare) -> Result<RssShare> {
    let n = *x.shape().last().expect("max over scalar");
    assert!(n >= 1, "max of an empty axis");
    let mut cur = x.clone();
    let mut width = n;
    while width > 1 {
        let half = width / 2;
        let a = cur.slice_last_axis(0, half);
        let b = cur.slice_last_axis(half, 2 * half);
        let a_less = rss::less_than(ctx, &a, &b)?;
        let winners = select(ctx, &a_less, &b, &a)?;
        cur = if width % 2 == 1 {
            let carry = cur.slice_last_axis(2 * half, width);
            RssShare::concat_last_axis(&[&winners, &carry])
        } else {
            winners
        };
        width = half + width % 2;
    }
    Ok(cur)
}

// ---------------------------------------------------------------------------
// normalization-based reciprocal and inverse square root
// ---------------------------------------------------------------------------

/// Shared one-hot of the leading-bit position of `x` within a window of
/// value exponents, injected into the arithmetic ring, together with the
/// window's low ring-bit index and width.
fn leading_one_hot(
    ctx: &mut PartyCtx,
    x: &RssShare,
    exp_lo: i32,
    exp_hi: i32,
) -> Result<(RssShare, u32, u32)> {
    let t = x.ftype;
    assert!(
        t.frac as i32 + exp_lo >= 0,
        "normalization window bottoms out below bit 0: {t} cannot represent 2^{exp_lo}"
    );
    let lo_bit = (t.frac as i32 + exp_lo) as u32;
    let hi_bit = (t.frac as i32 + exp_hi) as u32;
    assert!(hi_bit < t.bits - 1, "window reaches the sign bit");
    let nbits = hi_bit - lo_bit + 1;

    let bits = a2b_bits(ctx, x)?;
    let window_mask = (((1u128 << nbits) - 1) << lo_bit) as u64;
    let mut or_acc = bits.mask_word(window_mask);
    // suffix-OR toward the low end: lane j collects every bit >= j
    let mut d = 1u32;
    while d < nbits {
        let shifted = or_acc.shr(d).mask_word(window_mask);
        or_acc = rss::or(ctx, &or_acc, &shifted)?;
        d *= 2;
    }
    // isolate the top set bit: or_j ^ or_{j+1} (monotone mask)
    let one_hot = or_acc.xor(&or_acc.shr(1).mask_word(window_mask));
    let lanes = one_hot.expand_bits(lo_bit, nbits);
    let injected = bit_inject(ctx, &lanes, t.bits)?;
    Ok((injected, lo_bit, nbits))
}

/// Weighted sum of the one-hot lanes with public per-position words:
/// turns `[..., nbits]` into `[..., 1]` shared constants.
fn one_hot_dot(one_hot: &RssShare, weights: &[u64], t: FxpType) -> RssShare {
    let w = RingTensor::new(vec![weights.len()], weights.to_vec(), one_hot.width());
    // drop the lane axis so the scale matches the operand shape exactly
    one_hot.mul_public(&w).sum_last_axis(false).retag(t)
}

/// Per-window-position scale words of the reciprocal (used by the oracle too):
/// a leading bit at ring bit `lo_bit + k` maps to the word of `2^(-e-1)`.
pub(crate) fn recip_weights(t: FxpType) -> (u32, u32, Vec<u64>) {
    let lo_bit = (t.frac as i32 + consts::RECIP_EXP_LO) as u32;
    let hi_bit = (t.frac as i32 + consts::RECIP_EXP_HI) as u32;
    let nbits = hi_bit - lo_bit + 1;
    let words = (0..nbits)
        .map(|k| {
            let j = (lo_bit + k) as i32;
            1u64 << (2 * t.frac as i32 - j - 1)
        })
        .collect();
    (lo_bit, nbits, words)
}

/// Normalization and output scale words of the inverse square root.
pub(crate) fn rsqrt_weights(t: FxpType) -> (u32, u32, Vec<u64>, Vec<u64>) {
    let f = t.frac as i32;
    let lo_bit = (f + consts::RSQRT_EXP_LO) as u32;
    let hi_bit = (f + consts::RSQRT_EXP_HI) as u32;
    let nbits = hi_bit - lo_bit + 1;
    let norm = (0..nbits)
        .map(|k| {
            let e = (lo_bit + k) as i32 - f;
            1u64 << (f - e)
        })
        .collect();
    let out = (0..nbits)
        .map(|k| {
            let e = (lo_bit + k) as i32 - f;
            let half = if e.rem_euclid(2) == 0 {
                e / 2
            } else {
                (e + 1) / 2
            };
            let base = ((f - half) as f64).exp2();
            let v = if e.rem_euclid(2) == 0 {
                base
            } else {
                base * std::f64::consts::SQRT_2
            };
            v.round() as u64
        })
        .collect();
    (lo_bit, nbits, norm, out)
}

/// `1 / x` for `x > 0` in a window of roughly `[2^-10, 2^14]`: normalize to
/// `[0.5, 1)` by the shared power of two, affine seed, `RECIP_ITERS` Newton
/// steps `y <- y (2 - x y)`, then rescale by the same power of two.
///
/// The result shares the shape of `x`; relative accuracy is `2^-10` where
/// the reciprocal is representable and ulp-limited beyond that.
pub fn recip(ctx: &mut PartyCtx, x: &RssShare) -> Result<RssShare> {
    let t = x.ftype;
    let f = t.frac;
    let (one_hot, _, _) = leading_one_hot(ctx, x, consts::RECIP_EXP_LO, consts::RECIP_EXP_HI)?;

    // leading bit at ring bit j means x ~ 2^(j-f); scale by 2^(-(j-f)-1)
    let (_, _, scale_words) = recip_weights(t);
    let scale = one_hot_dot(&one_hot, &scale_words, t);

    let xn = mul_trunc(ctx, x, &scale, f)?; // in [0.5, 1)
    let two = encode_scalar(2.0, t);
    let seed = encode_scalar(consts::RECIP_SEED, t);
    let mut y = xn.mul_word(2).neg().add_word(seed);
    for _ in 0..consts::RECIP_ITERS {
        let xy = mul_trunc(ctx, &xn, &y, f)?;
        let corr = xy.neg().add_word(two);
        y = mul_trunc(ctx, &y, &corr, f)?;
    }
    mul_trunc(ctx, &y, &scale, f)
}

/// `1 / sqrt(x)` for `x > 0` down to the layer-norm epsilon: normalize to
/// `[1, 2)`, linear seed, `RSQRT_ITERS` Newton steps `y <- y (3 - x y^2)/2`,
/// rescale by the shared `2^(-e/2)` (with a `sqrt 2` factor on odd
/// exponents).
pub fn rsqrt(ctx: &mut PartyCtx, x: &RssShare) -> Result<RssShare> {
    let t = x.ftype;
    let f = t.frac;
    let (one_hot, _, _) = leading_one_hot(ctx, x, consts::RSQRT_EXP_LO, consts::RSQRT_EXP_HI)?;

    let (_, _, norm_words, out_words) = rsqrt_weights(t);
    let norm = one_hot_dot(&one_hot, &norm_words, t);
    let out_scale = one_hot_dot(&one_hot, &out_words, t);

    let xn = mul_trunc(ctx, x, &norm, f)?; // in [1, 2)
    let three = encode_scalar(3.0, t);
    let c0 = encode_scalar(consts::RSQRT_SEED_C0, t);
    let c1 = encode_scalar(consts::RSQRT_SEED_C1, t);
    let mut y = trunc(ctx, &xn.mul_word(c1), f)?.neg().add_word(c0);
    for _ in 0..consts::RSQRT_ITERS {
        let y2 = mul_trunc(ctx, &y, &y, f)?;
        let xy2 = mul_trunc(ctx, &xn, &y2, f)?;
        let corr = xy2.neg().add_word(three);
        // fold the /2 into the rescale shift
        y = mul_trunc(ctx, &y, &corr, f + 1)?;
    }
    mul_trunc(ctx, &y, &out_scale, f)
}

// ---------------------------------------------------------------------------
// softmax and layernorm
// ---------------------------------------------------------------------------

/// Guard bits kept between the free local shift into the narrow ring and
/// the final truncation there.
pub(crate) const RESTORE_GUARD: u32 = 4;

/// Bring a value carrying scale `2^(2 f_in)` to `target`.
///
/// Same ring: one interactive truncation (error in {0, +1} ulp, so
/// non-negative values stay non-negative). Narrower ring: most of the shift
/// is free — each share is shifted locally while changing rings, leaving
/// `RESTORE_GUARD` fraction bits; the share carries are compensated and the
/// remaining shift runs as a short truncation in the cheap narrow ring.
fn restore_product_scale(ctx: &mut PartyCtx, prod: &RssShare, target: FxpType) -> Result<RssShare> {
    let wide = FxpType {
        bits: prod.ftype.bits,
        frac: 2 * prod.ftype.frac,
    };
    if target.bits < wide.bits {
        let mid = FxpType {
            bits: target.bits,
            frac: target.frac + RESTORE_GUARD,
        };
        let narrowed = crate::typecast::downcast(&prod.retag(wide), mid)?;
        // the local shift drops up to two share carries; push the value back
        // up so it cannot dip below an exact zero
        let comp = narrowed.add_word(2);
        Ok(trunc(ctx, &comp, RESTORE_GUARD)?.retag(target))
    } else {
        assert_eq!(target.bits, wide.bits, "cannot restore into a larger ring");
        Ok(trunc(ctx, prod, wide.frac - target.frac)?.retag(target))
    }
}

/// Numerically stable softmax over the last axis. The maximum and its
/// subtraction run at the input precision; the exponential, sum and
/// reciprocal run at `hi`; the result comes back at the input type.
pub fn softmax(ctx: &mut PartyCtx, x: &RssShare, hi: FxpType) -> Result<RssShare> {
    Ok(softmax_staged(ctx, x, hi, false)?.1)
}

/// [`softmax`] that can also emit the quotient at precision `hi` before the
/// final cast. The normalization guarantee (rows summing to one) is a
/// property of that stage; the low-precision output adds an unavoidable
/// per-entry quantization residue on top.
pub fn softmax_staged(
    ctx: &mut PartyCtx,
    x: &RssShare,
    hi: FxpType,
    want_hi_stage: bool,
) -> Result<(Option<RssShare>, RssShare)> {
    let lo = x.ftype;
    let m = max_last_axis(ctx, x)?;
    let d = x.sub(&m)?;

    // the clamp predicate is identical at either precision because the cast
    // preserves values exactly; evaluate it on the cheap ring
    let clamp = RingTensor::filled(
        d.shape().to_vec(),
        encode_scalar(consts::EXP_CLAMP, lo),
        lo.bits,
    );
    let below = less_than_public(ctx, &d, &clamp)?;

    let d_hi = if lo == hi { d } else { upcast(ctx, &d, hi)? };
    let e_raw = exp_neg_core(ctx, &d_hi)?;
    let zero = RssShare::zeros(ctx.id(), d_hi.shape(), hi);
    let e = select(ctx, &below, &zero, &e_raw)?;

    let s = e.sum_last_axis(true);
    let r = recip(ctx, &s)?;
    let prod = mul(ctx, &e, &r)?;
    let hi_stage = if want_hi_stage {
        Some(trunc(ctx, &prod, hi.frac)?)
    } else {
        None
    };
    Ok((hi_stage, restore_product_scale(ctx, &prod, lo)?))
}

/// Layer normalization over the last axis with affine parameters `g` and
/// `b` shared at precision `hi`. Statistics run at `hi`; the output comes
/// back at the input type.
pub fn layernorm(
    ctx: &mut PartyCtx,
    x: &RssShare,
    g: &RssShare,
    b: &RssShare,
    eps: f64,
    hi: FxpType,
) -> Result<RssShare> {
    let lo = x.ftype;
    let n = *x.shape().last().expect("layernorm over scalar") as f64;
    let x_hi = if lo == hi {
        x.clone()
    } else {
        upcast(ctx, x, hi)?
    };
    let inv_n = encode_scalar(1.0 / n, hi);

    let mean = trunc(ctx, &x_hi.sum_last_axis(true).mul_word(inv_n), hi.frac)?;
    let d = x_hi.sub(&mean)?;

    let sq_sum = mul(ctx, &d, &d)?.sum_last_axis(true);
    let sq_mean = trunc(ctx, &sq_sum, hi.frac)?;
    let var = trunc(ctx, &sq_mean.mul_word(inv_n), hi.frac)?;
    let v = rsqrt(ctx, &var.add_word(encode_scalar(eps, hi)))?;

    let dv = mul_trunc(ctx, &d, &v, hi.frac)?;
    let prod = mul(ctx, &dv, g)?.add(&b.shl(hi.frac))?;
    restore_product_scale(ctx, &prod, lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fxp::{decode, encode, FloatTensor, HIGH, LOW};
    use crate::oracle;
    use crate::rss::{reveal, share};
    use crate::runtime::run_protocol;
    use crate::transport::CommStats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    pub(crate) fn run_unary<F>(
        seed: u64,
        x: &RingTensor,
        t: FxpType,
        f: F,
    ) -> (RingTensor, CommStats)
    where
        F: Fn(&mut PartyCtx, RssShare) -> Result<RssShare> + Sync,
    {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x77);
        let shares = share(x, t, &mut rng).unwrap();
        let ins = std::sync::Mutex::new(shares.to_vec());
        let (outs, stats) = run_protocol(seed, |ctx| {
            let mine = ins.lock().unwrap()[ctx.id().index()].clone();
            f(ctx, mine)
        })
        .unwrap();
        (reveal(&outs).unwrap(), stats)
    }

    #[test]
    fn gelu_quad_known_points() {
        let t = LOW;
        let x = encode(&FloatTensor::new(vec![2], vec![0.0, 2.0]), t);
        let (got, _) = run_unary(1, &x, t, |ctx, s| gelu_quad(ctx, &s));
        let v = decode(&got, t).unwrap();
        assert_eq!(
            v.data()[0],
            0.5,
            "zero input must hit the constant term exactly"
        );
        assert_eq!(v.data()[1], 1.5);
    }

    #[test]
    fn gelu_quad_tracks_oracle() {
        let t = LOW;
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let vals: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let x = encode(&FloatTensor::new(vec![vals.len()], vals), t);
        let (got, _) = run_unary(3, &x, t, |ctx, s| gelu_quad(ctx, &s));
        let want = oracle::gelu_quad_plain(&x, t);
        for (g, w) in got.signed().iter().zip(want.signed()) {
            assert!((g - w).abs() <= 2, "{g} vs {w}");
        }
    }

    #[test]
    fn gelu_poly_branch_points() {
        let t = HIGH;
        let x = encode(&FloatTensor::new(vec![3], vec![-5.0, 4.0, 0.0]), t);
        let (got, _) = run_unary(4, &x, t, |ctx, s| gelu_poly(ctx, &s));
        let v = decode(&got, t).unwrap();
        assert_eq!(v.data()[0], 0.0, "left tail is exactly zero");
        assert_eq!(v.data()[1], 4.0, "right tail is the identity");
        let c = consts::GELU_F1_EVEN[3];
        assert!(
            (v.data()[2] - c).abs() <= 4.0 * t.ulp(),
            "got {}",
            v.data()[2]
        );
    }

    #[test]
    fn gelu_poly_tracks_oracle_and_float() {
        let t = HIGH;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..2000).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let x = encode(&FloatTensor::new(vec![vals.len()], vals.clone()), t);
        let (got, _) = run_unary(6, &x, t, |ctx, s| gelu_poly(ctx, &s));
        let want = oracle::gelu_poly_plain(&x, t);
        // one-ulp truncation noise is amplified by |x^2| <= 9 twice through
        // the Horner chain of the middle piece
        let ulps = 128;
        for (g, w) in got.signed().iter().zip(want.signed()) {
            assert!((g - w).abs() <= ulps, "{g} vs {w}");
        }
        let dec = decode(&got, t).unwrap();
        for (v, d) in vals.iter().zip(dec.data()) {
            let f = oracle::float_gelu(*v);
            assert!((f - d).abs() <= 0.03, "gelu({v}) = {d}, float {f}");
        }
    }

    #[test]
    fn exp_neg_endpoints() {
        let t = HIGH;
        let x = encode(&FloatTensor::new(vec![3], vec![0.0, -20.0, -1.0]), t);
        let (got, _) = run_unary(7, &x, t, |ctx, s| exp_neg(ctx, &s));
        let v = decode(&got, t).unwrap();
        assert!(
            (v.data()[0] - 1.0).abs() <= 2.0 * t.ulp(),
            "exp(0) = {}",
            v.data()[0]
        );
        assert_eq!(v.data()[1], 0.0, "clamped region is exactly zero");
        let formula = (1.0 + (-1.0) / 32.0f64).powi(32);
        assert!((v.data()[2] - formula).abs() <= 4.0 * t.ulp());
        assert!((v.data()[2] - 0.3610).abs() <= 0.002);
    }

    #[test]
    fn exp_neg_dense_grid_vs_exact_formula() {
        let t = HIGH;
        let n = 1401;
        let vals: Vec<f64> = (0..n).map(|i| -14.0 + i as f64 * 0.01).collect();
        let x = encode(&FloatTensor::new(vec![n], vals.clone()), t);
        let (got, _) = run_unary(8, &x, t, |ctx, s| exp_neg(ctx, &s));
        let dec = decode(&got, t).unwrap();
        for (i, v) in vals.iter().enumerate() {
            // the encoded argument is what the ladder actually sees
            let xv = (v * t.scale()).round() / t.scale();
            let formula = (1.0 + xv / 32.0).powi(32);
            let d = (dec.data()[i] - formula).abs();
            assert!(
                d <= 4.0 * t.ulp(),
                "x={v}: secure {} vs formula {formula}",
                dec.data()[i]
            );
            assert!(
                (formula - xv.exp()).abs() <= 0.01,
                "formula far from e^x at {v}"
            );
        }
    }

    #[test]
    fn max_matches_plain() {
        let t = LOW;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let rows = 100;
        let n = 10;
        let vals: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let x = encode(&FloatTensor::new(vec![rows, n], vals.clone()), t);
        let (got, _) = run_unary(10, &x, t, |ctx, s| max_last_axis(ctx, &s));
        assert_eq!(got.shape(), &[rows, 1]);
        let want = oracle::max_last_axis_plain(&x);
        assert_eq!(got, want, "tournament max must equal plain max exactly");
    }

    #[test]
    fn max_of_equal_entries() {
        let t = LOW;
        let x = encode(&FloatTensor::new(vec![1, 5], vec![3.25; 5]), t);
        let (got, _) = run_unary(11, &x, t, |ctx, s| max_last_axis(ctx, &s));
        assert_eq!(decode(&got, t).unwrap().data()[0], 3.25);
    }

    #[test]
    fn recip_known_points() {
        let t = HIGH;
        let x = encode(&FloatTensor::new(vec![3], vec![1.0, 4.0, 0.125]), t);
        let (got, _) = run_unary(12, &x, t, |ctx, s| recip(ctx, &s));
        let v = decode(&got, t).unwrap();
        assert!((v.data()[0] - 1.0).abs() <= 2f64.powi(-10));
        assert!((v.data()[1] - 0.25).abs() / 0.25 <= 2.5e-4);
        assert!((v.data()[2] - 8.0).abs() / 8.0 <= 2f64.powi(-10));
    }

    #[test]
    fn recip_relative_error_sweep() {
        let t = HIGH;
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        // representability limits relative accuracy above ~2^8
        let vals: Vec<f64> = (0..2000)
            .map(|_| {
                let e: f64 = rng.gen_range(-10.0..8.0);
                e.exp2()
            })
            .collect();
        let x = encode(&FloatTensor::new(vec![vals.len()], vals.clone()), t);
        let (got, _) = run_unary(14, &x, t, |ctx, s| recip(ctx, &s));
        let dec = decode(&got, t).unwrap();
        for (v, d) in vals.iter().zip(dec.data()) {
            let xv = (v * t.scale()).round() / t.scale();
            let rel = (d - 1.0 / xv).abs() * xv;
            assert!(rel <= 2f64.powi(-10), "1/{v}: got {d}, rel {rel}");
        }
    }

    #[test]
    fn rsqrt_known_points() {
        let t = HIGH;
        let x = encode(&FloatTensor::new(vec![3], vec![1.0, 4.0, 0.25]), t);
        let (got, _) = run_unary(15, &x, t, |ctx, s| rsqrt(ctx, &s));
        let v = decode(&got, t).unwrap();
        assert!(
            (v.data()[0] - 1.0).abs() <= 2f64.powi(-10),
            "rsqrt(1) = {}",
            v.data()[0]
        );
        assert!((v.data()[1] - 0.5).abs() * 2.0 <= 2f64.powi(-8));
        assert!((v.data()[2] - 2.0).abs() / 2.0 <= 2f64.powi(-8));
    }

    #[test]
    fn rsqrt_relative_error_sweep() {
        let t = HIGH;
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let vals: Vec<f64> = (0..2000)
            .map(|_| {
                let e: f64 = rng.gen_range(-10.0..14.0);
                e.exp2()
            })
            .collect();
        let x = encode(&FloatTensor::new(vec![vals.len()], vals.clone()), t);
        let (got, _) = run_unary(17, &x, t, |ctx, s| rsqrt(ctx, &s));
        let dec = decode(&got, t).unwrap();
        for (v, d) in vals.iter().zip(dec.data()) {
            let xv = (v * t.scale()).round() / t.scale();
            let want = 1.0 / xv.sqrt();
            let rel = (d - want).abs() / want;
            assert!(
                rel <= 2f64.powi(-8),
                "rsqrt({v}): got {d}, want {want}, rel {rel}"
            );
        }
    }

    #[test]
    fn softmax_uniform_rows() {
        let t = LOW;
        let n = 8;
        let x = encode(&FloatTensor::new(vec![1, n], vec![1.25; n]), t);
        let (got, _) = run_unary(18, &x, t, |ctx, s| softmax(ctx, &s, HIGH));
        let v = decode(&got, t).unwrap();
        for e in v.data() {
            assert!((e - 1.0 / n as f64).abs() <= 2.0 * t.ulp(), "entry {e}");
        }
    }

    #[test]
    fn softmax_dominant_entry() {
        let t = LOW;
        let mut vals = vec![0.0; 10];
        vals[3] = 20.0;
        let x = encode(&FloatTensor::new(vec![1, 10], vals), t);
        let (got, _) = run_unary(19, &x, t, |ctx, s| softmax(ctx, &s, HIGH));
        let v = decode(&got, t).unwrap();
        assert!(v.data()[3] > 0.98, "dominant entry got {}", v.data()[3]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_track_float() {
        let t = LOW;
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let (rows, n) = (100, 10);
        // the float-tracking bound needs inputs whose rows stay within a
        // couple of units of their max; wider spreads make the plain
        // exponential approximation itself drift past it
        let vals: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-0.75..0.75)).collect();
        let x = encode(&FloatTensor::new(vec![rows, n], vals.clone()), t);
        let mut rng2 = ChaCha12Rng::seed_from_u64(21 ^ 0x77);
        let shares = share(&x, t, &mut rng2).unwrap();
        let ins = std::sync::Mutex::new(shares.to_vec());
        let (outs, _) = run_protocol(21, |ctx| {
            let mine = ins.lock().unwrap()[ctx.id().index()].clone();
            let (hi, lo) = softmax_staged(ctx, &mine, HIGH, true)?;
            Ok((hi.unwrap(), lo))
        })
        .unwrap();
        let [o0, o1, o2] = outs;
        let hi_rev = reveal(&[o0.0, o1.0, o2.0]).unwrap();
        let lo_rev = reveal(&[o0.1, o1.1, o2.1]).unwrap();
        let vh = decode(&hi_rev, HIGH).unwrap();
        let v = decode(&lo_rev, t).unwrap();
        let fref = oracle::float_softmax(&FloatTensor::new(vec![rows, n], vals));
        // normalization holds at the high-precision stage; the low output
        // adds one independent quantization step per entry on top
        let tol_sum = 2f64.powi(-7);
        for r in 0..rows {
            let row_hi = &vh.data()[r * n..(r + 1) * n];
            let s: f64 = row_hi.iter().sum();
            assert!((s - 1.0).abs() <= tol_sum, "row {r} sums to {s}");
            let row = &v.data()[r * n..(r + 1) * n];
            for e in row {
                assert!(*e >= 0.0, "negative entry {e} in row {r}");
            }
            for (a, b) in row.iter().zip(&fref.data()[r * n..(r + 1) * n]) {
                assert!((a - b).abs() <= 0.01, "row {r}: {a} vs float {b}");
            }
        }
    }

    #[test]
    fn layernorm_constant_row_returns_bias() {
        let lo = LOW;
        let n = 8;
        let x = encode(&FloatTensor::new(vec![1, n], vec![0.75; n]), lo);
        let g = encode(&FloatTensor::new(vec![n], vec![1.0; n]), HIGH);
        let b = encode(&FloatTensor::new(vec![n], vec![0.5; n]), HIGH);
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let xs = share(&x, lo, &mut rng).unwrap();
        let gs = share(&g, HIGH, &mut rng).unwrap();
        let bs = share(&b, HIGH, &mut rng).unwrap();
        let ins = std::sync::Mutex::new((xs.to_vec(), gs.to_vec(), bs.to_vec()));
        let (outs, _) = run_protocol(23, |ctx| {
            let (x, g, b) = {
                let q = ins.lock().unwrap();
                let i = ctx.id().index();
                (q.0[i].clone(), q.1[i].clone(), q.2[i].clone())
            };
            layernorm(ctx, &x, &g, &b, consts::LAYERNORM_EPS, HIGH)
        })
        .unwrap();
        let v = decode(&reveal(&outs).unwrap(), lo).unwrap();
        for e in v.data() {
            assert!((e - 0.5).abs() <= 4.0 * lo.ulp(), "constant row: got {e}");
        }
    }

    #[test]
    fn layernorm_tracks_float() {
        let lo = LOW;
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let (rows, n) = (16, 16);
        let vals: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let gv: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let bv: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x = encode(&FloatTensor::new(vec![rows, n], vals.clone()), lo);
        let g = encode(&FloatTensor::new(vec![n], gv.clone()), HIGH);
        let b = encode(&FloatTensor::new(vec![n], bv.clone()), HIGH);
        let mut r2 = ChaCha12Rng::seed_from_u64(25);
        let xs = share(&x, lo, &mut r2).unwrap();
        let gs = share(&g, HIGH, &mut r2).unwrap();
        let bs = share(&b, HIGH, &mut r2).unwrap();
        let ins = std::sync::Mutex::new((xs.to_vec(), gs.to_vec(), bs.to_vec()));
        let (outs, _) = run_protocol(26, |ctx| {
            let (x, g, b) = {
                let q = ins.lock().unwrap();
                let i = ctx.id().index();
                (q.0[i].clone(), q.1[i].clone(), q.2[i].clone())
            };
            layernorm(ctx, &x, &g, &b, consts::LAYERNORM_EPS, HIGH)
        })
        .unwrap();
        let v = decode(&reveal(&outs).unwrap(), lo).unwrap();
        let fref = oracle::float_layernorm(
            &FloatTensor::new(vec![rows, n], vals),
            &gv,
            &bv,
            consts::LAYERNORM_EPS,
        );
        for (a, b) in v.data().iter().zip(fref.data()) {
            assert!((a - b).abs() <= 0.02, "{a} vs {b}");
        }
    }

    #[test]
    fn gelu_poly_stitch_points_continuous() {
        // continuity of the piecewise definition itself, at float precision
        let f0 = |x: f64| {
            consts::GELU_F0[0] * x.powi(3)
                + consts::GELU_F0[1] * x * x
                + consts::GELU_F0[2] * x
                + consts::GELU_F0[3]
        };
        let f1 = |x: f64| {
            consts::GELU_F1_EVEN[0] * x.powi(6)
                + consts::GELU_F1_EVEN[1] * x.powi(4)
                + consts::GELU_F1_EVEN[2] * x * x
                + consts::GELU_F1_LINEAR * x
                + consts::GELU_F1_EVEN[3]
        };
        assert!((f0(consts::GELU_CUT_LO) - 0.0).abs() <= 0.02);
        assert!((f0(consts::GELU_CUT_MID) - f1(consts::GELU_CUT_MID)).abs() <= 0.02);
        assert!((f1(consts::GELU_CUT_HI) - consts::GELU_CUT_HI).abs() <= 0.02);
    }
}
