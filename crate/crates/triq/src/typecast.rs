//! Share conversions between fixed-point types living in different rings.
//!
//! Downcasting (smaller ring, fewer fraction bits) is purely local: each
//! share is logically right-shifted and reduced into the target ring, which
//! is exact up to two carries as long as `l - (f - f') >= l'`.
//!
//! Upcasting (larger ring, more fraction bits) is interactive. The value is
//! biased into the non-negative half-range, masked with a dealer-provided
//! random `l`-bit value, opened, and re-embedded into the wide ring, where
//! the single possible wrap of the masked sum is fixed with one product
//! against the dealer's shared mask top bit. Three rounds; exact on the
//! contract range `|x| < 2^(l-2-f)`.

use crate::error::{Error, Result};
use crate::fxp::{FxpType, RingTensor};
use crate::rss::RssShare;
use crate::runtime::PartyCtx;
use crate::transport::PartyId;

/// Validate a downcast parameter pair.
pub fn check_downcast(from: FxpType, to: FxpType) -> Result<u32> {
    if !(from.bits > to.bits && from.frac > to.frac) {
        return Err(Error::InvalidCast(format!(
            "downcast requires strictly smaller ring and precision: {from} -> {to}"
        )));
    }
    let t = from.frac - to.frac;
    if from.bits - t < to.bits {
        return Err(Error::InvalidCast(format!(
            "downcast {from} -> {to}: wrap term survives (l - (f - f') = {} < {})",
            from.bits - t,
            to.bits
        )));
    }
    Ok(t)
}

/// Validate an upcast parameter pair.
pub fn check_upcast(from: FxpType, to: FxpType) -> Result<u32> {
    if !(from.bits < to.bits && from.frac < to.frac) {
        return Err(Error::InvalidCast(format!(
            "upcast requires strictly larger ring and precision: {from} -> {to}"
        )));
    }
    Ok(to.frac - from.frac)
}

/// Local share conversion to a smaller ring with lower precision.
/// Zero bytes, zero rounds; result is within 2 ulp of the input value
/// provided the value is representable in the target type.
pub fn downcast(x: &RssShare, to: FxpType) -> Result<RssShare> {
    let t = check_downcast(x.ftype, to)?;
    let conv = |c: &RingTensor| c.shr_logical(t).to_width(to.bits);
    Ok(RssShare {
        party: x.party,
        lo: conv(&x.lo),
        hi: conv(&x.hi),
        ftype: to,
    })
}

/// Plaintext mirror of [`downcast`] on an already-revealed tensor:
/// deterministic arithmetic shift, then ring reduction.
pub fn downcast_plain(x: &RingTensor, from: FxpType, to: FxpType) -> Result<RingTensor> {
    let t = check_downcast(from, to)?;
    Ok(x.shr_arith(t).to_width(to.bits))
}

/// Interactive share conversion to a larger ring with higher precision.
/// Exact for `|x| < 2^(l-2-f)`; three rounds.
pub fn upcast(ctx: &mut PartyCtx, x: &RssShare, to: FxpType) -> Result<RssShare> {
    let tshift = check_upcast(x.ftype, to)?;
    let l = x.ftype.bits;
    let lp = to.bits;
    let lw = lp - l; // width of the wrap-correction ring
    let shape = x.shape().to_vec();
    let id = ctx.id();
    let bias = 1u64 << (l - 2);

    // epoch 1: dealer splits r (uniform l-bit) over the wide ring and its top
    // bit over the correction ring; party 0's halves come from the shared PRF
    let (r_share_wide, m_share) = match id.0 {
        0 => {
            let r0 = ctx.prf.with_prev.draw(&shape, lp);
            let m0 = ctx.prf.with_prev.draw(&shape, lw);
            (Some(r0), Some(m0))
        }
        2 => {
            let r = ctx.prf.private.draw(&shape, l);
            let r0 = ctx.prf.with_next.draw(&shape, lp);
            let m0 = ctx.prf.with_next.draw(&shape, lw);
            let r_wide = RingTensor::new(shape.clone(), r.words().to_vec(), lp);
            let r1 = r_wide.sub(&r0);
            let m = r.shr_logical(l - 1).to_width(lw);
            let m1 = m.sub(&m0);
            let mut bytes = r1.to_bytes();
            bytes.extend_from_slice(&m1.to_bytes());
            ctx.net.send(PartyId(1), &bytes)?;
            (None, None)
        }
        _ => {
            let bytes = ctx.net.recv(PartyId(2))?;
            let split = shape.iter().product::<usize>() * (lp / 8) as usize;
            let r1 = RingTensor::from_bytes(shape.clone(), &bytes[..split], lp)?;
            let m1 = RingTensor::from_bytes(shape.clone(), &bytes[split..], lw)?;
            (Some(r1), Some(m1))
        }
    };
    ctx.net.end_round();

    // epoch 2: open y = (x + bias) + r over the small ring between P0 and P1
    let y = match id.0 {
        0 => {
            let rho = r_share_wide.as_ref().unwrap().to_width(l);
            let ya = x.lo.add(&x.hi).add_word(bias).add(&rho);
            crate::rss::send_tensor(ctx, PartyId(1), &ya)?;
            let yb = crate::rss::recv_tensor(ctx, PartyId(1), &shape, l)?;
            Some(ya.add(&yb))
        }
        1 => {
            let rho = r_share_wide.as_ref().unwrap().to_width(l);
            let yb = x.hi.add(&rho);
            crate::rss::send_tensor(ctx, PartyId(0), &yb)?;
            let ya = crate::rss::recv_tensor(ctx, PartyId(0), &shape, l)?;
            Some(ya.add(&yb))
        }
        _ => None,
    };
    ctx.net.end_round();
    if id.0 == 0 {
        ctx.record_opened(y.as_ref().unwrap());
    }

    // local: embed into the wide ring and fix the single possible wrap
    let (va, vb) = match id.0 {
        0 | 1 => {
            let y = y.as_ref().unwrap();
            let not_msb = y
                .shr_logical(l - 1)
                .map(|w| 1u64.wrapping_sub(w))
                .to_width(lw);
            let w_corr = m_share.as_ref().unwrap().mul(&not_msb).to_width(lw);
            // (m * g mod 2^(l'-l)) << l, carried out in the wide ring
            let w_wide = RingTensor::new(shape.clone(), w_corr.words().to_vec(), lp).shl(l);
            let r_i = r_share_wide.as_ref().unwrap();
            if id.0 == 0 {
                let y_wide = RingTensor::new(shape.clone(), y.words().to_vec(), lp);
                let v = y_wide
                    .sub(r_i)
                    .add(&w_wide)
                    .map(|w| w.wrapping_sub(bias))
                    .shl(tshift);
                (Some(v), None)
            } else {
                let v = w_wide.sub(r_i).shl(tshift);
                (None, Some(v))
            }
        }
        _ => (None, None),
    };

    // epoch 3: back to the replicated pattern over the wide ring
    reshare_pair_public(ctx, va, vb, &shape, to)
}

/// Same exchange as the truncation resharing, kept separate so the typecast
/// module owns its own round schedule.
fn reshare_pair_public(
    ctx: &mut PartyCtx,
    va: Option<RingTensor>,
    vb: Option<RingTensor>,
    shape: &[usize],
    ftype: FxpType,
) -> Result<RssShare> {
    let id = ctx.id();
    let width = ftype.bits;
    match id.0 {
        0 => {
            let s0 = ctx.prf.with_prev.draw(shape, width);
            let ua = va.unwrap().sub(&s0);
            crate::rss::send_tensor(ctx, PartyId(1), &ua)?;
            let ub = crate::rss::recv_tensor(ctx, PartyId(1), shape, width)?;
            ctx.net.end_round();
            Ok(RssShare {
                party: id,
                lo: s0,
                hi: ua.add(&ub),
                ftype,
            })
        }
        1 => {
            let s2 = ctx.prf.with_next.draw(shape, width);
            let ub = vb.unwrap().sub(&s2);
            crate::rss::send_tensor(ctx, PartyId(0), &ub)?;
            let ua = crate::rss::recv_tensor(ctx, PartyId(0), shape, width)?;
            ctx.net.end_round();
            Ok(RssShare {
                party: id,
                lo: ua.add(&ub),
                hi: s2,
                ftype,
            })
        }
        _ => {
            let s0 = ctx.prf.with_next.draw(shape, width);
            let s2 = ctx.prf.with_prev.draw(shape, width);
            ctx.net.end_round();
            Ok(RssShare {
                party: id,
                lo: s2,
                hi: s0,
                ftype,
            })
        }
    }
}

/// Total bits moved per element by the implemented upcast schedule:
/// dealer-to-P1 `l' + (l'-l)`, the two-way open `2l`, the resharing `2l'`.
pub fn upcast_schedule_bits(from: FxpType, to: FxpType) -> u64 {
    let l = from.bits as u64;
    let lp = to.bits as u64;
    lp + (lp - l) + 2 * l + 2 * lp
}

/// The reference upcast cost stated alongside ours in reports: `3l + l'`.
pub fn upcast_reference_bits(from: FxpType, to: FxpType) -> u64 {
    3 * from.bits as u64 + to.bits as u64
}
