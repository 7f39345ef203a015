//! 2-out-of-3 replicated secret sharing over `Z_{2^l}`.
//!
//! A secret `x` is split as `x = x_0 + x_1 + x_2 mod 2^l` and party `i` holds
//! the pair `(x_i, x_{i+1})`. Linear algebra is local; multiplication reshares
//! through one round; truncation and comparisons are interactive protocols
//! built on party 2 acting as the dealer of correlated randomness.

use crate::error::{Error, Result};
use crate::fxp::{width_mask, FxpType, RingTensor};
use crate::runtime::PartyCtx;
use crate::transport::PartyId;

/// One party's slice of a replicated arithmetic sharing, tagged with the
/// fixed-point type of the carried value.
#[derive(Clone, Debug)]
pub struct RssShare {
    pub party: PartyId,
    pub lo: RingTensor,
    pub hi: RingTensor,
    pub ftype: FxpType,
}

impl RssShare {
    pub fn shape(&self) -> &[usize] {
        self.lo.shape()
    }

    pub fn width(&self) -> u32 {
        self.ftype.bits
    }

    fn check_mate(&self, other: &RssShare) -> Result<()> {
        if self.ftype != other.ftype {
            return Err(Error::InvalidType(format!(
                "operand types differ: {} vs {}",
                self.ftype, other.ftype
            )));
        }
        Ok(())
    }

    /// Local addition of replicated sharings.
    pub fn add(&self, other: &RssShare) -> Result<RssShare> {
        self.check_mate(other)?;
        Ok(RssShare {
            party: self.party,
            lo: self.lo.add(&other.lo),
            hi: self.hi.add(&other.hi),
            ftype: self.ftype,
        })
    }

    pub fn sub(&self, other: &RssShare) -> Result<RssShare> {
        self.check_mate(other)?;
        Ok(RssShare {
            party: self.party,
            lo: self.lo.sub(&other.lo),
            hi: self.hi.sub(&other.hi),
            ftype: self.ftype,
        })
    }

    pub fn neg(&self) -> RssShare {
        RssShare {
            party: self.party,
            lo: self.lo.neg(),
            hi: self.hi.neg(),
            ftype: self.ftype,
        }
    }

    /// Add a public constant: it lands on the `x_0` component only, which is
    /// party 0's `lo` and party 2's `hi`. Both components are broadcast to
    /// the joint shape so every party ends with identically shaped tensors.
    pub fn add_public(&self, c: &RingTensor) -> RssShare {
        let shape = crate::fxp::broadcast_shape(self.lo.shape(), c.shape());
        let z = RingTensor::zeros(shape, self.width());
        let mut lo = self.lo.add(&z);
        let mut hi = self.hi.add(&z);
        match self.party.0 {
            0 => lo = lo.add(c),
            2 => hi = hi.add(c),
            _ => {}
        }
        RssShare {
            party: self.party,
            lo,
            hi,
            ftype: self.ftype,
        }
    }

    pub fn add_word(&self, c: u64) -> RssShare {
        self.add_public(&RingTensor::scalar(c, self.width()))
    }

    /// `c - x` for a public constant `c`.
    pub fn rsub_public(&self, c: &RingTensor) -> RssShare {
        self.neg().add_public(c)
    }

    /// Multiply by a public integer word (no rescale).
    pub fn mul_word(&self, c: u64) -> RssShare {
        RssShare {
            party: self.party,
            lo: self.lo.mul_word(c),
            hi: self.hi.mul_word(c),
            ftype: self.ftype,
        }
    }

    /// Multiply by a public tensor of integer words (no rescale).
    pub fn mul_public(&self, c: &RingTensor) -> RssShare {
        RssShare {
            party: self.party,
            lo: self.lo.mul(c),
            hi: self.hi.mul(c),
            ftype: self.ftype,
        }
    }

    pub fn shl(&self, t: u32) -> RssShare {
        RssShare {
            party: self.party,
            lo: self.lo.shl(t),
            hi: self.hi.shl(t),
            ftype: self.ftype,
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> RssShare {
        RssShare {
            party: self.party,
            lo: self.lo.clone().reshaped(shape.clone()),
            hi: self.hi.clone().reshaped(shape),
            ftype: self.ftype,
        }
    }

    pub fn transpose(&self, perm: &[usize]) -> RssShare {
        RssShare {
            party: self.party,
            lo: self.lo.transpose(perm),
            hi: self.hi.transpose(perm),
            ftype: self.ftype,
        }
    }

    pub fn sum_last_axis(&self, keepdims: bool) -> RssShare {
        RssShare {
            party: self.party,
            lo: self.lo.sum_last_axis(keepdims),
            hi: self.hi.sum_last_axis(keepdims),
            ftype: self.ftype,
        }
    }

    /// Re-tag the fixed-point type without touching the words. Used when an
    /// operation changes the logical scale of the carried value.
    pub fn retag(&self, ftype: FxpType) -> RssShare {
        assert_eq!(ftype.bits, self.ftype.bits, "retag cannot change the ring");
        RssShare {
            party: self.party,
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            ftype,
        }
    }

    pub fn slice_last_axis(&self, start: usize, end: usize) -> RssShare {
        RssShare {
            party: self.party,
            lo: self.lo.slice_last_axis(start, end),
            hi: self.hi.slice_last_axis(start, end),
            ftype: self.ftype,
        }
    }

    pub fn concat_last_axis(parts: &[&RssShare]) -> RssShare {
        let lo: Vec<&RingTensor> = parts.iter().map(|p| &p.lo).collect();
        let hi: Vec<&RingTensor> = parts.iter().map(|p| &p.hi).collect();
        RssShare {
            party: parts[0].party,
            lo: RingTensor::concat_last_axis(&lo),
            hi: RingTensor::concat_last_axis(&hi),
            ftype: parts[0].ftype,
        }
    }

    /// All-zero sharing of the given shape.
    pub fn zeros(party: PartyId, shape: &[usize], ftype: FxpType) -> RssShare {
        RssShare {
            party,
            lo: RingTensor::zeros(shape.to_vec(), ftype.bits),
            hi: RingTensor::zeros(shape.to_vec(), ftype.bits),
            ftype,
        }
    }

    /// Sharing of a public tensor: the value sits on the `x_0` component.
    pub fn from_public(party: PartyId, value: &RingTensor, ftype: FxpType) -> RssShare {
        RssShare::zeros(party, value.shape(), ftype).add_public(value)
    }
}

/// One party's slice of a replicated XOR sharing of `width`-bit words.
#[derive(Clone, Debug)]
pub struct BoolShare {
    pub party: PartyId,
    pub lo: RingTensor,
    pub hi: RingTensor,
}

impl BoolShare {
    pub fn width(&self) -> u32 {
        self.lo.width()
    }

    pub fn shape(&self) -> &[usize] {
        self.lo.shape()
    }

    pub fn xor(&self, other: &BoolShare) -> BoolShare {
        BoolShare {
            party: self.party,
            lo: self.lo.xor(&other.lo),
            hi: self.hi.xor(&other.hi),
        }
    }

    /// Complement: flips the `x_0` component.
    pub fn not(&self) -> BoolShare {
        let mut out = self.clone();
        match self.party.0 {
            0 => out.lo = self.lo.not(),
            2 => out.hi = self.hi.not(),
            _ => {}
        }
        out
    }

    pub fn shl(&self, t: u32) -> BoolShare {
        BoolShare {
            party: self.party,
            lo: self.lo.shl(t),
            hi: self.hi.shl(t),
        }
    }

    pub fn shr(&self, t: u32) -> BoolShare {
        BoolShare {
            party: self.party,
            lo: self.lo.shr_logical(t),
            hi: self.hi.shr_logical(t),
        }
    }

    pub fn mask_word(&self, m: u64) -> BoolShare {
        BoolShare {
            party: self.party,
            lo: self.lo.map(|w| w & m),
            hi: self.hi.map(|w| w & m),
        }
    }

    /// Spread bit lanes `[lo_bit, lo_bit+nbits)` of every word into separate
    /// trailing elements; XOR sharing is preserved bit-wise.
    pub fn expand_bits(&self, lo_bit: u32, nbits: u32) -> BoolShare {
        BoolShare {
            party: self.party,
            lo: self.lo.expand_bits(lo_bit, nbits),
            hi: self.hi.expand_bits(lo_bit, nbits),
        }
    }
}

// ---------------------------------------------------------------------------
// dealer-side helpers (outside the protocol)
// ---------------------------------------------------------------------------

/// Split a secret into the three replicated share pairs. Runs wherever the
/// input owner lives; no party-to-party traffic.
pub fn share(
    secret: &RingTensor,
    t: FxpType,
    rng: &mut impl rand::RngCore,
) -> Result<[RssShare; 3]> {
    if secret.width() != t.bits {
        return Err(Error::WidthMismatch {
            expected: t.bits,
            got: secret.width(),
        });
    }
    let mask = width_mask(t.bits);
    let shape = secret.shape().to_vec();
    let n = secret.len();
    let draw = |rng: &mut dyn rand::RngCore| -> RingTensor {
        let data: Vec<u64> = (0..n).map(|_| rng.next_u64() & mask).collect();
        RingTensor::new(shape.clone(), data, t.bits)
    };
    let x0 = draw(rng);
    let x1 = draw(rng);
    let x2 = secret.sub(&x0).sub(&x1);
    let comps = [x0, x1, x2];
    Ok([0, 1, 2].map(|i| RssShare {
        party: PartyId(i as u8),
        lo: comps[i].clone(),
        hi: comps[(i + 1) % 3].clone(),
        ftype: t,
    }))
}

/// Recombine the three share pairs, verifying the replication invariant
/// (party i's `hi` must equal party i+1's `lo`).
pub fn reveal(shares: &[RssShare; 3]) -> Result<RingTensor> {
    for i in 0..3 {
        let j = (i + 1) % 3;
        if shares[i].hi != shares[j].lo {
            return Err(Error::Integrity(format!(
                "party {i} hi component disagrees with party {j} lo component"
            )));
        }
    }
    Ok(shares[0].lo.add(&shares[1].lo).add(&shares[2].lo))
}

/// Recombine a boolean sharing (XOR), with the same consistency check.
pub fn reveal_bits(shares: &[BoolShare; 3]) -> Result<RingTensor> {
    for i in 0..3 {
        let j = (i + 1) % 3;
        if shares[i].hi != shares[j].lo {
            return Err(Error::Integrity(format!(
                "party {i} hi component disagrees with party {j} lo component"
            )));
        }
    }
    Ok(shares[0].lo.xor(&shares[1].lo).xor(&shares[2].lo))
}

// ---------------------------------------------------------------------------
// wire helpers
// ---------------------------------------------------------------------------

pub(crate) fn send_tensor(ctx: &mut PartyCtx, to: PartyId, t: &RingTensor) -> Result<()> {
    ctx.net.send(to, &t.to_bytes())
}

pub(crate) fn recv_tensor(
    ctx: &mut PartyCtx,
    from: PartyId,
    shape: &[usize],
    width: u32,
) -> Result<RingTensor> {
    let bytes = ctx.net.recv(from)?;
    RingTensor::from_bytes(shape.to_vec(), &bytes, width)
}

fn send_tensor_pair(ctx: &mut PartyCtx, to: PartyId, a: &RingTensor, b: &RingTensor) -> Result<()> {
    let mut bytes = a.to_bytes();
    bytes.extend_from_slice(&b.to_bytes());
    ctx.net.send(to, &bytes)
}

fn recv_tensor_pair(
    ctx: &mut PartyCtx,
    from: PartyId,
    shape: &[usize],
    width: u32,
) -> Result<(RingTensor, RingTensor)> {
    let bytes = ctx.net.recv(from)?;
    let half = bytes.len() / 2;
    Ok((
        RingTensor::from_bytes(shape.to_vec(), &bytes[..half], width)?,
        RingTensor::from_bytes(shape.to_vec(), &bytes[half..], width)?,
    ))
}

// ---------------------------------------------------------------------------
// interactive primitives
// ---------------------------------------------------------------------------

/// Open a shared value to every party: each party forwards its `hi`
/// component to its predecessor (one round).
pub fn open(ctx: &mut PartyCtx, x: &RssShare) -> Result<RingTensor> {
    send_tensor(ctx, ctx.id().prev(), &x.hi)?;
    let missing = recv_tensor(ctx, ctx.id().next(), x.shape(), x.width())?;
    ctx.net.end_round();
    Ok(x.lo.add(&x.hi).add(&missing))
}

/// Element-wise product with resharing. The result carries scale `2^(2f)`;
/// callers follow with [`trunc`] (or use [`mul_trunc`]) to restore the scale.
pub fn mul(ctx: &mut PartyCtx, a: &RssShare, b: &RssShare) -> Result<RssShare> {
    a.check_mate(b)?;
    let z = a.lo.mul(&b.lo).add(&a.hi.mul(&b.lo)).add(&a.lo.mul(&b.hi));
    reshare_additive(ctx, z, a.ftype)
}

/// Matrix product with resharing (scale `2^(2f)`, like [`mul`]).
pub fn matmul(ctx: &mut PartyCtx, a: &RssShare, b: &RssShare) -> Result<RssShare> {
    a.check_mate(b)?;
    let z =
        a.lo.matmul(&b.lo)
            .add(&a.hi.matmul(&b.lo))
            .add(&a.lo.matmul(&b.hi));
    reshare_additive(ctx, z, a.ftype)
}

/// Reshare a 3-of-3 additive piece back into the replicated pattern:
/// mask with a PRF zero-sharing, rotate one tensor to the predecessor.
fn reshare_additive(ctx: &mut PartyCtx, z: RingTensor, ftype: FxpType) -> Result<RssShare> {
    let shape = z.shape().to_vec();
    let width = z.width();
    let pad_next = ctx.prf.with_next.draw(&shape, width);
    let pad_prev = ctx.prf.with_prev.draw(&shape, width);
    let masked = z.add(&pad_next).sub(&pad_prev);
    send_tensor(ctx, ctx.id().prev(), &masked)?;
    let from_next = recv_tensor(ctx, ctx.id().next(), &shape, width)?;
    ctx.net.end_round();
    Ok(RssShare {
        party: ctx.id(),
        lo: masked,
        hi: from_next,
        ftype,
    })
}

/// Probabilistic truncation by `2^t` of a replicated sharing (two rounds).
///
/// Party 2 deals `(r >> t, r_msb)` against PRF-derived masks while parties 0
/// and 1 open the biased, masked value; the opened word is public to them
/// only. Output decodes to `floor(x / 2^t) + c` with `c in {0,1}`, so the
/// error against the floor oracle is at most one ulp and is exactly zero when
/// the low `t` bits of `x` are zero. Caller contract: `|x| < 2^(l-2)` as a
/// signed word.
pub fn trunc(ctx: &mut PartyCtx, x: &RssShare, t: u32) -> Result<RssShare> {
    let l = x.width();
    assert!(
        t > 0 && t < l - 2,
        "truncation shift {t} out of range for width {l}"
    );
    let shape = x.shape().to_vec();
    let id = ctx.id();

    // pair masks: r = r_a + r_b, r_a known to P0/P2, r_b known to P1/P2
    let (piece, r_lo) = match id.0 {
        0 => {
            let r_a = ctx.prf.with_prev.draw(&shape, l);
            (Some(x.lo.add(&x.hi)), Some(r_a))
        }
        1 => {
            let r_b = ctx.prf.with_next.draw(&shape, l);
            (Some(x.hi.clone()), Some(r_b))
        }
        _ => {
            let r_a = ctx.prf.with_next.draw(&shape, l);
            let r_b = ctx.prf.with_prev.draw(&shape, l);
            (None, Some(r_a.add(&r_b)))
        }
    };

    // dealer shares of r >> t and of the msb of r, 2-of-2 against PRF masks
    let bias = 1u64 << (l - 2);
    let (rp_share, msb_share) = deal_trunc_pair(ctx, r_lo.as_ref().unwrap(), t, l, &shape)?;

    // open y = (x + bias) + r between P0 and P1 in the same epoch
    let y = match id.0 {
        0 => {
            let ya = piece
                .as_ref()
                .unwrap()
                .add_word(bias)
                .add(r_lo.as_ref().unwrap());
            send_tensor(ctx, PartyId(1), &ya)?;
            let yb = recv_tensor(ctx, PartyId(1), &shape, l)?;
            Some(ya.add(&yb))
        }
        1 => {
            let yb = piece.as_ref().unwrap().add(r_lo.as_ref().unwrap());
            send_tensor(ctx, PartyId(0), &yb)?;
            let ya = recv_tensor(ctx, PartyId(0), &shape, l)?;
            Some(ya.add(&yb))
        }
        _ => None,
    };
    ctx.net.end_round();
    if id.0 == 0 {
        ctx.record_opened(y.as_ref().unwrap());
    }

    let (za, zb) = trunc_open_to_pieces(&y, &rp_share, &msb_share, t, l, id);
    reshare_pair(ctx, za, zb, &shape, l, x.ftype)
}

/// Dealer step shared by [`trunc`] and [`mul_trunc`]: 2-of-2 shares of
/// `r >> t` (logical) and of the top bit of `r`. Party 0's halves come from
/// the PRF it shares with party 2; party 1's are sent explicitly.
fn deal_trunc_pair(
    ctx: &mut PartyCtx,
    r_full_or_lo: &RingTensor,
    t: u32,
    l: u32,
    shape: &[usize],
) -> Result<(Option<RingTensor>, Option<RingTensor>)> {
    match ctx.id().0 {
        0 => {
            let rp_a = ctx.prf.with_prev.draw(shape, l);
            let msb_a = ctx.prf.with_prev.draw(shape, l);
            Ok((Some(rp_a), Some(msb_a)))
        }
        2 => {
            let r = r_full_or_lo;
            let rp = r.shr_logical(t);
            let msb = r.shr_logical(l - 1);
            let rp_a = ctx.prf.with_next.draw(shape, l);
            let msb_a = ctx.prf.with_next.draw(shape, l);
            let rp_b = rp.sub(&rp_a);
            let msb_b = msb.sub(&msb_a);
            send_tensor_pair(ctx, PartyId(1), &rp_b, &msb_b)?;
            Ok((None, None))
        }
        _ => {
            let (rp_b, msb_b) = recv_tensor_pair(ctx, PartyId(2), shape, l)?;
            Ok((Some(rp_b), Some(msb_b)))
        }
    }
}

/// From the opened `y`, build the two-party additive pieces of the truncated
/// value: `floor(y/2^t) - bias' - <r'> + <r_msb>*(1-y_msb)*2^(l-t)`.
fn trunc_open_to_pieces(
    y: &Option<RingTensor>,
    rp_share: &Option<RingTensor>,
    msb_share: &Option<RingTensor>,
    t: u32,
    l: u32,
    id: PartyId,
) -> (Option<RingTensor>, Option<RingTensor>) {
    let bias_shifted = 1u64 << (l - 2 - t);
    match id.0 {
        0 => {
            let y = y.as_ref().unwrap();
            let not_msb = y.shr_logical(l - 1).map(|w| 1u64.wrapping_sub(w));
            let corr = msb_share.as_ref().unwrap().mul(&not_msb).shl(l - t);
            let za = y
                .shr_logical(t)
                .map(|w| w.wrapping_sub(bias_shifted))
                .sub(rp_share.as_ref().unwrap())
                .add(&corr);
            (Some(za), None)
        }
        1 => {
            let y = y.as_ref().unwrap();
            let not_msb = y.shr_logical(l - 1).map(|w| 1u64.wrapping_sub(w));
            let corr = msb_share.as_ref().unwrap().mul(&not_msb).shl(l - t);
            let zb = corr.sub(rp_share.as_ref().unwrap());
            (None, Some(zb))
        }
        _ => (None, None),
    }
}

/// Turn a 2-of-2 sharing held by parties 0 and 1 into a replicated sharing:
/// one exchange round against PRF pads.
fn reshare_pair(
    ctx: &mut PartyCtx,
    za: Option<RingTensor>,
    zb: Option<RingTensor>,
    shape: &[usize],
    width: u32,
    ftype: FxpType,
) -> Result<RssShare> {
    let id = ctx.id();
    match id.0 {
        0 => {
            let s0 = ctx.prf.with_prev.draw(shape, width);
            let ua = za.unwrap().sub(&s0);
            send_tensor(ctx, PartyId(1), &ua)?;
            let ub = recv_tensor(ctx, PartyId(1), shape, width)?;
            ctx.net.end_round();
            let s1 = ua.add(&ub);
            Ok(RssShare {
                party: id,
                lo: s0,
                hi: s1,
                ftype,
            })
        }
        1 => {
            let s2 = ctx.prf.with_next.draw(shape, width);
            let ub = zb.unwrap().sub(&s2);
            send_tensor(ctx, PartyId(0), &ub)?;
            let ua = recv_tensor(ctx, PartyId(0), shape, width)?;
            ctx.net.end_round();
            let s1 = ua.add(&ub);
            Ok(RssShare {
                party: id,
                lo: s1,
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

/// Fused multiply-and-truncate (three rounds, two ring elements per output
/// element fewer than `mul` + `trunc`). Same error contract as [`trunc`].
pub fn mul_trunc(ctx: &mut PartyCtx, a: &RssShare, b: &RssShare, t: u32) -> Result<RssShare> {
    a.check_mate(b)?;
    let z = a.lo.mul(&b.lo).add(&a.hi.mul(&b.lo)).add(&a.lo.mul(&b.hi));
    trunc_additive(ctx, z, t, a.ftype)
}

/// Fused matrix-multiply-and-truncate.
pub fn matmul_trunc(ctx: &mut PartyCtx, a: &RssShare, b: &RssShare, t: u32) -> Result<RssShare> {
    a.check_mate(b)?;
    let z =
        a.lo.matmul(&b.lo)
            .add(&a.hi.matmul(&b.lo))
            .add(&a.lo.matmul(&b.hi));
    trunc_additive(ctx, z, t, a.ftype)
}

/// Truncate a 3-of-3 additive value (the raw output of a product) without
/// first resharing it. Party 2 folds its piece and the mask `r` into one
/// message to party 0, who assembles and publishes the masked word.
fn trunc_additive(ctx: &mut PartyCtx, z: RingTensor, t: u32, ftype: FxpType) -> Result<RssShare> {
    let l = z.width();
    assert!(
        t > 0 && t < l - 2,
        "truncation shift {t} out of range for width {l}"
    );
    let shape = z.shape().to_vec();
    let id = ctx.id();
    let bias = 1u64 << (l - 2);

    // epoch 1: P1 and P2 stream their masked pieces to P0; P2 also deals the
    // truncation pair to P1. The mask r is private to the dealer.
    let mut r_full: Option<RingTensor> = None;
    match id.0 {
        1 => {
            let alpha = ctx.prf.with_next.draw(&shape, l);
            let m1 = z.add(&alpha);
            send_tensor(ctx, PartyId(0), &m1)?;
        }
        2 => {
            let alpha = ctx.prf.with_prev.draw(&shape, l);
            let r = ctx.prf.private.draw(&shape, l);
            let m2 = z.sub(&alpha).add(&r);
            send_tensor(ctx, PartyId(0), &m2)?;
            r_full = Some(r);
        }
        _ => {}
    }
    let (rp_share, msb_share) = deal_trunc_pair(ctx, r_full.as_ref().unwrap_or(&z), t, l, &shape)?;
    let mut y: Option<RingTensor> = None;
    if id.0 == 0 {
        let m1 = recv_tensor(ctx, PartyId(1), &shape, l)?;
        let m2 = recv_tensor(ctx, PartyId(2), &shape, l)?;
        y = Some(z.add_word(bias).add(&m1).add(&m2));
    }
    ctx.net.end_round();

    // epoch 2: P0 publishes y to P1
    match id.0 {
        0 => {
            ctx.record_opened(y.as_ref().unwrap());
            send_tensor(ctx, PartyId(1), y.as_ref().unwrap())?;
        }
        1 => {
            y = Some(recv_tensor(ctx, PartyId(0), &shape, l)?);
        }
        _ => {}
    }
    ctx.net.end_round();

    let (za, zb) = trunc_open_to_pieces(&y, &rp_share, &msb_share, t, l, id);
    reshare_pair(ctx, za, zb, &shape, l, ftype)
}

// ---------------------------------------------------------------------------
// boolean sharing, A2B and the sign bit
// ---------------------------------------------------------------------------

/// Bitwise AND of several pairs of boolean sharings, all in one round.
pub fn and_many(ctx: &mut PartyCtx, pairs: &[(&BoolShare, &BoolShare)]) -> Result<Vec<BoolShare>> {
    let id = ctx.id();
    let mut masked: Vec<RingTensor> = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let shape = a.shape().to_vec();
        let w = a.width();
        let z = a.lo.and(&b.lo).xor(&a.hi.and(&b.lo)).xor(&a.lo.and(&b.hi));
        let pad_next = ctx.prf.with_next.draw(&shape, w);
        let pad_prev = ctx.prf.with_prev.draw(&shape, w);
        masked.push(z.xor(&pad_next).xor(&pad_prev));
    }
    let mut bytes = Vec::new();
    for m in &masked {
        bytes.extend_from_slice(&m.to_bytes());
    }
    ctx.net.send(id.prev(), &bytes)?;
    let recv = ctx.net.recv(id.next())?;
    ctx.net.end_round();
    let mut out = Vec::with_capacity(pairs.len());
    let mut off = 0usize;
    for ((a, _), m) in pairs.iter().zip(masked) {
        let w = a.width();
        let nbytes = a.lo.len() * (w / 8) as usize;
        let hi = RingTensor::from_bytes(a.shape().to_vec(), &recv[off..off + nbytes], w)?;
        off += nbytes;
        out.push(BoolShare {
            party: id,
            lo: m,
            hi,
        });
    }
    Ok(out)
}

pub fn and(ctx: &mut PartyCtx, a: &BoolShare, b: &BoolShare) -> Result<BoolShare> {
    Ok(and_many(ctx, &[(a, b)])?.pop().unwrap())
}

/// OR via De Morgan; costs one AND.
pub fn or(ctx: &mut PartyCtx, a: &BoolShare, b: &BoolShare) -> Result<BoolShare> {
    Ok(and(ctx, &a.not(), &b.not())?.not())
}

/// Decompose an arithmetic sharing into two boolean-shared addends
/// `A = x_0 + x_1` (held by party 0) and `B = x_2` (held by parties 1 and 2),
/// so that `A + B = x mod 2^l`. One round.
fn a2b_addends(ctx: &mut PartyCtx, x: &RssShare) -> Result<(BoolShare, BoolShare)> {
    let id = ctx.id();
    let shape = x.shape().to_vec();
    let l = x.width();

    // sharing of A, dealt by P0: components (A ^ a1 ^ a2, a1, a2)
    // a1 from k01, a2 from k20
    let (a_lo, a_hi) = match id.0 {
        0 => {
            let a1 = ctx.prf.with_next.draw(&shape, l);
            let a2 = ctx.prf.with_prev.draw(&shape, l);
            let a0 = x.lo.add(&x.hi).xor(&a1).xor(&a2);
            send_tensor(ctx, PartyId(2), &a0)?;
            send_tensor(ctx, PartyId(1), &a2)?;
            (a0, a1)
        }
        1 => {
            let a1 = ctx.prf.with_prev.draw(&shape, l);
            let a2 = recv_tensor(ctx, PartyId(0), &shape, l)?;
            (a1, a2)
        }
        _ => {
            let a2 = ctx.prf.with_next.draw(&shape, l);
            let a0 = recv_tensor(ctx, PartyId(0), &shape, l)?;
            (a2, a0)
        }
    };

    // sharing of B = x_2, known to P1 (hi) and P2 (lo):
    // components (0, x_2 ^ g, g) with g from k12
    let (b_lo, b_hi) = match id.0 {
        0 => {
            let b1 = recv_tensor(ctx, PartyId(1), &shape, l)?;
            (RingTensor::zeros(shape.clone(), l), b1)
        }
        1 => {
            let g = ctx.prf.with_next.draw(&shape, l);
            let b1 = x.hi.xor(&g);
            send_tensor(ctx, PartyId(0), &b1)?;
            (b1, g)
        }
        _ => {
            let g = ctx.prf.with_prev.draw(&shape, l);
            (g, RingTensor::zeros(shape.clone(), l))
        }
    };
    ctx.net.end_round();

    let a = BoolShare {
        party: id,
        lo: a_lo,
        hi: a_hi,
    };
    let b = BoolShare {
        party: id,
        lo: b_lo,
        hi: b_hi,
    };
    Ok((a, b))
}

/// Carry words of `a + b` via a Kogge-Stone prefix: after the scan,
/// bit `i` of the returned generate word is the carry out of position `i`.
fn carry_words(
    ctx: &mut PartyCtx,
    a: &BoolShare,
    b: &BoolShare,
    l: u32,
) -> Result<(BoolShare, BoolShare)> {
    let p = a.xor(b);
    let mut g = and(ctx, a, b)?;
    let mut pp = p.clone();
    let levels = 32 - (l - 1).leading_zeros(); // ceil(log2(l-1)) for l in {8,..,64}
    for k in 0..levels {
        let d = 1u32 << k;
        let g_shift = g.shl(d);
        let p_shift = pp.shl(d);
        if k + 1 == levels {
            let t = and(ctx, &pp, &g_shift)?;
            g = g.xor(&t);
        } else {
            let both = and_many(ctx, &[(&pp, &g_shift), (&pp, &p_shift)])?;
            g = g.xor(&both[0]);
            pp = both[1].clone();
        }
    }
    Ok((g, p))
}

/// Boolean sharing of the full bit decomposition of `x`:
/// bit `i` of each output word is bit `i` of the secret.
pub fn a2b_bits(ctx: &mut PartyCtx, x: &RssShare) -> Result<BoolShare> {
    let l = x.width();
    let (a, b) = a2b_addends(ctx, x)?;
    let (g, p) = carry_words(ctx, &a, &b, l)?;
    // sum bit i = p_i ^ carry_in_i; carry into i is the carry out of i-1
    Ok(p.xor(&g.shl(1)))
}

/// Boolean sharing of the sign bit of `x` (bit `l-1`), one word lane 0.
pub fn msb(ctx: &mut PartyCtx, x: &RssShare) -> Result<BoolShare> {
    let l = x.width();
    let s = a2b_bits(ctx, x)?;
    Ok(s.shr(l - 1).mask_word(1))
}

/// Boolean sharing of `[a < b]` under the no-overflow contract
/// `|a - b| < 2^(l-1)`.
pub fn less_than(ctx: &mut PartyCtx, a: &RssShare, b: &RssShare) -> Result<BoolShare> {
    msb(ctx, &a.sub(b)?)
}

/// `[x < c]` for a public constant tensor.
pub fn less_than_public(ctx: &mut PartyCtx, x: &RssShare, c: &RingTensor) -> Result<BoolShare> {
    msb(ctx, &x.neg().add_public(c).neg())
}

/// `[c < x]` for a public constant tensor.
pub fn public_less_than(ctx: &mut PartyCtx, c: &RingTensor, x: &RssShare) -> Result<BoolShare> {
    msb(ctx, &x.rsub_public(c))
}

/// Convert a boolean-shared bit (lane 0 of each word) into an arithmetic
/// sharing of the same 0/1 value over the `bits`-wide ring. Two rounds,
/// three ring elements per bit.
///
/// `q = c0 ^ c1` is known to party 0 in the clear and `c2` to both parties
/// 1 and 2, so `c = q + c2 - 2 q c2` needs one additive split of `q`
/// toward the two holders of `c2`, who then push the result back into the
/// replicated pattern against PRF pads.
pub fn bit_inject(ctx: &mut PartyCtx, c: &BoolShare, bits: u32) -> Result<RssShare> {
    let id = ctx.id();
    let shape = c.shape().to_vec();
    let itype = FxpType { bits, frac: 0 };

    // epoch 1: split q = q1 + q2 with q1 from the pair seed of P0/P1
    let (q_piece, c2) = match id.0 {
        0 => {
            let q1 = ctx.prf.with_next.draw(&shape, bits);
            let q = c.lo.xor(&c.hi).mask_word(1).bits_to_width(bits);
            let q2 = q.sub(&q1);
            send_tensor(ctx, PartyId(2), &q2)?;
            (None, None)
        }
        1 => {
            let q1 = ctx.prf.with_prev.draw(&shape, bits);
            (Some(q1), Some(c.hi.mask_word(1).bits_to_width(bits)))
        }
        _ => {
            let q2 = recv_tensor(ctx, PartyId(0), &shape, bits)?;
            (Some(q2), Some(c.lo.mask_word(1).bits_to_width(bits)))
        }
    };
    ctx.net.end_round();

    // epoch 2: P1 and P2 hold 2-of-2 pieces of c; reshare with P0's seeds
    // so that P0's final components never move on the wire
    match id.0 {
        0 => {
            let s0 = ctx.prf.with_prev.draw(&shape, bits);
            let s1 = ctx.prf.with_next.draw(&shape, bits);
            ctx.net.end_round();
            Ok(RssShare {
                party: id,
                lo: s0,
                hi: s1,
                ftype: itype,
            })
        }
        1 => {
            let s1 = ctx.prf.with_prev.draw(&shape, bits);
            let c2 = c2.unwrap();
            let q1 = q_piece.unwrap();
            // p1 = q1 + c2 - 2 q1 c2
            let p1 = q1.add(&c2).sub(&q1.mul(&c2).mul_word(2));
            let u1 = p1.sub(&s1);
            send_tensor(ctx, PartyId(2), &u1)?;
            let u2 = recv_tensor(ctx, PartyId(2), &shape, bits)?;
            ctx.net.end_round();
            let s2 = u1.add(&u2);
            Ok(RssShare {
                party: id,
                lo: s1,
                hi: s2,
                ftype: itype,
            })
        }
        _ => {
            let s0 = ctx.prf.with_next.draw(&shape, bits);
            let c2 = c2.unwrap();
            let q2 = q_piece.unwrap();
            // p2 = q2 - 2 q2 c2
            let p2 = q2.sub(&q2.mul(&c2).mul_word(2));
            let u2 = p2.sub(&s0);
            send_tensor(ctx, PartyId(1), &u2)?;
            let u1 = recv_tensor(ctx, PartyId(1), &shape, bits)?;
            ctx.net.end_round();
            let s2 = u1.add(&u2);
            Ok(RssShare {
                party: id,
                lo: s2,
                hi: s0,
                ftype: itype,
            })
        }
    }
}

/// Oblivious choice: `a` where the shared bit is 1, else `b`. Exact — the
/// product of the injected bit with `a - b` needs no truncation.
pub fn select(ctx: &mut PartyCtx, c: &BoolShare, a: &RssShare, b: &RssShare) -> Result<RssShare> {
    a.check_mate(b)?;
    let ci = bit_inject(ctx, c, a.width())?.retag(FxpType {
        bits: a.width(),
        frac: 0,
    });
    let d = a.sub(b)?;
    let cd = mul(ctx, &ci.retag(a.ftype), &d)?;
    b.add(&cd)
}
