//! Hot inner loops shared by the ring tensor ops.
//!
//! With the `parallel` feature (default) the batched matrix product runs on
//! rayon; without it the sequential path is used. Both are exported so the
//! bench suite can compare them directly.

/// Sequential batched matmul over wrapping `u64` words.
/// `a` is `[batch_a, m, k]`, `b` is `[batch_b, k, n]`, `out` is `[batch, m, n]`;
/// a batch of 1 broadcasts.
pub fn matmul_batch_seq(
    a: &[u64],
    a_batch: usize,
    b: &[u64],
    b_batch: usize,
    out: &mut [u64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    for bi in 0..batch {
        let a_off = if a_batch == 1 { 0 } else { bi * m * k };
        let b_off = if b_batch == 1 { 0 } else { bi * k * n };
        let o_off = bi * m * n;
        matmul_tile(
            &a[a_off..a_off + m * k],
            &b[b_off..b_off + k * n],
            &mut out[o_off..o_off + m * n],
            m,
            k,
            n,
        );
    }
}

fn matmul_tile(a: &[u64], b: &[u64], out: &mut [u64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        orow.fill(0);
        for (p, &av) in row.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = o.wrapping_add(av.wrapping_mul(bv));
            }
        }
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_batch_par(
    a: &[u64],
    a_batch: usize,
    b: &[u64],
    b_batch: usize,
    out: &mut [u64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    use rayon::prelude::*;
    out.par_chunks_mut(n)
        .enumerate()
        .for_each(|(row_idx, orow)| {
            let bi = row_idx / m;
            let i = row_idx % m;
            let a_off = if a_batch == 1 { 0 } else { bi * m * k };
            let b_off = if b_batch == 1 { 0 } else { bi * k * n };
            let row = &a[a_off + i * k..a_off + (i + 1) * k];
            orow.fill(0);
            for (p, &av) in row.iter().enumerate() {
                let brow = &b[b_off + p * n..b_off + (p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = o.wrapping_add(av.wrapping_mul(bv));
                }
            }
        });
    let _ = batch;
}

/// Dispatch used by `RingTensor::matmul`.
pub fn matmul_batch(
    a: &[u64],
    a_batch: usize,
    b: &[u64],
    b_batch: usize,
    out: &mut [u64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    // Below this many multiply-accumulates the rayon dispatch overhead wins.
    const PAR_THRESHOLD: usize = 1 << 14;
    #[cfg(feature = "parallel")]
    if batch * m * k * n >= PAR_THRESHOLD {
        return matmul_batch_par(a, a_batch, b, b_batch, out, batch, m, k, n);
    }
    let _ = PAR_THRESHOLD;
    matmul_batch_seq(a, a_batch, b, b_batch, out, batch, m, k, n)
}
