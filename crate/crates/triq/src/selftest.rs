//! Machine-checkable protocol health checks, shared by the CLI selftest
//! command and the test suites: micro-benchmarks with byte/round accounting
//! and the statistical smoke test on opened masked values.

use crate::error::Result;
use crate::fxp::{self, FloatTensor, FxpType, RingTensor, HIGH, LOW};
use crate::graph::{self, PrecisionMap};
use crate::model::{self, BlockConfig, GeluMode};
use crate::nonlinear;
use crate::oracle;
use crate::rss;
use crate::runtime::run_protocol;
use crate::transport::{CommStats, NetworkConfig};
use crate::typecast;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashMap;

/// One named invariant with its measured value.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, value: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass,
            value,
            detail: detail.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// micro-benchmarks
// ---------------------------------------------------------------------------

/// Phase-separated traffic of one secure matrix multiplication.
#[derive(Clone, Debug)]
pub struct MatmulBench {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub ftype: FxpType,
    /// (phase name, bytes) in execution order.
    pub phases: Vec<(String, u64)>,
    pub stats: CommStats,
    pub est_lan: f64,
    pub est_wan: f64,
}

/// Share two matrices, multiply and rescale, recording bytes per phase.
/// Phases are measured by running the deterministic protocol in prefixes of
/// increasing length and differencing the totals (an in-run snapshot would
/// race with the other parties' sends). The dot-product phase is the
/// resharing of the partial products; its traffic is width-proportional:
/// three ring elements per output element.
pub fn bench_matmul(m: usize, k: usize, n: usize, t: FxpType, seed: u64) -> Result<MatmulBench> {
    let run = |stages: u32| -> Result<CommStats> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x33);
        let gen = |rng: &mut ChaCha12Rng, rows: usize, cols: usize| {
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            fxp::encode(&FloatTensor::new(vec![rows, cols], data), t)
        };
        let a = gen(&mut rng, m, k);
        let b = gen(&mut rng, k, n);
        let a_sh = rss::share(&a, t, &mut rng)?;
        let b_sh = rss::share(&b, t, &mut rng)?;
        let ins = std::sync::Mutex::new((a_sh.to_vec(), b_sh.to_vec()));
        let (_outs, stats) = run_protocol(seed, |ctx| {
            let (a, b) = {
                let g = ins.lock().unwrap();
                (g.0[ctx.id().index()].clone(), g.1[ctx.id().index()].clone())
            };
            let prod = rss::matmul(ctx, &a, &b)?;
            if stages > 1 {
                return rss::trunc(ctx, &prod, t.frac);
            }
            Ok(prod)
        })?;
        Ok(stats)
    };
    let after_dot = run(1)?;
    let stats = run(2)?;
    let phases = vec![
        ("dot_product".to_string(), after_dot.total_bytes()),
        (
            "trunc_scale".to_string(),
            stats.total_bytes() - after_dot.total_bytes(),
        ),
        ("casts".to_string(), 0),
    ];
    Ok(MatmulBench {
        m,
        k,
        n,
        ftype: t,
        phases,
        stats,
        est_lan: NetworkConfig::lan().estimate_time(&stats),
        est_wan: NetworkConfig::wan().estimate_time(&stats),
    })
}

/// One end-to-end secure run of the transformer block under a precision map.
#[derive(Clone, Debug)]
pub struct BlockBench {
    pub cfg: BlockConfig,
    pub mode: String,
    pub stats: CommStats,
    pub est_lan: f64,
    pub est_wan: f64,
    /// max |secure - fixed point oracle| over the outputs.
    pub max_abs_vs_oracle: f64,
}

pub fn bench_block(
    cfg: &BlockConfig,
    map: &PrecisionMap,
    mode: &str,
    seed: u64,
) -> Result<BlockBench> {
    bench_stack(cfg, map, mode, 1, seed)
}

/// Like [`bench_block`] for a stack of blocks (fresh weights per block).
pub fn bench_stack(
    cfg: &BlockConfig,
    map: &PrecisionMap,
    mode: &str,
    blocks: usize,
    seed: u64,
) -> Result<BlockBench> {
    let g = model::build_stack(cfg, blocks)?;
    let typed = graph::insert_casts(&graph::infer_types(&g, map)?)?;
    graph::validate(&typed)?;
    let weights = model::random_stack_weights(cfg, blocks, seed);
    let mut inputs = HashMap::new();
    inputs.insert("x".to_string(), model::random_input(cfg, seed));
    let plain = graph::execute_plain(&typed, &inputs, &weights)?;
    let (secure, stats) = graph::execute_secure(&typed, &inputs, &weights, seed)?;
    let m = oracle::metrics(secure[0].data(), plain[0].data());
    Ok(BlockBench {
        cfg: *cfg,
        mode: mode.into(),
        stats,
        est_lan: NetworkConfig::lan().estimate_time(&stats),
        est_wan: NetworkConfig::wan().estimate_time(&stats),
        max_abs_vs_oracle: m.max_abs,
    })
}

// ---------------------------------------------------------------------------
// mask uniformity
// ---------------------------------------------------------------------------

/// Chi-squared statistic of the low 8 bits of `samples` against uniform.
pub fn chi_squared_uniform_u8(samples: &[u64]) -> (f64, f64) {
    let mut bins = [0u64; 256];
    for &s in samples {
        bins[(s & 0xFF) as usize] += 1;
    }
    let expected = samples.len() as f64 / 256.0;
    let stat: f64 = bins
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let crit = ChiSquared::new(255.0).unwrap().inverse_cdf(0.99);
    (stat, crit)
}

/// Open `n` masked values through the truncation protocol and test the low
/// 8 bits of party 0's view for uniformity at significance 0.01.
pub fn mask_uniformity(seed: u64, n: usize) -> Result<(f64, f64)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x99);
    let words: Vec<u64> = (0..n).map(|_| rng.gen_range(0..(1u64 << 29))).collect();
    let x = RingTensor::new(vec![n], words, 32);
    let shares = rss::share(&x, LOW, &mut rng)?;
    let ins = std::sync::Mutex::new(shares.to_vec());
    let (outs, _) = run_protocol(seed, |ctx| {
        ctx.capture_opened = ctx.id().0 == 0;
        let mine = ins.lock().unwrap()[ctx.id().index()].clone();
        rss::trunc(ctx, &mine, LOW.frac)?;
        Ok(std::mem::take(&mut ctx.opened))
    })?;
    let opened = &outs[0];
    assert_eq!(opened.len(), n);
    Ok(chi_squared_uniform_u8(opened))
}

// ---------------------------------------------------------------------------
// the invariant suite
// ---------------------------------------------------------------------------

/// Fast versions of the protocol invariants; returns one entry per check.
pub fn run_selftest(seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // fixed-point round trip
    {
        let vals: Vec<f64> = (0..512).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let ft = FloatTensor::new(vec![vals.len()], vals.clone());
        let mut worst: f64 = 0.0;
        for t in [LOW, HIGH] {
            let dec = fxp::decode(&fxp::encode(&ft, t), t).unwrap();
            for (v, d) in vals.iter().zip(dec.data()) {
                worst = worst.max((v - d).abs() / t.ulp());
            }
        }
        checks.push(Check::new(
            "fxp_round_trip_half_ulp",
            worst <= 0.5 + 1e-9,
            worst,
            "ulp",
        ));
    }

    // replicated linearity and product exactness
    {
        let n = 256;
        let x = RingTensor::new(vec![n], (0..n as u64).map(|_| rng.next_u64()).collect(), 32);
        let y = RingTensor::new(vec![n], (0..n as u64).map(|_| rng.next_u64()).collect(), 32);
        let want = x.mul(&y);
        let xs = rss::share(&x, LOW, &mut rng).unwrap();
        let ys = rss::share(&y, LOW, &mut rng).unwrap();
        let ins = std::sync::Mutex::new((xs.to_vec(), ys.to_vec()));
        let (outs, stats) = run_protocol(seed ^ 1, |ctx| {
            let (a, b) = {
                let g = ins.lock().unwrap();
                (g.0[ctx.id().index()].clone(), g.1[ctx.id().index()].clone())
            };
            rss::mul(ctx, &a, &b)
        })
        .unwrap();
        let got = rss::reveal(&outs).unwrap();
        let ok = got == want && stats.rounds == 1;
        checks.push(Check::new(
            "rss_mul_exact_one_round",
            ok,
            stats.rounds as f64,
            "rounds",
        ));
    }

    // truncation against the floor oracle
    {
        let n = 2048;
        let words: Vec<u64> = (0..n)
            .map(|_| rng.gen_range(-(1i64 << 29)..(1i64 << 29)) as u64)
            .collect();
        let x = RingTensor::new(vec![n], words, 32);
        let want = fxp::plain_trunc(&x, 8);
        let shares = rss::share(&x, LOW, &mut rng).unwrap();
        let ins = std::sync::Mutex::new(shares.to_vec());
        let (outs, _) = run_protocol(seed ^ 2, |ctx| {
            let mine = ins.lock().unwrap()[ctx.id().index()].clone();
            rss::trunc(ctx, &mine, 8)
        })
        .unwrap();
        let got = rss::reveal(&outs).unwrap();
        let worst = got
            .signed()
            .iter()
            .zip(want.signed())
            .map(|(g, w)| (g - w).abs())
            .max()
            .unwrap();
        checks.push(Check::new(
            "trunc_within_one_ulp",
            worst <= 1,
            worst as f64,
            "ulp",
        ));
    }

    // sign extraction, exhaustive at 8 bits
    {
        let all: Vec<u64> = (0..256).collect();
        let x = RingTensor::new(vec![256], all.clone(), 8);
        let t8 = FxpType::new(8, 2).unwrap();
        let shares = rss::share(&x, t8, &mut rng).unwrap();
        let ins = std::sync::Mutex::new(shares.to_vec());
        let (outs, _) = run_protocol(seed ^ 3, |ctx| {
            let mine = ins.lock().unwrap()[ctx.id().index()].clone();
            rss::msb(ctx, &mine)
        })
        .unwrap();
        let bits = rss::reveal_bits(&outs).unwrap();
        let wrong = all
            .iter()
            .zip(bits.words())
            .filter(|(w, got)| (*w >> 7) & 1 != **got)
            .count();
        checks.push(Check::new(
            "msb_exhaustive_8bit",
            wrong == 0,
            wrong as f64,
            "mismatches",
        ));
    }

    // upcast exactness and round count
    {
        let from = FxpType::new(8, 2).unwrap();
        let to = FxpType::new(16, 4).unwrap();
        let words: Vec<u64> = (-64i64..64).map(|w| (w as u64) & 0xFF).collect();
        let x = RingTensor::new(vec![words.len()], words.clone(), 8);
        let shares = rss::share(&x, from, &mut rng).unwrap();
        let ins = std::sync::Mutex::new(shares.to_vec());
        let (outs, stats) = run_protocol(seed ^ 4, |ctx| {
            let mine = ins.lock().unwrap()[ctx.id().index()].clone();
            typecast::upcast(ctx, &mine, to)
        })
        .unwrap();
        let got = rss::reveal(&outs).unwrap();
        let wrong = words
            .iter()
            .zip(got.signed())
            .filter(|(w, g)| *g != (fxp::sign_extend(**w, 8) << 2))
            .count();
        let ok = wrong == 0 && stats.rounds == 3;
        checks.push(Check::new(
            "upcast_exact_three_rounds",
            ok,
            stats.rounds as f64,
            "rounds",
        ));
    }

    // downcast locality and carry bound
    {
        let from = FxpType::new(16, 6).unwrap();
        let to = FxpType::new(8, 2).unwrap();
        let words: Vec<u64> = (0..512)
            .map(|_| (rng.gen_range(-2048i64..2048) as u64) & 0xFFFF)
            .collect();
        let x = RingTensor::new(vec![words.len()], words.clone(), 16);
        let shares = rss::share(&x, from, &mut rng).unwrap();
        let down: Vec<_> = shares
            .iter()
            .map(|s| typecast::downcast(s, to).unwrap())
            .collect();
        let got = rss::reveal(&down.try_into().map_err(|_| ()).unwrap()).unwrap();
        let worst = words
            .iter()
            .zip(got.words())
            .map(|(w, g)| {
                let want = (fxp::sign_extend(*w, 16) >> 4) as u64;
                -fxp::sign_extend(g.wrapping_sub(want) & 0xFF, 8)
            })
            .max()
            .unwrap();
        checks.push(Check::new(
            "downcast_two_carries",
            (0..=2).contains(&worst),
            worst as f64,
            "ulp",
        ));
    }

    // activation fixed points
    {
        let x = fxp::encode(&FloatTensor::new(vec![2], vec![0.0, 2.0]), LOW);
        let shares = rss::share(&x, LOW, &mut rng).unwrap();
        let ins = std::sync::Mutex::new(shares.to_vec());
        let (outs, _) = run_protocol(seed ^ 5, |ctx| {
            let mine = ins.lock().unwrap()[ctx.id().index()].clone();
            nonlinear::gelu_quad(ctx, &mine)
        })
        .unwrap();
        let v = fxp::decode(&rss::reveal(&outs).unwrap(), LOW).unwrap();
        let ok = v.data()[0] == 0.5 && v.data()[1] == 1.5;
        checks.push(Check::new(
            "gelu_quad_fixed_points",
            ok,
            v.data()[0],
            "value at 0",
        ));
    }

    // exponential endpoints
    {
        let x = fxp::encode(&FloatTensor::new(vec![2], vec![0.0, -20.0]), HIGH);
        let shares = rss::share(&x, HIGH, &mut rng).unwrap();
        let ins = std::sync::Mutex::new(shares.to_vec());
        let (outs, _) = run_protocol(seed ^ 6, |ctx| {
            let mine = ins.lock().unwrap()[ctx.id().index()].clone();
            nonlinear::exp_neg(ctx, &mine)
        })
        .unwrap();
        let v = fxp::decode(&rss::reveal(&outs).unwrap(), HIGH).unwrap();
        let ok = (v.data()[0] - 1.0).abs() <= 2.0 * HIGH.ulp() && v.data()[1] == 0.0;
        checks.push(Check::new(
            "exp_neg_endpoints",
            ok,
            v.data()[0],
            "value at 0",
        ));
    }

    // compiler: decomposed softmax gains exactly one cast pair
    {
        let typed = graph::infer_types(&graph::softmax_dag(), &PrecisionMap::quantized()).unwrap();
        let cast = graph::insert_casts(&typed).unwrap();
        let ups = cast
            .nodes
            .iter()
            .filter(|n| n.spec.op == graph::OpKind::Upcast)
            .count();
        let downs = cast
            .nodes
            .iter()
            .filter(|n| n.spec.op == graph::OpKind::Downcast)
            .count();
        let again = graph::insert_casts(&cast).unwrap();
        let ok = ups == 1
            && downs == 1
            && graph::validate(&cast).is_ok()
            && again.nodes.len() == cast.nodes.len();
        checks.push(Check::new(
            "softmax_dag_single_cast_pair",
            ok,
            (ups + downs) as f64,
            "casts",
        ));
    }

    // mask uniformity
    {
        let (stat, crit) = mask_uniformity(seed ^ 7, 10_000).unwrap();
        checks.push(Check::new(
            "mask_uniformity_chi2",
            stat < crit,
            stat,
            format!("critical {crit:.2}"),
        ));
    }

    // tiny block, secure vs oracle
    {
        let cfg = BlockConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            seq_len: 4,
            gelu_mode: GeluMode::Quad,
            ..BlockConfig::default()
        };
        let b = bench_block(&cfg, &PrecisionMap::quantized(), "quantized", seed ^ 8).unwrap();
        checks.push(Check::new(
            "tiny_block_vs_oracle",
            b.max_abs_vs_oracle <= 2f64.powi(-5),
            b.max_abs_vs_oracle,
            "max abs",
        ));
    }

    checks
}
