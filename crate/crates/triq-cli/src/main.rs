//! Benchmark and inspection CLI: secure matmul and transformer-block
//! benchmarks with exact byte/round accounting, single-op runs against the
//! fixed-point oracle, graph dumps, and the protocol selftest.
//!
//! Every command prints one JSON report line; any failed check makes the
//! process exit nonzero. `DITTO_SEED` overrides `--seed`.

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use triq::fxp::{FloatTensor, FxpType, HIGH, LOW};
use triq::graph::{self, PrecisionMap};
use triq::model::{self, BlockConfig, GeluMode};
use triq::oracle;
use triq::selftest::{self, BlockBench};
use triq::transport::NetworkConfig;

#[derive(Parser)]
#[command(
    name = "triq",
    about = "three-party quantized secure computation benchmarks"
)]
struct Cli {
    /// RNG seed for inputs, weights and protocol randomness
    /// (the DITTO_SEED environment variable overrides this flag).
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,

    /// Also write the report as one flat CSV row to this path.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Copy, Clone, ValueEnum)]
enum Net {
    Lan,
    Wan,
}

#[derive(Copy, Clone, ValueEnum)]
enum Bits {
    #[value(name = "32")]
    B32,
    #[value(name = "64")]
    B64,
}

#[derive(Copy, Clone, ValueEnum)]
enum Mode {
    Quantized,
    Uniform64,
    Both,
}

#[derive(Copy, Clone, ValueEnum)]
enum GeluFlag {
    Quad,
    Poly,
}

#[derive(Copy, Clone, ValueEnum)]
enum MapFlag {
    Quantized,
    Uniform64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Secure matrix multiplication with per-phase byte accounting.
    BenchMatmul {
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 768)]
        k: usize,
        #[arg(long, default_value_t = 3072)]
        n: usize,
        #[arg(long, value_enum, default_value = "32")]
        bits: Bits,
        #[arg(long, value_enum, default_value = "lan")]
        net: Net,
    },
    /// Transformer block under the quantized map, the uniform wide map, or
    /// both (reporting the communication ratio).
    BenchBlock {
        /// Block configuration JSON; desk-scale defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        gelu: Option<GeluFlag>,
        #[arg(long, value_enum, default_value = "both")]
        mode: Mode,
        /// Number of stacked blocks.
        #[arg(long, default_value_t = 1)]
        blocks: usize,
        /// Weight manifest JSON (with --blob); seeded random when omitted.
        #[arg(long, requires = "blob")]
        weights: Option<PathBuf>,
        #[arg(long, requires = "weights")]
        blob: Option<PathBuf>,
    },
    /// One secure op on a tensor from a JSON file, checked against the
    /// fixed-point oracle.
    RunOp {
        #[arg(long)]
        op: String,
        /// JSON {"shape": [...], "data": [...]}.
        #[arg(long)]
        input: PathBuf,
    },
    /// Compile a graph file and print the typed listing.
    DumpGraph {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value = "quantized")]
        map: MapFlag,
    },
    /// Run the full invariant suite.
    Selftest,
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    if let Ok(v) = std::env::var("DITTO_SEED") {
        match v.parse() {
            Ok(s) => cli.seed = s,
            Err(_) => {
                eprintln!("DITTO_SEED is not an integer: {v}");
                return ExitCode::from(2);
            }
        }
    }
    match run(&cli) {
        Ok(report) => {
            println!(
                "{}",
                serde_json::to_string(&report).expect("report serializes")
            );
            if let Some(path) = &cli.csv {
                if let Err(e) = write_csv(path, &report) {
                    eprintln!("csv export failed: {e}");
                    return ExitCode::from(2);
                }
            }
            let ok = report["checks"]
                .as_array()
                .map(|cs| cs.iter().all(|c| c["pass"].as_bool().unwrap_or(false)))
                .unwrap_or(true);
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<serde_json::Value, Box<dyn std::error::Error>> {
    let seed = cli.seed;
    match &cli.cmd {
        Cmd::BenchMatmul { m, k, n, bits, net } => bench_matmul(*m, *k, *n, *bits, *net, seed),
        Cmd::BenchBlock {
            config,
            gelu,
            mode,
            blocks,
            weights,
            blob,
        } => bench_block(
            config.as_deref(),
            *gelu,
            *mode,
            *blocks,
            weights.as_deref(),
            blob.as_deref(),
            seed,
        ),
        Cmd::RunOp { op, input } => run_op(op, input, seed),
        Cmd::DumpGraph { graph, map } => dump_graph(graph, *map),
        Cmd::Selftest => selftest_cmd(seed),
    }
}

fn check(name: &str, pass: bool, value: f64) -> serde_json::Value {
    json!({"name": name, "pass": pass, "value": value})
}

fn bench_matmul(
    m: usize,
    k: usize,
    n: usize,
    bits: Bits,
    net: Net,
    seed: u64,
) -> Result<serde_json::Value, Box<dyn std::error::Error>> {
    let t = match bits {
        Bits::B32 => LOW,
        Bits::B64 => HIGH,
    };
    let b = selftest::bench_matmul(m, k, n, t, seed)?;
    let dot = b.phases.iter().find(|(p, _)| p == "dot_product").unwrap().1;
    let expect_dot = 3 * (m * n) as u64 * (t.bits / 8) as u64;
    let est = match net {
        Net::Lan => b.est_lan,
        Net::Wan => b.est_wan,
    };
    let checks = vec![check(
        "dot_product_bytes_match_resharing_rule",
        dot == expect_dot,
        dot as f64,
    )];
    Ok(json!({
        "cmd": "bench_matmul",
        "params": {"m": m, "k": k, "n": n, "bits": t.bits, "frac": t.frac, "seed": seed},
        "comm": b.stats.to_json(),
        "phases": b.phases.iter().map(|(p, v)| json!({"name": p, "bytes": v})).collect::<Vec<_>>(),
        "est_time": {"lan": b.est_lan, "wan": b.est_wan, "selected": est},
        "checks": checks,
    }))
}

fn block_mode_json(b: &BlockBench) -> serde_json::Value {
    json!({
        "mode": b.mode,
        "comm": b.stats.to_json(),
        "bytes": b.stats.total_bytes(),
        "rounds": b.stats.rounds,
        "est_time": {"lan": b.est_lan, "wan": b.est_wan},
        "max_abs_vs_oracle": b.max_abs_vs_oracle,
    })
}

fn bench_block(
    config: Option<&std::path::Path>,
    gelu: Option<GeluFlag>,
    mode: Mode,
    blocks: usize,
    weights: Option<&std::path::Path>,
    blob: Option<&std::path::Path>,
    seed: u64,
) -> Result<serde_json::Value, Box<dyn std::error::Error>> {
    let mut cfg: BlockConfig = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => BlockConfig::default(),
    };
    if let Some(g) = gelu {
        cfg.gelu_mode = match g {
            GeluFlag::Quad => GeluMode::Quad,
            GeluFlag::Poly => GeluMode::Poly,
        };
    }
    cfg.validate()?;
    let external = match (weights, blob) {
        (Some(w), Some(b)) => Some(model::load_weights(w, b)?),
        _ => None,
    };
    let run_one = |map: &PrecisionMap, name: &str| -> Result<BlockBench, triq::Error> {
        match &external {
            Some(store) => {
                let g = model::build_stack(&cfg, blocks)?;
                let typed = graph::insert_casts(&graph::infer_types(&g, map)?)?;
                let mut inputs = HashMap::new();
                inputs.insert("x".to_string(), model::random_input(&cfg, seed));
                let plain = graph::execute_plain(&typed, &inputs, store)?;
                let (secure, stats) = graph::execute_secure(&typed, &inputs, store, seed)?;
                let metr = oracle::metrics(secure[0].data(), plain[0].data());
                Ok(BlockBench {
                    cfg,
                    mode: name.into(),
                    stats,
                    est_lan: NetworkConfig::lan().estimate_time(&stats),
                    est_wan: NetworkConfig::wan().estimate_time(&stats),
                    max_abs_vs_oracle: metr.max_abs,
                })
            }
            None => selftest::bench_stack(&cfg, map, name, blocks, seed),
        }
    };

    let tol = 2f64.powi(-5) * blocks as f64;
    let mut modes = Vec::new();
    let mut checks = Vec::new();
    let (q, u) = match mode {
        Mode::Quantized => (
            Some(run_one(&PrecisionMap::quantized(), "quantized")?),
            None,
        ),
        Mode::Uniform64 => (
            None,
            Some(run_one(&PrecisionMap::uniform(HIGH), "uniform64")?),
        ),
        Mode::Both => (
            Some(run_one(&PrecisionMap::quantized(), "quantized")?),
            Some(run_one(&PrecisionMap::uniform(HIGH), "uniform64")?),
        ),
    };
    for b in [&q, &u].into_iter().flatten() {
        checks.push(check(
            &format!("{}_vs_oracle_max_abs", b.mode),
            b.max_abs_vs_oracle <= tol,
            b.max_abs_vs_oracle,
        ));
        modes.push(block_mode_json(b));
    }
    let mut ratio_field = serde_json::Value::Null;
    if let (Some(q), Some(u)) = (&q, &u) {
        let ratio = q.stats.total_bytes() as f64 / u.stats.total_bytes() as f64;
        ratio_field = json!(ratio);
        // the ratio bound is calibrated for the stock block; other shapes
        // and activations shift the linear/non-linear balance
        let stock = BlockConfig::default();
        let is_stock = cfg.d_model == stock.d_model
            && cfg.n_heads == stock.n_heads
            && cfg.d_ff == stock.d_ff
            && cfg.seq_len == stock.seq_len
            && cfg.gelu_mode == GeluMode::Quad
            && blocks == 1;
        if is_stock {
            checks.push(check(
                "quantized_over_uniform64_comm_ratio",
                ratio <= 0.67,
                ratio,
            ));
        }
    }
    Ok(json!({
        "cmd": "bench_block",
        "params": {
            "config": cfg,
            "blocks": blocks,
            "seed": seed,
        },
        "modes": modes,
        "comm_ratio": ratio_field,
        "checks": checks,
    }))
}

#[derive(serde::Deserialize)]
struct TensorFile {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn run_op(
    op: &str,
    input: &std::path::Path,
    seed: u64,
) -> Result<serde_json::Value, Box<dyn std::error::Error>> {
    use triq::nonlinear as nl;
    use triq::rss;
    use triq::runtime::run_protocol;

    let tf: TensorFile = serde_json::from_str(&std::fs::read_to_string(input)?)?;
    let ft = FloatTensor::new(tf.shape, tf.data);
    let (t, hi): (FxpType, FxpType) = match op {
        "gelu_quad" | "softmax" | "max" => (LOW, HIGH),
        "gelu_poly" | "exp_neg" | "recip" | "rsqrt" => (HIGH, HIGH),
        other => return Err(format!("unsupported op {other}").into()),
    };
    let enc = triq::fxp::encode(&ft, t);
    let plain = match op {
        "gelu_quad" => oracle::gelu_quad_plain(&enc, t),
        "gelu_poly" => oracle::gelu_poly_plain(&enc, t),
        "exp_neg" => oracle::exp_neg_plain(&enc, t),
        "recip" => oracle::recip_plain(&enc, t),
        "rsqrt" => oracle::rsqrt_plain(&enc, t),
        "max" => oracle::max_last_axis_plain(&enc),
        "softmax" => oracle::softmax_plain(&enc, t, hi),
        _ => unreachable!(),
    };
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x0F);
    let shares = rss::share(&enc, t, &mut rng)?;
    let ins = std::sync::Mutex::new(shares.to_vec());
    let opn = op.to_string();
    let (outs, stats) = run_protocol(seed, move |ctx| {
        let mine = ins.lock().unwrap()[ctx.id().index()].clone();
        match opn.as_str() {
            "gelu_quad" => nl::gelu_quad(ctx, &mine),
            "gelu_poly" => nl::gelu_poly(ctx, &mine),
            "exp_neg" => nl::exp_neg(ctx, &mine),
            "recip" => nl::recip(ctx, &mine),
            "rsqrt" => nl::rsqrt(ctx, &mine),
            "max" => nl::max_last_axis(ctx, &mine),
            "softmax" => nl::softmax(ctx, &mine, hi),
            _ => unreachable!(),
        }
    })?;
    let got = rss::reveal(&outs)?;
    let out_t = if op == "softmax" || op == "max" || op == "gelu_quad" {
        t
    } else {
        hi
    };
    let got_f = triq::fxp::decode(&got, out_t)?;
    let plain_f = triq::fxp::decode(&plain, out_t)?;
    let metr = oracle::metrics(got_f.data(), plain_f.data());
    let kind = match op {
        "gelu_quad" => graph::OpKind::GeluQuad,
        "gelu_poly" => graph::OpKind::GeluPoly,
        "exp_neg" => graph::OpKind::ExpNeg,
        "recip" => graph::OpKind::Recip,
        "rsqrt" => graph::OpKind::Recip,
        "max" => graph::OpKind::Max,
        "softmax" => graph::OpKind::Softmax,
        _ => unreachable!(),
    };
    let tol = oracle::secure_slack_ulps(kind).max(1) as f64 * out_t.ulp();
    Ok(json!({
        "cmd": "run_op",
        "params": {"op": op, "seed": seed, "elements": got_f.len()},
        "comm": stats.to_json(),
        "est_time": {
            "lan": NetworkConfig::lan().estimate_time(&stats),
            "wan": NetworkConfig::wan().estimate_time(&stats),
        },
        "max_abs_vs_oracle": metr.max_abs,
        "checks": [check("secure_vs_oracle_max_abs", metr.max_abs <= tol, metr.max_abs)],
    }))
}

fn dump_graph(
    path: &std::path::Path,
    map: MapFlag,
) -> Result<serde_json::Value, Box<dyn std::error::Error>> {
    let g = graph::Graph::from_json(&std::fs::read_to_string(path)?)?;
    let m = match map {
        MapFlag::Quantized => PrecisionMap::quantized(),
        MapFlag::Uniform64 => PrecisionMap::uniform(HIGH),
    };
    let typed = graph::insert_casts(&graph::infer_types(&g, &m)?)?;
    graph::validate(&typed)?;
    let listing = graph::dump(&typed);
    eprintln!("{listing}");
    let casts = typed
        .nodes
        .iter()
        .filter(|n| matches!(n.spec.op, graph::OpKind::Upcast | graph::OpKind::Downcast))
        .count();
    Ok(json!({
        "cmd": "dump_graph",
        "params": {"graph": path.display().to_string()},
        "nodes": typed.nodes.len(),
        "inserted_or_explicit_casts": casts,
        "listing": listing,
        "checks": [check("validates", true, casts as f64)],
    }))
}

fn selftest_cmd(seed: u64) -> Result<serde_json::Value, Box<dyn std::error::Error>> {
    let checks = selftest::run_selftest(seed);
    for c in &checks {
        eprintln!(
            "{} {:<32} value {:.6} {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.detail
        );
    }
    Ok(json!({
        "cmd": "selftest",
        "params": {"seed": seed},
        "checks": checks
            .iter()
            .map(|c| json!({"name": c.name, "pass": c.pass, "value": c.value}))
            .collect::<Vec<_>>(),
    }))
}

/// Flatten the report into key,value CSV (arrays indexed by position).
fn write_csv(path: &std::path::Path, report: &serde_json::Value) -> std::io::Result<()> {
    fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, val) in m {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    flatten(&key, val, out);
                }
            }
            serde_json::Value::Array(a) => {
                for (i, val) in a.iter().enumerate() {
                    flatten(&format!("{prefix}.{i}"), val, out);
                }
            }
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut cells = Vec::new();
    flatten("", report, &mut cells);
    let header: Vec<String> = cells.iter().map(|(k, _)| k.clone()).collect();
    let row: Vec<String> = cells.iter().map(|(_, v)| v.replace(',', ";")).collect();
    std::fs::write(path, format!("{}\n{}\n", header.join(","), row.join(",")))
}
