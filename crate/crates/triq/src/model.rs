//! Desk-scale transformer building blocks emitted as graphs.
//!
//! Attention is `softmax(Q K^T / sqrt(d_head) + M) V` with the scale folded
//! into a constant multiply and the causal mask as an additive constant low
//! enough that the exponential clamps it to zero. The feed-forward part is
//! two linear layers around an activation. Weights live in a raw
//! little-endian `f32` blob plus a JSON manifest and are quantized on load.

use crate::error::{Error, Result};
use crate::fxp::FloatTensor;
use crate::graph::{Attrs, Graph, NodeSpec, OpKind, WeightStore};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Serialize, Deserialize, Copy, Clone, PartialEq, Eq, Debug)]
#[serde(rename_all = "snake_case")]
pub enum GeluMode {
    Quad,
    Poly,
}

#[derive(Serialize, Deserialize, Copy, Clone, PartialEq, Eq, Debug)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    None,
    Causal,
}

/// Additive causal-mask constant: far enough below the exponential clamp
/// that masked positions land on exactly zero, small enough to sit
/// comfortably inside the 32-bit ring.
pub const MASK_VALUE: f64 = -32.0;

#[derive(Serialize, Deserialize, Copy, Clone, Debug)]
pub struct BlockConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub seq_len: usize,
    #[serde(default = "default_gelu")]
    pub gelu_mode: GeluMode,
    #[serde(default = "default_mask")]
    pub mask_mode: MaskMode,
}

fn default_gelu() -> GeluMode {
    GeluMode::Quad
}

fn default_mask() -> MaskMode {
    MaskMode::Causal
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            d_model: 64,
            n_heads: 2,
            d_ff: 256,
            seq_len: 16,
            gelu_mode: GeluMode::Quad,
            mask_mode: MaskMode::Causal,
        }
    }
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Graph(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model == 0 || self.seq_len == 0 || self.d_ff == 0 {
            return Err(Error::Graph("block dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Names and shapes of every parameter tensor of one block.
    pub fn weight_layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let ff = self.d_ff;
        vec![
            ("wq".into(), vec![d, d]),
            ("wk".into(), vec![d, d]),
            ("wv".into(), vec![d, d]),
            ("wo".into(), vec![d, d]),
            ("w0".into(), vec![d, ff]),
            ("b0".into(), vec![ff]),
            ("w1".into(), vec![ff, d]),
            ("b1".into(), vec![d]),
            ("ln1_g".into(), vec![d]),
            ("ln1_b".into(), vec![d]),
            ("ln2_g".into(), vec![d]),
            ("ln2_b".into(), vec![d]),
        ]
    }
}

// ---------------------------------------------------------------------------
// weight files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// Load weights from a JSON manifest and the raw `f32` little-endian blob
/// it describes (tensors concatenated in manifest order).
pub fn load_weights(manifest_path: &Path, blob_path: &Path) -> Result<WeightStore> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    let mut blob = Vec::new();
    std::fs::File::open(blob_path)?.read_to_end(&mut blob)?;
    let total: usize = manifest
        .entries
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if blob.len() != total * 4 {
        return Err(Error::Weights(format!(
            "blob holds {} bytes, manifest describes {}",
            blob.len(),
            total * 4
        )));
    }
    let mut store = WeightStore::new();
    let mut off = 0usize;
    for e in &manifest.entries {
        let n: usize = e.shape.iter().product();
        let data: Vec<f64> = blob[off..off + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        off += 4 * n;
        store.insert(e.name.clone(), FloatTensor::new(e.shape.clone(), data));
    }
    Ok(store)
}

/// Write a weight store in manifest order.
pub fn save_weights(
    store: &WeightStore,
    layout: &[(String, Vec<usize>)],
    manifest_path: &Path,
    blob_path: &Path,
) -> Result<()> {
    let manifest = Manifest {
        entries: layout
            .iter()
            .map(|(name, shape)| ManifestEntry {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    std::fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    let mut f = std::fs::File::create(blob_path)?;
    for (name, _) in layout {
        for &v in store.get(name)?.data() {
            f.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Deterministic random weights at scales a trained block would have.
pub fn random_weights(cfg: &BlockConfig, seed: u64) -> WeightStore {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0xBEEF);
    let mut store = WeightStore::new();
    for (name, shape) in cfg.weight_layout() {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if name.ends_with("_g") {
            (0..n).map(|_| rng.gen_range(0.8..1.2)).collect()
        } else if name.starts_with('b') || name.ends_with("_b") {
            (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
        } else {
            let fan_in = shape[0] as f64;
            let bound = (1.0 / fan_in).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        store.insert(name, FloatTensor::new(shape, data));
    }
    store
}

// ---------------------------------------------------------------------------
// graph builders
// ---------------------------------------------------------------------------

struct GraphBuilder {
    nodes: Vec<NodeSpec>,
}

impl GraphBuilder {
    fn new() -> Self {
        GraphBuilder { nodes: Vec::new() }
    }

    fn push(&mut self, id: &str, op: OpKind, inputs: &[&str], attrs: Attrs) -> String {
        self.nodes.push(NodeSpec {
            id: id.to_string(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            attrs,
        });
        id.to_string()
    }

    fn op(&mut self, id: &str, op: OpKind, inputs: &[&str]) -> String {
        self.push(id, op, inputs, Attrs::default())
    }

    fn weight(&mut self, name: &str) -> String {
        self.push(
            name,
            OpKind::Const,
            &[],
            Attrs {
                weight: Some(name.to_string()),
                ..Attrs::default()
            },
        )
    }

    fn finish(self, outputs: Vec<String>) -> Graph {
        Graph {
            nodes: self.nodes,
            outputs,
        }
    }
}

/// Lower-triangular additive mask: 0 on and below the diagonal, the mask
/// constant above it.
fn causal_mask(seq: usize) -> Vec<f64> {
    let mut m = vec![0.0; seq * seq];
    for i in 0..seq {
        for j in i + 1..seq {
            m[i * seq + j] = MASK_VALUE;
        }
    }
    m
}

/// Emit the attention sub-graph into `b`, reading activation `x` of shape
/// `[seq, d_model]`; returns the output node id.
fn emit_attention(b: &mut GraphBuilder, cfg: &BlockConfig, x: &str, prefix: &str) -> String {
    let (s, d, h) = (cfg.seq_len, cfg.d_model, cfg.n_heads);
    let dh = cfg.d_head();
    let p = |name: &str| format!("{prefix}{name}");

    let proj = |b: &mut GraphBuilder, name: &str, w: &str| -> String {
        let w = p(w);
        b.weight(&w);
        let m = b.op(&p(&format!("{name}_proj")), OpKind::Matmul, &[x, &w]);
        let r = b.push(
            &p(&format!("{name}_split")),
            OpKind::Reshape,
            &[&m],
            Attrs {
                shape: Some(vec![s, h, dh]),
                ..Attrs::default()
            },
        );
        b.push(
            &p(&format!("{name}_heads")),
            OpKind::Transpose,
            &[&r],
            Attrs {
                perm: Some(vec![1, 0, 2]),
                ..Attrs::default()
            },
        )
    };
    let q = proj(b, "q", "wq");
    let k = proj(b, "k", "wk");
    let v = proj(b, "v", "wv");

    let kt = b.push(
        &p("k_t"),
        OpKind::Transpose,
        &[&k],
        Attrs {
            perm: Some(vec![0, 2, 1]),
            ..Attrs::default()
        },
    );
    let scores = b.op(&p("scores"), OpKind::Matmul, &[&q, &kt]);
    let scale = b.push(
        &p("scale"),
        OpKind::Const,
        &[],
        Attrs {
            shape: Some(vec![]),
            fill: Some(1.0 / (dh as f64).sqrt()),
            ..Attrs::default()
        },
    );
    let scaled = b.op(&p("scaled"), OpKind::Mul, &[&scores, &scale]);
    let pre_softmax = match cfg.mask_mode {
        MaskMode::Causal => {
            let mask = b.push(
                &p("mask"),
                OpKind::Const,
                &[],
                Attrs {
                    shape: Some(vec![s, s]),
                    value: Some(causal_mask(s)),
                    ..Attrs::default()
                },
            );
            b.op(&p("masked"), OpKind::Add, &[&scaled, &mask])
        }
        MaskMode::None => scaled,
    };
    let probs = b.op(&p("probs"), OpKind::Softmax, &[&pre_softmax]);
    let ctxv = b.op(&p("ctx"), OpKind::Matmul, &[&probs, &v]);
    let merged = b.push(
        &p("merge"),
        OpKind::Transpose,
        &[&ctxv],
        Attrs {
            perm: Some(vec![1, 0, 2]),
            ..Attrs::default()
        },
    );
    let flat = b.push(
        &p("flat"),
        OpKind::Reshape,
        &[&merged],
        Attrs {
            shape: Some(vec![s, d]),
            ..Attrs::default()
        },
    );
    let wo = p("wo");
    b.weight(&wo);
    b.op(&p("attn_out"), OpKind::Matmul, &[&flat, &wo])
}

/// Emit the feed-forward sub-graph; returns the output node id.
fn emit_ffn(b: &mut GraphBuilder, cfg: &BlockConfig, x: &str, prefix: &str) -> String {
    let p = |name: &str| format!("{prefix}{name}");
    let (w0, b0, w1, b1) = (p("w0"), p("b0"), p("w1"), p("b1"));
    for w in [&w0, &b0, &w1, &b1] {
        b.weight(w);
    }
    let h = b.op(&p("ffn_in"), OpKind::Matmul, &[x, &w0]);
    let hb = b.op(&p("ffn_in_b"), OpKind::Add, &[&h, &b0]);
    let act = match cfg.gelu_mode {
        GeluMode::Quad => b.op(&p("act"), OpKind::GeluQuad, &[&hb]),
        GeluMode::Poly => b.op(&p("act"), OpKind::GeluPoly, &[&hb]),
    };
    let o = b.op(&p("ffn_out"), OpKind::Matmul, &[&act, &w1]);
    b.op(&p("ffn_out_b"), OpKind::Add, &[&o, &b1])
}

fn emit_layernorm(b: &mut GraphBuilder, x: &str, g: &str, bias: &str, id: &str) -> String {
    b.weight(g);
    b.weight(bias);
    b.push(
        id,
        OpKind::Layernorm,
        &[x, g, bias],
        Attrs {
            eps: Some(crate::nonlinear::consts::LAYERNORM_EPS),
            ..Attrs::default()
        },
    )
}

/// Stand-alone attention graph: input `x` of `[seq_len, d_model]`.
pub fn build_attention(cfg: &BlockConfig) -> Result<Graph> {
    cfg.validate()?;
    let mut b = GraphBuilder::new();
    b.op("x", OpKind::Input, &[]);
    let out = emit_attention(&mut b, cfg, "x", "");
    Ok(b.finish(vec![out]))
}

/// Stand-alone feed-forward graph.
pub fn build_ffn(cfg: &BlockConfig) -> Result<Graph> {
    cfg.validate()?;
    let mut b = GraphBuilder::new();
    b.op("x", OpKind::Input, &[]);
    let out = emit_ffn(&mut b, cfg, "x", "");
    Ok(b.finish(vec![out]))
}

fn emit_block(b: &mut GraphBuilder, cfg: &BlockConfig, x: &str, prefix: &str) -> String {
    let p = |name: &str| format!("{prefix}{name}");
    let attn = emit_attention(b, cfg, x, prefix);
    let r1 = b.op(&p("res1"), OpKind::Add, &[x, &attn]);
    let n1 = emit_layernorm(b, &r1, &p("ln1_g"), &p("ln1_b"), &p("norm1"));
    let ffn = emit_ffn(b, cfg, &n1, prefix);
    let r2 = b.op(&p("res2"), OpKind::Add, &[&n1, &ffn]);
    emit_layernorm(b, &r2, &p("ln2_g"), &p("ln2_b"), &p("norm2"))
}

/// Full block: attention, residual, layernorm, feed-forward, residual,
/// layernorm.
pub fn build_block(cfg: &BlockConfig) -> Result<Graph> {
    build_stack(cfg, 1)
}

/// A stack of `blocks` transformer blocks; weights of block `i` carry the
/// `blk{i}.` prefix when more than one block is emitted.
pub fn build_stack(cfg: &BlockConfig, blocks: usize) -> Result<Graph> {
    cfg.validate()?;
    if blocks == 0 {
        return Err(Error::Graph("a stack needs at least one block".into()));
    }
    let mut b = GraphBuilder::new();
    b.op("x", OpKind::Input, &[]);
    let mut cur = "x".to_string();
    for i in 0..blocks {
        let prefix = stack_prefix(blocks, i);
        cur = emit_block(&mut b, cfg, &cur, &prefix);
    }
    Ok(b.finish(vec![cur]))
}

fn stack_prefix(blocks: usize, i: usize) -> String {
    if blocks == 1 {
        String::new()
    } else {
        format!("blk{i}.")
    }
}

/// Weight layout of a whole stack, manifest order.
pub fn stack_weight_layout(cfg: &BlockConfig, blocks: usize) -> Vec<(String, Vec<usize>)> {
    (0..blocks)
        .flat_map(|i| {
            let prefix = stack_prefix(blocks, i);
            cfg.weight_layout()
                .into_iter()
                .map(move |(name, shape)| (format!("{prefix}{name}"), shape))
        })
        .collect()
}

/// Deterministic random weights for a stack.
pub fn random_stack_weights(cfg: &BlockConfig, blocks: usize, seed: u64) -> WeightStore {
    let mut store = WeightStore::new();
    for i in 0..blocks {
        let per_block = random_weights(cfg, seed.wrapping_add(i as u64));
        let prefix = stack_prefix(blocks, i);
        for (name, shape) in cfg.weight_layout() {
            let t = per_block.get(&name).unwrap().clone();
            let _ = shape;
            store.insert(format!("{prefix}{name}"), t);
        }
    }
    store
}

/// Deterministic random activations in the block's expected input range.
pub fn random_input(cfg: &BlockConfig, seed: u64) -> FloatTensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0xACED);
    let n = cfg.seq_len * cfg.d_model;
    FloatTensor::new(
        vec![cfg.seq_len, cfg.d_model],
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fxp::LOW;
    use crate::graph::{execute_plain, execute_secure, infer_types, insert_casts, PrecisionMap};
    use crate::oracle;
    use std::collections::HashMap;

    fn small_cfg() -> BlockConfig {
        BlockConfig {
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            seq_len: 4,
            ..BlockConfig::default()
        }
    }

    fn run_both(g: &Graph, cfg: &BlockConfig, seed: u64) -> (FloatTensor, FloatTensor) {
        let typed = insert_casts(&infer_types(g, &PrecisionMap::quantized()).unwrap()).unwrap();
        let weights = random_weights(cfg, seed);
        let mut inputs = HashMap::new();
        inputs.insert("x".to_string(), random_input(cfg, seed));
        let plain = execute_plain(&typed, &inputs, &weights).unwrap();
        let (secure, _) = execute_secure(&typed, &inputs, &weights, seed).unwrap();
        (
            plain.into_iter().next().unwrap(),
            secure.into_iter().next().unwrap(),
        )
    }

    #[test]
    fn weight_files_round_trip() {
        let cfg = small_cfg();
        let store = random_weights(&cfg, 5);
        let dir = std::env::temp_dir().join(format!("triq_wtest_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let man = dir.join("weights.json");
        let blob = dir.join("weights.bin");
        save_weights(&store, &cfg.weight_layout(), &man, &blob).unwrap();
        let loaded = load_weights(&man, &blob).unwrap();
        for (name, _) in cfg.weight_layout() {
            let a = store.get(&name).unwrap();
            let b = loaded.get(&name).unwrap();
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-6, "{name}: {x} vs {y}");
            }
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn single_token_attention_is_v_projection() {
        // softmax over one position is exactly 1, so attention reduces to
        // the V path times the output projection
        let cfg = BlockConfig {
            seq_len: 1,
            mask_mode: MaskMode::None,
            ..small_cfg()
        };
        let g = build_attention(&cfg).unwrap();
        let typed = insert_casts(&infer_types(&g, &PrecisionMap::quantized()).unwrap()).unwrap();
        let weights = random_weights(&cfg, 9);
        let mut inputs = HashMap::new();
        inputs.insert("x".to_string(), random_input(&cfg, 9));
        let out = execute_plain(&typed, &inputs, &weights).unwrap();

        // reference: x wv wo in the same fixed-point pipeline
        let x = crate::fxp::encode(inputs.get("x").unwrap(), LOW);
        let wv = crate::fxp::encode(weights.get("wv").unwrap(), LOW);
        let wo = crate::fxp::encode(weights.get("wo").unwrap(), LOW);
        let v = oracle::matmul_trunc_plain(&x, &wv, LOW.frac);
        let want = oracle::matmul_trunc_plain(&v, &wo, LOW.frac);
        let want = crate::fxp::decode(&want, LOW).unwrap();
        for (a, b) in out[0].data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 8.0 * LOW.ulp(), "{a} vs {b}");
        }
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let cfg = small_cfg();
        let g = build_attention(&cfg).unwrap();
        let typed = insert_casts(&infer_types(&g, &PrecisionMap::quantized()).unwrap()).unwrap();
        let weights = random_weights(&cfg, 11);
        // probe: feed a spike at the final position; earlier positions of
        // the probs tensor must not attend to it
        let mut inputs = HashMap::new();
        inputs.insert("x".to_string(), random_input(&cfg, 11));
        // read the probs node by making it the graph output
        let mut g2 = g.clone();
        g2.outputs = vec!["probs".into()];
        let typed2 = insert_casts(&infer_types(&g2, &PrecisionMap::quantized()).unwrap()).unwrap();
        let probs = execute_plain(&typed2, &inputs, &weights).unwrap();
        let s = cfg.seq_len;
        let p = &probs[0];
        for head in 0..cfg.n_heads {
            for i in 0..s {
                for j in i + 1..s {
                    let v = p.data()[head * s * s + i * s + j];
                    assert!(
                        v.abs() <= 2.0 * LOW.ulp(),
                        "head {head} position {i} attends to future {j}: {v}"
                    );
                }
            }
        }
        let _ = typed;
    }

    #[test]
    fn block_secure_matches_oracle() {
        let cfg = small_cfg();
        let g = build_block(&cfg).unwrap();
        let (plain, secure) = run_both(&g, &cfg, 13);
        let m = oracle::metrics(secure.data(), plain.data());
        assert!(m.max_abs <= 2f64.powi(-5), "max abs {}", m.max_abs);
    }

    #[test]
    fn gelu_modes_differ_on_negative_inputs() {
        let cfg = small_cfg();
        let quad = BlockConfig {
            gelu_mode: GeluMode::Quad,
            ..cfg
        };
        let poly = BlockConfig {
            gelu_mode: GeluMode::Poly,
            ..cfg
        };
        let gq = build_ffn(&quad).unwrap();
        let gp = build_ffn(&poly).unwrap();
        let (pq, _) = run_both(&gq, &quad, 17);
        let (pp, _) = run_both(&gp, &poly, 17);
        let diff = oracle::metrics(pq.data(), pp.data());
        assert!(
            diff.max_abs > LOW.ulp(),
            "activation modes should disagree somewhere"
        );
    }

    #[test]
    fn two_block_stack_tracks_oracle() {
        let cfg = small_cfg();
        let g = build_stack(&cfg, 2).unwrap();
        let typed = insert_casts(&infer_types(&g, &PrecisionMap::quantized()).unwrap()).unwrap();
        let weights = random_stack_weights(&cfg, 2, 23);
        let mut inputs = HashMap::new();
        inputs.insert("x".to_string(), random_input(&cfg, 23));
        let plain = execute_plain(&typed, &inputs, &weights).unwrap();
        let (secure, _) = execute_secure(&typed, &inputs, &weights, 23).unwrap();
        let m = oracle::metrics(secure[0].data(), plain[0].data());
        assert!(
            m.max_abs <= 2.0 * 2f64.powi(-5),
            "stack max abs {}",
            m.max_abs
        );
        // per-block weights are distinct names
        assert!(weights.get("blk0.wq").is_ok() && weights.get("blk1.wq").is_ok());
    }

    #[test]
    fn zero_ffn_weights_pass_residual_through() {
        let cfg = small_cfg();
        let g = build_ffn(&cfg).unwrap();
        let typed = insert_casts(&infer_types(&g, &PrecisionMap::quantized()).unwrap()).unwrap();
        let mut weights = WeightStore::new();
        for (name, shape) in cfg.weight_layout() {
            let n: usize = shape.iter().product();
            weights.insert(name, FloatTensor::new(shape, vec![0.0; n]));
        }
        let mut inputs = HashMap::new();
        inputs.insert("x".to_string(), random_input(&cfg, 19));
        let out = execute_plain(&typed, &inputs, &weights).unwrap();
        // gelu(0) = 0.5 rows through a zero w1 stay zero
        for v in out[0].data() {
            assert_eq!(*v, 0.0);
        }
    }
}
