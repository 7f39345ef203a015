//! Typed tensor DAGs: precision annotation, automatic cast insertion, and a
//! dual secure/plaintext executor.
//!
//! A graph arrives as an untyped node list (JSON on disk). The compiler
//! assigns every node an input, compute and output fixed-point type from a
//! precision map, then inserts the minimal up/down casts so that every edge
//! connects equal types. The secure executor dispatches each node to the
//! ring of its compute type; the plaintext executor runs the fixed-point
//! oracle over the very same typed graph.

use crate::error::{Error, Result};
use crate::fxp::{self, FloatTensor, FxpType, RingTensor};
use crate::nonlinear;
use crate::oracle;
use crate::rss::{self, RssShare};
use crate::runtime::{run_protocol, PartyCtx};
use crate::transport::CommStats;
use crate::typecast;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

#[derive(Serialize, Deserialize, Copy, Clone, PartialEq, Eq, Debug, Hash)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Input,
    Const,
    Matmul,
    Add,
    Sub,
    Mul,
    Div,
    Transpose,
    Reshape,
    GeluQuad,
    GeluPoly,
    Softmax,
    Layernorm,
    Max,
    Sum,
    ExpNeg,
    Recip,
    Upcast,
    Downcast,
}

impl OpKind {
    fn arity(self) -> Option<usize> {
        match self {
            OpKind::Input | OpKind::Const => Some(0),
            OpKind::Matmul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => Some(2),
            OpKind::Layernorm => Some(3),
            _ => Some(1),
        }
    }
}

/// Per-node attributes; only the fields the op kind needs are set.
#[derive(Serialize, Deserialize, Clone, Debug, Default, PartialEq)]
pub struct Attrs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perm: Option<Vec<usize>>,
    /// Inline constant payload (row-major, combined with `shape`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<f64>>,
    /// Constant filled with one value (combined with `shape`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fill: Option<f64>,
    /// Constant loaded from the weight store under this name; weights are
    /// secret inputs, unlike inline constants which are public.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Cast target for explicit upcast/downcast nodes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cast_to: Option<FxpType>,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct NodeSpec {
    pub id: String,
    pub op: OpKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub attrs: Attrs,
}

/// Untyped graph, the on-disk format.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct Graph {
    pub nodes: Vec<NodeSpec>,
    pub outputs: Vec<String>,
}

impl Graph {
    pub fn from_json(s: &str) -> Result<Graph> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}

/// Which precision class each operator belongs to.
fn precision_class(op: OpKind) -> PrecisionClass {
    match op {
        OpKind::GeluPoly
        | OpKind::ExpNeg
        | OpKind::Recip
        | OpKind::Div
        | OpKind::Sum
        | OpKind::Softmax
        | OpKind::Layernorm => PrecisionClass::NonLinear,
        _ => PrecisionClass::Linear,
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
enum PrecisionClass {
    Linear,
    NonLinear,
}

/// Layer-category to fixed-point-type assignment.
#[derive(Serialize, Deserialize, Copy, Clone, Debug, PartialEq, Eq)]
pub struct PrecisionMap {
    /// Linear algebra, comparisons, data movement.
    pub linear: FxpType,
    /// Softmax/layernorm/exponential internals and other precision-hungry ops.
    pub nonlinear: FxpType,
    /// Type required at the graph outputs.
    pub output: FxpType,
}

impl PrecisionMap {
    /// The layer-wise quantized assignment.
    pub fn quantized() -> Self {
        PrecisionMap {
            linear: fxp::LOW,
            nonlinear: fxp::HIGH,
            output: fxp::LOW,
        }
    }

    /// Everything in one ring (the unquantized baseline).
    pub fn uniform(t: FxpType) -> Self {
        PrecisionMap {
            linear: t,
            nonlinear: t,
            output: t,
        }
    }

    fn type_of(&self, class: PrecisionClass) -> FxpType {
        match class {
            PrecisionClass::Linear => self.linear,
            PrecisionClass::NonLinear => self.nonlinear,
        }
    }
}

/// A node with assigned types. `input_types[i]` is what the executor needs
/// on edge `i`; `output` is what it produces.
#[derive(Clone, Debug)]
pub struct TypedNode {
    pub spec: NodeSpec,
    pub input_types: Vec<FxpType>,
    pub compute: FxpType,
    pub output: FxpType,
}

/// Typed DAG in topological order.
#[derive(Clone, Debug)]
pub struct TypedGraph {
    pub nodes: Vec<TypedNode>,
    pub outputs: Vec<String>,
    pub map: PrecisionMap,
}

impl TypedGraph {
    pub fn node(&self, id: &str) -> Option<&TypedNode> {
        self.nodes.iter().find(|n| n.spec.id == id)
    }

    /// Back to the untyped format (including any inserted cast nodes), such
    /// that retyping it reproduces this graph.
    pub fn to_graph(&self) -> Graph {
        Graph {
            nodes: self.nodes.iter().map(|n| n.spec.clone()).collect(),
            outputs: self.outputs.clone(),
        }
    }
}

fn topo_order(graph: &Graph) -> Result<Vec<usize>> {
    let index: HashMap<&str, usize> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    if index.len() != graph.nodes.len() {
        return Err(Error::Graph("duplicate node id".into()));
    }
    let mut indegree = vec![0usize; graph.nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); graph.nodes.len()];
    for (i, n) in graph.nodes.iter().enumerate() {
        if let Some(a) = n.op.arity() {
            if n.op != OpKind::Input && n.op != OpKind::Const && n.inputs.len() != a {
                return Err(Error::Graph(format!(
                    "node {} ({:?}) expects {} inputs, got {}",
                    n.id,
                    n.op,
                    a,
                    n.inputs.len()
                )));
            }
        }
        for src in &n.inputs {
            let j = *index
                .get(src.as_str())
                .ok_or_else(|| Error::Graph(format!("node {} reads unknown input {src}", n.id)))?;
            consumers[j].push(i);
            indegree[i] += 1;
        }
    }
    let mut ready: Vec<usize> = (0..graph.nodes.len())
        .filter(|&i| indegree[i] == 0)
        .collect();
    ready.sort();
    let mut order = Vec::with_capacity(graph.nodes.len());
    let mut queue = std::collections::VecDeque::from(ready);
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if order.len() != graph.nodes.len() {
        return Err(Error::Graph("graph contains a cycle".into()));
    }
    for out in &graph.outputs {
        if !index.contains_key(out.as_str()) {
            return Err(Error::Graph(format!("unknown output id {out}")));
        }
    }
    Ok(order)
}

/// Annotate every node with input/compute/output types from the map.
/// Constants take the type their first consumer expects.
pub fn infer_types(graph: &Graph, map: &PrecisionMap) -> Result<TypedGraph> {
    let order = topo_order(graph)?;
    let mut nodes: Vec<TypedNode> = Vec::with_capacity(order.len());
    for &i in &order {
        let spec = graph.nodes[i].clone();
        let class = precision_class(spec.op);
        let compute = map.type_of(class);
        let (input_types, output) = match spec.op {
            OpKind::Input => (vec![], map.linear),
            OpKind::Const => (vec![], map.linear), // refined below
            OpKind::Softmax | OpKind::Layernorm => {
                // fused kernels: low-precision edges, high-precision interior
                let edge = map.linear;
                let mut ins = vec![edge];
                if spec.op == OpKind::Layernorm {
                    ins.push(compute);
                    ins.push(compute);
                }
                (ins, edge)
            }
            OpKind::Upcast | OpKind::Downcast => {
                let to = spec
                    .attrs
                    .cast_to
                    .ok_or_else(|| Error::Graph(format!("cast node {} lacks cast_to", spec.id)))?;
                // the source type is the producer's output, resolved below
                (vec![to], to)
            }
            _ => {
                let arity = spec.op.arity().unwrap_or(spec.inputs.len());
                (vec![compute; arity], compute)
            }
        };
        let compute = match spec.op {
            OpKind::Upcast | OpKind::Downcast => output,
            _ => compute,
        };
        nodes.push(TypedNode {
            spec,
            input_types,
            compute,
            output,
        });
    }

    // resolve cast sources and const consumer types
    let mut typed = TypedGraph {
        nodes,
        outputs: graph.outputs.clone(),
        map: *map,
    };
    let out_types: HashMap<String, FxpType> = typed
        .nodes
        .iter()
        .map(|n| (n.spec.id.clone(), n.output))
        .collect();
    for n in typed.nodes.iter_mut() {
        if matches!(n.spec.op, OpKind::Upcast | OpKind::Downcast) {
            let src = out_types
                .get(&n.spec.inputs[0])
                .ok_or_else(|| Error::Graph("cast source missing".into()))?;
            n.input_types = vec![*src];
        }
    }
    // constants are encoded at whatever their first consumer needs
    let mut const_types: HashMap<String, FxpType> = HashMap::new();
    for n in &typed.nodes {
        for (slot, src) in n.spec.inputs.iter().enumerate() {
            const_types
                .entry(src.clone())
                .or_insert(n.input_types[slot]);
        }
    }
    for n in typed.nodes.iter_mut() {
        if n.spec.op == OpKind::Const {
            if let Some(t) = const_types.get(&n.spec.id) {
                n.output = *t;
                n.compute = *t;
            }
        }
    }
    Ok(typed)
}

/// Insert the minimal cast nodes so every edge connects equal types, and
/// cast graph outputs to the map's output type. Idempotent.
pub fn insert_casts(typed: &TypedGraph) -> Result<TypedGraph> {
    let mut out_types: HashMap<String, FxpType> = typed
        .nodes
        .iter()
        .map(|n| (n.spec.id.clone(), n.output))
        .collect();
    let mut new_nodes: Vec<TypedNode> = Vec::new();
    // (source id, target type) -> cast node id
    let mut made: HashMap<(String, FxpType), String> = HashMap::new();

    let mut cast_into =
        |src: &str, from: FxpType, to: FxpType, new_nodes: &mut Vec<TypedNode>| -> Result<String> {
            if let Some(id) = made.get(&(src.to_string(), to)) {
                return Ok(id.clone());
            }
            let op = if to.bits > from.bits {
                typecast::check_upcast(from, to)?;
                OpKind::Upcast
            } else {
                typecast::check_downcast(from, to)?;
                OpKind::Downcast
            };
            let id = format!("{src}.cast{}f{}", to.bits, to.frac);
            new_nodes.push(TypedNode {
                spec: NodeSpec {
                    id: id.clone(),
                    op,
                    inputs: vec![src.to_string()],
                    attrs: Attrs {
                        cast_to: Some(to),
                        ..Attrs::default()
                    },
                },
                input_types: vec![from],
                compute: to,
                output: to,
            });
            made.insert((src.to_string(), to), id.clone());
            Ok(id)
        };

    for node in &typed.nodes {
        let mut spec = node.spec.clone();
        for (slot, src) in spec.inputs.iter_mut().enumerate() {
            let want = node.input_types[slot];
            let have = *out_types
                .get(src.as_str())
                .ok_or_else(|| Error::Graph(format!("unknown edge source {src}")))?;
            if have != want {
                *src = cast_into(src, have, want, &mut new_nodes)?;
            }
        }
        new_nodes.push(TypedNode {
            spec,
            ..node.clone()
        });
    }

    let mut outputs = Vec::with_capacity(typed.outputs.len());
    for out in &typed.outputs {
        let have = out_types[out.as_str()];
        if have != typed.map.output {
            outputs.push(cast_into(out, have, typed.map.output, &mut new_nodes)?);
            out_types.insert(outputs.last().unwrap().clone(), typed.map.output);
        } else {
            outputs.push(out.clone());
        }
    }

    let graph = Graph {
        nodes: new_nodes.iter().map(|n| n.spec.clone()).collect(),
        outputs: outputs.clone(),
    };
    let order = topo_order(&graph)?;
    let nodes = order.into_iter().map(|i| new_nodes[i].clone()).collect();
    Ok(TypedGraph {
        nodes,
        outputs,
        map: typed.map,
    })
}

/// Check that every edge connects equal types and every output has the
/// mapped output type.
pub fn validate(typed: &TypedGraph) -> Result<()> {
    let out_types: HashMap<&str, FxpType> = typed
        .nodes
        .iter()
        .map(|n| (n.spec.id.as_str(), n.output))
        .collect();
    let mut seen: HashSet<&str> = HashSet::new();
    for n in &typed.nodes {
        for (slot, src) in n.spec.inputs.iter().enumerate() {
            if !seen.contains(src.as_str()) {
                return Err(Error::Graph(format!(
                    "node {} consumes {} before it is produced",
                    n.spec.id, src
                )));
            }
            let have = out_types[src.as_str()];
            let want = n.input_types[slot];
            if have != want {
                return Err(Error::Graph(format!(
                    "edge {} -> {} carries {} but consumer expects {}",
                    src, n.spec.id, have, want
                )));
            }
        }
        seen.insert(n.spec.id.as_str());
    }
    for out in &typed.outputs {
        let have = out_types
            .get(out.as_str())
            .ok_or_else(|| Error::Graph(format!("unknown output {out}")))?;
        if *have != typed.map.output {
            return Err(Error::Graph(format!(
                "output {out} has {have}, map requires {}",
                typed.map.output
            )));
        }
    }
    Ok(())
}

/// Deterministic topological listing with type annotations.
pub fn dump(typed: &TypedGraph) -> String {
    let mut s = String::new();
    for n in &typed.nodes {
        let ins = n
            .spec
            .inputs
            .iter()
            .zip(&n.input_types)
            .map(|(i, t)| format!("{i}:{t}"))
            .collect::<Vec<_>>()
            .join(", ");
        s.push_str(&format!(
            "%{} = {:?}({}) compute={} out={}\n",
            n.spec.id, n.spec.op, ins, n.compute, n.output
        ));
    }
    for out in &typed.outputs {
        s.push_str(&format!("output %{out}\n"));
    }
    s
}

// ---------------------------------------------------------------------------
// execution
// ---------------------------------------------------------------------------

/// Secret weights referenced by const nodes.
#[derive(Clone, Debug, Default)]
pub struct WeightStore {
    tensors: HashMap<String, FloatTensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: FloatTensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&FloatTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Weights(format!("missing weight {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }
}

fn const_payload(node: &TypedNode, weights: &WeightStore) -> Result<FloatTensor> {
    let a = &node.spec.attrs;
    if let Some(name) = &a.weight {
        return Ok(weights.get(name)?.clone());
    }
    let shape = a
        .shape
        .clone()
        .ok_or_else(|| Error::Graph(format!("const {} lacks shape", node.spec.id)))?;
    if let Some(v) = &a.value {
        return Ok(FloatTensor::new(shape, v.clone()));
    }
    if let Some(fill) = a.fill {
        let n: usize = shape.iter().product();
        return Ok(FloatTensor::new(shape, vec![fill; n]));
    }
    Err(Error::Graph(format!(
        "const {} has no payload",
        node.spec.id
    )))
}

/// Run the typed graph on the fixed-point oracle. Returns the decoded
/// outputs.
pub fn execute_plain(
    typed: &TypedGraph,
    inputs: &HashMap<String, FloatTensor>,
    weights: &WeightStore,
) -> Result<Vec<FloatTensor>> {
    validate(typed)?;
    let mut env: HashMap<String, RingTensor> = HashMap::new();
    for n in &typed.nodes {
        let get = |k: usize| -> &RingTensor { &env[&n.spec.inputs[k]] };
        let t = n.compute;
        let out = match n.spec.op {
            OpKind::Input => {
                let v = inputs
                    .get(&n.spec.id)
                    .ok_or_else(|| Error::Graph(format!("missing input {}", n.spec.id)))?;
                fxp::encode(v, n.output)
            }
            OpKind::Const => fxp::encode(&const_payload(n, weights)?, n.output),
            OpKind::Matmul => oracle::matmul_trunc_plain(get(0), get(1), t.frac),
            OpKind::Mul => oracle::mul_trunc_plain(get(0), get(1), t.frac),
            OpKind::Add => get(0).add(get(1)),
            OpKind::Sub => get(0).sub(get(1)),
            OpKind::Div => {
                let r = oracle::recip_plain(get(1), t);
                oracle::mul_trunc_plain(get(0), &r, t.frac)
            }
            OpKind::Transpose => get(0).transpose(n.spec.attrs.perm.as_ref().expect("perm")),
            OpKind::Reshape => get(0)
                .clone()
                .reshaped(n.spec.attrs.shape.clone().expect("shape")),
            OpKind::GeluQuad => oracle::gelu_quad_plain(get(0), t),
            OpKind::GeluPoly => oracle::gelu_poly_plain(get(0), t),
            OpKind::Softmax => oracle::softmax_plain(get(0), n.input_types[0], t),
            OpKind::Layernorm => {
                let eps = n.spec.attrs.eps.unwrap_or(nonlinear::consts::LAYERNORM_EPS);
                oracle::layernorm_plain(get(0), get(1), get(2), eps, n.input_types[0], t)
            }
            OpKind::Max => oracle::max_last_axis_plain(get(0)),
            OpKind::Sum => get(0).sum_last_axis(true),
            OpKind::ExpNeg => oracle::exp_neg_plain(get(0), t),
            OpKind::Recip => oracle::recip_plain(get(0), t),
            OpKind::Upcast => oracle::upcast_plain(get(0), n.input_types[0], n.output),
            OpKind::Downcast => oracle::downcast_plain(get(0), n.input_types[0], n.output),
        };
        env.insert(n.spec.id.clone(), out);
    }
    let mut outs = Vec::new();
    for id in &typed.outputs {
        outs.push(fxp::decode(&env[id], typed.map.output)?);
    }
    Ok(outs)
}

/// Run the typed graph on the three-party runtime. Inputs and weight
/// constants are secret-shared; inline constants are public. Returns the
/// decoded outputs and the traffic of the run.
pub fn execute_secure(
    typed: &TypedGraph,
    inputs: &HashMap<String, FloatTensor>,
    weights: &WeightStore,
    seed: u64,
) -> Result<(Vec<FloatTensor>, CommStats)> {
    validate(typed)?;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x5EED);

    // deal shares of every secret leaf up front
    let mut dealt: HashMap<String, [RssShare; 3]> = HashMap::new();
    for n in &typed.nodes {
        match n.spec.op {
            OpKind::Input => {
                let v = inputs
                    .get(&n.spec.id)
                    .ok_or_else(|| Error::Graph(format!("missing input {}", n.spec.id)))?;
                let enc = fxp::encode(v, n.output);
                dealt.insert(n.spec.id.clone(), rss::share(&enc, n.output, &mut rng)?);
            }
            OpKind::Const if n.spec.attrs.weight.is_some() => {
                let enc = fxp::encode(&const_payload(n, weights)?, n.output);
                dealt.insert(n.spec.id.clone(), rss::share(&enc, n.output, &mut rng)?);
            }
            _ => {}
        }
    }

    let dealt = std::sync::Mutex::new(dealt);
    let typed_ref = &typed;
    let weights_ref = weights;
    let (outs, stats) = run_protocol(seed, move |ctx| {
        party_walk(ctx, typed_ref, weights_ref, &dealt)
    })?;
    let [o0, o1, o2] = outs;
    let mut decoded = Vec::new();
    for ((a, b), c) in o0.into_iter().zip(o1).zip(o2) {
        let revealed = rss::reveal(&[a, b, c])?;
        decoded.push(fxp::decode(&revealed, typed.map.output)?);
    }
    Ok((decoded, stats))
}

fn party_walk(
    ctx: &mut PartyCtx,
    typed: &TypedGraph,
    weights: &WeightStore,
    dealt: &std::sync::Mutex<HashMap<String, [RssShare; 3]>>,
) -> Result<Vec<RssShare>> {
    let me = ctx.id().index();
    let mut env: HashMap<String, RssShare> = HashMap::new();
    for n in &typed.nodes {
        let t = n.compute;
        let out = match n.spec.op {
            OpKind::Input => dealt.lock().unwrap()[&n.spec.id][me].clone(),
            OpKind::Const => {
                if n.spec.attrs.weight.is_some() {
                    dealt.lock().unwrap()[&n.spec.id][me].clone()
                } else {
                    let enc = fxp::encode(&const_payload(n, weights)?, n.output);
                    RssShare::from_public(ctx.id(), &enc, n.output)
                }
            }
            OpKind::Matmul => {
                let (a, b) = (&env[&n.spec.inputs[0]], &env[&n.spec.inputs[1]]);
                rss::matmul_trunc(ctx, a, b, t.frac)?
            }
            OpKind::Mul => {
                let (a, b) = (&env[&n.spec.inputs[0]], &env[&n.spec.inputs[1]]);
                rss::mul_trunc(ctx, a, b, t.frac)?
            }
            OpKind::Add => env[&n.spec.inputs[0]].add(&env[&n.spec.inputs[1]])?,
            OpKind::Sub => env[&n.spec.inputs[0]].sub(&env[&n.spec.inputs[1]])?,
            OpKind::Div => {
                let r = nonlinear::recip(ctx, &env[&n.spec.inputs[1]])?;
                rss::mul_trunc(ctx, &env[&n.spec.inputs[0]], &r, t.frac)?
            }
            OpKind::Transpose => {
                env[&n.spec.inputs[0]].transpose(n.spec.attrs.perm.as_ref().expect("perm"))
            }
            OpKind::Reshape => {
                env[&n.spec.inputs[0]].reshaped(n.spec.attrs.shape.clone().expect("shape"))
            }
            OpKind::GeluQuad => nonlinear::gelu_quad(ctx, &env[&n.spec.inputs[0]])?,
            OpKind::GeluPoly => nonlinear::gelu_poly(ctx, &env[&n.spec.inputs[0]])?,
            OpKind::Softmax => nonlinear::softmax(ctx, &env[&n.spec.inputs[0]], t)?,
            OpKind::Layernorm => {
                let eps = n.spec.attrs.eps.unwrap_or(nonlinear::consts::LAYERNORM_EPS);
                nonlinear::layernorm(
                    ctx,
                    &env[&n.spec.inputs[0]],
                    &env[&n.spec.inputs[1]],
                    &env[&n.spec.inputs[2]],
                    eps,
                    t,
                )?
            }
            OpKind::Max => nonlinear::max_last_axis(ctx, &env[&n.spec.inputs[0]])?,
            OpKind::Sum => env[&n.spec.inputs[0]].sum_last_axis(true),
            OpKind::ExpNeg => nonlinear::exp_neg(ctx, &env[&n.spec.inputs[0]])?,
            OpKind::Recip => nonlinear::recip(ctx, &env[&n.spec.inputs[0]])?,
            OpKind::Upcast => typecast::upcast(ctx, &env[&n.spec.inputs[0]], n.output)?,
            OpKind::Downcast => typecast::downcast(&env[&n.spec.inputs[0]], n.output)?,
        };
        env.insert(n.spec.id.clone(), out);
    }
    Ok(typed.outputs.iter().map(|id| env[id].clone()).collect())
}

/// The decomposed softmax DAG (row shape from the reference drawing):
/// max, subtract, exponential, sum, divide as individual nodes.
pub fn softmax_dag() -> Graph {
    let n = |id: &str, op: OpKind, inputs: &[&str]| NodeSpec {
        id: id.into(),
        op,
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
        attrs: Attrs::default(),
    };
    Graph {
        nodes: vec![
            n("x", OpKind::Input, &[]),
            n("max", OpKind::Max, &["x"]),
            n("sub", OpKind::Sub, &["x", "max"]),
            n("exp", OpKind::ExpNeg, &["sub"]),
            n("sum", OpKind::Sum, &["exp"]),
            n("div", OpKind::Div, &["exp", "sum"]),
        ],
        outputs: vec!["div".into()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fxp::{HIGH, LOW};

    fn node(id: &str, op: OpKind, inputs: &[&str]) -> NodeSpec {
        NodeSpec {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            attrs: Attrs::default(),
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let g = Graph {
            nodes: vec![
                node("a", OpKind::ExpNeg, &["b"]),
                node("b", OpKind::ExpNeg, &["a"]),
            ],
            outputs: vec!["a".into()],
        };
        assert!(matches!(
            infer_types(&g, &PrecisionMap::quantized()),
            Err(Error::Graph(_))
        ));
    }

    #[test]
    fn unknown_op_rejected_at_parse() {
        let s = r#"{"nodes":[{"id":"a","op":"frobnicate"}],"outputs":[]}"#;
        assert!(Graph::from_json(s).is_err());
    }

    #[test]
    fn matmul_types_linear_low() {
        let g = Graph {
            nodes: vec![
                node("x", OpKind::Input, &[]),
                node("y", OpKind::Input, &[]),
                node("m", OpKind::Matmul, &["x", "y"]),
            ],
            outputs: vec!["m".into()],
        };
        let t = infer_types(&g, &PrecisionMap::quantized()).unwrap();
        assert_eq!(t.node("m").unwrap().compute, LOW);
    }

    #[test]
    fn softmax_dag_gets_exactly_one_upcast_and_one_downcast() {
        let g = softmax_dag();
        let typed = infer_types(&g, &PrecisionMap::quantized()).unwrap();
        // fused edges before cast insertion: softmax-free decomposed graph
        assert_eq!(typed.node("exp").unwrap().compute, HIGH);
        assert_eq!(typed.node("max").unwrap().compute, LOW);
        let cast = insert_casts(&typed).unwrap();
        validate(&cast).unwrap();
        let ups = cast
            .nodes
            .iter()
            .filter(|n| n.spec.op == OpKind::Upcast)
            .count();
        let downs = cast
            .nodes
            .iter()
            .filter(|n| n.spec.op == OpKind::Downcast)
            .count();
        assert_eq!(ups, 1, "{}", dump(&cast));
        assert_eq!(downs, 1, "{}", dump(&cast));
        // the upcast feeds the exponential; the downcast serves the output
        let exp = cast.node("exp").unwrap();
        let up_id = &exp.spec.inputs[0];
        assert_eq!(cast.node(up_id).unwrap().spec.op, OpKind::Upcast);
        assert_eq!(
            cast.node(&cast.outputs[0]).unwrap().spec.op,
            OpKind::Downcast
        );
    }

    #[test]
    fn insert_casts_is_idempotent() {
        let typed = infer_types(&softmax_dag(), &PrecisionMap::quantized()).unwrap();
        let once = insert_casts(&typed).unwrap();
        let twice = insert_casts(&once).unwrap();
        assert_eq!(once.nodes.len(), twice.nodes.len());
        assert_eq!(dump(&once), dump(&twice));
    }

    #[test]
    fn already_consistent_graph_unchanged() {
        let g = Graph {
            nodes: vec![
                node("x", OpKind::Input, &[]),
                node("y", OpKind::GeluQuad, &["x"]),
            ],
            outputs: vec!["y".into()],
        };
        let typed = infer_types(&g, &PrecisionMap::quantized()).unwrap();
        let cast = insert_casts(&typed).unwrap();
        assert_eq!(cast.nodes.len(), typed.nodes.len());
    }

    #[test]
    fn uniform_map_inserts_nothing() {
        let typed = infer_types(&softmax_dag(), &PrecisionMap::uniform(HIGH)).unwrap();
        let cast = insert_casts(&typed).unwrap();
        assert_eq!(cast.nodes.len(), typed.nodes.len());
        validate(&cast).unwrap();
    }

    #[test]
    fn removing_an_inserted_cast_breaks_validation() {
        let typed = infer_types(&softmax_dag(), &PrecisionMap::quantized()).unwrap();
        let cast = insert_casts(&typed).unwrap();
        // splice the upcast out: rewire its consumer to the original source
        let up = cast
            .nodes
            .iter()
            .find(|n| n.spec.op == OpKind::Upcast)
            .unwrap()
            .spec
            .clone();
        let mut broken = cast.clone();
        broken.nodes.retain(|n| n.spec.id != up.id);
        for n in broken.nodes.iter_mut() {
            for i in n.spec.inputs.iter_mut() {
                if *i == up.id {
                    *i = up.inputs[0].clone();
                }
            }
        }
        assert!(validate(&broken).is_err());
    }

    #[test]
    fn dump_round_trips_through_graph_format() {
        let typed = infer_types(&softmax_dag(), &PrecisionMap::quantized()).unwrap();
        let cast = insert_casts(&typed).unwrap();
        let json = cast.to_graph().to_json();
        let reparsed = Graph::from_json(&json).unwrap();
        let retyped =
            insert_casts(&infer_types(&reparsed, &PrecisionMap::quantized()).unwrap()).unwrap();
        assert_eq!(dump(&cast), dump(&retyped));
    }

    #[test]
    fn empty_graph_executes_to_empty_outputs() {
        let g = Graph {
            nodes: vec![],
            outputs: vec![],
        };
        let typed = infer_types(&g, &PrecisionMap::quantized()).unwrap();
        let outs = execute_plain(&typed, &HashMap::new(), &WeightStore::new()).unwrap();
        assert!(outs.is_empty());
        let (outs, stats) =
            execute_secure(&typed, &HashMap::new(), &WeightStore::new(), 1).unwrap();
        assert!(outs.is_empty());
        assert_eq!(stats.total_bytes(), 0);
    }

    #[test]
    fn single_matmul_secure_matches_plain() {
        let mut g = Graph {
            nodes: vec![
                node("x", OpKind::Input, &[]),
                node("w", OpKind::Const, &[]),
                node("m", OpKind::Matmul, &["x", "w"]),
            ],
            outputs: vec!["m".into()],
        };
        g.nodes[1].attrs.weight = Some("w".into());
        let typed = insert_casts(&infer_types(&g, &PrecisionMap::quantized()).unwrap()).unwrap();
        let mut weights = WeightStore::new();
        weights.insert(
            "w",
            FloatTensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]),
        );
        let mut inputs = HashMap::new();
        inputs.insert(
            "x".to_string(),
            FloatTensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]),
        );
        let plain = execute_plain(&typed, &inputs, &weights).unwrap();
        let (secure, stats) = execute_secure(&typed, &inputs, &weights, 7).unwrap();
        assert!(stats.total_bytes() > 0);
        for (p, s) in plain[0].data().iter().zip(secure[0].data()) {
            assert!((p - s).abs() <= 2.0 * LOW.ulp(), "{p} vs {s}");
        }
    }

    #[test]
    fn softmax_dag_executes_on_both_backends() {
        let typed = insert_casts(&infer_types(&softmax_dag(), &PrecisionMap::quantized()).unwrap())
            .unwrap();
        let vals: Vec<f64> = (0..80)
            .map(|i| ((i * 37 % 23) as f64 - 11.0) / 4.0)
            .collect();
        let mut inputs = HashMap::new();
        inputs.insert("x".to_string(), FloatTensor::new(vec![8, 10], vals.clone()));
        let plain = execute_plain(&typed, &inputs, &WeightStore::new()).unwrap();
        let (secure, _) = execute_secure(&typed, &inputs, &WeightStore::new(), 3).unwrap();
        // low-precision outputs carry a floor residue of up to one ulp per
        // entry; the tight normalization bound is checked on the wide stage
        for r in 0..8 {
            let s: f64 = plain[0].data()[r * 10..(r + 1) * 10].iter().sum();
            assert!(
                (s - 1.0).abs() <= 2f64.powi(-7) + 10.0 * LOW.ulp(),
                "plain row {r}: {s}"
            );
        }
        for (p, s) in plain[0].data().iter().zip(secure[0].data()) {
            assert!((p - s).abs() <= 4.0 * LOW.ulp(), "{p} vs {s}");
        }

        // same graph kept in the wide ring end to end: rows sum to one
        let map_hi = PrecisionMap {
            linear: LOW,
            nonlinear: HIGH,
            output: HIGH,
        };
        let typed_hi = insert_casts(&infer_types(&softmax_dag(), &map_hi).unwrap()).unwrap();
        let plain_hi = execute_plain(&typed_hi, &inputs, &WeightStore::new()).unwrap();
        let (secure_hi, _) = execute_secure(&typed_hi, &inputs, &WeightStore::new(), 4).unwrap();
        for out in [&plain_hi[0], &secure_hi[0]] {
            for r in 0..8 {
                let s: f64 = out.data()[r * 10..(r + 1) * 10].iter().sum();
                assert!((s - 1.0).abs() <= 2f64.powi(-7), "wide row {r} sums to {s}");
            }
        }
    }
}
