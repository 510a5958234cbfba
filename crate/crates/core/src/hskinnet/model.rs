use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layers::{
    bone_to_vertex, dense, global_branch, linear, mesh_conv, neighbor_segments, skeleton_conv, vertex_to_bone, Dense,
    EdgeWeights, MeshConvWeights,
};
use crate::autodiff::{kaiming_normal, Checkpoint, Segments, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hgraph::{GraphConfig, HeterGraph};
use crate::Scalar;

/// Source of the vertex–bone distance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    Hollow,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub k: usize,
    pub vertex_local: usize,
    pub vertex_global: usize,
    pub bone_local: usize,
    pub bone_global: usize,
    /// Hidden widths of the per-vertex head; the output width is `k`.
    pub head_hidden: Vec<usize>,
    pub lambda_s: f64,
    pub edge_dropout: f64,
    pub head_dropout: f64,
    pub leaky_alpha: f64,
    pub var_damping: f64,
    pub local_stages: usize,
    pub distance: DistanceMode,
    pub smoothing: bool,
    pub resolution: usize,
    pub geo_threshold: f64,
    pub geo_cap: usize,
    pub inverse_eps: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self::full()
    }
}

impl HyperParams {
    pub fn full() -> Self {
        HyperParams {
            k: crate::hgraph::DEFAULT_K,
            vertex_local: 256,
            vertex_global: 512,
            bone_local: 128,
            bone_global: 512,
            head_hidden: vec![1024, 512],
            lambda_s: 0.4,
            edge_dropout: 0.85,
            head_dropout: 0.5,
            leaky_alpha: 0.2,
            var_damping: 0.1,
            local_stages: 3,
            distance: DistanceMode::Hollow,
            smoothing: true,
            resolution: crate::voxelize::DEFAULT_RESOLUTION,
            geo_threshold: crate::hgraph::DEFAULT_GEO_THRESHOLD,
            geo_cap: crate::hgraph::DEFAULT_GEO_CAP,
            inverse_eps: crate::hgraph::DEFAULT_INVERSE_EPS,
        }
    }

    /// Narrow layers for single-core experiments; everything else as `full`.
    pub fn compact() -> Self {
        HyperParams {
            vertex_local: 32,
            vertex_global: 64,
            bone_local: 32,
            bone_global: 64,
            head_hidden: vec![128, 64],
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.k, self.vertex_local, self.vertex_global, self.bone_local, self.bone_global, self.resolution];
        if dims.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::InvalidArgument("all layer widths, K and resolution must be at least 1".into()));
        }
        for (name, p) in [("edge dropout", self.edge_dropout), ("head dropout", self.head_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} {p} not in [0, 1)")));
            }
        }
        if !(self.lambda_s >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_s {} must be non-negative", self.lambda_s)));
        }
        if !(self.geo_threshold > 0.0) || !(self.inverse_eps > 0.0) {
            return Err(Error::InvalidArgument("geodesic threshold and inverse epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Smoothing weight actually applied to the loss.
    pub fn effective_lambda(&self) -> f64 {
        if self.smoothing {
            self.lambda_s
        } else {
            0.0
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            k: self.k,
            geo_threshold: self.geo_threshold,
            geo_cap: self.geo_cap,
            inverse_eps: self.inverse_eps,
        }
    }
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    fan_in: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct DenseIdx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct EdgeIdx {
    w_self: usize,
    w_diff: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct MeshIdx {
    ring: EdgeIdx,
    geo: EdgeIdx,
    merge: DenseIdx,
}

#[derive(Debug, Clone, Copy)]
struct InterIdx {
    b2v: DenseIdx,
    v2b: DenseIdx,
}

/// Parameter positions of every layer, derived from the hyperparameters.
struct Layout {
    specs: Vec<ParamSpec>,
    inter_in: InterIdx,
    mesh: Vec<MeshIdx>,
    skel: Vec<EdgeIdx>,
    inter: Vec<InterIdx>,
    global_mesh: DenseIdx,
    global_skel: DenseIdx,
    head: Vec<DenseIdx>,
}

/// Raw attribute widths.
const BONE_ATTR: usize = 6;

impl Layout {
    fn new(h: &HyperParams) -> Self {
        let mut specs = Vec::new();
        let dense = |specs: &mut Vec<ParamSpec>, name: &str, fin: usize, fout: usize| {
            specs.push(ParamSpec { name: format!("{name}.w"), shape: vec![fin, fout], fan_in: Some(fin) });
            specs.push(ParamSpec { name: format!("{name}.b"), shape: vec![1, fout], fan_in: None });
            DenseIdx { w: specs.len() - 2, b: specs.len() - 1 }
        };
        let edge = |specs: &mut Vec<ParamSpec>, name: &str, fin: usize, fout: usize| {
            for part in ["w_self", "w_diff"] {
                specs.push(ParamSpec { name: format!("{name}.{part}"), shape: vec![fin, fout], fan_in: Some(2 * fin) });
            }
            specs.push(ParamSpec { name: format!("{name}.b"), shape: vec![1, fout], fan_in: None });
            let n = specs.len();
            EdgeIdx { w_self: n - 3, w_diff: n - 2, b: n - 1 }
        };

        let k = h.k;
        let (va, ba) = (k + 3, BONE_ATTR);
        let (fv, fb) = (h.vertex_local, h.bone_local);

        let inter_in = InterIdx {
            b2v: dense(&mut specs, "inter_in.b2v", va + k * ba, va),
            v2b: dense(&mut specs, "inter_in.v2b", ba + 3 * va, ba),
        };
        let mut mesh = Vec::new();
        let mut skel = Vec::new();
        let mut inter = Vec::new();
        for s in 0..=h.local_stages {
            let vin = if s == 0 { va } else { fv };
            let bin = if s == 0 { ba } else { fb };
            mesh.push(MeshIdx {
                ring: edge(&mut specs, &format!("mesh{s}.ring"), vin, fv),
                geo: edge(&mut specs, &format!("mesh{s}.geo"), vin, fv),
                merge: dense(&mut specs, &format!("mesh{s}.merge"), 2 * fv, fv),
            });
            skel.push(edge(&mut specs, &format!("skel{s}"), bin, fb));
            if s > 0 {
                inter.push(InterIdx {
                    b2v: dense(&mut specs, &format!("inter{s}.b2v"), fv + k * fb, fv),
                    v2b: dense(&mut specs, &format!("inter{s}.v2b"), fb + 3 * fv, fb),
                });
            }
        }
        let global_mesh = dense(&mut specs, "global_mesh", fv, h.vertex_global);
        let global_skel = dense(&mut specs, "global_skel", fb, h.bone_global);
        let mut head = Vec::new();
        let mut width = fv + k * fb + h.vertex_global + h.bone_global;
        for (i, &out) in h.head_hidden.iter().chain(std::iter::once(&k)).enumerate() {
            head.push(dense(&mut specs, &format!("head{i}"), width, out));
            width = out;
        }
        Layout { specs, inter_in, mesh, skel, inter, global_mesh, global_skel, head }
    }
}

/// Named parameter tensors in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Kaiming-normal weights, zero biases.
    pub fn init(hyper: &HyperParams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let layout = Layout::new(hyper);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (i, spec) in layout.specs.iter().enumerate() {
            let t = match spec.fan_in {
                Some(fan_in) => kaiming_normal(&spec.shape, fan_in, crate::mix_seed(seed, i as u64))?,
                None => Tensor::zeros(&spec.shape),
            };
            names.push(spec.name.clone());
            tensors.push(t);
        }
        Ok(ModelParams { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let named: Vec<(String, Tensor<T>)> = self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect();
        Checkpoint::from_named(&named)
    }

    /// Loads every parameter the layout expects, checking shapes.
    pub fn from_checkpoint(hyper: &HyperParams, ck: &Checkpoint) -> Result<Self> {
        hyper.validate()?;
        let layout = Layout::new(hyper);
        if ck.params.len() != layout.specs.len() {
            return Err(Error::Schema(format!(
                "checkpoint has {} parameters, architecture needs {}",
                ck.params.len(),
                layout.specs.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for spec in &layout.specs {
            let t: Tensor<T> = ck.tensor(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Schema(format!("parameter {} has shape {:?}, expected {:?}", spec.name, t.shape(), spec.shape)));
            }
            names.push(spec.name.clone());
            tensors.push(t);
        }
        Ok(ModelParams { names, tensors })
    }
}

/// Vertex attributes as the network sees them: positions unchanged,
/// inverse distances compressed by `ln(1 + x)` so clamped entries (up to
/// `1/ε_d`) stay on the scale of the rest.
pub fn network_input<T: Scalar>(attr: &crate::hgraph::Attributes<T>) -> Result<Tensor<T>> {
    let data = attr
        .data
        .iter()
        .enumerate()
        .map(|(i, &x)| if i % attr.cols < 3 { x } else { x.ln_1p() })
        .collect();
    Tensor::matrix(attr.rows, attr.cols, data)
}

/// Index structures of one graph, prepared once and reused every step.
#[derive(Debug, Clone)]
pub struct GraphTensors<T> {
    pub vertex_attr: Tensor<T>,
    pub bone_attr: Tensor<T>,
    pub one_ring: Vec<Vec<usize>>,
    pub one_ring_segments: Segments,
    pub geodesic: Segments,
    pub skeleton: Segments,
    pub influenced: Arc<Segments>,
    pub topk: Arc<Vec<Vec<usize>>>,
    pub topk_columns: Vec<Arc<Vec<usize>>>,
    pub mesh_edges: Arc<Vec<(usize, usize)>>,
}

impl<T: Scalar> GraphTensors<T> {
    pub fn new(g: &HeterGraph<T>) -> Result<Self> {
        let n = g.vertex_count();
        if n == 0 || g.bone_count() == 0 {
            return Err(Error::InvalidArgument("graph needs at least one vertex and one bone".into()));
        }
        let topk_columns = (0..g.k).map(|k| Arc::new(g.topk.iter().map(|row| row[k]).collect())).collect();
        Ok(GraphTensors {
            vertex_attr: network_input(&g.vertex_attr)?,
            bone_attr: Tensor::matrix(g.bone_attr.rows, g.bone_attr.cols, g.bone_attr.data.clone())?,
            one_ring_segments: neighbor_segments(&g.one_ring),
            one_ring: g.one_ring.clone(),
            geodesic: neighbor_segments(&g.geo_neighbors),
            skeleton: neighbor_segments(&g.skel_neighbors),
            influenced: Arc::new(Segments::from_lists(&g.influenced)),
            topk: Arc::new(g.topk.clone()),
            topk_columns,
            mesh_edges: Arc::new(g.mesh_edges.clone()),
        })
    }

    pub fn k(&self) -> usize {
        self.topk_columns.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_attr.rows()
    }

    /// One-ring lists after dropping each undirected edge with probability
    /// `rate`; isolated vertices fall back to a self-loop.
    pub fn dropped_ring(&self, rate: f64, seed: u64) -> Segments {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut lists = vec![Vec::new(); self.vertex_count()];
        for &(a, b) in self.mesh_edges.iter() {
            if rng.random::<f64>() >= rate {
                lists[a].push(b);
                lists[b].push(a);
            }
        }
        neighbor_segments(&lists)
    }
}

/// Stochastic layers on (training) or off (evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Parameters recorded on a tape, plus the layout to address them.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>) -> Result<Self> {
        let vars = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect::<Result<_>>()?;
        Ok(BoundParams { vars })
    }

    /// Wraps leaves already recorded in parameter order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn dense(&self, d: DenseIdx) -> Dense {
        Dense { w: self.vars[d.w], b: self.vars[d.b] }
    }

    fn edge(&self, e: EdgeIdx) -> EdgeWeights {
        EdgeWeights { w_self: self.vars[e.w_self], w_diff: self.vars[e.w_diff], b: self.vars[e.b] }
    }

    fn mesh(&self, m: MeshIdx) -> MeshConvWeights {
        MeshConvWeights { ring: self.edge(m.ring), geo: self.edge(m.geo), merge: self.dense(m.merge) }
    }
}

/// Records the full network and returns the `N × K` logits.
pub fn forward_logits<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    g: &GraphTensors<T>,
    hyper: &HyperParams,
    mode: Mode,
) -> Result<Var> {
    if g.k() != hyper.k || g.vertex_attr.cols() != hyper.k + 3 {
        return Err(Error::shape(
            "forward",
            format!("graph built for K = {}, model expects K = {}", g.k(), hyper.k),
        ));
    }
    let layout = Layout::new(hyper);
    if bound.vars.len() != layout.specs.len() {
        return Err(Error::shape("forward", format!("{} parameters bound, {} expected", bound.vars.len(), layout.specs.len())));
    }
    let alpha = T::lit(hyper.leaky_alpha);
    let damping = T::lit(hyper.var_damping);
    let dropped = match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some(g.dropped_ring(hyper.edge_dropout, crate::mix_seed(seed, 0))),
    };
    let ring = dropped.as_ref().unwrap_or(&g.one_ring_segments);

    let mut fv = tape.leaf(g.vertex_attr.clone())?;
    let mut fb = tape.leaf(g.bone_attr.clone())?;

    let inter = |tape: &mut Tape<T>, fv: Var, fb: Var, idx: InterIdx| -> Result<(Var, Var)> {
        let fv = bone_to_vertex(tape, fv, fb, &g.topk_columns, bound.dense(idx.b2v), alpha)?;
        let fb = vertex_to_bone(tape, fv, fb, &g.influenced, bound.dense(idx.v2b), alpha, damping)?;
        Ok((fv, fb))
    };

    (fv, fb) = inter(tape, fv, fb, layout.inter_in)?;
    let mut globals = None;
    for s in 0..=hyper.local_stages {
        fv = mesh_conv(tape, fv, ring, &g.geodesic, bound.mesh(layout.mesh[s]), alpha)?;
        fb = skeleton_conv(tape, fb, &g.skeleton, bound.edge(layout.skel[s]), alpha)?;
        if s == 0 {
            let gm = global_branch(tape, fv, bound.dense(layout.global_mesh), alpha)?;
            let gs = global_branch(tape, fb, bound.dense(layout.global_skel), alpha)?;
            globals = Some((gm, gs));
        } else {
            (fv, fb) = inter(tape, fv, fb, layout.inter[s - 1])?;
        }
    }
    let (gm, gs) = globals.expect("stage 0 always runs");

    let n = g.vertex_count();
    let broadcast = Arc::new(vec![0; n]);
    let mut parts = vec![fv];
    for col in &g.topk_columns {
        parts.push(tape.gather_rows(fb, col.clone())?);
    }
    parts.push(tape.gather_rows(gm, broadcast.clone())?);
    parts.push(tape.gather_rows(gs, broadcast)?);
    let mut h = tape.concat(&parts)?;

    let last = layout.head.len() - 1;
    for (i, idx) in layout.head.iter().enumerate() {
        if i == last {
            h = linear(tape, h, bound.dense(*idx))?;
        } else {
            h = dense(tape, h, bound.dense(*idx), alpha)?;
            if let Mode::Train { seed } = mode {
                h = tape.dropout(h, hyper.head_dropout, crate::mix_seed(seed, 1000 + i as u64))?;
            }
        }
    }
    Ok(h)
}

/// Trained network: hyperparameters plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub hyper: HyperParams,
    pub params: ModelParams<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    hyper: HyperParams,
    weights: Checkpoint,
}

impl<T: Scalar> Model<T> {
    pub fn init(hyper: HyperParams, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&hyper, seed)?;
        Ok(Model { hyper, params })
    }

    /// Evaluation-mode skin weights over each vertex's Top-K bones, `N × K`.
    pub fn forward(&self, g: &GraphTensors<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.params)?;
        let logits = forward_logits(&mut tape, &bound, g, &self.hyper, Mode::Eval)?;
        let w = tape.softmax_rows(logits)?;
        Ok(tape.value(w).clone())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile { hyper: self.hyper.clone(), weights: self.params.to_checkpoint() };
        let mut s = serde_json::to_string(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let params = ModelParams::from_checkpoint(&file.hyper, &file.weights)?;
        Ok(Model { hyper: file.hyper, params })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
