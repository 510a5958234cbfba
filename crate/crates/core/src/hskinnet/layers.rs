//! Graph convolution layers recorded on an autodiff tape.

use std::sync::Arc;

use crate::autodiff::{Segments, Tape, Var};
use crate::error::{Error, Result};
use crate::Scalar;

/// Fully connected layer `x · w + b` followed by leaky ReLU.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: Var,
    pub b: Var,
}

/// Edge MLP over `[f_i ‖ f_i − f_j]`, with the weight matrix stored as its
/// two row blocks: `w_self` multiplies `f_i`, `w_diff` multiplies `f_i − f_j`.
#[derive(Debug, Clone, Copy)]
pub struct EdgeWeights {
    pub w_self: Var,
    pub w_diff: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct MeshConvWeights {
    pub ring: EdgeWeights,
    pub geo: EdgeWeights,
    pub merge: Dense,
}

pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, layer: Dense) -> Result<Var> {
    let y = tape.matmul(x, layer.w)?;
    tape.add_row(y, layer.b)
}

pub fn dense<T: Scalar>(tape: &mut Tape<T>, x: Var, layer: Dense, alpha: T) -> Result<Var> {
    let y = linear(tape, x, layer)?;
    tape.leaky_relu(y, alpha)
}

/// Neighbor groups with a self-loop standing in for every empty list.
pub fn neighbor_segments(lists: &[Vec<usize>]) -> Segments {
    let looped: Vec<Vec<usize>> = lists
        .iter()
        .enumerate()
        .map(|(i, l)| if l.is_empty() { vec![i] } else { l.clone() })
        .collect();
    Segments::from_lists(&looped)
}

/// `f′_i = max_j LeakyReLU(W [f_i ‖ f_i − f_j] + b)`.
///
/// The activation is monotone and the edge term is affine, so the maximum
/// over `j` is taken on `−(f_j · w_diff)` before the activation.
pub fn edge_conv<T: Scalar>(tape: &mut Tape<T>, x: Var, neighbors: &Segments, w: EdgeWeights, alpha: T) -> Result<Var> {
    let n = tape.value(x).rows();
    if neighbors.len() != n {
        return Err(Error::shape("edge_conv", format!("{} neighbor lists for {n} nodes", neighbors.len())));
    }
    let own = tape.matmul(x, w.w_self)?;
    let own = tape.add_row(own, w.b)?;
    let diff = tape.matmul(x, w.w_diff)?;
    let own = tape.add(own, diff)?;
    let neg = tape.scale(diff, -T::one())?;
    let pooled = tape.segment_max(neg, neighbors)?;
    let h = tape.add(own, pooled)?;
    tape.leaky_relu(h, alpha)
}

pub fn skeleton_conv<T: Scalar>(tape: &mut Tape<T>, fb: Var, neighbors: &Segments, w: EdgeWeights, alpha: T) -> Result<Var> {
    edge_conv(tape, fb, neighbors, w, alpha)
}

/// EdgeConv over one-ring and over geodesic neighbors, concatenated and merged.
pub fn mesh_conv<T: Scalar>(
    tape: &mut Tape<T>,
    fv: Var,
    one_ring: &Segments,
    geodesic: &Segments,
    w: MeshConvWeights,
    alpha: T,
) -> Result<Var> {
    let a = edge_conv(tape, fv, one_ring, w.ring, alpha)?;
    let b = edge_conv(tape, fv, geodesic, w.geo, alpha)?;
    let both = tape.concat(&[a, b])?;
    dense(tape, both, w.merge, alpha)
}

/// `f′_b = MLP(f_b ‖ max ‖ mean ‖ damping·var)` over the vertices bound to `b`.
pub fn vertex_to_bone<T: Scalar>(
    tape: &mut Tape<T>,
    fv: Var,
    fb: Var,
    influenced: &Arc<Segments>,
    w: Dense,
    alpha: T,
    damping: T,
) -> Result<Var> {
    let bones = tape.value(fb).rows();
    if influenced.len() != bones {
        return Err(Error::shape("vertex_to_bone", format!("{} groups for {bones} bones", influenced.len())));
    }
    let mx = tape.segment_max(fv, influenced)?;
    let mean = tape.segment_mean(fv, influenced.clone())?;
    let var = tape.segment_var(fv, influenced.clone())?;
    let var = tape.scale(var, damping)?;
    let cat = tape.concat(&[fb, mx, mean, var])?;
    dense(tape, cat, w, alpha)
}

/// `f′_v = MLP(f_v ‖ f_{b_1} ‖ … ‖ f_{b_K})` with bones in Top-K order.
/// `topk_columns[k][i]` is the `k`-th nearest bone of vertex `i`.
pub fn bone_to_vertex<T: Scalar>(
    tape: &mut Tape<T>,
    fv: Var,
    fb: Var,
    topk_columns: &[Arc<Vec<usize>>],
    w: Dense,
    alpha: T,
) -> Result<Var> {
    let mut parts = vec![fv];
    for col in topk_columns {
        parts.push(tape.gather_rows(fb, col.clone())?);
    }
    let cat = tape.concat(&parts)?;
    dense(tape, cat, w, alpha)
}

/// Column-wise max over all nodes, then one dense layer. `1 × F′`.
pub fn global_branch<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Dense, alpha: T) -> Result<Var> {
    let n = tape.value(x).rows();
    if n == 0 {
        return Err(Error::InvalidArgument("global branch over an empty node set".into()));
    }
    let pooled = tape.segment_max(x, &Segments::single(n))?;
    dense(tape, pooled, w, alpha)
}
