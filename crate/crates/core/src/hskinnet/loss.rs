use super::model::GraphTensors;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hgraph::SparseMatrix;
use crate::rigcore::WeightRows;
use crate::Scalar;

/// Floor inside the logarithm of the data term.
pub const KL_EPS: f64 = 1e-8;
/// Below this Top-K ground-truth mass a row's target falls back to uniform.
pub const SUPPORT_MASS_FLOOR: f64 = 1e-6;
/// Row-sum tolerance for predicted weights.
pub const CONVEX_TOLERANCE: f64 = 1e-9;

/// Ground truth restricted to each vertex's Top-K bones and renormalized, `N × K`.
pub fn loss_targets<T: Scalar>(gt: &WeightRows<T>, topk: &[Vec<usize>]) -> Result<Tensor<T>> {
    if gt.len() != topk.len() {
        return Err(Error::shape("loss_targets", format!("{} weight rows, {} vertices", gt.len(), topk.len())));
    }
    let k = topk.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(topk.len() * k);
    for (i, row) in topk.iter().enumerate() {
        let vals: Vec<T> = row.iter().map(|&b| gt.get(i, b)).collect();
        let mass: T = vals.iter().copied().sum();
        if mass.as_f64() < SUPPORT_MASS_FLOOR {
            data.extend(std::iter::repeat_n(T::one() / T::lit(k as f64), k));
        } else {
            data.extend(vals.iter().map(|&v| v / mass));
        }
    }
    Tensor::matrix(topk.len(), k, data)
}

/// Tape handles of the loss and its two terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub data: Var,
    pub smooth: Var,
}

/// Records `L_D / N + λ_S · L_S` from the logits.
pub fn record_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &Tensor<T>,
    g: &GraphTensors<T>,
    lambda_s: f64,
) -> Result<LossVars> {
    let inv_n = T::one() / T::lit(g.vertex_count() as f64);
    let kl = tape.softmax_kl(logits, targets, T::lit(KL_EPS))?;
    let data = tape.scale(kl, inv_n)?;
    let w = tape.softmax_rows(logits)?;
    let energy = tape.laplacian_energy(w, g.topk.clone(), g.mesh_edges.clone())?;
    let smooth = tape.scale(energy, inv_n)?;
    let weighted = tape.scale(smooth, T::lit(lambda_s))?;
    let total = tape.add(data, weighted)?;
    Ok(LossVars { total, data, smooth })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// `L_D / N`.
    pub data: f64,
    /// `L_S = (1/N) Σ_j w_jᵀ L w_j`.
    pub smooth: f64,
    pub total: f64,
}

fn check_convex<T: Scalar>(pred: &Tensor<T>) -> Result<()> {
    for i in 0..pred.rows() {
        let row = pred.row(i);
        let sum: f64 = row.iter().map(|x| x.as_f64()).sum();
        if row.iter().any(|&x| x < T::zero() || !x.is_finite()) || (sum - 1.0).abs() > CONVEX_TOLERANCE {
            return Err(Error::Weights(format!("predicted row {i} is not convex (sum {sum})")));
        }
    }
    Ok(())
}

/// `(1/N) Σ_j w_jᵀ L w_j` with each bone column scattered from the Top-K
/// predictions (zeros off-support).
pub fn smoothness_energy<T: Scalar>(pred: &Tensor<T>, topk: &[Vec<usize>], laplacian: &SparseMatrix<T>, bones: usize) -> f64 {
    let n = pred.rows();
    let mut columns = vec![vec![T::zero(); n]; bones];
    for (i, row) in topk.iter().enumerate() {
        for (k, &b) in row.iter().enumerate() {
            columns[b][i] = pred.get(i, k);
        }
    }
    let total: f64 = columns.iter().map(|c| laplacian.quadratic_form(c).as_f64()).sum();
    total / n as f64
}

/// Direct (tape-free) evaluation of the training loss on convex predictions.
pub fn evaluate_loss<T: Scalar>(
    pred: &Tensor<T>,
    gt: &WeightRows<T>,
    topk: &[Vec<usize>],
    laplacian: &SparseMatrix<T>,
    lambda_s: f64,
) -> Result<LossBreakdown> {
    check_convex(pred)?;
    let targets = loss_targets(gt, topk)?;
    if targets.dims() != pred.dims() {
        return Err(Error::shape("loss", format!("pred {:?} vs targets {:?}", pred.dims(), targets.dims())));
    }
    let mut kl = 0.0;
    for (&w, &t) in pred.data().iter().zip(targets.data()) {
        let (w, t) = (w.as_f64(), t.as_f64());
        if w > 0.0 {
            kl += w * (w / t.max(KL_EPS)).ln();
        }
    }
    let n = pred.rows() as f64;
    let data = kl / n;
    let smooth = smoothness_energy(pred, topk, laplacian, gt.bone_count());
    Ok(LossBreakdown { data, smooth, total: data + lambda_s * smooth })
}
