use super::model::{DistanceMode, GraphTensors, HyperParams, Model};
use crate::error::Result;
use crate::hgraph::HeterGraph;
use crate::hollowdist::{compute_all, euclidean_distances, VertexBoneDistances};
use crate::rigcore::{Rig, WeightRows, DEFAULT_MERGE_TOLERANCE};
use crate::voxelize::{build_rig_grid, voxelize_surface};
use crate::Scalar;

/// A rig run through merging, distances and graph construction.
#[derive(Debug, Clone)]
pub struct PreparedRig<T> {
    /// Rig after duplicate-vertex merging; ground truth follows survivors.
    pub rig: Rig<T>,
    /// Original vertex → merged vertex.
    pub mapping: Vec<usize>,
    pub distances: VertexBoneDistances<T>,
    pub graph: HeterGraph<T>,
}

pub fn distances_for<T: Scalar>(rig: &Rig<T>, hyper: &HyperParams) -> Result<VertexBoneDistances<T>> {
    match hyper.distance {
        DistanceMode::Hollow => {
            let mut grid = build_rig_grid(rig, hyper.resolution)?;
            voxelize_surface(&rig.mesh, &mut grid);
            compute_all(rig, &grid)
        }
        DistanceMode::Euclidean => Ok(euclidean_distances(rig)),
    }
}

pub fn prepare_rig<T: Scalar>(rig: &Rig<T>, hyper: &HyperParams) -> Result<PreparedRig<T>> {
    hyper.validate()?;
    let (merged, mapping) = rig.merged(T::lit(DEFAULT_MERGE_TOLERANCE));
    let distances = distances_for(&merged, hyper)?;
    let graph = HeterGraph::build(&merged.mesh, &merged.skeleton, &distances, &hyper.graph_config())?;
    Ok(PreparedRig { rig: merged, mapping, distances, graph })
}

/// Scatters `N × K` Top-K weights onto bone indices, one row per original
/// vertex through `mapping`.
pub fn scatter_weights<T: Scalar>(
    pred: &crate::autodiff::Tensor<T>,
    topk: &[Vec<usize>],
    mapping: &[usize],
    bones: usize,
) -> Result<WeightRows<T>> {
    let merged_rows: Vec<Vec<(usize, T)>> = topk
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(k, &b)| (b, pred.get(i, k))).collect())
        .collect();
    let rows = mapping.iter().map(|&m| merged_rows[m].clone()).collect();
    WeightRows::new(rows, bones)
}

impl<T: Scalar> Model<T> {
    pub fn predict_prepared(&self, prepared: &PreparedRig<T>) -> Result<WeightRows<T>> {
        let pred = self.forward(&GraphTensors::new(&prepared.graph)?)?;
        scatter_weights(&pred, &prepared.graph.topk, &prepared.mapping, prepared.rig.skeleton.bone_count())
    }

    /// Full pipeline in evaluation mode; one row per input vertex.
    pub fn predict(&self, rig: &Rig<T>) -> Result<WeightRows<T>> {
        self.predict_prepared(&prepare_rig(rig, &self.hyper)?)
    }
}
