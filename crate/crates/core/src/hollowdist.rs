//! Bone-to-cell distance fields over a labeled voxel grid and the derived
//! per-vertex bone distances.
//!
//! The traversal is a breadth-first search over face neighbors that may
//! not step from a mesh cell into a hollow cell. Whenever the queue drains
//! while mesh cells remain untraversed, the search restarts from the
//! closest traversed mesh cell that borders untraversed hollow cells.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist, point_segment_distance, Vec3};
use crate::rigcore::Rig;
use crate::voxelize::{rasterize_bone, Cell, VoxelGrid};
use crate::Scalar;

const UNREACHED: u32 = u32::MAX;
const NO_PRED: u32 = u32::MAX;

/// Distances from one bone to every grid cell, in whole cell steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField<T> {
    pub bone: usize,
    pub cell_size: T,
    pub resolution: usize,
    steps: Vec<u32>,
    pred: Vec<u32>,
    restarts: usize,
}

impl<T: Scalar> DistanceField<T> {
    /// Number of cell steps from the bone, `None` if untraversed.
    pub fn steps(&self, idx: usize) -> Option<u32> {
        let s = self.steps[idx];
        (s != UNREACHED).then_some(s)
    }

    /// Distance in meters (`steps × cell size`), `None` if untraversed.
    pub fn dist(&self, idx: usize) -> Option<T> {
        self.steps(idx).map(|s| T::lit(s as f64) * self.cell_size)
    }

    pub fn pred(&self, idx: usize) -> Option<usize> {
        let p = self.pred[idx];
        (p != NO_PRED).then_some(p as usize)
    }

    /// Times the search had to restart to reach disconnected mesh cells.
    pub fn restarts(&self) -> usize {
        self.restarts
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn summary(&self) -> FieldSummary {
        let finite: Vec<u32> = self.steps.iter().copied().filter(|&s| s != UNREACHED).collect();
        let s = self.cell_size.as_f64();
        FieldSummary {
            bone: self.bone,
            min: finite.iter().min().map_or(f64::INFINITY, |&m| m as f64 * s),
            max: finite.iter().max().map_or(f64::INFINITY, |&m| m as f64 * s),
            finite_cells: finite.len(),
            restarts: self.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub bone: usize,
    pub min: f64,
    pub max: f64,
    pub finite_cells: usize,
    pub restarts: usize,
}

/// Runs the barrier breadth-first search from `bone_cells`.
pub fn compute_cell_distances<T: Scalar>(grid: &VoxelGrid<T>, bone: usize, bone_cells: &[Cell]) -> Result<DistanceField<T>> {
    if bone_cells.is_empty() {
        return Err(Error::Field(format!("bone {bone} covers no cells")));
    }
    let r = grid.resolution;
    let n = grid.len();
    let mut steps = vec![UNREACHED; n];
    let mut pred = vec![NO_PRED; n];
    let mut queue = VecDeque::new();
    let mut untraversed_mesh = grid.mesh_cell_count();

    for &c in bone_cells {
        if c.iter().any(|&k| k >= r) {
            return Err(Error::OutsideGrid(format!("bone {bone} cell {c:?}")));
        }
        let i = grid.index(c);
        if steps[i] == UNREACHED {
            steps[i] = 0;
            if grid.labels[i] {
                untraversed_mesh -= 1;
            }
            queue.push_back(i);
        }
    }

    let mut restarts = 0;
    loop {
        while let Some(i) = queue.pop_front() {
            let from_mesh = grid.labels[i];
            let next = steps[i] + 1;
            for nb in grid.neighbors(grid.cell(i)) {
                let j = grid.index(nb);
                if steps[j] != UNREACHED || (from_mesh && !grid.labels[j]) {
                    continue;
                }
                steps[j] = next;
                pred[j] = i as u32;
                if grid.labels[j] {
                    untraversed_mesh -= 1;
                }
                queue.push_back(j);
            }
        }
        if untraversed_mesh == 0 {
            break;
        }

        // Restart: traversed mesh cell next to untraversed hollow space with
        // the smallest distance; ties go to the smallest linear index, which
        // is the lexicographically smallest cell.
        let mut best: Option<(u32, usize)> = None;
        for i in 0..n {
            if !grid.labels[i] || steps[i] == UNREACHED {
                continue;
            }
            if best.is_some_and(|(s, _)| steps[i] >= s) {
                continue;
            }
            let open = grid
                .neighbors(grid.cell(i))
                .any(|nb| {
                    let j = grid.index(nb);
                    !grid.labels[j] && steps[j] == UNREACHED
                });
            if open {
                best = Some((steps[i], i));
            }
        }
        let Some((s, i)) = best else {
            return Err(Error::Field(format!(
                "bone {bone}: {untraversed_mesh} mesh cells unreachable; grid is corrupt"
            )));
        };
        restarts += 1;
        for nb in grid.neighbors(grid.cell(i)) {
            let j = grid.index(nb);
            if !grid.labels[j] && steps[j] == UNREACHED {
                steps[j] = s + 1;
                pred[j] = i as u32;
                queue.push_back(j);
            }
        }
    }

    Ok(DistanceField {
        bone,
        cell_size: grid.cell_size,
        resolution: r,
        steps,
        pred,
        restarts,
    })
}

/// Distance from a vertex to the field's bone: the predecessor cell's
/// distance plus the straight hop from that cell's center to the vertex.
/// Vertices inside a bone cell are at distance zero.
pub fn vertex_distance<T: Scalar>(field: &DistanceField<T>, p: Vec3<T>, grid: &VoxelGrid<T>) -> Result<T> {
    let c = grid.cell_of_point(p)?;
    let i = grid.index(c);
    if field.steps(i).is_none() {
        return Err(Error::Field(format!(
            "vertex {:?} lies in untraversed cell {c:?} of bone {}",
            p.map(T::as_f64),
            field.bone
        )));
    }
    match field.pred(i) {
        None => Ok(T::zero()),
        Some(pi) => {
            let d = field.dist(pi).expect("predecessors are traversed");
            Ok(d + dist(grid.center(grid.cell(pi)), p))
        }
    }
}

/// Dense `N × B` vertex-to-bone distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexBoneDistances<T> {
    vertices: usize,
    bones: usize,
    data: Vec<T>,
}

impl<T: Scalar> VertexBoneDistances<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let vertices = rows.len();
        let bones = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != bones) {
            return Err(Error::Schema("distance rows have unequal lengths".into()));
        }
        let data: Vec<T> = rows.into_iter().flatten().collect();
        if data.iter().any(|d| !d.is_finite() || *d < T::zero()) {
            return Err(Error::Schema("distances must be finite and non-negative".into()));
        }
        Ok(VertexBoneDistances { vertices, bones, data })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    pub fn bone_count(&self) -> usize {
        self.bones
    }

    #[inline]
    pub fn get(&self, v: usize, b: usize) -> T {
        self.data[v * self.bones + b]
    }

    pub fn row(&self, v: usize) -> &[T] {
        &self.data[v * self.bones..(v + 1) * self.bones]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.bones.max(1)).take(self.vertices)
    }

    pub fn scaled(&self, factor: T) -> Self {
        VertexBoneDistances {
            data: self.data.iter().map(|&d| d * factor).collect(),
            ..self.clone()
        }
    }
}

/// Per-bone field for one rig bone: rasterize, then search.
pub fn bone_field<T: Scalar>(rig: &Rig<T>, grid: &VoxelGrid<T>, bone: usize) -> Result<DistanceField<T>> {
    let (a, b) = rig.skeleton.bone_segment(bone);
    let cells = rasterize_bone(a, b, grid)?;
    compute_cell_distances(grid, bone, &cells)
}

/// Hollow distances for every (vertex, bone) pair, plus per-bone field
/// summaries. Bones are processed in parallel on the current rayon pool.
pub fn compute_all_detailed<T: Scalar>(
    rig: &Rig<T>,
    grid: &VoxelGrid<T>,
) -> Result<(VertexBoneDistances<T>, Vec<FieldSummary>)> {
    let bones = rig.skeleton.bone_count();
    let columns: Vec<(Vec<T>, FieldSummary)> = (0..bones)
        .into_par_iter()
        .map(|b| {
            let field = bone_field(rig, grid, b)?;
            let col = rig
                .mesh
                .vertices
                .iter()
                .map(|&p| vertex_distance(&field, p, grid))
                .collect::<Result<Vec<T>>>()?;
            Ok((col, field.summary()))
        })
        .collect::<Result<_>>()?;
    let n = rig.mesh.vertex_count();
    let mut data = vec![T::zero(); n * bones];
    for (b, (col, _)) in columns.iter().enumerate() {
        for (v, &d) in col.iter().enumerate() {
            data[v * bones + b] = d;
        }
    }
    let summaries = columns.into_iter().map(|(_, s)| s).collect();
    Ok((
        VertexBoneDistances {
            vertices: n,
            bones,
            data,
        },
        summaries,
    ))
}

pub fn compute_all<T: Scalar>(rig: &Rig<T>, grid: &VoxelGrid<T>) -> Result<VertexBoneDistances<T>> {
    compute_all_detailed(rig, grid).map(|(d, _)| d)
}

/// Straight-line vertex-to-segment distances, the Euclidean ablation.
pub fn euclidean_distances<T: Scalar>(rig: &Rig<T>) -> VertexBoneDistances<T> {
    let bones = rig.skeleton.bone_count();
    let segments: Vec<_> = (0..bones).map(|b| rig.skeleton.bone_segment(b)).collect();
    let data = rig
        .mesh
        .vertices
        .iter()
        .flat_map(|&p| segments.iter().map(move |&(a, b)| point_segment_distance(p, a, b)))
        .collect();
    VertexBoneDistances {
        vertices: rig.mesh.vertex_count(),
        bones,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_grid(r: usize) -> VoxelGrid<f64> {
        VoxelGrid::with_geometry([0.0; 3], 1.0, r).unwrap()
    }

    #[test]
    fn open_grid_is_manhattan() {
        let g = open_grid(6);
        let f = compute_cell_distances(&g, 0, &[[0, 0, 0]]).unwrap();
        for i in 0..g.len() {
            let c = g.cell(i);
            assert_eq!(f.dist(i), Some((c[0] + c[1] + c[2]) as f64));
        }
        assert_eq!(f.pred(0), None);
        assert_eq!(f.restarts(), 0);
    }

    #[test]
    fn empty_seed_set_is_an_error() {
        assert!(compute_cell_distances(&open_grid(4), 0, &[]).is_err());
    }

    #[test]
    fn eq1_on_open_grid() {
        let g = open_grid(6);
        let f = compute_cell_distances(&g, 0, &[[0, 0, 0]]).unwrap();
        assert_eq!(vertex_distance(&f, [2.5, 0.5, 0.5], &g).unwrap(), 2.0);
        assert_eq!(vertex_distance(&f, [0.2, 0.7, 0.1], &g).unwrap(), 0.0);
    }

    #[test]
    fn mesh_wall_blocks_exit_and_forces_restart() {
        // wall at x = 2; seed on the left; right side only reachable through
        // the wall: hollow -> mesh -> mesh is allowed, mesh -> hollow is not
        let mut g = open_grid(5);
        for y in 0..5 {
            for z in 0..5 {
                g.set_mesh([2, y, z], true);
            }
        }
        g.set_mesh([4, 0, 0], true);
        let f = compute_cell_distances(&g, 0, &[[0, 0, 0]]).unwrap();
        // wall cell reached from the left at Manhattan distance
        assert_eq!(f.steps(g.index([2, 0, 0])), Some(2));
        assert_eq!(f.steps(g.index([2, 4, 4])), Some(10));
        // one restart from the wall cell (2,0,0) into (3,0,0)
        assert_eq!(f.restarts(), 1);
        assert_eq!(f.steps(g.index([3, 0, 0])), Some(3));
        assert_eq!(f.pred(g.index([3, 0, 0])), Some(g.index([2, 0, 0])));
        assert_eq!(f.steps(g.index([4, 0, 0])), Some(4));
    }

    #[test]
    fn predecessor_chain_reaches_seed_in_dist_steps() {
        let mut g = open_grid(7);
        for (i, m) in g.labels.iter_mut().enumerate() {
            *m = (i * 7919) % 5 == 0;
        }
        let f = compute_cell_distances(&g, 0, &[[3, 3, 3], [3, 4, 3]]).unwrap();
        for i in 0..g.len() {
            if g.labels[i] {
                assert!(f.steps(i).is_some(), "mesh cells all reached");
            }
            let Some(s) = f.steps(i) else { continue };
            let (mut cur, mut hops) = (i, 0);
            while let Some(p) = f.pred(cur) {
                assert_eq!(f.steps(cur).unwrap(), f.steps(p).unwrap() + 1);
                cur = p;
                hops += 1;
            }
            assert_eq!(f.steps(cur), Some(0));
            assert_eq!(hops, s);
        }
    }

    #[test]
    fn distances_are_exact_cell_multiples() {
        let mut g = VoxelGrid::with_geometry([0.0; 3], 0.1, 5).unwrap();
        g.set_mesh([1, 1, 1], true);
        let f = compute_cell_distances(&g, 0, &[[0, 0, 0]]).unwrap();
        for i in 0..g.len() {
            if let (Some(s), Some(d)) = (f.steps(i), f.dist(i)) {
                assert_eq!(d, s as f64 * 0.1);
            }
        }
    }
}
