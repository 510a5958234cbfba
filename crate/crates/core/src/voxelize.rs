//! Cubic voxel grid fitted around a character, conservative surface
//! marking, and bone-segment rasterization.
//!
//! Cells are indexed `(x, y, z)`; the linear index is x-major so that
//! comparing linear indices orders cells lexicographically. The one-cell
//! border of the grid is never marked as mesh.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{cross, sub, Vec3};
use crate::rigcore::{bounds_of, Mesh, Rig};
use crate::Scalar;

pub const DEFAULT_RESOLUTION: usize = 88;

pub type Cell = [usize; 3];

/// Points this close (in cell units) to the inner-region boundary are
/// assigned to the inner cell.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T> {
    pub origin: Vec3<T>,
    pub cell_size: T,
    pub resolution: usize,
    /// `true` for mesh cells, `false` for hollow cells.
    pub labels: Vec<bool>,
}

impl<T: Scalar> VoxelGrid<T> {
    /// Empty (all-hollow) grid with explicit geometry.
    pub fn with_geometry(origin: Vec3<T>, cell_size: T, resolution: usize) -> Result<Self> {
        if !(cell_size > T::zero()) || !cell_size.is_finite() {
            return Err(Error::InvalidArgument(format!("cell size must be positive, got {cell_size}")));
        }
        if resolution == 0 {
            return Err(Error::InvalidArgument("resolution must be positive".into()));
        }
        Ok(VoxelGrid {
            origin,
            cell_size,
            resolution,
            labels: vec![false; resolution * resolution * resolution],
        })
    }

    /// Fits a grid around `points`: the largest extent spans the inner
    /// `R − 2` cells and the grid is centered on the bounding box.
    pub fn fit(points: impl IntoIterator<Item = Vec3<T>>, resolution: usize) -> Result<Self> {
        if resolution < 4 {
            return Err(Error::InvalidArgument(format!("resolution must be >= 4, got {resolution}")));
        }
        let (lo, hi) = bounds_of(points).ok_or_else(|| Error::Degenerate("no points to fit".into()))?;
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(T::zero(), T::max);
        if !(extent > T::zero()) {
            return Err(Error::Degenerate("bounding box has zero extent".into()));
        }
        let cell = extent / T::lit((resolution - 2) as f64);
        let half = cell * T::lit(resolution as f64) / T::lit(2.0);
        let origin = [0, 1, 2].map(|a| (lo[a] + hi[a]) / T::lit(2.0) - half);
        Self::with_geometry(origin, cell, resolution)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn index(&self, c: Cell) -> usize {
        (c[0] * self.resolution + c[1]) * self.resolution + c[2]
    }

    #[inline]
    pub fn cell(&self, idx: usize) -> Cell {
        let r = self.resolution;
        [idx / (r * r), (idx / r) % r, idx % r]
    }

    #[inline]
    pub fn is_mesh(&self, c: Cell) -> bool {
        self.labels[self.index(c)]
    }

    pub fn set_mesh(&mut self, c: Cell, mesh: bool) {
        let i = self.index(c);
        self.labels[i] = mesh;
    }

    pub fn mesh_cell_count(&self) -> usize {
        self.labels.iter().filter(|&&m| m).count()
    }

    pub fn center(&self, c: Cell) -> Vec3<T> {
        let h = T::lit(0.5);
        [0, 1, 2].map(|a| self.origin[a] + (T::lit(c[a] as f64) + h) * self.cell_size)
    }

    /// Continuous grid coordinate of `p` (cell units from the origin).
    fn grid_coord(&self, p: Vec3<T>) -> [f64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.cell_size).as_f64())
    }

    fn snap_axis(&self, t: f64) -> usize {
        let r = self.resolution as f64;
        let mut i = t.floor().clamp(0.0, r - 1.0) as usize;
        if self.resolution >= 3 {
            if t >= r - 1.0 && t <= r - 1.0 + SNAP {
                i = self.resolution - 2;
            } else if t < 1.0 && t >= 1.0 - SNAP {
                i = 1;
            }
        }
        i
    }

    /// Cell containing `p`. Points on the inner-region boundary belong to the
    /// inner cell; points outside the grid are an error.
    pub fn cell_of_point(&self, p: Vec3<T>) -> Result<Cell> {
        let t = self.grid_coord(p);
        let r = self.resolution as f64;
        if t.iter().any(|&x| !(x >= -SNAP && x <= r + SNAP)) {
            return Err(Error::OutsideGrid(format!("{:?} (grid coordinates {t:?})", p.map(T::as_f64))));
        }
        Ok(t.map(|x| self.snap_axis(x)))
    }

    /// Face neighbors in the fixed order +x, −x, +y, −y, +z, −z.
    #[inline]
    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        const STEPS: [(usize, bool); 6] = [(0, true), (0, false), (1, true), (1, false), (2, true), (2, false)];
        let r = self.resolution;
        STEPS.iter().filter_map(move |&(axis, up)| {
            let mut n = c;
            if up {
                if c[axis] + 1 >= r {
                    return None;
                }
                n[axis] += 1;
            } else {
                if c[axis] == 0 {
                    return None;
                }
                n[axis] -= 1;
            }
            Some(n)
        })
    }
}

/// Grid fitted to the mesh alone.
pub fn build_grid<T: Scalar>(mesh: &Mesh<T>, resolution: usize) -> Result<VoxelGrid<T>> {
    if mesh.vertices.is_empty() {
        return Err(Error::Degenerate("empty mesh".into()));
    }
    VoxelGrid::fit(mesh.vertices.iter().copied(), resolution)
}

/// Grid fitted to the mesh and every joint, so out-of-body bones stay
/// inside the grid.
pub fn build_rig_grid<T: Scalar>(rig: &Rig<T>, resolution: usize) -> Result<VoxelGrid<T>> {
    if rig.mesh.vertices.is_empty() {
        return Err(Error::Degenerate("empty mesh".into()));
    }
    let points = rig
        .mesh
        .vertices
        .iter()
        .copied()
        .chain(rig.skeleton.joints().iter().map(|j| j.position));
    VoxelGrid::fit(points, resolution)
}

/// Separating-axis overlap test between a triangle and the closed box
/// `center ± half`. Touching counts as overlapping.
pub fn triangle_box_overlap<T: Scalar>(tri: [Vec3<T>; 3], center: Vec3<T>, half: T) -> bool {
    let v = tri.map(|p| sub(p, center));
    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];

    // box face normals
    for a in 0..3 {
        let lo = v[0][a].min(v[1][a]).min(v[2][a]);
        let hi = v[0][a].max(v[1][a]).max(v[2][a]);
        if lo > half || hi < -half {
            return false;
        }
    }

    // triangle normal
    let n = cross(e[0], e[1]);
    let r = half * (n[0].abs() + n[1].abs() + n[2].abs());
    let s = n[0] * v[0][0] + n[1] * v[0][1] + n[2] * v[0][2];
    if s.abs() > r {
        return false;
    }

    // edge × axis cross products
    for edge in &e {
        for a in 0..3 {
            let mut axis = [T::zero(); 3];
            axis[a] = T::one();
            let ax = cross(*edge, axis);
            let p = v.map(|q| ax[0] * q[0] + ax[1] * q[1] + ax[2] * q[2]);
            let lo = p[0].min(p[1]).min(p[2]);
            let hi = p[0].max(p[1]).max(p[2]);
            let rad = half * (ax[0].abs() + ax[1].abs() + ax[2].abs());
            if lo > rad || hi < -rad {
                return false;
            }
        }
    }
    true
}

/// Marks every inner cell whose closed box overlaps a triangle.
pub fn voxelize_surface<T: Scalar>(mesh: &Mesh<T>, grid: &mut VoxelGrid<T>) {
    let r = grid.resolution;
    if r < 3 {
        return;
    }
    let half = grid.cell_size / T::lit(2.0);
    let g: &VoxelGrid<T> = grid;
    let hits: Vec<Vec<usize>> = mesh
        .triangles
        .par_iter()
        .map(|t| {
            let tri = t.map(|k| mesh.vertices[k]);
            let coords = tri.map(|p| g.grid_coord(p));
            let mut range = [(0usize, 0usize); 3];
            for (a, slot) in range.iter_mut().enumerate() {
                let lo = coords.iter().map(|c| c[a]).fold(f64::INFINITY, f64::min);
                let hi = coords.iter().map(|c| c[a]).fold(f64::NEG_INFINITY, f64::max);
                let first = ((lo - 1.0).ceil() - 1.0).max(1.0);
                let last = (hi.floor() + 1.0).min((r - 2) as f64);
                if first > last {
                    return Vec::new();
                }
                *slot = (first as usize, last as usize);
            }
            let mut out = Vec::new();
            for x in range[0].0..=range[0].1 {
                for y in range[1].0..=range[1].1 {
                    for z in range[2].0..=range[2].1 {
                        let c = [x, y, z];
                        if triangle_box_overlap(tri, g.center(c), half) {
                            out.push(g.index(c));
                        }
                    }
                }
            }
            out
        })
        .collect();
    for idx in hits.into_iter().flatten() {
        grid.labels[idx] = true;
    }
}

/// Cells crossed by the segment `a`–`b`, in traversal order from `a`.
///
/// Incremental traversal: each step moves one face over along the axis
/// whose next boundary the segment reaches first, and never past the end
/// cell's coordinate on that axis.
pub fn rasterize_bone<T: Scalar>(a: Vec3<T>, b: Vec3<T>, grid: &VoxelGrid<T>) -> Result<Vec<Cell>> {
    let start = grid.cell_of_point(a)?;
    let end = grid.cell_of_point(b)?;
    let pa = grid.grid_coord(a);
    let pb = grid.grid_coord(b);
    let mut cells = vec![start];
    let mut cur = start;
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for ax in 0..3 {
        let d = pb[ax] - pa[ax];
        if cur[ax] == end[ax] || d == 0.0 {
            continue;
        }
        let boundary = if end[ax] > cur[ax] {
            cur[ax] as f64 + 1.0
        } else {
            cur[ax] as f64
        };
        t_max[ax] = (boundary - pa[ax]) / d;
        t_delta[ax] = 1.0 / d.abs();
    }
    while cur != end {
        // axes still short of the end cell; fall back to any such axis if
        // rounding left its crossing parameter infinite
        let ax = (0..3)
            .filter(|&ax| cur[ax] != end[ax])
            .min_by(|&p, &q| t_max[p].total_cmp(&t_max[q]).then(p.cmp(&q)))
            .expect("cur != end");
        if end[ax] > cur[ax] {
            cur[ax] += 1;
        } else {
            cur[ax] -= 1;
        }
        t_max[ax] += t_delta[ax];
        cells.push(cur);
    }
    Ok(cells)
}

/// Debug dump: grid geometry plus run-length-encoded labels in x-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelExport {
    pub origin: [f64; 3],
    pub cell_size: f64,
    pub resolution: usize,
    pub mesh_cells: usize,
    /// `(label, run length)` with label 1 = mesh, 0 = hollow.
    pub runs: Vec<(u8, usize)>,
}

impl VoxelExport {
    pub fn from_grid<T: Scalar>(grid: &VoxelGrid<T>) -> Self {
        let mut runs: Vec<(u8, usize)> = Vec::new();
        for &m in &grid.labels {
            let l = m as u8;
            match runs.last_mut() {
                Some((last, n)) if *last == l => *n += 1,
                _ => runs.push((l, 1)),
            }
        }
        VoxelExport {
            origin: grid.origin.map(T::as_f64),
            cell_size: grid.cell_size.as_f64(),
            resolution: grid.resolution,
            mesh_cells: grid.mesh_cell_count(),
            runs,
        }
    }

    pub fn to_grid(&self) -> Result<VoxelGrid<f64>> {
        let mut grid = VoxelGrid::with_geometry(self.origin, self.cell_size, self.resolution)?;
        let total: usize = self.runs.iter().map(|r| r.1).sum();
        if total != grid.len() {
            return Err(Error::Schema(format!("runs cover {total} cells, grid has {}", grid.len())));
        }
        let mut i = 0;
        for &(l, n) in &self.runs {
            grid.labels[i..i + n].fill(l == 1);
            i += n;
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn unit_cube() -> Mesh<f64> {
        let mut v = Vec::new();
        for i in 0..8 {
            v.push([(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]);
        }
        let t = vec![
            [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
            [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
        ];
        Mesh::new(v, t).unwrap()
    }

    #[test]
    fn unit_cube_grid_geometry() {
        let g = build_grid(&unit_cube(), 88).unwrap();
        assert_eq!(g.cell_size, 1.0 / 86.0);
        for a in 0..3 {
            assert!((g.origin[a] + 1.0 / 86.0).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_mesh_r4() {
        let m = Mesh::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, 0.5, 0.0]], vec![[0, 1, 2]]).unwrap();
        let g = build_grid(&m, 4).unwrap();
        assert_eq!(g.cell_size, 1.0);
        assert!(build_grid(&m, 3).is_err());
        let point = Mesh::new(vec![[1.0, 1.0, 1.0]; 3], vec![]).unwrap();
        assert!(matches!(build_grid(&point, 8), Err(Error::Degenerate(_))));
    }

    #[test]
    fn vertices_land_in_inner_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let v: Vec<[f64; 3]> = (0..40)
                .map(|_| [rng.random_range(-3.0..2.0), rng.random_range(0.0..0.1), rng.random_range(5.0..9.0)])
                .collect();
            let m = Mesh::new(v, vec![]).unwrap();
            let r = rng.random_range(4..40);
            let g = build_grid(&m, r).unwrap();
            for p in &m.vertices {
                let c = g.cell_of_point(*p).unwrap();
                assert!(c.iter().all(|&k| k >= 1 && k <= r - 2), "{c:?} r={r}");
            }
        }
    }

    fn small_grid() -> VoxelGrid<f64> {
        VoxelGrid::with_geometry([0.0; 3], 1.0, 8).unwrap()
    }

    #[test]
    fn triangle_inside_one_cell() {
        let m = Mesh::new(vec![[2.2, 3.2, 4.2], [2.8, 3.3, 4.5], [2.4, 3.9, 4.7]], vec![[0, 1, 2]]).unwrap();
        let mut g = small_grid();
        voxelize_surface(&m, &mut g);
        assert_eq!(g.mesh_cell_count(), 1);
        assert!(g.is_mesh([2, 3, 4]));
    }

    #[test]
    fn triangle_spanning_three_cells_along_x() {
        let m = Mesh::new(vec![[1.1, 2.2, 3.5], [3.9, 2.2, 3.5], [2.5, 2.8, 3.5]], vec![[0, 1, 2]]).unwrap();
        let mut g = small_grid();
        voxelize_surface(&m, &mut g);
        assert_eq!(g.mesh_cell_count(), 3);
        for x in 1..=3 {
            assert!(g.is_mesh([x, 2, 3]));
        }
    }

    #[test]
    fn border_never_marked() {
        let m = unit_cube();
        let mut g = build_grid(&m, 10).unwrap();
        voxelize_surface(&m, &mut g);
        for i in 0..g.len() {
            let c = g.cell(i);
            if c.iter().any(|&k| k == 0 || k == 9) {
                assert!(!g.labels[i]);
            }
        }
        // the cube's faces cover the full 8x8 inner shell
        assert_eq!(g.mesh_cell_count(), 8 * 8 * 8 - 6 * 6 * 6);
    }

    fn sample_triangle(rng: &mut ChaCha8Rng, tri: [[f64; 3]; 3]) -> [f64; 3] {
        let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        [0, 1, 2].map(|a| tri[0][a] + u * (tri[1][a] - tri[0][a]) + v * (tri[2][a] - tri[0][a]))
    }

    #[test]
    fn sampled_surface_points_land_in_mesh_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let tri: [[f64; 3]; 3] =
                std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)));
            let m = Mesh::new(tri.to_vec(), vec![[0, 1, 2]]).unwrap();
            let mut g = build_grid(&m, 24).unwrap();
            voxelize_surface(&m, &mut g);
            for _ in 0..10_000 {
                let p = sample_triangle(&mut rng, tri);
                assert!(g.is_mesh(g.cell_of_point(p).unwrap()));
            }
        }
    }

    #[test]
    fn labels_independent_of_triangle_order_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // dyadic coordinates keep the translation exact
        let v: Vec<[f64; 3]> = (0..12)
            .map(|_| std::array::from_fn(|_| rng.random_range(8..56) as f64 / 8.0))
            .collect();
        let t: Vec<[usize; 3]> = (0..10).map(|i| [i, i + 1, i + 2]).collect();
        let m = Mesh::new(v.clone(), t.clone()).unwrap();
        let mut g = VoxelGrid::with_geometry([0.0; 3], 0.5, 16).unwrap();
        voxelize_surface(&m, &mut g);

        let mut rev = t.clone();
        rev.reverse();
        let mut g2 = VoxelGrid::with_geometry([0.0; 3], 0.5, 16).unwrap();
        voxelize_surface(&Mesh::new(v.clone(), rev).unwrap(), &mut g2);
        assert_eq!(g.labels, g2.labels);

        let shift = [3.0, -17.5, 0.25];
        let moved: Vec<[f64; 3]> = v.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
        let mut g3 = VoxelGrid::with_geometry(shift, 0.5, 16).unwrap();
        voxelize_surface(&Mesh::new(moved, t).unwrap(), &mut g3);
        assert_eq!(g.labels, g3.labels);
    }

    #[test]
    fn axis_aligned_bone_walk() {
        let g = small_grid();
        let cells = rasterize_bone([0.5, 0.5, 0.5], [2.5, 0.5, 0.5], &g).unwrap();
        assert_eq!(cells, vec![[0, 0, 0], [1, 0, 0], [2, 0, 0]]);
        assert_eq!(rasterize_bone([1.5; 3], [1.5; 3], &g).unwrap(), vec![[1, 1, 1]]);
        assert!(matches!(rasterize_bone([0.5; 3], [9.5, 0.5, 0.5], &g), Err(Error::OutsideGrid(_))));
    }

    fn segment_hits_box(a: [f64; 3], b: [f64; 3], c: Cell, pad: f64) -> bool {
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        for k in 0..3 {
            let (lo, hi) = (c[k] as f64 - pad, c[k] as f64 + 1.0 + pad);
            let d = b[k] - a[k];
            if d.abs() < 1e-300 {
                if a[k] < lo || a[k] > hi {
                    return false;
                }
                continue;
            }
            let (u, v) = ((lo - a[k]) / d, (hi - a[k]) / d);
            t0 = t0.max(u.min(v));
            t1 = t1.min(u.max(v));
        }
        t0 <= t1
    }

    #[test]
    fn bone_cells_match_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = VoxelGrid::with_geometry([-1.0, 0.5, 2.0], 0.25, 20).unwrap();
        for _ in 0..100 {
            let p = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|a| g.origin[a] + rng.random_range(0.3..4.7));
            let (a, b) = (p(&mut rng), p(&mut rng));
            let cells = rasterize_bone(a, b, &g).unwrap();
            let walked: BTreeSet<Cell> = cells.iter().copied().collect();
            assert_eq!(walked.len(), cells.len(), "no cell visited twice");
            let sampled: BTreeSet<Cell> = (0..10_000)
                .map(|i| {
                    let t = i as f64 / 9_999.0;
                    g.cell_of_point([0, 1, 2].map(|k| a[k] + t * (b[k] - a[k]))).unwrap()
                })
                .collect();
            assert!(walked.is_superset(&sampled));
            // extra cells only bridge a diagonal crossing within rounding of an edge
            for c in walked.difference(&sampled) {
                assert!(segment_hits_box(g.grid_coord(a), g.grid_coord(b), *c, 1e-3), "{c:?}");
            }
            for w in cells.windows(2) {
                let diff: usize = (0..3).map(|k| w[0][k].abs_diff(w[1][k])).sum();
                assert_eq!(diff, 1);
            }
        }
    }

    #[test]
    fn export_round_trip() {
        let m = unit_cube();
        let mut g = build_grid(&m, 12).unwrap();
        voxelize_surface(&m, &mut g);
        let back = VoxelExport::from_grid(&g).to_grid().unwrap();
        assert_eq!(back, g);
    }
}
