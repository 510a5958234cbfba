//! Rigged-character data model: mesh, joint tree with derived bones, and
//! sparse skin-weight rows.

mod io;
mod merge;

pub use io::{load_obj_mesh, load_rig, load_weights, parse_rig, rig_to_string, save_rig, save_weights, RigFile, WeightsFile};
pub use merge::{merge_duplicate_vertices, DEFAULT_MERGE_TOLERANCE};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::Scalar;

/// Row-sum tolerance for a valid weight row.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;
/// Rows loaded from disk within this distance of a unit sum are renormalized.
pub const WEIGHT_RENORMALIZE_TOLERANCE: f64 = 1e-4;

/// Triangle mesh. Indices are validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub triangles: Vec<[usize; 3]>,
}

impl<T: Scalar> Mesh<T> {
    pub fn new(vertices: Vec<Vec3<T>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Mesh {
            vertices,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, v) in self.vertices.iter().enumerate() {
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::Schema(format!("vertex {i} has a non-finite coordinate")));
            }
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            for &k in tri {
                if k >= n {
                    return Err(Error::IndexOutOfRange {
                        what: format!("triangle {t} vertex"),
                        index: k,
                        limit: n,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Schema(format!("triangle {t} repeats a vertex: {tri:?}")));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Unique undirected one-ring edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Axis-aligned bounds `(min, max)`, or `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        bounds_of(self.vertices.iter().copied())
    }
}

pub(crate) fn bounds_of<T: Scalar>(points: impl IntoIterator<Item = Vec3<T>>) -> Option<(Vec3<T>, Vec3<T>)> {
    let mut it = points.into_iter();
    let first = it.next()?;
    let (mut lo, mut hi) = (first, first);
    for p in it {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    Some((lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint<T> {
    pub name: String,
    pub position: Vec3<T>,
    pub parent: Option<usize>,
}

/// A bone between two joints. Helper bones have `start == end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bone {
    pub start: usize,
    pub end: usize,
}

impl Bone {
    pub fn is_helper(&self) -> bool {
        self.start == self.end
    }
}

/// Derives the bone list of a joint tree: one `(parent, child)` bone per
/// non-root joint in joint order, then one zero-length helper bone per leaf
/// joint in joint order.
pub fn add_helper_bones<T>(joints: &[Joint<T>]) -> Result<Vec<Bone>> {
    check_tree(joints)?;
    let mut has_child = vec![false; joints.len()];
    let mut bones = Vec::with_capacity(joints.len() * 2);
    for (j, joint) in joints.iter().enumerate() {
        if let Some(p) = joint.parent {
            has_child[p] = true;
            bones.push(Bone { start: p, end: j });
        }
    }
    bones.extend(
        (0..joints.len())
            .filter(|&j| !has_child[j])
            .map(|j| Bone { start: j, end: j }),
    );
    Ok(bones)
}

fn check_tree<T>(joints: &[Joint<T>]) -> Result<()> {
    let n = joints.len();
    if n == 0 {
        return Err(Error::Skeleton("no joints".into()));
    }
    let roots: Vec<usize> = (0..n).filter(|&j| joints[j].parent.is_none()).collect();
    if roots.len() != 1 {
        return Err(Error::Skeleton(format!(
            "expected exactly one root joint, found {} ({roots:?})",
            roots.len()
        )));
    }
    for (j, joint) in joints.iter().enumerate() {
        if let Some(p) = joint.parent {
            if p >= n {
                return Err(Error::IndexOutOfRange {
                    what: format!("joint {j} ('{}') parent", joint.name),
                    index: p,
                    limit: n,
                });
            }
        }
    }
    // 0 = unvisited, 1 = on current walk, 2 = known to reach the root
    let mut state = vec![0u8; n];
    for start in 0..n {
        let mut walk = Vec::new();
        let mut cur = start;
        loop {
            match state[cur] {
                2 => break,
                1 => {
                    return Err(Error::Skeleton(format!(
                        "cyclic parent links through joint {cur} ('{}')",
                        joints[cur].name
                    )))
                }
                _ => {}
            }
            state[cur] = 1;
            walk.push(cur);
            match joints[cur].parent {
                Some(p) => cur = p,
                None => break,
            }
        }
        for j in walk {
            state[j] = 2;
        }
    }
    Ok(())
}

/// Joint tree plus its derived bone list (helpers included).
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton<T> {
    joints: Vec<Joint<T>>,
    bones: Vec<Bone>,
}

impl<T: Scalar> Skeleton<T> {
    pub fn new(joints: Vec<Joint<T>>) -> Result<Self> {
        for (j, joint) in joints.iter().enumerate() {
            if joint.position.iter().any(|c| !c.is_finite()) {
                return Err(Error::Schema(format!("joint {j} ('{}') has a non-finite position", joint.name)));
            }
        }
        let bones = add_helper_bones(&joints)?;
        Ok(Skeleton { joints, bones })
    }

    pub fn joints(&self) -> &[Joint<T>] {
        &self.joints
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn bone_segment(&self, b: usize) -> (Vec3<T>, Vec3<T>) {
        let bone = self.bones[b];
        (self.joints[bone.start].position, self.joints[bone.end].position)
    }

    /// Index of the real bone ending at `joint`, if any (none for the root).
    pub fn incoming_bone(&self, joint: usize) -> Option<usize> {
        self.bones
            .iter()
            .position(|b| !b.is_helper() && b.end == joint)
    }

    pub fn root(&self) -> usize {
        self.joints
            .iter()
            .position(|j| j.parent.is_none())
            .expect("validated tree has a root")
    }
}

/// Sparse per-vertex skin weights; every row is convex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRows<T> {
    rows: Vec<Vec<(usize, T)>>,
    bone_count: usize,
}

impl<T: Scalar> WeightRows<T> {
    /// Validates rows that must already be convex within 1e-6.
    pub fn new(rows: Vec<Vec<(usize, T)>>, bone_count: usize) -> Result<Self> {
        Self::build(rows, bone_count, WEIGHT_SUM_TOLERANCE, false)
    }

    /// Accepts rows within 1e-4 of a unit sum and renormalizes those more than
    /// 1e-12 away from it.
    pub fn renormalized(rows: Vec<Vec<(usize, T)>>, bone_count: usize) -> Result<Self> {
        Self::build(rows, bone_count, WEIGHT_RENORMALIZE_TOLERANCE, true)
    }

    fn build(mut rows: Vec<Vec<(usize, T)>>, bone_count: usize, tol: f64, renormalize: bool) -> Result<Self> {
        for (i, row) in rows.iter_mut().enumerate() {
            let mut seen = Vec::with_capacity(row.len());
            for &(b, w) in row.iter() {
                if b >= bone_count {
                    return Err(Error::IndexOutOfRange {
                        what: format!("weight row {i} bone"),
                        index: b,
                        limit: bone_count,
                    });
                }
                if !w.is_finite() || w < T::zero() {
                    return Err(Error::Weights(format!("row {i} bone {b} has weight {w}")));
                }
                if seen.contains(&b) {
                    return Err(Error::Weights(format!("row {i} lists bone {b} twice")));
                }
                seen.push(b);
            }
            let sum: T = row.iter().map(|&(_, w)| w).sum();
            if (sum.as_f64() - 1.0).abs() > tol {
                return Err(Error::WeightSum { row: i, sum: sum.as_f64() });
            }
            // rows already at a unit sum are kept bit-exact across save/load
            if renormalize && (sum.as_f64() - 1.0).abs() > 1e-12 {
                for e in row.iter_mut() {
                    e.1 /= sum;
                }
            }
        }
        Ok(WeightRows { rows, bone_count })
    }

    /// Builds rows from dense per-vertex vectors, dropping exact zeros.
    pub fn from_dense(dense: &[Vec<T>]) -> Result<Self> {
        let bone_count = dense.first().map_or(0, Vec::len);
        let rows = dense
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &w)| w != T::zero())
                    .map(|(j, &w)| (j, w))
                    .collect()
            })
            .collect();
        Self::new(rows, bone_count)
    }

    pub fn rows(&self) -> &[Vec<(usize, T)>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[(usize, T)] {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn bone_count(&self) -> usize {
        self.bone_count
    }

    pub fn get(&self, i: usize, bone: usize) -> T {
        self.rows[i]
            .iter()
            .find(|(b, _)| *b == bone)
            .map_or(T::zero(), |&(_, w)| w)
    }

    pub fn dense_row(&self, i: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.bone_count];
        for &(b, w) in &self.rows[i] {
            out[b] = w;
        }
        out
    }

    /// Rows reordered through `mapping[new] = old`.
    pub fn select(&self, sources: &[usize]) -> Self {
        WeightRows {
            rows: sources.iter().map(|&s| self.rows[s].clone()).collect(),
            bone_count: self.bone_count,
        }
    }
}

/// A character: mesh, skeleton and optional ground-truth weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig<T> {
    pub name: String,
    pub mesh: Mesh<T>,
    pub skeleton: Skeleton<T>,
    pub weights: Option<WeightRows<T>>,
}

impl<T: Scalar> Rig<T> {
    pub fn new(name: impl Into<String>, mesh: Mesh<T>, skeleton: Skeleton<T>, weights: Option<WeightRows<T>>) -> Result<Self> {
        if let Some(w) = &weights {
            if w.len() != mesh.vertex_count() {
                return Err(Error::Schema(format!(
                    "{} weight rows for {} vertices",
                    w.len(),
                    mesh.vertex_count()
                )));
            }
            if w.bone_count() != skeleton.bone_count() {
                return Err(Error::Schema(format!(
                    "weights address {} bones, skeleton has {}",
                    w.bone_count(),
                    skeleton.bone_count()
                )));
            }
        }
        Ok(Rig {
            name: name.into(),
            mesh,
            skeleton,
            weights,
        })
    }

    /// Merges coincident vertices; ground-truth rows follow the surviving
    /// vertex. Returns the merged rig and the old → new vertex mapping.
    pub fn merged(&self, tol: T) -> (Rig<T>, Vec<usize>) {
        let (mesh, mapping) = merge_duplicate_vertices(&self.mesh, tol);
        let weights = self.weights.as_ref().map(|w| {
            let mut survivors = vec![usize::MAX; mesh.vertex_count()];
            for (old, &new) in mapping.iter().enumerate() {
                if survivors[new] == usize::MAX {
                    survivors[new] = old;
                }
            }
            w.select(&survivors)
        });
        let rig = Rig {
            name: self.name.clone(),
            mesh,
            skeleton: self.skeleton.clone(),
            weights,
        };
        (rig, mapping)
    }
}
