//! Small hand-built rigs for integration tests.

#![allow(dead_code)]

use skinweights::rigcore::{Joint, Mesh, Rig, Skeleton};

/// Closed box surface with each face split into an `n × n` quad grid.
/// Face grids keep their own vertices, so edges carry duplicates.
pub fn box_surface(lo: [f64; 3], hi: [f64; 3], n: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [lo[axis], hi[axis]] {
            let base = verts.len();
            for i in 0..=n {
                for j in 0..=n {
                    let mut p = [0.0; 3];
                    p[axis] = side;
                    p[u] = lo[u] + (hi[u] - lo[u]) * i as f64 / n as f64;
                    p[v] = lo[v] + (hi[v] - lo[v]) * j as f64 / n as f64;
                    verts.push(p);
                }
            }
            let id = |i: usize, j: usize| base + i * (n + 1) + j;
            for i in 0..n {
                for j in 0..n {
                    tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                    tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
                }
            }
        }
    }
    (verts, tris)
}

pub fn joint(name: &str, position: [f64; 3], parent: Option<usize>) -> Joint<f64> {
    Joint { name: name.into(), position, parent }
}

/// Slab along x with a root at the center and one bone reaching into each
/// half. Mirror-symmetric in x.
pub fn barbell(n: usize) -> Rig<f64> {
    let (v, t) = box_surface([-1.0, -0.23, -0.23], [1.0, 0.23, 0.23], n);
    let skeleton = Skeleton::new(vec![
        joint("root", [0.0, 0.0, 0.0], None),
        joint("left", [-0.7, 0.0, 0.0], Some(0)),
        joint("right", [0.7, 0.0, 0.0], Some(0)),
    ])
    .unwrap();
    Rig::new("barbell", Mesh::new(v, t).unwrap(), skeleton, None).unwrap()
}

/// Box with a single bone along its axis, no helper beyond the leaf one.
pub fn single_bone_box(n: usize) -> Rig<f64> {
    let (v, t) = box_surface([-0.2, 0.0, -0.2], [0.2, 1.0, 0.2], n);
    let skeleton = Skeleton::new(vec![joint("base", [0.0, 0.1, 0.0], None), joint("tip", [0.0, 0.9, 0.0], Some(0))]).unwrap();
    Rig::new("stick", Mesh::new(v, t).unwrap(), skeleton, None).unwrap()
}

/// Column with a three-joint chain: two real bones plus the leaf helper.
/// With `n = 2` the merged mesh has 26 vertices.
pub fn chain_column(n: usize) -> Rig<f64> {
    let (v, t) = box_surface([-0.15, 0.0, -0.15], [0.15, 1.0, 0.15], n);
    let skeleton = Skeleton::new(vec![
        joint("hip", [0.0, 0.1, 0.0], None),
        joint("knee", [0.0, 0.5, 0.0], Some(0)),
        joint("ankle", [0.0, 0.9, 0.0], Some(1)),
    ])
    .unwrap();
    Rig::new("column", Mesh::new(v, t).unwrap(), skeleton, None).unwrap()
}

/// Two parallel fingers separated by a narrow gap, one bone chain in each.
/// Inner-face vertices are close to the other finger's bone in a straight
/// line but far from it through hollow space.
pub fn two_fingers(n: usize) -> Rig<f64> {
    let (mut v, mut t) = box_surface([-0.3, 0.0, -0.1], [-0.06, 1.0, 0.1], n);
    let (v2, t2) = box_surface([0.06, 0.0, -0.1], [0.3, 1.0, 0.1], n);
    let base = v.len();
    v.extend(v2);
    t.extend(t2.into_iter().map(|f| f.map(|i| i + base)));
    let skeleton = Skeleton::new(vec![
        joint("palm", [0.0, -0.1, 0.0], None),
        joint("a0", [-0.18, 0.1, 0.0], Some(0)),
        joint("a1", [-0.18, 0.9, 0.0], Some(1)),
        joint("b0", [0.18, 0.1, 0.0], Some(0)),
        joint("b1", [0.18, 0.9, 0.0], Some(3)),
    ])
    .unwrap();
    Rig::new("fingers", Mesh::new(v, t).unwrap(), skeleton, None).unwrap()
}
