use std::collections::HashMap;

use super::Mesh;
use crate::geom::dist;
use crate::Scalar;

/// Default coincidence tolerance in meters.
pub const DEFAULT_MERGE_TOLERANCE: f64 = 1e-6;

/// Merges vertices lying within `tol` of an earlier surviving vertex.
///
/// Vertices are visited in index order; each one joins the lowest-indexed
/// survivor within `tol`, or becomes a survivor itself. Survivors keep their
/// position, so no two output vertices are within `tol` of each other.
/// Triangles that collapse onto fewer than three distinct vertices are
/// dropped. Returns the merged mesh and `mapping[old] = new`.
pub fn merge_duplicate_vertices<T: Scalar>(mesh: &Mesh<T>, tol: T) -> (Mesh<T>, Vec<usize>) {
    let tol = tol.max(T::zero());
    let mut survivors: Vec<[T; 3]> = Vec::new();
    let mut mapping = Vec::with_capacity(mesh.vertices.len());

    if tol == T::zero() {
        let mut exact: HashMap<[u64; 3], usize> = HashMap::new();
        for &p in &mesh.vertices {
            let key = p.map(|c| {
                // +0.0 and -0.0 are the same position
                let c = if c == T::zero() { T::zero() } else { c };
                c.as_f64().to_bits()
            });
            let id = *exact.entry(key).or_insert_with(|| {
                survivors.push(p);
                survivors.len() - 1
            });
            mapping.push(id);
        }
    } else {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let cell = |p: [T; 3]| p.map(|c| (c / tol).floor().to_i64().unwrap_or(i64::MAX));
        for &p in &mesh.vertices {
            let key = cell(p);
            let mut best: Option<usize> = None;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let k = [key[0].wrapping_add(dx), key[1].wrapping_add(dy), key[2].wrapping_add(dz)];
                        let Some(ids) = buckets.get(&k) else { continue };
                        for &id in ids {
                            if dist(survivors[id], p) <= tol && best.is_none_or(|b| id < b) {
                                best = Some(id);
                            }
                        }
                    }
                }
            }
            let id = best.unwrap_or_else(|| {
                survivors.push(p);
                let id = survivors.len() - 1;
                buckets.entry(key).or_default().push(id);
                id
            });
            mapping.push(id);
        }
    }

    let triangles = mesh
        .triangles
        .iter()
        .map(|t| t.map(|k| mapping[k]))
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .collect();
    (
        Mesh {
            vertices: survivors,
            triangles,
        },
        mapping,
    )
}
