//! The heterogeneous vertex/bone graph the network runs on.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::dist;
use crate::hollowdist::VertexBoneDistances;
use crate::rigcore::{Mesh, Skeleton};
use crate::Scalar;

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_GEO_THRESHOLD: f64 = 0.06;
pub const DEFAULT_GEO_CAP: usize = 32;
/// Floor applied to distances before inversion.
pub const DEFAULT_INVERSE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub k: usize,
    pub geo_threshold: f64,
    pub geo_cap: usize,
    pub inverse_eps: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k: DEFAULT_K,
            geo_threshold: DEFAULT_GEO_THRESHOLD,
            geo_cap: DEFAULT_GEO_CAP,
            inverse_eps: DEFAULT_INVERSE_EPS,
        }
    }
}

/// Row-major dense matrix of node attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Attributes<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Attributes<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn checksum(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64()).sum()
    }
}

/// Symmetric sparse matrix stored as sorted per-row entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    pub rows: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn mul_vec(&self, u: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * u[j]).sum())
            .collect()
    }

    pub fn quadratic_form(&self, u: &[T]) -> T {
        self.mul_vec(u).iter().zip(u).map(|(&a, &b)| a * b).sum()
    }
}

/// Bone indices of the `k` smallest distances per row, ascending; ties go
/// to the lower bone index.
pub fn topk_bones<T: Scalar>(d: &VertexBoneDistances<T>, k: usize) -> Result<Vec<Vec<usize>>> {
    if k > d.bone_count() {
        return Err(Error::InvalidArgument(format!("K = {k} exceeds bone count {}", d.bone_count())));
    }
    Ok(d.rows()
        .map(|row| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            let cmp = |&a: &usize, &b: &usize| row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b));
            if k < idx.len() && k > 0 {
                idx.select_nth_unstable_by(k - 1, cmp);
            }
            idx.truncate(k);
            idx.sort_by(cmp);
            idx
        })
        .collect())
}

/// `[x, y, z, 1/max(D₁, ε), …, 1/max(D_K, ε)]` per vertex.
pub fn vertex_attributes<T: Scalar>(
    positions: &[[T; 3]],
    d: &VertexBoneDistances<T>,
    topk: &[Vec<usize>],
    eps: T,
) -> Attributes<T> {
    let k = topk.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(positions.len() * (k + 3));
    for (i, p) in positions.iter().enumerate() {
        data.extend_from_slice(p);
        data.extend(topk[i].iter().map(|&b| T::one() / d.get(i, b).max(eps)));
    }
    Attributes {
        rows: positions.len(),
        cols: k + 3,
        data,
    }
}

/// `[start, end]` joint positions per bone, in skeleton bone order.
pub fn bone_attributes<T: Scalar>(skeleton: &Skeleton<T>) -> Attributes<T> {
    let data = (0..skeleton.bone_count())
        .flat_map(|b| {
            let (s, e) = skeleton.bone_segment(b);
            [s[0], s[1], s[2], e[0], e[1], e[2]]
        })
        .collect();
    Attributes {
        rows: skeleton.bone_count(),
        cols: 6,
        data,
    }
}

/// Undirected bone pairs `(a, b)`, `a < b`, that share a joint.
pub fn skeleton_edges<T: Scalar>(skeleton: &Skeleton<T>) -> Vec<(usize, usize)> {
    let joints = skeleton.joints().len();
    let mut at_joint: Vec<Vec<usize>> = vec![Vec::new(); joints];
    for (b, bone) in skeleton.bones().iter().enumerate() {
        at_joint[bone.start].push(b);
        if bone.end != bone.start {
            at_joint[bone.end].push(b);
        }
    }
    let mut edges: Vec<(usize, usize)> = at_joint
        .iter()
        .flat_map(|bs| {
            bs.iter()
                .enumerate()
                .flat_map(move |(i, &a)| bs[i + 1..].iter().map(move |&b| (a.min(b), a.max(b))))
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for l in &mut adj {
        l.sort_unstable();
    }
    adj
}

#[derive(PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Vertices within `threshold` shortest-path distance along mesh edges,
/// nearest first (ties by index), at most `cap` per vertex.
pub fn geodesic_neighbors<T: Scalar>(mesh: &Mesh<T>, threshold: T, cap: usize) -> Vec<Vec<usize>> {
    let n = mesh.vertex_count();
    let adj = adjacency(n, &mesh.edges());
    let limit = threshold.as_f64();
    let lengths: Vec<Vec<f64>> = adj
        .iter()
        .enumerate()
        .map(|(a, l)| l.iter().map(|&b| dist(mesh.vertices[a], mesh.vertices[b]).as_f64()).collect())
        .collect();

    let mut best = vec![f64::INFINITY; n];
    let mut touched = Vec::new();
    (0..n)
        .map(|src| {
            let mut heap = BinaryHeap::new();
            best[src] = 0.0;
            touched.push(src);
            heap.push(Reverse((Dist(0.0), src)));
            let mut found: Vec<(f64, usize)> = Vec::new();
            while let Some(Reverse((Dist(d), v))) = heap.pop() {
                if d > best[v] {
                    continue;
                }
                if v != src {
                    found.push((d, v));
                }
                for (&w, &len) in adj[v].iter().zip(&lengths[v]) {
                    let nd = d + len;
                    if nd <= limit && nd < best[w] {
                        if best[w].is_infinite() {
                            touched.push(w);
                        }
                        best[w] = nd;
                        heap.push(Reverse((Dist(nd), w)));
                    }
                }
            }
            for t in touched.drain(..) {
                best[t] = f64::INFINITY;
            }
            found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            found.truncate(cap);
            let mut ids: Vec<usize> = found.into_iter().map(|(_, v)| v).collect();
            ids.sort_unstable();
            ids
        })
        .collect()
}

/// Combinatorial Laplacian `Deg − Adj` over one-ring edges.
pub fn mesh_laplacian<T: Scalar>(mesh: &Mesh<T>) -> SparseMatrix<T> {
    let adj = adjacency(mesh.vertex_count(), &mesh.edges());
    let rows = adj
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let mut row: Vec<(usize, T)> = nb.iter().map(|&j| (j, -T::one())).collect();
            row.push((i, T::lit(nb.len() as f64)));
            row.sort_unstable_by_key(|e| e.0);
            row
        })
        .collect();
    SparseMatrix { rows }
}

/// Mesh graph, skeleton graph and their Top-K bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct HeterGraph<T> {
    pub k: usize,
    pub mesh_edges: Vec<(usize, usize)>,
    /// One-ring neighbor lists derived from `mesh_edges`.
    pub one_ring: Vec<Vec<usize>>,
    pub geo_neighbors: Vec<Vec<usize>>,
    pub skel_edges: Vec<(usize, usize)>,
    pub skel_neighbors: Vec<Vec<usize>>,
    pub topk: Vec<Vec<usize>>,
    /// `influenced[b]`: vertices whose Top-K contains `b`, ascending.
    pub influenced: Vec<Vec<usize>>,
    pub vertex_attr: Attributes<T>,
    pub bone_attr: Attributes<T>,
    pub laplacian: SparseMatrix<T>,
}

impl<T: Scalar> HeterGraph<T> {
    pub fn build(mesh: &Mesh<T>, skeleton: &Skeleton<T>, d: &VertexBoneDistances<T>, cfg: &GraphConfig) -> Result<Self> {
        let n = mesh.vertex_count();
        let b = skeleton.bone_count();
        if d.vertex_count() != n || d.bone_count() != b {
            return Err(Error::Schema(format!(
                "distance matrix is {}x{}, rig has {n} vertices and {b} bones",
                d.vertex_count(),
                d.bone_count()
            )));
        }
        if cfg.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        let topk = topk_bones(d, cfg.k)?;
        let mesh_edges = mesh.edges();
        let skel_edges = skeleton_edges(skeleton);
        let g = HeterGraph {
            k: cfg.k,
            one_ring: adjacency(n, &mesh_edges),
            geo_neighbors: geodesic_neighbors(mesh, T::lit(cfg.geo_threshold), cfg.geo_cap),
            skel_neighbors: adjacency(b, &skel_edges),
            influenced: influenced_sets(&topk, b),
            vertex_attr: vertex_attributes(&mesh.vertices, d, &topk, T::lit(cfg.inverse_eps)),
            bone_attr: bone_attributes(skeleton),
            laplacian: mesh_laplacian(mesh),
            mesh_edges,
            skel_edges,
            topk,
        };
        Ok(g)
    }

    pub fn vertex_count(&self) -> usize {
        self.topk.len()
    }

    pub fn bone_count(&self) -> usize {
        self.influenced.len()
    }

    pub fn summary(&self) -> GraphSummary {
        GraphSummary {
            vertices: self.vertex_count(),
            bones: self.bone_count(),
            k: self.k,
            mesh_edges: self.mesh_edges.len(),
            geodesic_pairs: self.geo_neighbors.iter().map(Vec::len).sum(),
            skeleton_edges: self.skel_edges.len(),
            bindings: self.topk.iter().map(Vec::len).sum(),
            vertex_attr_checksum: self.vertex_attr.checksum(),
            bone_attr_checksum: self.bone_attr.checksum(),
            laplacian_nonzeros: self.laplacian.rows.iter().map(Vec::len).sum(),
        }
    }
}

pub fn influenced_sets(topk: &[Vec<usize>], bones: usize) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); bones];
    for (v, row) in topk.iter().enumerate() {
        for &b in row {
            sets[b].push(v);
        }
    }
    sets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub vertices: usize,
    pub bones: usize,
    pub k: usize,
    pub mesh_edges: usize,
    pub geodesic_pairs: usize,
    pub skeleton_edges: usize,
    pub bindings: usize,
    pub vertex_attr_checksum: f64,
    pub bone_attr_checksum: f64,
    pub laplacian_nonzeros: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rigcore::Joint;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dists(rows: Vec<Vec<f64>>) -> VertexBoneDistances<f64> {
        VertexBoneDistances::from_rows(rows).unwrap()
    }

    fn skeleton(parents: &[Option<usize>], positions: &[[f64; 3]]) -> Skeleton<f64> {
        let joints = parents
            .iter()
            .zip(positions)
            .enumerate()
            .map(|(i, (&parent, &position))| Joint {
                name: format!("j{i}"),
                position,
                parent,
            })
            .collect();
        Skeleton::new(joints).unwrap()
    }

    #[test]
    fn topk_sorts_and_breaks_ties_by_index() {
        let d = dists(vec![vec![3.0, 1.0, 2.0], vec![1.0, 1.0, 0.5]]);
        assert_eq!(topk_bones(&d, 2).unwrap(), vec![vec![1, 2], vec![2, 0]]);
        assert_eq!(topk_bones(&d, 3).unwrap()[0], vec![1, 2, 0]);
        assert!(topk_bones(&d, 4).is_err());
    }

    #[test]
    fn topk_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let b = rng.random_range(1..12);
            let rows: Vec<Vec<f64>> = (0..20)
                .map(|_| (0..b).map(|_| rng.random_range(0..6) as f64 * 0.25).collect())
                .collect();
            let k = rng.random_range(1..=b);
            let got = topk_bones(&dists(rows.clone()), k).unwrap();
            for (row, g) in rows.iter().zip(&got) {
                let mut all: Vec<(f64, usize)> = row.iter().copied().zip(0..).collect();
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let want: Vec<usize> = all.iter().take(k).map(|e| e.1).collect();
                assert_eq!(g, &want);
            }
        }
    }

    proptest! {
        #[test]
        fn topk_scale_invariant(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..5.0, 4), 1..10), s in 0.01f64..100.0) {
            let d = dists(rows);
            prop_assert_eq!(topk_bones(&d, 3).unwrap(), topk_bones(&d.scaled(s), 3).unwrap());
        }
    }

    #[test]
    fn vertex_attribute_rows() {
        let d = dists(vec![vec![1.0, 2.0, 4.0, 9.0], vec![0.0, 5.0, 6.0, 7.0]]);
        let topk = topk_bones(&d, 3).unwrap();
        let a = vertex_attributes(&[[0.0; 3], [1.0, 2.0, 3.0]], &d, &topk, 1e-6);
        assert_eq!(a.row(0), &[0.0, 0.0, 0.0, 1.0, 0.5, 0.25]);
        assert_eq!(a.row(1)[3], 1e6);
        assert!(a.row(1)[4] >= a.row(1)[5]);
    }

    #[test]
    fn bone_attribute_rows() {
        let s = skeleton(&[None, Some(0)], &[[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let a = bone_attributes(&s);
        assert_eq!(a.rows, 2);
        assert_eq!(a.row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(a.row(1), &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let h = skeleton(&[None, Some(0)], &[[0.0; 3], [1.0, 2.0, 3.0]]);
        assert_eq!(bone_attributes(&h).row(1), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn chain_and_star_adjacency() {
        let chain = skeleton(&[None, Some(0), Some(1)], &[[0.0; 3]; 3]);
        // bones: 0=(0,1) 1=(1,2) 2=(2,2)
        assert_eq!(skeleton_edges(&chain), vec![(0, 1), (1, 2)]);
        let star = skeleton(&[None, Some(0), Some(0), Some(0)], &[[0.0; 3]; 4]);
        let e = skeleton_edges(&star);
        for pair in [(0, 1), (0, 2), (1, 2)] {
            assert!(e.contains(&pair));
        }
    }

    #[test]
    fn skeleton_edges_match_shared_joint_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.random_range(1..15);
            let parents: Vec<Option<usize>> = (0..n).map(|i| if i == 0 { None } else { Some(rng.random_range(0..i)) }).collect();
            let s = skeleton(&parents, &vec![[0.0; 3]; n]);
            let bones = s.bones();
            let mut want = Vec::new();
            for a in 0..bones.len() {
                for b in a + 1..bones.len() {
                    let ja = [bones[a].start, bones[a].end];
                    let jb = [bones[b].start, bones[b].end];
                    if ja.iter().any(|j| jb.contains(j)) {
                        want.push((a, b));
                    }
                }
            }
            assert_eq!(skeleton_edges(&s), want);
        }
    }

    #[test]
    fn geodesic_threshold() {
        let m = Mesh::new(vec![[0.0; 3], [0.05, 0.0, 0.0], [0.12, 0.0, 0.0]], vec![]).unwrap();
        let mut m2 = m.clone();
        m2.triangles = vec![[0, 1, 2]];
        let g = geodesic_neighbors(&m2, 0.06, 32);
        assert_eq!(g[0], vec![1]);
        assert_eq!(g[1], vec![0]);
        assert!(g[2].is_empty());
        assert!(geodesic_neighbors(&m, 0.06, 32).iter().all(Vec::is_empty));
    }

    fn random_mesh(rng: &mut ChaCha8Rng, n: usize) -> Mesh<f64> {
        let v: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(0.0..0.1))).collect();
        let t = (0..n * 2)
            .filter_map(|_| {
                let t = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)];
                (t[0] != t[1] && t[1] != t[2] && t[0] != t[2]).then_some(t)
            })
            .collect();
        Mesh::new(v, t).unwrap()
    }

    #[test]
    fn geodesic_matches_exhaustive_shortest_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let n = 40;
            let m = random_mesh(&mut rng, n);
            // Floyd-Warshall
            let mut d = vec![vec![f64::INFINITY; n]; n];
            for (i, row) in d.iter_mut().enumerate() {
                row[i] = 0.0;
            }
            for (a, b) in m.edges() {
                let l = dist(m.vertices[a], m.vertices[b]);
                d[a][b] = l;
                d[b][a] = l;
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        if d[i][k] + d[k][j] < d[i][j] {
                            d[i][j] = d[i][k] + d[k][j];
                        }
                    }
                }
            }
            let cap = 5;
            let got = geodesic_neighbors(&m, 0.06, cap);
            for i in 0..n {
                let mut c: Vec<(f64, usize)> = (0..n).filter(|&j| j != i && d[i][j] <= 0.06).map(|j| (d[i][j], j)).collect();
                c.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut want: Vec<usize> = c.iter().take(cap).map(|e| e.1).collect();
                want.sort_unstable();
                assert_eq!(got[i], want, "vertex {i}");
            }
        }
    }

    #[test]
    fn laplacian_of_triangle() {
        let m = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let l = mesh_laplacian(&m);
        assert_eq!(l.rows[0], vec![(0, 2.0), (1, -1.0), (2, -1.0)]);
        assert_eq!(l.mul_vec(&[3.0, 3.0, 3.0]), vec![0.0; 3]);
    }

    #[test]
    fn laplacian_quadratic_form_is_edge_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_mesh(&mut rng, 60);
        let l = mesh_laplacian(&m);
        for _ in 0..20 {
            let u: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
            let want: f64 = m.edges().iter().map(|&(a, b)| (u[a] - u[b]).powi(2)).sum();
            let got = l.quadratic_form(&u);
            assert!((got - want).abs() < 1e-12 * want.max(1.0));
            assert!(got >= 0.0);
        }
    }

    #[test]
    fn bindings_count_is_n_times_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..7).map(|_| rng.random::<f64>()).collect()).collect();
        let topk = topk_bones(&dists(rows), 3).unwrap();
        let sets = influenced_sets(&topk, 7);
        assert_eq!(sets.iter().map(Vec::len).sum::<usize>(), 30 * 3);
    }
}
