//! Reference barrier BFS, written straight from the algorithm description
//! with no shared code. Distances accumulate by repeated addition of the
//! cell size, so callers should use dyadic cell sizes for exact comparison.

#![allow(dead_code)]

pub struct OracleField {
    pub dist: Vec<Option<f64>>,
    pub prev: Vec<Option<usize>>,
    pub restarts: usize,
}

fn at(r: usize, x: usize, y: usize, z: usize) -> usize {
    x * r * r + y * r + z
}

fn around(r: usize, i: usize) -> Vec<usize> {
    let (x, y, z) = (i / (r * r), (i / r) % r, i % r);
    let mut out = Vec::with_capacity(6);
    if x + 1 < r {
        out.push(at(r, x + 1, y, z));
    }
    if x > 0 {
        out.push(at(r, x - 1, y, z));
    }
    if y + 1 < r {
        out.push(at(r, x, y + 1, z));
    }
    if y > 0 {
        out.push(at(r, x, y - 1, z));
    }
    if z + 1 < r {
        out.push(at(r, x, y, z + 1));
    }
    if z > 0 {
        out.push(at(r, x, y, z - 1));
    }
    out
}

/// `None` when some mesh cell stays out of reach.
pub fn reference_bfs(r: usize, is_mesh: &[bool], cell: f64, seeds: &[[usize; 3]]) -> Option<OracleField> {
    let n = r * r * r;
    assert_eq!(is_mesh.len(), n);
    let mut dist: Vec<Option<f64>> = vec![None; n];
    let mut prev: Vec<Option<usize>> = vec![None; n];
    let mut queue: Vec<usize> = Vec::new();
    for s in seeds {
        let i = at(r, s[0], s[1], s[2]);
        if dist[i].is_none() {
            dist[i] = Some(0.0);
            queue.push(i);
        }
    }
    let mut head = 0;
    let mut restarts = 0;
    loop {
        while head < queue.len() {
            let ci = queue[head];
            head += 1;
            for cj in around(r, ci) {
                if dist[cj].is_some() {
                    continue;
                }
                if is_mesh[ci] && !is_mesh[cj] {
                    continue;
                }
                dist[cj] = Some(dist[ci].unwrap() + cell);
                prev[cj] = Some(ci);
                queue.push(cj);
            }
        }
        let pending = (0..n).any(|i| is_mesh[i] && dist[i].is_none());
        if !pending {
            break;
        }
        let mut candidates: Vec<(f64, usize)> = (0..n)
            .filter(|&i| is_mesh[i] && dist[i].is_some())
            .filter(|&i| around(r, i).into_iter().any(|j| !is_mesh[j] && dist[j].is_none()))
            .map(|i| (dist[i].unwrap(), i))
            .collect();
        // flat index order equals lexicographic (x, y, z) order
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let &(d, c) = candidates.first()?;
        restarts += 1;
        for j in around(r, c) {
            if !is_mesh[j] && dist[j].is_none() {
                dist[j] = Some(d + cell);
                prev[j] = Some(c);
                queue.push(j);
            }
        }
    }
    Some(OracleField { dist, prev, restarts })
}

pub struct Instance {
    pub resolution: usize,
    pub mesh: Vec<bool>,
    pub cell: f64,
    pub seeds: Vec<[usize; 3]>,
}

/// Random grid up to `max_r`³: scattered mesh cells, up to two closed
/// mesh shells (walled-off pockets), and a handful of seed cells.
pub fn random_instance<R: rand::Rng>(rng: &mut R, max_r: usize) -> Instance {
    let r = rng.random_range(2..=max_r);
    let n = r * r * r;
    let density = rng.random_range(0.0..0.45);
    let mut mesh: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
    for _ in 0..rng.random_range(0..=2) {
        if r < 3 {
            break;
        }
        let lo: [usize; 3] = std::array::from_fn(|_| rng.random_range(0..r - 2));
        let hi: [usize; 3] = std::array::from_fn(|a| rng.random_range(lo[a] + 2..r));
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    let shell = [x, y, z].iter().enumerate().any(|(a, &v)| v == lo[a] || v == hi[a]);
                    let i = at(r, x, y, z);
                    if shell {
                        mesh[i] = true;
                    } else if rng.random_bool(0.5) {
                        mesh[i] = rng.random_bool(0.3);
                    }
                }
            }
        }
    }
    let seeds = (0..rng.random_range(1..=4))
        .map(|_| std::array::from_fn(|_| rng.random_range(0..r)))
        .collect();
    let cell = [1.0, 0.5, 0.25, 0.125][rng.random_range(0..4)];
    Instance { resolution: r, mesh, cell, seeds }
}
