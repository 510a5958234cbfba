//! Procedural rigged characters with ground-truth weights.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::hgraph::topk_bones;
use crate::hollowdist::compute_all;
use crate::rigcore::{save_rig, Joint, Mesh, Rig, Skeleton, WeightRows};
use crate::voxelize::{build_rig_grid, voxelize_surface, DEFAULT_RESOLUTION};
use crate::Scalar;

pub const MAX_ATTEMPTS: usize = 100;
pub const GT_TOP: usize = 3;
pub const GT_SMOOTHING_PASSES: usize = 10;
pub const GT_SMOOTHING_RATE: f64 = 0.5;
pub const GT_DISTANCE_EPS: f64 = 1e-6;
pub const MANIFEST: &str = "manifest.txt";

const MAX_DEPTH: usize = 4;
const PLACEMENT_TRIES: usize = 40;
/// Minimum tube radius in grid cells, so surface cells never hold a bone.
const MIN_RADIUS_CELLS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Inclusive range of real (non-helper) bones.
    pub bones: (usize, usize),
    pub radial_segments: usize,
    pub rings: usize,
    pub prop_probability: f64,
    pub antenna_probability: f64,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            bones: (6, 20),
            radial_segments: 8,
            rings: 6,
            prop_probability: 0.3,
            antenna_probability: 0.3,
            resolution: DEFAULT_RESOLUTION,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bones;
        if lo < 1 || lo > hi {
            return Err(Error::InvalidArgument(format!("bone range [{lo}, {hi}] is empty")));
        }
        if self.radial_segments < 3 || self.rings < 2 {
            return Err(Error::InvalidArgument("tubes need ≥ 3 radial segments and ≥ 2 rings".into()));
        }
        for p in [self.prop_probability, self.antenna_probability] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("probability {p} not in [0, 1]")));
            }
        }
        if self.resolution < 4 {
            return Err(Error::InvalidArgument("resolution must be at least 4".into()));
        }
        Ok(())
    }
}

/// Closest distance between segments `p0p1` and `q0q1`.
fn segment_distance(p0: Vec3<f64>, p1: Vec3<f64>, q0: Vec3<f64>, q1: Vec3<f64>) -> f64 {
    let d1 = geom::sub(p1, p0);
    let d2 = geom::sub(q1, q0);
    let r = geom::sub(p0, q0);
    let (a, e, f) = (geom::dot(d1, d1), geom::dot(d2, d2), geom::dot(d2, r));
    let (s, t);
    if a <= 1e-18 && e <= 1e-18 {
        return geom::norm(r);
    }
    if a <= 1e-18 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = geom::dot(d1, r);
        if e <= 1e-18 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = geom::dot(d1, d2);
            let denom = a * e - b * b;
            let s0 = if denom > 1e-18 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            } else {
                t = t0;
                s = s0;
            }
        }
    }
    geom::dist(geom::add(p0, geom::scale(d1, s)), geom::add(q0, geom::scale(d2, t)))
}

fn random_dir(rng: &mut ChaCha8Rng) -> Vec3<f64> {
    UnitSphere.sample(rng)
}

/// Unit vectors `u, v` spanning the plane orthogonal to `axis`.
fn frame(axis: Vec3<f64>) -> (Vec3<f64>, Vec3<f64>) {
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = geom::normalize(geom::cross(axis, helper)).expect("axis is unit");
    let v = geom::cross(axis, u);
    (u, v)
}

struct Tube {
    bone: (usize, usize),
    radius: f64,
}

struct Draft {
    joints: Vec<(Vec3<f64>, Option<usize>)>,
    tubes: Vec<Tube>,
    /// Sphere center and radius.
    prop: Option<(Vec3<f64>, f64)>,
}

impl Draft {
    fn segment(&self, t: &Tube) -> (Vec3<f64>, Vec3<f64>) {
        (self.joints[t.bone.0].0, self.joints[t.bone.1].0)
    }

    /// Clearance between a candidate segment with radius `r` and every
    /// tube not touching `skip` joint.
    fn clear_of_tubes(&self, a: Vec3<f64>, b: Vec3<f64>, r: f64, skip: Option<usize>, margin: f64) -> bool {
        self.tubes.iter().all(|t| {
            if Some(t.bone.0) == skip || Some(t.bone.1) == skip {
                return true;
            }
            let (p, q) = self.segment(t);
            segment_distance(a, b, p, q) >= r + t.radius + margin
        })
    }
}

fn depth_of(joints: &[(Vec3<f64>, Option<usize>)], j: usize) -> usize {
    let mut d = 0;
    let mut cur = j;
    while let Some(p) = joints[cur].1 {
        d += 1;
        cur = p;
    }
    d
}

fn draft_tree(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Option<Draft> {
    let bones = rng.random_range(cfg.bones.0..=cfg.bones.1);
    let mut d = Draft {
        joints: vec![([0.0; 3], None)],
        tubes: Vec::new(),
        prop: None,
    };
    for _ in 0..bones {
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let candidates: Vec<usize> = (0..d.joints.len()).filter(|&j| depth_of(&d.joints, j) < MAX_DEPTH).collect();
            let parent = candidates[rng.random_range(0..candidates.len())];
            let (ppos, grand) = d.joints[parent];
            let mut dir = random_dir(rng);
            if let Some(g) = grand {
                let inc = geom::normalize(geom::sub(ppos, d.joints[g].0)).unwrap_or(dir);
                dir = geom::normalize(geom::add(geom::scale(inc, 0.8), dir)).unwrap_or(inc);
            }
            let len = rng.random_range(0.18..0.34);
            let radius = rng.random_range(0.035..0.06f64).min(0.3 * len);
            let end = geom::add(ppos, geom::scale(dir, len));
            // siblings and the parent bone must leave the joint at a clear angle
            let shares = d.tubes.iter().filter(|t| t.bone.0 == parent || t.bone.1 == parent);
            let mut ok = true;
            for t in shares {
                let other = if t.bone.0 == parent { t.bone.1 } else { t.bone.0 };
                let od = geom::normalize(geom::sub(d.joints[other].0, ppos)).expect("bones have length");
                if geom::dot(od, dir) > 0.5 {
                    ok = false;
                }
            }
            if !ok || !d.clear_of_tubes(ppos, end, radius, Some(parent), 0.02) {
                continue;
            }
            d.joints.push((end, Some(parent)));
            d.tubes.push(Tube { bone: (parent, d.joints.len() - 1), radius });
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    Some(d)
}

fn add_prop(d: &mut Draft, rng: &mut ChaCha8Rng) -> bool {
    for _ in 0..PLACEMENT_TRIES {
        let j = rng.random_range(0..d.joints.len());
        let r = rng.random_range(0.04..0.08);
        let c = geom::add(d.joints[j].0, geom::scale(random_dir(rng), rng.random_range(0.15..0.25)));
        if d.clear_of_tubes(c, c, r, None, 0.04) {
            d.prop = Some((c, r));
            return true;
        }
    }
    false
}

fn add_antenna(d: &mut Draft, rng: &mut ChaCha8Rng) -> bool {
    for _ in 0..PLACEMENT_TRIES {
        let j = rng.random_range(0..d.joints.len());
        let dir = random_dir(rng);
        let base = geom::add(d.joints[j].0, geom::scale(dir, rng.random_range(0.12..0.2)));
        let tip = geom::add(base, geom::scale(dir, rng.random_range(0.1..0.2)));
        let clear_of_prop = d.prop.is_none_or(|(c, r)| geom::point_segment_distance(c, base, tip) > r + 0.04);
        if clear_of_prop && d.clear_of_tubes(base, tip, 0.0, None, 0.04) {
            d.joints.push((base, Some(j)));
            let b = d.joints.len() - 1;
            d.joints.push((tip, Some(b)));
            return true;
        }
    }
    false
}

fn tube_mesh(a: Vec3<f64>, b: Vec3<f64>, r: f64, radial: usize, rings: usize, verts: &mut Vec<Vec3<f64>>, tris: &mut Vec<[usize; 3]>) {
    let axis = geom::normalize(geom::sub(b, a)).expect("bones have length");
    let (u, v) = frame(axis);
    let base = verts.len();
    for ring in 0..rings {
        let t = ring as f64 / (rings - 1) as f64;
        let c = geom::add(a, geom::scale(geom::sub(b, a), t));
        for s in 0..radial {
            let phi = std::f64::consts::TAU * s as f64 / radial as f64;
            let off = geom::add(geom::scale(u, r * phi.cos()), geom::scale(v, r * phi.sin()));
            verts.push(geom::add(c, off));
        }
    }
    let south = verts.len();
    verts.push(geom::sub(a, geom::scale(axis, r)));
    let north = verts.len();
    verts.push(geom::add(b, geom::scale(axis, r)));
    let at = |ring: usize, s: usize| base + ring * radial + s % radial;
    for ring in 0..rings - 1 {
        for s in 0..radial {
            tris.push([at(ring, s), at(ring, s + 1), at(ring + 1, s + 1)]);
            tris.push([at(ring, s), at(ring + 1, s + 1), at(ring + 1, s)]);
        }
    }
    for s in 0..radial {
        tris.push([south, at(0, s + 1), at(0, s)]);
        tris.push([north, at(rings - 1, s), at(rings - 1, s + 1)]);
    }
}

fn sphere_mesh(c: Vec3<f64>, r: f64, radial: usize, rings: usize, verts: &mut Vec<Vec3<f64>>, tris: &mut Vec<[usize; 3]>) {
    let base = verts.len();
    for ring in 1..=rings {
        let theta = std::f64::consts::PI * ring as f64 / (rings + 1) as f64;
        for s in 0..radial {
            let phi = std::f64::consts::TAU * s as f64 / radial as f64;
            verts.push([
                c[0] + r * theta.sin() * phi.cos(),
                c[1] + r * theta.cos(),
                c[2] + r * theta.sin() * phi.sin(),
            ]);
        }
    }
    let top = verts.len();
    verts.push([c[0], c[1] + r, c[2]]);
    let bottom = verts.len();
    verts.push([c[0], c[1] - r, c[2]]);
    let at = |ring: usize, s: usize| base + ring * radial + s % radial;
    for ring in 0..rings - 1 {
        for s in 0..radial {
            tris.push([at(ring, s), at(ring, s + 1), at(ring + 1, s + 1)]);
            tris.push([at(ring, s), at(ring + 1, s + 1), at(ring + 1, s)]);
        }
    }
    for s in 0..radial {
        tris.push([top, at(0, s + 1), at(0, s)]);
        tris.push([bottom, at(rings - 1, s), at(rings - 1, s + 1)]);
    }
}

struct Shape {
    joints: Vec<Joint<f64>>,
    vertices: Vec<Vec3<f64>>,
    triangles: Vec<[usize; 3]>,
    min_radius: f64,
}

fn build_shape(cfg: &SynthConfig, d: &Draft) -> Shape {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for t in &d.tubes {
        let (a, b) = d.segment(t);
        tube_mesh(a, b, t.radius, cfg.radial_segments, cfg.rings, &mut vertices, &mut triangles);
    }
    if let Some((c, r)) = d.prop {
        sphere_mesh(c, r, cfg.radial_segments, cfg.rings, &mut vertices, &mut triangles);
    }
    // height normalization: mesh spans y ∈ [0, 1]
    let (lo, hi) = vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
    let s = 1.0 / (hi - lo);
    let norm = |p: Vec3<f64>| [p[0] * s, (p[1] - lo) * s, p[2] * s];
    let joints = d
        .joints
        .iter()
        .enumerate()
        .map(|(i, &(p, parent))| Joint { name: format!("joint{i:02}"), position: norm(p), parent })
        .collect();
    let min_radius = d.tubes.iter().map(|t| t.radius).fold(f64::INFINITY, f64::min) * s;
    Shape {
        joints,
        vertices: vertices.into_iter().map(norm).collect(),
        triangles,
        min_radius,
    }
}

/// Ground truth: inverse-squared distance over the Top-3 bones, smoothed
/// across one-ring neighbors, then restricted back to the Top-3 support.
pub fn ground_truth<T: Scalar>(rig: &Rig<T>, resolution: usize) -> Result<WeightRows<T>> {
    let mut grid = build_rig_grid(rig, resolution)?;
    voxelize_surface(&rig.mesh, &mut grid);
    let d = compute_all(rig, &grid)?;
    let bones = rig.skeleton.bone_count();
    let top = topk_bones(&d, GT_TOP.min(bones))?;
    let n = rig.mesh.vertex_count();
    let eps = T::lit(GT_DISTANCE_EPS);

    let mut w = vec![vec![T::zero(); bones]; n];
    for (i, row) in top.iter().enumerate() {
        let vals: Vec<T> = row.iter().map(|&b| T::one() / (d.get(i, b).max(eps) * d.get(i, b).max(eps))).collect();
        let sum: T = vals.iter().copied().sum();
        for (&b, &x) in row.iter().zip(&vals) {
            w[i][b] = x / sum;
        }
    }

    let mut nbrs = vec![Vec::new(); n];
    for (a, b) in rig.mesh.edges() {
        nbrs[a].push(b);
        nbrs[b].push(a);
    }
    let rate = T::lit(GT_SMOOTHING_RATE);
    for _ in 0..GT_SMOOTHING_PASSES {
        let prev = w.clone();
        for (i, ns) in nbrs.iter().enumerate() {
            if ns.is_empty() {
                continue;
            }
            let inv = T::one() / T::lit(ns.len() as f64);
            for b in 0..bones {
                let mean = ns.iter().map(|&j| prev[j][b]).sum::<T>() * inv;
                w[i][b] = prev[i][b] + rate * (mean - prev[i][b]);
            }
        }
    }

    let rows = top
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: T = w[i].iter().copied().sum();
            let vals: Vec<T> = row.iter().map(|&b| w[i][b] / total).collect();
            let kept: T = vals.iter().copied().sum();
            row.iter().zip(vals).map(|(&b, x)| (b, x / kept)).collect()
        })
        .collect();
    WeightRows::new(rows, bones)
}

/// Forces optional parts on or off, ignoring the configured probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Extras {
    pub prop: Option<bool>,
    pub antenna: Option<bool>,
}

pub fn gen_character<T: Scalar>(cfg: &SynthConfig, seed: u64) -> Result<Rig<T>> {
    gen_character_with(cfg, seed, Extras::default())
}

pub fn gen_character_with<T: Scalar>(cfg: &SynthConfig, seed: u64, extras: Extras) -> Result<Rig<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let Some(mut draft) = draft_tree(cfg, &mut rng) else { continue };
        let want_prop = extras.prop.unwrap_or_else(|| rng.random_bool(cfg.prop_probability));
        let want_antenna = extras.antenna.unwrap_or_else(|| rng.random_bool(cfg.antenna_probability));
        if want_prop && !add_prop(&mut draft, &mut rng) {
            continue;
        }
        if want_antenna && !add_antenna(&mut draft, &mut rng) {
            continue;
        }
        let shape = build_shape(cfg, &draft);
        let extent = shape
            .joints
            .iter()
            .map(|j| j.position)
            .chain(shape.vertices.iter().copied())
            .fold([(f64::INFINITY, f64::NEG_INFINITY); 3], |mut acc, p| {
                for k in 0..3 {
                    acc[k] = (acc[k].0.min(p[k]), acc[k].1.max(p[k]));
                }
                acc
            })
            .iter()
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max);
        let cell = extent / (cfg.resolution - 2) as f64;
        if shape.min_radius < MIN_RADIUS_CELLS * cell {
            continue;
        }
        let cast = |p: Vec3<f64>| p.map(T::lit);
        let joints = shape
            .joints
            .into_iter()
            .map(|j| Joint { name: j.name, position: cast(j.position), parent: j.parent })
            .collect();
        let mesh = Mesh::new(shape.vertices.into_iter().map(cast).collect(), shape.triangles)?;
        let skeleton = Skeleton::new(joints)?;
        let mut rig = Rig::new(format!("synth_{seed:06}"), mesh, skeleton, None)?;
        rig.weights = Some(ground_truth(&rig, cfg.resolution)?);
        return Ok(rig);
    }
    Err(Error::Degenerate(format!("no valid character for seed {seed} after {MAX_ATTEMPTS} attempts")))
}

/// Writes rigs for seeds `seed..seed + n` plus a manifest listing them.
pub fn gen_dataset(n: usize, cfg: &SynthConfig, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::with_capacity(n);
    let mut manifest = String::new();
    for i in 0..n as u64 {
        let s = seed + i;
        let rig: Rig<f64> = gen_character(cfg, s)?;
        let name = format!("{}.json", rig.name);
        let path = out_dir.join(&name);
        save_rig(&rig, &path)?;
        manifest.push_str(&name);
        manifest.push('\n');
        files.push(path);
    }
    let mpath = out_dir.join(MANIFEST);
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(files)
}

/// Paths listed in a dataset manifest, resolved against its directory.
pub fn read_manifest(dir: &Path) -> Result<Vec<PathBuf>> {
    let mpath = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(|l| dir.join(l.trim())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_cases() {
        let d = segment_distance([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.5, 2.0, 0.0]);
        assert!((d - 1.0).abs() < 1e-12);
        let d = segment_distance([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]);
        assert!((d - 1.0).abs() < 1e-12);
        let d = segment_distance([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, -1.0, 0.3], [0.5, 1.0, 0.3]);
        assert!((d - 0.3).abs() < 1e-12);
    }

    #[test]
    fn tube_is_closed() {
        let (mut v, mut t) = (Vec::new(), Vec::new());
        tube_mesh([0.0; 3], [0.0, 1.0, 0.0], 0.1, 8, 6, &mut v, &mut t);
        assert_eq!(v.len(), 8 * 6 + 2);
        let mesh = Mesh::new(v, t).unwrap();
        // closed surface: every edge shared by exactly two triangles
        let mut count = std::collections::HashMap::new();
        for tri in &mesh.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        assert!(count.values().all(|&c| c == 2));
    }

    #[test]
    fn character_basics() {
        let cfg = SynthConfig { resolution: 40, ..Default::default() };
        let rig: Rig<f64> = gen_character(&cfg, 3).unwrap();
        let (lo, hi) = rig.mesh.bounds().unwrap();
        assert!((hi[1] - lo[1] - 1.0).abs() < 1e-9);
        let w = rig.weights.as_ref().unwrap();
        for row in w.rows() {
            assert!(row.len() <= GT_TOP);
            let s: f64 = row.iter().map(|e| e.1).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let real = rig.skeleton.bones().iter().filter(|b| !b.is_helper()).count();
        assert!(real >= 6);
    }
}
