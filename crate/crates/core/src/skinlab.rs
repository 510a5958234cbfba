//! Forward kinematics, linear blend skinning, pose sampling and metrics.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Affine3, Vec3};
use crate::hgraph::topk_bones;
use crate::hollowdist::VertexBoneDistances;
use crate::rigcore::{Mesh, Rig, Skeleton, WeightRows};
use crate::Scalar;

pub const DEFAULT_TAU: f64 = 1e-4;
pub const DEFAULT_POSE_COUNT: usize = 10;
pub const POSED_FRACTION: f64 = 0.3;
pub const ANGLE_STD_DEGREES: f64 = 25.0;
const AXIS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<T> {
    pub axis: Vec3<T>,
    pub angle: T,
}

impl<T: Scalar> Rotation<T> {
    pub fn identity() -> Self {
        Rotation { axis: [T::zero(), T::zero(), T::one()], angle: T::zero() }
    }
}

/// One local rotation per bone; unposed bones hold the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose<T> {
    pub rotations: Vec<Rotation<T>>,
}

impl<T: Scalar> Pose<T> {
    pub fn identity(bones: usize) -> Self {
        Pose { rotations: vec![Rotation::identity(); bones] }
    }

    pub fn validate(&self, bones: usize) -> Result<()> {
        if self.rotations.len() != bones {
            return Err(Error::Schema(format!("pose has {} rotations for {bones} bones", self.rotations.len())));
        }
        for (b, r) in self.rotations.iter().enumerate() {
            let len = geom::norm(r.axis).as_f64();
            if (len - 1.0).abs() > AXIS_TOLERANCE || !r.angle.is_finite() {
                return Err(Error::InvalidArgument(format!("bone {b}: axis length {len}, angle {}", r.angle)));
            }
        }
        Ok(())
    }
}

/// World transform of every bone. Each bone rotates about its start joint
/// and inherits the transform of the bone ending at that joint.
pub fn forward_kinematics<T: Scalar>(skeleton: &Skeleton<T>, pose: &Pose<T>) -> Result<Vec<Affine3<T>>> {
    let bones = skeleton.bones();
    pose.validate(bones.len())?;
    let mut out: Vec<Option<Affine3<T>>> = vec![None; bones.len()];

    fn resolve<T: Scalar>(
        b: usize,
        skeleton: &Skeleton<T>,
        pose: &Pose<T>,
        out: &mut Vec<Option<Affine3<T>>>,
    ) -> Affine3<T> {
        if let Some(t) = out[b] {
            return t;
        }
        let bone = skeleton.bones()[b];
        let pivot = skeleton.joints()[bone.start].position;
        let r = pose.rotations[b];
        let local = Affine3::rotation_about(r.axis, r.angle, pivot);
        let t = match skeleton.incoming_bone(bone.start) {
            Some(parent) => resolve(parent, skeleton, pose, out).compose(&local),
            None => local,
        };
        out[b] = Some(t);
        t
    }

    Ok((0..bones.len()).map(|b| resolve(b, skeleton, pose, &mut out)).collect())
}

/// `v′_i = Σ_j w_ij · T_j(v_i)`, evaluated as `v_i + Σ_j w_ij (T_j(v_i) − v_i)`
/// (equal for convex rows).
pub fn lbs_deform<T: Scalar>(mesh: &Mesh<T>, weights: &WeightRows<T>, transforms: &[Affine3<T>]) -> Result<Vec<Vec3<T>>> {
    if weights.len() != mesh.vertex_count() || weights.bone_count() != transforms.len() {
        return Err(Error::Schema(format!(
            "{} weight rows over {} bones for {} vertices and {} transforms",
            weights.len(),
            weights.bone_count(),
            mesh.vertex_count(),
            transforms.len()
        )));
    }
    Ok(mesh
        .vertices
        .iter()
        .zip(weights.rows())
        .map(|(&v, row)| {
            // displacement form: identity transforms leave v bit-exact
            let shift = row.iter().fold([T::zero(); 3], |acc, &(b, w)| {
                geom::add(acc, geom::scale(geom::sub(transforms[b].apply(v), v), w))
            });
            geom::add(v, shift)
        })
        .collect())
}

/// Number of bones rotated per sampled pose: `⌈0.3·B⌉`.
pub fn posed_bone_count(bones: usize) -> usize {
    (3 * bones).div_ceil(10)
}

/// Random poses: `⌈0.3·B⌉` distinct bones per pose, each with a uniform
/// random axis and a normal angle (mean 0, std 25°).
pub fn sample_poses<T: Scalar>(skeleton: &Skeleton<T>, count: usize, seed: u64) -> Result<Vec<Pose<T>>> {
    if count == 0 {
        return Err(Error::InvalidArgument("pose count must be at least 1".into()));
    }
    let bones = skeleton.bone_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, ANGLE_STD_DEGREES.to_radians()).expect("positive std");
    let chosen = posed_bone_count(bones);
    Ok((0..count)
        .map(|_| {
            let mut pose = Pose::identity(bones);
            for b in rand::seq::index::sample(&mut rng, bones, chosen) {
                let axis: [f64; 3] = UnitSphere.sample(&mut rng);
                let angle: f64 = normal.sample(&mut rng);
                pose.rotations[b] = Rotation { axis: axis.map(T::lit), angle: T::lit(angle) };
            }
            pose
        })
        .collect())
}

fn check_same_shape<T: Scalar>(pred: &WeightRows<T>, gt: &WeightRows<T>) -> Result<()> {
    if pred.len() != gt.len() || pred.bone_count() != gt.bone_count() {
        return Err(Error::Schema(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.len(),
            pred.bone_count(),
            gt.len(),
            gt.bone_count()
        )));
    }
    Ok(())
}

/// Pooled counts of influential bones (`w > τ`); an empty denominator gives 1.
pub fn precision_recall<T: Scalar>(pred: &WeightRows<T>, gt: &WeightRows<T>, tau: f64) -> Result<(f64, f64)> {
    check_same_shape(pred, gt)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau {tau} must be positive")));
    }
    let (mut hit, mut npred, mut ngt) = (0usize, 0usize, 0usize);
    for (p, g) in pred.rows().iter().zip(gt.rows()) {
        let ps: Vec<usize> = p.iter().filter(|e| e.1.as_f64() > tau).map(|e| e.0).collect();
        let gs: Vec<usize> = g.iter().filter(|e| e.1.as_f64() > tau).map(|e| e.0).collect();
        hit += ps.iter().filter(|b| gs.contains(b)).count();
        npred += ps.len();
        ngt += gs.len();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    Ok((ratio(hit, npred), ratio(hit, ngt)))
}

/// Mean over vertices of the dense L1 distance between weight rows.
pub fn l1_norm<T: Scalar>(pred: &WeightRows<T>, gt: &WeightRows<T>) -> Result<f64> {
    check_same_shape(pred, gt)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = (0..pred.len())
        .map(|i| {
            let (p, g) = (pred.dense_row(i), gt.dense_row(i));
            p.iter().zip(&g).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum::<f64>()
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Mean vertex displacement between the two skinnings over all poses.
pub fn distance_error<T: Scalar>(rig: &Rig<T>, pred: &WeightRows<T>, gt: &WeightRows<T>, poses: &[Pose<T>]) -> Result<f64> {
    check_same_shape(pred, gt)?;
    if poses.is_empty() || rig.mesh.vertex_count() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for pose in poses {
        let t = forward_kinematics(&rig.skeleton, pose)?;
        let a = lbs_deform(&rig.mesh, pred, &t)?;
        let b = lbs_deform(&rig.mesh, gt, &t)?;
        total += a.iter().zip(&b).map(|(&p, &q)| geom::dist(p, q).as_f64()).sum::<f64>();
    }
    Ok(total / (poses.len() * rig.mesh.vertex_count()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub l1_norm: f64,
    pub dist_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigMetrics {
    pub name: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Per-rig metrics and their unweighted means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rigs: Vec<RigMetrics>,
    pub aggregate: Metrics,
}

impl EvalReport {
    pub fn from_rigs(rigs: Vec<RigMetrics>) -> Self {
        let n = rigs.len().max(1) as f64;
        let mean = |f: fn(&Metrics) -> f64| rigs.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        let aggregate = Metrics {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            l1_norm: mean(|m| m.l1_norm),
            dist_err: mean(|m| m.dist_err),
        };
        EvalReport { rigs, aggregate }
    }
}

pub fn evaluate<T: Scalar>(rig: &Rig<T>, pred: &WeightRows<T>, gt: &WeightRows<T>, poses: &[Pose<T>], tau: f64) -> Result<RigMetrics> {
    let (precision, recall) = precision_recall(pred, gt, tau)?;
    Ok(RigMetrics {
        name: rig.name.clone(),
        metrics: Metrics {
            precision,
            recall,
            l1_norm: l1_norm(pred, gt)?,
            dist_err: distance_error(rig, pred, gt, poses)?,
        },
    })
}

/// Coverage of ground-truth weights by each vertex's `K` nearest bones,
/// `K = 1..=k_max`, pooled over the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Mean fraction of a vertex's weight mass on its `K` nearest bones.
    pub mass: Vec<f64>,
    /// Fraction of influential (vertex, bone) pairs whose bone is among the
    /// vertex's `K` nearest.
    pub influence: Vec<f64>,
}

pub fn topk_coverage<T: Scalar>(dataset: &[(&WeightRows<T>, &VertexBoneDistances<T>)], k_max: usize, tau: f64) -> Result<Coverage> {
    let mut mass = vec![0.0; k_max];
    let mut hits = vec![0usize; k_max];
    let (mut vertices, mut influential) = (0usize, 0usize);
    for (w, d) in dataset {
        if w.len() != d.vertex_count() || w.bone_count() != d.bone_count() {
            return Err(Error::Schema("weights and distances disagree in shape".into()));
        }
        let order = topk_bones(d, d.bone_count())?;
        for (i, row) in order.iter().enumerate() {
            let vals: Vec<f64> = row.iter().map(|&b| w.get(i, b).as_f64()).collect();
            let total: f64 = vals.iter().sum();
            let mut prefix = 0.0;
            let mut inf_prefix = 0usize;
            for k in 0..k_max {
                if let Some(&v) = vals.get(k) {
                    prefix += v;
                    inf_prefix += (v > tau) as usize;
                }
                mass[k] += prefix / total;
                hits[k] += inf_prefix;
            }
            influential += vals.iter().filter(|&&v| v > tau).count();
            vertices += 1;
        }
    }
    let v = vertices.max(1) as f64;
    Ok(Coverage {
        mass: mass.into_iter().map(|m| m / v).collect(),
        influence: hits.into_iter().map(|h| if influential == 0 { 1.0 } else { h as f64 / influential as f64 }).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationRecord {
    pub bone: usize,
    pub axis: [f64; 3],
    pub angle: f64,
}

/// Sparse pose document; bones not listed keep the identity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub rotations: Vec<RotationRecord>,
}

impl PoseFile {
    pub fn from_pose<T: Scalar>(pose: &Pose<T>) -> Self {
        let rotations = pose
            .rotations
            .iter()
            .enumerate()
            .filter(|(_, r)| r.angle != T::zero())
            .map(|(bone, r)| RotationRecord { bone, axis: r.axis.map(T::as_f64), angle: r.angle.as_f64() })
            .collect();
        PoseFile { rotations }
    }

    pub fn to_pose<T: Scalar>(&self, bones: usize) -> Result<Pose<T>> {
        let mut pose = Pose::identity(bones);
        for r in &self.rotations {
            if r.bone >= bones {
                return Err(Error::IndexOutOfRange { what: "pose bone".into(), index: r.bone, limit: bones });
            }
            pose.rotations[r.bone] = Rotation { axis: r.axis.map(T::lit), angle: T::lit(r.angle) };
        }
        pose.validate(bones)?;
        Ok(pose)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))
    }
}
