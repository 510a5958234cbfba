use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Joint, Mesh, Rig, Skeleton, WeightRows};
use crate::error::{Error, Result};
use crate::Scalar;

/// On-disk rig bundle. Numbers are written with shortest round-trip
/// formatting, so a save/load cycle reproduces every `f64` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub name: String,
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    pub joints: Vec<JointRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<(usize, f64)>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    pub name: String,
    pub position: [f64; 3],
    pub parent: i64,
}

impl RigFile {
    pub fn from_rig<T: Scalar>(rig: &Rig<T>) -> Self {
        let v3 = |p: [T; 3]| p.map(T::as_f64);
        RigFile {
            name: rig.name.clone(),
            vertices: rig.mesh.vertices.iter().map(|&p| v3(p)).collect(),
            triangles: rig.mesh.triangles.clone(),
            joints: rig
                .skeleton
                .joints()
                .iter()
                .map(|j| JointRecord {
                    name: j.name.clone(),
                    position: v3(j.position),
                    parent: j.parent.map_or(-1, |p| p as i64),
                })
                .collect(),
            weights: rig.weights.as_ref().map(|w| {
                w.rows()
                    .iter()
                    .map(|r| r.iter().map(|&(b, x)| (b, x.as_f64())).collect())
                    .collect()
            }),
        }
    }

    pub fn into_rig<T: Scalar>(self) -> Result<Rig<T>> {
        let vertices = self.vertices.iter().map(|p| p.map(T::lit)).collect();
        let mesh = Mesh::new(vertices, self.triangles)?;
        let joints = self
            .joints
            .into_iter()
            .enumerate()
            .map(|(j, r)| {
                let parent = match r.parent {
                    -1 => None,
                    p if p >= 0 => Some(p as usize),
                    p => {
                        return Err(Error::Schema(format!(
                            "joint {j} ('{}') has parent {p}; expected -1 or an index",
                            r.name
                        )))
                    }
                };
                Ok(Joint {
                    name: r.name,
                    position: r.position.map(T::lit),
                    parent,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let skeleton = Skeleton::new(joints)?;
        let weights = match self.weights {
            Some(rows) => {
                let rows = rows
                    .into_iter()
                    .map(|r| r.into_iter().map(|(b, w)| (b, T::lit(w))).collect())
                    .collect();
                Some(WeightRows::renormalized(rows, skeleton.bone_count())?)
            }
            None => None,
        };
        Rig::new(self.name, mesh, skeleton, weights)
    }
}

pub fn parse_rig<T: Scalar>(text: &str) -> Result<Rig<T>> {
    let file: RigFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    file.into_rig()
}

pub fn rig_to_string<T: Scalar>(rig: &Rig<T>) -> String {
    let mut s = serde_json::to_string(&RigFile::from_rig(rig)).expect("rig bundle serializes");
    s.push('\n');
    s
}

pub fn load_rig<T: Scalar>(path: &Path) -> Result<Rig<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rig(&text)
}

pub fn save_rig<T: Scalar>(rig: &Rig<T>, path: &Path) -> Result<()> {
    fs::write(path, rig_to_string(rig)).map_err(|e| Error::io(path, e))
}

/// On-disk skin weights: sparse `(bone, weight)` rows, one per vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub bone_count: usize,
    pub weights: Vec<Vec<(usize, f64)>>,
}

impl WeightsFile {
    pub fn from_rows<T: Scalar>(w: &WeightRows<T>) -> Self {
        WeightsFile {
            bone_count: w.bone_count(),
            weights: w
                .rows()
                .iter()
                .map(|r| r.iter().map(|&(b, x)| (b, x.as_f64())).collect())
                .collect(),
        }
    }

    pub fn into_rows<T: Scalar>(self) -> Result<WeightRows<T>> {
        let rows = self
            .weights
            .into_iter()
            .map(|r| r.into_iter().map(|(b, w)| (b, T::lit(w))).collect())
            .collect();
        WeightRows::renormalized(rows, self.bone_count)
    }
}

pub fn save_weights<T: Scalar>(w: &WeightRows<T>, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string(&WeightsFile::from_rows(w)).expect("weights serialize");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_weights<T: Scalar>(path: &Path) -> Result<WeightRows<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: WeightsFile = serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    file.into_rows()
}

/// Reads the `v` and `f` records of a triangulated OBJ file.
pub fn load_obj_mesh<T: Scalar>(path: &Path) -> Result<Mesh<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub(crate) fn parse_obj<T: Scalar>(text: &str) -> Result<Mesh<T>> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let xyz: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Schema(format!("obj line {}: {e}", ln + 1)))?;
                if xyz.len() != 3 {
                    return Err(Error::Schema(format!("obj line {}: vertex needs 3 coordinates", ln + 1)));
                }
                vertices.push([T::lit(xyz[0]), T::lit(xyz[1]), T::lit(xyz[2])]);
            }
            Some("f") => {
                let corners: Vec<&str> = parts.collect();
                if corners.len() != 3 {
                    return Err(Error::Schema(format!(
                        "obj line {}: face has {} corners; only triangles are supported",
                        ln + 1,
                        corners.len()
                    )));
                }
                let mut tri = [0usize; 3];
                for (k, c) in corners.iter().enumerate() {
                    let idx: i64 = c
                        .split('/')
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|e| Error::Schema(format!("obj line {}: {e}", ln + 1)))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else {
                        vertices.len() as i64 + idx
                    };
                    if resolved < 0 {
                        return Err(Error::Schema(format!("obj line {}: bad vertex reference {idx}", ln + 1)));
                    }
                    tri[k] = resolved as usize;
                }
                triangles.push(tri);
            }
            _ => {}
        }
    }
    Mesh::new(vertices, triangles)
}
