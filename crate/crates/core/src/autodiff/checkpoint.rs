use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named parameters, serialized as JSON with round-trip float precision.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub params: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn from_named<T: Scalar>(named: &[(String, Tensor<T>)]) -> Self {
        let params = named
            .iter()
            .map(|(name, t)| {
                let rec = TensorRecord {
                    shape: t.shape().to_vec(),
                    values: t.data().iter().map(|x| x.as_f64()).collect(),
                };
                (name.clone(), rec)
            })
            .collect();
        Checkpoint { params }
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let rec = self
            .params
            .get(name)
            .ok_or_else(|| Error::Schema(format!("checkpoint has no parameter `{name}`")))?;
        Tensor::new(rec.shape.clone(), rec.values.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
