//! Network checkpoint format.
//!
//! ```text
//! offset  size  content
//! 0       4     magic "L2XM"
//! 4       4     format version, u32 little-endian
//! 8       4     length n of the spec block, u32 little-endian
//! 12      n     spec block, UTF-8 JSON:
//!               {"role", "widths", "head", "tensors": [{"name", "shape"}]}
//! 12+n    ...   tensor payloads in spec order, f64 little-endian, row-major
//! ```
//!
//! Nothing may follow the last payload.

use std::path::Path;

use l2x_core::autodiff::ParameterSet;
use l2x_core::models::{Classifier, Explainer, Head, Mlp, MlpSpec, VariationalNet};
use l2x_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"L2XM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Classifier,
    Explainer,
    Variational,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Classifier => "classifier",
            Role::Explainer => "explainer",
            Role::Variational => "variational",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("malformed model file at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported model format version {found} (this build reads {VERSION})")]
    Version { found: u32 },
    #[error("model spec mismatch: {0}")]
    Spec(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecBlock {
    role: Role,
    widths: Vec<usize>,
    head: String,
    tensors: Vec<TensorEntry>,
}

pub fn serialize(role: Role, mlp: &Mlp) -> Vec<u8> {
    let spec = mlp.spec();
    let block = SpecBlock {
        role,
        widths: spec.widths.clone(),
        head: spec.head.as_str().to_owned(),
        tensors: mlp
            .params()
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_owned(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&block).expect("spec block is plain data");
    let payload: usize = mlp.params().iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in mlp.params().iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ModelError::Parse {
                offset: self.bytes.len(),
                message: format!("truncated: {what} needs {n} bytes at offset {}", self.pos),
            }
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<(Role, Mlp), ModelError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(ModelError::Parse {
            offset: 0,
            message: "not an L2XM file".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(ModelError::Version { found: version });
    }
    let len = c.u32("spec length")? as usize;
    let spec_start = c.pos;
    let block: SpecBlock = serde_json::from_slice(c.take(len, "spec block")?).map_err(|e| ModelError::Parse {
        offset: spec_start + e.column().saturating_sub(1),
        message: format!("bad spec block: {e}"),
    })?;
    let head = Head::parse(&block.head).ok_or_else(|| ModelError::Spec(format!("unknown head {:?}", block.head)))?;
    let spec = MlpSpec::new(block.widths, head).map_err(|e| ModelError::Spec(e.to_string()))?;

    let mut params = ParameterSet::new();
    for entry in &block.tensors {
        let n: usize = entry.shape.iter().product();
        let start = c.pos;
        let raw = c.take(n * 8, &format!("tensor {:?}", entry.name))?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(entry.shape.clone(), data).map_err(|e| ModelError::Parse {
            offset: start,
            message: e.to_string(),
        })?;
        params
            .insert(entry.name.clone(), tensor)
            .map_err(|e| ModelError::Spec(e.to_string()))?;
    }
    if c.pos != bytes.len() {
        return Err(ModelError::Parse {
            offset: c.pos,
            message: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    let mlp = Mlp::from_parts(spec, params).map_err(|e| ModelError::Spec(e.to_string()))?;
    Ok((block.role, mlp))
}

pub fn save(path: &Path, role: Role, mlp: &Mlp) -> Result<()> {
    std::fs::write(path, serialize(role, mlp)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, expected: Role) -> Result<Mlp> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let wrap = |source| Error::Model {
        path: path.to_path_buf(),
        source,
    };
    let (role, mlp) = deserialize(&bytes).map_err(wrap)?;
    if role != expected {
        return Err(wrap(ModelError::Spec(format!(
            "file holds the {} network, expected the {} network",
            role.as_str(),
            expected.as_str()
        ))));
    }
    Ok(mlp)
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    Ok(Classifier::new(load(path, Role::Classifier)?)?)
}

pub fn load_explainer(path: &Path) -> Result<Explainer> {
    Ok(Explainer::new(load(path, Role::Explainer)?)?)
}

pub fn load_variational(path: &Path) -> Result<VariationalNet> {
    Ok(VariationalNet::new(load(path, Role::Variational)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use l2x_core::rng::rng_from_seed;

    fn net() -> Mlp {
        Mlp::init(MlpSpec::uniform(4, 6, 2, 3, Head::Softmax).unwrap(), &mut rng_from_seed(1)).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mlp = net();
        let (role, back) = deserialize(&serialize(Role::Classifier, &mlp)).unwrap();
        assert_eq!(role, Role::Classifier);
        assert_eq!(back, mlp);
        for ((_, a), (_, b)) in mlp.params().iter().zip(back.params().iter()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let bytes = serialize(Role::Classifier, &net());
        for cut in [0, 3, 7, 11, 20, bytes.len() - 1] {
            match deserialize(&bytes[..cut]) {
                Err(ModelError::Parse { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(deserialize(&extra), Err(ModelError::Parse { offset, .. }) if offset == bytes.len()));
    }

    #[test]
    fn version_and_spec_mismatch() {
        let mut bytes = serialize(Role::Classifier, &net());
        bytes[4] = 9;
        assert_eq!(deserialize(&bytes), Err(ModelError::Version { found: 9 }));

        let mut bytes = serialize(Role::Classifier, &net());
        let at = bytes.windows(6).position(|w| w == b"[4,6,6").unwrap();
        bytes[at + 1] = b'5';
        assert!(matches!(deserialize(&bytes), Err(ModelError::Spec(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.l2xm");
        save(&path, Role::Classifier, &net()).unwrap();
        assert!(load_classifier(&path).is_ok());
        assert!(matches!(load_explainer(&path), Err(Error::Model { source: ModelError::Spec(_), .. })));
    }
}
