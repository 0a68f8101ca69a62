//! Flat text checkpoint: parameter name -> shape + float64 values.
//!
//! ```text
//! timing-checkpoint 1
//! meta <single-line JSON>
//! param <name> <trainable:0|1> <ndim> <dim>...
//! <values separated by single spaces>
//! ...
//! end <parameter count>
//! sha256 <hex digest of every preceding byte>
//! ```
//!
//! Values use Rust's shortest round-trip decimal form, so a save/load cycle is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::DiffError;

pub const CHECKPOINT_MAGIC: &str = "timing-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub entries: Vec<CheckpointEntry>,
}

fn bad(msg: impl Into<String>) -> DiffError {
    DiffError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: &str) -> Self {
        let entries = store
            .iter()
            .map(|(_, p)| CheckpointEntry {
                name: p.name.clone(),
                shape: p.array.shape().to_vec(),
                trainable: p.trainable,
                values: p.array.values().to_vec(),
            })
            .collect();
        Self { meta: meta.to_string(), entries }
    }

    pub fn encode(&self) -> Result<String, DiffError> {
        if self.meta.contains('\n') {
            return Err(bad("meta must be a single line"));
        }
        let mut body = String::new();
        let _ = writeln!(body, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(body, "meta {}", self.meta);
        for e in &self.entries {
            if e.name.is_empty() || e.name.chars().any(char::is_whitespace) {
                return Err(bad(format!("invalid parameter name {:?}", e.name)));
            }
            let _ = write!(body, "param {} {} {}", e.name, u8::from(e.trainable), e.shape.len());
            for d in &e.shape {
                let _ = write!(body, " {d}");
            }
            body.push('\n');
            let mut first = true;
            for v in &e.values {
                if !first {
                    body.push(' ');
                }
                first = false;
                let _ = write!(body, "{v:?}");
            }
            body.push('\n');
        }
        let _ = writeln!(body, "end {}", self.entries.len());
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        let _ = writeln!(body, "sha256 {digest}");
        Ok(body)
    }

    pub fn decode(text: &str) -> Result<Self, DiffError> {
        let split = text.trim_end_matches('\n').rfind('\n').ok_or_else(|| bad("truncated checkpoint"))?;
        let (body, tail) = text.split_at(split + 1);
        let digest = tail
            .trim_end()
            .strip_prefix("sha256 ")
            .ok_or_else(|| bad("missing sha256 trailer"))?;
        if hex::encode(Sha256::digest(body.as_bytes())) != digest {
            return Err(bad("integrity check failed: sha256 mismatch"));
        }
        let mut lines = body.lines();
        let header = lines.next().ok_or_else(|| bad("empty checkpoint"))?;
        let version = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("not a checkpoint file"))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let meta = lines
            .next()
            .and_then(|l| l.strip_prefix("meta "))
            .ok_or_else(|| bad("missing meta line"))?
            .to_string();
        let mut entries = Vec::new();
        loop {
            let line = lines.next().ok_or_else(|| bad("missing end line"))?;
            if let Some(count) = line.strip_prefix("end ") {
                let count: usize = count.parse().map_err(|_| bad("bad end count"))?;
                if count != entries.len() {
                    return Err(bad(format!("end count {count} but {} parameters", entries.len())));
                }
                break;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() < 4 || fields[0] != "param" {
                return Err(bad(format!("malformed parameter header {line:?}")));
            }
            let name = fields[1].to_string();
            let trainable = match fields[2] {
                "0" => false,
                "1" => true,
                other => return Err(bad(format!("bad trainable flag {other:?}"))),
            };
            let ndim: usize = fields[3].parse().map_err(|_| bad("bad ndim"))?;
            if fields.len() != 4 + ndim {
                return Err(bad(format!("shape of {name} has wrong arity")));
            }
            let shape = fields[4..]
                .iter()
                .map(|f| f.parse::<usize>().map_err(|_| bad("bad dimension")))
                .collect::<Result<Vec<_>, _>>()?;
            let data = lines.next().ok_or_else(|| bad(format!("missing values for {name}")))?;
            let values = if data.is_empty() {
                Vec::new()
            } else {
                data.split(' ')
                    .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value {v:?} in {name}"))))
                    .collect::<Result<Vec<_>, _>>()?
            };
            if values.len() != shape.iter().product::<usize>() {
                return Err(bad(format!("{name}: {} values for shape {shape:?}", values.len())));
            }
            entries.push(CheckpointEntry { name, shape, trainable, values });
        }
        Ok(Self { meta, entries })
    }

    /// Writes values into a store with the same names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<(), DiffError> {
        if self.entries.len() != store.len() {
            return Err(bad(format!(
                "checkpoint has {} parameters, model has {}",
                self.entries.len(),
                store.len()
            )));
        }
        for e in &self.entries {
            let id = store.id(&e.name).ok_or_else(|| bad(format!("unknown parameter {}", e.name)))?;
            let p = store.get_mut(id);
            if p.array.shape() != e.shape.as_slice() {
                return Err(DiffError::ShapeMismatch {
                    op: "restore",
                    left: p.array.shape().to_vec(),
                    right: e.shape.clone(),
                });
            }
            p.array.values_mut().copy_from_slice(&e.values);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffError> {
        let text = self.encode()?;
        std::fs::write(path, text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, DiffError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::decode(&text)
    }
}
