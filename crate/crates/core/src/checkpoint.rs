//! Flat binary parameter snapshots.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "DHG1"  tensor_count
//! repeated: name_len  name_bytes(UTF-8)  rows  cols  rows*cols f64 (little-endian)
//! ```
//!
//! Architecture settings travel as `1 x 1` tensors named `meta.*`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{AdjRows, FusionMode, GateMode, ModelConfig};
use crate::tensor::Matrix;
use crate::train::{Network, Task};

pub const MAGIC: &[u8; 4] = b"DHG1";

/// Named tensors in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Matrix)>,
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Checkpoint(format!("{what} {value} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&to_u32(self.tensors.len(), "tensor count")?.to_le_bytes());
        for (name, m) in &self.tensors {
            out.extend_from_slice(&to_u32(name.len(), "name length")?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&to_u32(m.rows(), "rows")?.to_le_bytes());
            out.extend_from_slice(&to_u32(m.cols(), "cols")?.to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic (expected DHG1)".into()));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for i in 0..count {
            let len = r.u32("name length")?;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?
                .to_string();
            let rows = r.u32("rows")?;
            let cols = r.u32("cols")?;
            let size = rows
                .checked_mul(cols)
                .and_then(|s| s.checked_mul(8))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape {rows}x{cols} too large")))?;
            let data = r
                .take(size, &name)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, Matrix::from_vec(rows, cols, data)));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }

    /// Snapshot of a network trained on the graph as given or on its symmetrisation.
    pub fn from_trained(net: &Network, symmetrize: bool) -> Self {
        let mut ck = Self::from_network(net);
        ck.tensors
            .push(("meta.symmetrize".into(), Matrix::scalar(if symmetrize { 1.0 } else { 0.0 })));
        ck
    }

    /// Whether the network was trained on the symmetrised graph.
    pub fn symmetrized(&self) -> bool {
        matches!(self.get("meta.symmetrize"), Some(m) if m.len() == 1 && m.as_slice()[0] == 1.0)
    }

    /// Parameters plus the `meta.*` settings needed to rebuild the network.
    pub fn from_network(net: &Network) -> Self {
        let c = net.model.config();
        let meta = [
            ("task", if net.task == Task::NodeClassification { 0.0 } else { 1.0 }),
            ("num_nodes", c.num_nodes as f64),
            ("in_features", c.in_features as f64),
            ("out_dim", c.out_dim as f64),
            ("hidden", c.hidden as f64),
            ("layers", c.layers as f64),
            ("chunk_size", c.chunk_size as f64),
            ("gate_mlp_layers", c.gate_mlp_layers as f64),
            ("adj_mlp_layers", c.adj_mlp_layers as f64),
            ("adj_coef", c.adj_coef),
            ("gate_mode", match c.gate_mode {
                GateMode::Resettable => 0.0,
                GateMode::Plain => 1.0,
                GateMode::Disabled => 2.0,
            }),
            ("fusion_mode", if c.fusion_mode == FusionMode::Gated { 0.0 } else { 1.0 }),
            ("adj_rows", if c.adj_rows == AdjRows::OwnDirection { 0.0 } else { 1.0 }),
        ];
        let mut tensors: Vec<(String, Matrix)> = meta
            .into_iter()
            .map(|(k, v)| (format!("meta.{k}"), Matrix::scalar(v)))
            .collect();
        for id in net.params.ids() {
            tensors.push((net.params.name(id).to_string(), net.params.get(id).clone()));
        }
        Checkpoint { tensors }
    }

    fn meta(&self, key: &str) -> Result<f64> {
        let m = self
            .get(&format!("meta.{key}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing meta.{key}")))?;
        if m.shape() != (1, 1) {
            return Err(Error::Checkpoint(format!("meta.{key} must be 1x1")));
        }
        Ok(m.item())
    }

    fn meta_usize(&self, key: &str) -> Result<usize> {
        let v = self.meta(key)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::Checkpoint(format!("meta.{key} = {v} is not a count")));
        }
        Ok(v as usize)
    }

    /// Rebuilds the network, checking that every parameter is present with the expected shape.
    pub fn to_network(&self) -> Result<Network> {
        let choice = |key: &str, n: usize| -> Result<usize> {
            let v = self.meta_usize(key)?;
            if v >= n {
                return Err(Error::Checkpoint(format!("meta.{key} = {v} out of range")));
            }
            Ok(v)
        };
        let task = [Task::NodeClassification, Task::LinkPrediction][choice("task", 2)?];
        let config = ModelConfig {
            num_nodes: self.meta_usize("num_nodes")?,
            in_features: self.meta_usize("in_features")?,
            out_dim: self.meta_usize("out_dim")?,
            hidden: self.meta_usize("hidden")?,
            layers: self.meta_usize("layers")?,
            chunk_size: self.meta_usize("chunk_size")?,
            gate_mlp_layers: self.meta_usize("gate_mlp_layers")?,
            adj_mlp_layers: self.meta_usize("adj_mlp_layers")?,
            adj_coef: self.meta("adj_coef")?,
            input_dropout: 0.0,
            dropout: 0.0,
            noise: false,
            gate_mode: [GateMode::Resettable, GateMode::Plain, GateMode::Disabled][choice("gate_mode", 3)?],
            fusion_mode: [FusionMode::Gated, FusionMode::Sum][choice("fusion_mode", 2)?],
            adj_rows: [AdjRows::OwnDirection, AdjRows::Outgoing][choice("adj_rows", 2)?],
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("inconsistent architecture: {e}")))?;
        let classes = config.out_dim;
        let mut net = Network::init(config, task, classes, &mut ChaCha8Rng::seed_from_u64(0))?;
        let expected = net.params.len();
        for id in net.params.ids().collect::<Vec<_>>() {
            let name = net.params.name(id).to_string();
            let value = self
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if value.shape() != net.params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?}, expected {:?}",
                    value.shape(),
                    net.params.get(id).shape()
                )));
            }
            *net.params.get_mut(id) = value.clone();
        }
        let stored = self.tensors.iter().filter(|(n, _)| !n.starts_with("meta.")).count();
        if stored != expected {
            return Err(Error::Checkpoint(format!("{stored} parameter tensors, expected {expected}")));
        }
        Ok(net)
    }
}
