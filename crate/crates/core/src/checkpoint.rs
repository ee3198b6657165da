//! Parameter checkpoints: magic `PFCK`, a little-endian u32 header length,
//! a UTF-8 JSON header naming each tensor with its shape plus a step counter
//! and metadata, then the tensors as concatenated `PFT1` blobs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clicking_agent::{ConvLayer, PolicyParams};
use crate::error::{Error, Result};
use crate::feature_provider::AdapterParams;
use crate::scalar::Scalar;
use crate::seg_model::SegModelParams;
use crate::types::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PFCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F = f32> {
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(kind: &str, step: u64, named: Vec<(&str, Tensor<F>)>, meta: Value) -> Self {
        let tensors_meta = named
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                dims: t.dims().to_vec(),
            })
            .collect();
        Self {
            header: CheckpointHeader {
                kind: kind.to_string(),
                step,
                tensors: tensors_meta,
                meta,
            },
            tensors: named.into_iter().map(|(_, t)| t).collect(),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<F>> {
        self.header
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::format("checkpoint", format!("missing tensor `{name}`")))
    }

    fn meta_f64(&self, key: &str) -> Result<f64> {
        self.header
            .meta
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::format("checkpoint", format!("missing meta `{key}`")))
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::format(
                "checkpoint",
                format!("expected kind `{kind}`, found `{}`", self.header.kind),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            t.encode(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |r: String| Error::format("checkpoint", r);
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing PFCK magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| bad(format!("header json: {e}")))?;
        let mut pos = 8 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let (t, used) = Tensor::<F>::decode(&bytes[pos..])?;
            if t.dims() != entry.dims.as_slice() {
                return Err(bad(format!(
                    "tensor `{}` has dims {:?}, header says {:?}",
                    entry.name,
                    t.dims(),
                    entry.dims
                )));
            }
            pos += used;
            tensors.push(t);
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn scalar_tensor<F: Scalar>(v: F) -> Tensor<F> {
    Tensor::new(vec![1], vec![v]).expect("finite scalar")
}

impl<F: Scalar> From<&PolicyParams<F>> for Checkpoint<F> {
    fn from(p: &PolicyParams<F>) -> Self {
        let names = ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "conv3.weight", "conv3.bias"];
        let named = names.into_iter().zip(p.blocks().into_iter().cloned()).collect();
        Checkpoint::new(
            "agent",
            p.updates,
            named,
            serde_json::json!({
                "temperature": p.temperature.as_f64(),
                "learning_rate": p.learning_rate.as_f64(),
                "rng_seed": p.rng_seed,
                "baseline": p.baseline.map(|b| b.as_f64()),
                "strides": p.layers().map(|l| l.stride),
            }),
        )
    }
}

impl<F: Scalar> TryFrom<&Checkpoint<F>> for PolicyParams<F> {
    type Error = Error;

    fn try_from(c: &Checkpoint<F>) -> Result<Self> {
        c.expect_kind("agent")?;
        let strides: Vec<usize> = c
            .header
            .meta
            .get("strides")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_else(|| vec![1, 2, 1]);
        let layer = |i: usize| -> Result<ConvLayer<F>> {
            Ok(ConvLayer {
                weight: c.tensor(&format!("conv{}.weight", i + 1))?.clone(),
                bias: c.tensor(&format!("conv{}.bias", i + 1))?.clone(),
                stride: *strides.get(i).unwrap_or(&1),
            })
        };
        Ok(PolicyParams {
            conv1: layer(0)?,
            conv2: layer(1)?,
            conv3: layer(2)?,
            temperature: F::lit(c.meta_f64("temperature")?),
            learning_rate: F::lit(c.meta_f64("learning_rate")?),
            rng_seed: c.header.meta.get("rng_seed").and_then(Value::as_u64).unwrap_or(0),
            updates: c.header.step,
            baseline: c.header.meta.get("baseline").and_then(Value::as_f64).map(F::lit),
        })
    }
}

impl<F: Scalar> From<&SegModelParams<F>> for Checkpoint<F> {
    fn from(p: &SegModelParams<F>) -> Self {
        Checkpoint::new(
            "seg_model",
            p.step,
            vec![("weight", p.weight.clone()), ("bias", scalar_tensor(p.bias))],
            serde_json::json!({
                "learning_rate": p.learning_rate.as_f64(),
                "epochs": p.epochs,
                "batch_size": p.batch_size,
            }),
        )
    }
}

impl<F: Scalar> TryFrom<&Checkpoint<F>> for SegModelParams<F> {
    type Error = Error;

    fn try_from(c: &Checkpoint<F>) -> Result<Self> {
        c.expect_kind("seg_model")?;
        Ok(SegModelParams {
            weight: c.tensor("weight")?.clone(),
            bias: c.tensor("bias")?.data()[0],
            learning_rate: F::lit(c.meta_f64("learning_rate")?),
            epochs: c.meta_f64("epochs")? as usize,
            batch_size: c.meta_f64("batch_size")? as usize,
            step: c.header.step,
        })
    }
}

impl<F: Scalar> From<&AdapterParams<F>> for Checkpoint<F> {
    fn from(p: &AdapterParams<F>) -> Self {
        Checkpoint::new(
            "adapter",
            p.step,
            vec![("weight", p.weight.clone())],
            serde_json::json!({
                "learning_rate": p.learning_rate.as_f64(),
                "margin": p.margin.as_f64(),
            }),
        )
    }
}

impl<F: Scalar> TryFrom<&Checkpoint<F>> for AdapterParams<F> {
    type Error = Error;

    fn try_from(c: &Checkpoint<F>) -> Result<Self> {
        c.expect_kind("adapter")?;
        Ok(AdapterParams {
            weight: c.tensor("weight")?.clone(),
            learning_rate: F::lit(c.meta_f64("learning_rate")?),
            margin: F::lit(c.meta_f64("margin")?),
            step: c.header.step,
        })
    }
}
