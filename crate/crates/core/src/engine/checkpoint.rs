//! Checkpoint file: a magic line, one line of JSON metadata, then the
//! parameters as little-endian `f32` in [`Parameters::slices`] order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EngineError, TrainConfig};
use crate::arch::NetworkSpec;
use crate::nn::{Network, Parameters};

pub const CHECKPOINT_MAGIC: &str = "ODSEG-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub fingerprint: String,
    pub spec: NetworkSpec,
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_dice_od: Option<f64>,
    pub val_dice_oc: Option<f64>,
    pub seed: u64,
    pub config: Option<TrainConfig>,
    pub num_parameters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    weights: Vec<f32>,
}

fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

impl Checkpoint {
    pub fn from_network(
        net: &Network<f32>,
        epoch: usize,
        train_loss: Option<f64>,
        val_dice: Option<(f64, f64)>,
        seed: u64,
        config: Option<TrainConfig>,
    ) -> Self {
        let weights = net.parameters().to_flat();
        Self {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                fingerprint: net.spec().fingerprint(),
                spec: net.spec().clone(),
                epoch,
                train_loss: finite(train_loss),
                val_dice_od: finite(val_dice.map(|d| d.0)),
                val_dice_oc: finite(val_dice.map(|d| d.1)),
                seed,
                config,
                num_parameters: weights.len(),
            },
            weights,
        }
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn network(&self) -> Result<Network<f32>, EngineError> {
        let mut params: Parameters<f32> = Network::zeroed(self.meta.spec.clone())?
            .parameters()
            .clone();
        params.load_flat(&self.weights)?;
        Ok(Network::from_parameters(self.meta.spec.clone(), params)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.weights.len() * 4 + 4096);
        writeln!(out, "{CHECKPOINT_MAGIC} v{FORMAT_VERSION}").expect("vec write");
        serde_json::to_writer(&mut out, &self.meta).expect("meta serializes");
        out.push(b'\n');
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EngineError> {
        let fmt = |m: &str| EngineError::Format(m.to_string());
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let magic = lines.next().ok_or_else(|| fmt("empty file"))?;
        if magic != format!("{CHECKPOINT_MAGIC} v{FORMAT_VERSION}").as_bytes() {
            return Err(fmt("unrecognised header"));
        }
        let meta_line = lines.next().ok_or_else(|| fmt("missing metadata"))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(meta_line).map_err(|e| EngineError::Format(e.to_string()))?;
        let body = lines.next().unwrap_or(&[]);
        if meta.spec.fingerprint() != meta.fingerprint {
            return Err(EngineError::Incompatible(
                "stored fingerprint does not match the stored spec".into(),
            ));
        }
        if body.len() != meta.num_parameters * 4 {
            return Err(fmt(&format!(
                "{} weight bytes for {} parameters",
                body.len(),
                meta.num_parameters
            )));
        }
        let weights = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { meta, weights })
    }

    pub fn save(&self, path: &Path) -> Result<(), EngineError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and rejects checkpoints trained for a different architecture.
    pub fn load_for(path: &Path, spec: &NetworkSpec) -> Result<Self, EngineError> {
        let ckpt = Self::load(path)?;
        let expected = spec.fingerprint();
        if ckpt.meta.fingerprint != expected {
            return Err(EngineError::Incompatible(format!(
                "checkpoint fingerprint {} differs from spec fingerprint {expected}",
                ckpt.meta.fingerprint
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{default_network_spec, SkipMode, TensorShape};

    fn spec(mode: SkipMode) -> NetworkSpec {
        default_network_spec(TensorShape::new(32, 32, 3), 3, mode).unwrap()
    }

    #[test]
    fn round_trip() {
        let net = Network::<f32>::new(spec(SkipMode::Concat), 5).unwrap();
        let ckpt = Checkpoint::from_network(&net, 3, Some(0.25), Some((0.9, f64::NAN)), 5, None);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.meta.val_dice_oc, None);
        assert_eq!(back.network().unwrap().parameters(), net.parameters());
    }

    #[test]
    fn rejects_foreign_and_damaged_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let net = Network::<f32>::new(spec(SkipMode::Concat), 1).unwrap();
        Checkpoint::from_network(&net, 0, None, None, 1, None)
            .save(&path)
            .unwrap();
        assert!(Checkpoint::load_for(&path, &spec(SkipMode::Concat)).is_ok());
        assert!(matches!(
            Checkpoint::load_for(&path, &spec(SkipMode::Add)),
            Err(EngineError::Incompatible(_))
        ));
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(EngineError::Format(_))
        ));
        assert!(Checkpoint::from_bytes(b"garbage\n{}\n").is_err());
    }
}
