//! Small dense networks: SELU MLPs with exact reverse-mode gradients,
//! forward-mode derivatives along one input coordinate, Adam, and JSON checkpoints.
//!
//! Checkpoint format (`format = "pathflow-mlp"`, `version = 1`):
//!
//! | field        | content                                                       |
//! |--------------|---------------------------------------------------------------|
//! | `layer_dims` | widths from input to output                                   |
//! | `activation` | always `"selu"` (hidden layers; the output layer is linear)   |
//! | `layers`     | per layer: `weight` (row-major, `out x in`) and `bias` (`out`) |

mod adam;
mod mlp;

pub use adam::Adam;
pub use mlp::{selu, selu_prime, selu_second, unit_direction, DualTrace, Gradients, Mlp, Trace, SELU_ALPHA, SELU_LAMBDA};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "pathflow-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerRecord {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub activation: String,
    pub layers: Vec<LayerRecord>,
}

impl From<&Mlp> for Checkpoint {
    fn from(net: &Mlp) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layer_dims: net.dims().to_vec(),
            activation: "selu".into(),
            layers: net
                .layers()
                .into_iter()
                .map(|(w, b)| LayerRecord {
                    weight: w.iter().copied().collect(),
                    bias: b.to_vec(),
                })
                .collect(),
        }
    }
}

impl Checkpoint {
    pub fn into_mlp(self, origin: &Path) -> Result<Mlp> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::schema(origin, format!("unexpected format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::schema(
                origin,
                format!("checkpoint version {} (expected {CHECKPOINT_VERSION})", self.version),
            ));
        }
        if self.activation != "selu" {
            return Err(Error::schema(origin, format!("unsupported activation `{}`", self.activation)));
        }
        let dims = &self.layer_dims;
        if dims.len() < 2 || self.layers.len() != dims.len() - 1 {
            return Err(Error::schema(origin, "layer count does not match layer_dims"));
        }
        let mut params = Vec::new();
        for (l, rec) in self.layers.into_iter().enumerate() {
            if rec.weight.len() != dims[l] * dims[l + 1] || rec.bias.len() != dims[l + 1] {
                return Err(Error::schema(origin, format!("layer {l} has the wrong shape")));
            }
            params.extend(rec.weight);
            params.extend(rec.bias);
        }
        Mlp::from_params(dims, params).map_err(|e| Error::schema(origin, e.to_string()))
    }
}

pub fn save_checkpoint(net: &Mlp, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from(net))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
    ck.into_mlp(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = Mlp::new(&[5, 32, 32, 2], 11).unwrap();
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        let x = [0.1, -0.3, 0.7, 1.1, 0.25];
        assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
    }

    #[test]
    fn independent_reader_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = Mlp::new(&[3, 7, 2], 3).unwrap();
        save_checkpoint(&net, &path).unwrap();
        // Generic JSON walk, independent of the typed loader.
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        for layer in v["layers"].as_array().unwrap() {
            for key in ["weight", "bias"] {
                for x in layer[key].as_array().unwrap() {
                    sum += x.as_f64().unwrap();
                    count += 1;
                }
            }
        }
        assert_eq!(count, net.n_params());
        let expected: f64 = net.params().iter().sum();
        assert!((sum - expected).abs() < 1e-12);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = Mlp::new(&[2, 2], 0).unwrap();
        let mut ck = Checkpoint::from(&net);
        ck.version = 99;
        std::fs::write(&path, serde_json::to_string(&ck).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Schema { .. })));
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Schema { .. })));
    }
}
