//! JSON checkpoints.
//!
//! Schema (field order is fixed by the struct definitions below):
//!
//! ```text
//! {
//!   "format": "holdq-network",
//!   "version": 1,
//!   "dims": { "input_size", "lstm_hidden", "fc_hidden", "output_size" },
//!   "tensors": {
//!     "lstm_w_input", "lstm_w_recurrent", "lstm_bias",
//!     "fc1_weight", "fc1_bias", "fc2_weight", "fc2_bias"
//!   }
//! }
//! ```
//!
//! Each tensor is a flat row-major array; LSTM arrays stack the gates in the
//! order input, forget, output, candidate. `output_size` is 3 for Q networks
//! and 4 for the move classifier. Floats are written in shortest round-trip
//! form, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetDims, NetworkParams, Tensors};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "holdq-network";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'static str,
    version: u32,
    dims: &'a NetDims,
    tensors: &'a Tensors,
}

#[derive(Deserialize)]
struct CheckpointOwned {
    format: String,
    version: u32,
    dims: NetDims,
    tensors: Tensors,
}

impl NetworkParams {
    pub fn to_json(&self) -> String {
        let ck = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            dims: &self.dims,
            tensors: &self.t,
        };
        serde_json::to_string(&ck).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: CheckpointOwned =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        NetworkParams::from_tensors(ck.dims, ck.tensors)
    }
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    std::fs::write(path, params.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NetworkParams::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::init_params;
    use proptest::prelude::*;

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.json");
        let p = init_params(NetDims::new(5, 4, 3), 12).unwrap();
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
    }

    #[test]
    fn header_fields_lead() {
        let p = init_params(NetDims::new(2, 1, 1).with_outputs(4), 0).unwrap();
        let json = p.to_json();
        assert!(json.starts_with(r#"{"format":"holdq-network","version":1,"dims":{"input_size":3,"lstm_hidden":1,"fc_hidden":1,"output_size":4},"tensors":{"lstm_w_input":"#));
    }

    #[test]
    fn rejects_bad_checkpoints() {
        let p = init_params(NetDims::new(2, 2, 2), 0).unwrap();
        let json = p.to_json();
        assert!(NetworkParams::from_json(&json.replace("\"version\":1", "\"version\":9")).is_err());
        assert!(NetworkParams::from_json(&json.replace("holdq-network", "other")).is_err());
        // dims that disagree with the tensor lengths
        assert!(NetworkParams::from_json(&json.replace("\"lstm_hidden\":2", "\"lstm_hidden\":3")).is_err());
        assert!(NetworkParams::from_json("{}").is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(seed in any::<u64>(), h in 1usize..6, l in 1usize..5, f in 1usize..5) {
            let p = init_params(NetDims::new(h, l, f), seed).unwrap();
            let back = NetworkParams::from_json(&p.to_json()).unwrap();
            prop_assert_eq!(back.flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            p.flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
