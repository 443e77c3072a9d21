use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use safetensors::SafeTensors;

use super::net::{FusionNet, NetworkConfig};
use crate::error::{Error, Result};
use crate::hand_model::{NUM_COARSE_VERTICES, NUM_VERTICES};

pub const CHECKPOINT_FORMAT: &str = "evrgbhand-fusion-net";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes all parameters (as f32) plus the serialized network configuration.
pub fn save_checkpoint(net: &FusionNet, path: &Path) -> Result<()> {
    let tensors: Vec<(String, Tensor)> = net
        .params()
        .iter()
        .map(|(k, v)| Ok((k.clone(), v.as_tensor().to_dtype(DType::F32)?)))
        .collect::<Result<_>>()?;
    let config = serde_json::to_string(net.config()).map_err(|e| Error::data(format!("config: {e}")))?;
    let metadata = HashMap::from([
        ("format".to_string(), CHECKPOINT_FORMAT.to_string()),
        ("version".to_string(), CHECKPOINT_VERSION.to_string()),
        ("network_config".to_string(), config),
    ]);
    safetensors::serialize_to_file(tensors, Some(metadata), path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Loads a checkpoint, rejecting missing, unexpected or mis-shaped arrays.
pub fn load_checkpoint(path: &Path, dtype: DType, device: &Device) -> Result<FusionNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::data(format!("{}: {msg}", path.display()));
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let meta = meta.metadata().clone().unwrap_or_default();
    if meta.get("format").map(String::as_str) != Some(CHECKPOINT_FORMAT) {
        return Err(bad("not a fusion network checkpoint".into()));
    }
    let version: u32 = meta.get("version").and_then(|v| v.parse().ok()).ok_or_else(|| bad("missing version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let config: NetworkConfig = serde_json::from_str(meta.get("network_config").ok_or_else(|| bad("missing network_config".into()))?)
        .map_err(|e| bad(format!("network_config: {e}")))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let net = FusionNet::new(config, &Array2::zeros((NUM_VERTICES, NUM_COARSE_VERTICES)), 0, dtype, device)?;
    let params = net.params();
    for (name, _) in st.tensors() {
        if params.get(&name).is_none() {
            return Err(bad(format!("unexpected array `{name}`")));
        }
    }
    for (name, var) in params.iter() {
        let view = st.tensor(name).map_err(|_| bad(format!("missing array `{name}`")))?;
        if view.shape() != var.dims() {
            return Err(bad(format!(
                "array `{name}` has shape {:?}, configuration expects {:?}",
                view.shape(),
                var.dims()
            )));
        }
        if view.dtype() != safetensors::Dtype::F32 {
            return Err(bad(format!("array `{name}` is {:?}, expected F32", view.dtype())));
        }
        let values: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.assign(name, &Tensor::from_vec(values, view.shape(), device)?)?;
    }
    Ok(net)
}
