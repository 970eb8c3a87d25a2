//! `MFCK` checkpoint files and their JSON sidecar.
//!
//! Layout: magic `MFCK`, format version `u32`, layer count `u32`, one record
//! per layer (`u8` kind then `u32` fields), then every convolution's weights
//! followed by its biases as little-endian `f32`, in layer order.

use super::{ConvParams, LayerSpec, NetParams, NetSpec, Network};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_RELU: u8 = 1;
const KIND_POOL: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_map: f64,
    pub config_hash: String,
}

pub fn encode_checkpoint(net: &Network<f32>) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(net.spec.0.len() as u32);
    for layer in &net.spec.0 {
        match *layer {
            LayerSpec::Conv {
                in_maps,
                out_maps,
                kernel,
                stride,
                pad,
            } => {
                w.u8(KIND_CONV);
                for v in [in_maps, out_maps, kernel, stride, pad] {
                    w.u32(v as u32);
                }
            }
            LayerSpec::Relu => w.u8(KIND_RELU),
            LayerSpec::MaxPool { window, stride } => {
                w.u8(KIND_POOL);
                w.u32(window as u32);
                w.u32(stride as u32);
            }
        }
    }
    for conv in &net.params.convs {
        for &v in conv.weight.iter().chain(&conv.bias) {
            w.f32(v);
        }
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Network<f32>> {
    let mut r = Reader::new(bytes, path);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    if count > 4096 {
        return Err(r.err(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let layer = match r.u8()? {
            KIND_CONV => {
                let mut f = [0usize; 5];
                for v in &mut f {
                    *v = r.u32()? as usize;
                }
                LayerSpec::conv(f[0], f[1], f[2], f[3], f[4])
            }
            KIND_RELU => LayerSpec::Relu,
            KIND_POOL => LayerSpec::pool(r.u32()? as usize, r.u32()? as usize),
            other => return Err(r.err(format!("unknown layer kind {other}"))),
        };
        layers.push(layer);
    }
    let spec = NetSpec(layers);
    spec.validate().map_err(|e| r.err(e.to_string()))?;
    let shapes = NetParams::<f32>::zeros_like(&spec);
    let mut convs = Vec::with_capacity(shapes.convs.len());
    for shape in &shapes.convs {
        let mut read = |n: usize| -> Result<Vec<f32>> { (0..n).map(|_| r.f32()).collect() };
        let weight = read(shape.weight.len())?;
        let bias = read(shape.bias.len())?;
        convs.push(ConvParams { weight, bias });
    }
    r.finish()?;
    let params = NetParams { convs };
    if !params.is_finite() {
        return Err(Error::format(path, "non-finite parameters"));
    }
    Network::new(spec, params)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn save_checkpoint(path: &Path, net: &Network<f32>, meta: Option<&CheckpointMeta>) -> Result<()> {
    write_file(path, &encode_checkpoint(net))?;
    if let Some(meta) = meta {
        let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
        write_file(&sidecar_path(path), json.as_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network<f32>> {
    let bytes = read_file(path)?;
    decode_checkpoint(&bytes, path)
}

pub fn load_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(path);
    let bytes = read_file(&side)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(&side, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SeededStream;

    #[test]
    fn encode_decode() {
        let net = Network::<f32>::init(NetSpec::tiny(), &SeededStream::new(1, 0)).unwrap();
        let bytes = encode_checkpoint(&net);
        assert_eq!(&bytes[..4], b"MFCK");
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn rejects_truncation_and_magic() {
        let net = Network::<f32>::init(NetSpec::tiny(), &SeededStream::new(1, 0)).unwrap();
        let bytes = encode_checkpoint(&net);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3], Path::new("x")),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, Path::new("x")).is_err());
    }
}
