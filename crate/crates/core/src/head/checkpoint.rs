//! Binary checkpoint container.
//!
//! ```text
//! offset  size        field
//! 0       8           magic b"GEOHEAD\0"
//! 8       4           schema version, u32 LE
//! 12      8           header length H, u64 LE
//! 20      H           UTF-8 JSON header (config, encoder, feature sets, head shapes)
//! 20+H    ...         for each head in header order (key first, then minors):
//!                       in_dim * out_dim f64 LE weights, input-major
//!                       out_dim f64 LE biases
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderSpec, HeadConfig, LinearHead, ModelBundle};
use crate::error::{GeoError, Result};
use crate::features::FeatureSet;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GEOHEAD\0";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct HeadShape {
    role: String,
    in_dim: usize,
    out_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: HeadConfig,
    encoder: EncoderSpec,
    key_feature: FeatureSet,
    minor_feature_sets: Vec<FeatureSet>,
    heads: Vec<HeadShape>,
}

fn data_err(msg: impl Into<String>) -> GeoError {
    GeoError::Data(msg.into())
}

pub fn write_checkpoint<W: Write>(bundle: &ModelBundle, mut out: W) -> Result<()> {
    let mut heads = vec![HeadShape { role: "key".into(), in_dim: bundle.key_head.in_dim, out_dim: bundle.key_head.out_dim }];
    for (i, h) in bundle.minor_heads.iter().enumerate() {
        heads.push(HeadShape { role: format!("minor_{i}"), in_dim: h.in_dim, out_dim: h.out_dim });
    }
    let header = Header {
        config: bundle.config.clone(),
        encoder: bundle.encoder.clone(),
        key_feature: bundle.key_feature,
        minor_feature_sets: bundle.minor_feature_sets.clone(),
        heads,
    };
    let json = serde_json::to_vec(&header).map_err(|e| data_err(format!("cannot encode checkpoint header: {e}")))?;

    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&bundle.schema_version.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for head in std::iter::once(&bundle.key_head).chain(&bundle.minor_heads) {
        for v in head.weight.iter().chain(&head.bias) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_exact<R: Read, const N: usize>(input: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| data_err(format!("truncated checkpoint ({what}): {e}")))?;
    Ok(buf)
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| Ok(f64::from_le_bytes(read_exact::<_, 8>(input, "head values")?))).collect()
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ModelBundle> {
    let magic: [u8; 8] = read_exact(&mut input, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(data_err("not a geohead checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(read_exact(&mut input, "version")?);
    if version != SCHEMA_VERSION {
        return Err(data_err(format!("unsupported checkpoint schema version {version}")));
    }
    let header_len = u64::from_le_bytes(read_exact(&mut input, "header length")?) as usize;
    if header_len > 1 << 24 {
        return Err(data_err(format!("implausible checkpoint header length {header_len}")));
    }
    let mut json = vec![0u8; header_len];
    input.read_exact(&mut json).map_err(|e| data_err(format!("truncated checkpoint header: {e}")))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| data_err(format!("bad checkpoint header: {e}")))?;
    header.config.validate()?;

    if header.heads.len() != 1 + header.config.minor_features {
        return Err(data_err("checkpoint head count does not match its config"));
    }
    let mut heads = Vec::with_capacity(header.heads.len());
    for shape in &header.heads {
        if shape.in_dim != header.config.embedding_dim {
            return Err(data_err(format!("head {} has input size {}", shape.role, shape.in_dim)));
        }
        let weight = read_f64s(&mut input, shape.in_dim * shape.out_dim)?;
        let bias = read_f64s(&mut input, shape.out_dim)?;
        heads.push(LinearHead::from_parts(shape.in_dim, shape.out_dim, weight, bias)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(data_err(format!("{} trailing bytes after checkpoint payload", rest.len())));
    }
    let mut heads = heads.into_iter();
    let key_head = heads.next().expect("key head present");
    if key_head.out_dim != header.config.key_output_size() {
        return Err(data_err("key head output size does not match its head kind"));
    }
    Ok(ModelBundle {
        schema_version: version,
        config: header.config,
        encoder: header.encoder,
        key_feature: header.key_feature,
        minor_feature_sets: header.minor_feature_sets,
        key_head,
        minor_heads: heads.collect(),
    })
}

fn with_path(path: &Path, e: std::io::Error) -> GeoError {
    GeoError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| with_path(path, e))?;
    write_checkpoint(bundle, BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| with_path(path, e))?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{HeadKind, SCHEMA_VERSION};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle() -> ModelBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let config = HeadConfig::new(HeadKind::Pmop, 3, 6).with_minor_features(1);
        ModelBundle {
            schema_version: SCHEMA_VERSION,
            key_head: LinearHead::init(6, HeadKind::Pmop, 3, &mut rng).unwrap(),
            minor_heads: vec![LinearHead::init(6, HeadKind::Psop, 1, &mut rng).unwrap()],
            config,
            encoder: EncoderSpec::stub(6, 42),
            key_feature: FeatureSet::NonGeo,
            minor_feature_sets: vec![FeatureSet::GeoOnly],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let b = bundle();
        let mut bytes = Vec::new();
        write_checkpoint(&b, &mut bytes).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), SCHEMA_VERSION);
        let back = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(back, b);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn payload_layout_is_little_endian_input_major() {
        let b = bundle();
        let mut bytes = Vec::new();
        write_checkpoint(&b, &mut bytes).unwrap();
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let payload = &bytes[20 + header_len..];
        let first = f64::from_le_bytes(payload[..8].try_into().unwrap());
        assert_eq!(first, b.key_head.weight[0]);
        let key_values = b.key_head.weight.len() + b.key_head.bias.len();
        let bias0 = f64::from_le_bytes(payload[8 * b.key_head.weight.len()..][..8].try_into().unwrap());
        assert_eq!(bias0, b.key_head.bias[0]);
        let minor0 = f64::from_le_bytes(payload[8 * key_values..][..8].try_into().unwrap());
        assert_eq!(minor0, b.minor_heads[0].weight[0]);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let b = bundle();
        let mut bytes = Vec::new();
        write_checkpoint(&b, &mut bytes).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(read_checkpoint(&bad_magic[..]).is_err());
        let mut bad_version = bytes.clone();
        bad_version[8] = 99;
        assert!(read_checkpoint(&bad_version[..]).is_err());
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(read_checkpoint(&trailing[..]).is_err());
    }
}
