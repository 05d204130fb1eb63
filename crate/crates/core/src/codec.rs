//! Tensor payload encoding: little-endian floats, row-major, base64
//! (standard alphabet, padded). The wire carries 32-bit floats; stored
//! artifacts keep full 64-bit precision.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::error::{Error, Result};

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn f32_from_le_bytes(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::MalformedResponse(format!(
            "tensor payload of {} bytes is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn encode_f32(values: &[f32]) -> String {
    STANDARD.encode(f32_to_le_bytes(values))
}

pub fn decode_f32(text: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(text.as_bytes())
        .map_err(|e| Error::MalformedResponse(format!("bad base64 payload: {e}")))?;
    f32_from_le_bytes(&bytes)
}

pub fn encode_f64(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f64(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text.as_bytes())
        .map_err(|e| Error::MalformedResponse(format!("bad base64 payload: {e}")))?;
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::MalformedResponse(format!(
            "f64 payload of {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// `#[serde(with = "...")]` adapters.
pub(crate) mod serde_f32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode_f32(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f32>, D::Error> {
        let text = String::deserialize(d)?;
        super::decode_f32(&text).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod serde_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode_f64(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        super::decode_f64(&text).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod serde_masks {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for m in v {
            seq.serialize_element(&super::encode_f64(m))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let texts = Vec::<String>::deserialize(d)?;
        texts
            .iter()
            .map(|t| super::decode_f64(t).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub(crate) mod serde_bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rows: &[Vec<bool>], s: S) -> Result<S::Ok, S::Error> {
        let as_ints: Vec<Vec<u8>> = rows
            .iter()
            .map(|r| r.iter().map(|&b| u8::from(b)).collect())
            .collect();
        serde::Serialize::serialize(&as_ints, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<bool>>, D::Error> {
        let rows = Vec::<Vec<u8>>::deserialize(d)?;
        rows.into_iter()
            .map(|r| {
                r.into_iter()
                    .map(|v| match v {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(serde::de::Error::custom(format!(
                            "indicator entry {other} is not 0 or 1"
                        ))),
                    })
                    .collect()
            })
            .collect()
    }
}
