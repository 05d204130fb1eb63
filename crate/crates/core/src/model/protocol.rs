//! Wire protocol between the attribution engine and a model server.
//!
//! Messages are single-line JSON objects terminated by `\n`, discriminated
//! by `"type"`. Tensor payloads are base64 (standard alphabet, padded) of
//! little-endian `f32`, row-major: `(N, H, W, C)` for images and
//! `(N, n_classes)` for scores.
//!
//! ```text
//! client: {"type":"hello","version":1}
//! server: {"type":"hello","version":1,"spec":{"input":[1,1,1],"n_classes":1,...}}
//! client: {"type":"predict","id":1,"n":1,"space":"unit_0_1","data":"AACAPw=="}
//! server: {"type":"scores","id":1,"n":1,"data":"AAAAAA=="}
//! ```
//!
//! `"AACAPw=="` is the bytes `00 00 80 3f`, i.e. the single value `1.0`.
//! A server answers a request it cannot serve with
//! `{"type":"error","id":<id or null>,"message":"..."}`.

use serde::{Deserialize, Serialize};

use super::PredictorSpec;
use crate::codec;
use crate::error::{Error, Result};
use crate::types::{ColorSpace, Image, Validate};

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on a single protocol line (256 MiB), guarding decoders.
pub const MAX_LINE_BYTES: usize = 256 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spec: Option<PredictorSpec>,
    },
    Predict {
        id: u64,
        n: usize,
        space: ColorSpace,
        data: String,
    },
    Scores {
        id: u64,
        n: usize,
        data: String,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("protocol messages always serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Message> {
        if line.len() > MAX_LINE_BYTES {
            return Err(Error::MalformedResponse(
                "message exceeds size limit".into(),
            ));
        }
        let msg: Message = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::MalformedResponse(format!("unparseable message: {e}")))?;
        if let Message::Hello {
            spec: Some(spec), ..
        } = &msg
        {
            spec.validate().map_err(|v| {
                Error::MalformedResponse(format!("invalid spec: {}", Error::Invalid(v)))
            })?;
        }
        Ok(msg)
    }

    pub fn predict(id: u64, images: &[Image]) -> Message {
        let mut flat = Vec::with_capacity(images.iter().map(|i| i.data.len()).sum());
        for img in images {
            flat.extend_from_slice(&img.data);
        }
        Message::Predict {
            id,
            n: images.len(),
            space: images
                .first()
                .map_or(ColorSpace::NormalizedZeroMean, |i| i.space),
            data: codec::encode_f32(&flat),
        }
    }

    pub fn scores(id: u64, scores: &[Vec<f64>]) -> Message {
        let flat: Vec<f32> = scores.iter().flatten().map(|&v| v as f32).collect();
        Message::Scores {
            id,
            n: scores.len(),
            data: codec::encode_f32(&flat),
        }
    }
}

/// Decode a predict payload into `n` images of shape `input`.
pub fn decode_images(
    n: usize,
    space: ColorSpace,
    data: &str,
    input: (usize, usize, usize),
) -> Result<Vec<Image>> {
    let (h, w, c) = input;
    let per = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(c))
        .ok_or_else(|| Error::MalformedResponse("image shape overflows".into()))?;
    let expected = n.checked_mul(per).and_then(|v| v.checked_mul(4));
    // base64 expands 3 bytes into 4 characters.
    if expected.map(|e| e.div_ceil(3) * 4) != Some(data.len()) {
        return Err(Error::MalformedResponse(format!(
            "payload of {} characters does not hold {n} images of {h}x{w}x{c}",
            data.len()
        )));
    }
    let flat = codec::decode_f32(data)?;
    if flat.len() != n * per {
        return Err(Error::MalformedResponse("payload length mismatch".into()));
    }
    flat.chunks_exact(per.max(1))
        .take(n)
        .map(|chunk| {
            Image::new(h, w, c, chunk.to_vec(), space)
                .map_err(|e| Error::MalformedResponse(format!("bad image payload: {e}")))
        })
        .collect()
}

/// Decode a scores payload into `n` vectors of `n_classes`.
pub fn decode_scores(n: usize, data: &str, n_classes: usize) -> Result<Vec<Vec<f64>>> {
    let flat = codec::decode_f32(data)?;
    if Some(flat.len()) != n.checked_mul(n_classes) || n_classes == 0 {
        return Err(Error::MalformedResponse(format!(
            "expected {n}x{n_classes} scores, got {} values",
            flat.len()
        )));
    }
    Ok(flat
        .chunks_exact(n_classes)
        .map(|c| c.iter().map(|&v| f64::from(v)).collect())
        .collect())
}
