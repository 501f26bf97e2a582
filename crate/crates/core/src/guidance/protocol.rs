//! Framing and message schema shared with the guidance service.
//!
//! A frame is a 4-byte big-endian header length, the UTF-8 JSON header, and
//! then `payload_bytes` raw bytes (zero when the header has no such field).
//! Images travel as little-endian `f32`, row-major, view after view.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{GuidanceRequest, PromptBundle};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

/// Headers above this size are treated as a corrupt stream.
const MAX_HEADER_BYTES: u32 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub semantic: f64,
    pub vc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        version: u32,
        resolution: usize,
        views: usize,
        patch_size: usize,
        stride: usize,
        prompt: String,
        base_prompt: String,
        weights: LossWeights,
        directional: bool,
    },
    Ready {
        version: u32,
        feature_layer: String,
    },
    Evaluate {
        iteration: usize,
        payload_bytes: usize,
    },
    Result {
        semantic_loss: f64,
        vc_loss: f64,
        payload_bytes: usize,
    },
    Error {
        message: String,
    },
    Shutdown,
}

impl Message {
    pub fn payload_bytes(&self) -> usize {
        match self {
            Message::Evaluate { payload_bytes, .. } | Message::Result { payload_bytes, .. } => *payload_bytes,
            _ => 0,
        }
    }

    pub fn hello(
        resolution: usize,
        views: usize,
        patch_size: usize,
        stride: usize,
        prompts: &PromptBundle,
        weights: LossWeights,
        directional: bool,
    ) -> Self {
        Message::Hello {
            version: PROTOCOL_VERSION,
            resolution,
            views,
            patch_size,
            stride,
            prompt: prompts.target.clone(),
            base_prompt: prompts.base.clone(),
            weights,
            directional,
        }
    }
}

/// Serializes one frame into `out`.
pub fn encode_frame(message: &Message, payload: &[u8]) -> Result<Vec<u8>> {
    if payload.len() != message.payload_bytes() {
        return Err(Error::Protocol(format!(
            "header announces {} payload bytes, {} given",
            message.payload_bytes(),
            payload.len()
        )));
    }
    let header = serde_json::to_vec(message).map_err(|e| Error::Protocol(e.to_string()))?;
    let mut out = Vec::with_capacity(4 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u32).to_be_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn write_frame<W: Write>(w: &mut W, message: &Message, payload: &[u8]) -> std::io::Result<()> {
    let bytes = encode_frame(message, payload)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    w.write_all(&bytes)?;
    w.flush()
}

/// Outer error: transport failure. Inner error: the bytes arrived but do not
/// form a valid frame.
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Result<(Message, Vec<u8>)>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len > MAX_HEADER_BYTES {
        return Ok(Err(Error::Protocol(format!("header length {len} exceeds limit"))));
    }
    let mut header = vec![0u8; len as usize];
    r.read_exact(&mut header)?;
    let message: Message = match serde_json::from_slice(&header) {
        Ok(m) => m,
        Err(e) => return Ok(Err(Error::Protocol(format!("bad header: {e}")))),
    };
    let mut payload = vec![0u8; message.payload_bytes()];
    r.read_exact(&mut payload)?;
    Ok(Ok((message, payload)))
}

/// Parses a complete frame from a byte slice (fixtures, tests).
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, Vec<u8>)> {
    let mut cursor = std::io::Cursor::new(bytes);
    let frame = read_frame(&mut cursor).map_err(|e| Error::Protocol(format!("truncated frame: {e}")))??;
    if cursor.position() as usize != bytes.len() {
        return Err(Error::Protocol("trailing bytes after frame".into()));
    }
    Ok(frame)
}

/// Images followed by the per-view visible-vertex tables.
pub fn encode_evaluate_payload(request: &GuidanceRequest) -> Vec<u8> {
    let px = request.pixel_count();
    let pairs: usize = request.views.iter().map(|v| v.visible.len()).sum();
    let mut out = Vec::with_capacity(request.views.len() * (px * 4 + 4) + pairs * 8);
    for view in &request.views {
        for &v in &view.image {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for view in &request.views {
        out.extend_from_slice(&(view.visible.len() as u32).to_le_bytes());
        for &(vertex, patch) in &view.visible {
            out.extend_from_slice(&vertex.to_le_bytes());
            out.extend_from_slice(&patch.to_le_bytes());
        }
    }
    out
}

/// Server-side inverse of [`encode_evaluate_payload`]: `(images, tables)`.
#[allow(clippy::type_complexity)]
pub fn decode_evaluate_payload(
    payload: &[u8],
    views: usize,
    resolution: usize,
) -> Result<(Vec<Vec<f32>>, Vec<Vec<(u32, u32)>>)> {
    let image_bytes = views * resolution * resolution * 4;
    if payload.len() < image_bytes {
        return Err(Error::Shape(format!(
            "payload of {} bytes cannot hold {views} images of {resolution}²",
            payload.len()
        )));
    }
    let images = decode_images(&payload[..image_bytes], views, resolution)?;
    let mut rest = &payload[image_bytes..];
    let take_u32 = |rest: &mut &[u8]| -> Result<u32> {
        if rest.len() < 4 {
            return Err(Error::Shape("visible-vertex table truncated".into()));
        }
        let v = u32::from_le_bytes(rest[..4].try_into().unwrap());
        *rest = &rest[4..];
        Ok(v)
    };
    let mut tables = Vec::with_capacity(views);
    for _ in 0..views {
        let count = take_u32(&mut rest)? as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let vertex = take_u32(&mut rest)?;
            let patch = take_u32(&mut rest)?;
            table.push((vertex, patch));
        }
        tables.push(table);
    }
    if !rest.is_empty() {
        return Err(Error::Shape(format!("{} trailing payload bytes", rest.len())));
    }
    Ok((images, tables))
}

pub fn encode_images(images: &[Vec<f32>]) -> Vec<u8> {
    images
        .iter()
        .flat_map(|img| img.iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

/// Splits a payload into `views` row-major `f32` images.
pub fn decode_images(payload: &[u8], views: usize, resolution: usize) -> Result<Vec<Vec<f32>>> {
    let px = resolution * resolution;
    if payload.len() != views * px * 4 {
        return Err(Error::Shape(format!(
            "expected {} bytes for {views} images of {resolution}², got {}",
            views * px * 4,
            payload.len()
        )));
    }
    Ok(payload
        .chunks_exact(px * 4)
        .map(|img| {
            img.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect())
}
