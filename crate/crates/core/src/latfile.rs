//! `.lat` latent files.
//!
//! Layout: one JSON header line `{"format":"lat","version":1,"shape":[C,H,W],"dtype":"f32le"}`
//! followed by a single line of standard base64 holding the row-major
//! little-endian `f32` payload. Encoding then decoding is bit-exact.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Shape};

pub const LAT_VERSION: u32 = 1;
pub const DTYPE_TAG: &str = "f32le";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    shape: [usize; 3],
    dtype: String,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: ".lat file",
        reason: reason.into(),
    }
}

pub fn encode(t: &LatentTensor) -> String {
    let s = t.shape();
    let header = Header {
        format: "lat".into(),
        version: LAT_VERSION,
        shape: [s.channels, s.height, s.width],
        dtype: DTYPE_TAG.into(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    out.push_str(&STANDARD.encode(t.to_le_bytes()));
    out.push('\n');
    out
}

pub fn decode(text: &str) -> Result<LatentTensor> {
    let mut lines = text.lines();
    let header_line = lines.next().ok_or_else(|| bad("missing header line"))?;
    let header: Header =
        serde_json::from_str(header_line).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != "lat" {
        return Err(bad(format!("unexpected format tag {:?}", header.format)));
    }
    if header.version != LAT_VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    if header.dtype != DTYPE_TAG {
        return Err(bad(format!("unsupported dtype {:?}", header.dtype)));
    }
    let payload = lines.next().ok_or_else(|| bad("missing payload line"))?;
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing content after payload"));
    }
    let bytes = STANDARD
        .decode(payload.trim())
        .map_err(|e| bad(format!("payload: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(bad("payload length is not a multiple of 4"));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let [c, h, w] = header.shape;
    LatentTensor::new(Shape::new(c, h, w), data).map_err(|e| match e {
        Error::Format { reason, .. } => bad(reason),
        other => other,
    })
}

pub fn write(path: &Path, t: &LatentTensor) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<LatentTensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sample_latent;
    use proptest::prelude::*;

    #[test]
    fn header_is_single_json_line() {
        let t = sample_latent(3, Shape::new(2, 4, 4)).unwrap();
        let text = encode(&t);
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"format":"lat","version":1,"shape":[2,4,4],"dtype":"f32le"}"#
        );
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn rejects_corrupt_files() {
        assert!(decode("").is_err());
        assert!(decode("not json\nAAAA\n").is_err());
        let t = sample_latent(3, Shape::new(1, 2, 2)).unwrap();
        let text = encode(&t);
        let truncated = &text[..text.len() - 6];
        assert!(decode(truncated).is_err());
        let wrong_dtype = text.replace("f32le", "f16le");
        assert!(decode(&wrong_dtype).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(seed in any::<u64>(), c in 1usize..4, h in 1usize..9, w in 1usize..9) {
            let t = sample_latent(seed, Shape::new(c, h, w)).unwrap();
            let back = decode(&encode(&t)).unwrap();
            prop_assert_eq!(back.to_le_bytes(), t.to_le_bytes());
            prop_assert_eq!(back.shape(), t.shape());
        }
    }
}
