//! Little-endian `f64` array dumps with a JSON header.
//!
//! Layout: `u64` LE header length in bytes, the UTF-8 JSON header, then the
//! payload as consecutive `f64` LE values.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write_dump<W: Write, H: Serialize>(mut w: W, header: &H, data: &[f64]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dump; the payload length must equal `expected_len(&header)`.
pub fn read_dump<R: Read, H: DeserializeOwned>(
    mut r: R,
    expected_len: impl Fn(&H) -> usize,
) -> Result<(H, Vec<f64>)> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > (1 << 24) {
        return Err(Error::Format(format!("header length {len} too large")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: H = serde_json::from_slice(&json)?;
    let count = expected_len(&header);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * count {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            8 * count
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, data))
}
