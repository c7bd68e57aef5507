//! Binary frames exchanged between the curator and a user.
//!
//! ```text
//! query    : 0x51 | seq u64 LE | threshold f64 LE | rate_ppm u32 LE   (21 bytes)
//! response : 0x52 | seq u64 LE | bit u8 ∈ {0, 1}                     (10 bytes)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::randomizer::ResponseBit;

pub const QUERY_MAGIC: u8 = 0x51;
pub const RESPONSE_MAGIC: u8 = 0x52;
pub const QUERY_LEN: usize = 21;
pub const RESPONSE_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryMessage {
    pub seq: u64,
    pub threshold: f64,
    /// Truthful response rate in parts per million, at most 999 999.
    pub rate_ppm: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseMessage {
    pub seq: u64,
    pub bit: ResponseBit,
}

fn decode_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Decode { offset, reason: reason.into() }
}

fn check_header(bytes: &[u8], magic: u8, len: usize) -> Result<()> {
    if bytes.is_empty() {
        return Err(decode_err(0, "empty frame"));
    }
    if bytes[0] != magic {
        return Err(decode_err(0, format!("expected magic 0x{magic:02X}, found 0x{:02X}", bytes[0])));
    }
    if bytes.len() < len {
        return Err(decode_err(bytes.len(), format!("frame truncated: need {len} bytes, have {}", bytes.len())));
    }
    Ok(())
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("length checked"))
}

impl QueryMessage {
    pub fn encode(&self) -> [u8; QUERY_LEN] {
        let mut out = [0u8; QUERY_LEN];
        out[0] = QUERY_MAGIC;
        out[1..9].copy_from_slice(&self.seq.to_le_bytes());
        out[9..17].copy_from_slice(&self.threshold.to_le_bytes());
        out[17..21].copy_from_slice(&self.rate_ppm.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        check_header(bytes, QUERY_MAGIC, QUERY_LEN)?;
        let threshold = f64::from_le_bytes(bytes[9..17].try_into().expect("length checked"));
        if !threshold.is_finite() {
            return Err(decode_err(9, "threshold is not finite"));
        }
        let rate_ppm = u32::from_le_bytes(bytes[17..21].try_into().expect("length checked"));
        if rate_ppm > 999_999 {
            return Err(decode_err(17, format!("rate_ppm {rate_ppm} exceeds 999999")));
        }
        Ok(Self { seq: u64_at(bytes, 1), threshold, rate_ppm })
    }

    pub fn read_from<R: Read>(reader: &mut R) -> Result<Self> {
        let mut buf = [0u8; QUERY_LEN];
        reader.read_exact(&mut buf)?;
        Self::decode(&buf)
    }
}

impl ResponseMessage {
    pub fn encode(&self) -> [u8; RESPONSE_LEN] {
        let mut out = [0u8; RESPONSE_LEN];
        out[0] = RESPONSE_MAGIC;
        out[1..9].copy_from_slice(&self.seq.to_le_bytes());
        out[9] = self.bit.as_u8();
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        check_header(bytes, RESPONSE_MAGIC, RESPONSE_LEN)?;
        let bit = ResponseBit::from_u8(bytes[9])
            .ok_or_else(|| decode_err(9, format!("response bit must be 0 or 1, found {}", bytes[9])))?;
        Ok(Self { seq: u64_at(bytes, 1), bit })
    }

    pub fn read_from<R: Read>(reader: &mut R) -> Result<Self> {
        let mut buf = [0u8; RESPONSE_LEN];
        reader.read_exact(&mut buf)?;
        Self::decode(&buf)
    }

    pub fn write_to<W: Write>(&self, writer: &mut W) -> Result<()> {
        writer.write_all(&self.encode())?;
        writer.flush()?;
        Ok(())
    }
}
