//! Bitcoin compact-size integers.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VarIntError {
    #[error("compact-size integer is not minimally encoded")]
    NonCanonicalVarint,
    #[error("compact-size integer is truncated")]
    Truncated,
}

/// Number of bytes `encode_varint(n)` produces.
pub fn varint_len(n: u64) -> usize {
    match n {
        0..=0xfc => 1,
        0xfd..=0xffff => 3,
        0x1_0000..=0xffff_ffff => 5,
        _ => 9,
    }
}

pub fn write_varint(out: &mut Vec<u8>, n: u64) {
    match n {
        0..=0xfc => out.push(n as u8),
        0xfd..=0xffff => {
            out.push(0xfd);
            out.extend_from_slice(&(n as u16).to_le_bytes());
        }
        0x1_0000..=0xffff_ffff => {
            out.push(0xfe);
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        _ => {
            out.push(0xff);
            out.extend_from_slice(&n.to_le_bytes());
        }
    }
}

pub fn encode_varint(n: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(varint_len(n));
    write_varint(&mut out, n);
    out
}

/// Decodes a compact-size integer from the front of `bytes`, returning the
/// value and the number of bytes consumed. Non-minimal forms are rejected.
pub fn decode_varint(bytes: &[u8]) -> Result<(u64, usize), VarIntError> {
    let (&tag, rest) = bytes.split_first().ok_or(VarIntError::Truncated)?;
    let (value, width, min) = match tag {
        0..=0xfc => return Ok((tag as u64, 1)),
        0xfd => (le(rest, 2)?, 2, 0xfd),
        0xfe => (le(rest, 4)?, 4, 0x1_0000),
        0xff => (le(rest, 8)?, 8, 0x1_0000_0000),
    };
    if value < min {
        return Err(VarIntError::NonCanonicalVarint);
    }
    Ok((value, 1 + width))
}

fn le(bytes: &[u8], width: usize) -> Result<u64, VarIntError> {
    let raw = bytes.get(..width).ok_or(VarIntError::Truncated)?;
    let mut buf = [0u8; 8];
    buf[..width].copy_from_slice(raw);
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table() {
        let cases: &[(u64, &[u8])] = &[
            (0, &[0x00]),
            (0xfc, &[0xfc]),
            (0xfd, &[0xfd, 0xfd, 0x00]),
            (1000, &[0xfd, 0xe8, 0x03]),
            (0xffff, &[0xfd, 0xff, 0xff]),
            (0x1_0000, &[0xfe, 0x00, 0x00, 0x01, 0x00]),
            (0xffff_ffff, &[0xfe, 0xff, 0xff, 0xff, 0xff]),
            (0x1_0000_0000, &[0xff, 0, 0, 0, 0, 1, 0, 0, 0]),
            (u64::MAX, &[0xff; 9]),
        ];
        for &(n, bytes) in cases {
            assert_eq!(encode_varint(n), bytes, "encode {n}");
            assert_eq!(decode_varint(bytes), Ok((n, bytes.len())), "decode {n}");
            assert_eq!(varint_len(n), bytes.len());
        }
    }

    #[test]
    fn rejects_non_minimal() {
        assert_eq!(decode_varint(&[0xfd, 0x05, 0x00]), Err(VarIntError::NonCanonicalVarint));
        assert_eq!(decode_varint(&[0xfd, 0xfc, 0x00]), Err(VarIntError::NonCanonicalVarint));
        assert_eq!(decode_varint(&[0xfe, 0xff, 0xff, 0x00, 0x00]), Err(VarIntError::NonCanonicalVarint));
        assert_eq!(
            decode_varint(&[0xff, 0xff, 0xff, 0xff, 0xff, 0, 0, 0, 0]),
            Err(VarIntError::NonCanonicalVarint)
        );
    }

    #[test]
    fn truncated() {
        assert_eq!(decode_varint(&[]), Err(VarIntError::Truncated));
        assert_eq!(decode_varint(&[0xfd, 0x01]), Err(VarIntError::Truncated));
        assert_eq!(decode_varint(&[0xff, 0, 0, 0]), Err(VarIntError::Truncated));
    }
}
