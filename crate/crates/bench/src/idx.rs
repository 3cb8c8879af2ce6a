//! Big-endian IDX files (the MNIST distribution format).
//!
//! Layout: two zero bytes, a type byte (`0x08` = unsigned byte), a dimension
//! count, one `u32` per dimension, then the row-major payload.

use std::path::Path;

use sinkgraph_core::Tensor;

use crate::error::{io_err, BenchError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<usize>,
}

impl IdxHeader {
    pub fn len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn count(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    fn payload_len(&self) -> usize {
        self.dims.iter().product()
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| BenchError::Idx {
            offset: bytes.len(),
            msg: format!("truncated header: need 4 bytes at offset {offset}"),
        })?;
    Ok(u32::from_be_bytes(
        chunk.try_into().expect("slice of length 4"),
    ))
}

/// Reads and checks the header against `expected` magic.
pub fn parse_header(bytes: &[u8], expected: u32) -> Result<IdxHeader> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(BenchError::Idx {
            offset: 0,
            msg: format!("magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|d| read_u32(bytes, 4 + 4 * d).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(IdxHeader { magic, dims })
}

fn payload<'a>(bytes: &'a [u8], header: &IdxHeader) -> Result<&'a [u8]> {
    let start = header.len();
    let end = start + header.payload_len();
    if bytes.len() < end {
        return Err(BenchError::Idx {
            offset: bytes.len(),
            msg: format!(
                "truncated payload: header promises {} bytes of data",
                header.payload_len()
            ),
        });
    }
    if bytes.len() > end {
        return Err(BenchError::Idx {
            offset: end,
            msg: format!("{} trailing bytes after payload", bytes.len() - end),
        });
    }
    Ok(&bytes[start..end])
}

/// Images as `[count, 1, rows, cols]` with values scaled to `[0, 1]`.
pub fn parse_images(bytes: &[u8]) -> Result<Tensor> {
    let header = parse_header(bytes, IMAGE_MAGIC)?;
    let &[count, rows, cols] = header.dims.as_slice() else {
        unreachable!("image magic fixes three dimensions");
    };
    if count == 0 || rows == 0 || cols == 0 {
        return Err(BenchError::Idx {
            offset: 4,
            msg: format!("empty image set {count}×{rows}×{cols}"),
        });
    }
    let data = payload(bytes, &header)?
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok(Tensor::new(&[count, 1, rows, cols], data)?)
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let header = parse_header(bytes, LABEL_MAGIC)?;
    Ok(payload(bytes, &header)?.to_vec())
}

/// Loads an image file and, optionally, its label file.
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<(Tensor, Option<Vec<u8>>)> {
    let bytes = std::fs::read(images).map_err(io_err(images))?;
    let x = parse_images(&bytes)?;
    let y = match labels {
        Some(p) => {
            let lb = std::fs::read(p).map_err(io_err(p))?;
            let y = parse_labels(&lb)?;
            if y.len() != x.shape()[0] {
                return Err(BenchError::Idx {
                    offset: 4,
                    msg: format!("{} labels for {} images", y.len(), x.shape()[0]),
                });
            }
            Some(y)
        }
        None => None,
    };
    Ok((x, y))
}

/// Serialises `[count, 1, rows, cols]` images in `[0, 1]` as an IDX image file.
pub fn encode_images(images: &Tensor) -> Vec<u8> {
    let s = images.shape();
    let mut out = IMAGE_MAGIC.to_be_bytes().to_vec();
    for d in [s[0], s[2], s[3]] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(
        images
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b
    }

    #[test]
    fn one_two_by_two_image() {
        let mut b = header(IMAGE_MAGIC, &[1, 2, 2]);
        b.extend_from_slice(&[0, 51, 102, 255]);
        let x = parse_images(&b).unwrap();
        assert_eq!(x.shape(), &[1, 1, 2, 2]);
        assert_eq!(x.data(), &[0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0]);
    }

    #[test]
    fn wrong_magic_is_reported_at_offset_zero() {
        let mut b = header(LABEL_MAGIC, &[1]);
        b.push(3);
        match parse_images(&b) {
            Err(BenchError::Idx { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_labels(&b).unwrap(), vec![3]);
    }

    #[test]
    fn truncation_reports_offset() {
        let mut b = header(IMAGE_MAGIC, &[2, 2, 2]);
        b.extend_from_slice(&[1, 2, 3]);
        match parse_images(&b) {
            Err(BenchError::Idx { offset, .. }) => assert_eq!(offset, 19),
            other => panic!("{other:?}"),
        }
        match parse_images(&b[..6]) {
            Err(BenchError::Idx { offset: 6, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn full_size_training_header() {
        let h = header(IMAGE_MAGIC, &[60000, 28, 28]);
        let parsed = parse_header(&h, IMAGE_MAGIC).unwrap();
        assert_eq!(parsed.count(), 60000);
        assert_eq!(parsed.dims, vec![60000, 28, 28]);

        let mut full = h;
        full.resize(16 + 60000 * 28 * 28, 0);
        assert_eq!(parse_images(&full).unwrap().shape()[0], 60000);
    }

    #[test]
    fn encode_round_trip() {
        let mut b = header(IMAGE_MAGIC, &[2, 1, 3]);
        b.extend_from_slice(&[0, 10, 20, 30, 40, 255]);
        assert_eq!(encode_images(&parse_images(&b).unwrap()), b);
    }
}
