//! The IDX container used by the MNIST distribution: a big-endian header
//! (`0x0000_08TT` magic with a dimension count in the low byte, then one
//! `u32` per dimension) followed by unsigned bytes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Largest label accepted by [`parse_labels`] plus one.
pub const LABEL_LIMIT: usize = 10;

/// Decoded contents of an IDX file.
#[derive(Debug, Clone, PartialEq)]
pub enum Idx {
    /// `N×rows×cols` pixels scaled to `[0, 1]`.
    Images(Tensor),
    Labels(Vec<usize>),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or(Error::Length {
            expected: end,
            actual: self.bytes.len(),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if self.bytes.len() < end {
            return Err(Error::Length {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        if self.bytes.len() > end {
            return Err(Error::Format {
                offset: end,
                message: format!("{} trailing bytes after payload", self.bytes.len() - end),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn header(bytes: &[u8]) -> Result<(u32, Reader<'_>)> {
    if bytes.is_empty() {
        return Err(Error::Format {
            offset: 0,
            message: "empty input".into(),
        });
    }
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.u32()?;
    if magic != IMAGES_MAGIC && magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x} or {LABELS_MAGIC:#010x}"),
        });
    }
    Ok((magic, r))
}

fn dims(r: &mut Reader<'_>, n: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let offset = r.pos;
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(Error::Format {
                offset,
                message: "zero-length dimension".into(),
            });
        }
        out.push(d);
    }
    Ok(out)
}

/// Decodes either kind of file, dispatching on the magic number.
pub fn parse_idx(bytes: &[u8]) -> Result<Idx> {
    let (magic, mut r) = header(bytes)?;
    if magic == IMAGES_MAGIC {
        let shape = dims(&mut r, 3)?;
        let payload = r.payload(shape.iter().product())?;
        let pixels = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
        Ok(Idx::Images(Tensor::new(&shape, pixels)?))
    } else {
        let shape = dims(&mut r, 1)?;
        let start = r.pos;
        let payload = r.payload(shape[0])?;
        let mut labels = Vec::with_capacity(payload.len());
        for (i, &b) in payload.iter().enumerate() {
            if b as usize >= LABEL_LIMIT {
                return Err(Error::Validation(format!(
                    "label {b} at byte {} is outside 0..{LABEL_LIMIT}",
                    start + i
                )));
            }
            labels.push(b as usize);
        }
        Ok(Idx::Labels(labels))
    }
}

pub fn parse_images(bytes: &[u8]) -> Result<Tensor> {
    match parse_idx(bytes)? {
        Idx::Images(t) => Ok(t),
        Idx::Labels(_) => Err(Error::Format {
            offset: 0,
            message: "expected an image file, found labels".into(),
        }),
    }
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    match parse_idx(bytes)? {
        Idx::Labels(l) => Ok(l),
        Idx::Images(_) => Err(Error::Format {
            offset: 0,
            message: "expected a label file, found images".into(),
        }),
    }
}

/// Inverse of [`parse_images`]. Pixels are rounded to the nearest 1/255, so
/// parsed data re-encodes to the original bytes.
pub fn encode_images(images: &Tensor) -> Result<Vec<u8>> {
    let shape = images.shape();
    if shape.len() != 3 {
        return Err(Error::dim("encode_images", format!("expected N×rows×cols, got {shape:?}")));
    }
    let mut out = Vec::with_capacity(16 + images.numel());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &p in images.data() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Validation(format!("pixel {p} outside [0, 1]")));
        }
        out.push((p * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn encode_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        if l >= LABEL_LIMIT {
            return Err(Error::Validation(format!("label {l} outside 0..{LABEL_LIMIT}")));
        }
        out.push(l as u8);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_by_two_fixture() -> Vec<u8> {
        vec![
            0x00, 0x00, 0x08, 0x03, // magic
            0x00, 0x00, 0x00, 0x02, // 2 images
            0x00, 0x00, 0x00, 0x02, // 2 rows
            0x00, 0x00, 0x00, 0x02, // 2 cols
            0x00, 0xff, 0x33, 0x66, // image 0
            0xcc, 0x99, 0x00, 0x01, // image 1
        ]
    }

    #[test]
    fn hand_built_images() {
        let t = parse_images(&two_by_two_fixture()).unwrap();
        assert_eq!(t.shape(), &[2, 2, 2]);
        let expected = [0.0, 1.0, 0.2, 0.4, 0.8, 0.6, 0.0, 1.0 / 255.0];
        for (a, b) in t.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn hand_built_labels() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9];
        assert_eq!(parse_labels(&bytes).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn empty_input_is_a_format_error() {
        assert!(matches!(parse_idx(&[]), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn bad_magic_reports_offset() {
        let mut bytes = two_by_two_fixture();
        bytes[3] = 0x04;
        assert!(matches!(parse_idx(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let mut bytes = two_by_two_fixture();
        bytes.pop();
        match parse_idx(&bytes) {
            Err(Error::Length { expected, actual }) => assert_eq!((expected, actual), (24, 23)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_idx(&bytes[..10]), Err(Error::Length { .. })));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = two_by_two_fixture();
        bytes.push(0);
        assert!(matches!(parse_idx(&bytes), Err(Error::Format { offset: 24, .. })));
    }

    #[test]
    fn label_ten_is_a_validation_error() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 2, 3, 10];
        assert!(matches!(parse_labels(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn kind_mismatch() {
        assert!(parse_labels(&two_by_two_fixture()).is_err());
    }

    proptest! {
        #[test]
        fn images_round_trip(n in 1usize..4, rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut bytes = IMAGES_MAGIC.to_be_bytes().to_vec();
            for d in [n, rows, cols] {
                bytes.extend_from_slice(&(d as u32).to_be_bytes());
            }
            let mut s = seed;
            for _ in 0..n * rows * cols {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                bytes.push((s >> 56) as u8);
            }
            let parsed = parse_images(&bytes).unwrap();
            prop_assert_eq!(encode_images(&parsed).unwrap(), bytes);
        }

        #[test]
        fn labels_round_trip(labels in proptest::collection::vec(0usize..10, 1..50)) {
            let bytes = encode_labels(&labels).unwrap();
            prop_assert_eq!(parse_labels(&bytes).unwrap(), labels.clone());
            prop_assert_eq!(encode_labels(&parse_labels(&bytes).unwrap()).unwrap(), bytes);
        }
    }
}
