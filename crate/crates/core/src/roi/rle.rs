//! Run-length coding of the patch-label grid.
//!
//! Labels are read in raster order as alternating runs, background first
//! (the first run may be empty). Each run length is an unsigned LEB128
//! varint.

use crate::error::{corrupt, Result};

pub fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

/// Reads one varint at `*pos`, rejecting overlong and overflowing encodings.
pub fn read_varint(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let byte = *bytes.get(*pos).ok_or_else(|| corrupt("varint truncated"))?;
        *pos += 1;
        let bits = (byte & 0x7f) as u64;
        if shift == 63 && bits > 1 {
            return Err(corrupt("varint overflows 64 bits"));
        }
        v |= bits << shift;
        if byte & 0x80 == 0 {
            if byte == 0 && shift > 0 {
                return Err(corrupt("overlong varint"));
            }
            return Ok(v);
        }
    }
    Err(corrupt("varint overflows 64 bits"))
}

pub fn runs(labels: &[bool]) -> Vec<u64> {
    let mut out = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for &l in labels {
        if l == current {
            len += 1;
        } else {
            out.push(len);
            current = l;
            len = 1;
        }
    }
    out.push(len);
    out
}

pub fn encode_mask(labels: &[bool]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in runs(labels) {
        write_varint(&mut out, r);
    }
    out
}

/// Inverse of [`encode_mask`] for a grid of `cells` labels.
pub fn decode_mask(bytes: &[u8], cells: usize) -> Result<Vec<bool>> {
    let mut labels = Vec::with_capacity(cells);
    let mut pos = 0;
    let mut current = false;
    let mut first = true;
    while labels.len() < cells {
        let run = read_varint(bytes, &mut pos)?;
        if run == 0 && !first {
            return Err(corrupt("empty run inside mask"));
        }
        if run > (cells - labels.len()) as u64 {
            return Err(corrupt("mask runs exceed the grid"));
        }
        labels.extend(std::iter::repeat_n(current, run as usize));
        current = !current;
        first = false;
    }
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes after mask runs"));
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_background_grid_is_one_run() {
        let labels = vec![false; 486];
        assert_eq!(runs(&labels), vec![486]);
        let bytes = encode_mask(&labels);
        assert_eq!(bytes, vec![0xe6, 0x03]);
        assert_eq!(decode_mask(&bytes, 486).unwrap(), labels);
    }

    #[test]
    fn leading_blade_starts_with_empty_run() {
        let labels = vec![true, true, false];
        assert_eq!(runs(&labels), vec![0, 2, 1]);
        assert_eq!(decode_mask(&encode_mask(&labels), 3).unwrap(), labels);
    }

    #[test]
    fn rectangle_on_full_grid_is_small() {
        let labels: Vec<bool> = (0..486).map(|i| (4..14).contains(&(i / 27)) && (6..21).contains(&(i % 27))).collect();
        let bytes = encode_mask(&labels);
        assert!(bytes.len() <= 120, "{} bytes", bytes.len());
        assert_eq!(decode_mask(&bytes, 486).unwrap(), labels);
    }

    #[test]
    fn malformed_masks_are_rejected() {
        assert!(decode_mask(&[5], 4).is_err());
        assert!(decode_mask(&[2, 0, 2], 4).is_err());
        assert!(decode_mask(&[4, 0], 4).is_err());
        assert!(decode_mask(&[0x80], 4).is_err());
        assert!(decode_mask(&[0x84, 0x00], 4).is_err());
    }

    #[test]
    fn varint_extremes() {
        let mut out = Vec::new();
        write_varint(&mut out, u64::MAX);
        let mut pos = 0;
        assert_eq!(read_varint(&out, &mut pos).unwrap(), u64::MAX);
        assert_eq!(pos, out.len());
        let mut bad = out.clone();
        bad[9] = 0x02;
        assert!(read_varint(&bad, &mut 0).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(labels in prop::collection::vec(any::<bool>(), 1..600)) {
            let bytes = encode_mask(&labels);
            prop_assert_eq!(decode_mask(&bytes, labels.len()).unwrap(), labels);
        }
    }
}
