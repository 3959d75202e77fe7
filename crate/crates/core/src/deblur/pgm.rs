//! 8-bit binary PGM (P5) images. Pixel rows map to matrix rows.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::DeblurError;

fn bad(msg: impl Into<String>) -> DeblurError {
    DeblurError::InvalidParams(format!("PGM: {}", msg.into()))
}

/// Encode `img`, clamping values to `[0, 1]` and scaling to `0..=255`.
pub fn encode_pgm(img: &DMatrix<f64>) -> Vec<u8> {
    let (rows, cols) = img.shape();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for i in 0..rows {
        for j in 0..cols {
            let v = img[(i, j)];
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_pgm(img: &DMatrix<f64>, path: &Path) -> Result<(), DeblurError> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

/// Decode a P5 image with `maxval <= 255`, scaling to `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<DMatrix<f64>, DeblurError> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad(format!("unsupported magic {}", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad(format!("bad header field {s}")))
    };
    let (cols, rows, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad(format!("maxval {maxval} not supported")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes
        .get(pos..pos + rows * cols)
        .ok_or_else(|| bad("truncated raster"))?;
    Ok(DMatrix::from_fn(rows, cols, |i, j| {
        raster[i * cols + j] as f64 / maxval as f64
    }))
}

pub fn read_pgm(path: &Path) -> Result<DMatrix<f64>, DeblurError> {
    decode_pgm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_quantized() {
        let img = DMatrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64 / 14.0);
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        assert_eq!(back.shape(), (3, 5));
        assert!((back - img).amax() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn header_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
    }

    #[test]
    fn rejects_truncation_and_other_formats() {
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00\x01").is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
