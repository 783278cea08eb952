//! 8-bit binary PGM (`P5`) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::Frame;

/// `round(clamp(v, 0, 1) * 255)`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode(frame: &Frame) -> Vec<u8> {
    let n = frame.size();
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    out.extend(frame.values().iter().map(|&v| quantize(v)));
    out
}

pub fn write(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(frame)).map_err(|e| Error::io(path, e))
}

/// Splits off one whitespace-delimited header token, skipping `#` comments.
fn token<'a>(bytes: &mut &'a [u8]) -> Option<&'a [u8]> {
    loop {
        let skip = bytes.iter().take_while(|b| b.is_ascii_whitespace()).count();
        *bytes = &bytes[skip..];
        if bytes.first() == Some(&b'#') {
            let end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
            *bytes = &bytes[end..];
        } else {
            break;
        }
    }
    let len = bytes.iter().take_while(|b| !b.is_ascii_whitespace()).count();
    if len == 0 {
        return None;
    }
    let (tok, rest) = bytes.split_at(len);
    *bytes = rest;
    Some(tok)
}

/// Decodes a square 8-bit `P5` image into a frame with values `byte / 255`.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Frame> {
    let corrupt = || Error::CorruptHeader {
        path: path.to_path_buf(),
    };
    let mut rest = bytes;
    if token(&mut rest) != Some(b"P5") {
        return Err(corrupt());
    }
    let mut num = || -> Result<usize> {
        let t = token(&mut rest).ok_or_else(corrupt)?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(corrupt)
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if w != h || maxval != 255 {
        return Err(corrupt());
    }
    // exactly one whitespace byte separates the header from the raster
    let body = rest.get(1..).ok_or_else(corrupt)?;
    if body.len() != w * h {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: (w * h) as u64,
            actual: body.len() as u64,
        });
    }
    Frame::new(w, body.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn read(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_frame_body_is_zero_bytes() {
        let bytes = encode(&Frame::zeros(8).unwrap());
        assert!(bytes.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(&bytes[11..], &[0u8; 64][..]);
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(2.0), 255);
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(0.5), 128);
    }

    #[test]
    fn roundtrip_matches_quantized_frame() {
        let f = Frame::from_fn(4, |r, c| (r * 4 + c) as f64 / 15.0).unwrap();
        let back = decode(&encode(&f), Path::new("mem")).unwrap();
        for (a, b) in f.values().iter().zip(back.values()) {
            assert_eq!(quantize(*a) as f64 / 255.0, *b);
        }
    }

    #[test]
    fn comments_and_errors() {
        let f = decode(b"P5 # c\n2 2\n255\n\x00\x01\x02\xff", Path::new("x")).unwrap();
        assert_eq!(f.get(1, 1), 1.0);
        assert!(matches!(
            decode(b"P6\n2 2\n255\n", Path::new("x")),
            Err(Error::CorruptHeader { .. })
        ));
        assert!(matches!(
            decode(b"P5\n2 2\n255\n\x00", Path::new("x")),
            Err(Error::TruncatedFile { .. })
        ));
    }
}
