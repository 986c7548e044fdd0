//! 16-bit binary PGM (P5, maxval 65535, big-endian samples).

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmError(pub String);

impl fmt::Display for PgmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pgm: {}", self.0)
    }
}

impl std::error::Error for PgmError {}

/// A decoded 16-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray16 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

pub fn encode(img: &Gray16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    out.reserve(img.data.len() * 2);
    for v in &img.data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String, PgmError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(PgmError("truncated header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn decode(bytes: &[u8]) -> Result<Gray16, PgmError> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(PgmError(format!("bad magic {magic:?}")));
    }
    let mut num = |what: &str| -> Result<usize, PgmError> {
        let tok = next_token(bytes, &mut pos)?;
        tok.parse::<usize>()
            .map_err(|_| PgmError(format!("bad {what} {tok:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 65535 {
        return Err(PgmError(format!("expected maxval 65535, found {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 2;
    if bytes.len() < pos || bytes.len() - pos != need {
        return Err(PgmError(format!(
            "raster size mismatch: expected {need} bytes, found {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let data = bytes[pos..]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok(Gray16 { width, height, data })
}

/// Meters to millimeter samples, rounded and saturated to the 16-bit range.
pub fn meters_to_mm(m: f64) -> u16 {
    (m * 1000.0).round().clamp(0.0, 65535.0) as u16
}

pub fn mm_to_meters(mm: u16) -> f64 {
    f64::from(mm) / 1000.0
}
