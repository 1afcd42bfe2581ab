//! Netpbm graymap (PGM) reading and writing, binary `P5` and ASCII `P2`.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PgmError {
    #[error("not a PGM file: magic must be P2 or P5")]
    BadMagic,
    #[error("malformed PGM header: {0}")]
    BadHeader(String),
    #[error("PGM maxval must be positive")]
    ZeroMaxval,
    #[error("PGM maxval {0} exceeds 65535")]
    MaxvalTooLarge(u32),
    #[error("unexpected end of pixel data")]
    Truncated,
    #[error("pixel value {value} exceeds maxval {maxval}")]
    SampleOutOfRange { value: u32, maxval: u32 },
}

impl PgmError {
    /// Stable numeric code per failure kind.
    pub fn code(&self) -> u8 {
        match self {
            PgmError::BadMagic => 1,
            PgmError::BadHeader(_) => 2,
            PgmError::ZeroMaxval => 3,
            PgmError::MaxvalTooLarge(_) => 4,
            PgmError::Truncated => 5,
            PgmError::SampleOutOfRange { .. } => 6,
        }
    }
}

/// Raw decoded graymap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub samples: Vec<u16>,
}

impl Graymap {
    /// `[1, H, W]` tensor of `sample / maxval`.
    pub fn to_tensor(&self) -> Tensor {
        let m = self.maxval as f64;
        Tensor::from_vec(&[1, self.height, self.width], self.samples.iter().map(|&s| s as f64 / m).collect())
            .expect("decoded dimensions are positive")
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skip whitespace and `#` comments.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str, eof: PgmError) -> Result<u32, PgmError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                eof
            } else {
                PgmError::BadHeader(format!("expected {what}"))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::BadHeader(format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Graymap, PgmError> {
    let binary = match bytes.get(..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(PgmError::BadMagic),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(PgmError::BadMagic);
    }
    let header_eof = || PgmError::BadHeader("header ends early".into());
    let width = cur.number("width", header_eof())? as usize;
    let height = cur.number("height", header_eof())? as usize;
    let maxval = cur.number("maxval", header_eof())?;
    if width == 0 || height == 0 {
        return Err(PgmError::BadHeader(format!("dimensions {width}x{height}")));
    }
    if maxval == 0 {
        return Err(PgmError::ZeroMaxval);
    }
    if maxval > 65535 {
        return Err(PgmError::MaxvalTooLarge(maxval));
    }
    let count = width * height;
    let mut samples = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates header and raster
        if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(PgmError::Truncated);
        }
        let raster = &bytes[cur.pos + 1..];
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        if raster.len() < need {
            return Err(PgmError::Truncated);
        }
        for i in 0..count {
            let v = if wide {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
            } else {
                raster[i] as u32
            };
            if v > maxval {
                return Err(PgmError::SampleOutOfRange { value: v, maxval });
            }
            samples.push(v as u16);
        }
    } else {
        for _ in 0..count {
            let v = cur.number("sample", PgmError::Truncated)?;
            if v > maxval {
                return Err(PgmError::SampleOutOfRange { value: v, maxval });
            }
            samples.push(v as u16);
        }
    }
    Ok(Graymap {
        width,
        height,
        maxval,
        samples,
    })
}

/// Decode straight to a `[1, H, W]` tensor in `[0, 1]`.
pub fn load_pgm(bytes: &[u8]) -> Result<Tensor, PgmError> {
    decode(bytes).map(|g| g.to_tensor())
}

/// Binary `P5` encoding of a `[1, H, W]` (or `[H, W]`) tensor in `[0, 1]`, 8-bit.
pub fn encode_p5(image: &Tensor) -> Vec<u8> {
    let s = image.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
