//! PFM (HDR) and 8-bit PPM/PGM codecs.

use std::path::Path;

use crate::image::Image;

use super::IoError;

/// Float image as stored in a PFM file; rows top to bottom in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub little_endian: bool,
    /// Absolute value of the scale field.
    pub scale: f32,
    pub data: Vec<f32>,
}

impl PfmImage {
    pub fn from_image(img: &Image) -> PfmImage {
        assert!(img.channels == 1 || img.channels == 3, "PFM holds 1 or 3 channels");
        PfmImage {
            width: img.width,
            height: img.height,
            channels: img.channels,
            little_endian: true,
            scale: 1.0,
            data: img.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_image(&self) -> Image {
        Image { width: self.width, height: self.height, channels: self.channels, data: self.data.iter().map(|&v| v as f64).collect() }
    }
}

/// Reads header tokens separated by whitespace, skipping `#` comments.
struct Header<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn token(&mut self, what: &str) -> Result<&'a str, IoError> {
        loop {
            while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.buf.len() && self.buf[self.pos] == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(IoError::Truncated(format!("header ended before {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos]).map_err(|_| IoError::Invalid(format!("{what} is not ASCII")))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, IoError> {
        let t = self.token(what)?;
        t.parse().map_err(|_| IoError::Invalid(format!("{what}: `{t}` is not a valid number")))
    }

    /// Consume the single whitespace byte that ends the header.
    fn end(&mut self) -> Result<usize, IoError> {
        if self.pos >= self.buf.len() {
            return Err(IoError::Truncated("no data after header".into()));
        }
        if !self.buf[self.pos].is_ascii_whitespace() {
            return Err(IoError::Invalid("header not terminated by whitespace".into()));
        }
        Ok(self.pos + 1)
    }
}

const MAX_PIXELS: usize = 1 << 28;

fn check_size(w: usize, h: usize, c: usize) -> Result<usize, IoError> {
    if w == 0 || h == 0 {
        return Err(IoError::Invalid(format!("image size {w}x{h} is empty")));
    }
    w.checked_mul(h)
        .and_then(|n| n.checked_mul(c))
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or_else(|| IoError::Invalid(format!("image size {w}x{h} is too large")))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmImage, IoError> {
    let mut h = Header { buf: bytes, pos: 0 };
    let channels = match h.token("magic")? {
        "PF" => 3,
        "Pf" => 1,
        m => return Err(IoError::Invalid(format!("not a PFM file (magic `{m}`)"))),
    };
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    let scale: f32 = h.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(IoError::Invalid("PFM scale must be finite and non-zero".into()));
    }
    let start = h.end()?;
    let n = check_size(width, height, channels)?;
    let body = &bytes[start..];
    if body.len() < 4 * n {
        return Err(IoError::Truncated(format!("PFM data has {} bytes, expected {}", body.len(), 4 * n)));
    }
    let le = scale < 0.0;
    let mut data = vec![0f32; n];
    let row = width * channels;
    for y in 0..height {
        // file rows run bottom to top
        let src = &body[4 * (height - 1 - y) * row..4 * (height - y) * row];
        for (i, b) in src.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            data[y * row + i] = if le { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Ok(PfmImage { width, height, channels, little_endian: le, scale: scale.abs(), data })
}

pub fn encode_pfm(img: &PfmImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    let scale = if img.little_endian { -img.scale } else { img.scale };
    let mut out = format!("{magic}\n{} {}\n{:?}\n", img.width, img.height, scale).into_bytes();
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        for &v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&if img.little_endian { v.to_le_bytes() } else { v.to_be_bytes() });
        }
    }
    out
}

/// 8-bit grey (PGM, 1 channel) or RGB (PPM, 3 channels) image.
#[derive(Debug, Clone, PartialEq)]
pub struct Ldr {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Ldr {
    /// Quantize `[0,1]` values (rounded, clamped).
    pub fn from_image(img: &Image) -> Ldr {
        Ldr {
            width: img.width,
            height: img.height,
            channels: img.channels,
            data: img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        }
    }

    pub fn to_image(&self) -> Image {
        Image { width: self.width, height: self.height, channels: self.channels, data: self.data.iter().map(|&v| v as f64 / 255.0).collect() }
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Ldr, IoError> {
    let mut h = Header { buf: bytes, pos: 0 };
    let channels = match h.token("magic")? {
        "P6" => 3,
        "P5" => 1,
        m => return Err(IoError::Invalid(format!("unsupported PNM magic `{m}` (expected P5 or P6)"))),
    };
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    let maxval: u32 = h.number("maxval")?;
    if maxval != 255 {
        return Err(IoError::Invalid(format!("only 8-bit PNM (maxval 255) is supported, got {maxval}")));
    }
    let start = h.end()?;
    let n = check_size(width, height, channels)?;
    let body = &bytes[start..];
    if body.len() < n {
        return Err(IoError::Truncated(format!("PNM data has {} bytes, expected {n}", body.len())));
    }
    Ok(Ldr { width, height, channels, data: body[..n].to_vec() })
}

pub fn encode_pnm(img: &Ldr) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

fn read(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| IoError::Io(format!("{}: {e}", dir.display())))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))
}

pub fn read_pfm(path: &Path) -> Result<PfmImage, IoError> {
    decode_pfm(&read(path)?).map_err(|e| e.at(path))
}

pub fn write_pfm(img: &PfmImage, path: &Path) -> Result<(), IoError> {
    write(path, &encode_pfm(img))
}

pub fn read_pnm(path: &Path) -> Result<Ldr, IoError> {
    decode_pnm(&read(path)?).map_err(|e| e.at(path))
}

pub fn write_pnm(img: &Ldr, path: &Path) -> Result<(), IoError> {
    write(path, &encode_pnm(img))
}

/// Write an HDR image as PFM (1 or 3 channels; 2-channel images get a zero third channel).
pub fn save_hdr(img: &Image, path: &Path) -> Result<(), IoError> {
    let img = match img.channels {
        1 | 3 => img.clone(),
        c => {
            let mut out = Image::new(img.width, img.height, 3);
            for p in 0..img.width * img.height {
                for k in 0..c.min(3) {
                    out.data[3 * p + k] = img.data[c * p + k];
                }
            }
            out
        }
    };
    write_pfm(&PfmImage::from_image(&img), path)
}

pub fn save_ldr(img: &Image, path: &Path) -> Result<(), IoError> {
    write_pnm(&Ldr::from_image(img), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_single_pixel() {
        let img = PfmImage { width: 1, height: 1, channels: 1, little_endian: true, scale: 1.0, data: vec![0.5] };
        let bytes = encode_pfm(&img);
        assert!(bytes.starts_with(b"Pf\n1 1\n-1.0\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &0.5f32.to_le_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap(), img);
    }

    #[test]
    fn pfm_rows_bottom_to_top() {
        let img = PfmImage { width: 1, height: 2, channels: 1, little_endian: true, scale: 1.0, data: vec![1.0, 2.0] };
        let bytes = encode_pfm(&img);
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(&body[..4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn pfm_big_endian() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [1.5f32, -2.0, 3.25] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let img = decode_pfm(&bytes).unwrap();
        assert_eq!(img.data, vec![1.5, -2.0, 3.25]);
        assert!(!img.little_endian);
        assert_eq!(encode_pfm(&img), bytes);
    }

    #[test]
    fn pnm_with_comment() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 200]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.data, vec![7, 200]);
        assert_eq!(img.channels, 1);
    }

    #[test]
    fn rejects_16_bit() {
        assert!(decode_pnm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
    }
}
