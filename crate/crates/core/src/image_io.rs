//! Grayscale image container and file formats. Binary PGM (P5) is the
//! canonical on-disk format; PNG is supported through the standard codec.
//! Pixel values live in [0, 1] in memory and quantize to 8 bits on write.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub w: usize,
    pub h: usize,
    /// Row-major, [0, 1].
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(w: usize, h: usize) -> Self {
        Image { w, h, data: vec![0.0; w * h] }
    }

    pub fn from_data(w: usize, h: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), w * h);
        Image { w, h, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.w + x] = v;
    }

    /// Bilinear sample at a fractional position; zero outside the bounds.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut acc = 0.0f32;
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                let xi = x0 as i64 + dx;
                let yi = y0 as i64 + dy;
                let v = if xi >= 0 && yi >= 0 && (xi as usize) < self.w && (yi as usize) < self.h {
                    self.get(xi as usize, yi as usize)
                } else {
                    0.0
                };
                acc += wy * wx * v;
            }
        }
        acc
    }

    /// Box-average downscale by an integer factor; trailing rows/columns that
    /// do not fill a full box are dropped.
    pub fn box_downscale(&self, factor: usize) -> Image {
        assert!(factor >= 1);
        let (ow, oh) = (self.w / factor, self.h / factor);
        let mut out = Image::new(ow, oh);
        let inv = 1.0 / (factor * factor) as f32;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += self.get(ox * factor + dx, oy * factor + dy);
                    }
                }
                out.set(ox, oy, s * inv);
            }
        }
        out
    }

    /// Bilinear upscale by an integer factor (used as the super-resolution
    /// baseline).
    pub fn bilinear_upscale(&self, factor: usize) -> Image {
        let (ow, oh) = (self.w * factor, self.h * factor);
        let mut out = Image::new(ow, oh);
        let f = factor as f32;
        for oy in 0..oh {
            for ox in 0..ow {
                // align box-downscale cell centers
                let sx = (ox as f32 + 0.5) / f - 0.5;
                let sy = (oy as f32 + 0.5) / f - 0.5;
                let sxc = sx.clamp(0.0, (self.w - 1) as f32);
                let syc = sy.clamp(0.0, (self.h - 1) as f32);
                out.set(ox, oy, self.sample_bilinear(sxc, syc));
            }
        }
        out
    }

    pub fn clamped(mut self) -> Image {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }
}

// ---- PGM ------------------------------------------------------------------

/// Write binary PGM with the canonical `P5\n<w> <h>\n255\n` header.
pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let mut buf = Vec::with_capacity(img.data.len() + 32);
    write!(buf, "P5\n{} {}\n255\n", img.w, img.h)?;
    buf.extend(img.data.iter().map(|&v| quantize(v)));
    fs::write(path, buf)?;
    Ok(())
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Parse binary PGM, tolerating arbitrary whitespace and `#` comments in the
/// header.
pub fn read_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<Vec<u8>> {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(bytes[start..pos].to_vec())
    };

    let magic = next_token(bytes)?;
    if magic != b"P5" {
        return Err(Error::Format(format!(
            "not a binary PGM (magic {:?})",
            String::from_utf8_lossy(&magic)
        )));
    }
    let parse = |tok: Vec<u8>| -> Result<usize> {
        String::from_utf8_lossy(&tok)
            .parse::<usize>()
            .map_err(|_| Error::Format("bad PGM header field".into()))
    };
    let w = parse(next_token(bytes)?)?;
    let h = parse(next_token(bytes)?)?;
    let maxval = parse(next_token(bytes)?)?;
    if w == 0 || h == 0 {
        return Err(Error::Format("zero PGM extent".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and payload
    if pos >= bytes.len() {
        return Err(Error::Format("truncated PGM payload".into()));
    }
    pos += 1;
    let need = w * h;
    let payload = &bytes[pos.min(bytes.len())..];
    if payload.len() < need {
        return Err(Error::Format(format!(
            "truncated PGM payload: need {need} bytes, have {}",
            payload.len()
        )));
    }
    let maxval = maxval as f32;
    let data = payload[..need].iter().map(|&b| f32::from(b) / maxval).collect();
    Ok(Image { w, h, data })
}

pub fn read_pgm_file(path: &Path) -> Result<Image> {
    read_pgm(&fs::read(path)?)
}

// ---- PNG and dispatch -------------------------------------------------

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let buf: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    image::save_buffer(path, &buf, img.w as u32, img.h as u32, image::ColorType::L8)
        .map_err(|e| Error::Format(format!("png write: {e}")))
}

pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Format(format!("png read: {e}")))?;
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.into_raw().into_iter().map(|b| f32::from(b) / 255.0).collect();
    Ok(Image { w, h, data })
}

/// Read by extension: `.pgm` or `.png`.
pub fn read_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm_file(path),
        Some("png") => read_png(path),
        other => Err(Error::Format(format!("unsupported image extension {other:?} for {path:?}"))),
    }
}

/// Write by extension: `.pgm` or `.png`.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => write_pgm(path, img),
        Some("png") => write_png(path, img),
        other => Err(Error::Format(format!("unsupported image extension {other:?} for {path:?}"))),
    }
}
