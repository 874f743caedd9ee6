//! Image, flow and depth file formats.
//!
//! Color buffers hold linear values in `[0, 1]`; 8-bit output applies a
//! fixed 2.2 gamma and input PNGs are linearized with the inverse.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const GAMMA: f64 = 2.2;
const FLO_MAGIC: &[u8; 4] = b"PIEH";

/// A linear RGB image, row-major, 3 floats per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), 3 * width * height);
        Self { width, height, data }
    }
}

pub fn encode_channel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8
}

pub fn decode_channel(v: u8) -> f64 {
    (v as f64 / 255.0).powf(GAMMA)
}

/// Gamma-encoded 8-bit RGB bytes of a linear color buffer.
pub fn encode_rgb8(color: &[f64]) -> Vec<u8> {
    color.iter().map(|&v| encode_channel(v)).collect()
}

pub fn save_png(path: &Path, width: usize, height: usize, color: &[f64]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    };
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&encode_rgb8(color)).map_err(png_err)?;
    w.finish().map_err(png_err)
}

/// Reads an 8-bit RGB or RGBA PNG into linear RGB.
pub fn load_png(path: &Path) -> Result<Image> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let dec_err = |e: png::DecodingError| Error::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    };
    let mut reader = png::Decoder::new(std::io::BufReader::new(file)).read_info().map_err(dec_err)?;
    let mut buf = vec![0; reader.output_buffer_size().expect("png size fits")];
    let info = reader.next_frame(&mut buf).map_err(dec_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: format!("unsupported bit depth {:?}", info.bit_depth),
        });
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::Parse {
                path: path.to_owned(),
                message: format!("unsupported color type {other:?}"),
            })
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(3 * w * h);
    for px in buf[..info.buffer_size()].chunks_exact(channels) {
        data.extend(px[..3].iter().map(|&v| decode_channel(v)));
    }
    Ok(Image::new(w, h, data))
}

/// Writes a two-channel flow field with the `PIEH` header.
pub fn save_flo(path: &Path, width: usize, height: usize, flow: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(12 + 4 * flow.len());
    bytes.extend_from_slice(FLO_MAGIC);
    bytes.extend_from_slice(&(width as i32).to_le_bytes());
    bytes.extend_from_slice(&(height as i32).to_le_bytes());
    for &v in flow {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_flo(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Parse {
        path: path.to_owned(),
        message: m.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != FLO_MAGIC {
        return Err(bad("missing PIEH header"));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let h = i32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 12 + 8 * w * h {
        return Err(bad("size does not match header"));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((w, h, data))
}

/// Writes a single-channel little-endian PFM, rows stored bottom to top.
pub fn save_pfm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        write!(w, "Pf\n{width} {height}\n-1.0\n")?;
        for row in (0..height).rev() {
            for &v in &values[row * width..(row + 1) * width] {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Parse {
        path: path.to_owned(),
        message: m.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(bad("only single-channel `Pf` files are supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    let raw = &bytes[pos..];
    if raw.len() != 4 * w * h {
        return Err(bad("size does not match header"));
    }
    let read = |c: &[u8]| {
        let b: [u8; 4] = c.try_into().expect("4 bytes");
        if scale < 0.0 {
            f32::from_le_bytes(b) as f64
        } else {
            f32::from_be_bytes(b) as f64
        }
    };
    let mut out = vec![0.0; w * h];
    for (k, c) in raw.chunks_exact(4).enumerate() {
        let (row, col) = (k / w, k % w);
        out[(h - 1 - row) * w + col] = read(c);
    }
    Ok((w, h, out))
}
