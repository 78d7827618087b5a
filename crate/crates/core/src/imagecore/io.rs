use std::io::Cursor;
use std::path::Path;

use super::{Image, MosaicPattern, RawImage, RgbImage};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const RAW_MAGIC: &str = "RAWD";

/// Reads an 8- or 16-bit RGB PNG, scaling codes by `1 / (2^bits - 1)`.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb {
        return Err(Error::UnsupportedFormat(format!("PNG colour type {:?}", info.color_type)));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let data: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => {
            buf[..h * w * 3].iter().map(|&v| f64::from(v) / 255.0).collect()
        }
        png::BitDepth::Sixteen => buf[..h * w * 6]
            .chunks_exact(2)
            .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]])) / 65535.0)
            .collect(),
        other => return Err(Error::UnsupportedFormat(format!("PNG bit depth {other:?}"))),
    };
    RgbImage::from_image(Image { height: h, width: w, channels: 3, data })
}

/// Writes an RGB PNG at 8 or 16 bits, rounding samples to the nearest code.
pub fn write_rgb_png(image: &Image, path: impl AsRef<Path>, bits: u8) -> Result<()> {
    image.require_channels(3)?;
    let depth = match bits {
        8 => png::BitDepth::Eight,
        16 => png::BitDepth::Sixteen,
        _ => return Err(Error::UnsupportedFormat(format!("PNG bit depth {bits}"))),
    };
    let max = f64::from((1u32 << bits) - 1);
    let mut raw = Vec::with_capacity(image.data.len() * usize::from(bits / 8));
    for &v in &image.data {
        let code = (v.clamp(0.0, 1.0) * max).round() as u16;
        if bits == 8 {
            raw.push(code as u8);
        } else {
            raw.extend_from_slice(&code.to_be_bytes());
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer.write_image_data(&raw).map_err(|e| Error::Format(e.to_string()))?;
        writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    }
    write_atomic(path.as_ref(), &out)
}

pub(crate) fn encode_raw(image: &RawImage) -> Vec<u8> {
    let pattern = if image.is_mosaic() { image.pattern.to_string() } else { "RGB".to_string() };
    let mut out = format!(
        "{RAW_MAGIC} {} {} {pattern} {} {} {}\n",
        image.height(),
        image.width(),
        image.black_level,
        image.white_level,
        image.bit_depth
    )
    .into_bytes();
    let black = f64::from(image.black_level);
    let range = f64::from(image.white_level - image.black_level);
    out.reserve(image.plane.data.len() * 2);
    for &v in &image.plane.data {
        let code = (v.clamp(0.0, 1.0) * range).round() + black;
        out.extend_from_slice(&(code as u16).to_le_bytes());
    }
    out
}

pub(crate) fn decode_raw(bytes: &[u8]) -> Result<RawImage> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing RAW header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::Format("RAW header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.first() != Some(&RAW_MAGIC) {
        return Err(Error::Format(format!("bad magic in header `{header}`")));
    }
    if fields.len() != 7 {
        return Err(Error::Format(format!("expected 7 header fields, got {}", fields.len())));
    }
    let num = |i: usize| -> Result<u64> {
        fields[i]
            .parse::<u64>()
            .map_err(|_| Error::Format(format!("header field {i} `{}` is not an integer", fields[i])))
    };
    let (h, w) = (num(1)? as usize, num(2)? as usize);
    let (pattern, channels) = if fields[3] == "RGB" {
        (MosaicPattern::default(), 3)
    } else {
        (fields[3].parse::<MosaicPattern>()?, 1)
    };
    let black = u16::try_from(num(4)?).map_err(|_| Error::Format("black level overflow".into()))?;
    let white = u16::try_from(num(5)?).map_err(|_| Error::Format("white level overflow".into()))?;
    let bits = u8::try_from(num(6)?).map_err(|_| Error::Format("bit depth overflow".into()))?;
    let body = &bytes[newline + 1..];
    let expected = h * w * channels * 2;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "{h}x{w}x{channels} image needs {expected} payload bytes, found {}",
            body.len()
        )));
    }
    if white <= black {
        return Err(Error::Format(format!("white level {white} not above black level {black}")));
    }
    let range = f64::from(white - black);
    let data = body
        .chunks_exact(2)
        .map(|b| {
            let code = f64::from(u16::from_le_bytes([b[0], b[1]]));
            ((code - f64::from(black)) / range).clamp(0.0, 1.0)
        })
        .collect();
    RawImage::with_levels(Image { height: h, width: w, channels, data }, pattern, black, white, bits)
}

pub fn write_raw(image: &RawImage, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_raw(image))
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes)
}
