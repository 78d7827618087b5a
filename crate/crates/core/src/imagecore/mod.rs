//! Image buffers, Bayer RAW representation, colour utilities, metrics and file I/O.
//!
//! All buffers are row-major, channel-interleaved `f64` samples nominally in `[0, 1]`.

mod color;
mod io;
mod metrics;

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

pub use color::{rgb_to_yuv, yuv_from_rgb_matrix, yuv_to_rgb, YuvImage, RGB_TO_YUV};
pub use io::{read_raw, read_rgb_png, write_raw, write_rgb_png, RAW_MAGIC};
pub use metrics::{mse, psnr, psnr_yuv, PSNR_CAP_DB};
pub(crate) use metrics::mse_slices;

use crate::error::{Error, Result};

/// Generic image buffer with an arbitrary channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "buffer of {} samples does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Image { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Image { height, width, channels, data }
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Copy of a rectangular window.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Image> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::Dimension(format!(
                "crop {height}x{width}+{y0}+{x0} outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in y0..y0 + height {
            let start = self.index(y, x0, 0);
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Ok(Image { height, width, channels: c, data })
    }

    /// Same dimensions, empty buffer; for struct-update construction.
    pub(crate) fn clone_header(&self) -> Image {
        Image { height: self.height, width: self.width, channels: self.channels, data: Vec::new() }
    }

    pub fn require_channels(&self, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::Dimension(format!(
                "expected {channels} channels, got {}",
                self.channels
            )));
        }
        Ok(())
    }
}

/// Three-channel image with even dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage(Image);

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_image(Image::new(height, width, 3, data)?)
    }

    pub fn from_image(image: Image) -> Result<Self> {
        image.require_channels(3)?;
        require_even(image.height, image.width)?;
        Ok(RgbImage(image))
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        Self::from_image(Image::from_fn(height, width, 3, f))
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<RgbImage> {
        RgbImage::from_image(self.0.crop(y0, x0, height, width)?)
    }
}

impl Deref for RgbImage {
    type Target = Image;
    fn deref(&self) -> &Image {
        &self.0
    }
}

impl AsRef<Image> for RgbImage {
    fn as_ref(&self) -> &Image {
        &self.0
    }
}

pub(crate) fn require_even(height: usize, width: usize) -> Result<()> {
    if height % 2 != 0 || width % 2 != 0 || height == 0 || width == 0 {
        return Err(Error::OddDimensions { height, width });
    }
    Ok(())
}

/// Colour of one CFA site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    R = 0,
    G = 1,
    B = 2,
}

impl Channel {
    pub fn index(self) -> usize {
        self as usize
    }

    fn from_char(c: char) -> Option<Channel> {
        match c.to_ascii_uppercase() {
            'R' => Some(Channel::R),
            'G' => Some(Channel::G),
            'B' => Some(Channel::B),
            _ => None,
        }
    }

    fn as_char(self) -> char {
        match self {
            Channel::R => 'R',
            Channel::G => 'G',
            Channel::B => 'B',
        }
    }
}

/// 2x2 Bayer arrangement. Greens always sit on a diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MosaicPattern {
    layout: [[Channel; 2]; 2],
}

impl MosaicPattern {
    pub const RGGB: MosaicPattern =
        MosaicPattern { layout: [[Channel::R, Channel::G], [Channel::G, Channel::B]] };
    pub const BGGR: MosaicPattern =
        MosaicPattern { layout: [[Channel::B, Channel::G], [Channel::G, Channel::R]] };
    pub const GRBG: MosaicPattern =
        MosaicPattern { layout: [[Channel::G, Channel::R], [Channel::B, Channel::G]] };
    pub const GBRG: MosaicPattern =
        MosaicPattern { layout: [[Channel::G, Channel::B], [Channel::R, Channel::G]] };

    pub fn new(layout: [[Channel; 2]; 2]) -> Result<Self> {
        let flat = [layout[0][0], layout[0][1], layout[1][0], layout[1][1]];
        let count = |ch| flat.iter().filter(|&&c| c == ch).count();
        let diagonal_greens = (layout[0][0] == Channel::G && layout[1][1] == Channel::G)
            || (layout[0][1] == Channel::G && layout[1][0] == Channel::G);
        if count(Channel::R) != 1 || count(Channel::B) != 1 || !diagonal_greens {
            let name: String = flat.iter().map(|c| c.as_char()).collect();
            return Err(Error::Pattern(name));
        }
        Ok(MosaicPattern { layout })
    }

    #[inline]
    pub fn channel_at(&self, y: usize, x: usize) -> Channel {
        self.layout[y & 1][x & 1]
    }

    pub fn layout(&self) -> [[Channel; 2]; 2] {
        self.layout
    }
}

impl Default for MosaicPattern {
    fn default() -> Self {
        MosaicPattern::RGGB
    }
}

impl fmt::Display for MosaicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.layout {
            for c in row {
                write!(f, "{}", c.as_char())?;
            }
        }
        Ok(())
    }
}

impl FromStr for MosaicPattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<Channel> = s.chars().filter_map(Channel::from_char).collect();
        if chars.len() != 4 || s.chars().count() != 4 {
            return Err(Error::Pattern(s.to_string()));
        }
        MosaicPattern::new([[chars[0], chars[1]], [chars[2], chars[3]]])
    }
}

/// Normalised sensor image. `plane` has one channel for a CFA mosaic, or three
/// channels for a "RAW-RGB" image produced with mosaicing disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub plane: Image,
    pub pattern: MosaicPattern,
    pub black_level: u16,
    pub white_level: u16,
    pub bit_depth: u8,
}

pub const DEFAULT_BIT_DEPTH: u8 = 14;

impl RawImage {
    /// Mosaic plane with the default 14-bit container levels.
    pub fn new(plane: Image, pattern: MosaicPattern) -> Result<Self> {
        Self::with_levels(plane, pattern, 0, (1 << DEFAULT_BIT_DEPTH) - 1, DEFAULT_BIT_DEPTH)
    }

    pub fn with_levels(
        plane: Image,
        pattern: MosaicPattern,
        black_level: u16,
        white_level: u16,
        bit_depth: u8,
    ) -> Result<Self> {
        if plane.channels != 1 && plane.channels != 3 {
            return Err(Error::Dimension(format!(
                "RAW plane must have 1 or 3 channels, got {}",
                plane.channels
            )));
        }
        require_even(plane.height, plane.width)?;
        if bit_depth == 0 || bit_depth > 16 {
            return Err(Error::InvalidParam(format!("bit depth {bit_depth} outside 1..=16")));
        }
        if white_level <= black_level || u32::from(white_level) > (1u32 << bit_depth) - 1 {
            return Err(Error::InvalidParam(format!(
                "levels black={black_level} white={white_level} invalid for {bit_depth} bits"
            )));
        }
        Ok(RawImage { plane, pattern, black_level, white_level, bit_depth })
    }

    pub fn is_mosaic(&self) -> bool {
        self.plane.channels == 1
    }

    pub fn height(&self) -> usize {
        self.plane.height
    }

    pub fn width(&self) -> usize {
        self.plane.width
    }

    /// Normalised quantisation step of the container.
    pub fn quantization_step(&self) -> f64 {
        1.0 / f64::from(self.white_level - self.black_level)
    }

    /// Round every sample to the nearest representable code.
    pub fn quantized(&self) -> RawImage {
        let range = f64::from(self.white_level - self.black_level);
        let plane = self.plane.map(|v| (v.clamp(0.0, 1.0) * range).round() / range);
        RawImage { plane, ..self.clone() }
    }

    pub fn with_plane(&self, plane: Image) -> Result<RawImage> {
        RawImage::with_levels(plane, self.pattern, self.black_level, self.white_level, self.bit_depth)
    }
}
