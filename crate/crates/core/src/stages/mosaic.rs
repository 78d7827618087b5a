use crate::error::Result;
use crate::imagecore::{require_even, Channel, Image, MosaicPattern, RawImage, RgbImage};

/// Sample the pattern-selected channel at every site.
pub fn mosaic(x: &Image, pattern: MosaicPattern) -> Result<RawImage> {
    x.require_channels(3)?;
    require_even(x.height, x.width)?;
    let data = mosaic_kernel(&x.data, x.height, x.width, pattern);
    RawImage::new(Image { height: x.height, width: x.width, channels: 1, data }, pattern)
}

pub(crate) fn mosaic_kernel(data: &[f64], h: usize, w: usize, pattern: MosaicPattern) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(data[(y * w + x) * 3 + pattern.channel_at(y, x).index()]);
        }
    }
    out
}

/// Bilinear demosaic with mirror padding. A three-channel RAW plane is returned as is.
pub fn demosaic_bilinear(y: &RawImage) -> Result<RgbImage> {
    if !y.is_mosaic() {
        return RgbImage::from_image(y.plane.clone());
    }
    let (h, w) = (y.height(), y.width());
    let data = demosaic_kernel(&y.plane.data, h, w, y.pattern);
    RgbImage::from_image(Image { height: h, width: w, channels: 3, data })
}

#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

type Taps = Vec<(isize, isize, f64)>;

/// Interpolation stencil for channel `c` at a site of CFA phase `(py, px)`.
fn stencil(pattern: MosaicPattern, py: usize, px: usize, c: Channel) -> Taps {
    let site = pattern.channel_at(py, px);
    if site == c {
        return vec![(0, 0, 1.0)];
    }
    if c == Channel::G {
        return vec![(-1, 0, 0.25), (1, 0, 0.25), (0, -1, 0.25), (0, 1, 0.25)];
    }
    if site == Channel::G {
        if pattern.channel_at(py, px + 1) == c {
            vec![(0, -1, 0.5), (0, 1, 0.5)]
        } else {
            vec![(-1, 0, 0.5), (1, 0, 0.5)]
        }
    } else {
        vec![(-1, -1, 0.25), (-1, 1, 0.25), (1, -1, 0.25), (1, 1, 0.25)]
    }
}

fn stencils(pattern: MosaicPattern) -> [[[Taps; 3]; 2]; 2] {
    let chans = [Channel::R, Channel::G, Channel::B];
    std::array::from_fn(|py| std::array::from_fn(|px| chans.map(|c| stencil(pattern, py, px, c))))
}

pub(crate) fn demosaic_kernel(data: &[f64], h: usize, w: usize, pattern: MosaicPattern) -> Vec<f64> {
    let st = stencils(pattern);
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for taps in &st[y & 1][x & 1] {
                let mut acc = 0.0;
                for &(dy, dx, wt) in taps {
                    let yy = mirror(y as isize + dy, h);
                    let xx = mirror(x as isize + dx, w);
                    acc += wt * data[yy * w + xx];
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Transpose of [`demosaic_kernel`]: maps an RGB gradient back onto the mosaic.
pub(crate) fn demosaic_adjoint(grad: &[f64], h: usize, w: usize, pattern: MosaicPattern) -> Vec<f64> {
    let st = stencils(pattern);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            for (c, taps) in st[y & 1][x & 1].iter().enumerate() {
                let g = grad[(y * w + x) * 3 + c];
                for &(dy, dx, wt) in taps {
                    let yy = mirror(y as isize + dy, h);
                    let xx = mirror(x as isize + dx, w);
                    out[yy * w + xx] += wt * g;
                }
            }
        }
    }
    out
}
