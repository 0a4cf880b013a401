use super::ImagePlane;
use crate::error::{Error, Result};

/// Maps a possibly out-of-range index onto `0..n` by symmetric reflection
/// (`... 1 0 | 0 1 ... n-1 | n-1 n-2 ...`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    if m < n {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let r = radius as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// Separable correlation of every channel with `taps` along both axes,
/// symmetric padding, output in `f64`.
pub(crate) fn separable_same(img: &ImagePlane, taps: &[f64]) -> Vec<f64> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let r = (taps.len() / 2) as isize;
    let src = img.data();
    let mut horiz = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let sx = reflect_index(x as isize + k as isize - r, w);
                    acc += t * src[(y * w + sx) * ch + c] as f64;
                }
                horiz[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let sy = reflect_index(y as isize + k as isize - r, h);
                    acc += t * horiz[(sy * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc;
            }
        }
    }
    out
}

pub fn gaussian_blur(img: &ImagePlane, sigma: f64, radius: usize) -> Result<ImagePlane> {
    let taps = gaussian_kernel(sigma, radius)?;
    let data = separable_same(img, &taps).into_iter().map(|v| v as f32).collect();
    ImagePlane::new(img.height(), img.width(), img.channels(), data)
}

pub fn median_filter(img: &ImagePlane, radius: usize) -> Result<ImagePlane> {
    if radius == 0 {
        return Err(Error::InvalidArgument("median radius must be at least 1".into()));
    }
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let r = radius as isize;
    let side = 2 * radius + 1;
    let mut window = Vec::with_capacity(side * side);
    let mut out = ImagePlane::filled(h, w, ch, 0.0);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                window.clear();
                for dy in -r..=r {
                    let sy = reflect_index(y as isize + dy, h);
                    for dx in -r..=r {
                        let sx = reflect_index(x as isize + dx, w);
                        window.push(img.get(sy, sx, c));
                    }
                }
                let mid = window.len() / 2;
                let (_, median, _) = window.select_nth_unstable_by(mid, f32::total_cmp);
                out.set(y, x, c, *median);
            }
        }
    }
    Ok(out)
}

/// Bilinear resampling by 0.5 or 2.0 with half-pixel centers and edge clamping.
pub fn resample(img: &ImagePlane, factor: f64) -> Result<ImagePlane> {
    if factor != 0.5 && factor != 2.0 {
        return Err(Error::InvalidArgument(format!(
            "resample factor must be 0.5 or 2.0, got {factor}"
        )));
    }
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let nh = (h as f64 * factor).floor() as usize;
    let nw = (w as f64 * factor).floor() as usize;
    if nh == 0 || nw == 0 {
        return Err(Error::ImageTooSmall(format!(
            "{h}x{w} cannot be resampled by {factor}"
        )));
    }
    let taps = |dst: usize, n: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) / factor - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = ImagePlane::filled(nh, nw, ch, 0.0);
    for y in 0..nh {
        let (y0, y1, fy) = taps(y, h);
        for x in 0..nw {
            let (x0, x1, fx) = taps(x, w);
            for c in 0..ch {
                let top = img.get(y0, x0, c) as f64 * (1.0 - fx) + img.get(y0, x1, c) as f64 * fx;
                let bottom =
                    img.get(y1, x0, c) as f64 * (1.0 - fx) + img.get(y1, x1, c) as f64 * fx;
                out.set(y, x, c, (top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Ok(out)
}
