//! Gaussian-windowed SSIM on planar `[c, h, w]` data, with its analytic
//! gradient. Shared by the SSIM loss and the SSIM metric.
//!
//! Windows are applied in valid mode, so the SSIM map has
//! `(h - n + 1) x (w - n + 1)` entries per channel; the score is the mean
//! over all map entries of all channels. Everything runs in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    /// Odd window side length.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    fn taps(&self) -> Result<Vec<f64>> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "SSIM window must be odd, got {}",
                self.window
            )));
        }
        crate::image::gaussian_kernel(self.sigma, self.window / 2)
    }

    fn check(&self, h: usize, w: usize) -> Result<Vec<f64>> {
        let taps = self.taps()?;
        if h < self.window || w < self.window {
            return Err(Error::ImageTooSmall(format!(
                "{h}x{w} is smaller than the {}x{} SSIM window",
                self.window, self.window
            )));
        }
        Ok(taps)
    }
}

/// Separable valid-mode correlation of one `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (k, &t) in taps.iter().enumerate() {
            let src_row = &horiz[(y + k) * ow..(y + k + 1) * ow];
            for (o, &v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src_row) {
                *o += t * v;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads an `oh x ow` field back over `h x w`.
fn filter_valid_adjoint(g: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut vert = vec![0.0; h * ow];
    for y in 0..oh {
        for (k, &t) in taps.iter().enumerate() {
            let dst = &mut vert[(y + k) * ow..(y + k + 1) * ow];
            for (d, &v) in dst.iter_mut().zip(&g[y * ow..(y + 1) * ow]) {
                *d += t * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..ow {
            let v = vert[y * ow + x];
            for (k, &t) in taps.iter().enumerate() {
                out[y * w + x + k] += t * v;
            }
        }
    }
    out
}

struct Moments {
    mx: Vec<f64>,
    my: Vec<f64>,
    exx: Vec<f64>,
    eyy: Vec<f64>,
    exy: Vec<f64>,
}

fn moments(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> Moments {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    Moments {
        mx: filter_valid(a, h, w, taps),
        my: filter_valid(b, h, w, taps),
        exx: filter_valid(&sq(a), h, w, taps),
        eyy: filter_valid(&sq(b), h, w, taps),
        exy: filter_valid(&prod, h, w, taps),
    }
}

/// Mean SSIM between two planar images of shape `[c, h, w]`.
pub fn mean_ssim(a: &[f64], b: &[f64], c: usize, h: usize, w: usize, cfg: &SsimConfig) -> Result<f64> {
    mean_ssim_impl(a, b, c, h, w, cfg, false).map(|(s, _, _)| s)
}

/// Mean SSIM with gradients with respect to both inputs.
pub fn mean_ssim_with_grad(
    a: &[f64],
    b: &[f64],
    c: usize,
    h: usize,
    w: usize,
    cfg: &SsimConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    mean_ssim_impl(a, b, c, h, w, cfg, true)
}

fn mean_ssim_impl(
    a: &[f64],
    b: &[f64],
    c: usize,
    h: usize,
    w: usize,
    cfg: &SsimConfig,
    want_grad: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != c * h * w || b.len() != c * h * w {
        return Err(Error::shape(c * h * w, format!("{} and {}", a.len(), b.len())));
    }
    let taps = cfg.check(h, w)?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let n = cfg.window;
    let count = (c * (h - n + 1) * (w - n + 1)) as f64;
    let plane = h * w;
    let mut total = 0.0;
    let (mut ga, mut gb) = if want_grad {
        (vec![0.0; a.len()], vec![0.0; b.len()])
    } else {
        (Vec::new(), Vec::new())
    };
    for ch in 0..c {
        let pa = &a[ch * plane..(ch + 1) * plane];
        let pb = &b[ch * plane..(ch + 1) * plane];
        let m = moments(pa, pb, h, w, &taps);
        let len = m.mx.len();
        let (mut g_mx, mut g_my, mut g_exx, mut g_eyy, mut g_exy) = if want_grad {
            (
                vec![0.0; len],
                vec![0.0; len],
                vec![0.0; len],
                vec![0.0; len],
                vec![0.0; len],
            )
        } else {
            Default::default()
        };
        for i in 0..len {
            let (mx, my) = (m.mx[i], m.my[i]);
            let sxx = m.exx[i] - mx * mx;
            let syy = m.eyy[i] - my * my;
            let sxy = m.exy[i] - mx * my;
            let a1 = 2.0 * mx * my + c1;
            let a2 = 2.0 * sxy + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = sxx + syy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let d_a1 = a2 / (b1 * b2);
                let d_a2 = a1 / (b1 * b2);
                let d_b1 = -s / b1;
                let d_b2 = -s / b2;
                g_mx[i] = (d_a1 * 2.0 * my - d_a2 * 2.0 * my + d_b1 * 2.0 * mx - d_b2 * 2.0 * mx) / count;
                g_my[i] = (d_a1 * 2.0 * mx - d_a2 * 2.0 * mx + d_b1 * 2.0 * my - d_b2 * 2.0 * my) / count;
                g_exx[i] = d_b2 / count;
                g_eyy[i] = d_b2 / count;
                g_exy[i] = 2.0 * d_a2 / count;
            }
        }
        if want_grad {
            let t_mx = filter_valid_adjoint(&g_mx, h, w, &taps);
            let t_my = filter_valid_adjoint(&g_my, h, w, &taps);
            let t_exx = filter_valid_adjoint(&g_exx, h, w, &taps);
            let t_eyy = filter_valid_adjoint(&g_eyy, h, w, &taps);
            let t_exy = filter_valid_adjoint(&g_exy, h, w, &taps);
            for q in 0..plane {
                ga[ch * plane + q] = t_mx[q] + 2.0 * pa[q] * t_exx[q] + pb[q] * t_exy[q];
                gb[ch * plane + q] = t_my[q] + 2.0 * pb[q] * t_eyy[q] + pa[q] * t_exy[q];
            }
        }
    }
    Ok((total / count, ga, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    #[test]
    fn identical_images_score_one() {
        let a = pseudo(3 * 16 * 16, 9);
        let s = mean_ssim(&a, &a, 3, 16, 16, &SsimConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_pair_reduces_to_luminance_term() {
        let a = vec![0.2; 11 * 11];
        let b = vec![0.8; 11 * 11];
        let s = mean_ssim(&a, &b, 1, 11, 11, &SsimConfig::default()).unwrap();
        let expected = (2.0 * 0.16 + 1e-4) / (0.04 + 0.64 + 1e-4);
        assert!((s - expected).abs() < 1e-12);
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = pseudo(2 * 13 * 12, 1);
        let b = pseudo(2 * 13 * 12, 2);
        let cfg = SsimConfig::default();
        let ab = mean_ssim(&a, &b, 2, 13, 12, &cfg).unwrap();
        let ba = mean_ssim(&b, &a, 2, 13, 12, &cfg).unwrap();
        assert!((ab - ba).abs() < 1e-14);
    }

    #[test]
    fn rejects_small_images_and_even_windows() {
        let a = vec![0.5; 64];
        assert!(matches!(
            mean_ssim(&a, &a, 1, 8, 8, &SsimConfig::default()),
            Err(Error::ImageTooSmall(_))
        ));
        assert!(mean_ssim(&a, &a, 1, 8, 8, &SsimConfig::default().with_window(4)).is_err());
    }

    #[test]
    fn gradient_matches_central_differences_in_f64() {
        let (c, h, w) = (2, 9, 10);
        let cfg = SsimConfig::default().with_window(7);
        let a = pseudo(c * h * w, 5);
        let b = pseudo(c * h * w, 6);
        let (_, ga, gb) = mean_ssim_with_grad(&a, &b, c, h, w, &cfg).unwrap();
        let step = 1e-6;
        for i in (0..a.len()).step_by(7) {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[i] += step;
            bm[i] -= step;
            let fd = (mean_ssim(&a, &bp, c, h, w, &cfg).unwrap()
                - mean_ssim(&a, &bm, c, h, w, &cfg).unwrap())
                / (2.0 * step);
            assert!((fd - gb[i]).abs() < 1e-7 * (1.0 + fd.abs()), "b[{i}]: {fd} vs {}", gb[i]);

            let mut ap = a.clone();
            let mut am = a.clone();
            ap[i] += step;
            am[i] -= step;
            let fd = (mean_ssim(&ap, &b, c, h, w, &cfg).unwrap()
                - mean_ssim(&am, &b, c, h, w, &cfg).unwrap())
                / (2.0 * step);
            assert!((fd - ga[i]).abs() < 1e-7 * (1.0 + fd.abs()), "a[{i}]: {fd} vs {}", ga[i]);
        }
    }
}
