//! Stride-1 3x3 convolution with symmetric padding, planar layout.

use super::tensor::{axpy, dot, Real};
use crate::image::reflect_index;

pub(crate) const K: usize = 3;

/// Copies `[c, h, w]` into `[c, h + 2, w + 2]` with a one-pixel mirror border.
pub(crate) fn pad_symmetric<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![T::ZERO; c * ph * pw];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * ph * pw..(ch + 1) * ph * pw];
        for py in 0..ph {
            let sy = reflect_index(py as isize - 1, h);
            let row = &src[sy * w..(sy + 1) * w];
            let drow = &mut dst[py * pw..(py + 1) * pw];
            drow[1..=w].copy_from_slice(row);
            drow[0] = row[reflect_index(-1, w)];
            drow[w + 1] = row[reflect_index(w as isize, w)];
        }
    }
    out
}

/// Adds a padded-layout gradient back onto the unpadded source positions.
pub(crate) fn fold_symmetric<T: Real>(gpad: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![T::ZERO; c * h * w];
    for ch in 0..c {
        let src = &gpad[ch * ph * pw..(ch + 1) * ph * pw];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for py in 0..ph {
            let sy = reflect_index(py as isize - 1, h);
            let srow = &src[py * pw..(py + 1) * pw];
            let drow = &mut dst[sy * w..(sy + 1) * w];
            for (d, &s) in drow.iter_mut().zip(&srow[1..=w]) {
                *d += s;
            }
            drow[reflect_index(-1, w)] += srow[0];
            drow[reflect_index(w as isize, w)] += srow[w + 1];
        }
    }
    out
}

/// `out[co] = sum_ci weight[co, ci] * x[ci]` over the 3x3 neighbourhood.
pub(crate) fn forward<T: Real>(
    x: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
) -> Vec<T> {
    let padded = pad_symmetric(x, c_in, h, w);
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![T::ZERO; c_out * h * w];
    for co in 0..c_out {
        let dst = &mut out[co * h * w..(co + 1) * h * w];
        for ci in 0..c_in {
            let src = &padded[ci * ph * pw..(ci + 1) * ph * pw];
            let kernel = &weight[(co * c_in + ci) * K * K..(co * c_in + ci + 1) * K * K];
            for ky in 0..K {
                for kx in 0..K {
                    let wv = kernel[ky * K + kx];
                    for y in 0..h {
                        let row = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        axpy(&mut dst[y * w..(y + 1) * w], wv, row);
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_x, grad_weight)` for upstream `gout` of shape `[c_out, h, w]`.
pub(crate) fn backward<T: Real>(
    x: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
    gout: &[T],
    need_input_grad: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let padded = pad_symmetric(x, c_in, h, w);
    let (ph, pw) = (h + 2, w + 2);
    let mut gweight = vec![T::ZERO; weight.len()];
    let mut gpad = if need_input_grad {
        vec![T::ZERO; padded.len()]
    } else {
        Vec::new()
    };
    for co in 0..c_out {
        let g = &gout[co * h * w..(co + 1) * h * w];
        for ci in 0..c_in {
            let src = &padded[ci * ph * pw..(ci + 1) * ph * pw];
            let base = (co * c_in + ci) * K * K;
            for ky in 0..K {
                for kx in 0..K {
                    let mut acc = 0.0f64;
                    for y in 0..h {
                        let row = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        acc += dot(&g[y * w..(y + 1) * w], row);
                    }
                    gweight[base + ky * K + kx] = T::from_f64(acc);
                    if need_input_grad {
                        let wv = weight[base + ky * K + kx];
                        let dst = &mut gpad[ci * ph * pw..(ci + 1) * ph * pw];
                        for y in 0..h {
                            let off = (y + ky) * pw + kx;
                            axpy(&mut dst[off..off + w], wv, &g[y * w..(y + 1) * w]);
                        }
                    }
                }
            }
        }
    }
    let gx = need_input_grad.then(|| fold_symmetric(&gpad, c_in, h, w));
    (gx, gweight)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation with explicit reflection, independent of padding.
    fn naive(x: &[f64], c_in: usize, h: usize, w: usize, weight: &[f64], c_out: usize) -> Vec<f64> {
        let mut out = vec![0.0; c_out * h * w];
        for co in 0..c_out {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = reflect_index(y as isize + ky as isize - 1, h);
                                let sx = reflect_index(xx as isize + kx as isize - 1, w);
                                acc += weight[((co * c_in + ci) * 3 + ky) * 3 + kx]
                                    * x[(ci * h + sy) * w + sx];
                            }
                        }
                    }
                    out[(co * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn forward_matches_naive() {
        let (c_in, c_out, h, w) = (3, 4, 5, 7);
        let x = pseudo(c_in * h * w, 1);
        let wt = pseudo(c_out * c_in * 9, 2);
        let fast = forward(&x, c_in, h, w, &wt, c_out);
        let slow = naive(&x, c_in, h, w, &wt, c_out);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> must equal <x, grad_x> and <w, grad_w> since conv is
        // bilinear in (x, w).
        let (c_in, c_out, h, w) = (2, 3, 4, 6);
        let x = pseudo(c_in * h * w, 3);
        let wt = pseudo(c_out * c_in * 9, 4);
        let g = pseudo(c_out * h * w, 5);
        let y = forward(&x, c_in, h, w, &wt, c_out);
        let (gx, gw) = backward(&x, c_in, h, w, &wt, c_out, &g, true);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let via_x: f64 = x.iter().zip(gx.unwrap().iter()).map(|(a, b)| a * b).sum();
        let via_w: f64 = wt.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn tiny_images_reflect_correctly() {
        let x = vec![0.25f64];
        let wt = vec![1.0f64; 9];
        assert_eq!(forward(&x, 1, 1, 1, &wt, 1), vec![2.25]);
    }
}
