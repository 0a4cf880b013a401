//! Procedural test scenes: smooth illumination, layered value noise, a few
//! anti-aliased shapes and light sensor grain. Deterministic per seed.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::haze::{compose_haze, HazeScene};
use crate::image::ImagePlane;
use crate::seeds;
use crate::training::{synth_lowlight, Sample};

/// Lattice value noise in roughly `[-1, 1]`, bilinear with smoothstep easing.
struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut impl Rng) -> Self {
        let n = cells + 1;
        Self {
            cells,
            lattice: (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let n = self.cells + 1;
        let (fu, fv) = (u * self.cells as f64, v * self.cells as f64);
        let (i, j) = ((fu as usize).min(self.cells - 1), (fv as usize).min(self.cells - 1));
        let ease = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tu, tv) = (ease(fu - i as f64), ease(fv - j as f64));
        let l = |a: usize, b: usize| self.lattice[b * n + a];
        let top = l(i, j) * (1.0 - tu) + l(i + 1, j) * tu;
        let bottom = l(i, j + 1) * (1.0 - tu) + l(i + 1, j + 1) * tu;
        top * (1.0 - tv) + bottom * tv
    }
}

fn octaves(rng: &mut impl Rng, base: usize, count: usize) -> Vec<(ValueNoise, f64)> {
    (0..count)
        .map(|o| (ValueNoise::new(base << o, rng), 0.5f64.powi(o as i32)))
        .collect()
}

fn sample_octaves(layers: &[(ValueNoise, f64)], u: f64, v: f64) -> f64 {
    let norm: f64 = layers.iter().map(|l| l.1).sum();
    layers.iter().map(|(n, a)| a * n.at(u, v)).sum::<f64>() / norm
}

enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    /// Pixel coverage from an approximate signed distance.
    fn coverage(&self, x: f64, y: f64) -> f64 {
        let d = match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                ((dx * dx + dy * dy).sqrt() - 1.0) * rx.min(ry)
            }
            Shape::Rect { x0, y0, x1, y1 } => (x0 - x).max(x - x1).max(y0 - y).max(y - y1),
        };
        (0.5 - d).clamp(0.0, 1.0)
    }
}

/// A bright, textured RGB scene with values in `[0.02, 0.98]`.
pub fn scene(height: usize, width: usize, seed: u64) -> ImagePlane {
    let mut rng = seeds::rng(seed, "scene", 0);
    let c0: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.35..0.9));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.35..0.9));
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ct, st) = (theta.cos(), theta.sin());
    let texture = octaves(&mut rng, 3, 4);
    let tint = octaves(&mut rng, 2, 2);

    let shape_count = rng.gen_range(3..7);
    let (h, w) = (height as f64, width as f64);
    let mut shapes = Vec::with_capacity(shape_count);
    for _ in 0..shape_count {
        let shape = if rng.gen_bool(0.5) {
            Shape::Ellipse {
                cx: rng.gen_range(0.0..w),
                cy: rng.gen_range(0.0..h),
                rx: rng.gen_range(0.08..0.3) * w,
                ry: rng.gen_range(0.08..0.3) * h,
            }
        } else {
            let (x, y) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
            Shape::Rect {
                x0: x,
                y0: y,
                x1: x + rng.gen_range(0.1..0.4) * w,
                y1: y + rng.gen_range(0.1..0.4) * h,
            }
        };
        let color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.95));
        let shading = rng.gen_range(-0.25..0.25);
        shapes.push((shape, color, shading));
    }

    let grain = Normal::new(0.0, 0.008).expect("valid sigma");
    let mut out = ImagePlane::filled(height, width, 3, 0.0);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = ((x as f64 + 0.5) / w, (y as f64 + 0.5) / h);
            let t = (((u - 0.5) * ct + (v - 0.5) * st) + 0.5).clamp(0.0, 1.0);
            let tex = sample_octaves(&texture, u, v);
            let tn = sample_octaves(&tint, u, v);
            let mut px: [f64; 3] = std::array::from_fn(|c| {
                let base = c0[c] * (1.0 - t) + c1[c] * t;
                base * (1.0 + 0.3 * tex) + 0.05 * tn * (c as f64 - 1.0)
            });
            for (shape, color, shading) in &shapes {
                let a = shape.coverage(x as f64 + 0.5, y as f64 + 0.5);
                if a > 0.0 {
                    let lit = 1.0 + shading * (u - v) + 0.15 * tex;
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - a) + color[c] * lit * a;
                    }
                }
            }
            for (c, p) in px.iter().enumerate() {
                let v = p + grain.sample(&mut rng);
                out.set(y, x, c, v.clamp(0.02, 0.98) as f32);
            }
        }
    }
    out
}

/// A hazy rendering of `clean`: smooth transmission in `[0.35, 0.9]` and a
/// near-white ambient light.
pub fn hazy(clean: &ImagePlane, seed: u64) -> Result<ImagePlane> {
    let mut rng = seeds::rng(seed, "haze", 0);
    let field = octaves(&mut rng, 2, 2);
    let (h, w) = (clean.height(), clean.width());
    let t = ImagePlane::from_fn(h, w, 1, |y, x, _| {
        let n = sample_octaves(&field, (x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
        (0.625 + 0.275 * n).clamp(0.35, 0.9) as f32
    });
    let level = rng.gen_range(0.75..0.95);
    let ambient: Vec<f32> = (0..clean.channels())
        .map(|_| (level + rng.gen_range(-0.03..0.03)) as f32)
        .collect();
    compose_haze(&HazeScene::with_uniform_ambient(clean.clone(), t, &ambient)?)
}

/// `count` paired samples: scenes darkened with a gamma drawn from
/// `gamma_range` plus Gaussian noise. Ids are `fixture-<index>`.
pub fn paired_set(
    count: usize,
    size: usize,
    gamma_range: (f64, f64),
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut rng = seeds::rng(seed, "pairs", 0);
    (0..count)
        .map(|i| {
            let bright = scene(size, size, seeds::derive(seed, "scene", i as u64));
            let gamma = if gamma_range.0 == gamma_range.1 {
                gamma_range.0
            } else {
                rng.gen_range(gamma_range.0..gamma_range.1)
            };
            let low = synth_lowlight(&bright, gamma, noise_sigma, seeds::derive(seed, seeds::NOISE, i as u64))?;
            Sample::labeled(format!("fixture-{i:04}"), low, bright)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        let a = scene(40, 48, 5);
        assert_eq!(a, scene(40, 48, 5));
        assert_ne!(a, scene(40, 48, 6));
        let (lo, hi) = a.min_max();
        assert!(lo >= 0.02 && hi <= 0.98);
        assert!(a.mean() > 0.3);
    }

    #[test]
    fn hazy_scenes_are_lifted_toward_ambient() {
        let clean = scene(32, 32, 1);
        let hz = hazy(&clean, 1).unwrap();
        let (lo, _) = hz.min_max();
        assert!(lo > clean.min_max().0);
    }

    #[test]
    fn paired_set_darkens() {
        let set = paired_set(3, 24, (2.0, 3.0), 0.01, 7).unwrap();
        assert_eq!(set.len(), 3);
        for s in &set {
            assert!(s.low().mean() < s.target().unwrap().mean());
        }
    }
}
