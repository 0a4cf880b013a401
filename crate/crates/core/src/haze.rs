//! Closed-form haze mathematics.
//!
//! Forward composition `I = J t + A (1 - t)`, its inverse
//! `B = I'/t - A/t + A`, and the single-field reformulation
//! `B = h (I' - 1) + c` with
//! `h = ((I' - A)/t + (A - c)) / (I' - 1)`.
//!
//! Enhancement runs on the inverted low-light image `I' = 1 - L` and inverts
//! the recovered `B` back. Everything is evaluated in `f64` and stored `f32`.

use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Smallest transmission accepted by the closed-form recovery.
pub const T_MIN: f32 = 0.05;
/// Smallest `|I' - 1|` accepted when solving for `h` explicitly.
pub const EPS_DEN: f64 = 1e-4;
/// The recovery constant used by the enhancement pipeline.
pub const DEFAULT_C: f64 = 1.0;

/// Ground-truth fields for synthetic haze composition.
#[derive(Clone, Debug, PartialEq)]
pub struct HazeScene {
    clean: ImagePlane,
    transmission: ImagePlane,
    ambient: ImagePlane,
}

impl HazeScene {
    /// `transmission` must be single-channel; `ambient` may be a per-pixel
    /// plane congruent with `clean` or a 1x1 plane holding one value per channel.
    pub fn new(clean: ImagePlane, transmission: ImagePlane, ambient: ImagePlane) -> Result<Self> {
        if transmission.channels() != 1 || !transmission.same_size(&clean) {
            return Err(Error::shape(
                format!("{}x{}x1 transmission", clean.height(), clean.width()),
                transmission.shape_string(),
            ));
        }
        check_broadcast(&clean, &ambient)?;
        Ok(Self {
            clean,
            transmission,
            ambient,
        })
    }

    /// Uniform ambient light given one value per channel.
    pub fn with_uniform_ambient(
        clean: ImagePlane,
        transmission: ImagePlane,
        ambient: &[f32],
    ) -> Result<Self> {
        let a = ImagePlane::new(1, 1, ambient.len(), ambient.to_vec())?;
        Self::new(clean, transmission, a)
    }

    pub fn clean(&self) -> &ImagePlane {
        &self.clean
    }

    pub fn transmission(&self) -> &ImagePlane {
        &self.transmission
    }

    pub fn ambient(&self) -> &ImagePlane {
        &self.ambient
    }
}

/// The learned or explicit atmospheric component together with its constant.
#[derive(Clone, Debug, PartialEq)]
pub struct AtmosphericMap {
    pub h: ImagePlane,
    pub c: f64,
}

impl AtmosphericMap {
    pub fn new(h: ImagePlane, c: f64) -> Self {
        Self { h, c }
    }

    /// `h = 1` everywhere with the default constant: the identity enhancement.
    pub fn identity(height: usize, width: usize, channels: usize) -> Self {
        Self::new(ImagePlane::filled(height, width, channels, 1.0), DEFAULT_C)
    }
}

/// Accepts `field` if it matches `target` exactly, is single-channel at the
/// same size, or is a 1x1 plane with one value per channel (or one value).
fn check_broadcast(target: &ImagePlane, field: &ImagePlane) -> Result<()> {
    let spatial_ok =
        field.same_size(target) || (field.height() == 1 && field.width() == 1);
    let channel_ok = field.channels() == target.channels() || field.channels() == 1;
    if spatial_ok && channel_ok {
        Ok(())
    } else {
        Err(Error::shape(
            format!("broadcastable to {}", target.shape_string()),
            field.shape_string(),
        ))
    }
}

#[inline]
fn broadcast(field: &ImagePlane, y: usize, x: usize, c: usize) -> f64 {
    let (fy, fx) = if field.height() == 1 && field.width() == 1 {
        (0, 0)
    } else {
        (y, x)
    };
    let fc = if field.channels() == 1 { 0 } else { c };
    field.get(fy, fx, fc) as f64
}

/// Evaluates `f(target, a, b)` at every element of `target`, broadcasting
/// the auxiliary fields.
fn elementwise3(
    target: &ImagePlane,
    a: &ImagePlane,
    b: &ImagePlane,
    mut f: impl FnMut(f64, f64, f64) -> Result<f64>,
) -> Result<ImagePlane> {
    check_broadcast(target, a)?;
    check_broadcast(target, b)?;
    let mut out = target.clone();
    for y in 0..target.height() {
        for x in 0..target.width() {
            for c in 0..target.channels() {
                let v = f(
                    target.get(y, x, c) as f64,
                    broadcast(a, y, x, c),
                    broadcast(b, y, x, c),
                )?;
                out.set(y, x, c, v as f32);
            }
        }
    }
    Ok(out)
}

/// `I = J t + A (1 - t)`.
pub fn compose_haze(scene: &HazeScene) -> Result<ImagePlane> {
    elementwise3(&scene.clean, &scene.transmission, &scene.ambient, |j, t, a| {
        Ok(j * t + a * (1.0 - t))
    })
}

/// `B = I'/t - A/t + A`, refusing transmissions below [`T_MIN`].
pub fn recover_closed_form(
    hazy: &ImagePlane,
    transmission: &ImagePlane,
    ambient: &ImagePlane,
) -> Result<ImagePlane> {
    elementwise3(hazy, transmission, ambient, |i, t, a| {
        if t < T_MIN as f64 {
            return Err(Error::Singularity(format!(
                "transmission {t} below {T_MIN}"
            )));
        }
        Ok(i / t - a / t + a)
    })
}

/// Solves for `h` from explicit transmission and ambient fields.
///
/// Only the test oracle needs this; the learned path never divides by
/// `I' - 1`.
pub fn h_from_components(
    hazy: &ImagePlane,
    transmission: &ImagePlane,
    ambient: &ImagePlane,
    c: f64,
) -> Result<AtmosphericMap> {
    let h = elementwise3(hazy, transmission, ambient, |i, t, a| {
        if t < T_MIN as f64 {
            return Err(Error::Singularity(format!(
                "transmission {t} below {T_MIN}"
            )));
        }
        let den = i - 1.0;
        if den.abs() < EPS_DEN {
            return Err(Error::Singularity(format!(
                "|I' - 1| = {} below {EPS_DEN}",
                den.abs()
            )));
        }
        Ok(((i - a) / t + (a - c)) / den)
    })?;
    Ok(AtmosphericMap::new(h, c))
}

/// `B = h (I' - 1) + c`, unclamped.
pub fn apply_h(hazy: &ImagePlane, map: &AtmosphericMap) -> Result<ImagePlane> {
    hazy.ensure_same_shape(&map.h)?;
    let c = map.c;
    hazy.zip_map(&map.h, |i, h| (h as f64 * (i as f64 - 1.0) + c) as f32)
}

/// [`apply_h`] clipped to `[0, 1]` for display.
pub fn apply_h_clamped(hazy: &ImagePlane, map: &AtmosphericMap) -> Result<ImagePlane> {
    apply_h(hazy, map).map(|b| crate::image::clamp_unit(&b))
}

/// Unclamped `1 - B` for a low-light input; what the losses see.
///
/// Computed as `(1 - c) + h L`, the same quantity with `I' - 1 = -L`, so
/// `h = 1, c = 1` reproduces the input bit for bit.
pub fn enhance_unclamped(low: &ImagePlane, map: &AtmosphericMap) -> Result<ImagePlane> {
    low.ensure_same_shape(&map.h)?;
    let c = map.c;
    low.zip_map(&map.h, |l, h| ((1.0 - c) + h as f64 * l as f64) as f32)
}

/// Invert, recover with `h`, invert back, clip to `[0, 1]`.
pub fn enhance(low: &ImagePlane, map: &AtmosphericMap) -> Result<ImagePlane> {
    enhance_unclamped(low, map).map(|y| crate::image::clamp_unit(&y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::invert;
    use proptest::prelude::*;

    fn px(v: f32) -> ImagePlane {
        ImagePlane::filled(1, 1, 1, v)
    }

    #[test]
    fn compose_examples() {
        let j = ImagePlane::from_fn(2, 2, 3, |y, x, c| (y + x + c) as f32 / 6.0);
        let ones = ImagePlane::filled(2, 2, 1, 1.0);
        let zeros = ImagePlane::filled(2, 2, 1, 0.0);
        let scene = HazeScene::with_uniform_ambient(j.clone(), ones, &[0.7, 0.8, 0.9]).unwrap();
        assert_eq!(compose_haze(&scene).unwrap(), j);
        let full = HazeScene::with_uniform_ambient(j, zeros, &[0.7, 0.8, 0.9]).unwrap();
        let out = compose_haze(&full).unwrap();
        assert!(out.data().chunks(3).all(|p| p == [0.7, 0.8, 0.9]));

        let scalar = HazeScene::new(px(0.4), px(0.5), px(0.8)).unwrap();
        assert!((compose_haze(&scalar).unwrap().data()[0] - 0.6).abs() < 1e-7);
    }

    #[test]
    fn scene_validates_shapes() {
        let j = ImagePlane::filled(2, 2, 3, 0.5);
        assert!(HazeScene::new(j.clone(), ImagePlane::filled(2, 2, 3, 0.5), px(0.5)).is_err());
        assert!(HazeScene::new(j.clone(), ImagePlane::filled(2, 3, 1, 0.5), px(0.5)).is_err());
        assert!(HazeScene::new(j, ImagePlane::filled(2, 2, 1, 0.5), ImagePlane::filled(3, 3, 3, 0.5))
            .is_err());
    }

    #[test]
    fn recover_examples() {
        let hazy = ImagePlane::from_fn(2, 3, 3, |y, x, c| (y * 3 + x + c) as f32 / 8.0);
        let b = recover_closed_form(&hazy, &ImagePlane::filled(2, 3, 1, 1.0), &px(0.3)).unwrap();
        assert_eq!(b, hazy);
        let b = recover_closed_form(&px(0.6), &px(0.5), &px(0.8)).unwrap();
        assert!((b.data()[0] - 0.4).abs() < 1e-7);
        assert!(matches!(
            recover_closed_form(&px(0.6), &px(0.01), &px(0.8)),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn h_examples() {
        let h = h_from_components(&px(0.6), &px(0.5), &px(0.8), 1.0).unwrap();
        assert!((h.h.data()[0] - 1.5).abs() < 1e-6);
        let h = h_from_components(&px(0.3), &px(1.0), &px(1.0), 1.0).unwrap();
        assert!((h.h.data()[0] - 1.0).abs() < 1e-7);
        assert!(matches!(
            h_from_components(&px(1.0), &px(0.5), &px(0.8), 1.0),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn apply_h_examples() {
        let hazy = ImagePlane::from_fn(3, 3, 3, |y, x, c| (y * 9 + x * 3 + c) as f32 / 27.0);
        let ident = AtmosphericMap::identity(3, 3, 3);
        assert_eq!(apply_h(&hazy, &ident).unwrap(), hazy);
        let zero = AtmosphericMap::new(ImagePlane::filled(3, 3, 3, 0.0), 1.0);
        assert!(apply_h(&hazy, &zero).unwrap().data().iter().all(|&v| v == 1.0));
        let b = apply_h(&px(0.5), &AtmosphericMap::new(px(1.6), 1.0)).unwrap();
        assert!((b.data()[0] - 0.2).abs() < 1e-7);
        assert!(apply_h(&hazy, &AtmosphericMap::identity(2, 3, 3)).is_err());
    }

    #[test]
    fn enhance_examples() {
        let low = ImagePlane::from_fn(4, 4, 3, |y, x, c| (y * 12 + x * 3 + c) as f32 / 48.0);
        assert_eq!(enhance(&low, &AtmosphericMap::identity(4, 4, 3)).unwrap(), low);

        let out = enhance(&px(0.2), &AtmosphericMap::new(px(2.0), 1.0)).unwrap();
        assert!((out.data()[0] - 0.4).abs() < 1e-7);

        for h in [0.1f32, 1.0, 3.0, 40.0] {
            let out = enhance(&px(0.0), &AtmosphericMap::new(px(h), 1.0)).unwrap();
            assert_eq!(out.data()[0], 0.0);
        }
    }

    #[test]
    fn enhance_matches_explicit_chain() {
        let low = ImagePlane::from_fn(3, 5, 3, |y, x, c| ((y * 15 + x * 3 + c) % 17) as f32 / 20.0);
        let map = AtmosphericMap::new(
            ImagePlane::from_fn(3, 5, 3, |y, x, c| 0.5 + (y + x + c) as f32 * 0.3),
            1.0,
        );
        let chained = invert(&apply_h(&invert(&low), &map).unwrap());
        let fused = enhance_unclamped(&low, &map).unwrap();
        for (a, b) in chained.data().iter().zip(fused.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn brightness_increases_with_h(l in 0.01f32..1.0, h in 0.1f32..10.0, dh in 0.01f32..1.0) {
            let lo = enhance_unclamped(&px(l), &AtmosphericMap::new(px(h), 1.0)).unwrap();
            let hi = enhance_unclamped(&px(l), &AtmosphericMap::new(px(h + dh), 1.0)).unwrap();
            prop_assert!(hi.data()[0] > lo.data()[0]);
        }

        #[test]
        fn composition_is_convex(j in 0.0f32..=1.0, t in 0.0f32..=1.0, a in 0.0f32..=1.0) {
            let scene = HazeScene::new(px(j), px(t), px(a)).unwrap();
            let i = compose_haze(&scene).unwrap().data()[0];
            prop_assert!((0.0..=1.0).contains(&i));
        }
    }
}
