//! The four training losses and their weighted combination.
//!
//! Each loss has a plain evaluation over [`ImagePlane`]s (accumulated in
//! `f64`) and a tape form that is differentiable with respect to the
//! prediction. Targets never carry gradient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, median_filter, resample, ImagePlane};
use crate::network::{plane_to_tensor, Real, Tape, Tensor, Var};
use crate::ssim::{mean_ssim, SsimConfig};

/// Operator producing the smoothed label for the smoothness term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Smoother {
    Gaussian { sigma: f64, radius: usize },
    Median { radius: usize },
    /// Half-size bilinear downsample followed by a 2x upsample.
    Resample,
}

impl Default for Smoother {
    fn default() -> Self {
        Smoother::Gaussian {
            sigma: 1.5,
            radius: 3,
        }
    }
}

impl Smoother {
    pub fn apply(&self, img: &ImagePlane) -> Result<ImagePlane> {
        match *self {
            Smoother::Gaussian { sigma, radius } => gaussian_blur(img, sigma, radius),
            Smoother::Median { radius } => median_filter(img, radius),
            Smoother::Resample => down_up(img),
        }
    }
}

/// Odd sizes lose their last row/column on the way down; it is restored by
/// edge replication.
fn down_up(img: &ImagePlane) -> Result<ImagePlane> {
    let up = resample(&resample(img, 0.5)?, 2.0)?;
    let (uh, uw) = (up.height(), up.width());
    Ok(ImagePlane::from_fn(img.height(), img.width(), img.channels(), |y, x, c| {
        up.get(y.min(uh - 1), x.min(uw - 1), c)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Exponent applied to the label in the brightness term.
    pub gamma1: f64,
    /// Exponent applied to the prediction in the brightness term.
    pub gamma2: f64,
    #[serde(default)]
    pub smoother: Smoother,
    #[serde(default = "default_window")]
    pub ssim_window: usize,
    #[serde(default = "default_k1")]
    pub ssim_k1: f64,
    #[serde(default = "default_k2")]
    pub ssim_k2: f64,
}

fn default_window() -> usize {
    11
}

fn default_k1() -> f64 {
    0.01
}

fn default_k2() -> f64 {
    0.03
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.35,
            lambda2: 0.5,
            lambda3: 0.15,
            gamma1: 0.85,
            gamma2: 1.15,
            smoother: Smoother::default(),
            ssim_window: default_window(),
            ssim_k1: default_k1(),
            ssim_k2: default_k2(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda1, self.lambda2, self.lambda3];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(format!("loss weights must be >= 0, got {lambdas:?}")));
        }
        if !(self.gamma1 > 0.0 && self.gamma2 > 0.0) {
            return Err(Error::Config(format!(
                "gamma exponents must be positive, got {} and {}",
                self.gamma1, self.gamma2
            )));
        }
        if self.ssim_window == 0 || self.ssim_window % 2 == 0 {
            return Err(Error::Config(format!("ssim_window must be odd, got {}", self.ssim_window)));
        }
        match self.smoother {
            Smoother::Gaussian { sigma, .. } if !(sigma > 0.0) => {
                Err(Error::Config(format!("smoother sigma must be positive, got {sigma}")))
            }
            Smoother::Median { radius: 0 } => Err(Error::Config("median radius must be >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn ssim_config(&self) -> SsimConfig {
        SsimConfig {
            window: self.ssim_window,
            k1: self.ssim_k1,
            k2: self.ssim_k2,
            ..SsimConfig::default()
        }
    }
}

/// Total loss with its unweighted components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub l1: f64,
    pub brightness: f64,
    pub smooth: f64,
    pub ssim: f64,
}

impl LossValue {
    pub const CSV_HEADER: &'static str = "step,l1,brightness,smooth,ssim,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{}",
            self.l1, self.brightness, self.smooth, self.ssim, self.total
        )
    }
}

/// Selects which objective a training run or gradient check uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    Brightness,
    Smooth,
    Ssim,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::L1,
        LossKind::Brightness,
        LossKind::Smooth,
        LossKind::Ssim,
        LossKind::Total,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::Brightness => "brightness",
            LossKind::Smooth => "smooth",
            LossKind::Ssim => "ssim",
            LossKind::Total => "total",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown loss `{s}`")))
    }
}

/// `max(v, 0)^p`, with `0^0 = 1`.
fn floored_pow(v: f64, p: f64) -> f64 {
    if v > 0.0 {
        v.powf(p)
    } else if p == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn mean_abs_diff(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>, n: usize) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64
}

pub fn l1_loss(y_g: &ImagePlane, y_p: &ImagePlane) -> Result<f64> {
    y_g.ensure_same_shape(y_p)?;
    Ok(mean_abs_diff(
        y_g.data().iter().map(|&v| v as f64),
        y_p.data().iter().map(|&v| v as f64),
        y_g.len(),
    ))
}

/// Mean `|y_g^gamma1 - max(y_p, 0)^gamma2|`.
pub fn brightness_loss(y_g: &ImagePlane, y_p: &ImagePlane, gamma1: f64, gamma2: f64) -> Result<f64> {
    y_g.ensure_same_shape(y_p)?;
    Ok(mean_abs_diff(
        y_g.data().iter().map(|&v| floored_pow(v as f64, gamma1)),
        y_p.data().iter().map(|&v| floored_pow(v as f64, gamma2)),
        y_g.len(),
    ))
}

/// Mean `|smooth(y_g) - y_p|`.
pub fn smooth_loss(y_g: &ImagePlane, y_p: &ImagePlane, smoother: &Smoother) -> Result<f64> {
    y_g.ensure_same_shape(y_p)?;
    l1_loss(&smoother.apply(y_g)?, y_p)
}

/// `1 - mean SSIM`.
pub fn ssim_loss(y_g: &ImagePlane, y_p: &ImagePlane, weights: &LossWeights) -> Result<f64> {
    y_g.ensure_same_shape(y_p)?;
    let to64 = |img: &ImagePlane| -> Vec<f64> { img.to_planar().into_iter().map(f64::from).collect() };
    let s = mean_ssim(
        &to64(y_g),
        &to64(y_p),
        y_g.channels(),
        y_g.height(),
        y_g.width(),
        &weights.ssim_config(),
    )?;
    Ok(1.0 - s)
}

pub fn total_loss(y_g: &ImagePlane, y_p: &ImagePlane, weights: &LossWeights) -> Result<LossValue> {
    let l1 = l1_loss(y_g, y_p)?;
    let brightness = brightness_loss(y_g, y_p, weights.gamma1, weights.gamma2)?;
    let smooth = smooth_loss(y_g, y_p, &weights.smoother)?;
    let ssim = ssim_loss(y_g, y_p, weights)?;
    Ok(LossValue {
        total: combine(weights, l1, brightness, smooth, ssim),
        l1,
        brightness,
        smooth,
        ssim,
    })
}

fn combine(w: &LossWeights, l1: f64, brightness: f64, smooth: f64, ssim: f64) -> f64 {
    w.lambda1 * l1 + w.lambda2 * brightness + w.lambda3 * smooth + ssim
}

/// Constant tensors derived from one label: the label itself, its gamma
/// power and its smoothed version, all planar `[c, h, w]`.
#[derive(Clone, Debug)]
pub struct LossTargets<T> {
    pub target: Tensor<T>,
    pub powered: Tensor<T>,
    pub smoothed: Tensor<T>,
}

impl<T: Real> LossTargets<T> {
    pub fn new(y_g: &ImagePlane, weights: &LossWeights) -> Result<Self> {
        let target = plane_to_tensor(y_g);
        let powered = Tensor::new(
            target.shape().to_vec(),
            target
                .data()
                .iter()
                .map(|v: &T| T::from_f64(floored_pow(v.to_f64(), weights.gamma1)))
                .collect(),
        )?;
        let smoothed = plane_to_tensor(&weights.smoother.apply(y_g)?);
        Ok(Self {
            target,
            powered,
            smoothed,
        })
    }
}

/// Nodes of the individual terms on a tape. Terms not required by the
/// selected loss are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub l1: Option<Var>,
    pub brightness: Option<Var>,
    pub smooth: Option<Var>,
    pub ssim: Option<Var>,
    /// The scalar that is differentiated.
    pub objective: Var,
}

impl LossNodes {
    /// Reads the component values; absent terms are reported as 0.
    pub fn value<T: Real>(&self, tape: &Tape<T>, weights: &LossWeights) -> LossValue {
        let get = |v: Option<Var>| v.map(|v| tape.scalar(v)).unwrap_or(0.0);
        let (l1, brightness, smooth, ssim) =
            (get(self.l1), get(self.brightness), get(self.smooth), get(self.ssim));
        LossValue {
            total: combine(weights, l1, brightness, smooth, ssim),
            l1,
            brightness,
            smooth,
            ssim,
        }
    }
}

fn tape_mean_abs<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

/// Records the loss `kind` between the constant targets and the prediction
/// `y_p` (planar `[c, h, w]`).
pub fn tape_loss<T: Real>(
    tape: &mut Tape<T>,
    y_p: Var,
    targets: &LossTargets<T>,
    weights: &LossWeights,
    kind: LossKind,
) -> Result<LossNodes> {
    let wants = |k: LossKind| kind == k || kind == LossKind::Total;
    let l1 = if wants(LossKind::L1) {
        let t = tape.constant(targets.target.clone());
        Some(tape_mean_abs(tape, t, y_p)?)
    } else {
        None
    };
    let brightness = if wants(LossKind::Brightness) {
        let t = tape.constant(targets.powered.clone());
        let p = tape.pow_const(y_p, weights.gamma2);
        Some(tape_mean_abs(tape, t, p)?)
    } else {
        None
    };
    let smooth = if wants(LossKind::Smooth) {
        let t = tape.constant(targets.smoothed.clone());
        Some(tape_mean_abs(tape, t, y_p)?)
    } else {
        None
    };
    let ssim = if wants(LossKind::Ssim) {
        let t = tape.constant(targets.target.clone());
        let s = tape.ssim(t, y_p, weights.ssim_config())?;
        Some(tape.affine(s, -1.0, 1.0))
    } else {
        None
    };
    let objective = match kind {
        LossKind::L1 => l1,
        LossKind::Brightness => brightness,
        LossKind::Smooth => smooth,
        LossKind::Ssim => ssim,
        LossKind::Total => Some(tape.weighted_sum(&[
            (l1.expect("l1 recorded"), weights.lambda1),
            (brightness.expect("brightness recorded"), weights.lambda2),
            (smooth.expect("smooth recorded"), weights.lambda3),
            (ssim.expect("ssim recorded"), 1.0),
        ])?),
    }
    .expect("selected term recorded");
    Ok(LossNodes {
        l1,
        brightness,
        smooth,
        ssim,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, c: usize, values: Vec<f32>) -> ImagePlane {
        ImagePlane::new(h, w, c, values).unwrap()
    }

    fn pseudo_image(h: usize, w: usize, seed: u64) -> ImagePlane {
        let mut s = seed;
        ImagePlane::from_fn(h, w, 3, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 40) as f32 / (1u64 << 24) as f32
        })
    }

    #[test]
    fn l1_examples() {
        let a = img(1, 2, 1, vec![0.5, 0.5]);
        let b = img(1, 2, 1, vec![0.25, 0.75]);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_loss(&a, &b).unwrap(), 0.25);
        assert_eq!(l1_loss(&b, &a).unwrap(), 0.25);
        assert!(l1_loss(&a, &img(2, 1, 1, vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn brightness_examples() {
        let q = img(1, 1, 1, vec![0.25]);
        assert!((brightness_loss(&q, &q, 0.5, 2.0).unwrap() - 0.4375).abs() < 1e-12);
        let one = img(1, 1, 1, vec![1.0]);
        assert_eq!(brightness_loss(&one, &one, 0.3, 2.7).unwrap(), 0.0);
        let neg = img(1, 1, 1, vec![-0.5]);
        assert!((brightness_loss(&q, &neg, 1.0, 1.5).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn smooth_examples() {
        let mut impulse = ImagePlane::filled(5, 5, 1, 0.0);
        impulse.set(2, 2, 0, 1.0);
        let zeros = ImagePlane::filled(5, 5, 1, 0.0);
        let g = Smoother::Gaussian {
            sigma: 1.5,
            radius: 2,
        };
        assert!((smooth_loss(&impulse, &zeros, &g).unwrap() - 1.0 / 25.0).abs() < 1e-7);

        let c = ImagePlane::filled(6, 7, 3, 0.3);
        let p = pseudo_image(6, 7, 1);
        for s in [Smoother::default(), Smoother::Median { radius: 1 }, Smoother::Resample] {
            let expected = l1_loss(&c, &p).unwrap();
            assert!((smooth_loss(&c, &p, &s).unwrap() - expected).abs() < 1e-7, "{s:?}");
            let fixed = s.apply(&p).unwrap();
            assert_eq!(smooth_loss(&p, &fixed, &s).unwrap(), 0.0);
        }
    }

    #[test]
    fn ssim_examples() {
        let w = LossWeights::default();
        let x = pseudo_image(16, 16, 3);
        assert!(ssim_loss(&x, &x, &w).unwrap().abs() < 1e-12);
        let half = ImagePlane::filled(11, 11, 3, 0.5);
        assert!(ssim_loss(&half, &half, &w).unwrap().abs() < 1e-12);
        let a = ImagePlane::filled(11, 11, 3, 0.2);
        let b = ImagePlane::filled(11, 11, 3, 0.8);
        let a32 = 0.2f32 as f64;
        let b32 = 0.8f32 as f64;
        let expected = 1.0 - (2.0 * a32 * b32 + 1e-4) / (a32 * a32 + b32 * b32 + 1e-4);
        assert!((ssim_loss(&a, &b, &w).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 0.5293).abs() < 1e-3);
        assert!(matches!(
            ssim_loss(&ImagePlane::filled(8, 8, 3, 0.1), &ImagePlane::filled(8, 8, 3, 0.1), &w),
            Err(Error::ImageTooSmall(_))
        ));
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        let c = ImagePlane::filled(12, 12, 3, 0.5);
        let v = total_loss(&c, &c, &w).unwrap();
        let brightness = 0.5f64.powf(0.85) - 0.5f64.powf(1.15);
        assert_eq!((v.l1, v.smooth), (0.0, 0.0));
        assert!(v.ssim.abs() < 1e-12);
        assert!((v.brightness - brightness).abs() < 1e-12);
        assert!((v.total - 0.5 * brightness).abs() < 1e-12);
        assert!((v.total - 0.05208).abs() < 1e-5);

        let ones = ImagePlane::filled(12, 12, 3, 1.0);
        assert_eq!(total_loss(&ones, &ones, &w).unwrap().total, 0.0);

        let zero = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            ..w
        };
        let (a, b) = (pseudo_image(12, 12, 4), pseudo_image(12, 12, 5));
        let v = total_loss(&a, &b, &zero).unwrap();
        assert_eq!(v.total, v.ssim);
    }

    #[test]
    fn loss_kind_parses() {
        for k in LossKind::ALL {
            assert_eq!(k.to_string().parse::<LossKind>().unwrap(), k);
        }
        assert!("huber".parse::<LossKind>().is_err());
    }

    #[test]
    fn weights_json_round_trip_and_validation() {
        let w = LossWeights::default();
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(serde_json::from_str::<LossWeights>(&json).unwrap(), w);
        assert!(LossWeights { lambda2: -1.0, ..w }.validate().is_err());
        assert!(LossWeights { gamma1: 0.0, ..w }.validate().is_err());
        assert!(LossWeights { ssim_window: 10, ..w }.validate().is_err());
        assert!(w.validate().is_ok());
        let median: LossWeights = serde_json::from_str(
            r#"{"lambda1":0.35,"lambda2":0.5,"lambda3":0.15,"gamma1":0.85,"gamma2":1.15,
                "smoother":{"kind":"median","radius":2}}"#,
        )
        .unwrap();
        assert_eq!(median.smoother, Smoother::Median { radius: 2 });
    }

    #[test]
    fn tape_losses_agree_with_plain_evaluation() {
        let w = LossWeights::default();
        let (g, p) = (pseudo_image(13, 14, 6), pseudo_image(13, 14, 7));
        let plain = total_loss(&g, &p, &w).unwrap();
        let targets = LossTargets::<f64>::new(&g, &w).unwrap();
        let mut tape = Tape::new();
        let yp = tape.input(plane_to_tensor(&p));
        let nodes = tape_loss(&mut tape, yp, &targets, &w, LossKind::Total).unwrap();
        let v = nodes.value(&tape, &w);
        for (a, b) in [
            (v.l1, plain.l1),
            (v.brightness, plain.brightness),
            (v.smooth, plain.smooth),
            (v.ssim, plain.ssim),
            (tape.scalar(nodes.objective), plain.total),
        ] {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    fn dihedral(img: &ImagePlane, k: usize) -> ImagePlane {
        match k {
            0..=3 => img.rotate90(k),
            4 => img.flip_horizontal(),
            _ => img.flip_vertical(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn components_nonnegative_and_weighted_sum_exact(seed in 0u64..1_000, s2 in 0u64..1_000) {
            let w = LossWeights::default();
            let (g, p) = (pseudo_image(12, 12, seed), pseudo_image(12, 12, s2 + 1_000));
            let v = total_loss(&g, &p, &w).unwrap();
            prop_assert!(v.l1 >= 0.0 && v.brightness >= 0.0 && v.smooth >= 0.0 && v.ssim >= 0.0);
            prop_assert!(v.ssim <= 2.0);
            let sum = 0.35 * v.l1 + 0.5 * v.brightness + 0.15 * v.smooth + v.ssim;
            prop_assert!((v.total - sum).abs() < 1e-9);
        }

        #[test]
        fn unit_gammas_collapse_to_l1(seed in 0u64..1_000) {
            let (g, p) = (pseudo_image(5, 9, seed), pseudo_image(5, 9, seed + 7));
            prop_assert_eq!(brightness_loss(&g, &p, 1.0, 1.0).unwrap(), l1_loss(&g, &p).unwrap());
        }

        #[test]
        fn dihedral_symmetries_preserve_losses(seed in 0u64..1_000, k in 0usize..6) {
            let w = LossWeights::default();
            let (g, p) = (pseudo_image(12, 12, seed), pseudo_image(12, 12, seed + 99));
            let a = total_loss(&g, &p, &w).unwrap();
            let b = total_loss(&dihedral(&g, k), &dihedral(&p, k), &w).unwrap();
            prop_assert!((a.l1 - b.l1).abs() < 1e-12);
            prop_assert!((a.brightness - b.brightness).abs() < 1e-12);
            prop_assert!((a.smooth - b.smooth).abs() < 1e-6);
            prop_assert!((a.ssim - b.ssim).abs() < 1e-9);
        }
    }
}
