//! Central-difference verification of the tape's analytic gradients.
//!
//! Analytic gradients are taken in the precision under test; the central
//! differences they are compared with are evaluated in `f64` on the same
//! (exactly widened) values, so the oracle's own rounding noise stays far
//! below the tolerance. Errors are normwise per tensor:
//! `max |a - n| / max(max |a|, max |n|)` over the checked elements, where
//! the element with the largest analytic magnitude is always checked.
//! Evaluations whose ReLU/abs branch pattern differs from the unperturbed
//! point are skipped rather than compared.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{plane_to_tensor, Network};
use super::params::NetConfig;
use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::haze::DEFAULT_C;
use crate::image::ImagePlane;
use crate::losses::{tape_loss, LossKind, LossTargets, LossWeights};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::Single => 1e-3,
            Precision::Double => 1e-6,
        }
    }

    pub fn default_step(self) -> f64 {
        match self {
            Precision::Single => 1e-3,
            Precision::Double => 1e-6,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            _ => Err(Error::InvalidArgument(format!("unknown precision `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    /// Finite-difference step; the precision's default when `None`.
    pub step: Option<f64>,
    /// Elements checked per tensor and trial (the largest is always among them).
    pub samples_per_tensor: usize,
    pub image_size: usize,
    /// SSIM window; the largest odd size up to 11 that fits when `None`.
    pub ssim_window: Option<usize>,
    pub seed: u64,
    /// Negative control: tamper with one analytic gradient entry.
    pub corrupt: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: None,
            samples_per_tensor: 12,
            image_size: 8,
            ssim_window: None,
            seed: 0,
            corrupt: false,
        }
    }
}

impl CheckOptions {
    fn window(&self) -> usize {
        self.ssim_window.unwrap_or_else(|| {
            let fit = self.image_size.min(11);
            if fit % 2 == 0 {
                fit - 1
            } else {
                fit
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_abs_error: f64,
    pub scale: f64,
    pub rel_error: f64,
}

impl TensorCheck {
    fn merge(&mut self, other: &TensorCheck) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.rel_error > self.rel_error {
            self.rel_error = other.rel_error;
            self.max_abs_error = other.max_abs_error;
            self.scale = other.scale;
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub precision: Precision,
    pub loss: LossKind,
    pub tolerance: f64,
    pub step: f64,
    pub trials: usize,
    /// Worst trial per tensor.
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    /// Every tensor had at least one usable sample and stayed in tolerance.
    pub fn passed(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.checked > 0 && t.rel_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |t| t.rel_error)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tensor,checked,skipped,max_abs_error,scale,rel_error\n");
        for t in &self.tensors {
            out.push_str(&format!(
                "{},{},{},{:e},{:e},{:e}\n",
                t.name, t.checked, t.skipped, t.max_abs_error, t.scale, t.rel_error
            ));
        }
        out
    }
}

fn merge_into(acc: &mut Vec<TensorCheck>, trial: Vec<TensorCheck>) {
    for t in trial {
        match acc.iter_mut().find(|a| a.name == t.name) {
            Some(a) => a.merge(&t),
            None => acc.push(t),
        }
    }
}

fn evaluate(
    leaves: &[(String, Tensor<f64>)],
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<(f64, u64)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|(_, t)| tape.input(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    Ok((tape.scalar(root), tape.kink_signature()))
}

/// Compares the tape gradient of the scalar built by `build` against central
/// differences of `reference`, the same function recorded in `f64`, for
/// every leaf tensor.
pub fn check_gradients<T: Real>(
    leaves: &[(String, Tensor<T>)],
    build: &dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
    reference: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    step: f64,
    samples_per_tensor: usize,
    rng: &mut ChaCha8Rng,
    corrupt: bool,
) -> Result<Vec<TensorCheck>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|(_, t)| tape.input(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    let grads = tape.backward(root, 1.0)?;
    let mut analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(leaves)
        .map(|(v, (_, t))| match grads.wrt(*v) {
            Some(g) => g.iter().map(|x| x.to_f64()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();

    let argmax = |g: &[f64]| {
        g.iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map_or(0, |(i, _)| i)
    };
    if corrupt {
        if let Some(g) = analytic.first_mut().filter(|g| !g.is_empty()) {
            let i = argmax(g);
            let bump = g[i].abs().max(1e-2);
            g[i] += bump;
        }
    }

    let wide: Vec<(String, Tensor<f64>)> = leaves
        .iter()
        .map(|(n, t)| {
            let data = t.data().iter().map(|v| v.to_f64()).collect();
            Ok((n.clone(), Tensor::new(t.shape().to_vec(), data)?))
        })
        .collect::<Result<_>>()?;
    let (_, signature) = evaluate(&wide, reference)?;

    let mut out = Vec::with_capacity(leaves.len());
    for (li, (name, tensor)) in wide.iter().enumerate() {
        let a = &analytic[li];
        let n = tensor.len();
        let top = argmax(a);
        let mut picks = vec![top];
        if n > 1 {
            let k = samples_per_tensor.min(n).saturating_sub(1);
            picks.extend(sample(rng, n, k).into_iter().filter(|&i| i != top).take(k));
        }
        let (mut checked, mut skipped) = (0, 0);
        let (mut max_err, mut scale) = (0.0f64, 0.0f64);
        let mut perturbed = wide.clone();
        for &i in &picks {
            let x = tensor.data()[i];
            let (plus, minus) = (x + step, x - step);
            perturbed[li].1.data_mut()[i] = plus;
            let (fp, sp) = evaluate(&perturbed, reference)?;
            perturbed[li].1.data_mut()[i] = minus;
            let (fm, sm) = evaluate(&perturbed, reference)?;
            perturbed[li].1.data_mut()[i] = x;
            if sp != signature || sm != signature {
                skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (plus - minus);
            max_err = max_err.max((a[i] - numeric).abs());
            scale = scale.max(a[i].abs()).max(numeric.abs());
            checked += 1;
        }
        let rel_error = if max_err == 0.0 {
            0.0
        } else {
            max_err / scale.max(1e-12)
        };
        out.push(TensorCheck {
            name: name.clone(),
            checked,
            skipped,
            max_abs_error: max_err,
            scale,
            rel_error,
        });
    }
    Ok(out)
}

/// A random gradient-check instance: a low-light image and its label.
pub fn random_instance(size: usize, rng: &mut ChaCha8Rng) -> (ImagePlane, ImagePlane) {
    let low = ImagePlane::from_fn(size, size, 3, |_, _, _| rng.gen_range(0.05..0.95));
    let target = ImagePlane::from_fn(size, size, 3, |_, _, _| rng.gen_range(0.05..0.95));
    (low, target)
}

/// Records `y_p = 1 - (h (I' - 1) + c)` for the network output `h`.
pub fn tape_prediction<T: Real>(tape: &mut Tape<T>, h: Var, inverted: &ImagePlane, c: f64) -> Result<Var> {
    let shifted = plane_to_tensor::<T>(&inverted.map(|v| v - 1.0));
    let s = tape.constant(shifted);
    let hs = tape.mul(h, s)?;
    let b = tape.affine(hs, 1.0, c);
    Ok(tape.affine(b, -1.0, 1.0))
}

/// Everything one trial needs, in one element type.
struct Case<U> {
    targets: LossTargets<U>,
    net: Network<U>,
    input: Tensor<U>,
}

impl<U: Real> Case<U> {
    fn new(net: &Network<f32>, inverted: &ImagePlane, target: &ImagePlane, weights: &LossWeights) -> Result<Self> {
        Ok(Self {
            targets: LossTargets::new(target, weights)?,
            net: Network::from_parts(net.config().clone(), net.params().cast())?,
            input: plane_to_tensor(inverted),
        })
    }

    fn loss_only(&self, tape: &mut Tape<U>, vars: &[Var], weights: &LossWeights, loss: LossKind) -> Result<Var> {
        Ok(tape_loss(tape, vars[0], &self.targets, weights, loss)?.objective)
    }

    fn pipeline(
        &self,
        tape: &mut Tape<U>,
        vars: &[Var],
        inverted: &ImagePlane,
        weights: &LossWeights,
        loss: LossKind,
    ) -> Result<Var> {
        let x = tape.constant(self.input.clone());
        let h = self.net.build_from(tape, x, vars)?;
        let yp = tape_prediction(tape, h, inverted, DEFAULT_C)?;
        Ok(tape_loss(tape, yp, &self.targets, weights, loss)?.objective)
    }
}

fn check_trial<T: Real>(
    config: &NetConfig,
    loss: LossKind,
    weights: &LossWeights,
    opts: &CheckOptions,
    step: f64,
    trial: usize,
) -> Result<Vec<TensorCheck>> {
    let mut rng = seeds::rng(opts.seed, "gradcheck", trial as u64);
    let (low, target) = random_instance(opts.image_size, &mut rng);
    let inverted = crate::image::invert(&low);
    let init = seeds::derive(opts.seed, seeds::INIT, trial as u64);
    let net = Network::<f32>::new(config.clone().with_seed(init))?;
    let narrow = Case::<T>::new(&net, &inverted, &target, weights)?;
    let wide = Case::<f64>::new(&net, &inverted, &target, weights)?;

    // Loss alone, differentiated with respect to the prediction.
    let prediction = ImagePlane::from_fn(opts.image_size, opts.image_size, 3, |_, _, _| {
        rng.gen_range(0.05..1.2)
    });
    let leaves = vec![("y_p".to_string(), plane_to_tensor::<T>(&prediction))];
    let mut checks = check_gradients(
        &leaves,
        &|tape, vars| narrow.loss_only(tape, vars, weights, loss),
        &|tape, vars| wide.loss_only(tape, vars, weights, loss),
        step,
        prediction.len(),
        &mut rng,
        opts.corrupt,
    )?;

    // Full pipeline, differentiated with respect to every parameter.
    let params = narrow.net.params();
    let leaves: Vec<(String, Tensor<T>)> = (0..params.len())
        .map(|i| (params.name(i).to_string(), params.value(i).clone()))
        .collect();
    checks.extend(check_gradients(
        &leaves,
        &|tape, vars| narrow.pipeline(tape, vars, &inverted, weights, loss),
        &|tape, vars| wide.pipeline(tape, vars, &inverted, weights, loss),
        step,
        opts.samples_per_tensor,
        &mut rng,
        opts.corrupt,
    )?);
    Ok(checks)
}

/// Checks the network and loss gradients on `trials` random instances.
pub fn grad_check(
    config: &NetConfig,
    loss: LossKind,
    trials: usize,
    precision: Precision,
    opts: &CheckOptions,
) -> Result<GradCheckReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    config.validate()?;
    let weights = LossWeights {
        ssim_window: opts.window(),
        ..LossWeights::default()
    };
    let step = opts.step.unwrap_or(precision.default_step());
    let mut tensors = Vec::new();
    for trial in 0..trials {
        let checks = match precision {
            Precision::Single => check_trial::<f32>(config, loss, &weights, opts, step, trial)?,
            Precision::Double => check_trial::<f64>(config, loss, &weights, opts, step, trial)?,
        };
        merge_into(&mut tensors, checks);
    }
    Ok(GradCheckReport {
        precision,
        loss,
        tolerance: precision.tolerance(),
        step,
        trials,
        tensors,
    })
}
