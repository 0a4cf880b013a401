//! Image quality metrics: the no-reference score that gates the curriculum
//! and the full-reference PSNR/SSIM used for validation.

mod niqe;

pub use niqe::{
    fit_aggd, fit_niqe_model, mscn, niqe, niqe_features, AggdParams, MscnField, NiqeModel,
    DEFAULT_PATCH, FEATURE_DIM, FEATURES_PER_SCALE,
};

use serde::Serialize;

use crate::error::Result;
use crate::image::ImagePlane;
use crate::ssim::{mean_ssim, SsimConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IqaScore {
    pub metric: &'static str,
    pub value: f64,
    pub lower_is_better: bool,
}

impl IqaScore {
    /// `image,metric,value` row; infinite PSNR prints as `inf`.
    pub fn csv_row(&self, image: &str) -> String {
        format!("{image},{},{}", self.metric, format_value(self.value))
    }
}

pub const CSV_HEADER: &str = "image,metric,value";

pub fn format_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

pub fn niqe_score(img: &ImagePlane, model: &NiqeModel) -> Result<IqaScore> {
    Ok(IqaScore {
        metric: "niqe",
        value: niqe(img, model)?,
        lower_is_better: true,
    })
}

/// `10 log10(1 / MSE)` for unit-range images; `+inf` when identical.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<IqaScore> {
    a.ensure_same_shape(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    let value = if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    };
    Ok(IqaScore {
        metric: "psnr",
        value,
        lower_is_better: false,
    })
}

/// Mean SSIM with the default window over all channels.
pub fn ssim_metric(a: &ImagePlane, b: &ImagePlane) -> Result<IqaScore> {
    ssim_metric_with(a, b, &SsimConfig::default())
}

pub fn ssim_metric_with(a: &ImagePlane, b: &ImagePlane, cfg: &SsimConfig) -> Result<IqaScore> {
    a.ensure_same_shape(b)?;
    let wide = |img: &ImagePlane| -> Vec<f64> { img.to_planar().into_iter().map(f64::from).collect() };
    let value = mean_ssim(&wide(a), &wide(b), a.channels(), a.height(), a.width(), cfg)?;
    Ok(IqaScore {
        metric: "ssim",
        value,
        lower_is_better: false,
    })
}
