use super::params::{init_params, Activation, NetConfig, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::haze::{self, AtmosphericMap, DEFAULT_C};
use crate::image::ImagePlane;

/// The atmospheric-component estimator: configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    config: NetConfig,
    params: ParamStore<T>,
}

/// A recorded forward pass: the tape, the input node and the `h` node.
#[derive(Debug)]
pub struct ForwardPass<T> {
    pub tape: Tape<T>,
    pub input: Var,
    pub h: Var,
}

impl<T: Real> Network<T> {
    /// Initializes parameters from `config.seed`.
    pub fn new(config: NetConfig) -> Result<Self> {
        let params = init_params(&config, config.seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: NetConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = init_params::<T>(&config, 0)?;
        if expected.names() != params.names()
            || (0..params.len()).any(|i| expected.value(i).shape() != params.value(i).shape())
        {
            return Err(Error::Checkpoint(
                "parameter layout does not match the network configuration".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_parts(self) -> (NetConfig, ParamStore<T>) {
        (self.config, self.params)
    }

    /// Appends the network to `tape`, reading parameters from the store.
    pub fn build(&self, tape: &mut Tape<T>, input: Var) -> Result<Var> {
        let vars: Vec<Var> = (0..self.params.len())
            .map(|i| tape.param(i, self.params.value(i).clone()))
            .collect();
        self.build_from(tape, input, &vars)
    }

    /// Like [`Network::build`] with caller-provided parameter nodes, one per
    /// store entry in store order.
    pub fn build_from(&self, tape: &mut Tape<T>, input: Var, params: &[Var]) -> Result<Var> {
        if params.len() != 2 * self.config.layers.len() {
            return Err(Error::shape(2 * self.config.layers.len(), params.len()));
        }
        let mut x = input;
        for (i, layer) in self.config.layers.iter().enumerate() {
            let (w, b) = (params[2 * i], params[2 * i + 1]);
            let conv = tape.conv3x3(x, w)?;
            let pre = tape.bias_add(conv, b)?;
            x = match layer.activation {
                Activation::Identity => pre,
                Activation::Relu => tape.relu(pre),
                Activation::ShiftedSoftplus => tape.shifted_softplus(pre),
            };
        }
        Ok(x)
    }

    /// Runs the estimator on a planar `[3, h, w]` tensor.
    pub fn forward_tensor(&self, inverted: Tensor<T>, track_input: bool) -> Result<ForwardPass<T>> {
        let (c, _, _) = inverted.chw()?;
        if c != 3 {
            return Err(Error::shape("3-channel input", format!("{c} channels")));
        }
        let mut tape = Tape::new();
        let input = if track_input {
            tape.input(inverted)
        } else {
            tape.constant(inverted)
        };
        let h = self.build(&mut tape, input)?;
        Ok(ForwardPass { tape, input, h })
    }

    /// Runs the estimator on an inverted image.
    pub fn forward(&self, inverted: &ImagePlane) -> Result<ForwardPass<T>> {
        self.forward_tensor(plane_to_tensor(inverted), false)
    }

    /// The atmospheric map predicted for an inverted image.
    pub fn predict_h(&self, inverted: &ImagePlane) -> Result<AtmosphericMap> {
        let pass = self.forward(inverted)?;
        let h = tensor_to_plane(pass.tape.value(pass.h))?;
        Ok(AtmosphericMap::new(h, DEFAULT_C))
    }

    /// Full pipeline on a low-light image: invert, estimate, recover,
    /// invert back, clamp.
    pub fn enhance(&self, low: &ImagePlane) -> Result<ImagePlane> {
        let map = self.predict_h(&crate::image::invert(low))?;
        haze::enhance(low, &map)
    }
}

/// Interleaved `H x W x C` plane to planar `[C, H, W]` tensor.
pub fn plane_to_tensor<T: Real>(img: &ImagePlane) -> Tensor<T> {
    let data = img.to_planar().into_iter().map(|v| T::from_f64(v as f64)).collect();
    Tensor::new(vec![img.channels(), img.height(), img.width()], data).expect("consistent shape")
}

pub fn tensor_to_plane<T: Real>(t: &Tensor<T>) -> Result<ImagePlane> {
    let (c, h, w) = t.chw()?;
    let planar: Vec<f32> = t.data().iter().map(|v| v.to_f64() as f32).collect();
    ImagePlane::from_planar(h, w, c, &planar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::params::LayerSpec;

    fn noise_image(h: usize, w: usize, seed: u32) -> ImagePlane {
        ImagePlane::from_fn(h, w, 3, |y, x, c| {
            let v = (y as u32 * 7919 + x as u32 * 104_729 + c as u32 * 15_485_863 + seed * 31)
                .wrapping_mul(2_654_435_761);
            (v >> 8) as f32 / (1u32 << 24) as f32
        })
    }

    #[test]
    fn output_matches_input_size() {
        let net = Network::<f32>::new(NetConfig::default()).unwrap();
        for (h, w) in [(8, 8), (9, 13), (16, 8)] {
            let map = net.predict_h(&noise_image(h, w, 1)).unwrap();
            assert_eq!((map.h.height(), map.h.width(), map.h.channels()), (h, w, 3));
            assert!(map.h.data().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn zero_weights_collapse_to_bias() {
        let mut net = Network::<f32>::new(NetConfig::default()).unwrap();
        let n = net.params().len();
        for i in 0..n {
            net.params_mut().value_mut(i).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let bias = net.params().index_of("conv5.bias").unwrap();
        net.params_mut().value_mut(bias).data_mut().iter_mut().for_each(|v| *v = 2.5);
        let map = net.predict_h(&noise_image(8, 8, 2)).unwrap();
        let expected = ((2.5 - super::super::tape::SOFTPLUS_SHIFT).exp().ln_1p()) as f32;
        assert!(map.h.data().iter().all(|&v| (v - expected).abs() < 1e-6));

        net.params_mut().value_mut(bias).data_mut().iter_mut().for_each(|v| *v = 1.0);
        let low = noise_image(8, 8, 3);
        let out = net.enhance(&low).unwrap();
        for (a, b) in out.data().iter().zip(low.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn positivity_survives_extreme_biases() {
        let mut net = Network::<f32>::new(NetConfig::default()).unwrap();
        let bias = net.params().index_of("conv5.bias").unwrap();
        net.params_mut().value_mut(bias).data_mut().iter_mut().for_each(|v| *v = -500.0);
        let map = net.predict_h(&noise_image(8, 8, 4)).unwrap();
        assert!(map.h.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let net = Network::<f32>::new(NetConfig::default()).unwrap();
        let gray = ImagePlane::filled(8, 8, 1, 0.5);
        assert!(net.forward(&gray).is_err());
    }

    #[test]
    fn fresh_networks_start_near_identity() {
        let img = noise_image(16, 16, 5);
        for seed in 0..100 {
            let net = Network::<f32>::new(NetConfig::default().with_seed(seed)).unwrap();
            let mean = net.predict_h(&img).unwrap().h.mean();
            assert!((mean - 1.0).abs() < 0.25, "seed {seed}: mean h {mean}");
        }
    }

    #[test]
    fn from_parts_checks_layout() {
        let net = Network::<f32>::new(NetConfig::default()).unwrap();
        let (cfg, params) = net.into_parts();
        assert!(Network::from_parts(cfg, params.clone()).is_ok());
        let other = NetConfig {
            layers: vec![LayerSpec {
                in_channels: 3,
                out_channels: 3,
                activation: Activation::Identity,
            }],
            seed: 0,
            final_gain: 1.0,
        };
        assert!(Network::from_parts(other, params).is_err());
    }
}
