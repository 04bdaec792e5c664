//! Ordered layer stacks with forward and backward evaluation.
//!
//! A [`NetworkGraph`] owns its [`Parameter`]s and mutable batchnorm running
//! statistics. Forward passes return the output together with a [`Tape`] of
//! saved activations; backward consumes that tape, so a backward can only
//! ever follow a forward on the same input. Backward accumulates parameter
//! gradients and returns the gradient with respect to the graph input.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernel;
use crate::optim::Parameter;
use crate::tensor::Tensor;

/// Forward evaluation mode.
///
/// `Train` uses batch statistics in batchnorm and folds them into the running
/// averages. `Frozen` uses batch statistics without touching the running
/// averages (pure evaluation, e.g. under a gradient checker). `Infer` uses
/// the running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Frozen,
    Infer,
}

/// One layer kind with its hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm2d {
        channels: usize,
        epsilon: f64,
        momentum: f64,
    },
    LeakyRelu {
        slope: f64,
    },
    Sigmoid,
    Tanh,
    Softmax,
    /// Per-sample reshape; the batch axis is preserved.
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if *in_features == 0 || *out_features == 0 {
                    return Err(Error::InvalidArgument("dense features must be >= 1".into()));
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            }
            | LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if *in_channels == 0 || *out_channels == 0 {
                    return Err(Error::InvalidArgument("channel counts must be >= 1".into()));
                }
                if *kernel < 1 {
                    return Err(Error::InvalidArgument("kernel extents must be >= 1".into()));
                }
                if *stride < 1 {
                    return Err(Error::InvalidArgument("stride must be >= 1".into()));
                }
            }
            LayerSpec::BatchNorm2d {
                channels,
                epsilon,
                momentum,
            } => {
                if *channels == 0 {
                    return Err(Error::InvalidArgument("batchnorm needs channels".into()));
                }
                if *epsilon <= 0.0 || !(0.0..=1.0).contains(momentum) {
                    return Err(Error::InvalidArgument(
                        "batchnorm epsilon must be positive and momentum in [0, 1]".into(),
                    ));
                }
            }
            LayerSpec::LeakyRelu { slope } => {
                if !(*slope > 0.0 && *slope < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "leaky slope must lie in (0, 1), got {slope}"
                    )));
                }
            }
            LayerSpec::Sigmoid | LayerSpec::Tanh | LayerSpec::Softmax => {}
            LayerSpec::Reshape { shape } => {
                if shape.iter().any(|&d| d == 0) {
                    return Err(Error::InvalidArgument("reshape extents must be >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Batchnorm running statistics, mutated by train-mode forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// A [`LayerSpec`] bound to its parameters and state.
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Parameter>,
    pub running: Option<RunningStats>,
}

impl Layer {
    /// Binds parameters for `spec`, drawing weights from `N(0, init_std^2)`
    /// out of the given stream. Biases start at zero, batchnorm scales at
    /// one.
    pub fn init(
        spec: LayerSpec,
        name: &str,
        rng: &mut ChaCha8Rng,
        init_std: f64,
    ) -> Result<Layer> {
        spec.validate()?;
        let normal = Normal::new(0.0, init_std)
            .map_err(|e| Error::InvalidArgument(format!("bad init std: {e}")))?;
        let mut draw = |shape: &[usize]| Tensor::from_fn(shape, |_| normal.sample(rng));
        let (params, running) = match &spec {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => (
                vec![
                    Parameter::new(format!("{name}.weight"), draw(&[*in_features, *out_features])),
                    Parameter::new(format!("{name}.bias"), Tensor::zeros(&[*out_features])),
                ],
                None,
            ),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                vec![
                    Parameter::new(
                        format!("{name}.weight"),
                        draw(&[*out_channels, *in_channels, *kernel, *kernel]),
                    ),
                    Parameter::new(format!("{name}.bias"), Tensor::zeros(&[*out_channels])),
                ],
                None,
            ),
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                vec![
                    Parameter::new(
                        format!("{name}.weight"),
                        draw(&[*in_channels, *out_channels, *kernel, *kernel]),
                    ),
                    Parameter::new(format!("{name}.bias"), Tensor::zeros(&[*out_channels])),
                ],
                None,
            ),
            LayerSpec::BatchNorm2d { channels, .. } => (
                vec![
                    Parameter::new(format!("{name}.gamma"), Tensor::full(&[*channels], 1.0)),
                    Parameter::new(format!("{name}.beta"), Tensor::zeros(&[*channels])),
                ],
                Some(RunningStats {
                    mean: vec![0.0; *channels],
                    var: vec![1.0; *channels],
                }),
            ),
            _ => (Vec::new(), None),
        };
        Ok(Layer {
            spec,
            params,
            running,
        })
    }
}

/// Saved activations of one layer's forward pass.
#[derive(Debug)]
enum LayerTape {
    Dense { input: Tensor },
    Conv2d { input: Tensor },
    ConvTranspose2d { input: Tensor },
    BatchNorm { saved: kernel::BatchNormSaved },
    BatchNormInfer,
    LeakyRelu { input: Tensor },
    Sigmoid { output: Tensor },
    Tanh { output: Tensor },
    Softmax { output: Tensor },
    Reshape { input_shape: Vec<usize> },
}

/// Activation record of one forward pass; consumed by `backward`.
#[derive(Debug)]
pub struct Tape {
    entries: Vec<LayerTape>,
    output_shape: Vec<usize>,
}

/// Ordered layer stack.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    pub layers: Vec<Layer>,
}

impl NetworkGraph {
    pub fn new(layers: Vec<Layer>) -> NetworkGraph {
        NetworkGraph { layers }
    }

    /// Builds and binds a whole stack in one go.
    pub fn init(
        specs: Vec<LayerSpec>,
        name: &str,
        rng: &mut ChaCha8Rng,
        init_std: f64,
    ) -> Result<NetworkGraph> {
        let layers = specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| Layer::init(spec, &format!("{name}.{i}"), rng, init_std))
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkGraph::new(layers))
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        let mut x = input.clone();
        let mut entries = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, entry) = forward_layer(layer, &x, mode)?;
            entries.push(entry);
            x = y;
        }
        let output_shape = x.shape().to_vec();
        Ok((
            x,
            Tape {
                entries,
                output_shape,
            },
        ))
    }

    /// Backpropagates `grad_out` through the tape, accumulating parameter
    /// gradients, and returns the gradient with respect to the input.
    pub fn backward(&mut self, tape: &Tape, grad_out: &Tensor) -> Result<Tensor> {
        if tape.entries.len() != self.layers.len() {
            return Err(Error::shape(
                "backward",
                "tape does not belong to this graph",
            ));
        }
        if grad_out.shape() != tape.output_shape {
            return Err(Error::shape(
                "backward",
                format!(
                    "grad_out shape {:?} does not match forward output {:?}",
                    grad_out.shape(),
                    tape.output_shape
                ),
            ));
        }
        let mut g = grad_out.clone();
        for (layer, entry) in self.layers.iter_mut().zip(&tape.entries).rev() {
            g = backward_layer(layer, entry, &g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }
}

fn forward_layer(layer: &mut Layer, x: &Tensor, mode: Mode) -> Result<(Tensor, LayerTape)> {
    match &layer.spec {
        LayerSpec::Dense { .. } => {
            let y = kernel::dense(x, &layer.params[0].value, &layer.params[1].value)?;
            Ok((y, LayerTape::Dense { input: x.clone() }))
        }
        LayerSpec::Conv2d { stride, pad, .. } => {
            let y = kernel::conv2d(
                x,
                &layer.params[0].value,
                &layer.params[1].value,
                *stride,
                *pad,
            )?;
            Ok((y, LayerTape::Conv2d { input: x.clone() }))
        }
        LayerSpec::ConvTranspose2d { stride, pad, .. } => {
            let y = kernel::conv_transpose2d(
                x,
                &layer.params[0].value,
                &layer.params[1].value,
                *stride,
                *pad,
            )?;
            Ok((y, LayerTape::ConvTranspose2d { input: x.clone() }))
        }
        LayerSpec::BatchNorm2d {
            epsilon, momentum, ..
        } => {
            let gamma = &layer.params[0].value;
            let beta = &layer.params[1].value;
            match mode {
                Mode::Train | Mode::Frozen => {
                    let (y, saved, stats) = kernel::batchnorm2d_train(x, gamma, beta, *epsilon)?;
                    if mode == Mode::Train {
                        let running = layer.running.as_mut().expect("batchnorm has running stats");
                        kernel::update_running_stats(
                            &mut running.mean,
                            &mut running.var,
                            &stats,
                            *momentum,
                        );
                    }
                    Ok((y, LayerTape::BatchNorm { saved }))
                }
                Mode::Infer => {
                    let running = layer.running.as_ref().expect("batchnorm has running stats");
                    let y = kernel::batchnorm2d_infer(
                        x,
                        gamma,
                        beta,
                        &running.mean,
                        &running.var,
                        *epsilon,
                    )?;
                    Ok((y, LayerTape::BatchNormInfer))
                }
            }
        }
        LayerSpec::LeakyRelu { slope } => {
            let y = kernel::leaky_relu(x, *slope)?;
            Ok((y, LayerTape::LeakyRelu { input: x.clone() }))
        }
        LayerSpec::Sigmoid => {
            let y = kernel::sigmoid(x);
            Ok((y.clone(), LayerTape::Sigmoid { output: y }))
        }
        LayerSpec::Tanh => {
            let y = kernel::tanh(x);
            Ok((y.clone(), LayerTape::Tanh { output: y }))
        }
        LayerSpec::Softmax => {
            let y = kernel::softmax(x)?;
            Ok((y.clone(), LayerTape::Softmax { output: y }))
        }
        LayerSpec::Reshape { shape } => {
            if x.shape().is_empty() {
                return Err(Error::shape("reshape", "input has no batch axis"));
            }
            let n = x.shape()[0];
            let mut target = Vec::with_capacity(shape.len() + 1);
            target.push(n);
            target.extend_from_slice(shape);
            let y = x.reshape(&target)?;
            Ok((
                y,
                LayerTape::Reshape {
                    input_shape: x.shape().to_vec(),
                },
            ))
        }
    }
}

fn backward_layer(layer: &mut Layer, entry: &LayerTape, g: &Tensor) -> Result<Tensor> {
    match (&layer.spec, entry) {
        (LayerSpec::Dense { .. }, LayerTape::Dense { input }) => {
            let (gi, gw, gb) = kernel::dense_backward(g, input, &layer.params[0].value)?;
            layer.params[0].accumulate(&gw)?;
            layer.params[1].accumulate(&gb)?;
            Ok(gi)
        }
        (LayerSpec::Conv2d { stride, pad, .. }, LayerTape::Conv2d { input }) => {
            let (gi, gw, gb) =
                kernel::conv2d_backward(g, input, &layer.params[0].value, *stride, *pad)?;
            layer.params[0].accumulate(&gw)?;
            layer.params[1].accumulate(&gb)?;
            Ok(gi)
        }
        (LayerSpec::ConvTranspose2d { stride, pad, .. }, LayerTape::ConvTranspose2d { input }) => {
            let (gi, gw, gb) =
                kernel::conv_transpose2d_backward(g, input, &layer.params[0].value, *stride, *pad)?;
            layer.params[0].accumulate(&gw)?;
            layer.params[1].accumulate(&gb)?;
            Ok(gi)
        }
        (LayerSpec::BatchNorm2d { .. }, LayerTape::BatchNorm { saved }) => {
            let (gi, gg, gb) = kernel::batchnorm2d_backward(g, saved, &layer.params[0].value)?;
            layer.params[0].accumulate(&gg)?;
            layer.params[1].accumulate(&gb)?;
            Ok(gi)
        }
        (LayerSpec::BatchNorm2d { .. }, LayerTape::BatchNormInfer) => Err(Error::InvalidArgument(
            "backward through inference-mode batchnorm is not supported".into(),
        )),
        (LayerSpec::LeakyRelu { slope }, LayerTape::LeakyRelu { input }) => {
            kernel::leaky_relu_backward(g, input, *slope)
        }
        (LayerSpec::Sigmoid, LayerTape::Sigmoid { output }) => kernel::sigmoid_backward(g, output),
        (LayerSpec::Tanh, LayerTape::Tanh { output }) => kernel::tanh_backward(g, output),
        (LayerSpec::Softmax, LayerTape::Softmax { output }) => kernel::softmax_backward(g, output),
        (LayerSpec::Reshape { .. }, LayerTape::Reshape { input_shape }) => g.reshape(input_shape),
        _ => Err(Error::shape("backward", "tape does not match layer kinds")),
    }
}
