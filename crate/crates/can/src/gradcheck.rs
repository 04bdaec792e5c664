//! Finite-difference gradient checking for whole models.
//!
//! The checker owns nothing about the model: it drives three callbacks — a
//! pure scalar evaluation, an analytic forward/backward pass, and parameter
//! access — and compares analytic gradients against central differences
//! element by element. Large parameters are probed at an evenly spaced subset
//! of elements to keep the cost bounded.

use crate::error::{Error, Result};

/// Result of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error over probed elements)`.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }

    /// One line per parameter, worst first.
    pub fn summary(&self) -> String {
        let mut rows = self.per_param.clone();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut s = String::new();
        for (name, err) in rows {
            s.push_str(&format!("{name:40} max_rel_err {err:.3e}\n"));
        }
        s.push_str(&format!(
            "overall {:.3e} (tolerance {:.1e}) -> {}\n",
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "pass" } else { "FAIL" }
        ));
        s
    }
}

/// Options for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Maximum relative error accepted.
    pub tolerance: f64,
    /// Upper bound on probed elements per parameter tensor; probes are
    /// evenly spaced across the buffer. `0` means every element.
    pub max_probes_per_param: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tolerance: 1e-4,
            max_probes_per_param: 0,
        }
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Checks the analytic gradients of a scalar-valued model.
///
/// * `eval` recomputes the scalar at the current parameter values without
///   side effects (use frozen batchnorm statistics).
/// * `analytic_grads` runs one forward/backward and returns, per parameter,
///   the flat gradient buffer in the same order `param_values`/`param_set`
///   address them.
/// * `param_names`, `param_len`, `param_get`, `param_set` expose the
///   parameter storage for perturbation.
#[allow(clippy::too_many_arguments)]
pub fn grad_check<M>(
    model: &mut M,
    eval: impl Fn(&mut M) -> Result<f64>,
    analytic_grads: impl Fn(&mut M) -> Result<Vec<(String, Vec<f64>)>>,
    param_get: impl Fn(&M, usize, usize) -> f64,
    param_set: impl Fn(&mut M, usize, usize, f64),
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let base = eval(model)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!(
            "gradient check target evaluated to {base}"
        )));
    }
    let grads = analytic_grads(model)?;

    let mut per_param = Vec::with_capacity(grads.len());
    let mut max_err: f64 = 0.0;
    for (pi, (name, grad)) in grads.iter().enumerate() {
        let len = grad.len();
        let probes: Vec<usize> = if opts.max_probes_per_param == 0 || len <= opts.max_probes_per_param
        {
            (0..len).collect()
        } else {
            // evenly spaced, deterministic
            (0..opts.max_probes_per_param)
                .map(|i| i * len / opts.max_probes_per_param)
                .collect()
        };
        let mut worst: f64 = 0.0;
        for &ei in &probes {
            let orig = param_get(model, pi, ei);
            param_set(model, pi, ei, orig + opts.h);
            let up = eval(model)?;
            param_set(model, pi, ei, orig - opts.h);
            let down = eval(model)?;
            param_set(model, pi, ei, orig);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite evaluation while probing '{name}'"
                )));
            }
            let numeric = (up - down) / (2.0 * opts.h);
            worst = worst.max(rel_err(grad[ei], numeric));
        }
        max_err = max_err.max(worst);
        per_param.push((name.clone(), worst));
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_err: max_err,
        tolerance: opts.tolerance,
    })
}

/// Convenience wrapper for a [`crate::graph::NetworkGraph`] under a
/// scalarizing loss closure.
///
/// `loss` maps the graph output to `(scalar, grad_wrt_output)`; it must be
/// deterministic. All forward passes run in frozen mode so batchnorm running
/// statistics stay untouched.
pub fn grad_check_graph(
    graph: &mut crate::graph::NetworkGraph,
    input: &crate::tensor::Tensor,
    loss: impl Fn(&crate::tensor::Tensor) -> Result<(f64, crate::tensor::Tensor)>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    use crate::graph::Mode;
    grad_check(
        graph,
        |g| {
            let (out, _) = g.forward(input, Mode::Frozen)?;
            Ok(loss(&out)?.0)
        },
        |g| {
            g.zero_grad();
            let (out, tape) = g.forward(input, Mode::Frozen)?;
            let (_, grad_out) = loss(&out)?;
            g.backward(&tape, &grad_out)?;
            Ok(g.params()
                .map(|p| (p.name.clone(), p.grad.data().to_vec()))
                .collect())
        },
        |g, pi, ei| {
            g.params()
                .nth(pi)
                .map(|p| p.value.data()[ei])
                .expect("parameter index in range")
        },
        |g, pi, ei, v| {
            let p = g.params_mut().nth(pi).expect("parameter index in range");
            p.value.data_mut()[ei] = v;
        },
        opts,
    )
}

/// The standard battery: every differentiable primitive plus both composite
/// adversarial losses, checked on reduced desk-scale networks.
pub mod battery {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::{grad_check, grad_check_graph, GradCheckOptions, GradCheckReport};
    use crate::error::Result;
    use crate::graph::{LayerSpec, Mode, NetworkGraph};
    use crate::losses::{
        can_d_loss, can_g_loss, grad_neg_log_mean, grad_neg_log_one_minus_mean,
        style_ambiguity_grad, style_ambiguity_term, StepSignals,
    };
    use crate::models::{
        build_discriminator, build_generator, Discriminator, DiscriminatorConfig, Generator,
        GeneratorConfig,
    };
    use crate::tensor::Tensor;

    /// One named check with the tolerance it must meet.
    pub struct BatteryItem {
        pub name: &'static str,
        pub report: GradCheckReport,
    }

    fn seeded(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn projection_loss(shape: &[usize], seed: u64) -> impl Fn(&Tensor) -> Result<(f64, Tensor)> {
        let proj = seeded(shape, seed);
        move |out: &Tensor| {
            let v = out
                .data()
                .iter()
                .zip(proj.data())
                .map(|(a, b)| a * b)
                .sum();
            Ok((v, proj.clone()))
        }
    }

    fn check_primitive(
        specs: Vec<LayerSpec>,
        input_shape: &[usize],
        out_shape: &[usize],
        tolerance: f64,
        seed: u64,
    ) -> Result<GradCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut graph = NetworkGraph::init(specs, "battery", &mut rng, 0.3)?;
        let input = seeded(input_shape, seed + 1);
        grad_check_graph(
            &mut graph,
            &input,
            projection_loss(out_shape, seed + 2),
            &GradCheckOptions {
                tolerance,
                ..GradCheckOptions::default()
            },
        )
    }

    fn desk_models(seed: u64) -> Result<(Generator, Discriminator)> {
        let gen_cfg = GeneratorConfig {
            noise_dim: 12,
            stage_channels: vec![32, 16],
            output_size: 16,
            ..GeneratorConfig::desk(32)
        };
        let disc_cfg = DiscriminatorConfig {
            input_size: 16,
            body_channels: vec![16, 32],
            head_hidden: vec![24],
            num_styles: 3,
            ..DiscriminatorConfig::default()
        };
        Ok((
            build_generator(&gen_cfg, seed)?,
            build_discriminator(&disc_cfg, seed + 1)?,
        ))
    }

    fn disc_param_grads(disc: &Discriminator) -> Vec<(String, Vec<f64>)> {
        disc.params()
            .map(|p| (p.name.clone(), p.grad.data().to_vec()))
            .collect()
    }

    /// Composite discriminator loss through the full two-headed network.
    fn check_d_loss(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
        let (_, mut disc) = desk_models(seed)?;
        let real = seeded(&[4, 3, 16, 16], seed + 10);
        let fake = seeded(&[4, 3, 16, 16], seed + 11);
        let labels = [0usize, 2, 1, 0];

        let eval = |d: &mut Discriminator| -> Result<f64> {
            let (out_real, _) = d.forward(&real, Mode::Frozen)?;
            let (out_fake, _) = d.forward(&fake, Mode::Frozen)?;
            let signals = StepSignals::from_head_outputs(
                &out_real.real,
                &out_real.posteriors,
                &labels,
                &out_fake.real,
                &out_fake.posteriors,
            )?;
            can_d_loss(&signals)
        };
        grad_check(
            &mut disc,
            eval,
            |d| {
                d.zero_grad();
                let (out_real, tape_real) = d.forward(&real, Mode::Frozen)?;
                let (out_fake, tape_fake) = d.forward(&fake, Mode::Frozen)?;
                let signals = StepSignals::from_head_outputs(
                    &out_real.real,
                    &out_real.posteriors,
                    &labels,
                    &out_fake.real,
                    &out_fake.posteriors,
                )?;
                let b = labels.len();
                let k = out_real.posteriors.shape()[1];
                let grad_r_real = Tensor::from_vec(&[b, 1], grad_neg_log_mean(&signals.s_d_r));
                let mut grad_post_real = Tensor::zeros(&[b, k]);
                for (i, (&label, &p_true)) in labels.iter().zip(&signals.s_d_c).enumerate() {
                    if p_true > crate::losses::LOG_FLOOR {
                        grad_post_real.data_mut()[i * k + label] = -1.0 / (b as f64 * p_true);
                    }
                }
                d.backward(&tape_real, &grad_r_real, &grad_post_real)?;
                let grad_r_fake =
                    Tensor::from_vec(&[b, 1], grad_neg_log_one_minus_mean(&signals.s_g_f));
                d.backward(&tape_fake, &grad_r_fake, &Tensor::zeros(&[b, k]))?;
                Ok(disc_param_grads(d))
            },
            |d, pi, ei| d.params().nth(pi).unwrap().value.data()[ei],
            |d, pi, ei, v| {
                d.params_mut().nth(pi).unwrap().value.data_mut()[ei] = v;
            },
            opts,
        )
    }

    /// Composite generator loss: ambiguity plus non-saturating real/fake
    /// term, backpropagated through the frozen discriminator into the
    /// generator.
    fn check_g_loss(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
        struct Pair {
            gen: Generator,
            disc: Discriminator,
        }
        let (gen, disc) = desk_models(seed)?;
        let mut pair = Pair { gen, disc };
        let z = seeded(&[4, 12], seed + 20);

        let loss_of = |pair: &mut Pair| -> Result<f64> {
            let (images, _) = pair.gen.forward(&z, Mode::Frozen)?;
            let (out, _) = pair.disc.forward(&images, Mode::Frozen)?;
            let s_g_c = style_ambiguity_term(&out.posteriors)?;
            let signals = StepSignals {
                s_d_r: vec![0.5],
                s_d_c: vec![0.5],
                s_g_f: out.real.clone(),
                s_g_c,
            };
            can_g_loss(&signals)
        };

        grad_check(
            &mut pair,
            loss_of,
            |p| {
                p.gen.net.zero_grad();
                p.disc.zero_grad();
                let (images, gen_tape) = p.gen.forward(&z, Mode::Frozen)?;
                let (out, disc_tape) = p.disc.forward(&images, Mode::Frozen)?;
                let b = out.real.len();
                let grad_r = Tensor::from_vec(&[b, 1], grad_neg_log_mean(&out.real));
                let grad_post = style_ambiguity_grad(&out.posteriors)?.scale(-1.0);
                let grad_images = p.disc.backward(&disc_tape, &grad_r, &grad_post)?;
                p.gen.backward(&gen_tape, &grad_images)?;
                Ok(p.gen
                    .net
                    .params()
                    .map(|q| (q.name.clone(), q.grad.data().to_vec()))
                    .collect())
            },
            |p, pi, ei| p.gen.net.params().nth(pi).unwrap().value.data()[ei],
            |p, pi, ei, v| {
                p.gen.net.params_mut().nth(pi).unwrap().value.data_mut()[ei] = v;
            },
            opts,
        )
    }

    /// Runs the whole battery. `max_probes` bounds the per-parameter probe
    /// count of the heavier composite checks (0 = exhaustive).
    pub fn run(seed: u64, max_probes: usize) -> Result<Vec<BatteryItem>> {
        let tight = 1e-6; // dense and activation primitives
        let loose = 1e-4; // convolution family and composites
        let mut items = Vec::new();

        items.push(BatteryItem {
            name: "dense",
            report: check_primitive(
                vec![LayerSpec::Dense {
                    in_features: 6,
                    out_features: 5,
                }],
                &[3, 6],
                &[3, 5],
                tight,
                seed,
            )?,
        });
        for (name, act) in [
            ("leaky_relu", LayerSpec::LeakyRelu { slope: 0.2 }),
            ("sigmoid", LayerSpec::Sigmoid),
            ("tanh", LayerSpec::Tanh),
            ("softmax", LayerSpec::Softmax),
        ] {
            items.push(BatteryItem {
                name,
                report: check_primitive(
                    vec![
                        LayerSpec::Dense {
                            in_features: 6,
                            out_features: 5,
                        },
                        act,
                    ],
                    &[3, 6],
                    &[3, 5],
                    tight,
                    seed + 1,
                )?,
            });
        }
        items.push(BatteryItem {
            name: "conv2d",
            report: check_primitive(
                vec![LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 4,
                    stride: 2,
                    pad: 1,
                }],
                &[2, 2, 8, 8],
                &[2, 3, 4, 4],
                loose,
                seed + 2,
            )?,
        });
        items.push(BatteryItem {
            name: "conv_transpose2d",
            report: check_primitive(
                vec![LayerSpec::ConvTranspose2d {
                    in_channels: 3,
                    out_channels: 2,
                    kernel: 4,
                    stride: 2,
                    pad: 1,
                }],
                &[2, 3, 4, 4],
                &[2, 2, 8, 8],
                loose,
                seed + 3,
            )?,
        });
        items.push(BatteryItem {
            name: "batchnorm2d",
            report: check_primitive(
                vec![
                    LayerSpec::Conv2d {
                        in_channels: 2,
                        out_channels: 3,
                        kernel: 3,
                        stride: 1,
                        pad: 1,
                    },
                    LayerSpec::BatchNorm2d {
                        channels: 3,
                        epsilon: 1e-5,
                        momentum: 0.1,
                    },
                ],
                &[4, 2, 5, 5],
                &[4, 3, 5, 5],
                loose,
                seed + 4,
            )?,
        });

        let composite_opts = GradCheckOptions {
            tolerance: loose,
            max_probes_per_param: max_probes,
            ..GradCheckOptions::default()
        };
        items.push(BatteryItem {
            name: "can_d_loss composite",
            report: check_d_loss(seed + 5, &composite_opts)?,
        });
        items.push(BatteryItem {
            name: "can_g_loss composite",
            report: check_g_loss(seed + 6, &composite_opts)?,
        });
        Ok(items)
    }
}
