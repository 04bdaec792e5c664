//! The alternating adversarial training loop.
//!
//! Each step executes, in order: draw one noise batch, generate fakes, score
//! real and fake batches, one Adam step on the discriminator, a fresh
//! discriminator pass over the same fakes against the updated weights, one
//! Adam step on the generator. The discriminator never sees the ambiguity
//! term; the generator never sees style labels.
//!
//! Everything is driven by named substreams of the run seed, so a
//! `(config, corpus)` pair fully determines every step log bit-exactly,
//! regardless of available parallelism.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{derive_seed, minibatches, tile_grid, BatchPlan, StyleDataset};
use crate::error::{Error, Result};
use crate::graph::Mode;
use crate::losses::{
    can_d_loss, can_g_loss, gan_d_loss, gan_g_loss, grad_neg_log_mean,
    grad_neg_log_one_minus_mean, posterior_entropy, style_ambiguity_grad, StepSignals, Variant,
    LOG_FLOOR,
};
use crate::models::{
    build_discriminator, build_generator, sample_noise, Discriminator, DiscriminatorConfig,
    Generator, GeneratorConfig,
};
use crate::optim::{adam_step, AdamConfig};
use crate::tensor::Tensor;

/// Substream tags of the run seed.
pub(crate) mod stream {
    pub const GEN_INIT: u64 = 1;
    pub const DISC_INIT: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const PANEL: u64 = 4;
    pub const BATCHES: u64 = 5;
}

/// Where training images come from.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DataSource {
    /// `root/<style>/<images>` corpus on disk.
    Directory(PathBuf),
    /// Procedural corpus built in memory.
    Synth {
        styles: usize,
        per_style: usize,
        size: usize,
        seed: u64,
    },
}

/// Full training recipe. The defaults are the published ones: learning rate
/// 0.0001, batch 128, 100 epochs, noise dimension 100, weight init
/// `N(0, 0.02^2)`, LeakyReLU slope 0.2.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Log every n-th step (1 = every step).
    pub log_every: usize,
    /// Save a checkpoint and a sample grid every n-th step; 0 = final only.
    pub checkpoint_every: usize,
    /// Apply five-crop augmentation when ingesting a directory corpus.
    pub augment: bool,
    /// Images in the fixed evaluation noise panel used for sample grids.
    pub sample_panel: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub data: DataSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Can,
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 100,
            seed: 0,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            log_every: 1,
            checkpoint_every: 0,
            augment: true,
            sample_panel: 64,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            data: DataSource::Directory(PathBuf::from("data")),
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: 32x32 images, batch 64, 30 epochs, a K=4 synthetic
    /// corpus of 2000 images.
    pub fn desk(variant: Variant, seed: u64) -> TrainConfig {
        TrainConfig {
            variant,
            batch_size: 64,
            epochs: 30,
            seed,
            generator: GeneratorConfig::desk(32),
            discriminator: DiscriminatorConfig {
                head_hidden: vec![256, 128],
                ..DiscriminatorConfig::desk(32, 4)
            },
            data: DataSource::Synth {
                styles: 4,
                per_style: 500,
                size: 32,
                seed,
            },
            ..TrainConfig::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be >= 2".into()));
        }
        if self.sample_panel < 1 {
            return Err(Error::InvalidArgument("sample panel must be >= 1".into()));
        }
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.output_size != self.discriminator.input_size
            || self.generator.output_channels != self.discriminator.input_channels
        {
            return Err(Error::InvalidArgument(format!(
                "generator emits {}x{} x{}ch, discriminator expects {}x{} x{}ch",
                self.generator.output_size,
                self.generator.output_size,
                self.generator.output_channels,
                self.discriminator.input_size,
                self.discriminator.input_size,
                self.discriminator.input_channels,
            )));
        }
        Ok(())
    }
}

/// Loads the corpus a config points at and checks it against the model
/// geometry.
pub fn load_dataset(config: &TrainConfig) -> Result<StyleDataset> {
    let ds = match &config.data {
        DataSource::Directory(root) => crate::data::ingest_directory(
            root,
            config.discriminator.input_size,
            config.augment,
        )?,
        DataSource::Synth {
            styles,
            per_style,
            size,
            seed,
        } => crate::data::synth_style_corpus(*styles, *per_style, *size, *seed)?,
    };
    if ds.image_size() != config.discriminator.input_size {
        return Err(Error::Data(format!(
            "corpus images are {}px, discriminator expects {}px",
            ds.image_size(),
            config.discriminator.input_size
        )));
    }
    if ds.num_styles() != config.discriminator.num_styles {
        return Err(Error::Data(format!(
            "corpus has {} styles, discriminator head expects {}",
            ds.num_styles(),
            config.discriminator.num_styles
        )));
    }
    if config.batch_size > ds.len() {
        return Err(Error::Data(format!(
            "batch size {} exceeds corpus size {}",
            config.batch_size,
            ds.len()
        )));
    }
    Ok(ds)
}

/// Scalars recorded per logged step. `wall_ms` is the only timestamp field
/// and is excluded from determinism comparisons.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: u64,
    pub l_d: f64,
    pub l_g: f64,
    pub mean_s_d_r: f64,
    pub mean_s_g_f: f64,
    pub mean_fake_entropy: f64,
    pub wall_ms: u64,
}

impl StepLog {
    /// Bit-exact equality of everything except the wall clock.
    pub fn same_signals(&self, other: &StepLog) -> bool {
        self.step == other.step
            && self.epoch == other.epoch
            && self.l_d.to_bits() == other.l_d.to_bits()
            && self.l_g.to_bits() == other.l_g.to_bits()
            && self.mean_s_d_r.to_bits() == other.mean_s_d_r.to_bits()
            && self.mean_s_g_f.to_bits() == other.mean_s_g_f.to_bits()
            && self.mean_fake_entropy.to_bits() == other.mean_fake_entropy.to_bits()
    }
}

/// Live training state: both networks, the noise stream and the counters.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub gen: Generator,
    pub disc: Discriminator,
    pub noise_rng: ChaCha8Rng,
    pub epoch: u64,
    pub global_step: u64,
    pub corpus_fingerprint: [u8; 32],
}

impl TrainState {
    pub fn new(config: TrainConfig, corpus_fingerprint: [u8; 32]) -> Result<TrainState> {
        config.validate()?;
        let gen = build_generator(&config.generator, derive_seed(config.seed, stream::GEN_INIT))?;
        let disc = build_discriminator(
            &config.discriminator,
            derive_seed(config.seed, stream::DISC_INIT),
        )?;
        let noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::NOISE));
        Ok(TrainState {
            config,
            gen,
            disc,
            noise_rng,
            epoch: 0,
            global_step: 0,
            corpus_fingerprint,
        })
    }

    /// The fixed noise panel used for sample grids, drawn from its own
    /// substream so it is identical at every checkpoint of a run.
    pub fn noise_panel(&self) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, stream::PANEL));
        sample_noise(self.config.sample_panel, self.config.generator.noise_dim, &mut rng)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn wall_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// One alternating update: exactly one discriminator step and one generator
/// step. Aborts with the offending scalars if a loss goes non-finite.
pub fn train_step(
    state: &mut TrainState,
    real_images: &Tensor,
    real_labels: &[usize],
) -> Result<StepLog> {
    let variant = state.config.variant;
    let adam = state.config.adam();
    let b = real_images.shape()[0];
    let k = state.config.discriminator.num_styles;

    // draw noise, generate the fakes once
    let z = sample_noise(b, state.config.generator.noise_dim, &mut state.noise_rng)?;
    let (fakes, gen_tape) = state.gen.forward(&z, Mode::Train)?;

    // ---- discriminator update (fakes detached) ----
    state.disc.zero_grad();
    let (out_real, tape_real) = state.disc.forward(real_images, Mode::Train)?;
    let (out_fake, tape_fake) = state.disc.forward(&fakes, Mode::Train)?;
    let signals = StepSignals::from_head_outputs(
        &out_real.real,
        &out_real.posteriors,
        real_labels,
        &out_fake.real,
        &out_fake.posteriors,
    )?;
    let l_d = match variant {
        Variant::Gan => gan_d_loss(&signals.s_d_r, &signals.s_g_f)?,
        Variant::ScCan | Variant::Can => can_d_loss(&signals)?,
    };

    let grad_r_real = Tensor::from_vec(&[b, 1], grad_neg_log_mean(&signals.s_d_r));
    let mut grad_post_real = Tensor::zeros(&[b, k]);
    if variant != Variant::Gan {
        let n = b as f64;
        for (i, (&label, &p_true)) in real_labels.iter().zip(&signals.s_d_c).enumerate() {
            if p_true > LOG_FLOOR {
                grad_post_real.data_mut()[i * k + label] = -1.0 / (n * p_true);
            }
        }
    }
    state.disc.backward(&tape_real, &grad_r_real, &grad_post_real)?;

    let grad_r_fake = Tensor::from_vec(&[b, 1], grad_neg_log_one_minus_mean(&signals.s_g_f));
    let grad_post_fake = Tensor::zeros(&[b, k]);
    state.disc.backward(&tape_fake, &grad_r_fake, &grad_post_fake)?;

    for p in state.disc.params_mut() {
        adam_step(p, &adam)?;
    }

    // ---- generator update: fresh pass over the same fakes against the
    // updated discriminator; its parameter gradients are scratch ----
    state.gen.net.zero_grad();
    state.disc.zero_grad();
    let (out_g, tape_g) = state.disc.forward(&fakes, Mode::Train)?;
    let s_g_f: Vec<f64> = out_g.real.clone();
    let s_g_c = crate::losses::style_ambiguity_term(&out_g.posteriors)?;
    let g_signals = StepSignals {
        s_d_r: signals.s_d_r.clone(),
        s_d_c: signals.s_d_c.clone(),
        s_g_f: s_g_f.clone(),
        s_g_c: s_g_c.clone(),
    };
    let l_g = match variant {
        Variant::Can => can_g_loss(&g_signals)?,
        Variant::Gan | Variant::ScCan => gan_g_loss(&s_g_f)?,
    };

    let grad_r_g = Tensor::from_vec(&[b, 1], grad_neg_log_mean(&s_g_f));
    let grad_post_g = if variant == Variant::Can {
        style_ambiguity_grad(&out_g.posteriors)?.scale(-1.0)
    } else {
        Tensor::zeros(&[b, k])
    };
    let grad_images = state.disc.backward(&tape_g, &grad_r_g, &grad_post_g)?;
    state.gen.backward(&gen_tape, &grad_images)?;
    for p in state.gen.net.params_mut() {
        adam_step(p, &adam)?;
    }
    // scrub scratch gradients so the post-step state is checkpoint-clean
    state.disc.zero_grad();
    state.gen.net.zero_grad();

    let mean_fake_entropy = mean(&posterior_entropy(&out_g.posteriors)?);
    let log = StepLog {
        step: state.global_step,
        epoch: state.epoch,
        l_d,
        l_g,
        mean_s_d_r: mean(&signals.s_d_r),
        mean_s_g_f: mean(&signals.s_g_f),
        mean_fake_entropy,
        wall_ms: wall_ms(),
    };
    if !l_d.is_finite() || !l_g.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss at step {}: {log:?}"
        , log.step)));
    }
    Ok(log)
}

/// Renders the fixed-panel sample grid (8 columns) for the current
/// generator weights.
pub fn render_sample_grid(state: &mut TrainState) -> Result<Tensor> {
    let panel = state.noise_panel()?;
    let (images, _) = state.gen.forward(&panel, Mode::Infer)?;
    tile_grid(&images, 8)
}

fn save_grid(state: &mut TrainState, dir: &Path) -> Result<()> {
    let grid = render_sample_grid(state)?;
    let name = format!(
        "samples_epoch{}_step{}.png",
        state.epoch, state.global_step
    );
    crate::data::encode_png(&dir.join(name), &grid)
}

fn append_logs(path: &Path, logs: &[StepLog]) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for log in logs {
        let line = serde_json::to_string(log)
            .map_err(|e| Error::Data(format!("cannot serialize step log: {e}")))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// The result of a training run.
pub struct TrainRun {
    pub state: TrainState,
    pub logs: Vec<StepLog>,
}

/// Trains from scratch per `config`. With an output directory, appends step
/// logs to `steplog.jsonl`, saves periodic and final checkpoints, and writes
/// a sample grid alongside each checkpoint.
pub fn train(config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainRun> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    let state = TrainState::new(config.clone(), dataset.fingerprint())?;
    run_loop(state, &dataset, out_dir)
}

/// Continues a loaded state to its configured epoch count. The corpus is
/// reloaded from the config and must fingerprint-match the checkpoint.
pub fn resume(state: TrainState, out_dir: Option<&Path>) -> Result<TrainRun> {
    let dataset = load_dataset(&state.config)?;
    if dataset.fingerprint() != state.corpus_fingerprint {
        return Err(Error::Data(
            "corpus fingerprint does not match the checkpoint".into(),
        ));
    }
    run_loop(state, &dataset, out_dir)
}

fn run_loop(
    mut state: TrainState,
    dataset: &StyleDataset,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let cfg = state.config.clone();
    let plan = BatchPlan {
        batch_size: cfg.batch_size,
        seed: derive_seed(cfg.seed, stream::BATCHES),
        drop_last: true,
    };
    let steps_per_epoch = (dataset.len() / cfg.batch_size) as u64;
    let mut logs = Vec::new();
    let log_path = out_dir.map(|d| d.join("steplog.jsonl"));

    while state.epoch < cfg.epochs as u64 {
        let batches = minibatches(dataset, &plan, state.epoch)?;
        // mid-epoch resume lands on the right batch of the epoch permutation
        let offset = (state.global_step - state.epoch * steps_per_epoch) as usize;
        for (images, labels) in batches.iter().skip(offset) {
            let log = train_step(&mut state, images, labels)?;
            state.global_step += 1;
            if cfg.log_every > 0 && state.global_step % cfg.log_every as u64 == 0 {
                if let Some(p) = &log_path {
                    append_logs(p, std::slice::from_ref(&log))?;
                }
                logs.push(log);
            }
            if cfg.checkpoint_every > 0
                && state.global_step % cfg.checkpoint_every as u64 == 0
            {
                if let Some(dir) = out_dir {
                    let path = dir.join(format!("ckpt_step{}.bin", state.global_step));
                    crate::checkpoint::save_train_checkpoint(&state, &path)?;
                    save_grid(&mut state, dir)?;
                }
            }
        }
        state.epoch += 1;
    }
    if let Some(dir) = out_dir {
        crate::checkpoint::save_train_checkpoint(&state, &dir.join("final.ckpt"))?;
        save_grid(&mut state, dir)?;
    }
    Ok(TrainRun { state, logs })
}
