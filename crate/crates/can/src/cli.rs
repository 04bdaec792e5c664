//! Command-line surface.
//!
//! Subcommands: `synth-data`, `manifest`, `train`, `sample`, `eval`,
//! `grad-check`. All randomness is governed by explicit `--seed` flags;
//! environment variables are never consulted. Exit codes: 0 success, 2
//! usage, 3 data, 4 numeric failure, 5 i/o.
//!
//! `train` accepts a flat `key=value` configuration file via `--config`;
//! explicit flags override file entries, file entries override built-in
//! defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{
    ensure_config_matches, load_probe_checkpoint, load_train_checkpoint, save_probe_checkpoint,
};
use crate::data::{manifest_table, scan_manifest, synth_style_corpus, tile_grid, write_corpus};
use crate::error::{Error, Result};
use crate::eval::{compare_variants, train_style_probe};
use crate::gradcheck::battery;
use crate::graph::Mode;
use crate::losses::Variant;
use crate::models::{sample_noise, ProbeConfig};
use crate::training::{load_dataset, resume, train, DataSource, TrainConfig};

#[derive(Parser)]
#[command(
    name = "can",
    version,
    about = "Creative adversarial network training engine",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic style-labeled corpus on disk
    SynthData(SynthDataArgs),
    /// Print the style manifest of a corpus directory
    Manifest(ManifestArgs),
    /// Train a gan, sc-can or can model
    Train(Box<TrainArgs>),
    /// Render a sample grid from a trained checkpoint
    Sample(SampleArgs),
    /// Compare trained variants with a style probe
    Eval(Box<EvalArgs>),
    /// Run the gradient-check battery
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct SynthDataArgs {
    /// Number of style classes
    #[arg(long, default_value_t = 4)]
    styles: usize,
    /// Images per style
    #[arg(long = "per-style", default_value_t = 500)]
    per_style: usize,
    /// Square image size in pixels
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Corpus generation seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (one subdirectory per style)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ManifestArgs {
    /// Corpus root: one subdirectory per style
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Objective: gan, sc-can or can [default: can]
    #[arg(long)]
    variant: Option<String>,
    /// Corpus root directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory for checkpoints, logs and sample grids
    #[arg(long)]
    out: Option<PathBuf>,
    /// Passes over the training data [default: preset]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: preset]
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate [default: 0.0001]
    #[arg(long)]
    lr: Option<f64>,
    /// Master seed for weights, noise and batch order [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Architecture preset: paper (256px, batch 128, 100 epochs) or desk
    /// (32px, batch 64, 30 epochs) [default: paper]
    #[arg(long)]
    preset: Option<String>,
    /// Image size; desk preset only [default: 32]
    #[arg(long)]
    size: Option<usize>,
    /// Log every n-th step [default: 1]
    #[arg(long = "log-every")]
    log_every: Option<usize>,
    /// Checkpoint (and render a grid) every n-th step; 0 = final only
    /// [default: 0]
    #[arg(long = "checkpoint-every")]
    checkpoint_every: Option<usize>,
    /// Five-crop augmentation for directory corpora [default: true]
    #[arg(long)]
    augment: Option<bool>,
    /// Resume from a checkpoint; the stored config must match
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Flat key=value configuration file; flags override file entries
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    /// Trained checkpoint to sample from
    #[arg(long)]
    ckpt: PathBuf,
    /// Number of images (8 per grid row)
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Noise seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output PNG path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// can-variant checkpoint
    #[arg(long)]
    can: PathBuf,
    /// sc-can-variant checkpoint
    #[arg(long = "sc-can")]
    sc_can: PathBuf,
    /// gan-variant checkpoint
    #[arg(long)]
    gan: PathBuf,
    /// Style-probe checkpoint; see --fit-probe
    #[arg(long)]
    probe: PathBuf,
    /// Fit the probe on the training split first and save it to --probe
    #[arg(long = "fit-probe", default_value_t = false)]
    fit_probe: bool,
    /// Generated samples per variant
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Evaluation seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report.txt and report.tsv (printed to stdout regardless)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probed elements per parameter in the composite checks; 0 = all
    #[arg(long, default_value_t = 16)]
    probes: usize,
}

/// Parses argv and runs one command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/version/usage output
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::SynthData(args) => cmd_synth_data(args),
        Command::Manifest(args) => cmd_manifest(args),
        Command::Train(args) => cmd_train(*args),
        Command::Sample(args) => cmd_sample(args),
        Command::Eval(args) => cmd_eval(*args),
        Command::GradCheck(args) => cmd_grad_check(args),
    }
}

fn cmd_synth_data(args: SynthDataArgs) -> Result<()> {
    let ds = synth_style_corpus(args.styles, args.per_style, args.size, args.seed)?;
    write_corpus(&ds, &args.out)?;
    let table = manifest_table(&ds.manifest());
    std::fs::write(args.out.join("manifest.txt"), &table)
        .map_err(|e| Error::io(args.out.join("manifest.txt"), e))?;
    print!("{table}");
    println!("corpus written to {}", args.out.display());
    Ok(())
}

fn cmd_manifest(args: ManifestArgs) -> Result<()> {
    let rows = scan_manifest(&args.data)?;
    print!("{}", manifest_table(&rows));
    Ok(())
}

/// Flat `key = value` file. Unknown keys are rejected so typos cannot
/// silently fall back to defaults.
fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    const KNOWN: &[&str] = &[
        "variant",
        "data",
        "out",
        "epochs",
        "batch",
        "lr",
        "seed",
        "preset",
        "size",
        "log-every",
        "checkpoint-every",
        "augment",
    ];
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{}:{}: expected key = value, got '{raw}'",
                path.display(),
                ln + 1
            ))
        })?;
        let key = key.trim().to_string();
        if !KNOWN.contains(&key.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "{}:{}: unknown configuration key '{key}'",
                path.display(),
                ln + 1
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn parse_from_file<V: std::str::FromStr>(
    file: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<V>> {
    match file.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse().map(Some).map_err(|_| {
            Error::InvalidArgument(format!("configuration key '{key}' has bad value '{raw}'"))
        }),
    }
}

/// Precedence: explicit flag, then file entry, then built-in default.
fn resolve<V: std::str::FromStr>(
    flag: Option<V>,
    file: &BTreeMap<String, String>,
    key: &str,
    default: V,
) -> Result<V> {
    Ok(flag.or(parse_from_file(file, key)?).unwrap_or(default))
}

fn resolved_train_config(args: &TrainArgs, file: &BTreeMap<String, String>) -> Result<TrainConfig> {
    let preset = resolve(args.preset.clone(), file, "preset", "paper".to_string())?;
    let seed = resolve(args.seed, file, "seed", 0)?;
    let variant = Variant::parse(&resolve(args.variant.clone(), file, "variant", "can".into())?)?;

    let mut cfg = match preset.as_str() {
        "paper" => {
            if let Some(size) = resolve(args.size, file, "size", 0).ok().filter(|&s| s != 0) {
                if size != 256 {
                    return Err(Error::InvalidArgument(
                        "the paper preset is fixed at 256px; use --preset desk for other sizes"
                            .into(),
                    ));
                }
            }
            TrainConfig {
                variant,
                seed,
                ..TrainConfig::default()
            }
        }
        "desk" => {
            let size = resolve(args.size, file, "size", 32)?;
            let mut cfg = TrainConfig::desk(variant, seed);
            cfg.generator = crate::models::GeneratorConfig::desk(size);
            cfg.discriminator = crate::models::DiscriminatorConfig {
                head_hidden: vec![256, 128],
                ..crate::models::DiscriminatorConfig::desk(size, 4)
            };
            if let DataSource::Synth {
                size: synth_size, ..
            } = &mut cfg.data
            {
                *synth_size = size;
            }
            cfg
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset '{other}' (expected paper or desk)"
            )));
        }
    };

    cfg.epochs = resolve(args.epochs, file, "epochs", cfg.epochs)?;
    cfg.batch_size = resolve(args.batch, file, "batch", cfg.batch_size)?;
    cfg.learning_rate = resolve(args.lr, file, "lr", cfg.learning_rate)?;
    cfg.log_every = resolve(args.log_every, file, "log-every", cfg.log_every)?;
    cfg.checkpoint_every =
        resolve(args.checkpoint_every, file, "checkpoint-every", cfg.checkpoint_every)?;
    cfg.augment = resolve(args.augment, file, "augment", cfg.augment)?;

    let data = args
        .data
        .clone()
        .or(file.get("data").map(PathBuf::from));
    if let Some(root) = data {
        // style count comes from the corpus layout
        let styles = count_style_dirs(&root)?;
        cfg.discriminator.num_styles = styles;
        cfg.data = DataSource::Directory(root);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn count_style_dirs(root: &Path) -> Result<usize> {
    let mut n = 0;
    let rd = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() && !entry.file_name().to_string_lossy().starts_with('.') {
            n += 1;
        }
    }
    if n < 2 {
        return Err(Error::Data(format!(
            "{} holds {n} style directories, need at least 2",
            root.display()
        )));
    }
    Ok(n)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    let out = args
        .out
        .clone()
        .or(file.get("out").map(PathBuf::from));

    let run = if let Some(ckpt) = &args.resume {
        let state = load_train_checkpoint(ckpt)?;
        // flags beyond --resume/--out must agree with the stored config
        let requested = resolved_train_config(&args, &file);
        if let Ok(requested) = requested {
            if args.variant.is_some() || args.data.is_some() {
                ensure_config_matches(&requested, &state.config)?;
            }
        }
        println!(
            "resuming {} at epoch {}, step {}",
            ckpt.display(),
            state.epoch,
            state.global_step
        );
        resume(state, out.as_deref())?
    } else {
        let cfg = resolved_train_config(&args, &file)?;
        println!(
            "training variant {} for {} epochs (batch {}, lr {}, seed {})",
            cfg.variant.as_str(),
            cfg.epochs,
            cfg.batch_size,
            cfg.learning_rate,
            cfg.seed
        );
        train(&cfg, out.as_deref())?
    };

    if let Some(last) = run.logs.last() {
        println!(
            "done: step {} L_D {:.4} L_G {:.4} D(x) {:.3} D(G(z)) {:.3} fake-entropy {:.3}",
            last.step, last.l_d, last.l_g, last.mean_s_d_r, last.mean_s_g_f, last.mean_fake_entropy
        );
    }
    if let Some(dir) = out {
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    use rand::SeedableRng;
    let mut state = load_train_checkpoint(&args.ckpt)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let z = sample_noise(args.n, state.config.generator.noise_dim, &mut rng)?;
    let (images, _) = state.gen.forward(&z, Mode::Infer)?;
    let grid = tile_grid(&images, 8)?;
    crate::data::encode_png(&args.out, &grid)?;
    println!("wrote {} ({} images, 8 columns)", args.out.display(), args.n);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut can_state = load_train_checkpoint(&args.can)?;
    let mut sc_state = load_train_checkpoint(&args.sc_can)?;
    let mut gan_state = load_train_checkpoint(&args.gan)?;
    for (path, state, expect) in [
        (&args.can, &can_state, Variant::Can),
        (&args.sc_can, &sc_state, Variant::ScCan),
        (&args.gan, &gan_state, Variant::Gan),
    ] {
        if state.config.variant != expect {
            return Err(Error::InvalidArgument(format!(
                "{} was trained as '{}', expected '{}'",
                path.display(),
                state.config.variant.as_str(),
                expect.as_str()
            )));
        }
    }

    // the corpus the checkpoints trained on provides the held-out split
    let dataset = load_dataset(&can_state.config)?;
    if dataset.fingerprint() != can_state.corpus_fingerprint {
        return Err(Error::Data(
            "reloaded corpus does not fingerprint-match the checkpoints".into(),
        ));
    }
    let (train_split, heldout) = dataset.split_holdout(0.8)?;

    let mut probe = if args.fit_probe {
        let cfg = ProbeConfig::desk(dataset.image_size(), dataset.num_styles());
        println!("fitting style probe on {} real images", train_split.len());
        let probe = train_style_probe(&train_split, &cfg, args.seed, 10, 32, 2e-3)?;
        save_probe_checkpoint(&probe, &can_state.corpus_fingerprint, &args.probe)?;
        println!("probe saved to {}", args.probe.display());
        probe
    } else {
        let (probe, fp) = load_probe_checkpoint(&args.probe)?;
        if fp != can_state.corpus_fingerprint {
            return Err(Error::Data(
                "probe was fitted on a different corpus (fingerprint mismatch)".into(),
            ));
        }
        probe
    };

    let mut states: Vec<(Variant, &mut crate::training::TrainState)> = vec![
        (Variant::Gan, &mut gan_state),
        (Variant::ScCan, &mut sc_state),
        (Variant::Can, &mut can_state),
    ];
    let report = compare_variants(&mut states, &mut probe, &heldout, args.n, args.seed)?;

    print!("{}", report.to_kv_text());
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(dir.join("report.txt"), report.to_kv_text())
            .map_err(|e| Error::io(dir.join("report.txt"), e))?;
        std::fs::write(dir.join("report.tsv"), report.to_table())
            .map_err(|e| Error::io(dir.join("report.tsv"), e))?;
        println!("report written to {}", dir.display());
    }
    Ok(())
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<()> {
    let items = battery::run(args.seed, args.probes)?;
    let mut all_pass = true;
    for item in &items {
        let ok = item.report.passed();
        all_pass &= ok;
        println!(
            "{:28} max_rel_err {:.3e}  tolerance {:.1e}  {}",
            item.name,
            item.report.max_rel_err,
            item.report.tolerance,
            if ok { "pass" } else { "FAIL" }
        );
    }
    if !all_pass {
        return Err(Error::Numeric(
            "gradient check failed; see the per-primitive lines above".into(),
        ));
    }
    Ok(())
}
