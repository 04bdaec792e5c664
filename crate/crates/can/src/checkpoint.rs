//! Bit-exact checkpointing.
//!
//! A checkpoint is a versioned binary container: magic, kind byte, a JSON
//! echo of the config, the corpus fingerprint, counters, the noise-stream
//! position, every parameter tensor (value plus Adam state) as little-endian
//! f64, batchnorm running statistics, and a trailing SHA-256 over everything
//! before it. Save, load and save again produces byte-identical files, which
//! is what makes resumed runs indistinguishable from uninterrupted ones.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::derive_seed;
use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::models::{build_discriminator, build_generator, build_probe, ProbeConfig, StyleProbe};
use crate::tensor::Tensor;
use crate::training::{stream, TrainConfig, TrainState};

const MAGIC: &[u8; 8] = b"CANCKPT1";
const KIND_TRAIN: u8 = 0;
const KIND_PROBE: u8 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer {
            buf: Vec::with_capacity(1 << 20),
        }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
    }

    fn f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u64(t.shape().len() as u64);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        self.f64s(t.data());
    }

    fn graph(&mut self, g: &NetworkGraph) {
        self.u64(g.layers.len() as u64);
        for layer in &g.layers {
            self.u64(layer.params.len() as u64);
            for p in &layer.params {
                self.bytes(p.name.as_bytes());
                self.tensor(&p.value);
                self.tensor(&p.adam_m);
                self.tensor(&p.adam_v);
                self.u64(p.step_count);
            }
            match &layer.running {
                Some(r) => {
                    self.u8(1);
                    self.u64(r.mean.len() as u64);
                    self.f64s(&r.mean);
                    self.f64s(&r.var);
                }
                None => self.u8(0),
            }
        }
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        let digest: [u8; 32] = Sha256::digest(&self.buf).into();
        self.buf.extend_from_slice(&digest);
        std::fs::write(path, &self.buf).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, detail: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.corrupt("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u64()? as usize;
        if ndim > 8 {
            return Err(self.corrupt("implausible tensor rank"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        if n > (1 << 31) {
            return Err(self.corrupt("implausible tensor size"));
        }
        Ok(Tensor::from_vec(&shape, self.f64s(n)?))
    }

    /// Restores parameters and running statistics into a freshly built graph
    /// of the same architecture.
    fn graph_into(&mut self, g: &mut NetworkGraph) -> Result<()> {
        let n_layers = self.u64()? as usize;
        if n_layers != g.layers.len() {
            return Err(self.corrupt(format!(
                "layer count {n_layers} does not match config ({})",
                g.layers.len()
            )));
        }
        for layer in &mut g.layers {
            let n_params = self.u64()? as usize;
            if n_params != layer.params.len() {
                return Err(self.corrupt("parameter count mismatch"));
            }
            for p in &mut layer.params {
                let name = String::from_utf8_lossy(self.bytes()?).into_owned();
                if name != p.name {
                    return Err(self.corrupt(format!(
                        "parameter '{name}' does not match expected '{}'",
                        p.name
                    )));
                }
                let value = self.tensor()?;
                let adam_m = self.tensor()?;
                let adam_v = self.tensor()?;
                if value.shape() != p.value.shape() {
                    return Err(self.corrupt(format!("shape mismatch in '{name}'")));
                }
                p.value = value;
                p.adam_m = adam_m;
                p.adam_v = adam_v;
                p.step_count = self.u64()?;
            }
            let has_running = self.u8()? == 1;
            match (&mut layer.running, has_running) {
                (Some(r), true) => {
                    let n = self.u64()? as usize;
                    if n != r.mean.len() {
                        return Err(self.corrupt("running statistics length mismatch"));
                    }
                    r.mean = self.f64s(n)?;
                    r.var = self.f64s(n)?;
                }
                (None, false) => {}
                _ => return Err(self.corrupt("running statistics flag mismatch")),
            }
        }
        Ok(())
    }
}

/// Verifies magic, checksum and kind; returns the payload reader.
fn open_payload<'a>(raw: &'a [u8], path: &'a Path, want_kind: u8) -> Result<Reader<'a>> {
    let corrupt = |detail: &str| Error::Corrupt {
        path: path.to_path_buf(),
        detail: detail.into(),
    };
    if raw.len() < MAGIC.len() + 1 + 32 {
        return Err(corrupt("file too short"));
    }
    let (body, checksum) = raw.split_at(raw.len() - 32);
    let digest: [u8; 32] = Sha256::digest(body).into();
    if digest != checksum {
        return Err(corrupt("checksum mismatch"));
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(corrupt("bad magic or unsupported format version"));
    }
    let kind = body[MAGIC.len()];
    if kind != want_kind {
        return Err(corrupt(match kind {
            KIND_TRAIN => "file holds a training checkpoint, expected a probe",
            KIND_PROBE => "file holds a probe checkpoint, expected a training state",
            _ => "unknown checkpoint kind",
        }));
    }
    Ok(Reader {
        buf: body,
        pos: MAGIC.len() + 1,
        path,
    })
}

/// Saves the complete training state: config echo, corpus fingerprint,
/// counters, noise-stream position, both networks with Adam state and
/// batchnorm running statistics.
pub fn save_train_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u8(KIND_TRAIN);
    let config_json = serde_json::to_vec(&state.config)
        .map_err(|e| Error::Data(format!("cannot serialize config: {e}")))?;
    w.bytes(&config_json);
    w.buf.extend_from_slice(&state.corpus_fingerprint);
    w.u64(state.epoch);
    w.u64(state.global_step);
    w.u128(state.noise_rng.get_word_pos());
    w.graph(&state.gen.net);
    w.graph(&state.disc.body);
    w.graph(&state.disc.head_real);
    w.graph(&state.disc.head_style);
    w.finish(path)
}

/// Loads a training checkpoint, rebuilding the networks from the embedded
/// config and restoring every tensor bit-exactly.
pub fn load_train_checkpoint(path: &Path) -> Result<TrainState> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = open_payload(&raw, path, KIND_TRAIN)?;
    let config: TrainConfig = serde_json::from_slice(r.bytes()?)
        .map_err(|e| r.corrupt(format!("config echo does not parse: {e}")))?;
    config.validate()?;
    let mut fingerprint = [0u8; 32];
    fingerprint.copy_from_slice(r.take(32)?);
    let epoch = r.u64()?;
    let global_step = r.u64()?;
    let word_pos = r.u128()?;

    let mut gen = build_generator(&config.generator, derive_seed(config.seed, stream::GEN_INIT))?;
    let mut disc = build_discriminator(
        &config.discriminator,
        derive_seed(config.seed, stream::DISC_INIT),
    )?;
    r.graph_into(&mut gen.net)?;
    r.graph_into(&mut disc.body)?;
    r.graph_into(&mut disc.head_real)?;
    r.graph_into(&mut disc.head_style)?;
    if r.pos != r.buf.len() {
        return Err(r.corrupt("trailing bytes after payload"));
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::NOISE));
    noise_rng.set_word_pos(word_pos);
    Ok(TrainState {
        config,
        gen,
        disc,
        noise_rng,
        epoch,
        global_step,
        corpus_fingerprint: fingerprint,
    })
}

/// Rejects resuming a checkpoint under a different configuration (e.g. a
/// can checkpoint into a gan run).
pub fn ensure_config_matches(requested: &TrainConfig, loaded: &TrainConfig) -> Result<()> {
    if requested != loaded {
        let detail = if requested.variant != loaded.variant {
            format!(
                "checkpoint was trained as '{}', requested '{}'",
                loaded.variant.as_str(),
                requested.variant.as_str()
            )
        } else {
            "checkpoint config differs from the requested one".to_string()
        };
        return Err(Error::InvalidArgument(detail));
    }
    Ok(())
}

/// Saves a style probe with the fingerprint of the corpus it was fitted on.
pub fn save_probe_checkpoint(
    probe: &StyleProbe,
    corpus_fingerprint: &[u8; 32],
    path: &Path,
) -> Result<()> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u8(KIND_PROBE);
    let config_json = serde_json::to_vec(&probe.config)
        .map_err(|e| Error::Data(format!("cannot serialize probe config: {e}")))?;
    w.bytes(&config_json);
    w.buf.extend_from_slice(corpus_fingerprint);
    w.graph(&probe.net);
    w.finish(path)
}

pub fn load_probe_checkpoint(path: &Path) -> Result<(StyleProbe, [u8; 32])> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = open_payload(&raw, path, KIND_PROBE)?;
    let config: ProbeConfig = serde_json::from_slice(r.bytes()?)
        .map_err(|e| r.corrupt(format!("probe config does not parse: {e}")))?;
    let mut fingerprint = [0u8; 32];
    fingerprint.copy_from_slice(r.take(32)?);
    let mut probe = build_probe(&config, 0)?;
    r.graph_into(&mut probe.net)?;
    if r.pos != r.buf.len() {
        return Err(r.corrupt("trailing bytes after payload"));
    }
    Ok((probe, fingerprint))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::Variant;
    use crate::training::{load_dataset, train, TrainConfig};

    fn trained_tiny(seed: u64) -> (TrainState, TrainConfig) {
        let cfg = crate::training::tests::tiny_config(Variant::Can, seed);
        let run = train(&cfg, None).unwrap();
        (run.state, cfg)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (state, _) = trained_tiny(31);
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_train_checkpoint(&state, &p1).unwrap();
        let loaded = load_train_checkpoint(&p1).unwrap();
        save_train_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn roundtrip_restores_the_exact_state() {
        let dir = tempfile::tempdir().unwrap();
        let (state, _) = trained_tiny(37);
        let path = dir.path().join("s.ckpt");
        save_train_checkpoint(&state, &path).unwrap();
        let loaded = load_train_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, state.config);
        assert_eq!(loaded.epoch, state.epoch);
        assert_eq!(loaded.global_step, state.global_step);
        assert_eq!(loaded.corpus_fingerprint, state.corpus_fingerprint);
        assert_eq!(loaded.noise_rng, state.noise_rng);
        for (a, b) in loaded.gen.net.params().zip(state.gen.net.params()) {
            assert_eq!(a, b, "{}", a.name);
        }
        for (a, b) in loaded.disc.params().zip(state.disc.params()) {
            assert_eq!(a, b, "{}", a.name);
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (state, _) = trained_tiny(41);
        let path = dir.path().join("t.ckpt");
        save_train_checkpoint(&state, &path).unwrap();
        let mut raw = std::fs::read(&path).unwrap();
        raw.truncate(raw.len() - 100);
        std::fs::write(&path, &raw).unwrap();
        let err = load_train_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }), "{err}");
    }

    #[test]
    fn corrupted_byte_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let (state, _) = trained_tiny(43);
        let path = dir.path().join("c.ckpt");
        save_train_checkpoint(&state, &path).unwrap();
        let mut raw = std::fs::read(&path).unwrap();
        let mid = raw.len() / 2;
        raw[mid] ^= 0xff;
        std::fs::write(&path, &raw).unwrap();
        let err = load_train_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut body = b"NOTCKPT0".to_vec();
        body.push(0);
        let digest: [u8; 32] = sha2::Sha256::digest(&body).into();
        body.extend_from_slice(&digest);
        std::fs::write(&path, &body).unwrap();
        let err = load_train_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn cross_variant_resume_rejected() {
        let (state, cfg) = trained_tiny(47);
        let mut other = cfg.clone();
        other.variant = Variant::Gan;
        let err = ensure_config_matches(&other, &state.config).unwrap_err();
        assert!(err.to_string().contains("gan"));
        ensure_config_matches(&cfg, &state.config).unwrap();
    }

    #[test]
    fn probe_checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = crate::models::ProbeConfig::desk(16, 3);
        let probe = crate::models::build_probe(&cfg, 5).unwrap();
        let ds = load_dataset(&crate::training::tests::tiny_config(Variant::Can, 1)).unwrap();
        let fp = ds.fingerprint();
        let path = dir.path().join("p.ckpt");
        save_probe_checkpoint(&probe, &fp, &path).unwrap();
        let (loaded, fp2) = load_probe_checkpoint(&path).unwrap();
        assert_eq!(fp, fp2);
        for (a, b) in loaded.net.params().zip(probe.net.params()) {
            assert_eq!(a.value, b.value);
        }
        // wrong kind
        assert!(load_train_checkpoint(&path).is_err());
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        // run A: 2 epochs straight; run B: checkpoint after epoch 1, reload,
        // continue; step logs must agree bit-exactly
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = crate::training::tests::tiny_config(Variant::Can, 53);
        cfg.epochs = 2;
        let full = train(&cfg, None).unwrap();

        let mut one = cfg.clone();
        one.epochs = 1;
        let first = train(&one, None).unwrap();
        let path = dir.path().join("mid.ckpt");
        let mut mid_state = first.state;
        mid_state.config.epochs = 2; // extend the horizon, everything else equal
        save_train_checkpoint(&mid_state, &path).unwrap();
        let resumed = crate::training::resume(load_train_checkpoint(&path).unwrap(), None).unwrap();

        let tail = &full.logs[first.logs.len()..];
        assert_eq!(tail.len(), resumed.logs.len());
        for (a, b) in tail.iter().zip(&resumed.logs) {
            assert!(a.same_signals(b), "resume diverged at step {}", a.step);
        }
    }
}
