//! Quantitative comparison of trained variants.
//!
//! Style ambiguity of generated images is scored by an *independent* probe
//! classifier fitted on real data only — the adversary's own style head is
//! available as an option but the creative generator is optimized against
//! it, so self-grading would be biased. Welch's unequal-variance t-test
//! quantifies entropy differences between variants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{derive_seed, minibatches, BatchPlan, StyleDataset};
use crate::error::{Error, Result};
use crate::graph::Mode;
use crate::losses::{posterior_entropy, style_ambiguity_term, Variant, LOG_FLOOR};
use crate::models::{build_probe, sample_noise, Discriminator, ProbeConfig, StyleProbe};
use crate::optim::{adam_step, AdamConfig};
use crate::tensor::Tensor;
use crate::training::TrainState;

// ---------------------------------------------------------------------------
// special functions for the t distribution
// ---------------------------------------------------------------------------

/// Lanczos approximation, g = 7, n = 9.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let bt = ln_bt.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Result of a two-sample test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

fn sample_moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's two-sample t-test with a two-sided p-value.
///
/// Both samples need at least two values; a vanishing pooled variance is
/// flagged as degenerate rather than producing an undefined p.
pub fn two_sample_ttest(sample_a: &[f64], sample_b: &[f64]) -> Result<TTestResult> {
    if sample_a.len() < 2 || sample_b.len() < 2 {
        return Err(Error::InvalidArgument(
            "t-test needs at least two values per sample".into(),
        ));
    }
    let (ma, va) = sample_moments(sample_a);
    let (mb, vb) = sample_moments(sample_b);
    let (na, nb) = (sample_a.len() as f64, sample_b.len() as f64);
    let se2 = va / na + vb / nb;
    if !(se2 > 0.0) || !se2.is_finite() {
        return Err(Error::Numeric(
            "degenerate variance: pooled standard error is zero, p undefined".into(),
        ));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let p = inc_beta(df / 2.0, 0.5, df / (df + t * t));
    Ok(TTestResult { t, p, df })
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

/// Fits a style probe on real data only, with a plain cross-entropy loss.
/// Deterministic in `(dataset, config, seed)`.
pub fn train_style_probe(
    dataset: &StyleDataset,
    config: &ProbeConfig,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
) -> Result<StyleProbe> {
    if dataset.num_styles() != config.num_styles {
        return Err(Error::Data(format!(
            "probe expects {} styles, corpus has {}",
            config.num_styles,
            dataset.num_styles()
        )));
    }
    let mut probe = build_probe(config, derive_seed(seed, 0x70))?;
    let adam = AdamConfig {
        learning_rate,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    let plan = BatchPlan {
        batch_size,
        seed: derive_seed(seed, 0x71),
        drop_last: true,
    };
    for epoch in 0..epochs as u64 {
        for (images, labels) in minibatches(dataset, &plan, epoch)? {
            probe.net.zero_grad();
            let (posteriors, tape) = probe.forward(&images, Mode::Train)?;
            let (n, k) = posteriors.dims2("probe_train")?;
            // cross-entropy gradient wrt the softmax output
            let mut grad = Tensor::zeros(&[n, k]);
            for (i, &label) in labels.iter().enumerate() {
                let p = posteriors.data()[i * k + label];
                if p > LOG_FLOOR {
                    grad.data_mut()[i * k + label] = -1.0 / (n as f64 * p);
                }
            }
            probe.net.backward(&tape, &grad)?;
            for p in probe.net.params_mut() {
                adam_step(p, &adam)?;
            }
        }
    }
    probe.net.zero_grad();
    Ok(probe)
}

/// Argmax style accuracy of a probe over a dataset.
pub fn probe_accuracy(probe: &mut StyleProbe, dataset: &StyleDataset) -> Result<f64> {
    let mut correct = 0usize;
    for (images, labels) in eval_batches(dataset) {
        let (posteriors, _) = probe.forward(&images, Mode::Infer)?;
        correct += count_argmax_hits(&posteriors, &labels);
    }
    Ok(correct as f64 / dataset.len() as f64)
}

fn count_argmax_hits(posteriors: &Tensor, labels: &[usize]) -> usize {
    let k = posteriors.shape()[1];
    posteriors
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &label)| {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            argmax == label
        })
        .count()
}

fn eval_batches(dataset: &StyleDataset) -> Vec<(Tensor, Vec<usize>)> {
    let s = dataset.image_size();
    let chunk = 64usize;
    let mut out = Vec::new();
    let mut i = 0;
    while i < dataset.len() {
        let end = (i + chunk).min(dataset.len());
        let b = end - i;
        let mut data = vec![0.0; b * 3 * s * s];
        let mut labels = Vec::with_capacity(b);
        for (bi, si) in (i..end).enumerate() {
            let (img, l) = dataset.get(si);
            data[bi * 3 * s * s..(bi + 1) * 3 * s * s].copy_from_slice(img.data());
            labels.push(l);
        }
        out.push((Tensor::from_vec(&[b, 3, s, s], data), labels));
        i = end;
    }
    out
}

// ---------------------------------------------------------------------------
// entropy measurement
// ---------------------------------------------------------------------------

/// What scores the style posterior of generated images.
pub enum StyleScorer<'a> {
    /// Independent probe classifier (the default and the honest choice).
    Probe(&'a mut StyleProbe),
    /// The adversary's own style head; available for comparison but biased,
    /// since the creative generator is optimized against it.
    Adversary(&'a mut Discriminator),
}

impl StyleScorer<'_> {
    pub fn num_styles(&self) -> usize {
        match self {
            StyleScorer::Probe(p) => p.config.num_styles,
            StyleScorer::Adversary(d) => d.config.num_styles,
        }
    }

    fn posteriors(&mut self, images: &Tensor) -> Result<Tensor> {
        match self {
            StyleScorer::Probe(p) => Ok(p.forward(images, Mode::Infer)?.0),
            StyleScorer::Adversary(d) => Ok(d.forward(images, Mode::Infer)?.0.posteriors),
        }
    }
}

/// Mean, standard deviation and per-sample values of the style-posterior
/// entropy of `n_samples` generated images. Also returns the per-sample
/// ambiguity term values measured by the same scorer.
pub fn mean_style_entropy(
    state: &mut TrainState,
    scorer: &mut StyleScorer,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64, Vec<f64>, Vec<f64>)> {
    if n_samples < 30 {
        return Err(Error::InvalidArgument(
            "need at least 30 samples for a stable entropy estimate".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entropies = Vec::with_capacity(n_samples);
    let mut ambiguities = Vec::with_capacity(n_samples);
    let mut remaining = n_samples;
    while remaining > 0 {
        let b = remaining.min(64);
        let z = sample_noise(b, state.config.generator.noise_dim, &mut rng)?;
        let (images, _) = state.gen.forward(&z, Mode::Infer)?;
        let posteriors = scorer.posteriors(&images)?;
        entropies.extend(posterior_entropy(&posteriors)?);
        ambiguities.extend(style_ambiguity_term(&posteriors)?);
        remaining -= b;
    }
    let (mean, var) = sample_moments(&entropies);
    Ok((mean, var.sqrt(), entropies, ambiguities))
}

/// Real/fake accuracy at threshold 0.5 over a balanced real/generated set,
/// plus argmax style accuracy on the real samples.
pub fn classifier_accuracy(
    state: &mut TrainState,
    heldout: &StyleDataset,
    seed: u64,
) -> Result<(f64, f64)> {
    if heldout.is_empty() {
        return Err(Error::Data("empty held-out split".into()));
    }
    let mut correct_rf = 0usize;
    let mut correct_style = 0usize;
    for (images, labels) in eval_batches(heldout) {
        let (out, _) = state.disc.forward(&images, Mode::Infer)?;
        correct_rf += out.real.iter().filter(|&&r| r > 0.5).count();
        correct_style += count_argmax_hits(&out.posteriors, &labels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining = heldout.len();
    while remaining > 0 {
        let b = remaining.min(64);
        let z = sample_noise(b, state.config.generator.noise_dim, &mut rng)?;
        let (images, _) = state.gen.forward(&z, Mode::Infer)?;
        let (out, _) = state.disc.forward(&images, Mode::Infer)?;
        correct_rf += out.real.iter().filter(|&&r| r < 0.5).count();
        remaining -= b;
    }
    Ok((
        correct_rf as f64 / (2 * heldout.len()) as f64,
        correct_style as f64 / heldout.len() as f64,
    ))
}

// ---------------------------------------------------------------------------
// variant comparison
// ---------------------------------------------------------------------------

/// Per-variant measurements in an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VariantEval {
    pub variant: Variant,
    pub entropy_mean: f64,
    pub entropy_std: f64,
    pub mean_ambiguity: f64,
    pub real_fake_acc: f64,
    pub style_acc: f64,
}

/// One pairwise entropy comparison.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PairTest {
    pub a: Variant,
    pub b: Variant,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub seed: u64,
    pub variants: Vec<VariantEval>,
    pub ttests: Vec<PairTest>,
}

impl EvalReport {
    /// Key/value record rendering; parseable back via [`EvalReport::from_kv_text`].
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("n_samples = {}\n", self.n_samples));
        s.push_str(&format!("seed = {}\n", self.seed));
        for v in &self.variants {
            let tag = v.variant.as_str();
            s.push_str(&format!("{tag}.entropy_mean = {}\n", v.entropy_mean));
            s.push_str(&format!("{tag}.entropy_std = {}\n", v.entropy_std));
            s.push_str(&format!("{tag}.mean_ambiguity = {}\n", v.mean_ambiguity));
            s.push_str(&format!("{tag}.real_fake_acc = {}\n", v.real_fake_acc));
            s.push_str(&format!("{tag}.style_acc = {}\n", v.style_acc));
        }
        for t in &self.ttests {
            let tag = format!("ttest.{}.vs.{}", t.a.as_str(), t.b.as_str());
            s.push_str(&format!("{tag}.t = {}\n", t.t));
            s.push_str(&format!("{tag}.p = {}\n", t.p));
        }
        s
    }

    pub fn from_kv_text(text: &str) -> Result<EvalReport> {
        use std::collections::BTreeMap;
        let mut map = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Data(format!("line {} is not a key = value record", ln + 1))
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let get = |k: &str| -> Result<f64> {
            map.get(k)
                .ok_or_else(|| Error::Data(format!("missing key '{k}'")))?
                .parse()
                .map_err(|e| Error::Data(format!("bad value for '{k}': {e}")))
        };
        let mut variants = Vec::new();
        for variant in [Variant::Gan, Variant::ScCan, Variant::Can] {
            let tag = variant.as_str();
            if map.contains_key(&format!("{tag}.entropy_mean")) {
                variants.push(VariantEval {
                    variant,
                    entropy_mean: get(&format!("{tag}.entropy_mean"))?,
                    entropy_std: get(&format!("{tag}.entropy_std"))?,
                    mean_ambiguity: get(&format!("{tag}.mean_ambiguity"))?,
                    real_fake_acc: get(&format!("{tag}.real_fake_acc"))?,
                    style_acc: get(&format!("{tag}.style_acc"))?,
                });
            }
        }
        let mut ttests = Vec::new();
        for a in [Variant::Gan, Variant::ScCan, Variant::Can] {
            for b in [Variant::Gan, Variant::ScCan, Variant::Can] {
                let tag = format!("ttest.{}.vs.{}", a.as_str(), b.as_str());
                if map.contains_key(&format!("{tag}.t")) {
                    ttests.push(PairTest {
                        a,
                        b,
                        t: get(&format!("{tag}.t"))?,
                        p: get(&format!("{tag}.p"))?,
                    });
                }
            }
        }
        Ok(EvalReport {
            n_samples: get("n_samples")? as usize,
            seed: get("seed")? as u64,
            variants,
            ttests,
        })
    }

    /// Tab-separated flat table, one row per variant.
    pub fn to_table(&self) -> String {
        let mut s = String::from(
            "variant\tentropy_mean\tentropy_std\tmean_ambiguity\treal_fake_acc\tstyle_acc\n",
        );
        for v in &self.variants {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                v.variant.as_str(),
                v.entropy_mean,
                v.entropy_std,
                v.mean_ambiguity,
                v.real_fake_acc,
                v.style_acc
            ));
        }
        s
    }
}

/// Full three-way comparison of trained variants on one corpus.
///
/// All checkpoints must carry the same corpus fingerprint; the probe must
/// match the style count. Deterministic in `(states, probe, heldout, n,
/// seed)`.
pub fn compare_variants(
    states: &mut [(Variant, &mut TrainState)],
    probe: &mut StyleProbe,
    heldout: &StyleDataset,
    n_samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    if states.is_empty() {
        return Err(Error::InvalidArgument("no checkpoints to compare".into()));
    }
    let fp = states[0].1.corpus_fingerprint;
    for (v, s) in states.iter() {
        if s.corpus_fingerprint != fp {
            return Err(Error::Data(format!(
                "corpus fingerprint of the {} checkpoint differs",
                v.as_str()
            )));
        }
        if s.config.discriminator.num_styles != probe.config.num_styles {
            return Err(Error::Data(format!(
                "probe has {} styles, {} checkpoint has {}",
                probe.config.num_styles,
                v.as_str(),
                s.config.discriminator.num_styles
            )));
        }
    }
    if heldout.num_styles() != probe.config.num_styles {
        return Err(Error::Data(
            "held-out corpus style count does not match the probe".into(),
        ));
    }

    let mut variants = Vec::new();
    let mut entropy_samples: Vec<(Variant, Vec<f64>)> = Vec::new();
    for (variant, state) in states.iter_mut() {
        let mut scorer = StyleScorer::Probe(probe);
        let (mean, std, entropies, ambiguities) =
            mean_style_entropy(state, &mut scorer, n_samples, derive_seed(seed, 0xe1))?;
        let (rf_acc, style_acc) = classifier_accuracy(state, heldout, derive_seed(seed, 0xe2))?;
        let mean_ambiguity = ambiguities.iter().sum::<f64>() / ambiguities.len() as f64;
        variants.push(VariantEval {
            variant: *variant,
            entropy_mean: mean,
            entropy_std: std,
            mean_ambiguity,
            real_fake_acc: rf_acc,
            style_acc,
        });
        entropy_samples.push((*variant, entropies));
    }

    let mut ttests = Vec::new();
    for i in 0..entropy_samples.len() {
        for j in (i + 1)..entropy_samples.len() {
            let (va, ea) = &entropy_samples[i];
            let (vb, eb) = &entropy_samples[j];
            match two_sample_ttest(ea, eb) {
                Ok(res) => ttests.push(PairTest {
                    a: *va,
                    b: *vb,
                    t: res.t,
                    p: res.p,
                }),
                // untrained pairs can produce identical constant entropies
                Err(Error::Numeric(_)) => ttests.push(PairTest {
                    a: *va,
                    b: *vb,
                    t: 0.0,
                    p: f64::NAN,
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(EvalReport {
        n_samples,
        seed,
        variants,
        ttests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_t_zero_p_one() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let res = two_sample_ttest(&a, &a).unwrap();
        assert_eq!(res.t, 0.0);
        assert_eq!(res.p, 1.0);
    }

    #[test]
    fn separated_means_give_tiny_p() {
        let a = [0.0, 0.001, -0.001, 0.0005];
        let b = [1.0, 1.001, 0.999, 1.0005];
        let res = two_sample_ttest(&a, &b).unwrap();
        assert!(res.p < 1e-3, "p = {}", res.p);
        assert!(res.t < 0.0);
    }

    #[test]
    fn swapping_samples_negates_t_and_preserves_p() {
        let a = [0.3, 1.2, 0.9, 2.0, 1.1];
        let b = [0.1, 0.4, 0.2, 0.8];
        let ab = two_sample_ttest(&a, &b).unwrap();
        let ba = two_sample_ttest(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
        assert_eq!(ab.df, ba.df);
    }

    #[test]
    fn degenerate_variance_flagged() {
        let a = [2.0, 2.0, 2.0];
        let b = [2.0, 2.0, 2.0];
        let err = two_sample_ttest(&a, &b).unwrap_err();
        assert!(err.to_string().contains("degenerate"));
    }

    #[test]
    fn too_small_samples_rejected() {
        assert!(two_sample_ttest(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn matches_statrs_oracle_on_random_gaussian_pairs() {
        // independent oracle: statrs' StudentsT distribution
        use rand::Rng;
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        for trial in 0..100 {
            let na = rng.random_range(5..40);
            let nb = rng.random_range(5..40);
            let shift = rng.random_range(-0.5..0.5);
            let scale = rng.random_range(0.5..2.0);
            let a: Vec<f64> = (0..na)
                .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
                .collect();
            let b: Vec<f64> = (0..nb)
                .map(|_| {
                    let v: f64 =
                        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                    v * scale + shift
                })
                .collect();
            let mine = two_sample_ttest(&a, &b).unwrap();
            let dist = StudentsT::new(0.0, 1.0, mine.df).unwrap();
            let p_ref = 2.0 * dist.cdf(-mine.t.abs());
            let rel = (mine.p - p_ref).abs() / p_ref.max(1e-300);
            assert!(rel <= 1e-9, "trial {trial}: p {} vs oracle {p_ref}", mine.p);
        }
    }

    #[test]
    fn incomplete_beta_sanity() {
        // I_x(1, 1) = x
        for x in [0.1, 0.5, 0.9] {
            assert!((inc_beta(1.0, 1.0, x) - x).abs() < 1e-12);
        }
        // symmetry: I_x(a, b) = 1 - I_{1-x}(b, a)
        let v = inc_beta(2.5, 4.0, 0.3);
        let w = 1.0 - inc_beta(4.0, 2.5, 0.7);
        assert!((v - w).abs() < 1e-12);
    }

    #[test]
    fn report_kv_roundtrip_is_lossless() {
        let report = EvalReport {
            n_samples: 500,
            seed: 11,
            variants: vec![VariantEval {
                variant: Variant::Can,
                entropy_mean: std::f64::consts::LN_2 + 1e-13,
                entropy_std: 0.1234567890123456,
                mean_ambiguity: -1.386294361119,
                real_fake_acc: 0.8125,
                style_acc: 0.96875,
            }],
            ttests: vec![PairTest {
                a: Variant::Can,
                b: Variant::ScCan,
                t: 3.0000000001,
                p: 0.002345678901234567,
            }],
        };
        let text = report.to_kv_text();
        let back = EvalReport::from_kv_text(&text).unwrap();
        assert_eq!(back, report);
    }

    mod model_level {
        use super::*;
        use crate::data::synth_style_corpus;
        use crate::losses::Variant;
        use crate::training::{load_dataset, TrainState};

        #[test]
        fn constant_posterior_probes_bound_the_entropy() {
            // probe that always answers uniformly -> entropy exactly ln K;
            // a fresh probe with zeroed final layer does exactly that
            let cfg = crate::training::tests::tiny_config(Variant::Can, 61);
            let ds = load_dataset(&cfg).unwrap();
            let mut state = TrainState::new(cfg, ds.fingerprint()).unwrap();
            let mut probe =
                build_probe(&ProbeConfig::desk(16, 3), 1).unwrap();
            // zero the last dense layer: logits all zero -> uniform rows
            let n_params = probe.net.params().count();
            for (i, p) in probe.net.params_mut().enumerate() {
                if i >= n_params - 2 {
                    p.value.fill(0.0);
                }
            }
            let mut scorer = StyleScorer::Probe(&mut probe);
            let (mean, std, _, _) = mean_style_entropy(&mut state, &mut scorer, 32, 5).unwrap();
            assert!((mean - (3f64).ln()).abs() < 1e-9);
            assert!(std.abs() < 1e-9);
        }

        #[test]
        fn probe_learns_the_synthetic_styles() {
            let ds = synth_style_corpus(3, 40, 16, 21).unwrap();
            let (train, test) = ds.split_holdout(0.8).unwrap();
            let probe = train_style_probe(&train, &ProbeConfig::desk(16, 3), 9, 14, 16, 2e-3);
            let mut probe = probe.unwrap();
            let acc = probe_accuracy(&mut probe, &test).unwrap();
            assert!(acc >= 0.9, "probe held-out accuracy {acc}");
        }

        #[test]
        fn untrained_discriminator_style_accuracy_is_chance() {
            let cfg = crate::training::tests::tiny_config(Variant::Can, 63);
            let ds = load_dataset(&cfg).unwrap();
            let mut state = TrainState::new(cfg, ds.fingerprint()).unwrap();
            let (_, style_acc) = classifier_accuracy(&mut state, &ds, 3).unwrap();
            // K = 3: chance is 1/3; a fresh net sits near it
            assert!(style_acc < 0.7, "style_acc {style_acc}");
        }

        #[test]
        fn permuted_labels_collapse_probe_accuracy_to_chance() {
            let ds = synth_style_corpus(3, 40, 16, 22).unwrap();
            let (train, test) = ds.split_holdout(0.8).unwrap();
            let mut probe =
                train_style_probe(&train, &ProbeConfig::desk(16, 3), 9, 14, 16, 2e-3).unwrap();
            // negative control: test with labels cyclically shifted
            let shifted: Vec<(Tensor, usize)> = (0..test.len())
                .map(|i| {
                    let (img, l) = test.get(i);
                    (img.clone(), (l + 1) % 3)
                })
                .collect();
            let shifted =
                StyleDataset::new(test.style_names().to_vec(), shifted).unwrap();
            let acc = probe_accuracy(&mut probe, &shifted).unwrap();
            assert!(acc < 0.5, "permuted-label accuracy {acc} should collapse");
        }

        #[test]
        fn compare_variants_on_fresh_checkpoints_produces_a_report() {
            let ds = synth_style_corpus(3, 8, 16, 23).unwrap();
            let fp = ds.fingerprint();
            let mk = |variant, seed| {
                let cfg = crate::training::tests::tiny_config(variant, seed);
                TrainState::new(cfg, fp).unwrap()
            };
            let mut gan = mk(Variant::Gan, 1);
            let mut sc = mk(Variant::ScCan, 1);
            let mut can = mk(Variant::Can, 1);
            let mut probe = build_probe(&ProbeConfig::desk(16, 3), 2).unwrap();
            let mut states: Vec<(Variant, &mut TrainState)> = vec![
                (Variant::Gan, &mut gan),
                (Variant::ScCan, &mut sc),
                (Variant::Can, &mut can),
            ];
            let report = compare_variants(&mut states, &mut probe, &ds, 64, 3).unwrap();
            assert_eq!(report.variants.len(), 3);
            assert_eq!(report.ttests.len(), 3);
            for v in &report.variants {
                assert!(v.entropy_mean >= 0.0 && v.entropy_mean <= (3f64).ln() + 1e-9);
                assert!((0.0..=1.0).contains(&v.real_fake_acc));
                assert!((0.0..=1.0).contains(&v.style_acc));
            }
            // determinism
            let mut states2: Vec<(Variant, &mut TrainState)> = vec![
                (Variant::Gan, &mut gan),
                (Variant::ScCan, &mut sc),
                (Variant::Can, &mut can),
            ];
            let report2 = compare_variants(&mut states2, &mut probe, &ds, 64, 3).unwrap();
            assert_eq!(report, report2);
        }

        #[test]
        fn fingerprint_mismatch_rejected() {
            let ds_a = synth_style_corpus(3, 8, 16, 24).unwrap();
            let ds_b = synth_style_corpus(3, 8, 16, 25).unwrap();
            let cfg = crate::training::tests::tiny_config(Variant::Can, 1);
            let mut a = TrainState::new(cfg.clone(), ds_a.fingerprint()).unwrap();
            let mut b = TrainState::new(cfg, ds_b.fingerprint()).unwrap();
            let mut probe = build_probe(&ProbeConfig::desk(16, 3), 2).unwrap();
            let mut states: Vec<(Variant, &mut TrainState)> =
                vec![(Variant::Can, &mut a), (Variant::ScCan, &mut b)];
            let err = compare_variants(&mut states, &mut probe, &ds_a, 64, 3).unwrap_err();
            assert!(err.to_string().contains("fingerprint"));
        }
    }
}
