//! Adversarial objectives: the classic GAN losses, the creative variant with
//! the style-ambiguity term, and entropy utilities.
//!
//! Sign convention: the per-step losses are the negations of the quantities
//! each player maximizes, so every update is plain gradient descent. The
//! generator's real/fake term uses the non-saturating `-log D(G(z))` form.
//!
//! Every `log(p)` is computed as `log(max(p, 1e-12))`: the cross-entropy
//! against the uniform distribution diverges to negative infinity when any
//! class posterior reaches a vertex of the simplex, which is exactly the
//! hefty penalty the ambiguity term is built around — but the floor keeps a
//! single rogue sample from poisoning a whole batch with infinities.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied inside every loss logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[inline]
pub fn safe_log(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Which objective drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain adversarial training; the style head is ignored.
    Gan,
    /// The discriminator learns style classes; the generator keeps the
    /// plain adversarial loss.
    ScCan,
    /// Full creative objective: style classification for the discriminator,
    /// style ambiguity for the generator.
    Can,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Gan => "gan",
            Variant::ScCan => "sc-can",
            Variant::Can => "can",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "gan" => Ok(Variant::Gan),
            "sc-can" | "sc_can" | "sccan" => Ok(Variant::ScCan),
            "can" => Ok(Variant::Can),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant '{other}' (expected gan, sc-can or can)"
            ))),
        }
    }
}

/// The per-batch scalars of one training step.
///
/// `s_d_r` and `s_g_f` are the real/fake head's outputs on real and generated
/// images; `s_d_c` is the style posterior at the true style of each real
/// image; `s_g_c` is the per-sample style-ambiguity term of each generated
/// image (always <= 0).
#[derive(Debug, Clone, PartialEq)]
pub struct StepSignals {
    pub s_d_r: Vec<f64>,
    pub s_d_c: Vec<f64>,
    pub s_g_f: Vec<f64>,
    pub s_g_c: Vec<f64>,
}

fn clamp_prob(v: f64) -> f64 {
    v.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR)
}

impl StepSignals {
    /// Assembles the signals from raw head outputs.
    ///
    /// `posteriors_real` rows are indexed by `labels` to pick the true-style
    /// posterior; `posteriors_fake` rows feed the ambiguity term. Probability
    /// fields are clamped strictly inside `(0, 1)`.
    pub fn from_head_outputs(
        r_real: &[f64],
        posteriors_real: &Tensor,
        labels: &[usize],
        r_fake: &[f64],
        posteriors_fake: &Tensor,
    ) -> Result<StepSignals> {
        let (n, k) = posteriors_real.dims2("step_signals")?;
        if labels.len() != n || r_real.len() != n {
            return Err(Error::shape(
                "step_signals",
                "real batch fields disagree in length",
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "style label {bad} out of range for {k} styles"
            )));
        }
        let s_d_c = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| clamp_prob(posteriors_real.data()[i * k + l]))
            .collect();
        let s_g_c = style_ambiguity_term(posteriors_fake)?;
        Ok(StepSignals {
            s_d_r: r_real.iter().map(|&v| clamp_prob(v)).collect(),
            s_d_c,
            s_g_f: r_fake.iter().map(|&v| clamp_prob(v)).collect(),
            s_g_c,
        })
    }
}

fn check_batch(name: &'static str, batch: &[f64]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument(format!("{name}: empty batch")));
    }
    Ok(())
}

fn mean_neg_log(batch: &[f64]) -> f64 {
    -batch.iter().map(|&v| safe_log(v)).sum::<f64>() / batch.len() as f64
}

/// Discriminator loss of the plain GAN objective:
/// `-mean log r_real - mean log(1 - r_fake)`.
pub fn gan_d_loss(r_real: &[f64], r_fake: &[f64]) -> Result<f64> {
    check_batch("gan_d_loss", r_real)?;
    check_batch("gan_d_loss", r_fake)?;
    let fake_term =
        -r_fake.iter().map(|&v| safe_log(1.0 - v)).sum::<f64>() / r_fake.len() as f64;
    Ok(mean_neg_log(r_real) + fake_term)
}

/// Non-saturating generator loss: `-mean log r_fake`.
pub fn gan_g_loss(r_fake: &[f64]) -> Result<f64> {
    check_batch("gan_g_loss", r_fake)?;
    Ok(mean_neg_log(r_fake))
}

fn validate_rows(op: &'static str, posteriors: &Tensor) -> Result<(usize, usize)> {
    let (n, k) = posteriors.dims2(op)?;
    if k < 1 {
        return Err(Error::InvalidArgument(format!("{op}: needs >= 1 class")));
    }
    for (i, row) in posteriors.data().chunks(k).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "{op}: row {i} sums to {sum}, not a probability vector"
            )));
        }
    }
    Ok((n, k))
}

/// Per-sample style-ambiguity term
/// `sum_k (1/K) log p_k + (1 - 1/K) log(1 - p_k)`.
///
/// This is the negated cross-entropy between the style posterior and the
/// uniform distribution over both sides of each binary split; it is maximized
/// over the simplex exactly at the uniform posterior and dives toward
/// negative infinity at the vertices.
pub fn style_ambiguity_term(posteriors: &Tensor) -> Result<Vec<f64>> {
    let (_, k) = validate_rows("style_ambiguity_term", posteriors)?;
    let kf = k as f64;
    Ok(posteriors
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .map(|&p| safe_log(p) / kf + (1.0 - 1.0 / kf) * safe_log(1.0 - p))
                .sum()
        })
        .collect())
}

/// Gradient of the *mean* style-ambiguity term with respect to each
/// posterior entry, honoring the log floor.
pub fn style_ambiguity_grad(posteriors: &Tensor) -> Result<Tensor> {
    let (n, k) = validate_rows("style_ambiguity_term", posteriors)?;
    let kf = k as f64;
    let scale = 1.0 / n as f64;
    let data = posteriors
        .data()
        .iter()
        .map(|&p| {
            let d_log_p = if p > LOG_FLOOR { 1.0 / (kf * p) } else { 0.0 };
            let d_log_1mp = if 1.0 - p > LOG_FLOOR {
                -(1.0 - 1.0 / kf) / (1.0 - p)
            } else {
                0.0
            };
            scale * (d_log_p + d_log_1mp)
        })
        .collect();
    Ok(Tensor::from_vec(&[n, k], data))
}

/// Discriminator loss of the creative objective:
/// `-mean log s_d_r - mean log s_d_c - mean log(1 - s_g_f)`.
///
/// Identical across the sc-can and can variants — the ambiguity term only
/// ever touches the generator.
pub fn can_d_loss(signals: &StepSignals) -> Result<f64> {
    check_batch("can_d_loss", &signals.s_d_r)?;
    check_batch("can_d_loss", &signals.s_d_c)?;
    check_batch("can_d_loss", &signals.s_g_f)?;
    let fake_term = -signals
        .s_g_f
        .iter()
        .map(|&v| safe_log(1.0 - v))
        .sum::<f64>()
        / signals.s_g_f.len() as f64;
    Ok(mean_neg_log(&signals.s_d_r) + mean_neg_log(&signals.s_d_c) + fake_term)
}

/// Generator loss of the creative objective:
/// `-mean log s_g_f - mean s_g_c`.
///
/// Minimizing it pushes fakes toward "real" while driving the style
/// posterior toward uniform. With `s_g_c` identically zero this reduces to
/// [`gan_g_loss`].
pub fn can_g_loss(signals: &StepSignals) -> Result<f64> {
    check_batch("can_g_loss", &signals.s_g_f)?;
    check_batch("can_g_loss", &signals.s_g_c)?;
    let ambiguity = signals.s_g_c.iter().sum::<f64>() / signals.s_g_c.len() as f64;
    Ok(mean_neg_log(&signals.s_g_f) - ambiguity)
}

/// `d/dv_i` of `-mean log(max(v, floor))`; zero where the floor clamps.
pub fn grad_neg_log_mean(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    v.iter()
        .map(|&x| if x > LOG_FLOOR { -1.0 / (n * x) } else { 0.0 })
        .collect()
}

/// `d/dv_i` of `-mean log(max(1 - v, floor))`.
pub fn grad_neg_log_one_minus_mean(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    v.iter()
        .map(|&x| {
            if 1.0 - x > LOG_FLOOR {
                1.0 / (n * (1.0 - x))
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-sample posterior entropy `-sum_k p_k log p_k`, in nats.
pub fn posterior_entropy(posteriors: &Tensor) -> Result<Vec<f64>> {
    let (_, k) = validate_rows("posterior_entropy", posteriors)?;
    Ok(posteriors
        .data()
        .chunks(k)
        .map(|row| -row.iter().map(|&p| if p > 0.0 { p * safe_log(p) } else { 0.0 }).sum::<f64>())
        .collect())
}
