//! Adversarial and class-discriminative losses, each with its gradient with
//! respect to the logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_softmax, sigmoid, softplus, Scalar};

/// Objective used for the class-discriminative term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassObjective {
    /// `-mean log P(C = c | I)`.
    #[default]
    LogLikelihood,
    /// `1 - mean P(C = c | I)`; the raw posterior, kept for ablation.
    Probability,
}

fn check_finite<F: Scalar>(what: &str, v: &[F]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Empty(format!("{what} logits")));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("{what} logit {i} is not finite")));
    }
    Ok(())
}

fn mean_softplus_grad<F: Scalar>(logits: &[F], sign: F) -> (F, Vec<F>) {
    // d/dx softplus(s·x) = s·sigmoid(s·x)
    let n = F::lit(logits.len() as f64);
    let value = logits.iter().map(|&x| softplus(sign * x)).sum::<F>() / n;
    let grad = logits
        .iter()
        .map(|&x| sign * sigmoid(sign * x) / n)
        .collect();
    (value, grad)
}

/// Discriminator BCE: `mean softplus(-real) + mean softplus(fake)`.
pub fn adv_loss_d<F: Scalar>(real_logits: &[F], fake_logits: &[F]) -> Result<F> {
    adv_loss_d_grad(real_logits, fake_logits).map(|(v, _, _)| v)
}

pub fn adv_loss_d_grad<F: Scalar>(
    real_logits: &[F],
    fake_logits: &[F],
) -> Result<(F, Vec<F>, Vec<F>)> {
    check_finite("real", real_logits)?;
    check_finite("fake", fake_logits)?;
    let (vr, gr) = mean_softplus_grad(real_logits, -F::one());
    let (vf, gf) = mean_softplus_grad(fake_logits, F::one());
    Ok((vr + vf, gr, gf))
}

/// Non-saturating generator loss: `mean softplus(-fake)`.
pub fn adv_loss_g<F: Scalar>(fake_logits: &[F]) -> Result<F> {
    adv_loss_g_grad(fake_logits).map(|(v, _)| v)
}

pub fn adv_loss_g_grad<F: Scalar>(fake_logits: &[F]) -> Result<(F, Vec<F>)> {
    check_finite("fake", fake_logits)?;
    Ok(mean_softplus_grad(fake_logits, -F::one()))
}

/// Mean negative log-posterior of the true class. `logits` is `N × k`
/// row-major; `labels` are class-head indices.
pub fn class_loss<F: Scalar>(logits: &[F], k: usize, labels: &[usize]) -> Result<F> {
    class_loss_grad(logits, k, labels, ClassObjective::LogLikelihood).map(|(v, _)| v)
}

pub fn class_loss_grad<F: Scalar>(
    logits: &[F],
    k: usize,
    labels: &[usize],
    objective: ClassObjective,
) -> Result<(F, Vec<F>)> {
    if k == 0 || logits.len() != labels.len() * k {
        return Err(Error::Shape(format!(
            "{} logits for {} labels over {k} classes",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    check_finite("class", logits)?;
    let n = F::lit(labels.len() as f64);
    let mut value = F::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.chunks_exact(k).zip(labels) {
        let lsm = log_softmax(row);
        match objective {
            ClassObjective::LogLikelihood => {
                value -= lsm[label];
                for (j, &l) in lsm.iter().enumerate() {
                    let target = if j == label { F::one() } else { F::zero() };
                    grad.push((l.exp() - target) / n);
                }
            }
            ClassObjective::Probability => {
                // d p_c / d x_j = p_c (δ_cj - p_j)
                let pc = lsm[label].exp();
                value += F::one() - pc;
                for (j, &l) in lsm.iter().enumerate() {
                    let delta = if j == label { F::one() } else { F::zero() };
                    grad.push(-pc * (delta - l.exp()) / n);
                }
            }
        }
    }
    Ok((value / n, grad))
}

/// Per-term values of a compound loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adversarial: f64,
    pub class: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.adversarial.is_finite() && self.class.is_finite() && self.total.is_finite()
    }
}
