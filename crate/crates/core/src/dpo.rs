//! The preference loss in its log-ratio form, its analytic gradient, and the
//! reward diagnostics built on the same quantity.
//!
//! For a policy π, `γ_π(x, y_w, y_l) = log π(y_w|x) − log π(y_l|x)`. The
//! per-sample loss is `−log σ(β · (γ_target − γ_reference))`, always computed
//! through the softplus form so large ratios cannot overflow. The reference
//! policy only contributes constants, so the gradient touches the target's
//! parameters alone:
//!
//! ```text
//! ∇θ = −β · σ(β · (γ_ref − γ_θ)) · (∇θ log π_θ(y_w|x) − ∇θ log π_θ(y_l|x))
//! ```

use crate::data::PreferenceTriple;
use crate::error::{Error, Result};
use crate::policy::PolicyModel;
use crate::scalar::{sigmoid, softplus, Scalar};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Log-ratio of the chosen and rejected responses under one policy, in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaValue<T> {
    pub value: T,
    pub sample_id: String,
}

/// Optimizer selection for preference training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Preference-training hyperparameters. `beta` is the inverse temperature on
/// the log-ratio difference; everything else drives the optimizer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoConfig {
    pub beta: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            beta: 0.1,
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 3,
            optimizer: OptimizerKind::default(),
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let OptimizerKind::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::Config("invalid adam parameters".into()));
            }
        }
        Ok(())
    }
}

/// `log π(y_w|x) − log π(y_l|x)` for one triple.
pub fn gamma<T: Scalar>(policy: &PolicyModel<T>, triple: &PreferenceTriple) -> Result<GammaValue<T>> {
    let chosen = policy.sequence_logprob_str(&triple.prompt, &triple.chosen)?;
    let rejected = policy.sequence_logprob_str(&triple.prompt, &triple.rejected)?;
    Ok(GammaValue {
        value: chosen.value - rejected.value,
        sample_id: triple.id.clone(),
    })
}

/// Per-sample loss as a function of β and the log-ratio difference
/// `Δγ = γ_target − γ_reference`: `softplus(−β·Δγ)`, which equals
/// `−log σ(β·Δγ)` without ever forming the sigmoid.
pub fn per_sample_loss<T: Scalar>(beta: T, delta_gamma: T) -> T {
    softplus(-beta * delta_gamma)
}

/// γ of target and reference for every triple, in dataset order.
/// Evaluation fans out across triples; the reduction order is fixed.
fn gamma_pairs<T: Scalar>(
    target: &PolicyModel<T>,
    reference: &PolicyModel<T>,
    batch: &[PreferenceTriple],
) -> Result<Vec<(T, T)>> {
    let pairs: Vec<(T, T)> = batch
        .par_iter()
        .map(|triple| {
            let t = gamma(target, triple)?.value;
            let r = gamma(reference, triple)?.value;
            if !t.is_finite() || !r.is_finite() {
                return Err(Error::NonFinite {
                    context: "gamma".into(),
                    detail: format!("sample {}: gamma_target={t}, gamma_ref={r}", triple.id),
                });
            }
            Ok((t, r))
        })
        .collect::<Result<_>>()?;
    Ok(pairs)
}

/// Mean preference loss of a batch.
pub fn dpo_loss<T: Scalar>(
    target: &PolicyModel<T>,
    reference: &PolicyModel<T>,
    batch: &[PreferenceTriple],
    beta: T,
) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::Domain("dpo_loss over an empty batch".into()));
    }
    let pairs = gamma_pairs(target, reference, batch)?;
    let mut total = T::zero();
    for (t, r) in pairs {
        total += per_sample_loss(beta, t - r);
    }
    Ok(total / T::from_f64(batch.len() as f64))
}

/// Exact gradient of [`dpo_loss`] with respect to the target parameters.
pub fn dpo_loss_gradient<T: Scalar>(
    target: &PolicyModel<T>,
    reference: &PolicyModel<T>,
    batch: &[PreferenceTriple],
    beta: T,
) -> Result<Vec<T>> {
    let mut grad = vec![T::zero(); target.theta().len()];
    dpo_loss_gradient_into(target, reference, batch, beta, &mut grad)?;
    Ok(grad)
}

/// Computes the batch loss and writes its gradient into `grad` (overwriting).
/// Returns the loss so training loops pay for one evaluation, not two.
pub fn dpo_loss_gradient_into<T: Scalar>(
    target: &PolicyModel<T>,
    reference: &PolicyModel<T>,
    batch: &[PreferenceTriple],
    beta: T,
    grad: &mut [T],
) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::Domain("dpo_loss_gradient over an empty batch".into()));
    }
    // Per triple: Δγ plus ∇θ(γ_target) = ∇ log π(y_w|x) − ∇ log π(y_l|x).
    let per_sample: Vec<(T, Vec<T>)> = batch
        .par_iter()
        .map(|triple| {
            if triple.is_degenerate() {
                // Identical responses: γ is 0 under every policy and ∇γ is
                // identically zero, exactly.
                return Ok((T::zero(), vec![T::zero(); target.theta().len()]));
            }
            let prompt = target.vocab().encode_prompt(&triple.prompt)?;
            let chosen = target.vocab().encode_response(&triple.chosen)?;
            let rejected = target.vocab().encode_response(&triple.rejected)?;
            let mut g = vec![T::zero(); target.theta().len()];
            let lp_w = target.accumulate_logprob_gradient(&prompt, &chosen, T::one(), &mut g)?;
            let lp_l = target.accumulate_logprob_gradient(&prompt, &rejected, -T::one(), &mut g)?;
            let gamma_t = lp_w - lp_l;
            let gamma_r = gamma(reference, triple)?.value;
            if !gamma_t.is_finite() || !gamma_r.is_finite() {
                return Err(Error::NonFinite {
                    context: "gamma".into(),
                    detail: format!(
                        "sample {}: gamma_target={gamma_t}, gamma_ref={gamma_r}",
                        triple.id
                    ),
                });
            }
            Ok((gamma_t - gamma_r, g))
        })
        .collect::<Result<_>>()?;

    grad.iter_mut().for_each(|g| *g = T::zero());
    let n = T::from_f64(batch.len() as f64);
    let mut total = T::zero();
    for (delta, g) in &per_sample {
        total += per_sample_loss(beta, *delta);
        // d/dΔ softplus(−βΔ) = −β σ(−βΔ)
        let coeff = -beta * sigmoid(-beta * *delta) / n;
        for (acc, &gi) in grad.iter_mut().zip(g) {
            *acc += coeff * gi;
        }
    }
    Ok(total / n)
}

/// Fraction of triples whose chosen response outscores the rejected one
/// (γ > 0). Ties count as failures.
pub fn reward_accuracy<T: Scalar>(
    policy: &PolicyModel<T>,
    dataset: &[PreferenceTriple],
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Domain("reward_accuracy over an empty dataset".into()));
    }
    let gammas = all_gammas(policy, dataset)?;
    let wins = gammas.iter().filter(|g| g.value > T::zero()).count();
    Ok(wins as f64 / dataset.len() as f64)
}

/// Arithmetic mean of γ over the dataset, accumulated in dataset order.
pub fn mean_gamma<T: Scalar>(policy: &PolicyModel<T>, dataset: &[PreferenceTriple]) -> Result<T> {
    if dataset.is_empty() {
        return Err(Error::Domain("mean_gamma over an empty dataset".into()));
    }
    let gammas = all_gammas(policy, dataset)?;
    let mut total = T::zero();
    for g in &gammas {
        total += g.value;
    }
    Ok(total / T::from_f64(dataset.len() as f64))
}

/// Mean and population standard deviation of γ over the dataset.
pub fn gamma_stats<T: Scalar>(
    policy: &PolicyModel<T>,
    dataset: &[PreferenceTriple],
) -> Result<(T, T)> {
    let mean = mean_gamma(policy, dataset)?;
    let gammas = all_gammas(policy, dataset)?;
    let mut var = T::zero();
    for g in &gammas {
        let d = g.value - mean;
        var += d * d;
    }
    var = var / T::from_f64(dataset.len() as f64);
    Ok((mean, var.sqrt()))
}

/// γ for every triple, in dataset order.
pub fn all_gammas<T: Scalar>(
    policy: &PolicyModel<T>,
    dataset: &[PreferenceTriple],
) -> Result<Vec<GammaValue<T>>> {
    dataset.par_iter().map(|t| gamma(policy, t)).collect()
}
