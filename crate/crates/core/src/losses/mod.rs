//! Training objectives: reconstruction, KL terms, classification, distillation
//! and the Synaptic Intelligence surrogate.

mod si;
#[cfg(test)]
mod tests;

pub use si::SiState;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LatentGaussian, ReconKind};
use crate::tensor::{Tape, Tensor, Var};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Scalar components of one optimization step's objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    pub classification: f64,
    pub distillation: f64,
    pub si_penalty: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.reconstruction,
            self.kl,
            self.classification,
            self.distillation,
            self.si_penalty,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn batch_of(tape: &Tape, v: Var) -> usize {
    tape.shape(v).first().copied().unwrap_or(1)
}

/// Mean over the batch of the per-sample reconstruction loss.
///
/// `Mse` sums squared errors per sample; `Bernoulli` sums the per-dimension
/// negative log-likelihood and needs targets in `[0, 1]`.
pub fn reconstruction_loss(tape: &mut Tape, prediction: Var, target: Var, kind: ReconKind) -> Result<Var> {
    if tape.shape(prediction) != tape.shape(target) {
        return Err(Error::dim(format!(
            "prediction {:?} vs target {:?}",
            tape.shape(prediction),
            tape.shape(target)
        )));
    }
    let b = batch_of(tape, prediction) as f64;
    let per_elem = match kind {
        ReconKind::Mse => {
            let d = tape.sub(prediction, target)?;
            tape.mul(d, d)?
        }
        ReconKind::Bernoulli => {
            let t = tape.value(target).to_vec();
            tape.bce(prediction, &t)?
        }
    };
    let s = tape.sum(per_elem)?;
    tape.scale(s, 1.0 / b)
}

/// Per-sample reconstruction losses (no batch reduction).
pub fn reconstruction_per_sample(prediction: &[f64], target: &[f64], dim: usize, kind: ReconKind) -> Result<Vec<f64>> {
    if prediction.len() != target.len() || dim == 0 || !prediction.len().is_multiple_of(dim) {
        return Err(Error::dim("prediction/target length mismatch"));
    }
    let per = |(p, t): (&f64, &f64)| match kind {
        ReconKind::Mse => (p - t).powi(2),
        ReconKind::Bernoulli => {
            let p = p.clamp(crate::tensor::BCE_EPS, 1.0 - crate::tensor::BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        }
    };
    Ok(prediction
        .chunks(dim)
        .zip(target.chunks(dim))
        .map(|(p, t)| p.iter().zip(t).map(per).sum())
        .collect())
}

/// Closed-form `KL(q || N(0, I))`, averaged over the batch.
pub fn kl_standard_normal(tape: &mut Tape, latent: LatentGaussian) -> Result<Var> {
    if tape.shape(latent.mu) != tape.shape(latent.logvar) {
        return Err(Error::dim("mu and logvar shapes differ"));
    }
    let b = batch_of(tape, latent.mu) as f64;
    let mu2 = tape.mul(latent.mu, latent.mu)?;
    let var = tape.exp(latent.logvar)?;
    let a = tape.add(mu2, var)?;
    let a = tape.sub(a, latent.logvar)?;
    let a = tape.add_scalar(a, -1.0)?;
    let s = tape.sum(a)?;
    tape.scale(s, 0.5 / b)
}

/// Closed-form KL between each row's posterior and the prior mode of its label,
/// averaged over the batch.
pub fn kl_labeled_modes(
    tape: &mut Tape,
    latent: LatentGaussian,
    prior_means: Var,
    prior_logvars: Var,
    labels: &[usize],
) -> Result<Var> {
    let (mean_rows, logvar_rows) = gather_modes(tape, prior_means, prior_logvars, labels)?;
    if tape.shape(mean_rows) != tape.shape(latent.mu) {
        return Err(Error::dim("latent and prior widths differ"));
    }
    let b = labels.len() as f64;
    // ½ Σ [lv_p − lv_q + (exp(lv_q) + (mu_q − mu_p)²) / exp(lv_p) − 1]
    let d = tape.sub(latent.mu, mean_rows)?;
    let d2 = tape.mul(d, d)?;
    let var_q = tape.exp(latent.logvar)?;
    let num = tape.add(var_q, d2)?;
    let neg_lv_p = tape.scale(logvar_rows, -1.0)?;
    let inv_var_p = tape.exp(neg_lv_p)?;
    let ratio = tape.mul(num, inv_var_p)?;
    let a = tape.sub(logvar_rows, latent.logvar)?;
    let a = tape.add(a, ratio)?;
    let a = tape.add_scalar(a, -1.0)?;
    let s = tape.sum(a)?;
    tape.scale(s, 0.5 / b)
}

/// Rows of the prior mean/logvar tables selected by `labels`, as `[B, D]`.
fn gather_modes(tape: &mut Tape, means: Var, logvars: Var, labels: &[usize]) -> Result<(Var, Var)> {
    let k = tape.shape(means)[0];
    if labels.is_empty() {
        return Err(Error::dim("empty label batch"));
    }
    let mut onehot = vec![0.0; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::contract(format!("label {l} outside prior with {k} modes")));
        }
        onehot[i * k + l] = 1.0;
    }
    let sel = tape.constant_from(vec![labels.len(), k], onehot)?;
    Ok((tape.matmul(sel, means)?, tape.matmul(sel, logvars)?))
}

/// Per-row `log N(z; mean_c, diag(exp(logvar_c)))` for one prior component: `[B]`.
fn component_log_density(tape: &mut Tape, z: Var, mean_c: Var, logvar_c: Var) -> Result<Var> {
    let d = tape.shape(z)[1] as f64;
    let neg_mean = tape.scale(mean_c, -1.0)?;
    let diff = tape.add_row(z, neg_mean)?;
    let sq = tape.mul(diff, diff)?;
    let neg_lv = tape.scale(logvar_c, -1.0)?;
    let inv_var = tape.exp(neg_lv)?;
    let w = tape.mul_row(sq, inv_var)?;
    let quad = tape.sum_rows(w)?;
    let logdet = tape.sum(logvar_c)?;
    let inner = tape.add(quad, logdet)?;
    tape.affine(inner, -0.5, -0.5 * d * LN_2PI)
}

/// Per-row `log q(z | x)` for a diagonal Gaussian posterior: `[B]`.
pub fn log_q(tape: &mut Tape, latent: LatentGaussian, z: Var) -> Result<Var> {
    let d = tape.shape(z)[1] as f64;
    let diff = tape.sub(z, latent.mu)?;
    let sq = tape.mul(diff, diff)?;
    let neg_lv = tape.scale(latent.logvar, -1.0)?;
    let inv_var = tape.exp(neg_lv)?;
    let w = tape.mul(sq, inv_var)?;
    let a = tape.add(w, latent.logvar)?;
    let s = tape.sum_rows(a)?;
    tape.affine(s, -0.5, -0.5 * d * LN_2PI)
}

/// Per-row log-density under the uniform mixture of the `components` modes: `[B]`.
pub fn log_mixture(
    tape: &mut Tape,
    z: Var,
    prior_means: Var,
    prior_logvars: Var,
    components: &[usize],
) -> Result<Var> {
    if components.is_empty() {
        return Err(Error::contract("mixture over an empty class set"));
    }
    let mut cols = Vec::with_capacity(components.len());
    for &c in components {
        let m = tape.select_row(prior_means, c)?;
        let lv = tape.select_row(prior_logvars, c)?;
        cols.push(component_log_density(tape, z, m, lv)?);
    }
    let stacked = tape.stack_cols(&cols)?;
    let lse = tape.logsumexp_rows(stacked)?;
    tape.add_scalar(lse, -(components.len() as f64).ln())
}

/// Single-draw estimate of `E_q[log q(z|x) − log p(z)]` at given samples `z`,
/// averaged over the batch, with `p` the uniform mixture over `components`.
pub fn kl_mc_gmm_at(
    tape: &mut Tape,
    latent: LatentGaussian,
    z: Var,
    prior_means: Var,
    prior_logvars: Var,
    components: &[usize],
) -> Result<Var> {
    let lq = log_q(tape, latent, z)?;
    let lp = log_mixture(tape, z, prior_means, prior_logvars, components)?;
    let diff = tape.sub(lq, lp)?;
    tape.mean(diff)
}

/// Monte Carlo KL against the mixture over `components` with `n_samples`
/// reparameterized draws per row.
pub fn kl_mc_gmm<R: rand::Rng>(
    tape: &mut Tape,
    latent: LatentGaussian,
    prior_means: Var,
    prior_logvars: Var,
    components: &[usize],
    n_samples: usize,
    rng: &mut R,
) -> Result<Var> {
    use rand_distr::{Distribution, StandardNormal};
    if n_samples == 0 {
        return Err(Error::contract("n_samples must be at least 1"));
    }
    if components.is_empty() {
        return Err(Error::contract("KL against a mixture with no seen classes"));
    }
    let shape = tape.shape(latent.mu).to_vec();
    let n: usize = shape.iter().product();
    let mut acc: Option<Var> = None;
    for _ in 0..n_samples {
        let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let noise = tape.constant_from(shape.clone(), eps)?;
        let z = crate::model::reparameterize(tape, latent, noise)?;
        let k = kl_mc_gmm_at(tape, latent, z, prior_means, prior_logvars, components)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, k)?,
            None => k,
        });
    }
    tape.scale(acc.expect("n_samples >= 1"), 1.0 / n_samples as f64)
}

/// Cross-entropy with softmax restricted to `active` classes.
pub fn classification_loss(tape: &mut Tape, logits: Var, labels: &[usize], active: &[usize]) -> Result<Var> {
    let b = batch_of(tape, logits);
    if labels.len() != b {
        return Err(Error::dim(format!("{} labels for batch of {b}", labels.len())));
    }
    let k = active.len();
    let mut onehot = vec![0.0; b * k];
    for (i, l) in labels.iter().enumerate() {
        let pos = active.iter().position(|a| a == l).ok_or_else(|| {
            Error::contract(format!("label {l} outside active classes {active:?}"))
        })?;
        onehot[i * k + pos] = 1.0;
    }
    let masked = tape.select_cols(logits, active)?;
    let logp = tape.log_softmax(masked, 1.0)?;
    let target = tape.constant_from(vec![b, k], onehot)?;
    let picked = tape.mul(logp, target)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0 / b as f64)
}

/// Soft-target loss: `T² · mean_i Σ_j −p_ij log softmax(s_i / T)_j`.
///
/// `student_logits` and `teacher_probs` must already be restricted to the same
/// class columns.
pub fn distillation_loss(
    tape: &mut Tape,
    student_logits: Var,
    teacher_probs: &Tensor,
    temperature: f64,
) -> Result<Var> {
    if tape.shape(student_logits) != teacher_probs.shape() {
        return Err(Error::dim(format!(
            "student {:?} vs teacher {:?}",
            tape.shape(student_logits),
            teacher_probs.shape()
        )));
    }
    for i in 0..teacher_probs.rows() {
        let s: f64 = teacher_probs.row(i).iter().sum();
        if (s - 1.0).abs() > 1e-6 || teacher_probs.row(i).iter().any(|p| *p < 0.0) {
            return Err(Error::contract(format!(
                "teacher row {i} is not a distribution (sums to {s})"
            )));
        }
    }
    let b = teacher_probs.rows() as f64;
    let logp = tape.log_softmax(student_logits, temperature)?;
    let p = tape.constant(teacher_probs);
    let w = tape.mul(logp, p)?;
    let s = tape.sum(w)?;
    tape.scale(s, -temperature * temperature / b)
}
