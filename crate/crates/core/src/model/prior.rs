use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Latent prior with one diagonal Gaussian mode per class.
///
/// When conditional replay is disabled the prior is a fixed standard normal:
/// every mode sits at the origin with unit variance and nothing is trained.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixturePrior {
    pub means: Tensor,
    pub logvars: Tensor,
    seen: BTreeSet<usize>,
    conditional: bool,
}

impl GaussianMixturePrior {
    /// Trainable per-class modes with means drawn from `N(0, 1)` and unit variance.
    pub fn conditional<R: Rng>(num_classes: usize, latent_dim: usize, rng: &mut R) -> Self {
        let means = (0..num_classes * latent_dim)
            .map(|_| StandardNormal.sample(&mut *rng))
            .collect();
        GaussianMixturePrior {
            means: Tensor::new(vec![num_classes, latent_dim], means)
                .expect("shape from positive extents")
                .with_grad(),
            logvars: Tensor::zeros(&[num_classes, latent_dim]).with_grad(),
            seen: BTreeSet::new(),
            conditional: true,
        }
    }

    pub fn standard_normal(num_classes: usize, latent_dim: usize) -> Self {
        GaussianMixturePrior {
            means: Tensor::zeros(&[num_classes, latent_dim]),
            logvars: Tensor::zeros(&[num_classes, latent_dim]),
            seen: BTreeSet::new(),
            conditional: false,
        }
    }

    pub(crate) fn from_parts(
        means: Tensor,
        logvars: Tensor,
        seen: BTreeSet<usize>,
        conditional: bool,
    ) -> Self {
        GaussianMixturePrior {
            means,
            logvars,
            seen,
            conditional,
        }
    }

    pub fn is_conditional(&self) -> bool {
        self.conditional
    }

    pub fn num_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.means.cols()
    }

    pub fn seen_classes(&self) -> &BTreeSet<usize> {
        &self.seen
    }

    pub fn mark_seen(&mut self, classes: impl IntoIterator<Item = usize>) -> Result<()> {
        for c in classes {
            if c >= self.num_classes() {
                return Err(Error::contract(format!(
                    "class {c} outside prior with {} modes",
                    self.num_classes()
                )));
            }
            self.seen.insert(c);
        }
        Ok(())
    }

    pub fn ensure_seen(&self, class: usize) -> Result<()> {
        if self.seen.contains(&class) {
            Ok(())
        } else {
            Err(Error::Replay(format!(
                "class {class} has not been seen (seen: {:?})",
                self.seen
            )))
        }
    }

    pub fn mode_mean(&self, class: usize) -> &[f64] {
        self.means.row(class)
    }

    pub fn mode_logvar(&self, class: usize) -> &[f64] {
        self.logvars.row(class)
    }

    /// `n` draws from the mode of `class`; the class must already be seen.
    pub fn sample_conditional<R: Rng>(&self, class: usize, n: usize, rng: &mut R) -> Result<Tensor> {
        self.ensure_seen(class)?;
        let d = self.latent_dim();
        let (mu, lv) = (self.mode_mean(class), self.mode_logvar(class));
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            for k in 0..d {
                let eps: f64 = StandardNormal.sample(&mut *rng);
                data.push(mu[k] + (0.5 * lv[k]).exp() * eps);
            }
        }
        Tensor::new(vec![n, d], data)
    }

    /// Log-density of `z` under the uniform mixture over seen classes.
    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        if self.seen.is_empty() {
            return Err(Error::contract("mixture density needs at least one seen class"));
        }
        let comps: Vec<f64> = self
            .seen
            .iter()
            .map(|&c| diag_normal_log_density(z, self.mode_mean(c), self.mode_logvar(c)))
            .collect();
        Ok(crate::tensor::logsumexp(&comps) - (comps.len() as f64).ln())
    }
}

/// `log N(z; mean, diag(exp(logvar)))`.
pub fn diag_normal_log_density(z: &[f64], mean: &[f64], logvar: &[f64]) -> f64 {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    z.iter()
        .zip(mean)
        .zip(logvar)
        .map(|((z, m), lv)| -0.5 * ((z - m).powi(2) / lv.exp() + lv + ln2pi))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_variance_returns_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = GaussianMixturePrior::conditional(3, 4, &mut rng);
        p.logvars = Tensor::full(&[3, 4], 1e-12f64.ln());
        p.mark_seen([1]).unwrap();
        let s = p.sample_conditional(1, 50, &mut rng).unwrap();
        for i in 0..50 {
            for (a, b) in s.row(i).iter().zip(p.mode_mean(1)) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn standard_prior_sample_mean_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = GaussianMixturePrior::standard_normal(2, 3);
        p.mark_seen([0]).unwrap();
        let n = 10_000;
        let s = p.sample_conditional(0, n, &mut rng).unwrap();
        for k in 0..3 {
            let mean = (0..n).map(|i| s.row(i)[k]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "dim {k}: {mean}");
        }
    }

    #[test]
    fn unseen_class_is_replay_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = GaussianMixturePrior::conditional(3, 2, &mut rng);
        p.mark_seen([0]).unwrap();
        assert!(matches!(
            p.sample_conditional(2, 1, &mut rng),
            Err(Error::Replay(_))
        ));
    }

    #[test]
    fn single_standard_mode_density() {
        let mut p = GaussianMixturePrior::standard_normal(1, 2);
        p.mark_seen([0]).unwrap();
        let expect = -(2.0 * std::f64::consts::PI).ln() - 0.5 * (1.0 + 4.0);
        assert!((p.log_density(&[1.0, 2.0]).unwrap() - expect).abs() < 1e-12);
    }
}
