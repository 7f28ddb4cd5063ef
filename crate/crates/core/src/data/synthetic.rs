use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Split, TrainTest};
use crate::error::{Error, Result};

/// Distance of every class mean from the origin.
pub const CLASS_MEAN_NORM: f64 = 3.0;

/// Gaussian class blobs around mutually orthogonal means (random unit directions
/// once classes outnumber dimensions), isotropic noise of std `spread`.
///
/// The first 80% of each class's samples go to the training split, the rest to test.
/// Output is a pure function of the arguments.
pub fn make_synthetic_blobs(
    num_classes: usize,
    dim: usize,
    samples_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<TrainTest> {
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::Data(format!("spread must be positive, got {spread}")));
    }
    if num_classes == 0 || dim == 0 || samples_per_class < 2 {
        return Err(Error::Data(
            "need at least one class, one dimension and two samples per class".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = class_means(num_classes, dim, &mut rng);

    let n_train = ((samples_per_class as f64) * 0.8).round() as usize;
    let n_train = n_train.clamp(1, samples_per_class - 1);
    let (mut tr_x, mut tr_y, mut te_x, mut te_y) = (vec![], vec![], vec![], vec![]);
    for (c, mean) in means.iter().enumerate() {
        for s in 0..samples_per_class {
            let (xs, ys) = if s < n_train {
                (&mut tr_x, &mut tr_y)
            } else {
                (&mut te_x, &mut te_y)
            };
            xs.extend(mean.iter().map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + spread * z
            }));
            ys.push(c);
        }
    }
    Ok(TrainTest {
        train: Dataset::new(tr_x, dim, tr_y, num_classes, Split::Train)?,
        test: Dataset::new(te_x, dim, te_y, num_classes, Split::Test)?,
    })
}

fn class_means(num_classes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    while basis.len() < num_classes {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        if basis.len() < dim {
            // Gram-Schmidt against the directions already chosen.
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * CLASS_MEAN_NORM).collect())
        .collect()
}
