use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::model::{GaussianMixturePrior, LatentGaussian, ReconKind};
use crate::tensor::gradcheck::{check, max_rel_err};
use crate::tensor::{Optimizer, Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(r: &mut ChaCha8Rng, rows: usize, cols: usize, s: f64) -> Tensor {
    let v = (0..rows * cols)
        .map(|_| { let e: f64 = StandardNormal.sample(&mut *r); s * e })
        .collect();
    Tensor::matrix(rows, cols, v).unwrap()
}

fn uniform(r: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let v = (0..rows * cols).map(|_| r.gen_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, v).unwrap()
}

fn latent(tape: &mut Tape, mu: &Tensor, lv: &Tensor) -> LatentGaussian {
    LatentGaussian {
        mu: tape.constant(mu),
        logvar: tape.constant(lv),
    }
}

#[test]
fn recon_mse_zero_on_identity() {
    let mut r = rng(1);
    let x = randn(&mut r, 4, 6, 1.0);
    let mut tape = Tape::new();
    let p = tape.constant(&x);
    let t = tape.constant(&x);
    let l = reconstruction_loss(&mut tape, p, t, ReconKind::Mse).unwrap();
    assert_eq!(tape.scalar(l).unwrap(), 0.0);
}

#[test]
fn recon_bernoulli_half_is_ln2_per_dim() {
    let mut r = rng(2);
    let t = uniform(&mut r, 3, 5, 0.0, 1.0);
    let mut tape = Tape::new();
    let p = tape.constant(&Tensor::full(&[3, 5], 0.5));
    let tv = tape.constant(&t);
    let l = reconstruction_loss(&mut tape, p, tv, ReconKind::Bernoulli).unwrap();
    assert_abs_diff_eq!(tape.scalar(l).unwrap(), 5.0 * 2f64.ln(), epsilon = 1e-12);
}

#[test]
fn recon_bernoulli_rejects_out_of_range_targets() {
    let mut tape = Tape::new();
    let p = tape.constant(&Tensor::full(&[1, 2], 0.5));
    let t = tape.constant(&Tensor::matrix(1, 2, vec![0.2, 1.5]).unwrap());
    let e = reconstruction_loss(&mut tape, p, t, ReconKind::Bernoulli).unwrap_err();
    assert!(matches!(e, crate::Error::Domain(_)), "{e}");
}

#[test]
fn recon_matches_double_loop() {
    let mut r = rng(3);
    let p = uniform(&mut r, 7, 9, 0.01, 0.99);
    let t = uniform(&mut r, 7, 9, 0.0, 1.0);
    for kind in [ReconKind::Mse, ReconKind::Bernoulli] {
        let mut oracle = 0.0;
        for i in 0..7 {
            let mut s = 0.0;
            for j in 0..9 {
                let (a, b) = (p.data()[i * 9 + j], t.data()[i * 9 + j]);
                s += match kind {
                    ReconKind::Mse => (a - b) * (a - b),
                    ReconKind::Bernoulli => -(b * a.ln() + (1.0 - b) * (1.0 - a).ln()),
                };
            }
            oracle += s;
        }
        oracle /= 7.0;
        let mut tape = Tape::new();
        let pv = tape.constant(&p);
        let tv = tape.constant(&t);
        let l = reconstruction_loss(&mut tape, pv, tv, kind).unwrap();
        assert_abs_diff_eq!(tape.scalar(l).unwrap(), oracle, epsilon = 1e-12);
        let per = reconstruction_per_sample(p.data(), t.data(), 9, kind).unwrap();
        assert_abs_diff_eq!(per.iter().sum::<f64>() / 7.0, oracle, epsilon = 1e-12);
    }
}

#[test]
fn kl_standard_normal_hand_values() {
    let mut tape = Tape::new();
    let z = latent(&mut tape, &Tensor::zeros(&[3, 4]), &Tensor::zeros(&[3, 4]));
    let k = kl_standard_normal(&mut tape, z).unwrap();
    assert_eq!(tape.scalar(k).unwrap(), 0.0);

    let z = latent(&mut tape, &Tensor::full(&[1, 1], 1.0), &Tensor::zeros(&[1, 1]));
    let k = kl_standard_normal(&mut tape, z).unwrap();
    assert_abs_diff_eq!(tape.scalar(k).unwrap(), 0.5, epsilon = 1e-15);
}

/// Mean and standard error of a per-sample estimator.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Per-draw `log q(z) - log p(z)` samples for one posterior row, drawn with a
/// plain loop independent of the tape code.
fn naive_kl_draws(
    mu: &[f64],
    lv: &[f64],
    means: &[Vec<f64>],
    lvs: &[Vec<f64>],
    n: usize,
    r: &mut ChaCha8Rng,
) -> Vec<f64> {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let logn = |z: &[f64], m: &[f64], l: &[f64]| -> f64 {
        z.iter()
            .zip(m)
            .zip(l)
            .map(|((z, m), l)| -0.5 * ((z - m).powi(2) / l.exp() + l + ln2pi))
            .sum()
    };
    (0..n)
        .map(|_| {
            let z: Vec<f64> = mu
                .iter()
                .zip(lv)
                .map(|(m, l)| m + (0.5 * l).exp() * { let e: f64 = StandardNormal.sample(&mut *r); e })
                .collect();
            let comps: Vec<f64> = means.iter().zip(lvs).map(|(m, l)| logn(&z, m, l)).collect();
            let mx = comps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lp = mx + comps.iter().map(|c| (c - mx).exp()).sum::<f64>().ln() - (comps.len() as f64).ln();
            logn(&z, mu, lv) - lp
        })
        .collect()
}

#[test]
fn kl_mc_degenerate_prior_matches_closed_form() {
    let mu = Tensor::matrix(1, 3, vec![0.7, -0.3, 1.1]).unwrap();
    let lv = Tensor::matrix(1, 3, vec![-0.5, 0.2, 0.0]).unwrap();
    let mut tape = Tape::new();
    let q = latent(&mut tape, &mu, &lv);
    let closed = kl_standard_normal(&mut tape, q).unwrap();
    let closed = tape.scalar(closed).unwrap();

    let prior = GaussianMixturePrior::standard_normal(1, 3);
    let mut r = rng(4);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| {
            let mut tape = Tape::new();
            let q = latent(&mut tape, &mu, &lv);
            let pm = tape.constant(&prior.means);
            let pl = tape.constant(&prior.logvars);
            let k = kl_mc_gmm(&mut tape, q, pm, pl, &[0], 1, &mut r).unwrap();
            tape.scalar(k).unwrap()
        })
        .collect();
    let (m, se) = mean_se(&draws);
    assert!((m - closed).abs() < 3.0 * se, "mc {m} ± {se} vs closed {closed}");
}

#[test]
fn kl_mc_self_is_zero() {
    // q equal to the only prior mode: every draw is exactly 0 up to rounding.
    let mean = Tensor::matrix(1, 2, vec![0.4, -1.0]).unwrap();
    let lvar = Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap();
    let mut tape = Tape::new();
    let q = latent(&mut tape, &mean, &lvar);
    let pm = tape.constant(&mean);
    let pl = tape.constant(&lvar);
    let mut r = rng(5);
    let k = kl_mc_gmm(&mut tape, q, pm, pl, &[0], 10_000, &mut r).unwrap();
    assert_abs_diff_eq!(tape.scalar(k).unwrap(), 0.0, epsilon = 1e-9);
}

#[test]
fn kl_mc_two_mode_matches_brute_force() {
    let means = vec![vec![-1.5, 0.0], vec![1.5, 0.5]];
    let lvs = vec![vec![0.0, -0.3], vec![0.2, 0.0]];
    let mu = vec![-1.4, 0.1];
    let lv = vec![-0.2, -0.4];
    let brute = {
        let mut r = rng(6);
        let d = naive_kl_draws(&mu, &lv, &means, &lvs, 1_000_000, &mut r);
        d.iter().sum::<f64>() / d.len() as f64
    };
    let mut tape = Tape::new();
    let q = latent(
        &mut tape,
        &Tensor::matrix(1, 2, mu.clone()).unwrap(),
        &Tensor::matrix(1, 2, lv.clone()).unwrap(),
    );
    let pm = tape.constant(&Tensor::from_rows(&means).unwrap());
    let pl = tape.constant(&Tensor::from_rows(&lvs).unwrap());
    let mut r = rng(7);
    let k = kl_mc_gmm(&mut tape, q, pm, pl, &[0, 1], 20_000, &mut r).unwrap();
    let est = tape.scalar(k).unwrap();
    assert!(((est - brute) / brute).abs() < 0.02, "est {est} brute {brute}");
}

#[test]
fn kl_mc_requires_seen_classes_and_samples() {
    let mut tape = Tape::new();
    let q = latent(&mut tape, &Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 2]));
    let pm = tape.constant(&Tensor::zeros(&[2, 2]));
    let pl = tape.constant(&Tensor::zeros(&[2, 2]));
    let mut r = rng(0);
    assert!(matches!(
        kl_mc_gmm(&mut tape, q, pm, pl, &[], 1, &mut r),
        Err(crate::Error::Contract(_))
    ));
    assert!(kl_mc_gmm(&mut tape, q, pm, pl, &[0], 0, &mut r).is_err());
}

#[test]
fn kl_labeled_modes_matches_closed_form_per_row() {
    let mut r = rng(8);
    let mu = randn(&mut r, 5, 3, 1.0);
    let lv = randn(&mut r, 5, 3, 0.3);
    let means = randn(&mut r, 4, 3, 1.0);
    let lvs = randn(&mut r, 4, 3, 0.3);
    let labels = [0, 3, 1, 1, 2];
    let mut oracle = 0.0;
    for (i, &c) in labels.iter().enumerate() {
        for d in 0..3 {
            let (m, l) = (mu.data()[i * 3 + d], lv.data()[i * 3 + d]);
            let (pm, pl) = (means.data()[c * 3 + d], lvs.data()[c * 3 + d]);
            oracle += 0.5 * (pl - l + (l.exp() + (m - pm).powi(2)) / pl.exp() - 1.0);
        }
    }
    oracle /= 5.0;
    let mut tape = Tape::new();
    let q = latent(&mut tape, &mu, &lv);
    let pm = tape.constant(&means);
    let pl = tape.constant(&lvs);
    let k = kl_labeled_modes(&mut tape, q, pm, pl, &labels).unwrap();
    assert_abs_diff_eq!(tape.scalar(k).unwrap(), oracle, epsilon = 1e-12);
    assert!(kl_labeled_modes(&mut tape, q, pm, pl, &[0, 1, 2, 3, 4]).is_err());
}

#[test]
fn classification_uniform_logits_is_ln_k() {
    let mut tape = Tape::new();
    let logits = tape.constant(&Tensor::zeros(&[3, 12]));
    let active: Vec<usize> = (0..10).collect();
    let l = classification_loss(&mut tape, logits, &[0, 4, 9], &active).unwrap();
    assert_abs_diff_eq!(tape.scalar(l).unwrap(), 10f64.ln(), epsilon = 1e-12);
}

#[test]
fn classification_confident_logits_near_zero() {
    let mut tape = Tape::new();
    let logits = tape
        .constant_from(vec![2, 3], vec![200.0, 0.0, 0.0, 0.0, 0.0, 200.0])
        .unwrap();
    let l = classification_loss(&mut tape, logits, &[0, 2], &[0, 1, 2]).unwrap();
    assert!(tape.scalar(l).unwrap() < 1e-12);
}

#[test]
fn classification_rejects_inactive_label() {
    let mut tape = Tape::new();
    let logits = tape.constant(&Tensor::zeros(&[1, 4]));
    let e = classification_loss(&mut tape, logits, &[3], &[0, 1]).unwrap_err();
    assert!(matches!(e, crate::Error::Contract(_)));
}

#[test]
fn classification_matches_naive_cross_entropy() {
    let mut r = rng(9);
    let logits = randn(&mut r, 6, 8, 2.0);
    let active = [1usize, 2, 5, 6];
    let labels = [2usize, 6, 1, 5, 5, 2];
    let mut oracle = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mx = active.iter().map(|&c| row[c]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = active.iter().map(|&c| (row[c] - mx).exp()).sum();
        oracle += -(row[y] - mx - z.ln());
    }
    oracle /= 6.0;
    let mut tape = Tape::new();
    let lv = tape.constant(&logits);
    let l = classification_loss(&mut tape, lv, &labels, &active).unwrap();
    assert_abs_diff_eq!(tape.scalar(l).unwrap(), oracle, epsilon = 1e-12);
}

fn softmax_t(row: &[f64], t: f64) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| ((v - mx) / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[test]
fn distillation_self_equals_entropy_times_t2() {
    let mut r = rng(10);
    let logits = randn(&mut r, 3, 5, 1.5);
    let t = 2.0;
    let probs: Vec<Vec<f64>> = (0..3).map(|i| softmax_t(logits.row(i), t)).collect();
    let entropy: f64 = probs
        .iter()
        .map(|p| -p.iter().map(|v| v * v.ln()).sum::<f64>())
        .sum::<f64>()
        / 3.0;
    let teacher = Tensor::from_rows(&probs).unwrap();
    let mut tape = Tape::new();
    let s = tape.constant(&logits);
    let l = distillation_loss(&mut tape, s, &teacher, t).unwrap();
    assert_abs_diff_eq!(tape.scalar(l).unwrap(), entropy * t * t, epsilon = 1e-12);
}

#[test]
fn distillation_uniform_four_classes_at_t2() {
    let teacher = Tensor::full(&[2, 4], 0.25);
    let mut tape = Tape::new();
    let s = tape.constant(&Tensor::zeros(&[2, 4]));
    let l = distillation_loss(&mut tape, s, &teacher, 2.0).unwrap();
    assert_abs_diff_eq!(tape.scalar(l).unwrap(), 4.0 * 4f64.ln(), epsilon = 1e-12);
}

#[test]
fn distillation_rejects_unnormalized_teacher() {
    let teacher = Tensor::matrix(1, 3, vec![0.5, 0.5, 0.1]).unwrap();
    let mut tape = Tape::new();
    let s = tape.constant(&Tensor::zeros(&[1, 3]));
    let e = distillation_loss(&mut tape, s, &teacher, 2.0).unwrap_err();
    assert!(matches!(e, crate::Error::Contract(_)));
}

#[test]
fn distillation_descent_converges_to_teacher() {
    let teacher = Tensor::matrix(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let t = 2.0;
    let mut student = Tensor::zeros(&[1, 4]).with_grad();
    let mut opt = Optimizer::sgd(0.5).unwrap();
    for _ in 0..3000 {
        let mut tape = Tape::new();
        let s = tape.leaf(&student);
        let l = distillation_loss(&mut tape, s, &teacher, t).unwrap();
        tape.backward(l).unwrap();
        student.zero_grad();
        student.accumulate_grad(tape.grad(s).unwrap()).unwrap();
        opt.step(&mut [&mut student]).unwrap();
    }
    let p = softmax_t(student.data(), t);
    for (a, b) in p.iter().zip(teacher.data()) {
        assert!((a - b).abs() < 1e-6, "{p:?}");
    }
}

#[test]
fn loss_gradients_pass_finite_differences() {
    let mut r = rng(11);
    let cases: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> crate::Result<Var>>)> = vec![
        (
            "mse",
            vec![randn(&mut r, 4, 5, 1.0), randn(&mut r, 4, 5, 1.0)],
            Box::new(|t: &mut Tape, v: &[Var]| reconstruction_loss(t, v[0], v[1], ReconKind::Mse)),
        ),
        (
            "bernoulli",
            vec![uniform(&mut r, 4, 5, 0.1, 0.9)],
            Box::new(|t: &mut Tape, v: &[Var]| {
                let target = t.constant_from(vec![4, 5], (0..20).map(|i| (i % 3) as f64 / 2.0).collect())?;
                reconstruction_loss(t, v[0], target, ReconKind::Bernoulli)
            }),
        ),
        (
            "kl_standard",
            vec![randn(&mut r, 3, 4, 1.0), randn(&mut r, 3, 4, 0.5)],
            Box::new(|t: &mut Tape, v: &[Var]| {
                kl_standard_normal(t, LatentGaussian { mu: v[0], logvar: v[1] })
            }),
        ),
        (
            "kl_labeled",
            vec![
                randn(&mut r, 3, 4, 1.0),
                randn(&mut r, 3, 4, 0.5),
                randn(&mut r, 5, 4, 1.0),
                randn(&mut r, 5, 4, 0.5),
            ],
            Box::new(|t: &mut Tape, v: &[Var]| {
                kl_labeled_modes(t, LatentGaussian { mu: v[0], logvar: v[1] }, v[2], v[3], &[4, 0, 2])
            }),
        ),
        (
            "kl_mc_gmm_at",
            vec![
                randn(&mut r, 3, 4, 1.0),
                randn(&mut r, 3, 4, 0.5),
                randn(&mut r, 3, 4, 1.0),
                randn(&mut r, 5, 4, 1.0),
                randn(&mut r, 5, 4, 0.5),
            ],
            Box::new(|t: &mut Tape, v: &[Var]| {
                kl_mc_gmm_at(t, LatentGaussian { mu: v[0], logvar: v[1] }, v[2], v[3], v[4], &[0, 2, 3])
            }),
        ),
        (
            "classification",
            vec![randn(&mut r, 4, 6, 1.5)],
            Box::new(|t: &mut Tape, v: &[Var]| classification_loss(t, v[0], &[0, 3, 4, 3], &[0, 3, 4, 5])),
        ),
        (
            "distillation",
            vec![randn(&mut r, 3, 4, 1.5)],
            Box::new(|t: &mut Tape, v: &[Var]| {
                let teacher = Tensor::from_rows(&[
                    vec![0.1, 0.2, 0.3, 0.4],
                    vec![0.7, 0.1, 0.1, 0.1],
                    vec![0.25, 0.25, 0.25, 0.25],
                ])?;
                distillation_loss(t, v[0], &teacher, 2.0)
            }),
        ),
    ];
    for (name, inputs, f) in cases {
        let probes = check(&inputs, 25, &mut r, |t, v| f(t, v)).unwrap();
        assert!(probes.len() >= 25.min(inputs.iter().map(Tensor::len).sum()));
        let worst = max_rel_err(&probes);
        assert!(worst < 1e-4, "{name}: rel err {worst}");
    }
}

#[test]
fn si_accumulate_hand_values() {
    let p = Tensor::zeros(&[2]);
    let mut si = SiState::new(&[&p], 0.1, 1.0).unwrap();
    si.accumulate(&[&[0.0, 0.0]], &[&[0.3, -0.2]]).unwrap();
    assert_eq!(si.omega[0], vec![0.0, 0.0]);
    si.accumulate(&[&[-1.0, 0.0]], &[&[0.1, 0.0]]).unwrap();
    assert_abs_diff_eq!(si.omega[0][0], 0.1, epsilon = 1e-15);
    assert!(si.accumulate(&[&[1.0]], &[&[1.0]]).is_err());
}

#[test]
fn si_consolidate_hand_values() {
    let p = Tensor::zeros(&[3]);
    let mut si = SiState::new(&[&p], 0.1, 1.0).unwrap();
    si.consolidate(&[&[0.0, 0.0, 0.0]]).unwrap();
    assert_eq!(si.importance[0], vec![0.0; 3]);
    si.omega[0] = vec![1.0, -2.0, 0.5];
    si.consolidate(&[&[0.0, 0.3, 1.0]]).unwrap();
    assert_abs_diff_eq!(si.importance[0][0], 10.0, epsilon = 1e-12);
    assert_eq!(si.importance[0][1], 0.0);
    assert_abs_diff_eq!(si.importance[0][2], 0.5 / 1.1, epsilon = 1e-12);
    assert_eq!(si.anchor[0], vec![0.0, 0.3, 1.0]);
    assert_eq!(si.omega[0], vec![0.0; 3]);
}

#[test]
fn si_penalty_hand_values_and_gradient() {
    let p = Tensor::zeros(&[1]);
    let mut si = SiState::new(&[&p], 0.1, 1.0).unwrap();
    si.importance[0] = vec![2.0];
    assert_eq!(si.penalty_value(&[&[0.0]]).unwrap(), 0.0);
    assert_abs_diff_eq!(si.penalty_value(&[&[0.5]]).unwrap(), 0.5, epsilon = 1e-15);

    let mut r = rng(12);
    let a = randn(&mut r, 3, 4, 1.0);
    let b = randn(&mut r, 5, 1, 1.0);
    let mut si = SiState::new(&[&a, &b], 0.1, 0.7).unwrap();
    for g in si.importance.iter_mut() {
        g.iter_mut().for_each(|v| *v = r.gen_range(0.0..3.0));
    }
    let moved = [randn(&mut r, 3, 4, 1.0), randn(&mut r, 5, 1, 1.0)];
    let on_tape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = moved.iter().map(|t| tape.leaf(t)).collect();
        let pen = si.penalty(&mut tape, &vars).unwrap();
        tape.scalar(pen).unwrap()
    };
    let off = si.penalty_value(&[moved[0].data(), moved[1].data()]).unwrap();
    assert_abs_diff_eq!(on_tape, off, epsilon = 1e-12);
    let probes = check(&moved, 0, &mut r, |t, v| si.penalty(t, v)).unwrap();
    assert!(max_rel_err(&probes) < 1e-6);
}

/// Two-parameter quadratic `½ Σ a_k (θ_k − t_k)²` trained by SGD.
fn quad_grad(theta: &[f64], a: &[f64], t: &[f64]) -> Vec<f64> {
    theta.iter().zip(a).zip(t).map(|((th, a), t)| a * (th - t)).collect()
}

#[test]
fn si_path_integral_matches_naive_recompute() {
    let a = [3.0, 0.2];
    let target = [1.0, -2.0];
    let mut theta = Tensor::vector(vec![0.5, 0.5]).unwrap().with_grad();
    let mut si = SiState::new(&[&theta], 0.1, 1.0).unwrap();
    let mut opt = Optimizer::sgd(0.05).unwrap();
    let mut history = vec![theta.data().to_vec()];
    let mut grads = Vec::new();
    for _ in 0..100 {
        let g = quad_grad(theta.data(), &a, &target);
        let before = theta.data().to_vec();
        theta.zero_grad();
        theta.accumulate_grad(&g).unwrap();
        opt.step(&mut [&mut theta]).unwrap();
        let delta: Vec<f64> = theta.data().iter().zip(&before).map(|(x, y)| x - y).collect();
        si.accumulate(&[&g], &[&delta]).unwrap();
        grads.push(g);
        history.push(theta.data().to_vec());
    }
    for k in 0..2 {
        let mut naive = 0.0;
        for s in 0..100 {
            naive += -grads[s][k] * (history[s + 1][k] - history[s][k]);
        }
        assert_eq!(si.omega[0][k], naive);
    }
}

#[test]
fn si_protects_important_parameters() {
    // Task 1 pulls 20 coordinates with curvatures spread over two decades; task 2
    // pulls all of them equally elsewhere. High-Ω coordinates must move less.
    let n = 20;
    let a1: Vec<f64> = (0..n).map(|k| 0.05 * (1.12f64).powi(k as i32 * 2)).collect();
    let t1 = vec![1.0; n];
    let t2 = vec![-1.0; n];
    let a2 = vec![1.0; n];
    let mut theta = Tensor::vector(vec![0.0; n]).unwrap().with_grad();
    let mut si = SiState::new(&[&theta], 0.1, 1.0).unwrap();
    let mut opt = Optimizer::sgd(0.02).unwrap();
    let mut step = |theta: &mut Tensor, si: &mut SiState, a: &[f64], t: &[f64], penalize: bool| {
        let mut g = quad_grad(theta.data(), a, t);
        if penalize {
            for k in 0..n {
                g[k] += 2.0 * si.strength * si.importance[0][k] * (theta.data()[k] - si.anchor[0][k]);
            }
        }
        let before = theta.data().to_vec();
        theta.zero_grad();
        theta.accumulate_grad(&g).unwrap();
        opt.step(&mut [&mut *theta]).unwrap();
        let d: Vec<f64> = theta.data().iter().zip(&before).map(|(x, y)| x - y).collect();
        si.accumulate(&[&g], &[&d]).unwrap();
    };
    for _ in 0..200 {
        step(&mut theta, &mut si, &a1, &t1, false);
    }
    let anchor = theta.data().to_vec();
    si.consolidate(&[&anchor]).unwrap();
    for _ in 0..200 {
        step(&mut theta, &mut si, &a2, &t2, true);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| si.importance[0][i].total_cmp(&si.importance[0][j]));
    let moved = |ks: &[usize]| ks.iter().map(|&k| (theta.data()[k] - anchor[k]).abs()).sum::<f64>() / ks.len() as f64;
    let bottom = moved(&order[..n / 10]);
    let top = moved(&order[n - n / 10..]);
    assert!(top < bottom, "top-decile move {top} vs bottom {bottom}");
}

proptest! {
    #[test]
    fn losses_are_non_negative(
        vals in proptest::collection::vec(-3.0f64..3.0, 24),
        label in 0usize..4,
    ) {
        let mut tape = Tape::new();
        let mu = tape.constant_from(vec![2, 6], vals[..12].to_vec()).unwrap();
        let lv = tape.constant_from(vec![2, 6], vals[12..].to_vec()).unwrap();
        let k = kl_standard_normal(&mut tape, LatentGaussian { mu, logvar: lv }).unwrap();
        prop_assert!(tape.scalar(k).unwrap() >= 0.0);
        let logits = tape.constant_from(vec![2, 4], vals[..8].to_vec()).unwrap();
        let c = classification_loss(&mut tape, logits, &[label, 3 - label], &[0, 1, 2, 3]).unwrap();
        prop_assert!(tape.scalar(c).unwrap() >= 0.0);
        let p = Tensor::zeros(&[24]);
        let mut si = SiState::new(&[&p], 0.1, 1.0).unwrap();
        si.omega[0] = vals.clone();
        si.consolidate(&[&vals]).unwrap();
        prop_assert!(si.importance[0].iter().all(|&v| v >= 0.0));
        let shifted: Vec<f64> = vals.iter().map(|v| v * 0.5).collect();
        prop_assert!(si.penalty_value(&[&shifted]).unwrap() >= 0.0);
    }
}
