//! Central finite-difference oracle for tape gradients.

use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero pairs from dominating.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares tape gradients of `f` against central differences at `probes`
/// randomly chosen coordinates (all coordinates when `probes == 0`).
///
/// `f` must build a scalar on the tape from leaves bound to `inputs`.
pub fn check<F, R>(inputs: &[Tensor], probes: usize, rng: &mut R, f: F) -> Result<Vec<Probe>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    R: Rng,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_grad()))
        .collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t)).collect();
        let out = f(&mut tape, &vars)?;
        tape.scalar(out)
    };

    let coords: Vec<(usize, usize)> = if probes == 0 {
        inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len()).map(move |k| (i, k)))
            .collect()
    } else {
        let total: usize = inputs.iter().map(Tensor::len).sum();
        (0..probes)
            .map(|_| {
                let mut flat = rng.gen_range(0..total);
                let mut i = 0;
                while flat >= inputs[i].len() {
                    flat -= inputs[i].len();
                    i += 1;
                }
                (i, flat)
            })
            .collect()
    };

    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for (i, k) in coords {
        let orig = work[i].data()[k];
        work[i].data_mut()[k] = orig + FD_STEP;
        let plus = eval(&work)?;
        work[i].data_mut()[k] = orig - FD_STEP;
        let minus = eval(&work)?;
        work[i].data_mut()[k] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[i][k];
        out.push(Probe {
            input: i,
            index: k,
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric),
        });
    }
    Ok(out)
}

pub fn max_rel_err(probes: &[Probe]) -> f64 {
    probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
}
