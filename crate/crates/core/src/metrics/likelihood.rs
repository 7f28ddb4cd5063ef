use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::distribution::DistributionSummary;
use crate::error::{Error, Result};
use crate::losses::reconstruction_per_sample;
use crate::model::{diag_normal_log_density, Bound, ReconKind, ReplayModel};
use crate::tensor::{logsumexp, Tape, Tensor, Var};

/// Importance samples per input for diagnostic likelihood estimates.
pub const DIAGNOSTIC_IMPORTANCE_SAMPLES: usize = 128;

const CHUNK: usize = 256;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Where a model produces reconstructions and where they are scored.
///
/// When `decode_level < eval_level` the decoded activation is carried up to
/// `eval_level` through the (frozen) encoder layers before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelView {
    pub decode_level: usize,
    pub eval_level: usize,
}

impl LevelView {
    pub fn at(level: usize) -> Self {
        LevelView {
            decode_level: level,
            eval_level: level,
        }
    }

    fn validate(&self, model: &ReplayModel) -> Result<()> {
        if self.decode_level > self.eval_level || self.eval_level > model.config().top_level() {
            return Err(Error::contract(format!(
                "cannot score level-{} reconstructions at level {}",
                self.decode_level, self.eval_level
            )));
        }
        Ok(())
    }
}

/// `log(mean(exp(xs)))`, stable for large magnitudes.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    logsumexp(xs) - (xs.len() as f64).ln()
}

fn predict(b: &Bound<'_>, tape: &mut Tape, z: Var, gates: Option<&[usize]>, view: LevelView) -> Result<Var> {
    let d = b.decode(tape, z, gates, view.decode_level)?;
    if view.decode_level < view.eval_level {
        b.lift(tape, d, view.decode_level, view.eval_level)
    } else {
        Ok(d)
    }
}

fn check_inputs(model: &ReplayModel, x: &Tensor, gate_tasks: Option<&[usize]>) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != model.config().input_dim {
        return Err(Error::dim(format!(
            "inputs of shape {:?} for input width {}",
            x.shape(),
            model.config().input_dim
        )));
    }
    if let Some(g) = gate_tasks {
        if g.len() != x.rows() {
            return Err(Error::dim(format!("{} gate tasks for {} rows", g.len(), x.rows())));
        }
    }
    Ok(())
}

fn chunk_gates(gate_tasks: Option<&[usize]>, start: usize, len: usize) -> Option<&[usize]> {
    gate_tasks.map(|g| &g[start..start + len])
}

/// Per-sample reconstruction error using the mean latent (no sampling).
pub fn reconstruction_errors(
    model: &ReplayModel,
    x: &Tensor,
    gate_tasks: Option<&[usize]>,
    view: LevelView,
) -> Result<Vec<f64>> {
    view.validate(model)?;
    check_inputs(model, x, gate_tasks)?;
    let kind = model.config().recon_kind(view.eval_level);
    let width = model.config().level_width(view.eval_level);
    let rows: Vec<usize> = (0..x.rows()).collect();
    let mut out = Vec::with_capacity(x.rows());
    for (ci, chunk) in rows.chunks(CHUNK).enumerate() {
        let xc = x.gather_rows(chunk)?;
        let mut tape = Tape::new();
        let b = model.bind_frozen(&mut tape);
        let xv = tape.constant(&xc);
        let enc = b.encode(&mut tape, xv)?;
        let target = enc.level(view.eval_level)?;
        let gates = chunk_gates(gate_tasks, ci * CHUNK, chunk.len());
        let pred = predict(&b, &mut tape, enc.latent.mu, gates, view)?;
        out.extend(reconstruction_per_sample(tape.value(pred), tape.value(target), width, kind)?);
    }
    Ok(out)
}

pub fn reconstruction_error_distribution(
    model: &ReplayModel,
    x: &Tensor,
    gate_tasks: Option<&[usize]>,
    view: LevelView,
) -> Result<DistributionSummary> {
    DistributionSummary::from_values(reconstruction_errors(model, x, gate_tasks, view)?)
}

/// `log p(target | z)` per row for the likelihood family used at the scoring level.
fn log_likelihood_rows(pred: &[f64], target: &[f64], width: usize, kind: ReconKind) -> Result<Vec<f64>> {
    let nll = reconstruction_per_sample(pred, target, width, kind)?;
    Ok(match kind {
        ReconKind::Mse => nll.into_iter().map(|sse| -0.5 * sse - 0.5 * width as f64 * LN_2PI).collect(),
        ReconKind::Bernoulli => nll.into_iter().map(|v| -v).collect(),
    })
}

/// Importance-sampled `log p(h)` for each row, where `h` is the encoder
/// activation at `view.eval_level`:
/// `log (1/S) Σ_s p(h | z_s) p(z_s) / q(z_s | x)`, with `z_s ~ q(z | x)` and
/// `p(z)` the mixture over the prior's seen classes.
pub fn estimate_log_likelihood<R: Rng>(
    model: &ReplayModel,
    x: &Tensor,
    gate_tasks: Option<&[usize]>,
    view: LevelView,
    n_importance_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_importance_samples == 0 {
        return Err(Error::contract("need at least one importance sample"));
    }
    view.validate(model)?;
    check_inputs(model, x, gate_tasks)?;
    let cfg = model.config();
    let kind = cfg.recon_kind(view.eval_level);
    let width = cfg.level_width(view.eval_level);
    let d = cfg.latent_dim;
    let rows: Vec<usize> = (0..x.rows()).collect();
    let mut out = Vec::with_capacity(x.rows());
    for (ci, chunk) in rows.chunks(CHUNK).enumerate() {
        let n = chunk.len();
        let xc = x.gather_rows(chunk)?;
        let gates = chunk_gates(gate_tasks, ci * CHUNK, n);
        let (target, mu, logvar) = {
            let mut tape = Tape::new();
            let b = model.bind_frozen(&mut tape);
            let xv = tape.constant(&xc);
            let enc = b.encode(&mut tape, xv)?;
            (
                tape.value(enc.level(view.eval_level)?).to_vec(),
                tape.value(enc.latent.mu).to_vec(),
                tape.value(enc.latent.logvar).to_vec(),
            )
        };
        let mut weights = vec![Vec::with_capacity(n_importance_samples); n];
        for _ in 0..n_importance_samples {
            let mut z = Vec::with_capacity(n * d);
            for k in 0..n * d {
                let eps: f64 = StandardNormal.sample(&mut *rng);
                z.push(mu[k] + (0.5 * logvar[k]).exp() * eps);
            }
            let mut tape = Tape::new();
            let b = model.bind_frozen(&mut tape);
            let zv = tape.constant_from(vec![n, d], z.clone())?;
            let pred = predict(&b, &mut tape, zv, gates, view)?;
            let lpx = log_likelihood_rows(tape.value(pred), &target, width, kind)?;
            for i in 0..n {
                let zi = &z[i * d..(i + 1) * d];
                let lpz = model.prior.log_density(zi)?;
                let lq = diag_normal_log_density(zi, &mu[i * d..(i + 1) * d], &logvar[i * d..(i + 1) * d]);
                weights[i].push(lpx[i] + lpz - lq);
            }
        }
        out.extend(weights.iter().map(|w| log_mean_exp(w)));
    }
    Ok(out)
}
