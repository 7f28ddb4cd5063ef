use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Synaptic Intelligence bookkeeping over a fixed list of parameter tensors.
///
/// All per-parameter arrays are stored group by group in the order the
/// tensors were registered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiState {
    /// Running path integral since the last consolidation.
    pub omega: Vec<Vec<f64>>,
    /// Parameter values at the last consolidation.
    pub anchor: Vec<Vec<f64>>,
    /// Consolidated importance, always non-negative.
    pub importance: Vec<Vec<f64>>,
    pub damping: f64,
    pub strength: f64,
}

fn check_lengths(what: &str, want: &[Vec<f64>], got: &[&[f64]]) -> Result<()> {
    if want.len() != got.len() || want.iter().zip(got).any(|(w, g)| w.len() != g.len()) {
        return Err(Error::contract(format!("{what} does not match SI parameter layout")));
    }
    Ok(())
}

impl SiState {
    /// Starts tracking `params`, anchored at their current values.
    pub fn new(params: &[&Tensor], damping: f64, strength: f64) -> Result<Self> {
        if !(damping > 0.0) {
            return Err(Error::config("si.damping", "must be positive"));
        }
        if !(strength >= 0.0) {
            return Err(Error::config("si.c", "must be non-negative"));
        }
        Ok(SiState {
            omega: params.iter().map(|t| vec![0.0; t.len()]).collect(),
            anchor: params.iter().map(|t| t.data().to_vec()).collect(),
            importance: params.iter().map(|t| vec![0.0; t.len()]).collect(),
            damping,
            strength,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.anchor.len()
    }

    pub fn len(&self) -> usize {
        self.anchor.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `ω_k += −g_k · Δθ_k`, with `g` the gradient the step used.
    pub fn accumulate(&mut self, grads: &[&[f64]], deltas: &[&[f64]]) -> Result<()> {
        check_lengths("gradient", &self.omega, grads)?;
        check_lengths("parameter delta", &self.omega, deltas)?;
        for ((w, g), d) in self.omega.iter_mut().zip(grads).zip(deltas) {
            for ((wk, gk), dk) in w.iter_mut().zip(g.iter()).zip(d.iter()) {
                *wk += -gk * dk;
            }
        }
        Ok(())
    }

    /// Folds the path integral into the importance and re-anchors at `current`.
    pub fn consolidate(&mut self, current: &[&[f64]]) -> Result<()> {
        check_lengths("parameters", &self.anchor, current)?;
        let xi = self.damping;
        for (((big, w), a), th) in self
            .importance
            .iter_mut()
            .zip(self.omega.iter_mut())
            .zip(self.anchor.iter_mut())
            .zip(current)
        {
            for k in 0..big.len() {
                let delta = th[k] - a[k];
                big[k] += w[k].max(0.0) / (delta * delta + xi);
                a[k] = th[k];
                w[k] = 0.0;
            }
        }
        Ok(())
    }

    /// `c · Σ Ω_k (θ_k − θ̃_k)²` evaluated off-tape.
    pub fn penalty_value(&self, current: &[&[f64]]) -> Result<f64> {
        check_lengths("parameters", &self.anchor, current)?;
        let mut s = 0.0;
        for ((big, a), th) in self.importance.iter().zip(&self.anchor).zip(current) {
            for k in 0..big.len() {
                let d = th[k] - a[k];
                s += big[k] * d * d;
            }
        }
        Ok(self.strength * s)
    }

    /// True when no importance has been consolidated yet.
    pub fn is_inert(&self) -> bool {
        self.importance.iter().flatten().all(|&v| v == 0.0)
    }

    /// The penalty recorded on `tape` over the parameter leaves `vars`.
    pub fn penalty(&self, tape: &mut Tape, vars: &[Var]) -> Result<Var> {
        if vars.len() != self.anchor.len() {
            return Err(Error::contract(format!(
                "{} parameter leaves for {} SI groups",
                vars.len(),
                self.anchor.len()
            )));
        }
        let mut total: Option<Var> = None;
        for ((&v, a), big) in vars.iter().zip(&self.anchor).zip(&self.importance) {
            if tape.value(v).len() != a.len() {
                return Err(Error::contract("parameter leaf does not match its SI anchor"));
            }
            let shape = tape.shape(v).to_vec();
            let anchor = tape.constant_from(shape.clone(), a.clone())?;
            let weight = tape.constant_from(shape, big.clone())?;
            let d = tape.sub(v, anchor)?;
            let sq = tape.mul(d, d)?;
            let w = tape.mul(sq, weight)?;
            let s = tape.sum(w)?;
            total = Some(match total {
                Some(t) => tape.add(t, s)?,
                None => s,
            });
        }
        match total {
            Some(t) => tape.scale(t, self.strength),
            None => tape.constant_from(vec![1], vec![0.0]),
        }
    }
}
