use rand::Rng;

use super::config::{Activation, NetworkConfig, ReconKind};
use super::gates::ContextGateSet;
use super::prior::GaussianMixturePrior;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Affine layer `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let b = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], w).unwrap().with_grad(),
            bias: Tensor::new(vec![fan_out], b).unwrap().with_grad(),
        }
    }

    pub fn set_trainable(&mut self, on: bool) {
        self.weight.set_requires_grad(on);
        self.bias.set_requires_grad(on);
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.weight)?;
        tape.add_row(h, self.bias)
    }
}

/// Single VAE-with-classifier: frozen perceptual block, trainable fc encoder,
/// Gaussian latent heads, softmax class head on the top encoder layer, a mirrored
/// decoder, the class-mode prior and per-task decoder gates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayModel {
    pub(crate) config: NetworkConfig,
    pub perceptual: Vec<Linear>,
    pub encoder: Vec<Linear>,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub classifier: Linear,
    /// `decoder[j]` produces encoder level `top - j`; `decoder[0]` reads the latent.
    pub decoder: Vec<Linear>,
    pub prior: GaussianMixturePrior,
    pub gates: ContextGateSet,
    pub(crate) perceptual_frozen: bool,
}

/// Parameters of a model recorded on a tape.
#[derive(Debug, Clone)]
pub struct Bound<'m> {
    model: &'m ReplayModel,
    perceptual: Vec<LinearVars>,
    encoder: Vec<LinearVars>,
    mu_head: LinearVars,
    logvar_head: LinearVars,
    classifier: LinearVars,
    decoder: Vec<LinearVars>,
    pub prior_means: Var,
    pub prior_logvars: Var,
    order: Vec<Var>,
}

/// Latent posterior parameters on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LatentGaussian {
    pub mu: Var,
    pub logvar: Var,
}

/// Result of an encoder pass starting at `from_level`.
#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub from_level: usize,
    /// Post-activation of every level `from_level..=top`; `levels[0]` is the input.
    pub levels: Vec<Var>,
    pub latent: LatentGaussian,
    pub logits: Var,
}

impl EncodeOutput {
    pub fn level(&self, level: usize) -> Result<Var> {
        level
            .checked_sub(self.from_level)
            .and_then(|i| self.levels.get(i).copied())
            .ok_or_else(|| {
                Error::contract(format!(
                    "level {level} not computed (encoding started at {})",
                    self.from_level
                ))
            })
    }
}

impl ReplayModel {
    /// Randomly initialized model. The prior is trainable only with `conditional`.
    pub fn new<R: Rng>(
        config: NetworkConfig,
        conditional: bool,
        gate_seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let top = config.top_level();
        let mut perceptual = Vec::new();
        for l in 1..=config.num_perceptual() {
            perceptual.push(Linear::new(config.level_width(l - 1), config.level_width(l), rng));
        }
        let mut encoder = Vec::new();
        for l in config.num_perceptual() + 1..=top {
            encoder.push(Linear::new(config.level_width(l - 1), config.level_width(l), rng));
        }
        let top_w = config.level_width(top);
        let mu_head = Linear::new(top_w, config.latent_dim, rng);
        let logvar_head = Linear::new(top_w, config.latent_dim, rng);
        let classifier = Linear::new(top_w, config.num_classes, rng);
        let mut decoder = vec![Linear::new(config.latent_dim, top_w, rng)];
        for l in (0..top).rev() {
            decoder.push(Linear::new(config.level_width(l + 1), config.level_width(l), rng));
        }
        let prior = if conditional {
            GaussianMixturePrior::conditional(config.num_classes, config.latent_dim, rng)
        } else {
            GaussianMixturePrior::standard_normal(config.num_classes, config.latent_dim)
        };
        let gates = ContextGateSet::new(
            config.num_tasks,
            &config.gated_widths(),
            config.gate_fraction,
            gate_seed,
        )?;
        Ok(ReplayModel {
            config,
            perceptual,
            encoder,
            mu_head,
            logvar_head,
            classifier,
            decoder,
            prior,
            gates,
            perceptual_frozen: false,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn is_perceptual_frozen(&self) -> bool {
        self.perceptual_frozen
    }

    /// Stops gradient flow into the perceptual block for good.
    pub fn freeze_perceptual(&mut self) {
        self.perceptual.iter_mut().for_each(|l| l.set_trainable(false));
        self.perceptual_frozen = true;
    }

    /// Named parameter groups in canonical order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut named: Vec<(String, &Tensor)> = Vec::new();
        for (i, l) in self.perceptual.iter().enumerate() {
            named.push((format!("perceptual.{i}.weight"), &l.weight));
            named.push((format!("perceptual.{i}.bias"), &l.bias));
        }
        for (i, l) in self.encoder.iter().enumerate() {
            named.push((format!("fcE.fcLayer{}.linear.weight", i + 1), &l.weight));
            named.push((format!("fcE.fcLayer{}.linear.bias", i + 1), &l.bias));
        }
        for (name, l) in [
            ("toZ.mu", &self.mu_head),
            ("toZ.logvar", &self.logvar_head),
            ("classifier", &self.classifier),
        ] {
            named.push((format!("{name}.weight"), &l.weight));
            named.push((format!("{name}.bias"), &l.bias));
        }
        for (j, l) in self.decoder.iter().enumerate() {
            named.push((format!("decoder.{j}.weight"), &l.weight));
            named.push((format!("decoder.{j}.bias"), &l.bias));
        }
        named.push(("prior.means".into(), &self.prior.means));
        named.push(("prior.logvars".into(), &self.prior.logvars));
        named
    }

    /// Mutable parameters in the same canonical order as [`Self::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        let linears = self
            .perceptual
            .iter_mut()
            .chain(self.encoder.iter_mut())
            .chain([&mut self.mu_head, &mut self.logvar_head, &mut self.classifier])
            .chain(self.decoder.iter_mut());
        for l in linears {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.prior.means);
        out.push(&mut self.prior.logvars);
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    /// Number of scalar parameters that currently receive gradients.
    pub fn trainable_len(&self) -> usize {
        self.params()
            .iter()
            .filter(|t| t.requires_grad())
            .map(|t| t.len())
            .sum()
    }

    /// Records all parameters on `tape`; trainable ones as gradient leaves.
    pub fn bind(&self, tape: &mut Tape) -> Bound<'_> {
        self.bind_with(tape, true)
    }

    /// Records all parameters as constants (teacher snapshots, evaluation).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound<'_> {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> Bound<'_> {
        let mut order = Vec::new();
        let mut bind = |t: &Tensor, tape: &mut Tape| {
            let v = if trainable { tape.leaf(t) } else { tape.constant(t) };
            order.push(v);
            v
        };
        let mut lin = |l: &Linear, tape: &mut Tape| LinearVars {
            weight: bind(&l.weight, tape),
            bias: bind(&l.bias, tape),
        };
        let perceptual = self.perceptual.iter().map(|l| lin(l, tape)).collect();
        let encoder = self.encoder.iter().map(|l| lin(l, tape)).collect();
        let mu_head = lin(&self.mu_head, tape);
        let logvar_head = lin(&self.logvar_head, tape);
        let classifier = lin(&self.classifier, tape);
        let decoder = self.decoder.iter().map(|l| lin(l, tape)).collect();
        let prior_means = bind(&self.prior.means, tape);
        let prior_logvars = bind(&self.prior.logvars, tape);
        Bound {
            model: self,
            perceptual,
            encoder,
            mu_head,
            logvar_head,
            classifier,
            decoder,
            prior_means,
            prior_logvars,
            order,
        }
    }

    /// Replaces every gradient slot with the tape's gradient for the bound leaf.
    pub fn load_grads(&mut self, tape: &Tape, order: &[Var]) -> Result<()> {
        let params = self.params_mut();
        if params.len() != order.len() {
            return Err(Error::contract("binding does not match model parameters"));
        }
        for (p, &v) in params.into_iter().zip(order) {
            p.zero_grad();
            if !p.requires_grad() {
                continue;
            }
            match tape.grad(v) {
                Some(g) => p.accumulate_grad(g)?,
                None => p.accumulate_grad(&vec![0.0; p.len()])?,
            }
        }
        Ok(())
    }

    /// Deterministic digest of the perceptual block's bits.
    pub fn perceptual_fingerprint(&self) -> u64 {
        fingerprint(self.perceptual.iter().flat_map(|l| [&l.weight, &l.bias]))
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(self.params().into_iter())
    }
}

/// FNV-1a over the raw bits of the given tensors.
pub fn fingerprint<'a>(tensors: impl Iterator<Item = &'a Tensor>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tensors {
        for v in t.data() {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}

impl<'m> Bound<'m> {
    pub fn model(&self) -> &'m ReplayModel {
        self.model
    }

    pub fn config(&self) -> &'m NetworkConfig {
        &self.model.config
    }

    /// Leaves in canonical parameter order, for [`ReplayModel::load_grads`].
    pub fn order(&self) -> &[Var] {
        &self.order
    }

    /// Typed handles of the trainable-parameter leaves (for SI bookkeeping).
    pub fn param_vars(&self) -> Vec<Var> {
        self.order.clone()
    }

    fn check_width(&self, tape: &Tape, x: Var, level: usize) -> Result<()> {
        let want = self.config().level_width(level);
        match tape.shape(x) {
            [_, w] if *w == want => Ok(()),
            s => Err(Error::dim(format!(
                "level {level} expects width {want}, got shape {s:?}"
            ))),
        }
    }

    /// Runs the encoder from `from_level` (0 = raw input) to the heads.
    pub fn encode_from(&self, tape: &mut Tape, x: Var, from_level: usize) -> Result<EncodeOutput> {
        let cfg = self.config();
        let top = cfg.top_level();
        if from_level > top {
            return Err(Error::contract(format!("cannot encode from level {from_level}")));
        }
        self.check_width(tape, x, from_level)?;
        let p = cfg.num_perceptual();
        let mut levels = vec![x];
        let mut h = x;
        for l in from_level + 1..=top {
            if l <= p {
                h = self.perceptual[l - 1].forward(tape, h)?;
                if cfg.perceptual_activation == Activation::Relu {
                    h = tape.relu(h)?;
                }
            } else {
                h = self.encoder[l - p - 1].forward(tape, h)?;
                h = tape.relu(h)?;
            }
            levels.push(h);
        }
        let mu = self.mu_head.forward(tape, h)?;
        let logvar = self.logvar_head.forward(tape, h)?;
        let logits = self.classifier.forward(tape, h)?;
        Ok(EncodeOutput {
            from_level,
            levels,
            latent: LatentGaussian { mu, logvar },
            logits,
        })
    }

    /// Runs encoder layers only, carrying an activation at `from` up to level `to`.
    pub fn lift(&self, tape: &mut Tape, x: Var, from: usize, to: usize) -> Result<Var> {
        let cfg = self.config();
        if from > to || to > cfg.top_level() {
            return Err(Error::contract(format!("cannot lift level {from} to {to}")));
        }
        self.check_width(tape, x, from)?;
        let p = cfg.num_perceptual();
        let mut h = x;
        for l in from + 1..=to {
            if l <= p {
                h = self.perceptual[l - 1].forward(tape, h)?;
                if cfg.perceptual_activation == Activation::Relu {
                    h = tape.relu(h)?;
                }
            } else {
                h = self.encoder[l - p - 1].forward(tape, h)?;
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<EncodeOutput> {
        self.encode_from(tape, x, 0)
    }

    /// Decodes `z` down to `stop_level`. With `gate_tasks`, row `i` of every hidden
    /// decoder layer is multiplied by the context gate of task `gate_tasks[i]`.
    pub fn decode(
        &self,
        tape: &mut Tape,
        z: Var,
        gate_tasks: Option<&[usize]>,
        stop_level: usize,
    ) -> Result<Var> {
        let cfg = self.config();
        let top = cfg.top_level();
        if stop_level > top {
            return Err(Error::contract(format!(
                "stop level {stop_level} deeper than the {top}-layer decoder"
            )));
        }
        let batch = match tape.shape(z) {
            [b, d] if *d == cfg.latent_dim => *b,
            s => return Err(Error::dim(format!("latent of shape {s:?}"))),
        };
        if let Some(tasks) = gate_tasks {
            if tasks.len() != batch {
                return Err(Error::dim(format!(
                    "{} gate tasks for batch of {batch}",
                    tasks.len()
                )));
            }
        }
        let mut h = z;
        for j in 0..=top - stop_level {
            let level = top - j;
            h = self.decoder[j].forward(tape, h)?;
            if level > stop_level {
                h = tape.relu(h)?;
                if let Some(tasks) = gate_tasks {
                    let mask = self.model.gates.batch_mask(tasks, level - 1)?;
                    let m = tape.constant_from(vec![batch, cfg.level_width(level)], mask)?;
                    h = tape.mul(h, m)?;
                }
            } else if level == 0 && cfg.input_recon == ReconKind::Bernoulli {
                h = tape.sigmoid(h)?;
            }
        }
        Ok(h)
    }

    /// Prior mode parameters of `class` as tape rows.
    pub fn prior_mode(&self, tape: &mut Tape, class: usize) -> Result<(Var, Var)> {
        Ok((
            tape.select_row(self.prior_means, class)?,
            tape.select_row(self.prior_logvars, class)?,
        ))
    }
}

/// `z = mu + exp(logvar / 2) ⊙ noise`.
pub fn reparameterize(tape: &mut Tape, latent: LatentGaussian, noise: Var) -> Result<Var> {
    if tape.shape(noise) != tape.shape(latent.mu) {
        return Err(Error::dim(format!(
            "noise shape {:?} vs mu {:?}",
            tape.shape(noise),
            tape.shape(latent.mu)
        )));
    }
    let half = tape.scale(latent.logvar, 0.5)?;
    let std = tape.exp(half)?;
    let scaled = tape.mul(std, noise)?;
    tape.add(latent.mu, scaled)
}
