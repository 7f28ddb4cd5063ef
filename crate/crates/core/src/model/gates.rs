use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Per-task random binary masks over the decoder's hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextGateSet {
    widths: Vec<usize>,
    /// `masks[task][layer][unit]`, 1.0 = open, 0.0 = gated.
    masks: Vec<Vec<Vec<f64>>>,
    gate_fraction: f64,
    seed: u64,
}

/// Mask for one `(task, layer)` pair: exactly `round(fraction * width)` zeros.
///
/// The mask depends only on `(seed, task, layer)`: each pair owns its own
/// ChaCha stream.
pub fn gate_mask(seed: u64, task: usize, layer: usize, width: usize, fraction: f64) -> Vec<f64> {
    let zeros = (fraction * width as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((task as u64) << 32) | layer as u64);
    let mut units: Vec<usize> = (0..width).collect();
    units.shuffle(&mut rng);
    let mut mask = vec![1.0; width];
    for &u in &units[..zeros.min(width)] {
        mask[u] = 0.0;
    }
    mask
}

impl ContextGateSet {
    pub fn new(num_tasks: usize, layer_widths: &[usize], gate_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gate_fraction) {
            return Err(Error::contract(format!(
                "gate fraction {gate_fraction} outside [0, 1]"
            )));
        }
        let masks = (0..num_tasks)
            .map(|t| {
                layer_widths
                    .iter()
                    .enumerate()
                    .map(|(l, &w)| gate_mask(seed, t, l, w, gate_fraction))
                    .collect()
            })
            .collect();
        Ok(ContextGateSet {
            widths: layer_widths.to_vec(),
            masks,
            gate_fraction,
            seed,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.masks.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn gate_fraction(&self) -> f64 {
        self.gate_fraction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mask(&self, task: usize, layer: usize) -> Result<&[f64]> {
        self.masks
            .get(task)
            .and_then(|m| m.get(layer))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::contract(format!("no gate for task {task}, layer {layer}")))
    }

    /// Row-stacked masks for a batch whose rows belong to `tasks`.
    pub fn batch_mask(&self, tasks: &[usize], layer: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(tasks.len() * self.widths.get(layer).copied().unwrap_or(0));
        for &t in tasks {
            out.extend_from_slice(self.mask(t, layer)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_zero_is_all_open() {
        let g = ContextGateSet::new(3, &[10, 5], 0.0, 1).unwrap();
        for t in 0..3 {
            for l in 0..2 {
                assert!(g.mask(t, l).unwrap().iter().all(|&m| m == 1.0));
            }
        }
    }

    #[test]
    fn fraction_one_is_all_closed() {
        let g = ContextGateSet::new(2, &[7], 1.0, 1).unwrap();
        assert!(g.mask(1, 0).unwrap().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn exact_zero_count_and_reproducible() {
        let a = ContextGateSet::new(4, &[100, 33], 0.8, 42).unwrap();
        let b = ContextGateSet::new(4, &[100, 33], 0.8, 42).unwrap();
        assert_eq!(a, b);
        for t in 0..4 {
            let zeros = a.mask(t, 0).unwrap().iter().filter(|&&m| m == 0.0).count();
            assert_eq!(zeros, 80);
            let zeros = a.mask(t, 1).unwrap().iter().filter(|&&m| m == 0.0).count();
            assert_eq!(zeros, 26);
        }
        assert_ne!(a.mask(0, 0).unwrap(), a.mask(1, 0).unwrap());
    }

    #[test]
    fn masks_depend_only_on_seed_task_layer() {
        // Adding tasks or layers does not disturb existing masks.
        let small = ContextGateSet::new(2, &[50], 0.5, 9).unwrap();
        let big = ContextGateSet::new(5, &[50, 20, 8], 0.5, 9).unwrap();
        assert_eq!(small.mask(1, 0).unwrap(), big.mask(1, 0).unwrap());
        assert_eq!(big.mask(3, 2).unwrap(), gate_mask(9, 3, 2, 8, 0.5).as_slice());
    }

    #[test]
    fn out_of_range_fraction_rejected() {
        assert!(ContextGateSet::new(1, &[4], 1.5, 0).is_err());
    }
}
