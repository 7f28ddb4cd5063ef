use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};

/// One coarse-label byte, one fine-label byte, then 3x32x32 channel-major pixels.
pub const CIFAR_RECORD_BYTES: usize = 3074;
const SIDE: usize = 32;
const CHANNELS: usize = 3;
const NUM_FINE: usize = 100;

/// Loads a CIFAR-100 binary file using fine labels.
///
/// With `resolution = Some(r)`, each channel is downscaled to `r x r` by averaging
/// non-overlapping blocks; `r` must divide 32.
pub fn load_cifar100_binary(path: &Path, split: Split, resolution: Option<usize>) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, split, resolution)
}

fn decode(bytes: &[u8], split: Split, resolution: Option<usize>) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(Error::Data("CIFAR-100 file is empty".into()));
    }
    if !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        let whole = bytes.len() / CIFAR_RECORD_BYTES;
        return Err(Error::format(
            (whole * CIFAR_RECORD_BYTES) as u64,
            format!(
                "file length {} is not a multiple of {CIFAR_RECORD_BYTES}; expected {} bytes for {} records",
                bytes.len(),
                (whole + 1) * CIFAR_RECORD_BYTES,
                whole + 1
            ),
        ));
    }
    let side = resolution.unwrap_or(SIDE);
    if side == 0 || !SIDE.is_multiple_of(side) {
        return Err(Error::Data(format!(
            "resolution {side} does not divide {SIDE}"
        )));
    }
    let block = SIDE / side;
    let dim = CHANNELS * side * side;
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let fine = rec[1] as usize;
        if fine >= NUM_FINE {
            return Err(Error::format(
                (r * CIFAR_RECORD_BYTES + 1) as u64,
                format!("fine label {fine} outside [0, {NUM_FINE})"),
            ));
        }
        labels.push(fine);
        let px = &rec[2..];
        for c in 0..CHANNELS {
            let plane = &px[c * SIDE * SIDE..(c + 1) * SIDE * SIDE];
            for by in 0..side {
                for bx in 0..side {
                    let mut acc = 0.0;
                    for y in by * block..(by + 1) * block {
                        for x in bx * block..(bx + 1) * block {
                            acc += f64::from(plane[y * SIDE + x]) / 255.0;
                        }
                    }
                    inputs.push(acc / (block * block) as f64);
                }
            }
        }
    }
    Dataset::new(inputs, dim, labels, NUM_FINE, split)
}
