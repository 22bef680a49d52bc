//! Exhaustive path enumeration, used to check the lattice recursions.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lattice::{LabelSequence, LogitLattice};
use crate::math::log_sum_exp;

/// Largest `T + U` accepted by [`brute_force_rnnt_loss`].
pub const MAX_ENUMERATION: usize = 24;

/// Negative log of the summed probability of every monotone alignment.
///
/// Each alignment interleaves `T - 1` blanks and `U` labels, then emits the
/// terminal blank at `(T - 1, U)`. Node normalization is done here from the
/// raw logits so this shares no code path with [`crate::lattice`].
pub fn brute_force_rnnt_loss(lattice: &LogitLattice, labels: &LabelSequence) -> Result<f64> {
    let frames = lattice.frames();
    let u_len = lattice.label_len();
    if frames + u_len > MAX_ENUMERATION {
        return Err(Error::Capacity {
            size: frames + u_len,
            limit: MAX_ENUMERATION,
        });
    }
    labels.validate_for(lattice)?;

    let log_prob = |t: usize, u: usize, k: usize| -> f64 {
        let z = lattice.node(t, u);
        z[k] - log_sum_exp(z)
    };

    let steps = frames - 1 + u_len;
    let mut path_scores = Vec::new();
    // Bit i set means step i emits a label.
    for mask in 0u32..(1u32 << steps) {
        if mask.count_ones() as usize != u_len {
            continue;
        }
        let (mut t, mut u, mut score) = (0usize, 0usize, 0.0);
        for step in 0..steps {
            if mask & (1 << step) != 0 {
                score += log_prob(t, u, labels.tokens()[u]);
                u += 1;
            } else {
                score += log_prob(t, u, 0);
                t += 1;
            }
        }
        score += log_prob(t, u, 0);
        path_scores.push(score);
    }
    Ok(-log_sum_exp(&path_scores))
}
