//! Scalar log-domain helpers.

/// `ln(e^a + e^b)` computed as `max + ln(1 + e^-|a-b|)`.
///
/// `-inf` operands are absorbed, so `log_add_exp(-inf, x) == x`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

/// Log-sum-exp over a slice; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

/// In-place log-softmax of one node, scaled by `1 / tau` first.
pub fn log_softmax_into(logits: &[f64], tau: f64, out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max) / tau;
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = z / tau - max;
        sum += libm::exp(*o);
    }
    let log_norm = libm::log(sum);
    for o in out.iter_mut() {
        *o -= log_norm;
    }
}

/// Entropy in nats of a normalized distribution.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * libm::log(p))
        .sum()
}
