//! Digamma and log-sum-exp, the two special functions the variational
//! updates lean on.

use crate::scalar::Real;

/// Digamma function ψ(x) for x > 0.
///
/// Shifts the argument above 10 with the recurrence ψ(x) = ψ(x+1) − 1/x and
/// then applies the asymptotic series through the x⁻¹⁴ term.
pub fn digamma<T: Real>(x: T) -> T {
    if x.is_nan() || x <= T::zero() {
        return T::nan();
    }
    let mut x = x.as_f64();
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number coefficients B_2k / (2k).
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    T::lit(acc + x.ln() - 0.5 * inv - series)
}

/// ln Σ exp(v_i), stable for large magnitudes. Empty input gives −∞.
pub fn log_sum_exp<T: Real>(values: impl IntoIterator<Item = T> + Clone) -> T {
    let max = values
        .clone()
        .into_iter()
        .fold(T::neg_infinity(), |m, v| if v > m { v } else { m });
    if max == T::neg_infinity() || max.is_infinite() {
        return max;
    }
    let s: T = values.into_iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// Normalises `logits` in place into probabilities via log-sum-exp.
pub fn softmax_in_place<T: Real>(logits: &mut [T]) {
    let lse = log_sum_exp(logits.iter().copied());
    for v in logits.iter_mut() {
        *v = (*v - lse).exp();
    }
}
