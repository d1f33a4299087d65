//! Float helpers routed through `libm` so the crate stays `no_std`.

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Normalizes log-weights in place into probabilities; returns `false` when
/// no entry is finite (nothing to normalize).
pub(crate) fn normalize_log_weights(logw: &mut [f64]) -> bool {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return false;
    }
    let mut total = 0.0;
    for w in logw.iter_mut() {
        *w = exp(*w - max);
        total += *w;
    }
    for w in logw.iter_mut() {
        *w /= total;
    }
    true
}
