//! Zero-order-hold discretization of a diagonal continuous-time SSM.

use crate::tensor::Real;

/// Below this `|a|` the input factor uses its `a → 0` limit.
pub const SERIES_A_THRESHOLD: f64 = 1e-8;

/// The input scaling `(e^{Δa} − 1)/a`, which tends to `Δ` as `a → 0`.
#[inline]
pub fn zoh_input_factor<T: Real>(a: T, delta: T) -> T {
    if a.abs() < T::of(SERIES_A_THRESHOLD) {
        delta
    } else {
        (delta * a).exp_m1() / a
    }
}

/// `∂/∂a` of [`zoh_input_factor`]: `(Δa·e^{Δa} − (e^{Δa} − 1))/a²`, evaluated
/// by its Taylor series `Δ²·Σ (k+1)x^k/(k+2)!` when `x = Δa` is small.
#[inline]
pub fn zoh_input_factor_da<T: Real>(a: T, delta: T) -> T {
    let x = delta * a;
    if x.abs() < T::of(1e-2) {
        let series = T::of(0.5)
            + x * (T::of(1.0 / 3.0) + x * (T::of(1.0 / 8.0) + x * (T::of(1.0 / 30.0) + x * T::of(1.0 / 144.0))));
        delta * delta * series
    } else {
        (x * x.exp() - x.exp_m1()) / (a * a)
    }
}

/// Discretizes one (a, b) pair with step `delta`: returns
/// `(ā, b̄) = (e^{Δa}, ((e^{Δa} − 1)/a)·b)`.
pub fn discretize_zoh<T: Real>(a: T, b: T, delta: T) -> (T, T) {
    ((delta * a).exp(), zoh_input_factor(a, delta) * b)
}
