use alloc::vec::Vec;

use rand::Rng;

use super::{Real, Tensor};

/// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<F: Real, R: Rng + ?Sized>(rng: &mut R, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor<F> {
    let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::from_f64(rng.random_range(-a..a))).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Standard normal draws (Box-Muller).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > f64::MIN_POSITIVE {
            let v: f64 = rng.random();
            return libm::sqrt(-2.0 * libm::log(u)) * libm::cos(core::f64::consts::TAU * v);
        }
    }
}
