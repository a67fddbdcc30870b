//! Quadrature and interpolation on uniformly sampled periodic data.
//!
//! Samples are `f(j T / J)` for `j = 0..J`; the endpoint `T` is not repeated.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::ops::{Add, Mul};

fn dft(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn idft(mut buf: Vec<Complex64>) -> Vec<f64> {
    let n = buf.len() as f64;
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(buf.len()).process(&mut buf);
    buf.into_iter().map(|z| z.re / n).collect()
}

/// Signed wavenumber of DFT bin `i`; the Nyquist bin maps to 0 (it is dropped
/// by the derivative operators).
fn wavenumber(i: usize, n: usize) -> f64 {
    if 2 * i == n {
        0.0
    } else if 2 * i < n {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Derivative of periodic samples with respect to `s`, for period `period`.
pub fn derivative(values: &[f64], period: f64) -> Vec<f64> {
    let n = values.len();
    let w = 2.0 * PI / period;
    let hat = dft(values);
    let d = hat
        .into_iter()
        .enumerate()
        .map(|(i, c)| c * Complex64::new(0.0, w * wavenumber(i, n)))
        .collect();
    idft(d)
}

/// Running integral `F(s_j) = int_0^{s_j} f ds` of periodic samples.
///
/// The mean contributes linearly, the oscillating part is integrated mode by
/// mode, which is exact for band-limited data.
pub fn antiderivative(values: &[f64], period: f64) -> Vec<f64> {
    let n = values.len();
    let w = 2.0 * PI / period;
    let hat = dft(values);
    let mean = hat[0].re / n as f64;
    let mut g = vec![Complex64::new(0.0, 0.0); n];
    for (i, c) in hat.iter().enumerate().skip(1) {
        let m = wavenumber(i, n);
        if m != 0.0 {
            g[i] = *c / Complex64::new(0.0, w * m);
        }
    }
    let g = idft(g);
    let g0 = g[0];
    (0..n)
        .map(|j| mean * (j as f64 * period / n as f64) + g[j] - g0)
        .collect()
}

/// Periodic trapezoidal rule over one period.
pub fn integrate(values: &[f64], period: f64) -> f64 {
    values.iter().sum::<f64>() * period / values.len() as f64
}

/// Signed area `∮ x dy` of a closed curve sampled uniformly in its parameter.
pub fn signed_area(x: &[f64], y: &[f64]) -> f64 {
    let dy = derivative(y, 2.0 * PI);
    let n = x.len() as f64;
    x.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>() * 2.0 * PI / n
}

const LAGRANGE_POINTS: usize = 8;

/// Node indices and weights of the local 8-point Lagrange stencil at `s`
/// for `n` periodic samples. On a node the stencil is that node alone.
pub fn lagrange_weights(n: usize, period: f64, s: f64) -> Vec<(usize, f64)> {
    let h = period / n as f64;
    let u = s / h;
    let base = u.floor();
    let frac = u - base;
    let base = base as i64;
    if frac == 0.0 {
        return vec![(base.rem_euclid(n as i64) as usize, 1.0)];
    }
    let half = (LAGRANGE_POINTS / 2) as i64;
    let nodes: Vec<i64> = (base - half + 1..=base + half).collect();
    nodes
        .iter()
        .map(|&ja| {
            let xa = (ja - base) as f64;
            let w = nodes
                .iter()
                .filter(|&&jb| jb != ja)
                .map(|&jb| {
                    let xb = (jb - base) as f64;
                    (frac - xb) / (xa - xb)
                })
                .product::<f64>();
            (ja.rem_euclid(n as i64) as usize, w)
        })
        .collect()
}

/// Local 8-point Lagrange interpolation of periodic samples at `s`.
pub fn interpolate<T>(values: &[T], period: f64, s: f64) -> T
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
{
    lagrange_weights(values.len(), period, s)
        .into_iter()
        .map(|(j, w)| values[j] * w)
        .reduce(|a, b| a + b)
        .expect("nonempty stencil")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..n).map(|j| f(2.0 * PI * j as f64 / n as f64)).collect()
    }

    #[test]
    fn derivative_of_trig_polynomial() {
        let v = samples(64, |t| (3.0 * t).sin() + 0.5 * t.cos());
        let d = derivative(&v, 2.0 * PI);
        for (j, dj) in d.iter().enumerate() {
            let t = 2.0 * PI * j as f64 / 64.0;
            assert!((dj - (3.0 * (3.0 * t).cos() - 0.5 * t.sin())).abs() < 1e-12);
        }
    }

    #[test]
    fn antiderivative_includes_mean_drift() {
        let v = samples(32, |t| 2.0 + t.cos());
        let f = antiderivative(&v, 2.0 * PI);
        for (j, fj) in f.iter().enumerate() {
            let t = 2.0 * PI * j as f64 / 32.0;
            assert!((fj - (2.0 * t + t.sin())).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_circle_area() {
        let x = samples(16, f64::cos);
        let y = samples(16, f64::sin);
        assert!((signed_area(&x, &y) - PI).abs() < 1e-13);
        let xr: Vec<f64> = x.iter().rev().cloned().collect();
        let yr: Vec<f64> = y.iter().rev().cloned().collect();
        assert!((signed_area(&xr, &yr) + PI).abs() < 1e-13);
    }

    #[test]
    fn lagrange_is_accurate_between_nodes() {
        let v = samples(128, |t| (2.0 * t).sin());
        for &s in &[0.013, 1.0, 3.3, 6.2] {
            assert!((interpolate(&v, 2.0 * PI, s) - (2.0 * s).sin()).abs() < 1e-11);
        }
        assert_eq!(interpolate(&v, 2.0 * PI, 2.0 * PI * 5.0 / 128.0), v[5]);
    }
}
