//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written straight from the defining sums, with every
//! inner sum recomputed from scratch, so it shares no code path with the
//! library's accumulations.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Last index `<= tau` (1-based) whose rate exceeds `1e-12 * max`.
fn moving_end(eta: &[f64], tau: usize) -> usize {
    let peak = eta[..tau].iter().copied().fold(0.0, f64::max);
    (1..=tau)
        .rev()
        .find(|&t| eta[t - 1] > 1e-12 * peak)
        .expect("non-zero prefix")
}

fn sum(eta: &[f64], from: usize, to: usize) -> f64 {
    (from..=to).map(|t| eta[t - 1]).sum()
}

fn sum_sq(eta: &[f64], from: usize, to: usize) -> f64 {
    (from..=to).map(|t| eta[t - 1] * eta[t - 1]).sum()
}

/// Last-iterate bound by the double sum, `O(tau^2)`.
pub fn last_iterate(l: f64, d: f64, g: f64, eta: &[f64], tau: usize) -> f64 {
    let n = moving_end(eta, tau);
    let s = sum(eta, 1, n);
    let mut inner = sum_sq(eta, 1, n) / s;
    for k in 1..n {
        inner += eta[k - 1] / sum(eta, k + 1, n) * (sum_sq(eta, k, n) / sum(eta, k, n));
    }
    l + d * d / (2.0 * s) + 0.5 * g * g * inner
}

/// Averaged-iterate bound.
pub fn averaged_iterate(l: f64, d: f64, g: f64, eta: &[f64], tau: usize) -> f64 {
    let s = sum(eta, 1, tau);
    l + d * d / (2.0 * s) + g * g * sum_sq(eta, 1, tau) / (2.0 * s)
}

/// Schedule multipliers written directly from their definitions.
pub fn multipliers(kind: &str, horizon: usize, c: f64) -> Vec<f64> {
    let h = horizon as f64;
    (1..=horizon)
        .map(|t| {
            let t = t as f64;
            match kind {
                "constant" => 1.0,
                "sqrt_inverse" => 1.0 / (t + 1.0).sqrt(),
                "linear_decay" => 1.0 - t / h,
                "cosine_decay" => (1.0 + (PI * t / h).cos()) / 2.0,
                "wsd" => {
                    if t < c * h {
                        1.0
                    } else {
                        (h - t) / (h - c * h)
                    }
                }
                _ => panic!("unknown kind {kind}"),
            }
        })
        .collect()
}

/// Closed-form `(eta*, bound*)` for `L_* = 0`, written from the table of
/// optimal rates and bounds.
pub fn closed_optimum(kind: &str, d: f64, g: f64, horizon: f64, c: f64) -> (f64, f64) {
    let ln_t = horizon.ln();
    match kind {
        "constant" => (d / (g * (horizon * ln_t).sqrt()), d * g * (ln_t / horizon).sqrt()),
        "sqrt_inverse" => (d / (g * ln_t.sqrt()), d * g * (ln_t / (4.0 * horizon)).sqrt()),
        "linear_decay" => (d / (g * horizon.sqrt()), 2.0 * d * g / horizon.sqrt()),
        "cosine_decay" => (
            d / (g * (1.061 * horizon).sqrt()),
            2.0 * d * g * (1.061 / horizon).sqrt(),
        ),
        "wsd" => {
            let k = 1.0 + 0.5 * ((1.0 + c) / (1.0 - c)).ln();
            (
                d / (g * ((1.0 + c) * k * horizon).sqrt()),
                2.0 * d * g * (k / ((1.0 + c) * horizon)).sqrt(),
            )
        }
        _ => panic!("unknown kind {kind}"),
    }
}

/// Closed-form bound at a given peak rate, `L_* = 0`.
pub fn closed_bound(kind: &str, d: f64, g: f64, eta: f64, horizon: f64, c: f64) -> f64 {
    let ln_t = horizon.ln();
    let root = horizon.sqrt();
    match kind {
        "constant" => d * d / (2.0 * horizon * eta) + eta * g * g * ln_t / 2.0,
        "sqrt_inverse" => d * d / (4.0 * root * eta) + eta * g * g * ln_t / (4.0 * root),
        "linear_decay" => d * d / (horizon * eta) + eta * g * g,
        "cosine_decay" => d * d / (horizon * eta) + 1.061 * eta * g * g,
        "wsd" => d * d / ((1.0 + c) * horizon * eta) + eta * g * g * (1.0 + 0.5 * ((1.0 + c) / (1.0 - c)).ln()),
        _ => panic!("unknown kind {kind}"),
    }
}

pub const KINDS: [&str; 5] = ["constant", "sqrt_inverse", "linear_decay", "cosine_decay", "wsd"];
