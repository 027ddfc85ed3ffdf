//! Loss bounds for SGD on convex, bounded-gradient objectives.
//!
//! For a learning-rate sequence `eta_1..=eta_T` and coefficients
//! `(L_*, D, G)`:
//!
//! ```text
//! averaged:  L_* + D^2 / (2 S) + G^2 sum_{t<=tau} eta_t^2 / (2 S)
//! last:      averaged + (G^2/2) sum_{k<tau} eta_k / S_{k+1..tau} * Q_{k..tau} / S_{k..tau}
//! ```
//!
//! where `S` is a sum of learning rates and `Q` a sum of their squares.
//! The last-iterate form has an equivalent single-sum expression
//! (see [`bound_last_fast`]) obtained by telescoping the double sum.
//!
//! Steps whose learning rate is zero leave the iterate where it is, so a
//! bound at `tau` is evaluated at the last step that actually moved (any
//! trailing step with `eta_t <= 1e-12 * max eta` counts as frozen). This
//! removes the division by `eta_tau = 0` that decaying schedules hit at
//! their final step.

use std::f64::consts::PI;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::Simpson;
use crate::schedule::{cosine_tail_integral, LearningRateSequence, ScheduleKind, ScheduleSpec};

/// Trailing steps at or below this fraction of the peak rate are frozen.
pub const FROZEN_STEP_RATIO: f64 = 1e-12;

/// Cosine-decay coefficient on `eta_peak G^2` in the closed-form bound.
pub const COSINE_COEFFICIENT: f64 = 1.061;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCoefficients {
    #[serde(rename = "L_star")]
    pub l_star: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "G")]
    pub g: f64,
}

impl BoundCoefficients {
    pub fn new(l_star: f64, d: f64, g: f64) -> Result<Self> {
        let coeffs = BoundCoefficients { l_star, d, g };
        coeffs.validate()?;
        Ok(coeffs)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.l_star.is_finite() {
            return Err(Error::invalid("L_star", "must be finite"));
        }
        if !(self.d.is_finite() && self.d >= 0.0) {
            return Err(Error::invalid(
                "D",
                format!("must be finite and non-negative, got {}", self.d),
            ));
        }
        if !(self.g.is_finite() && self.g >= 0.0) {
            return Err(Error::invalid(
                "G",
                format!("must be finite and non-negative, got {}", self.g),
            ));
        }
        Ok(())
    }

    /// `L_* + D^2 x1 + G^2 x2`.
    pub fn combine(&self, x1: f64, x2: f64) -> f64 {
        self.l_star + self.d * self.d * x1 + self.g * self.g * x2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    AveragedIterate,
    LastIterate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTrace {
    pub kind: BoundKind,
    pub tau_grid: Vec<usize>,
    pub values: Vec<f64>,
}

fn check_tau(lrs: &[f64], tau: usize) -> Result<()> {
    if tau < 1 || tau > lrs.len() {
        return Err(Error::Domain {
            what: "tau",
            value: tau as f64,
            lo: 1.0,
            hi: lrs.len() as f64,
        });
    }
    Ok(())
}

/// Number of leading steps up to `tau` that move the iterate.
fn effective_horizon(lrs: &[f64], tau: usize) -> Result<usize> {
    check_tau(lrs, tau)?;
    let peak = lrs[..tau].iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::DegenerateSchedule { tau });
    }
    let cut = FROZEN_STEP_RATIO * peak;
    let mut end = tau;
    while lrs[end - 1] <= cut {
        end -= 1;
    }
    Ok(end)
}

/// `(x1, x2)` of the last-iterate bound from the double sum as written.
pub(crate) fn last_iterate_terms(lrs: &[f64], tau: usize) -> Result<(f64, f64)> {
    let n = effective_horizon(lrs, tau)?;
    let eta = &lrs[..n];
    let total: f64 = eta.iter().sum();
    let total_sq: f64 = eta.iter().map(|e| e * e).sum();

    // Suffix sums accumulate from the end so short tails stay exact.
    let mut s_next = eta[n - 1];
    let mut q_next = eta[n - 1] * eta[n - 1];
    let mut double = 0.0;
    for k in (1..n).rev() {
        let e = eta[k - 1];
        let s_k = s_next + e;
        let q_k = q_next + e * e;
        let term = e / s_next * (q_k / s_k);
        if !term.is_finite() {
            return Err(Error::Singular { k });
        }
        double += term;
        s_next = s_k;
        q_next = q_k;
    }
    Ok((0.5 / total, 0.5 * (total_sq / total + double)))
}

/// `(x1, x2)` of the last-iterate bound from the telescoped single sum.
pub(crate) fn last_iterate_terms_fast(lrs: &[f64], tau: usize) -> Result<(f64, f64)> {
    let n = effective_horizon(lrs, tau)?;
    let eta = &lrs[..n];
    let last = eta[n - 1];
    let mut s_next = last;
    let mut total = last;
    let mut sum = 0.0;
    for t in (1..n).rev() {
        let e = eta[t - 1];
        let term = e * e / s_next;
        if !term.is_finite() {
            return Err(Error::Singular { k: t });
        }
        sum += term;
        s_next += e;
        total += e;
    }
    // The identity leaves a residual x_tau / eta_tau = eta_tau for x_t = eta_t^2.
    Ok((0.5 / total, 0.5 * (sum + last)))
}

/// Averaged-iterate bound at `tau`.
pub fn bound_averaged(coeffs: &BoundCoefficients, lrs: &LearningRateSequence, tau: usize) -> Result<f64> {
    coeffs.validate()?;
    let eta = lrs.as_slice();
    check_tau(eta, tau)?;
    let total: f64 = eta[..tau].iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateSchedule { tau });
    }
    let total_sq: f64 = eta[..tau].iter().map(|e| e * e).sum();
    Ok(coeffs.combine(0.5 / total, 0.5 * total_sq / total))
}

/// Last-iterate bound at `tau`, evaluated from the double sum.
pub fn bound_last(coeffs: &BoundCoefficients, lrs: &LearningRateSequence, tau: usize) -> Result<f64> {
    coeffs.validate()?;
    let (x1, x2) = last_iterate_terms(lrs.as_slice(), tau)?;
    Ok(coeffs.combine(x1, x2))
}

/// Last-iterate bound at `tau`, evaluated from the single-sum identity
///
/// ```text
/// L_* + D^2 / (2 S_{1..tau}) + (G^2/2) [ sum_{t<tau} eta_t^2 / S_{t+1..tau} + eta_tau ]
/// ```
///
/// Equal to [`bound_last`] up to rounding.
pub fn bound_last_fast(coeffs: &BoundCoefficients, lrs: &LearningRateSequence, tau: usize) -> Result<f64> {
    coeffs.validate()?;
    let (x1, x2) = last_iterate_terms_fast(lrs.as_slice(), tau)?;
    Ok(coeffs.combine(x1, x2))
}

/// Evaluate a bound at each point of a strictly increasing `tau` grid.
///
/// Grid points are evaluated independently (in parallel), so the result
/// does not depend on evaluation order.
pub fn bound_trace(
    coeffs: &BoundCoefficients,
    lrs: &LearningRateSequence,
    grid: &[usize],
    kind: BoundKind,
) -> Result<BoundTrace> {
    coeffs.validate()?;
    validate_grid(grid, lrs.len())?;
    let results: Vec<Result<f64>> = grid
        .par_iter()
        .map(|&tau| {
            let value = match kind {
                BoundKind::AveragedIterate => bound_averaged(coeffs, lrs, tau),
                BoundKind::LastIterate => bound_last_fast(coeffs, lrs, tau),
            };
            value.map_err(|e| Error::AtTau {
                tau,
                source: Box::new(e),
            })
        })
        .collect();
    let values = results.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(BoundTrace {
        kind,
        tau_grid: grid.to_vec(),
        values,
    })
}

pub(crate) fn validate_grid(grid: &[usize], horizon: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "tau grid is empty"));
    }
    if grid[0] < 1 || grid[grid.len() - 1] > horizon {
        return Err(Error::invalid(
            "grid",
            format!("tau grid must lie within [1, {horizon}]"),
        ));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("grid", "tau grid must be strictly increasing"));
    }
    Ok(())
}

/// How to pick the `tau` points of a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TauGrid {
    /// Every step `1..=T`.
    All,
    /// About `n` log-spaced points including `1` and `T`.
    Log(usize),
    Explicit(Vec<usize>),
}

impl Default for TauGrid {
    fn default() -> Self {
        TauGrid::Log(1000)
    }
}

impl TauGrid {
    pub fn resolve(&self, horizon: usize) -> Result<Vec<usize>> {
        let grid = match self {
            TauGrid::All => (1..=horizon).collect(),
            TauGrid::Log(n) => log_spaced(horizon, *n),
            TauGrid::Explicit(points) => points.clone(),
        };
        validate_grid(&grid, horizon)?;
        Ok(grid)
    }
}

impl FromStr for TauGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(TauGrid::All);
        }
        if let Some(n) = s.strip_prefix("log:") {
            let n: usize = n
                .parse()
                .map_err(|_| Error::invalid("grid", format!("bad point count in `{s}`")))?;
            if n < 1 {
                return Err(Error::invalid("grid", "log grid needs at least one point"));
            }
            return Ok(TauGrid::Log(n));
        }
        let points = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::invalid("grid", format!("expected `all`, `log:N` or a comma list, got `{s}`")))?;
        Ok(TauGrid::Explicit(points))
    }
}

/// `min(n, horizon)` distinct, roughly geometric integers from `1` to
/// `horizon` inclusive.
///
/// Each point is placed geometrically between its predecessor and the
/// horizon, and bumped by one where rounding would repeat a value, so the
/// dense early region does not lose points to deduplication.
pub fn log_spaced(horizon: usize, n: usize) -> Vec<usize> {
    let horizon = horizon.max(1);
    let n = n.clamp(1, horizon);
    if n == 1 {
        return vec![horizon];
    }
    let mut grid = Vec::with_capacity(n);
    grid.push(1usize);
    while grid.len() < n {
        let prev = *grid.last().expect("non-empty") as f64;
        let left = (n - grid.len()) as f64;
        let ideal = (prev * (horizon as f64 / prev).powf(1.0 / left)).round() as usize;
        let room = horizon - (n - grid.len() - 1);
        grid.push(ideal.max(prev as usize + 1).min(room));
    }
    grid
}

/// A schedule family with a closed-form last-iterate bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClosedForm {
    Constant,
    SqrtInverse,
    LinearDecay,
    CosineDecay,
    Wsd { c: f64 },
}

/// Minimizer and minimum of a bound over the peak learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalPeak {
    pub eta_star: f64,
    pub bound_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormReport {
    pub kind: String,
    pub eta_star: f64,
    pub bound_star: f64,
    pub formula: String,
}

impl ClosedForm {
    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        if spec.warmup_frac > 0.0 {
            return Err(Error::NotDerived(format!("{} with warmup", spec.kind)));
        }
        Self::from_kind(spec.kind, spec.wsd_c)
    }

    pub fn from_kind(kind: ScheduleKind, wsd_c: Option<f64>) -> Result<Self> {
        Ok(match kind {
            ScheduleKind::Constant => ClosedForm::Constant,
            ScheduleKind::SqrtInverse => ClosedForm::SqrtInverse,
            ScheduleKind::LinearDecay => ClosedForm::LinearDecay,
            ScheduleKind::CosineDecay => ClosedForm::CosineDecay,
            ScheduleKind::Wsd => {
                let c = wsd_c.ok_or_else(|| Error::invalid("c", "required for wsd"))?;
                if !(c > 0.0 && c < 1.0) {
                    return Err(Error::invalid("c", format!("must lie in (0, 1), got {c}")));
                }
                ClosedForm::Wsd { c }
            }
            ScheduleKind::Cyclic => return Err(Error::NotDerived(kind.to_string())),
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        match self {
            ClosedForm::Constant => ScheduleKind::Constant,
            ClosedForm::SqrtInverse => ScheduleKind::SqrtInverse,
            ClosedForm::LinearDecay => ScheduleKind::LinearDecay,
            ClosedForm::CosineDecay => ScheduleKind::CosineDecay,
            ClosedForm::Wsd { .. } => ScheduleKind::Wsd,
        }
    }

    /// The bound as it is usually printed.
    pub fn formula(&self) -> &'static str {
        match self {
            ClosedForm::Constant => "L_* + D^2/(2 T eta_peak) + (eta_peak G^2/2) ln T",
            ClosedForm::SqrtInverse => "L_* + D^2/(4 sqrt(T) eta_peak) + eta_peak G^2 ln T/(4 sqrt(T))",
            ClosedForm::LinearDecay => "L_* + D^2/(T eta_peak) + eta_peak G^2",
            ClosedForm::CosineDecay => "L_* + D^2/(T eta_peak) + eta_peak G^2 * 1.061",
            ClosedForm::Wsd { .. } => "L_* + D^2/((1+c) T eta_peak) + eta_peak G^2 [1 + (1/2) ln((1+c)/(1-c))]",
        }
    }

    /// The bound is `L_* + a D^2 / eta + b G^2 eta`; returns `(a, b)`.
    fn split(&self, horizon: f64) -> (f64, f64) {
        let ln_t = horizon.ln();
        let sqrt_t = horizon.sqrt();
        match *self {
            ClosedForm::Constant => (0.5 / horizon, 0.5 * ln_t),
            ClosedForm::SqrtInverse => (0.25 / sqrt_t, 0.25 * ln_t / sqrt_t),
            ClosedForm::LinearDecay => (1.0 / horizon, 1.0),
            ClosedForm::CosineDecay => (1.0 / horizon, COSINE_COEFFICIENT),
            ClosedForm::Wsd { c } => (1.0 / ((1.0 + c) * horizon), wsd_gradient_factor(c)),
        }
    }

    pub fn bound(&self, coeffs: &BoundCoefficients, eta_peak: f64, horizon: f64) -> Result<f64> {
        coeffs.validate()?;
        check_closed_horizon(horizon)?;
        if !(eta_peak.is_finite() && eta_peak > 0.0) {
            return Err(Error::invalid("eta_peak", format!("must be positive, got {eta_peak}")));
        }
        let (a, b) = self.split(horizon);
        Ok(coeffs.l_star + a * coeffs.d * coeffs.d / eta_peak + b * coeffs.g * coeffs.g * eta_peak)
    }

    pub fn optimal(&self, coeffs: &BoundCoefficients, horizon: f64) -> Result<OptimalPeak> {
        coeffs.validate()?;
        check_closed_horizon(horizon)?;
        if coeffs.d == 0.0 || coeffs.g == 0.0 {
            return Err(Error::DegenerateOptimum);
        }
        let (a, b) = self.split(horizon);
        // a D^2 / eta + b G^2 eta is minimized at eta = (D/G) sqrt(a/b).
        Ok(OptimalPeak {
            eta_star: coeffs.d / coeffs.g * (a / b).sqrt(),
            bound_star: coeffs.l_star + 2.0 * coeffs.d * coeffs.g * (a * b).sqrt(),
        })
    }

    pub fn report(&self, coeffs: &BoundCoefficients, horizon: f64) -> Result<ClosedFormReport> {
        let opt = self.optimal(coeffs, horizon)?;
        Ok(ClosedFormReport {
            kind: self.kind().to_string(),
            eta_star: opt.eta_star,
            bound_star: opt.bound_star,
            formula: self.formula().to_string(),
        })
    }
}

/// `1 + ln((1+c)/(1-c)) / 2`.
pub fn wsd_gradient_factor(c: f64) -> f64 {
    1.0 + 0.5 * ((1.0 + c) / (1.0 - c)).ln()
}

fn check_closed_horizon(horizon: f64) -> Result<()> {
    if !(horizon.is_finite() && horizon >= 2.0) {
        return Err(Error::Domain {
            what: "T",
            value: horizon,
            lo: 2.0,
            hi: f64::INFINITY,
        });
    }
    Ok(())
}

pub fn closed_form_bound(form: &ClosedForm, coeffs: &BoundCoefficients, eta_peak: f64, horizon: f64) -> Result<f64> {
    form.bound(coeffs, eta_peak, horizon)
}

/// Optimal peak learning rate for the schedule shape in `spec` at
/// horizon `spec.horizon`.
///
/// Uses the closed form where one exists and falls back to
/// [`numeric_optimal_peak_lr`] otherwise (cyclic, or any warmup).
pub fn optimal_peak_lr(spec: &ScheduleSpec, coeffs: &BoundCoefficients) -> Result<OptimalPeak> {
    coeffs.validate()?;
    if coeffs.d == 0.0 || coeffs.g == 0.0 {
        return Err(Error::DegenerateOptimum);
    }
    check_closed_horizon(spec.horizon_f64())?;
    match ClosedForm::from_spec(spec) {
        Ok(form) => form.optimal(coeffs, spec.horizon_f64()),
        Err(Error::NotDerived(_)) => numeric_optimal_peak_lr(spec, coeffs),
        Err(e) => Err(e),
    }
}

const ETA_GRID_POINTS: usize = 200;
const ETA_GRID_LO: f64 = 1e-6;
const ETA_GRID_HI: f64 = 1e2;

/// Minimize the discrete last-iterate bound at `tau = T` over `eta_peak`.
///
/// Scans 200 geometric points over `[1e-6, 1e2] * (D/G) / sqrt(T)`, then
/// refines once by golden-section search (in `ln eta`) between the
/// neighbours of the best grid point.
pub fn numeric_optimal_peak_lr(spec: &ScheduleSpec, coeffs: &BoundCoefficients) -> Result<OptimalPeak> {
    coeffs.validate()?;
    if coeffs.d == 0.0 || coeffs.g == 0.0 {
        return Err(Error::DegenerateOptimum);
    }
    let shape = spec.with_eta_peak(1.0).eval_discrete()?.into_inner();
    let horizon = shape.len();
    let eval = |log_eta: f64| -> Result<f64> {
        let eta = log_eta.exp();
        let lrs = LearningRateSequence::new(shape.iter().map(|s| s * eta).collect())?;
        bound_last_fast(coeffs, &lrs, horizon)
    };

    let center = coeffs.d / coeffs.g / (horizon as f64).sqrt();
    let lo = (ETA_GRID_LO * center).ln();
    let hi = (ETA_GRID_HI * center).ln();
    let step = (hi - lo) / (ETA_GRID_POINTS - 1) as f64;
    let mut best = (0, f64::INFINITY);
    for i in 0..ETA_GRID_POINTS {
        let v = eval(lo + step * i as f64)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let a = lo + step * best.0.saturating_sub(1) as f64;
    let b = lo + step * (best.0 + 1).min(ETA_GRID_POINTS - 1) as f64;
    let (x, fx) = golden_section(eval, a, b, 1e-10)?;
    let (log_eta, value) = if fx <= best.1 {
        (x, fx)
    } else {
        (lo + step * best.0 as f64, best.1)
    };
    Ok(OptimalPeak {
        eta_star: log_eta.exp(),
        bound_star: value,
    })
}

fn golden_section<F: Fn(f64) -> Result<f64>>(f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)?))
}

/// Split point below which the cosine-constant integrand uses its
/// limiting form `0.9 pi^2 (1 - x)`.
const COSINE_SPLIT: f64 = 1e-4;

/// `integral_0^1 (1 + cos pi x) B(x) / A(x)^2 dx` with
/// `A(x) = (1-x)/2 - sin(pi x)/(2 pi)` and
/// `B(x) = 3(1-x)/8 - sin(pi x)/(2 pi) - sin(2 pi x)/(16 pi)`.
///
/// The cosine closed-form coefficient is `3/8 + value/4`.
pub fn cosine_integral_constant() -> Result<f64> {
    let quad = Simpson::new(1e-6);
    let body = quad.integrate(cosine_constant_integrand, 0.0, 1.0 - COSINE_SPLIT)?;
    // Near x = 1 the integrand behaves like 0.9 pi^2 (1 - x).
    let tail = 0.45 * PI * PI * COSINE_SPLIT * COSINE_SPLIT;
    Ok(body + tail)
}

/// `3/8 + cosine_integral_constant() / 4`, about 1.061.
pub fn cosine_coefficient() -> Result<f64> {
    Ok(0.375 + 0.25 * cosine_integral_constant()?)
}

pub(crate) fn cosine_constant_integrand(x: f64) -> f64 {
    let y = 1.0 - x;
    let half = (0.5 * PI * y).sin();
    let one_plus_cos = 2.0 * half * half;
    let a = cosine_tail_integral(y);
    let b = if y < 0.25 {
        // sum_{n>=2} (-1)^n pi^{2n} y^{2n+1} / (2n+1)! * (2^{2n-3} - 1/2)
        let py2 = (PI * y) * (PI * y);
        let mut power = y * py2 * py2 / 120.0; // pi^4 y^5 / 5!
        let mut sum = 0.0;
        let mut n = 2;
        while n < 30 {
            let weight = 2f64.powi(2 * n - 3) - 0.5;
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let term = sign * power * weight;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
            let k = (2 * n + 2) as f64;
            power *= py2 / (k * (k + 1.0));
            n += 1;
        }
        sum
    } else {
        0.375 * y - (PI * x).sin() / (2.0 * PI) - (2.0 * PI * x).sin() / (16.0 * PI)
    };
    one_plus_cos * b / (a * a)
}
