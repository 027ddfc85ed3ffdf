//! Learning-rate schedule families.
//!
//! A schedule is `eta_t = eta_peak * s_t(T)` with `s_t(T)` in `[0, 1]`.
//! Discrete values are indexed `t = 1..=T` (the learning rate applied at
//! step `t`), and the continuous extension is defined on `[0, T]`. The
//! discrete value at step `t` is the continuous extension sampled at `t`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    SqrtInverse,
    LinearDecay,
    CosineDecay,
    Wsd,
    Cyclic,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 6] = [
        ScheduleKind::Constant,
        ScheduleKind::SqrtInverse,
        ScheduleKind::LinearDecay,
        ScheduleKind::CosineDecay,
        ScheduleKind::Wsd,
        ScheduleKind::Cyclic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::SqrtInverse => "sqrt_inverse",
            ScheduleKind::LinearDecay => "linear_decay",
            ScheduleKind::CosineDecay => "cosine_decay",
            ScheduleKind::Wsd => "wsd",
            ScheduleKind::Cyclic => "cyclic",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "constant" | "const" => ScheduleKind::Constant,
            "sqrt_inverse" | "sqrt_inv" | "inverse_sqrt" => ScheduleKind::SqrtInverse,
            "linear_decay" | "linear" => ScheduleKind::LinearDecay,
            "cosine_decay" | "cosine" => ScheduleKind::CosineDecay,
            "wsd" | "warmup_stable_decay" => ScheduleKind::Wsd,
            "cyclic" | "cycle" => ScheduleKind::Cyclic,
            other => return Err(Error::invalid("kind", format!("unknown schedule kind `{other}`"))),
        };
        Ok(kind)
    }
}

/// A parameterized schedule.
///
/// Serialized as `{"kind", "eta_peak", "T", "c"?, "warmup_frac"?, "cycles"?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub eta_peak: f64,
    #[serde(rename = "T")]
    pub horizon: u64,
    /// Fraction of the horizon spent in the stable phase (WSD only).
    #[serde(rename = "c", default, skip_serializing_if = "Option::is_none")]
    pub wsd_c: Option<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub warmup_frac: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<u32>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, eta_peak: f64, horizon: u64) -> Self {
        ScheduleSpec {
            kind,
            eta_peak,
            horizon,
            wsd_c: None,
            warmup_frac: 0.0,
            cycles: None,
        }
    }

    pub fn constant(eta_peak: f64, horizon: u64) -> Self {
        Self::new(ScheduleKind::Constant, eta_peak, horizon)
    }

    pub fn sqrt_inverse(eta_peak: f64, horizon: u64) -> Self {
        Self::new(ScheduleKind::SqrtInverse, eta_peak, horizon)
    }

    pub fn linear_decay(eta_peak: f64, horizon: u64) -> Self {
        Self::new(ScheduleKind::LinearDecay, eta_peak, horizon)
    }

    pub fn cosine_decay(eta_peak: f64, horizon: u64) -> Self {
        Self::new(ScheduleKind::CosineDecay, eta_peak, horizon)
    }

    pub fn wsd(eta_peak: f64, horizon: u64, c: f64) -> Self {
        ScheduleSpec {
            wsd_c: Some(c),
            ..Self::new(ScheduleKind::Wsd, eta_peak, horizon)
        }
    }

    pub fn cyclic(eta_peak: f64, horizon: u64, cycles: u32) -> Self {
        ScheduleSpec {
            cycles: Some(cycles),
            ..Self::new(ScheduleKind::Cyclic, eta_peak, horizon)
        }
    }

    pub fn with_warmup(mut self, warmup_frac: f64) -> Self {
        self.warmup_frac = warmup_frac;
        self
    }

    pub fn with_eta_peak(&self, eta_peak: f64) -> Self {
        ScheduleSpec {
            eta_peak,
            ..self.clone()
        }
    }

    pub fn with_horizon(&self, horizon: u64) -> Self {
        ScheduleSpec {
            horizon,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_peak.is_finite() && self.eta_peak > 0.0) {
            return Err(Error::invalid(
                "eta_peak",
                format!("must be positive, got {}", self.eta_peak),
            ));
        }
        if self.horizon < 1 {
            return Err(Error::invalid("T", "horizon must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::invalid(
                "warmup_frac",
                format!("must lie in [0, 1), got {}", self.warmup_frac),
            ));
        }
        if self.warmup_steps() >= self.horizon as f64 {
            return Err(Error::invalid("warmup_frac", "warmup consumes the whole horizon"));
        }
        match self.kind {
            ScheduleKind::Wsd => match self.wsd_c {
                Some(c) if c > 0.0 && c < 1.0 => {}
                Some(c) => return Err(Error::invalid("c", format!("must lie in (0, 1), got {c}"))),
                None => return Err(Error::invalid("c", "required for wsd")),
            },
            _ if self.wsd_c.is_some() => {
                return Err(Error::invalid("c", format!("only valid for wsd, not {}", self.kind)));
            }
            _ => {}
        }
        match self.kind {
            ScheduleKind::Cyclic => match self.cycles {
                Some(n) if n >= 1 => {}
                Some(_) => return Err(Error::invalid("cycles", "must be at least 1")),
                None => return Err(Error::invalid("cycles", "required for cyclic")),
            },
            _ if self.cycles.is_some() => {
                return Err(Error::invalid(
                    "cycles",
                    format!("only valid for cyclic, not {}", self.kind),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn horizon_f64(&self) -> f64 {
        self.horizon as f64
    }

    /// Number of warmup steps, `ceil(warmup_frac * T)`.
    pub fn warmup_steps(&self) -> f64 {
        (self.warmup_frac * self.horizon as f64).ceil()
    }

    /// The multiplier `s(t)` in `[0, 1]` of the continuous extension.
    ///
    /// The schedule is assumed valid and `t` is assumed to lie in `[0, T]`.
    pub fn multiplier(&self, t: f64) -> f64 {
        let warmup = self.warmup_steps();
        let s = if warmup > 0.0 && t <= warmup {
            t / warmup
        } else {
            self.base_multiplier(t - warmup, self.horizon as f64 - warmup)
        };
        s.clamp(0.0, 1.0)
    }

    fn base_multiplier(&self, u: f64, h: f64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => 1.0,
            ScheduleKind::SqrtInverse => 1.0 / (u + 1.0).sqrt(),
            ScheduleKind::LinearDecay => 1.0 - u / h,
            // (1 + cos(pi u / h)) / 2, written so the tail near u = h keeps precision.
            ScheduleKind::CosineDecay => {
                let c = (0.5 * PI * u / h).cos();
                c * c
            }
            ScheduleKind::Wsd => {
                let c = self.wsd_c.unwrap_or(0.5);
                if u < c * h {
                    1.0
                } else {
                    (h - u) / (h - c * h)
                }
            }
            ScheduleKind::Cyclic => {
                let period = h / f64::from(self.cycles.unwrap_or(1));
                let phase = (u / period).fract();
                1.0 - (2.0 * phase - 1.0).abs()
            }
        }
    }

    /// Continuous learning rate `eta(t)` for `t` in `[0, T]`.
    pub fn eval_continuous(&self, t: f64) -> Result<f64> {
        self.validate()?;
        let horizon = self.horizon as f64;
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::Domain {
                what: "t",
                value: t,
                lo: 0.0,
                hi: horizon,
            });
        }
        Ok(self.eta_peak * self.multiplier(t))
    }

    /// Learning rates `eta_1..=eta_T`.
    pub fn eval_discrete(&self) -> Result<LearningRateSequence> {
        self.validate()?;
        let values = (1..=self.horizon)
            .map(|t| self.eta_peak * self.multiplier(t as f64))
            .collect();
        LearningRateSequence::new(values)
    }

    /// Points in `(0, T)` where the continuous extension has a kink.
    pub fn breakpoints(&self) -> Vec<f64> {
        let horizon = self.horizon as f64;
        let warmup = self.warmup_steps();
        let span = horizon - warmup;
        let mut points = Vec::new();
        if warmup > 0.0 {
            points.push(warmup);
        }
        match self.kind {
            ScheduleKind::Wsd => {
                if let Some(c) = self.wsd_c {
                    points.push(warmup + c * span);
                }
            }
            ScheduleKind::Cyclic => {
                let cycles = self.cycles.unwrap_or(1);
                let half = span / (2.0 * f64::from(cycles));
                for i in 1..(2 * cycles) {
                    points.push(warmup + f64::from(i) * half);
                }
            }
            _ => {}
        }
        points.retain(|&p| p > 0.0 && p < horizon);
        points
    }

    /// Closed-form `integral_t^T eta(k) dk`, when one is available.
    ///
    /// Available for every kind except `Cyclic`, and only without warmup.
    pub fn suffix_integral_closed(&self, t: f64) -> Option<f64> {
        if self.warmup_frac > 0.0 {
            return None;
        }
        let h = self.horizon as f64;
        let eta = self.eta_peak;
        let value = match self.kind {
            ScheduleKind::Constant => eta * (h - t),
            ScheduleKind::SqrtInverse => 2.0 * eta * ((h + 1.0).sqrt() - (t + 1.0).sqrt()),
            ScheduleKind::LinearDecay => eta * (h - t) * (h - t) / (2.0 * h),
            ScheduleKind::CosineDecay => eta * h * cosine_tail_integral((h - t) / h),
            ScheduleKind::Wsd => {
                let c = self.wsd_c?;
                let stable_end = c * h;
                if t < stable_end {
                    eta * ((stable_end - t) + 0.5 * (h - stable_end))
                } else {
                    eta * (h - t) * (h - t) / (2.0 * (h - stable_end))
                }
            }
            ScheduleKind::Cyclic => return None,
        };
        Some(value.max(0.0))
    }
}

/// `y/2 - sin(pi y)/(2 pi)`: the cosine-decay suffix integral over a
/// normalized tail of length `y`.
///
/// For small `y` the two terms cancel to `pi^2 y^3 / 12`, so the power
/// series is used there.
pub(crate) fn cosine_tail_integral(y: f64) -> f64 {
    if y < 0.25 {
        // -sum_{n>=1} (-1)^n pi^{2n} y^{2n+1} / (2 (2n+1)!)
        let mut sum = 0.0;
        let py2 = (PI * y) * (PI * y);
        let mut term = y * py2 / 6.0; // pi^2 y^3 / 3!
        let mut n = 1;
        while n < 30 {
            sum += term / 2.0;
            let k = (2 * n + 2) as f64;
            term *= -py2 / (k * (k + 1.0));
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
            n += 1;
        }
        sum
    } else {
        0.5 * y - (PI * y).sin() / (2.0 * PI)
    }
}

/// A learning-rate sequence `eta_1..=eta_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LearningRateSequence {
    values: Vec<f64>,
}

impl LearningRateSequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("learning rates", "sequence is empty"));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(
                "learning rates",
                format!("eta_{} = {v} is not a finite non-negative number", i + 1),
            ));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("learning rates", "every entry is zero"));
        }
        Ok(LearningRateSequence { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `eta_t` for `t` in `1..=T`.
    pub fn at(&self, t: usize) -> f64 {
        self.values[t - 1]
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

impl TryFrom<Vec<f64>> for LearningRateSequence {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        LearningRateSequence::new(values)
    }
}

impl From<LearningRateSequence> for Vec<f64> {
    fn from(seq: LearningRateSequence) -> Self {
        seq.values
    }
}
