//! The `L_inf + Q(eta_ref) / sqrt(T)` law across horizons.
//!
//! With the peak learning rate scaled as `eta_peak = eta_ref / sqrt(T)`, the
//! final loss of a qualified schedule behaves like `L_inf + Q / sqrt(T)`,
//! and in the convex theory `Q(eta_ref) = q1^2 / eta_ref + eta_ref q2^2`.
//! Fitting one line per `eta_ref` and picking the smallest `Q` gives the
//! optimal reference rate, which then transfers to any horizon.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, ols, ols_through_origin, r2_score, Line};

/// Smallest horizon with `1/sqrt(T) < 0.02`.
pub const DEFAULT_T_MIN: f64 = 2501.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonUnit {
    Steps,
    Tokens,
}

impl fmt::Display for HorizonUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HorizonUnit::Steps => "steps",
            HorizonUnit::Tokens => "tokens",
        })
    }
}

impl FromStr for HorizonUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "steps" | "step" | "t" => Ok(HorizonUnit::Steps),
            "tokens" | "token" => Ok(HorizonUnit::Tokens),
            other => Err(Error::invalid(
                "unit",
                format!("expected `steps` or `tokens`, got `{other}`"),
            )),
        }
    }
}

/// Final loss of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub eta_ref: Option<f64>,
    /// Horizon in `unit`: iterations or tokens.
    pub horizon: f64,
    pub unit: HorizonUnit,
    pub batch_size: Option<u64>,
    pub model_size: Option<f64>,
    pub eta_peak: Option<f64>,
    pub final_loss: f64,
}

impl RunRecord {
    pub fn steps(eta_ref: f64, horizon: f64, final_loss: f64) -> Self {
        RunRecord {
            eta_ref: Some(eta_ref),
            horizon,
            unit: HorizonUnit::Steps,
            batch_size: None,
            model_size: None,
            eta_peak: None,
            final_loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid(
                "T_or_tokens",
                format!("must be positive, got {}", self.horizon),
            ));
        }
        if !(self.final_loss.is_finite() && self.final_loss >= 0.0) {
            return Err(Error::invalid(
                "final_loss",
                format!("must be finite and non-negative, got {}", self.final_loss),
            ));
        }
        if let Some(e) = self.eta_ref {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::invalid("eta_ref", format!("must be positive, got {e}")));
            }
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if let Some(n) = self.model_size {
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::invalid("model_size", format!("must be positive, got {n}")));
            }
        }
        Ok(())
    }
}

/// `Q(eta_ref) = q1^2 / eta_ref + eta_ref q2^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QCurve {
    pub q1: f64,
    pub q2: f64,
}

impl QCurve {
    pub fn new(q1: f64, q2: f64) -> Result<Self> {
        for (field, v) in [("q1", q1), ("q2", q2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(field, format!("must be positive, got {v}")));
            }
        }
        Ok(QCurve { q1, q2 })
    }

    pub fn eval(&self, eta_ref: f64) -> f64 {
        self.q1 * self.q1 / eta_ref + eta_ref * self.q2 * self.q2
    }

    pub fn argmin(&self) -> f64 {
        self.q1 / self.q2
    }

    pub fn min(&self) -> f64 {
        2.0 * self.q1 * self.q2
    }
}

pub fn q_curve(q1: f64, q2: f64, eta_ref: f64) -> Result<f64> {
    let curve = QCurve::new(q1, q2)?;
    if !(eta_ref.is_finite() && eta_ref > 0.0) {
        return Err(Error::Domain {
            what: "eta_ref",
            value: eta_ref,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    Ok(curve.eval(eta_ref))
}

/// `final_loss ~ L_inf + Q / sqrt(horizon)` for one `eta_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqrtTLine {
    #[serde(rename = "L_inf")]
    pub l_inf: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub r2: f64,
    pub points_used: usize,
    pub points_excluded: usize,
}

impl SqrtTLine {
    pub fn predict(&self, horizon: f64) -> f64 {
        self.l_inf + self.q / horizon.sqrt()
    }
}

/// Least-squares line of loss against `1/sqrt(horizon)` with both
/// coefficients kept non-negative. Records below `t_min` are dropped.
pub fn fit_sqrt_t_line(records: &[RunRecord], t_min: f64) -> Result<SqrtTLine> {
    for r in records {
        r.validate()?;
    }
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.unit != first.unit) {
            return Err(Error::invalid("unit", "records mix steps and tokens"));
        }
    }
    let kept: Vec<&RunRecord> = records.iter().filter(|r| r.horizon >= t_min).collect();
    let mut distinct: Vec<f64> = kept.iter().map(|r| r.horizon).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: distinct.len(),
            context: format!("distinct horizons at or above {t_min}"),
        });
    }
    let xs: Vec<f64> = kept.iter().map(|r| 1.0 / r.horizon.sqrt()).collect();
    let ys: Vec<f64> = kept.iter().map(|r| r.final_loss).collect();
    let line = nonnegative_line(&xs, &ys);
    let pred: Vec<f64> = xs.iter().map(|&x| line.eval(x)).collect();
    Ok(SqrtTLine {
        l_inf: line.intercept,
        q: line.slope,
        r2: r2_score(&ys, &pred),
        points_used: kept.len(),
        points_excluded: records.len() - kept.len(),
    })
}

/// OLS line with intercept and slope both constrained to be non-negative.
fn nonnegative_line(xs: &[f64], ys: &[f64]) -> Line {
    if let Some(line) = ols(xs, ys) {
        if line.intercept >= 0.0 && line.slope >= 0.0 {
            return line;
        }
    }
    let sse = |l: &Line| -> f64 { xs.iter().zip(ys).map(|(&x, &y)| (y - l.eval(x)).powi(2)).sum() };
    let flat = Line {
        intercept: mean(ys).max(0.0),
        slope: 0.0,
    };
    let origin = ols_through_origin(xs, ys)
        .map(|l| Line {
            intercept: 0.0,
            slope: l.slope.max(0.0),
        })
        .unwrap_or(flat);
    if sse(&origin) < sse(&flat) {
        origin
    } else {
        flat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaRefChoice {
    pub eta_ref_star: f64,
    #[serde(rename = "Q_star")]
    pub q_star: f64,
    /// The fitted curve, when interpolating.
    pub curve: Option<QCurve>,
}

/// Pick the best `eta_ref` from `(eta_ref, Q)` pairs.
///
/// Without interpolation this is the grid argmin, with ties going to the
/// smaller `eta_ref`. With interpolation a [`QCurve`] is fitted to
/// `ln Q` by Gauss–Newton and its analytic minimum is returned.
pub fn select_eta_ref(pairs: &[(f64, f64)], interpolate: bool) -> Result<EtaRefChoice> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: pairs.len(),
            context: "eta_ref entries".into(),
        });
    }
    for &(eta, q) in pairs {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::invalid("eta_ref", format!("must be positive, got {eta}")));
        }
        if !q.is_finite() {
            return Err(Error::invalid("Q", "must be finite"));
        }
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    if !interpolate {
        let mut best = sorted[0];
        for &p in &sorted[1..] {
            if p.1 < best.1 {
                best = p;
            }
        }
        return Ok(EtaRefChoice {
            eta_ref_star: best.0,
            q_star: best.1,
            curve: None,
        });
    }

    let mut etas: Vec<f64> = sorted.iter().map(|p| p.0).collect();
    etas.dedup();
    if etas.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: etas.len(),
            context: "distinct eta_ref values for interpolation".into(),
        });
    }
    if sorted.iter().any(|p| p.1 <= 0.0) {
        return Err(Error::invalid("Q", "interpolation needs positive Q values"));
    }
    let curve = fit_q_curve(&sorted)?;
    Ok(EtaRefChoice {
        eta_ref_star: curve.argmin(),
        q_star: curve.min(),
        curve: Some(curve),
    })
}

/// Least squares of `ln Q` on `ln(a/eta + b eta)`, parameterized by
/// `(ln a, ln b)` so that `a = q1^2` and `b = q2^2` stay positive.
fn fit_q_curve(pairs: &[(f64, f64)]) -> Result<QCurve> {
    // Start from linear least squares on Q * eta = a + b eta^2.
    let xs: Vec<f64> = pairs.iter().map(|p| p.0 * p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.0 * p.1).collect();
    let start = ols(&xs, &ys).unwrap_or(Line {
        intercept: mean(&ys),
        slope: 0.0,
    });
    let scale = mean(&ys).abs().max(f64::MIN_POSITIVE);
    let mut p = [
        start.intercept.max(1e-6 * scale).ln(),
        start.slope.max(1e-6 * scale / mean(&xs)).ln(),
    ];

    let cost = |p: &[f64; 2]| -> f64 {
        let (a, b) = (p[0].exp(), p[1].exp());
        pairs
            .iter()
            .map(|&(e, q)| ((a / e + b * e).ln() - q.ln()).powi(2))
            .sum()
    };
    let mut lambda = 1e-3;
    let mut current = cost(&p);
    for _ in 0..200 {
        let (a, b) = (p[0].exp(), p[1].exp());
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for &(e, q) in pairs {
            let model = a / e + b * e;
            let r = model.ln() - q.ln();
            let j = [a / e / model, b * e / model];
            for u in 0..2 {
                jtr[u] += j[u] * r;
                for v in 0..2 {
                    jtj[u][v] += j[u] * j[v];
                }
            }
        }
        // Levenberg–Marquardt damped normal equations.
        let m00 = jtj[0][0] * (1.0 + lambda);
        let m11 = jtj[1][1] * (1.0 + lambda);
        let det = m00 * m11 - jtj[0][1] * jtj[1][0];
        if det.abs() < f64::MIN_POSITIVE {
            break;
        }
        let step = [
            -(m11 * jtr[0] - jtj[0][1] * jtr[1]) / det,
            -(m00 * jtr[1] - jtj[1][0] * jtr[0]) / det,
        ];
        let trial = [p[0] + step[0], p[1] + step[1]];
        let next = cost(&trial);
        if next <= current {
            let done = step[0].abs().max(step[1].abs()) < 1e-13;
            p = trial;
            current = next;
            lambda = (lambda * 0.3).max(1e-12);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    QCurve::new(p[0].exp().sqrt(), p[1].exp().sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaRefFit {
    pub eta_ref: Option<f64>,
    #[serde(flatten)]
    pub line: SqrtTLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub unit: HorizonUnit,
    pub per_eta_ref: Vec<EtaRefFit>,
    pub eta_ref_star: Option<f64>,
    #[serde(rename = "Q_star")]
    pub q_star: f64,
    #[serde(rename = "L_inf_star")]
    pub l_inf_star: f64,
    #[serde(rename = "T_min_cutoff")]
    pub t_min_cutoff: f64,
    pub curve: Option<QCurve>,
}

/// One `1/sqrt(T)` line per `eta_ref`, then the best `eta_ref`.
///
/// Records without an `eta_ref` form a single group. With interpolation,
/// `L_inf_star` is taken from the fitted `eta_ref` nearest (in log scale)
/// to the interpolated optimum.
pub fn fit_scaling(records: &[RunRecord], t_min: f64, interpolate: bool) -> Result<ScalingFit> {
    let first = records.first().ok_or_else(|| Error::InsufficientData {
        needed: 3,
        got: 0,
        context: "run records".into(),
    })?;
    if records.iter().any(|r| r.eta_ref.is_some() != first.eta_ref.is_some()) {
        return Err(Error::invalid(
            "eta_ref",
            "either every record or no record must carry eta_ref",
        ));
    }
    if records.iter().any(|r| r.unit != first.unit) {
        return Err(Error::invalid("unit", "records mix steps and tokens"));
    }
    let mut groups: BTreeMap<u64, (Option<f64>, Vec<RunRecord>)> = BTreeMap::new();
    for r in records {
        let key = r.eta_ref.map_or(0, f64::to_bits);
        groups
            .entry(key)
            .or_insert_with(|| (r.eta_ref, Vec::new()))
            .1
            .push(r.clone());
    }
    let mut groups: Vec<(Option<f64>, Vec<RunRecord>)> = groups.into_values().collect();
    groups.sort_by(|a, b| a.0.unwrap_or(0.0).total_cmp(&b.0.unwrap_or(0.0)));

    let per_eta_ref = groups
        .par_iter()
        .map(|(eta, recs)| fit_sqrt_t_line(recs, t_min).map(|line| EtaRefFit { eta_ref: *eta, line }))
        .collect::<Result<Vec<_>>>()?;

    let (eta_ref_star, q_star, l_inf_star, curve) = if per_eta_ref.len() == 1 {
        let only = &per_eta_ref[0];
        (only.eta_ref, only.line.q, only.line.l_inf, None)
    } else {
        let pairs: Vec<(f64, f64)> = per_eta_ref
            .iter()
            .map(|f| (f.eta_ref.expect("grouped by eta_ref"), f.line.q))
            .collect();
        let choice = select_eta_ref(&pairs, interpolate)?;
        let nearest = per_eta_ref
            .iter()
            .min_by(|a, b| {
                let da = (a.eta_ref.unwrap() / choice.eta_ref_star).ln().abs();
                let db = (b.eta_ref.unwrap() / choice.eta_ref_star).ln().abs();
                da.total_cmp(&db)
            })
            .expect("at least two groups");
        (
            Some(choice.eta_ref_star),
            choice.q_star,
            nearest.line.l_inf,
            choice.curve,
        )
    };
    Ok(ScalingFit {
        unit: first.unit,
        per_eta_ref,
        eta_ref_star,
        q_star,
        l_inf_star,
        t_min_cutoff: t_min,
        curve,
    })
}

/// `L_inf_star + Q_star / sqrt(T)`.
pub fn predict_loss(fit: &ScalingFit, horizon: f64) -> Result<f64> {
    if !(horizon.is_finite() && horizon >= 1.0) {
        return Err(Error::Domain {
            what: "T",
            value: horizon,
            lo: 1.0,
            hi: f64::INFINITY,
        });
    }
    Ok(fit.l_inf_star + fit.q_star / horizon.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub eta_peak: f64,
    /// Set when transferring to a shorter horizon than the source.
    pub extrapolation_warning: bool,
}

/// Peak learning rate at `t_target` given a tuned rate at `t_small`:
/// `eta / sqrt(t_target / t_small)`.
pub fn transfer_lr(eta_peak_small: f64, t_small: f64, t_target: f64) -> Result<Transfer> {
    for (field, v) in [
        ("eta_peak", eta_peak_small),
        ("T_small", t_small),
        ("T_target", t_target),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(field, format!("must be positive, got {v}")));
        }
    }
    Ok(Transfer {
        eta_peak: eta_peak_small / (t_target / t_small).sqrt(),
        extrapolation_warning: t_target < t_small,
    })
}

fn positive(what: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value: v,
            lo: 0.0,
            hi: f64::INFINITY,
        })
    }
}

/// `flops / (6 N)`.
pub fn flops_to_tokens(flops: f64, model_size: f64) -> Result<f64> {
    positive("flops", flops)?;
    positive("model_size", model_size)?;
    Ok(flops / (6.0 * model_size))
}

/// `tokens / batch_size`.
pub fn tokens_to_steps(tokens: f64, batch_size: f64) -> Result<f64> {
    positive("tokens", tokens)?;
    positive("batch_size", batch_size)?;
    Ok(tokens / batch_size)
}
