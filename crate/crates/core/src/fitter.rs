//! Fit observed loss traces onto the last-iterate bound.
//!
//! Every bound is linear in `(L_*, D^2, G^2)` once the learning rates are
//! fixed: `L(tau) ~ L_inf + D^2 x1(tau) + G^2 x2(tau)`. Fitting `D^2` and
//! `G^2` (rather than `D` and `G`) keeps the regression linear, and
//! non-negativity of all three coefficients keeps the result meaningful.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{last_iterate_terms, validate_grid};
use crate::error::{Error, Result};
use crate::nnls::nnls;
use crate::schedule::LearningRateSequence;
use crate::stats::r2_score;

/// An observed or simulated loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub steps: Vec<u64>,
    pub losses: Vec<f64>,
    /// Per-step learning rates. When present, the rows are taken to be
    /// consecutive optimizer steps and `steps` only label them.
    pub lrs: Option<Vec<f64>>,
    pub smoothing_window: usize,
}

impl LossTrace {
    /// A trace with the default smoothing window `max(1, len / 200)`.
    pub fn new(steps: Vec<u64>, losses: Vec<f64>, lrs: Option<Vec<f64>>) -> Result<Self> {
        let window = (losses.len() / 200).max(1);
        let trace = LossTrace {
            steps,
            losses,
            lrs,
            smoothing_window: window,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn with_smoothing(mut self, window: usize) -> Result<Self> {
        self.smoothing_window = window;
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.len() != self.losses.len() {
            return Err(Error::invalid(
                "losses",
                format!("{} losses for {} steps", self.losses.len(), self.steps.len()),
            ));
        }
        if self.steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("steps", "must be strictly increasing"));
        }
        if let Some(bad) = self.losses.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::invalid(
                "losses",
                format!("must be finite and non-negative, got {bad}"),
            ));
        }
        if let Some(lrs) = &self.lrs {
            if lrs.len() != self.losses.len() {
                return Err(Error::invalid("lr", "column length differs from the loss column"));
            }
        }
        if self.smoothing_window == 0 {
            return Err(Error::invalid("smoothing_window", "must be at least 1"));
        }
        Ok(())
    }

    /// Learning-rate sequence and the `tau` of every row.
    ///
    /// With an `lr` column the rows are steps `1..=n`. Otherwise each step
    /// label is its `tau` in the supplied schedule.
    fn design_input(&self, schedule: Option<&LearningRateSequence>) -> Result<(LearningRateSequence, Vec<usize>)> {
        if let Some(lrs) = &self.lrs {
            let seq = LearningRateSequence::new(lrs.clone())?;
            return Ok((seq, (1..=self.len()).collect()));
        }
        let seq = schedule
            .ok_or_else(|| Error::invalid("lr", "trace has no lr column and no schedule was given"))?
            .clone();
        if self.steps.first() == Some(&0) {
            return Err(Error::invalid(
                "steps",
                "step 0 precedes the first update and has no bound",
            ));
        }
        let taus: Vec<usize> = self.steps.iter().map(|&s| s as usize).collect();
        if let Some(&last) = taus.last() {
            if last > seq.len() {
                return Err(Error::invalid(
                    "steps",
                    format!("step {last} lies beyond the schedule horizon {}", seq.len()),
                ));
            }
        }
        Ok((seq, taus))
    }
}

/// Centered moving average of width `window`, truncated at the edges.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return values.to_vec();
    }
    let n = values.len();
    let left = (window - 1) / 2;
    let right = window - 1 - left;
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn smooth_rows(rows: &[DesignRow], window: usize) -> Vec<DesignRow> {
    let x1: Vec<f64> = rows.iter().map(|r| r.x1).collect();
    let x2: Vec<f64> = rows.iter().map(|r| r.x2).collect();
    smooth(&x1, window)
        .into_iter()
        .zip(smooth(&x2, window))
        .map(|(x1, x2)| DesignRow { x1, x2 })
        .collect()
}

/// One row of the design matrix: the bound at `tau` is
/// `L_* + D^2 x1 + G^2 x2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub x1: f64,
    pub x2: f64,
}

/// Design rows at each `tau` of a strictly increasing grid.
pub fn build_design(lrs: &LearningRateSequence, grid: &[usize]) -> Result<Vec<DesignRow>> {
    validate_grid(grid, lrs.len())?;
    grid.par_iter()
        .map(|&tau| {
            last_iterate_terms(lrs.as_slice(), tau)
                .map(|(x1, x2)| DesignRow { x1, x2 })
                .map_err(|e| Error::AtTau {
                    tau,
                    source: Box::new(e),
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    #[serde(rename = "L_inf")]
    pub l_inf: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "G")]
    pub g: f64,
    /// R^2 on the (smoothed) losses that were fitted.
    pub r2_fit: f64,
    pub r2_fit_raw: f64,
    /// R^2 on the held-out segment, smoothed and raw.
    pub r2_predict: Option<f64>,
    pub r2_predict_raw: Option<f64>,
    /// Last step label of the fit segment.
    pub split_step: Option<u64>,
    pub n_fit: usize,
    pub n_predict: usize,
    pub smoothing_window: usize,
    /// `loss - prediction` on every row, raw losses.
    pub residuals: Vec<f64>,
    /// The scaled design was numerically rank deficient.
    pub collinear: bool,
    pub kkt_residual: f64,
}

impl FitReport {
    pub fn predict(&self, row: &DesignRow) -> f64 {
        self.l_inf + self.d * self.d * row.x1 + self.g * self.g * row.x2
    }
}

struct Coefficients {
    l_inf: f64,
    d2: f64,
    g2: f64,
    collinear: bool,
    kkt_residual: f64,
}

impl Coefficients {
    fn predict(&self, row: &DesignRow) -> f64 {
        self.l_inf + self.d2 * row.x1 + self.g2 * row.x2
    }
}

/// Non-negative fit of `losses ~ L_inf + D^2 x1 + G^2 x2`.
fn solve(rows: &[DesignRow], losses: &[f64]) -> Result<Coefficients> {
    if rows.len() != losses.len() {
        return Err(Error::invalid("losses", "must align with the design rows"));
    }
    if rows.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: rows.len(),
            context: "rows for a three-coefficient fit".into(),
        });
    }
    let m = rows.len();
    let mut a = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => rows[i].x1,
        1 => rows[i].x2,
        _ => 1.0,
    });
    // Columns are scaled to unit max: x1 and x2 differ by orders of magnitude.
    let mut scale = [1.0; 3];
    for (j, s) in scale.iter_mut().enumerate() {
        let max = a.column(j).amax();
        if max > 0.0 {
            *s = max;
            a.column_mut(j).scale_mut(1.0 / max);
        }
    }
    let b = DVector::from_column_slice(losses);
    let sol = nnls(&a, &b)?;
    Ok(Coefficients {
        d2: sol.x[0] / scale[0],
        g2: sol.x[1] / scale[1],
        l_inf: sol.x[2] / scale[2],
        collinear: sol.rank_deficient,
        kkt_residual: sol.kkt_residual,
    })
}

/// Fit all rows, with no held-out segment.
pub fn nnls_fit(rows: &[DesignRow], losses: &[f64]) -> Result<FitReport> {
    let coeffs = solve(rows, losses)?;
    let pred: Vec<f64> = rows.iter().map(|r| coeffs.predict(r)).collect();
    let r2 = r2_score(losses, &pred);
    Ok(FitReport {
        l_inf: coeffs.l_inf,
        d: coeffs.d2.sqrt(),
        g: coeffs.g2.sqrt(),
        r2_fit: r2,
        r2_fit_raw: r2,
        r2_predict: None,
        r2_predict_raw: None,
        split_step: None,
        n_fit: rows.len(),
        n_predict: 0,
        smoothing_window: 1,
        residuals: losses.iter().zip(&pred).map(|(l, p)| l - p).collect(),
        collinear: coeffs.collinear,
        kkt_residual: coeffs.kkt_residual,
    })
}

/// Fit on rows with `tau <= split_frac * T` and score the rest.
///
/// Each segment is smoothed on its own, so the held-out losses never leak
/// into the fit. R^2 is reported against both the smoothed and the raw
/// losses. `schedule` supplies the learning rates when the trace has
/// no `lr` column.
pub fn fit_predict(trace: &LossTrace, schedule: Option<&LearningRateSequence>, split_frac: f64) -> Result<FitReport> {
    trace.validate()?;
    if !(split_frac > 0.0 && split_frac < 1.0) {
        return Err(Error::invalid("split", format!("must lie in (0, 1), got {split_frac}")));
    }
    let (seq, taus) = trace.design_input(schedule)?;
    let cut = split_frac * seq.len() as f64;
    let n_fit = taus.iter().take_while(|&&t| t as f64 <= cut).count();
    let n_predict = taus.len() - n_fit;
    if n_predict < 3 {
        return Err(Error::Split(format!(
            "held-out segment has {n_predict} points, need at least 3"
        )));
    }
    if n_fit < 3 {
        return Err(Error::Split(format!("fit segment has {n_fit} points, need at least 3")));
    }

    let rows = build_design(&seq, &taus)?;
    let window = trace.smoothing_window;
    let (raw_fit, raw_pred) = trace.losses.split_at(n_fit);
    let fit_losses = smooth(raw_fit, window);
    let pred_losses = smooth(raw_pred, window);
    // The design gets the same filter as the losses. The model is linear, so
    // the smoothed losses follow the smoothed design exactly; smoothing only
    // the losses would bias the fit wherever the curve bends sharply.
    let fit_rows = smooth_rows(&rows[..n_fit], window);
    let held_rows = smooth_rows(&rows[n_fit..], window);

    let coeffs = solve(&fit_rows, &fit_losses)?;
    let pred: Vec<f64> = rows.iter().map(|r| coeffs.predict(r)).collect();
    let (pred_fit, pred_held) = pred.split_at(n_fit);
    let smooth_fit: Vec<f64> = fit_rows.iter().map(|r| coeffs.predict(r)).collect();
    let smooth_held: Vec<f64> = held_rows.iter().map(|r| coeffs.predict(r)).collect();

    Ok(FitReport {
        l_inf: coeffs.l_inf,
        d: coeffs.d2.sqrt(),
        g: coeffs.g2.sqrt(),
        r2_fit: r2_score(&fit_losses, &smooth_fit),
        r2_fit_raw: r2_score(raw_fit, pred_fit),
        r2_predict: Some(r2_score(&pred_losses, &smooth_held)),
        r2_predict_raw: Some(r2_score(raw_pred, pred_held)),
        split_step: Some(trace.steps[n_fit - 1]),
        n_fit,
        n_predict,
        smoothing_window: window,
        residuals: trace.losses.iter().zip(&pred).map(|(l, p)| l - p).collect(),
        collinear: coeffs.collinear,
        kkt_residual: coeffs.kkt_residual,
    })
}
