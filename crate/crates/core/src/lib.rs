//! Convex-analysis loss bounds for arbitrary learning-rate schedules.
//!
//! The crate maps a learning-rate sequence to upper bounds on SGD loss
//! (averaged iterate and any single iterate), evaluates the closed forms
//! for the common schedule families, runs a training-free qualification
//! test on a schedule shape, fits observed loss traces back onto the
//! bound's design matrix, and fits the `L_inf + Q / sqrt(T)` law across
//! horizons. A small convex SGD simulator with exactly known constants
//! serves as ground truth for all of it.
//!
//! Module map:
//!
//! - [`schedule`]: schedule families, discrete and continuous evaluation
//! - [`bound`]: discrete bounds, closed forms, optimal peak learning rates
//! - [`qualifier`]: the continuous exam functional and verdicts
//! - [`fitter`]: design matrix, non-negative fit, fit/predict split
//! - [`scaling`]: `Q(eta_ref)` algebra, `1/sqrt(T)` fits, learning-rate transfer
//! - [`sim`]: convex problems with known `D`, `G`, `L*` and seeded SGD
//! - [`io`]: CSV and JSON formats shared with the CLI

pub mod bound;
pub mod error;
pub mod fitter;
pub mod io;
pub mod nnls;
pub mod quadrature;
pub mod qualifier;
pub mod scaling;
pub mod schedule;
pub mod sim;
pub mod stats;

pub use bound::{
    bound_averaged, bound_last, bound_last_fast, bound_trace, closed_form_bound, cosine_integral_constant,
    numeric_optimal_peak_lr, optimal_peak_lr, BoundCoefficients, BoundKind, BoundTrace, ClosedForm, ClosedFormReport,
    OptimalPeak, TauGrid,
};
pub use error::{Error, Result};
pub use fitter::{build_design, fit_predict, nnls_fit, DesignRow, FitReport, LossTrace};
pub use qualifier::{exam_functional, qualify, ExamConfig, QualifyReport, Verdict};
pub use scaling::{
    fit_scaling, fit_sqrt_t_line, flops_to_tokens, predict_loss, q_curve, select_eta_ref, tokens_to_steps, transfer_lr,
    HorizonUnit, QCurve, RunRecord, ScalingFit, SqrtTLine,
};
pub use schedule::{LearningRateSequence, ScheduleKind, ScheduleSpec};
pub use sim::{make_problem, sgd_run, ConvexProblem, ProblemKind, SimResult};
