//! Criterion benchmarks for the bound engine, the exam and the fitter live
//! in `benches/`. This library only holds shared inputs.

use schedlaw::{LearningRateSequence, ScheduleSpec};

/// Cosine-decay learning rates at the benchmark horizon.
pub fn cosine_lrs(horizon: u64) -> LearningRateSequence {
    ScheduleSpec::cosine_decay(1.0 / (horizon as f64).sqrt(), horizon)
        .eval_discrete()
        .expect("valid schedule")
}
