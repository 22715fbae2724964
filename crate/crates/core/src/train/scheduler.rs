use super::TrainConfig;

/// A validation loss must undercut the best so far by this much to count
/// as an improvement.
pub const IMPROVEMENT_TOL: f64 = 1e-6;

/// Reduce-on-plateau state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchedulerState {
    pub lr: f32,
    /// Best validation loss so far; infinite before the first evaluation.
    pub best: f32,
    pub since_improvement: u32,
}

impl SchedulerState {
    pub fn new(lr_init: f32) -> Self {
        SchedulerState {
            lr: lr_init,
            best: f32::INFINITY,
            since_improvement: 0,
        }
    }
}

/// Learning-rate schedule constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauConfig {
    pub lr_floor: f32,
    pub factor: f32,
    pub patience: u32,
}

impl From<&TrainConfig> for PlateauConfig {
    fn from(cfg: &TrainConfig) -> Self {
        PlateauConfig {
            lr_floor: cfg.lr_floor,
            factor: cfg.plateau_factor,
            patience: cfg.plateau_patience,
        }
    }
}

/// Feeds one validation loss; returns the new state and whether it was an
/// improvement.
pub fn plateau_update(state: SchedulerState, val_loss: f32, cfg: &PlateauConfig) -> (SchedulerState, bool) {
    let mut next = state;
    if (val_loss as f64) < state.best as f64 - IMPROVEMENT_TOL {
        next.best = val_loss;
        next.since_improvement = 0;
        return (next, true);
    }
    next.since_improvement += 1;
    if next.since_improvement >= cfg.patience {
        next.since_improvement = 0;
        let reduced = state.lr as f64 * cfg.factor as f64;
        let floor = cfg.lr_floor as f64;
        // f32 rounding of lr·factor may land a hair above the floor
        next.lr = if reduced <= floor * (1.0 + 1e-6) {
            cfg.lr_floor
        } else {
            snap_decimal(reduced)
        };
    }
    (next, false)
}

/// Nearest `f32` to `v` rounded to six significant digits, so that decays
/// of a decimal rate by a decimal factor give the decimal result (1e-3 · 0.1
/// is exactly the `f32` literal 1e-4, not one ulp above it).
fn snap_decimal(v: f64) -> f32 {
    format!("{v:.5e}").parse().unwrap_or(v as f32)
}
