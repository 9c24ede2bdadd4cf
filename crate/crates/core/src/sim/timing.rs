//! Masked-time scheduling: perception and planning of iteration `k` overlap
//! the robot motion planned in iteration `k - 1`.

use serde::{Deserialize, Serialize};

/// Stage durations in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageDurations {
    pub acquisition: f64,
    pub perception: f64,
    pub planning: f64,
    pub motion_grasp: f64,
    pub motion_release: f64,
}

impl Default for StageDurations {
    fn default() -> Self {
        StageDurations { acquisition: 0.2, perception: 0.8, planning: 0.4, motion_grasp: 3.0, motion_release: 1.5 }
    }
}

impl StageDurations {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.acquisition, self.perception, self.planning, self.motion_grasp, self.motion_release];
        if all.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(format!("stage durations must be finite and nonnegative: {all:?}"));
        }
        Ok(())
    }

    /// Motion time of an iteration that produced a trajectory.
    pub fn motion(&self) -> f64 {
        self.motion_grasp + self.motion_release
    }
}

/// Wall time of one iteration: acquisition, then perception and planning
/// running alongside whatever motion is still pending.
pub fn masked_time_step(d: &StageDurations, pending_motion: Option<f64>) -> f64 {
    d.acquisition + (d.perception + d.planning).max(pending_motion.unwrap_or(0.0))
}

/// Seconds to whole nanoseconds, the clock's unit.
pub fn nanos(seconds: f64) -> u64 {
    (seconds * 1e9).round() as u64
}

pub fn seconds(nanos: u64) -> f64 {
    nanos as f64 / 1e9
}
