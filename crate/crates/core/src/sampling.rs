//! Observed-frame timestamps consumed by the temporal branch.

use serde::Serialize;

use crate::error::{Result, VistaError};

pub const DEFAULT_FRAME_COUNT: usize = 8;
pub const DEFAULT_SAMPLE_RATE: f64 = 2.0;
/// Short side of the temporal-branch frames. Metadata only.
pub const TEMPORAL_SHORT_SIDE: u32 = 384;
/// Still-branch short side at inference.
pub const INFERENCE_SHORT_SIDE: u32 = 800;
/// Still-branch short-side range used for training augmentation.
pub const TRAIN_SHORT_SIDE_RANGE: (u32, u32) = (640, 800);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingPlan {
    pub query_time: f64,
    /// Ascending; the last entry is `query_time`.
    pub frame_times: Vec<f64>,
    pub sample_rate: f64,
    pub frame_count: usize,
    pub short_side: u32,
}

/// Anchors the last frame at `query_time` and steps backwards at
/// `1 / sample_rate`, clamping times before the stream start to 0.
pub fn plan_frames(query_time: f64, frame_count: usize, sample_rate: f64) -> Result<SamplingPlan> {
    if !(query_time.is_finite() && query_time >= 0.0) {
        return Err(VistaError::invalid(
            "plan_frames",
            format!("query_time must be finite and >= 0, got {query_time}"),
        ));
    }
    if frame_count == 0 {
        return Err(VistaError::invalid("plan_frames", "frame_count must be >= 1"));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(VistaError::invalid(
            "plan_frames",
            format!("sample_rate must be finite and > 0, got {sample_rate}"),
        ));
    }
    let frame_times = (0..frame_count)
        .map(|k| {
            let steps_back = (frame_count - 1 - k) as f64;
            (query_time - steps_back / sample_rate).max(0.0)
        })
        .collect();
    Ok(SamplingPlan {
        query_time,
        frame_times,
        sample_rate,
        frame_count,
        short_side: TEMPORAL_SHORT_SIDE,
    })
}
