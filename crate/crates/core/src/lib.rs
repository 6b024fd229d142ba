//! Short-term object interaction anticipation toolkit.
//!
//! Everything downstream of the frozen backbones: temporal-context fusion
//! kernels, head post-processing with class-aware NMS, multi-source
//! ensembling, and the four-variant Top-5 mAP evaluation, plus a seeded
//! synthetic harness that exercises each stage without the real dataset.
//!
//! ```
//! use vista_core::eval::{evaluate, EvalConfig};
//! use vista_core::synth::{generate_scenario, perturb_to_predictions, NoiseConfig};
//!
//! let (taxonomy, gts) = generate_scenario(10, 4, 3, 2, 42)?;
//! let noise = NoiseConfig { box_jitter_sigma: 25.0, seed: 42, ..NoiseConfig::default() };
//! let preds = perturb_to_predictions(&gts, &taxonomy, &noise, 1)?;
//! let report = evaluate(&preds[0], &gts, &taxonomy, &EvalConfig::default())?;
//! assert!(report.map_overall <= report.map_noun);
//! # Ok::<(), vista_core::VistaError>(())
//! ```

pub mod config;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod postprocess;
pub mod sampling;
pub mod synth;
pub mod types;

pub use error::{Result, VistaError};
pub use types::{clip_box, iou, Box2D, GroundTruthInstance, PredictionSet, StaHypothesis, Taxonomy};
