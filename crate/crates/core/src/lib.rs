//! Randomization inference for regression-discontinuity designs under local
//! randomization: window selection by covariate balance, sharp-null tests and
//! inverted confidence intervals, and sensitivity analysis over windows,
//! hypothesized effects and departures from equal assignment odds.

pub mod data;
pub mod error;
pub mod inference;
pub mod rng;
pub mod sensitivity;
pub mod stats;
pub mod winselect;

pub use data::{Dataset, Observation, PanelRecord, PanelSchema, Window};
pub use error::{Error, ErrorClass, Result, Side};
pub use inference::{GridSpec, InferenceResult, InferenceSpec};
pub use sensitivity::{GammaBoundsResult, GammaBoundsSpec, SensitivitySpec, SensitivitySurface};
pub use stats::{PValueResult, PermutationPlan, PlanMode, StatKind};
pub use winselect::{StopReason, WindowScanResult, WindowScanSpec};
