//! Measurements on masks, size distributions and detector output.
//!
//! Conventions: Feret diameters carry a +1 px pixel-extent term, geometric
//! standard deviations use the population standard deviation of `ln d`, KL
//! divergences use the natural log, and IoU thresholds are inclusive.

mod ap;
mod errors;
mod psd;
mod shape;

pub use ap::{iou, match_and_ap, ApReport, DetRef, GtRef, ThresholdCurve, IOU_THRESHOLDS};
pub use errors::{mape, percentage_error, ErrorReport, SampleErrors};
pub use psd::{
    kl_divergence, kl_report, psd_stats, Histogram, KlReport, PsdStats, KL_EXCLUSION_WARNING,
};
pub use shape::{component_solidities, max_feret, solidity, MaskMetrics};
