//! Numerical tolerances shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

/// Tolerance constants in one record so call sites never hard-code them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Minimum |normalized cross product| for three points to count as non-collinear.
    pub collinear: f64,
    /// Minimum |w| for a homogeneous point to be considered finite.
    pub at_infinity: f64,
    /// Largest accepted condition number of the DLT system.
    pub max_condition: f64,
    /// Minimum |det| of a normalized homography.
    pub singular: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        collinear: 1e-9,
        at_infinity: 1e-12,
        max_condition: 1e12,
        singular: 1e-12,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}
