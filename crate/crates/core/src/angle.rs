//! Angle arithmetic.
//!
//! Angles live in a right-handed frame with x pointing along increasing
//! column and y pointing along *decreasing* row (y up). A direction `theta`
//! therefore has its visual left at `theta + pi/2`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An angle in radians normalised to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle(f64);

impl Angle {
    pub fn new(theta: f64) -> Result<Self> {
        wrap(theta)
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// Direction of the image-space step `(d_row, d_col)`.
    pub fn of_step(d_row: f64, d_col: f64) -> Self {
        Angle(wrap_unchecked((-d_row).atan2(d_col)))
    }

    pub fn reversed(self) -> Self {
        Angle(wrap_unchecked(self.0 + PI))
    }

    /// Unit vector in image coordinates `(d_row, d_col)`.
    pub fn image_step(self) -> (f64, f64) {
        (-self.0.sin(), self.0.cos())
    }
}

impl From<Angle> for f64 {
    fn from(a: Angle) -> f64 {
        a.0
    }
}

/// Normalises `theta` into `(-pi, pi]`.
pub fn wrap(theta: f64) -> Result<Angle> {
    if !theta.is_finite() {
        return Err(Error::invalid(format!("angle must be finite, got {theta}")));
    }
    Ok(Angle(wrap_unchecked(theta)))
}

/// Wrapped angle rounded to `f32`, keeping the result inside `(-pi, pi]` after rounding.
pub fn to_f32(theta: f64) -> f32 {
    let v = wrap_unchecked(theta) as f32;
    if v <= -std::f32::consts::PI {
        std::f32::consts::PI
    } else {
        v
    }
}

#[inline]
pub(crate) fn wrap_unchecked(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Distance on the circle, in `[0, pi]`.
pub fn circ_dist(a: Angle, b: Angle) -> f64 {
    circ_dist_raw(a.0, b.0)
}

#[inline]
pub(crate) fn circ_dist_raw(a: f64, b: f64) -> f64 {
    let m = (a - b).abs().rem_euclid(TAU);
    m.min(TAU - m)
}

/// The quarter-turn test: `|a - b| mod 2pi` lies in `[0, pi/2) ∪ (3pi/2, 2pi]`.
#[inline]
pub fn within_quarter_turn(a: f64, b: f64) -> bool {
    let m = (a - b).abs().rem_euclid(TAU);
    m < PI / 2.0 || m > 1.5 * PI
}
