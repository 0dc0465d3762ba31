//! Training losses: class-balanced boundary cross-entropy plus the
//! occlusion-orientation loss.
//!
//! The orientation density is flat within `delta` of the ground truth and
//! decays through a sigmoid of a piecewise-linear function of the absolute
//! difference `d = |theta - theta*|`:
//!
//! ```text
//! f(d) = pi/2 - d      d in [0, pi]
//!        d - pi        d in (pi, 2pi]
//!        3pi/2 - d     d in (2pi, inf)
//! ```
//!
//! Written this way `f` jumps at `d = pi` and at `d = 2pi + delta`.
//! [`Variant::Symmetric`] replaces it with `pi/2 - circ(d)`, which is continuous
//! and equal to the first branch on `[0, pi]`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::repr::OrientedBoundaryMap;

/// Probability clamp for the boundary cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

const Z_QUADRATURE_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    AsWritten,
    Symmetric,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-written" => Ok(Variant::AsWritten),
            "symmetric" => Ok(Variant::Symmetric),
            other => Err(Error::invalid(format!(
                "variant: expected \"as-written\" or \"symmetric\", got {other:?}"
            ))),
        }
    }
}

/// Order in which per-pixel terms are summed. Both are deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    #[default]
    Sequential,
    Pairwise,
}

pub(crate) fn reduce(values: &[f64], how: Reduction) -> f64 {
    match how {
        Reduction::Sequential => values.iter().sum(),
        Reduction::Pairwise => pairwise_sum(values),
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationLossConfig {
    alpha: f64,
    delta: f64,
    variant: Variant,
    z: f64,
}

impl Default for OrientationLossConfig {
    fn default() -> Self {
        Self::new(4.0, 0.05, Variant::AsWritten).expect("default parameters are valid")
    }
}

impl OrientationLossConfig {
    pub fn new(alpha: f64, delta: f64, variant: Variant) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
        }
        if !(delta > 0.0 && delta < FRAC_PI_2) {
            return Err(Error::invalid(format!("delta must be in (0, pi/2), got {delta}")));
        }
        let mut cfg = Self {
            alpha,
            delta,
            variant,
            z: 1.0,
        };
        cfg.z = cfg.integrate_z();
        Ok(cfg)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Normalising constant of the density over one period of `theta*`.
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn log_z(&self) -> f64 {
        self.z.ln()
    }

    /// Trapezoidal integral over `theta* in (theta - pi, theta + pi]`, i.e. twice the integral over `d in [0, pi]`.
    fn integrate_z(&self) -> f64 {
        let n = Z_QUADRATURE_POINTS;
        let h = PI / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            acc += w * self.unnormalized(k as f64 * h);
        }
        2.0 * acc * h
    }

    fn in_flat_region(&self, d: f64) -> bool {
        match self.variant {
            Variant::AsWritten => d <= self.delta || (TAU - self.delta..=TAU + self.delta).contains(&d),
            Variant::Symmetric => {
                let m = d.rem_euclid(TAU);
                m.min(TAU - m) <= self.delta
            }
        }
    }

    /// Unnormalised density as a function of `d = |theta - theta*| >= 0`.
    pub fn unnormalized(&self, d: f64) -> f64 {
        if self.in_flat_region(d) {
            1.0
        } else {
            sigmoid(self.alpha * f_piece_unchecked(d, self.variant))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaMode {
    /// `beta = |Y-| / |Y|`, recomputed per image.
    AutoBalance,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLossConfig {
    pub beta_mode: BetaMode,
}

impl Default for BoundaryLossConfig {
    fn default() -> Self {
        Self {
            beta_mode: BetaMode::AutoBalance,
        }
    }
}

/// Both loss configurations plus the summation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossConfig {
    pub orientation: OrientationLossConfig,
    pub boundary: BoundaryLossConfig,
    pub reduction: Reduction,
    /// Drop the constant `log Z` from orientation terms (gradients are unaffected).
    pub skip_log_z: bool,
}

/// On-disk form of [`LossConfig`], read from TOML or JSON.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfigFile {
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub variant: Option<Variant>,
    /// `"auto-balance"` or `"fixed"`.
    pub beta_mode: Option<String>,
    pub beta: Option<f64>,
    pub reduction: Option<Reduction>,
    pub skip_log_z: Option<bool>,
}

impl LossConfigFile {
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            Ok(serde_json::from_str(text)?)
        } else {
            toml::from_str(text).map_err(|e| Error::format("loss config", e.to_string()))
        }
    }

    pub fn build(&self) -> Result<LossConfig> {
        let orientation = OrientationLossConfig::new(
            self.alpha.unwrap_or(4.0),
            self.delta.unwrap_or(0.05),
            self.variant.unwrap_or_default(),
        )?;
        let beta_mode = match self.beta_mode.as_deref().unwrap_or("auto-balance") {
            "auto-balance" => BetaMode::AutoBalance,
            "fixed" => {
                let b = self
                    .beta
                    .ok_or_else(|| Error::invalid("beta: required when beta_mode = \"fixed\""))?;
                if !(0.0..=1.0).contains(&b) {
                    return Err(Error::invalid(format!("beta: must be in [0, 1], got {b}")));
                }
                BetaMode::Fixed(b)
            }
            other => {
                return Err(Error::invalid(format!(
                    "beta_mode: expected \"auto-balance\" or \"fixed\", got {other:?}"
                )))
            }
        };
        Ok(LossConfig {
            orientation,
            boundary: BoundaryLossConfig { beta_mode },
            reduction: self.reduction.unwrap_or_default(),
            skip_log_z: self.skip_log_z.unwrap_or(false),
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln(sigmoid(x))`, stable for large |x|.
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// The piecewise function `f(d)` of the orientation density.
pub fn f_piece(d: f64, variant: Variant) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("f_piece needs d >= 0, got {d}")));
    }
    Ok(f_piece_unchecked(d, variant))
}

#[inline]
fn f_piece_unchecked(d: f64, variant: Variant) -> f64 {
    match variant {
        Variant::AsWritten => {
            if d <= PI {
                FRAC_PI_2 - d
            } else if d <= TAU {
                d - PI
            } else {
                1.5 * PI - d
            }
        }
        Variant::Symmetric => {
            let m = d.rem_euclid(TAU);
            FRAC_PI_2 - m.min(TAU - m)
        }
    }
}

/// `df/dd`, taking the left branch at the break points.
#[inline]
fn f_piece_slope(d: f64, variant: Variant) -> f64 {
    match variant {
        Variant::AsWritten => {
            if d <= PI {
                -1.0
            } else if d <= TAU {
                1.0
            } else {
                -1.0
            }
        }
        Variant::Symmetric => {
            let m = d.rem_euclid(TAU);
            // left derivative: at m == 0 we are arriving from just below 2pi
            if m > 0.0 && m <= PI {
                -1.0
            } else {
                1.0
            }
        }
    }
}

/// Normalised density `P(theta* | theta)`.
pub fn orient_density(theta_star: f64, theta: f64, cfg: &OrientationLossConfig) -> Result<f64> {
    if !theta_star.is_finite() || !theta.is_finite() {
        return Err(Error::invalid("orient_density inputs must be finite"));
    }
    Ok(cfg.unnormalized((theta - theta_star).abs()) / cfg.z)
}

/// Per-pixel orientation loss `-ln P(theta* | theta)` and its derivative in `theta*`.
///
/// With `include_log_z = false` the constant `ln Z` is omitted.
#[inline]
pub fn orient_pixel_loss(theta_star: f64, theta: f64, cfg: &OrientationLossConfig, include_log_z: bool) -> (f64, f64) {
    let diff = theta_star - theta;
    let d = diff.abs();
    let log_z = if include_log_z { cfg.log_z() } else { 0.0 };
    if cfg.in_flat_region(d) {
        return (log_z, 0.0);
    }
    let x = cfg.alpha * f_piece_unchecked(d, cfg.variant);
    let loss = neg_log_sigmoid(x) + log_z;
    // d/dx[-ln s(x)] = -(1 - s(x)); dx/dd = alpha f'(d); dd/dtheta* = sign(diff)
    let grad = -(1.0 - sigmoid(x)) * cfg.alpha * f_piece_slope(d, cfg.variant) * diff.signum();
    (loss, grad)
}

/// Per-pixel balanced cross-entropy on a pre-sigmoid activation, with its derivative.
///
/// Probabilities are clamped to `[eps, 1 - eps]`; the flag reports whether clamping fired.
#[inline]
pub fn boundary_pixel_loss(activation: f64, positive: bool, beta: f64) -> (f64, f64, bool) {
    let p = sigmoid(activation);
    let (loss, clamped) = bce_on_prob(p, positive, beta);
    let grad = if positive { beta * (p - 1.0) } else { (1.0 - beta) * p };
    (loss, grad, clamped)
}

#[inline]
fn bce_on_prob(p: f64, positive: bool, beta: f64) -> (f64, bool) {
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let clamped = pc != p;
    let loss = if positive {
        -beta * pc.ln()
    } else {
        -(1.0 - beta) * (1.0 - pc).ln()
    };
    (loss, clamped)
}

/// Weight on the positive class for a ground-truth edge map.
pub fn balance_beta(gt_edges: &Raster, mode: BetaMode) -> f64 {
    match mode {
        BetaMode::Fixed(b) => b,
        BetaMode::AutoBalance => {
            let total = gt_edges.len();
            let pos = gt_edges.data().iter().filter(|&&e| e > 0.5).count();
            (total - pos) as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Raster,
    /// Orientation: no ground-truth edge pixels. Boundary: a probability was clamped.
    pub flagged: bool,
}

/// Orientation loss summed over ground-truth edge pixels, gradient with respect to `theta*`.
pub fn orient_loss(pred: &Raster, gt: &OrientedBoundaryMap, cfg: &LossConfig) -> Result<LossOutput> {
    if !pred.same_size(&gt.edge) || pred.channels() != 1 {
        return Err(Error::ShapeMismatch("orientation prediction vs ground truth".into()));
    }
    let mut grad = Raster::new(pred.width(), pred.height(), 1)?;
    let mut terms = Vec::new();
    for i in 0..pred.len() {
        if gt.edge.data()[i] <= 0.5 {
            continue;
        }
        let theta = gt.orient.data()[i] as f64;
        let (l, g) = orient_pixel_loss(pred.data()[i] as f64, theta, &cfg.orientation, !cfg.skip_log_z);
        terms.push(l);
        grad.data_mut()[i] = g as f32;
    }
    let flagged = terms.is_empty();
    if flagged {
        log::warn!("orientation loss: ground truth has no edge pixels");
    }
    Ok(LossOutput {
        loss: reduce(&terms, cfg.reduction),
        grad,
        flagged,
    })
}

/// Balanced cross-entropy on probabilities; the gradient is taken with respect to the pre-sigmoid activation.
pub fn boundary_loss(pred: &Raster, gt_edges: &Raster, cfg: &LossConfig) -> Result<LossOutput> {
    if !pred.same_size(gt_edges) || pred.channels() != 1 {
        return Err(Error::ShapeMismatch("boundary prediction vs ground truth".into()));
    }
    let beta = balance_beta(gt_edges, cfg.boundary.beta_mode);
    let mut grad = Raster::new(pred.width(), pred.height(), 1)?;
    let mut terms = Vec::with_capacity(pred.len());
    let mut flagged = false;
    for i in 0..pred.len() {
        let p = pred.data()[i] as f64;
        let positive = gt_edges.data()[i] > 0.5;
        let (l, clamped) = bce_on_prob(p, positive, beta);
        flagged |= clamped;
        terms.push(l);
        let g = if positive { beta * (p - 1.0) } else { (1.0 - beta) * p };
        grad.data_mut()[i] = g as f32;
    }
    if flagged {
        log::warn!("boundary loss: probabilities clamped to [{PROB_EPS}, 1 - {PROB_EPS}]");
    }
    Ok(LossOutput {
        loss: reduce(&terms, cfg.reduction),
        grad,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocLoss {
    pub total: f64,
    pub boundary: LossOutput,
    pub orientation: LossOutput,
}

/// Per-image training objective: boundary loss plus orientation loss.
pub fn doc_loss(pred_edge: &Raster, pred_orient: &Raster, gt: &OrientedBoundaryMap, cfg: &LossConfig) -> Result<DocLoss> {
    let boundary = boundary_loss(pred_edge, &gt.edge, cfg)?;
    let orientation = orient_loss(pred_orient, gt, cfg)?;
    Ok(DocLoss {
        total: boundary.loss + orientation.loss,
        boundary,
        orientation,
    })
}
