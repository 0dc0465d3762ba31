//! Turning raw network outputs into scored, thin, tangent-aligned occlusion boundaries.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{DynamicImage, Rgb, RgbImage};

use crate::angle::{to_f32, within_quarter_turn, wrap_unchecked};
use crate::chain::{trace_chains, Pixel};
use crate::error::{Error, Result};
use crate::net::{forward, Head, ModelParams};
use crate::raster::{encode_png, Raster};
use crate::repr::{tangents_on_chains, OrientedBoundaryMap};

pub const DEFAULT_NMS_MARGIN: f64 = 1.01;
pub const DEFAULT_NMS_RADIUS: f64 = 1.0;
pub const DEFAULT_TANGENT_WINDOW: usize = 10;
pub const DEFAULT_SCALES: [f64; 3] = [0.5, 1.0, 1.5];

/// Binomial approximation of a Gaussian with sigma = 1.
const SMOOTH_5: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub margin: f64,
    pub radius: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_NMS_MARGIN,
            radius: DEFAULT_NMS_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub nms: NmsConfig,
    pub tangent_window: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            nms: NmsConfig::default(),
            tangent_window: DEFAULT_TANGENT_WINDOW,
        }
    }
}

/// Inference output. All four rasters share one support: the pixels that survive thinning.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBoundaryMap {
    /// Boundary confidence `c_e`, 0 off the support.
    pub edge_conf: Raster,
    /// Tangent-aligned orientation, NaN off the support.
    pub orient: Raster,
    /// Orientation confidence `c_o` in `[0, 1]`, 0 off the support.
    pub orient_conf: Raster,
    /// `c_e + c_o`, 0 off the support.
    pub total: Raster,
    /// Support pixels without a usable tangent (isolated pixels): orientation passed through, `c_o = 0`.
    pub untangented: Vec<Pixel>,
}

impl ScoredBoundaryMap {
    pub fn width(&self) -> usize {
        self.total.width()
    }

    pub fn height(&self) -> usize {
        self.total.height()
    }

    pub fn support_count(&self) -> usize {
        self.orient.data().iter().filter(|v| v.is_finite()).count()
    }

    /// Oriented map whose edge channel is the boundary confidence.
    pub fn to_oriented(&self) -> OrientedBoundaryMap {
        OrientedBoundaryMap::new(self.edge_conf.clone(), self.orient.clone()).expect("rasters share dimensions")
    }

    /// Scores a hard oriented map as a prediction: support is every edge pixel with an
    /// orientation, `c_e` is the edge value and `c_o = 1`.
    pub fn from_oriented(m: &OrientedBoundaryMap) -> Self {
        let (w, h) = (m.width(), m.height());
        let mut edge_conf = Raster::new(w, h, 1).expect("valid dimensions");
        let mut orient = Raster::filled(w, h, 1, f32::NAN).expect("valid dimensions");
        let mut orient_conf = Raster::new(w, h, 1).expect("valid dimensions");
        let mut total = Raster::new(w, h, 1).expect("valid dimensions");
        for i in 0..m.edge.len() {
            let (e, o) = (m.edge.data()[i], m.orient.data()[i]);
            if e > 0.0 && o.is_finite() {
                edge_conf.data_mut()[i] = e;
                orient.data_mut()[i] = o;
                orient_conf.data_mut()[i] = 1.0;
                total.data_mut()[i] = e + 1.0;
            }
        }
        Self {
            edge_conf,
            orient,
            orient_conf,
            total,
            untangented: Vec::new(),
        }
    }

    /// File paths for the four rasters under `prefix`, in the order edge, orient, orient_conf, total.
    pub fn fmap_files(prefix: &Path) -> [PathBuf; 4] {
        let base = prefix.as_os_str().to_string_lossy();
        ["edge", "orient", "orient_conf", "total"].map(|k| PathBuf::from(format!("{base}.{k}.fmap")))
    }

    /// Encoded rasters paired with their paths under `prefix`.
    pub fn to_fmap_files(&self, prefix: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let rasters = [&self.edge_conf, &self.orient, &self.orient_conf, &self.total];
        Self::fmap_files(prefix)
            .into_iter()
            .zip(rasters)
            .map(|(p, r)| (p, r.to_fmap_bytes()))
            .collect()
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let [e, o, oc, t] = Self::fmap_files(prefix);
        let (edge_conf, orient, orient_conf, total) = (
            Raster::load_fmap(e)?,
            Raster::load_fmap(o)?,
            Raster::load_fmap(oc)?,
            Raster::load_fmap(t)?,
        );
        for r in [&orient, &orient_conf, &total] {
            if !r.same_shape(&edge_conf) {
                return Err(Error::ShapeMismatch("scored map rasters differ in size".into()));
            }
        }
        Ok(Self {
            edge_conf,
            orient,
            orient_conf,
            total,
            untangented: Vec::new(),
        })
    }

    /// Binary map of support pixels whose total score is at least `threshold`.
    pub fn thresholded(&self, threshold: f64) -> OrientedBoundaryMap {
        let mut m = OrientedBoundaryMap::empty(self.width(), self.height()).expect("valid dimensions");
        for i in 0..self.total.len() {
            let t = self.total.data()[i];
            let o = self.orient.data()[i];
            if o.is_finite() && t as f64 >= threshold {
                m.edge.data_mut()[i] = 1.0;
                m.orient.data_mut()[i] = o;
            }
        }
        m
    }
}

fn smooth(src: &[f32], w: usize, h: usize) -> Vec<f32> {
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; w * h];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = (0..5)
                .map(|k| SMOOTH_5[k] * src[r * w + clampi(c as isize + k as isize - 2, w)])
                .sum();
        }
    }
    let mut out = vec![0.0f32; w * h];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = (0..5)
                .map(|k| SMOOTH_5[k] * tmp[clampi(r as isize + k as isize - 2, h) * w + c])
                .sum();
        }
    }
    out
}

/// Unit normal `(d_row, d_col)` of the smoothed field at every pixel, from the dominant
/// eigenvector of the locally averaged gradient structure tensor.
pub fn normal_field(edge_prob: &Raster) -> Vec<(f64, f64)> {
    let (w, h) = (edge_prob.width(), edge_prob.height());
    let vals: Vec<f32> = (0..edge_prob.len())
        .map(|i| {
            let v = edge_prob.data()[i * edge_prob.channels()];
            if v.is_finite() {
                v
            } else {
                0.0
            }
        })
        .collect();
    let s = smooth(&vals, w, h);
    let at = |r: isize, c: isize| s[r.clamp(0, h as isize - 1) as usize * w + c.clamp(0, w as isize - 1) as usize];
    let mut jrr = vec![0.0f32; w * h];
    let mut jrc = vec![0.0f32; w * h];
    let mut jcc = vec![0.0f32; w * h];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gr = 0.5 * (at(r + 1, c) - at(r - 1, c));
            let gc = 0.5 * (at(r, c + 1) - at(r, c - 1));
            let i = r as usize * w + c as usize;
            jrr[i] = gr * gr;
            jrc[i] = gr * gc;
            jcc[i] = gc * gc;
        }
    }
    let (jrr, jrc, jcc) = (smooth(&jrr, w, h), smooth(&jrc, w, h), smooth(&jcc, w, h));
    (0..w * h)
        .map(|i| {
            let phi = 0.5 * (2.0 * jrc[i] as f64).atan2(jrr[i] as f64 - jcc[i] as f64);
            (phi.cos(), phi.sin())
        })
        .collect()
}

/// Thins a boundary probability map to its ridge.
///
/// A pixel with value `v > 0` survives iff `v * margin > p+` and `v * margin >= p-`, where
/// `p+` and `p-` are the bilinear samples at `+radius` and `-radius` along the local normal.
/// Returns the binary survivor map and `c_e` (the probability on survivors, 0 elsewhere).
pub fn nms(edge_prob: &Raster, cfg: &NmsConfig) -> (Raster, Raster) {
    let (w, h) = (edge_prob.width(), edge_prob.height());
    let normals = normal_field(edge_prob);
    let mut mask = Raster::new(w, h, 1).expect("dimensions come from a raster");
    let mut conf = Raster::new(w, h, 1).expect("dimensions come from a raster");
    for r in 0..h {
        for c in 0..w {
            let v = edge_prob.at(r, c, 0) as f64;
            if !(v > 0.0) {
                continue;
            }
            if survives(edge_prob, r, c, normals[r * w + c], cfg) {
                mask.set(r, c, 1.0);
                conf.set(r, c, v as f32);
            }
        }
    }
    (mask, conf)
}

/// The survival predicate of [`nms`] at one pixel, exposed so results can be re-checked.
pub fn survives(edge_prob: &Raster, r: usize, c: usize, normal: (f64, f64), cfg: &NmsConfig) -> bool {
    let v = edge_prob.at(r, c, 0) as f64;
    if !(v > 0.0) {
        return false;
    }
    let (dr, dc) = (normal.0 * cfg.radius, normal.1 * cfg.radius);
    let plus = edge_prob.bilinear(r as f64 + dr, c as f64 + dc, 0) as f64;
    let minus = edge_prob.bilinear(r as f64 - dr, c as f64 - dc, 0) as f64;
    let vm = v * cfg.margin;
    vm > plus && vm >= minus
}

/// Snaps a predicted orientation onto the undirected tangent, keeping the side it points to.
///
/// Returns the aligned angle and whether the tangent was unusable (NaN), in which case the
/// prediction is passed through wrapped.
pub fn align_orientation(theta_pred: f64, theta_t: f64) -> (f64, bool) {
    if !theta_t.is_finite() {
        return (wrap_unchecked(theta_pred), true);
    }
    if within_quarter_turn(theta_pred, theta_t) {
        (wrap_unchecked(theta_t), false)
    } else {
        (wrap_unchecked(theta_t + PI), false)
    }
}

/// `|cos(theta_pred - theta_t)|`.
pub fn orient_confidence(theta_pred: f64, theta_t: f64) -> f64 {
    (theta_pred - theta_t).cos().abs().min(1.0)
}

pub fn infer(edge_prob: &Raster, orient_pred: &Raster) -> Result<ScoredBoundaryMap> {
    infer_with(edge_prob, orient_pred, &InferConfig::default())
}

/// Thinning, chain tracing, tangent estimation, alignment and scoring.
pub fn infer_with(edge_prob: &Raster, orient_pred: &Raster, cfg: &InferConfig) -> Result<ScoredBoundaryMap> {
    if !edge_prob.same_size(orient_pred) {
        return Err(Error::ShapeMismatch(format!(
            "edge probability is {}x{}, orientation is {}x{}",
            edge_prob.width(),
            edge_prob.height(),
            orient_pred.width(),
            orient_pred.height()
        )));
    }
    let (w, h) = (edge_prob.width(), edge_prob.height());
    let (mask, edge_conf) = nms(edge_prob, &cfg.nms);
    let chains = trace_chains(&mask);
    let tangents = tangents_on_chains(&chains, w, h, cfg.tangent_window);
    let isolated: std::collections::HashSet<Pixel> = tangents.isolated.iter().copied().collect();

    let mut orient = Raster::filled(w, h, 1, f32::NAN)?;
    let mut orient_conf = Raster::new(w, h, 1)?;
    let mut total = Raster::new(w, h, 1)?;
    let mut untangented = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) <= 0.5 {
                continue;
            }
            let pred = orient_pred.at(r, c, 0) as f64;
            if !pred.is_finite() {
                return Err(Error::invalid(format!("orientation prediction is not finite at ({r}, {c})")));
            }
            let p = Pixel::new(r as i32, c as i32);
            let t = if isolated.contains(&p) {
                f64::NAN
            } else {
                tangents.tangent.get(r, c) as f64
            };
            let (aligned, flagged) = align_orientation(pred, t);
            let co = if flagged {
                untangented.push(p);
                0.0
            } else {
                orient_confidence(pred, t)
            };
            orient.set(r, c, to_f32(aligned));
            orient_conf.set(r, c, co as f32);
            total.set(r, c, edge_conf.get(r, c) + co as f32);
        }
    }
    Ok(ScoredBoundaryMap {
        edge_conf,
        orient,
        orient_conf,
        total,
        untangented,
    })
}

/// Multi-scale network output.
#[derive(Debug, Clone)]
pub struct MultiScaleOutput {
    pub edge_prob: Raster,
    pub orient: Raster,
    /// Scales dropped because the resized image was smaller than the receptive field.
    pub skipped: Vec<f64>,
}

/// Runs the network at several scales and averages the results at input resolution.
///
/// Probabilities are averaged directly; orientations by the angle of the mean unit vector.
/// A single contributing scale at the input size returns the raw network output unchanged.
pub fn multiscale_average(params: &ModelParams, image: &Raster, scales: &[f64]) -> Result<MultiScaleOutput> {
    if scales.is_empty() || scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("scales must be positive and finite"));
    }
    let (w, h) = (image.width(), image.height());
    let rf = params.receptive_field(Head::Orientation);
    let mut outputs = Vec::new();
    let mut skipped = Vec::new();
    for &s in scales {
        let sw = (w as f64 * s).round() as usize;
        let sh = (h as f64 * s).round() as usize;
        if sw < rf || sh < rf {
            log::warn!("skipping scale {s}: {sw}x{sh} is below the {rf}-pixel receptive field");
            skipped.push(s);
            continue;
        }
        if (sw, sh) == (w, h) {
            outputs.push(forward(params, image)?);
        } else {
            let (e, o) = forward(params, &image.resize_bilinear(sw, sh)?)?;
            let cos = o.map(f32::cos).resize_bilinear(w, h)?;
            let sin = o.map(f32::sin).resize_bilinear(w, h)?;
            let o = Raster::from_vec(
                w,
                h,
                1,
                sin.data().iter().zip(cos.data()).map(|(&s, &c)| s.atan2(c)).collect(),
            )?;
            outputs.push((e.resize_bilinear(w, h)?, o));
        }
    }
    match outputs.len() {
        0 => Err(Error::invalid("every scale is below the network's receptive field")),
        1 => {
            let (edge_prob, orient) = outputs.pop().unwrap();
            Ok(MultiScaleOutput {
                edge_prob,
                orient,
                skipped,
            })
        }
        n => {
            let mut e = vec![0.0f64; w * h];
            let mut cs = vec![0.0f64; w * h];
            let mut sn = vec![0.0f64; w * h];
            for (ep, op) in &outputs {
                for i in 0..w * h {
                    e[i] += ep.data()[i] as f64;
                    cs[i] += (op.data()[i] as f64).cos();
                    sn[i] += (op.data()[i] as f64).sin();
                }
            }
            let edge_prob = Raster::from_vec(w, h, 1, e.iter().map(|v| (v / n as f64) as f32).collect())?;
            let orient = Raster::from_vec(w, h, 1, sn.iter().zip(&cs).map(|(s, c)| s.atan2(*c) as f32).collect())?;
            Ok(MultiScaleOutput {
                edge_prob,
                orient,
                skipped,
            })
        }
    }
}

/// Angle of the mean unit vector.
pub fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    s.atan2(c)
}

/// Input image dimmed to gray, boundary pixels coloured by total score (blue low, red high),
/// and a short yellow tick along the orientation on every sixth pixel of each traced chain.
pub fn overlay_png(image: &Raster, scored: &ScoredBoundaryMap) -> Result<Vec<u8>> {
    if image.width() != scored.width() || image.height() != scored.height() {
        return Err(Error::ShapeMismatch("overlay image vs scored map".into()));
    }
    let (w, h) = (image.width(), image.height());
    let gray = image.to_grayscale();
    let mut img = RgbImage::from_fn(w as u32, h as u32, |c, r| {
        let g = (gray.get(r as usize, c as usize).clamp(0.0, 1.0) * 160.0) as u8;
        Rgb([g, g, g])
    });
    for r in 0..h {
        for c in 0..w {
            if scored.orient.get(r, c).is_finite() {
                let t = (scored.total.get(r, c) / 2.0).clamp(0.0, 1.0);
                img.put_pixel(c as u32, r as u32, Rgb([(255.0 * t) as u8, 40, (255.0 * (1.0 - t)) as u8]));
            }
        }
    }
    let support = Raster::from_fn(w, h, |r, c| scored.orient.get(r, c).is_finite() as u8 as f32)?;
    for chain in trace_chains(&support) {
        for p in chain.points.iter().step_by(6) {
            let theta = scored.orient.get(p.row as usize, p.col as usize) as f64;
            let (dr, dc) = (-theta.sin(), theta.cos());
            for k in 1..=4 {
                let rr = (p.row as f64 + dr * k as f64).round();
                let cc = (p.col as f64 + dc * k as f64).round();
                if rr >= 0.0 && cc >= 0.0 && (rr as usize) < h && (cc as usize) < w {
                    img.put_pixel(cc as u32, rr as u32, Rgb([255, 230, 0]));
                }
            }
        }
    }
    encode_png(&DynamicImage::ImageRgb8(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::validate;
    use proptest::prelude::*;

    #[test]
    fn ridge_profile_keeps_only_the_peak() {
        let profile = [0.1f32, 0.5, 0.9, 0.5, 0.1];
        let prob = Raster::from_fn(5, 7, |_, c| profile[c]).unwrap();
        let (mask, conf) = nms(&prob, &NmsConfig::default());
        for r in 0..7 {
            for c in 0..5 {
                assert_eq!(mask.get(r, c) > 0.5, c == 2, "({r}, {c})");
            }
            assert_eq!(conf.get(r, 2), 0.9);
        }
    }

    #[test]
    fn zeros_give_nothing() {
        let (mask, _) = nms(&Raster::new(6, 6, 1).unwrap(), &NmsConfig::default());
        assert!(mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn thin_line_survives() {
        let prob = Raster::from_fn(12, 12, |r, c| if r == c { 0.8 } else { 0.0 }).unwrap();
        let (mask, _) = nms(&prob, &NmsConfig::default());
        assert_eq!(mask, prob.map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
    }

    #[test]
    fn two_wide_plateau_keeps_one_pixel_at_unit_margin() {
        let profile = [0.0f32, 0.2, 0.7, 0.7, 0.2, 0.0];
        let prob = Raster::from_fn(6, 9, |_, c| profile[c]).unwrap();
        let cfg = NmsConfig {
            margin: 1.0,
            radius: 1.0,
        };
        let (mask, _) = nms(&prob, &cfg);
        for r in 0..9 {
            let kept: Vec<_> = (0..6).filter(|&c| mask.get(r, c) > 0.5).collect();
            assert_eq!(kept.len(), 1, "row {r}: {kept:?}");
            assert!(kept[0] == 2 || kept[0] == 3);
        }
    }

    #[test]
    fn alignment_examples() {
        assert_eq!(align_orientation(0.2, 0.1), (0.1, false));
        let (a, _) = align_orientation(3.0, 0.0);
        assert!((a - PI).abs() < 1e-15);
        let (a, _) = align_orientation(-PI / 2.0 + 0.01, PI / 2.0);
        assert!((a + PI / 2.0).abs() < 1e-12);
        let (a, flagged) = align_orientation(4.0, f64::NAN);
        assert!(flagged);
        assert!((a - (4.0 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(orient_confidence(0.7, 0.7), 1.0);
        assert!(orient_confidence(PI / 2.0, 0.0) < 1e-15);
        // |cos 3.0| from a direct evaluation
        assert!((orient_confidence(3.0, 0.0) - 0.9899924966004454).abs() < 1e-15);
    }

    #[test]
    fn circular_mean_respects_wraparound() {
        let m = circular_mean(&[PI - 0.1, -PI + 0.1]);
        assert!((m.abs() - PI).abs() < 1e-12);
    }

    fn disk_gt(w: usize, h: usize) -> OrientedBoundaryMap {
        use crate::chain::Mask;
        let mut mask = Mask::new(w, h);
        let (cr, cc, rad) = (h as f64 / 2.0, w as f64 / 2.0, w.min(h) as f64 / 3.0);
        for r in 0..h {
            for c in 0..w {
                let inside = |r: f64, c: f64| (r - cr).powi(2) + (c - cc).powi(2) <= rad * rad;
                let me = inside(r as f64, c as f64);
                let bnd = me
                    && [(0i32, 1i32), (1, 0), (0, -1), (-1, 0)]
                        .iter()
                        .any(|&(dr, dc)| !inside(r as f64 + dr as f64, c as f64 + dc as f64));
                if bnd {
                    mask.set(Pixel::new(r as i32, c as i32), true);
                }
            }
        }
        let edge = Raster::from_fn(w, h, |r, c| mask.get(Pixel::new(r as i32, c as i32)) as u8 as f32).unwrap();
        let tan = crate::repr::estimate_tangents(&edge, 10);
        // orientation pointing along the tangent, clockwise around the disk
        let orient = Raster::from_fn(w, h, |r, c| {
            if edge.get(r, c) == 0.0 {
                return f32::NAN;
            }
            let t = tan.tangent.get(r, c) as f64;
            let (dr, dc) = (r as f64 - cr, c as f64 - cc);
            // left of the tangent direction should point to the inside
            let left = (-(t + PI / 2.0).sin(), (t + PI / 2.0).cos());
            let theta = if left.0 * -dr + left.1 * -dc > 0.0 { t } else { t + PI };
            to_f32(theta)
        })
        .unwrap();
        OrientedBoundaryMap::new(edge, orient).unwrap()
    }

    #[test]
    fn ground_truth_input_scores_two() {
        let gt = disk_gt(40, 36);
        let orient_in = gt.orient.map(|v| if v.is_finite() { v } else { 0.0 });
        let s = infer(&gt.edge, &orient_in).unwrap();
        assert!(s.untangented.is_empty());
        assert_eq!(s.support_count(), gt.edge_count());
        for i in 0..gt.edge.len() {
            if gt.edge.data()[i] > 0.5 {
                assert!((s.total.data()[i] - 2.0).abs() < 1e-6);
                assert_eq!(s.orient.data()[i], gt.orient.data()[i]);
            }
        }
        assert!(validate(&s.to_oriented(), false).is_empty());
    }

    #[test]
    fn perpendicular_prediction_scores_edge_only() {
        let gt = disk_gt(30, 30);
        let tan = crate::repr::estimate_tangents(&gt.edge, 10);
        let orient_in = tan.tangent.map(|t| if t.is_finite() { t + std::f32::consts::FRAC_PI_2 } else { 0.0 });
        let s = infer(&gt.edge, &orient_in).unwrap();
        for i in 0..gt.edge.len() {
            if gt.edge.data()[i] > 0.5 {
                assert!(s.orient_conf.data()[i] < 1e-6);
                assert!((s.total.data()[i] - s.edge_conf.data()[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn transposition_is_covariant() {
        let gt = disk_gt(33, 27);
        let mut prob = gt.edge.map(|v| v * 0.9);
        // soften the ridge a little so thinning has work to do
        let base = prob.clone();
        for r in 1..26 {
            for c in 1..32 {
                if base.get(r, c) == 0.0 {
                    let n = base.get(r - 1, c).max(base.get(r + 1, c)).max(base.get(r, c - 1)).max(base.get(r, c + 1));
                    prob.set(r, c, n * 0.4);
                }
            }
        }
        let orient_in = Raster::from_fn(33, 27, |r, c| ((r * 7 + c * 3) % 11) as f32 * 0.57 - 3.0).unwrap();
        let a = infer(&prob, &orient_in).unwrap();
        let orient_t = orient_in.transpose().map(|t| (PI / 2.0 - t as f64) as f32);
        let b = infer(&prob.transpose(), &orient_t).unwrap();
        assert_eq!(a.edge_conf.transpose(), b.edge_conf);
        let at = a.orient.transpose();
        for i in 0..at.len() {
            let (x, y) = (at.data()[i], b.orient.data()[i]);
            assert_eq!(x.is_finite(), y.is_finite());
            if x.is_finite() {
                let expect = wrap_unchecked(PI / 2.0 - x as f64);
                assert!(crate::angle::circ_dist_raw(expect, y as f64) < 1e-4, "{i}: {x} {y}");
            }
        }
    }

    proptest! {
        #[test]
        fn aligned_angle_is_tangent_or_its_reverse(pred in -10.0f64..10.0, t in 0.0f64..PI) {
            let (a, flagged) = align_orientation(pred, t);
            prop_assert!(!flagged);
            let d = crate::angle::circ_dist_raw(a, t);
            prop_assert!(d < 1e-12 || (d - PI).abs() < 1e-12);
            prop_assert!(crate::angle::circ_dist_raw(a, pred) <= PI / 2.0 + 1e-12);
        }

        #[test]
        fn survivors_satisfy_the_predicate(vals in proptest::collection::vec(0.0f32..1.0, 80)) {
            let prob = Raster::from_vec(10, 8, 1, vals).unwrap();
            let cfg = NmsConfig::default();
            let (mask, conf) = nms(&prob, &cfg);
            let normals = normal_field(&prob);
            for r in 0..8 {
                for c in 0..10 {
                    let kept = mask.get(r, c) > 0.5;
                    prop_assert_eq!(kept, survives(&prob, r, c, normals[r * 10 + c], &cfg));
                    prop_assert_eq!(conf.get(r, c), if kept { prob.get(r, c) } else { 0.0 });
                }
            }
        }
    }
}
