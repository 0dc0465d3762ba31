//! Per-pixel occlusion representation: a boundary map `e` paired with an
//! orientation map `theta` whose sense puts the foreground on the visual left.
//!
//! Conversions go both ways between directed boundary fragments and the dense
//! pixel form, and undirected tangents are estimated from thin edge maps.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::angle::{wrap_unchecked, within_quarter_turn};
use crate::chain::{trace_chains, Mask, Pixel, PixelChain};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Default chord length for ground-truth orientation and tangent windows.
pub const DEFAULT_FRAGMENT_LEN: usize = 10;

/// Dense `(e, theta)` maps. `orient` is NaN wherever `edge` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBoundaryMap {
    pub edge: Raster,
    pub orient: Raster,
}

impl OrientedBoundaryMap {
    pub fn new(edge: Raster, orient: Raster) -> Result<Self> {
        if !edge.same_shape(&orient) || edge.channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "edge {}x{}x{} vs orient {}x{}x{}",
                edge.width(),
                edge.height(),
                edge.channels(),
                orient.width(),
                orient.height(),
                orient.channels()
            )));
        }
        Ok(Self { edge, orient })
    }

    /// All-background ground truth.
    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Ok(Self {
            edge: Raster::new(width, height, 1)?,
            orient: Raster::filled(width, height, 1, f32::NAN)?,
        })
    }

    pub fn width(&self) -> usize {
        self.edge.width()
    }

    pub fn height(&self) -> usize {
        self.edge.height()
    }

    pub fn edge_count(&self) -> usize {
        self.edge.data().iter().filter(|&&e| e > 0.5).count()
    }

    pub fn edge_mask(&self) -> Mask {
        Mask::from_raster(&self.edge)
    }

    /// Paths `<prefix>.edge.fmap` and `<prefix>.orient.fmap`.
    pub fn fmap_files(prefix: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let base = prefix.as_os_str().to_string_lossy();
        (
            format!("{base}.edge.fmap").into(),
            format!("{base}.orient.fmap").into(),
        )
    }

    pub fn load(prefix: &Path) -> Result<Self> {
        let (e, o) = Self::fmap_files(prefix);
        Self::new(Raster::load_fmap(e)?, Raster::load_fmap(o)?)
    }
}

/// One side of a boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Background,
    Instance(u32),
}

impl Region {
    pub fn from_id(id: u32) -> Self {
        if id == 0 {
            Region::Background
        } else {
            Region::Instance(id)
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Region::Background => 0,
            Region::Instance(i) => i,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Background => f.write_str("bg"),
            Region::Instance(i) => write!(f, "{i}"),
        }
    }
}

impl Serialize for Region {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Region::Background => s.serialize_str("bg"),
            Region::Instance(i) => s.serialize_u32(*i),
        }
    }
}

impl<'de> Deserialize<'de> for Region {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(u32),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(0) => Ok(Region::Background),
            Raw::Id(i) => Ok(Region::Instance(i)),
            Raw::Tag(t) if t == "bg" => Ok(Region::Background),
            Raw::Tag(t) => Err(de::Error::custom(format!("expected instance id or \"bg\", got {t:?}"))),
        }
    }
}

/// Which way a fragment's chain is traversed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Traversal {
    Forward,
    Reverse,
}

impl Traversal {
    pub fn flipped(self) -> Self {
        match self {
            Traversal::Forward => Traversal::Reverse,
            Traversal::Reverse => Traversal::Forward,
        }
    }
}

/// A directed boundary piece. Walking `chain` in `direction` keeps the owner on the visual left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryFragment {
    pub chain: PixelChain,
    pub direction: Traversal,
    pub owner: Option<Region>,
    pub occluded: Option<Region>,
}

impl BoundaryFragment {
    pub fn new(chain: PixelChain, direction: Traversal) -> Self {
        Self {
            chain,
            direction,
            owner: None,
            occluded: None,
        }
    }

    /// Chain points in traversal order.
    pub fn ordered_points(&self) -> Vec<Pixel> {
        match self.direction {
            Traversal::Forward => self.chain.points.clone(),
            Traversal::Reverse => self.chain.points.iter().rev().copied().collect(),
        }
    }

    pub fn ordered_chain(&self) -> PixelChain {
        PixelChain {
            points: self.ordered_points(),
            closed: self.chain.closed,
        }
    }

    /// Canonical form: chain stored in traversal order, direction `Forward`.
    pub fn normalized(&self) -> Self {
        Self {
            chain: self.ordered_chain(),
            direction: Traversal::Forward,
            owner: self.owner,
            occluded: self.occluded,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FragmentRecord {
    points: Vec<[i32; 2]>,
    owner: Option<Region>,
    occluded: Option<Region>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    closed: bool,
}

/// Serialises fragments as `[{points: [[r, c], ...], owner, occluded}]`, points in traversal order.
pub fn fragments_to_json(frags: &[BoundaryFragment]) -> Result<String> {
    let recs: Vec<FragmentRecord> = frags
        .iter()
        .map(|f| FragmentRecord {
            points: f.ordered_points().iter().map(|p| [p.row, p.col]).collect(),
            owner: f.owner,
            occluded: f.occluded,
            closed: f.chain.closed,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&recs)?)
}

pub fn fragments_from_json(text: &str) -> Result<Vec<BoundaryFragment>> {
    let recs: Vec<FragmentRecord> = serde_json::from_str(text)?;
    recs.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let chain = PixelChain {
                points: r.points.iter().map(|&[row, col]| Pixel::new(row, col)).collect(),
                closed: r.closed,
            };
            if chain.is_empty() {
                return Err(Error::format("fragments", format!("[{i}].points: empty")));
            }
            if !chain.is_well_formed() {
                return Err(Error::format(
                    "fragments",
                    format!("[{i}].points: not an 8-connected, non-repeating chain"),
                ));
            }
            Ok(BoundaryFragment {
                chain,
                direction: Traversal::Forward,
                owner: r.owner,
                occluded: r.occluded,
            })
        })
        .collect()
}

/// Direction of the chord through each point of an ordered chain.
///
/// The chord at index `i` joins the points `half` steps before and after it,
/// clipped at the ends of open chains and wrapped on closed ones. Degenerate
/// chords fall back to the adjacent-pixel step; a lone pixel points along +x.
pub fn chord_angles(points: &[Pixel], closed: bool, half: usize) -> Vec<f64> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![0.0];
    }
    let wrap = closed && n > 2 * half + 1;
    let step_angle = |a: Pixel, b: Pixel| -> f64 {
        (-(b.row - a.row) as f64).atan2((b.col - a.col) as f64)
    };
    (0..n)
        .map(|i| {
            let (a, b) = if wrap {
                ((i + n - half) % n, (i + half) % n)
            } else {
                (i.saturating_sub(half), (i + half).min(n - 1))
            };
            if points[a] != points[b] {
                wrap_unchecked(step_angle(points[a], points[b]))
            } else if i + 1 < n {
                wrap_unchecked(step_angle(points[i], points[i + 1]))
            } else {
                wrap_unchecked(step_angle(points[i - 1], points[i]))
            }
        })
        .collect()
}

/// Rasterises directed fragments into a ground-truth map.
///
/// Each pixel is written once; where fragments overlap, the fragment whose
/// first traversed point is lowest in `(row, col)` order wins.
pub fn fragments_to_map(
    frags: &[BoundaryFragment],
    width: usize,
    height: usize,
    fragment_len: usize,
) -> Result<OrientedBoundaryMap> {
    if fragment_len < 2 {
        return Err(Error::invalid(format!("fragment_len must be >= 2, got {fragment_len}")));
    }
    let mut map = OrientedBoundaryMap::empty(width, height)?;
    let half = fragment_len / 2;

    let mut order: Vec<(Pixel, usize)> = Vec::with_capacity(frags.len());
    for (i, f) in frags.iter().enumerate() {
        for p in &f.chain.points {
            if !map.edge.in_bounds(p.row as i64, p.col as i64) {
                return Err(Error::invalid(format!(
                    "fragment {i} point ({}, {}) outside {width}x{height}",
                    p.row, p.col
                )));
            }
        }
        if let Some(&start) = f.ordered_points().first() {
            order.push((start, i));
        }
    }
    order.sort();

    for (_, i) in order {
        let f = &frags[i];
        let pts = f.ordered_points();
        let angles = chord_angles(&pts, f.chain.closed, half);
        for (p, theta) in pts.iter().zip(angles) {
            let (r, c) = (p.row as usize, p.col as usize);
            if map.edge.get(r, c) > 0.5 {
                continue;
            }
            map.edge.set(r, c, 1.0);
            map.orient.set(r, c, crate::angle::to_f32(theta));
        }
    }
    Ok(map)
}

const AGREEMENT: f64 = 0.9;

/// Recovers directed fragments from a ground-truth map.
///
/// Chains are traced from the edge map; each is directed so that its chord
/// angles agree (within a quarter turn) with the stored orientation on at
/// least 90% of its pixels. Chains meeting neither direction are split where
/// the per-pixel preference changes.
pub fn map_to_fragments(m: &OrientedBoundaryMap) -> Vec<BoundaryFragment> {
    let mut out = Vec::new();
    for chain in trace_chains(&m.edge) {
        direct_chain(m, chain, DEFAULT_FRAGMENT_LEN / 2, &mut out);
    }
    out
}

fn direct_chain(m: &OrientedBoundaryMap, chain: PixelChain, half: usize, out: &mut Vec<BoundaryFragment>) {
    let chords = chord_angles(&chain.points, chain.closed, half);
    let mut prefers_forward = Vec::with_capacity(chain.len());
    let (mut fwd, mut rev, mut defined) = (0usize, 0usize, 0usize);
    for (p, &chord) in chain.points.iter().zip(&chords) {
        let theta = m.orient.get(p.row as usize, p.col as usize) as f64;
        if theta.is_nan() {
            prefers_forward.push(None);
            continue;
        }
        defined += 1;
        let f = within_quarter_turn(chord, theta);
        let r = within_quarter_turn(chord + PI, theta);
        fwd += f as usize;
        rev += r as usize;
        prefers_forward.push(Some(f));
    }
    let defined_f = defined.max(1) as f64;
    if fwd as f64 / defined_f >= AGREEMENT {
        out.push(BoundaryFragment::new(chain, Traversal::Forward));
        return;
    }
    if rev as f64 / defined_f >= AGREEMENT {
        out.push(BoundaryFragment::new(chain, Traversal::Reverse));
        return;
    }

    // split into runs of constant preference; undefined pixels join the current run
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    let mut current: Option<bool> = None;
    for (i, pref) in prefers_forward.iter().enumerate() {
        if let (Some(cur), Some(p)) = (current, pref) {
            if cur != *p {
                runs.push((start, i - 1));
                start = i;
            }
        }
        if pref.is_some() {
            current = *pref;
        }
    }
    runs.push((start, chain.len() - 1));

    if runs.len() == 1 {
        let dir = if fwd >= rev {
            Traversal::Forward
        } else {
            Traversal::Reverse
        };
        out.push(BoundaryFragment::new(chain, dir));
        return;
    }
    for (a, b) in runs {
        let sub = PixelChain::open(chain.points[a..=b].to_vec());
        direct_chain(m, sub, half, out);
    }
}

/// Undirected tangent angles in `[0, pi)` on edge pixels, NaN elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField {
    pub tangent: Raster,
    /// Pixels on single-pixel chains, given tangent 0 by convention.
    pub isolated: Vec<Pixel>,
}

/// Least-squares line fit over the chain pixels within `window / 2` steps of each edge pixel.
pub fn estimate_tangents(edges: &Raster, window: usize) -> TangentField {
    let chains = trace_chains(edges);
    tangents_on_chains(&chains, edges.width(), edges.height(), window)
}

pub fn tangents_on_chains(chains: &[PixelChain], width: usize, height: usize, window: usize) -> TangentField {
    let mut tangent = Raster::filled(width, height, 1, f32::NAN).expect("dimensions come from a raster");
    let mut isolated = Vec::new();
    let half = (window / 2).max(1);
    for ch in chains {
        let n = ch.len();
        if n == 1 {
            let p = ch.points[0];
            tangent.set(p.row as usize, p.col as usize, 0.0);
            isolated.push(p);
            continue;
        }
        let wrap = ch.closed && n > 2 * half + 1;
        for i in 0..n {
            let idx: Vec<usize> = if wrap {
                (0..=2 * half).map(|k| (i + n - half + k) % n).collect()
            } else {
                (i.saturating_sub(half)..=(i + half).min(n - 1)).collect()
            };
            let theta = principal_direction(idx.iter().map(|&k| ch.points[k]));
            let p = ch.points[i];
            tangent.set(p.row as usize, p.col as usize, theta as f32);
        }
    }
    isolated.sort();
    TangentField { tangent, isolated }
}

/// Orientation in `[0, pi)` of the total-least-squares line through the points (y-up frame).
pub(crate) fn principal_direction(points: impl Iterator<Item = Pixel>) -> f64 {
    let pts: Vec<(f64, f64)> = points.map(|p| (p.col as f64, -(p.row as f64))).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    ShapeMismatch,
    MultiChannel,
    EdgeNotBinary(f32),
    EdgeOutOfRange(f32),
    OrientWithoutEdge(f32),
    MissingOrient,
    OrientOutOfRange(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub pixel: Option<Pixel>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = self.pixel {
            write!(f, "pixel ({}, {}): ", p.row, p.col)?;
        }
        match &self.kind {
            ViolationKind::ShapeMismatch => f.write_str("edge and orient rasters differ in size"),
            ViolationKind::MultiChannel => f.write_str("maps must have exactly one channel"),
            ViolationKind::EdgeNotBinary(v) => write!(f, "ground-truth edge value {v} is not 0 or 1"),
            ViolationKind::EdgeOutOfRange(v) => write!(f, "edge value {v} outside [0, 1]"),
            ViolationKind::OrientWithoutEdge(v) => write!(f, "orientation {v} defined where edge = 0"),
            ViolationKind::MissingOrient => f.write_str("orientation undefined on an edge pixel"),
            ViolationKind::OrientOutOfRange(v) => write!(f, "orientation {v} outside (-pi, pi]"),
        }
    }
}

/// Lists every broken invariant of `m`; empty means the map is well formed.
pub fn validate(m: &OrientedBoundaryMap, ground_truth: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    if !m.edge.same_size(&m.orient) {
        out.push(Violation {
            pixel: None,
            kind: ViolationKind::ShapeMismatch,
        });
        return out;
    }
    if m.edge.channels() != 1 || m.orient.channels() != 1 {
        out.push(Violation {
            pixel: None,
            kind: ViolationKind::MultiChannel,
        });
        return out;
    }
    let pi = std::f32::consts::PI;
    for r in 0..m.height() {
        for c in 0..m.width() {
            let pixel = Some(Pixel::new(r as i32, c as i32));
            let e = m.edge.get(r, c);
            let o = m.orient.get(r, c);
            if ground_truth && e != 0.0 && e != 1.0 {
                out.push(Violation {
                    pixel,
                    kind: ViolationKind::EdgeNotBinary(e),
                });
                continue;
            }
            if !(0.0..=1.0).contains(&e) {
                out.push(Violation {
                    pixel,
                    kind: ViolationKind::EdgeOutOfRange(e),
                });
                continue;
            }
            if e == 0.0 {
                if !o.is_nan() {
                    out.push(Violation {
                        pixel,
                        kind: ViolationKind::OrientWithoutEdge(o),
                    });
                }
            } else if o.is_nan() {
                out.push(Violation {
                    pixel,
                    kind: ViolationKind::MissingOrient,
                });
            } else if !(o > -pi && o <= pi) {
                out.push(Violation {
                    pixel,
                    kind: ViolationKind::OrientOutOfRange(o),
                });
            }
        }
    }
    out
}
