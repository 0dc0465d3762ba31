//! Turning an instance map plus directed line-segment annotations into ground truth.
//!
//! Boundaries are the 4-neighbour id discontinuities of the instance map, drawn on
//! the nearer side: on the instance side of an instance/background border and on
//! the lower-id side of an instance/instance border. Instance/background borders
//! default to "object occludes background"; annotated segments override that and
//! supply the direction of instance/instance borders.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::chain::{trace_mask, Mask, Pixel, PixelChain};
use crate::error::{Error, Result};
use crate::raster::encode_png;
use crate::repr::{chord_angles, fragments_to_map, BoundaryFragment, OrientedBoundaryMap, Region, Traversal, DEFAULT_FRAGMENT_LEN};

pub const DEFAULT_RHO: f64 = 10.0;
pub const BACKGROUND_LABEL: &str = "bg";

/// Per-pixel instance ids (0 = background) and a class name per instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    width: usize,
    height: usize,
    ids: Vec<u32>,
    classes: BTreeMap<u32, String>,
}

#[derive(Serialize, Deserialize)]
struct ClassTable {
    classes: BTreeMap<String, String>,
}

impl InstanceMap {
    /// Checks that ids run contiguously from 1 and each has a class.
    pub fn new(width: usize, height: usize, ids: Vec<u32>, classes: BTreeMap<u32, String>) -> Result<Self> {
        if width == 0 || height == 0 || ids.len() != width * height {
            return Err(Error::invalid(format!("instance map: {} ids for {width}x{height}", ids.len())));
        }
        let present: BTreeSet<u32> = ids.iter().copied().filter(|&i| i != 0).collect();
        if let Some(&max) = present.iter().next_back() {
            if present.len() as u32 != max {
                let missing: Vec<u32> = (1..=max).filter(|i| !present.contains(i)).collect();
                return Err(Error::invalid(format!("instance ids must be contiguous from 1; missing {missing:?}")));
            }
        }
        for id in &present {
            if !classes.contains_key(id) {
                return Err(Error::invalid(format!("instance {id} has no class entry")));
            }
        }
        if classes.values().any(|c| c == BACKGROUND_LABEL) {
            return Err(Error::invalid(format!("class name {BACKGROUND_LABEL:?} is reserved for the background")));
        }
        Ok(Self {
            width,
            height,
            ids,
            classes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn classes(&self) -> &BTreeMap<u32, String> {
        &self.classes
    }

    pub fn instance_count(&self) -> u32 {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    /// Id at `p`, `None` outside the map.
    pub fn id_at(&self, p: Pixel) -> Option<u32> {
        (p.row >= 0 && p.col >= 0 && (p.row as usize) < self.height && (p.col as usize) < self.width)
            .then(|| self.ids[p.row as usize * self.width + p.col as usize])
    }

    pub fn class_of(&self, r: Region) -> &str {
        match r {
            Region::Background => BACKGROUND_LABEL,
            Region::Instance(i) => self.classes.get(&i).map_or("?", String::as_str),
        }
    }

    /// Reads a 16-bit (or 8-bit) grayscale PNG of ids and a `{"classes": {"1": "name"}}` table.
    pub fn load(png: impl AsRef<Path>, classes_json: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(png.as_ref())?;
        let l16 = img.to_luma16();
        let (w, h) = (l16.width() as usize, l16.height() as usize);
        let ids = l16.into_raw().into_iter().map(u32::from).collect();
        let classes = Self::parse_classes(&std::fs::read_to_string(classes_json)?)?;
        Self::new(w, h, ids, classes)
    }

    pub fn parse_classes(text: &str) -> Result<BTreeMap<u32, String>> {
        let table: ClassTable = serde_json::from_str(text)?;
        table
            .classes
            .into_iter()
            .map(|(k, v)| {
                k.parse::<u32>()
                    .ok()
                    .filter(|&i| i > 0)
                    .map(|i| (i, v))
                    .ok_or_else(|| Error::format("class table", format!("classes.{k}: key must be a positive instance id")))
            })
            .collect()
    }

    pub fn classes_json(&self) -> Result<String> {
        let table = ClassTable {
            classes: self.classes.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        };
        Ok(serde_json::to_string_pretty(&table)?)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        if self.instance_count() > u16::MAX as u32 {
            return Err(Error::invalid("more than 65535 instances cannot be stored in a 16-bit PNG"));
        }
        let raw: Vec<u16> = self.ids.iter().map(|&i| i as u16).collect();
        let buf: ImageBuffer<Luma<u16>, _> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer matches dimensions");
        encode_png(&DynamicImage::ImageLuma16(buf))
    }
}

/// A directed annotation from `(x0, y0)` to `(x1, y1)`; `x` is the column and `y` the row,
/// with pixel centres at integer coordinates. The occluding side is on the visual left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnnotation {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl SegmentAnnotation {
    pub fn length(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if ![self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if self.x0 == self.x1 && self.y0 == self.y1 {
            return Err("endpoints coincide".into());
        }
        Ok(())
    }
}

/// The segments file exchanged with the annotation UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentsFile {
    pub image: String,
    pub segments: Vec<SegmentAnnotation>,
}

impl SegmentsFile {
    /// Parses and checks every segment; malformed segments are a validation error naming the index.
    pub fn parse(text: &str) -> Result<Self> {
        let f: SegmentsFile = serde_json::from_str(text)?;
        for (i, s) in f.segments.iter().enumerate() {
            s.check().map_err(|e| Error::format("segments", format!("segments[{i}]: {e}")))?;
        }
        Ok(f)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A boundary chain and the two regions it separates. The pixels lie on `near`'s side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledChain {
    pub chain: PixelChain,
    pub near: Region,
    pub far: Region,
    /// Traversal that keeps `near` on the visual left.
    pub near_left: Traversal,
}

impl LabeledChain {
    pub fn is_background_pair(&self) -> bool {
        self.far == Region::Background
    }
}

const N4: [(i32, i32); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

/// Region a boundary pixel of instance `id` is paired with: the lowest higher-numbered
/// instance among its 4-neighbours, else the background if it touches it.
fn far_side(m: &InstanceMap, p: Pixel, id: u32) -> Option<Region> {
    let mut best: Option<u32> = None;
    let mut touches_bg = false;
    for (dr, dc) in N4 {
        match m.id_at(p.offset(dr, dc)) {
            Some(0) => touches_bg = true,
            Some(o) if o > id => best = Some(best.map_or(o, |b| b.min(o))),
            _ => {}
        }
    }
    best.map(Region::Instance).or(touches_bg.then_some(Region::Background))
}

/// Boundary chains of an instance map, grouped by region pair (ordered by near id, then far id
/// with the background last), each pair's pixels traced separately.
pub fn extract_instance_boundaries(m: &InstanceMap) -> Vec<LabeledChain> {
    let mut pairs: BTreeMap<(u32, u64), Mask> = BTreeMap::new();
    for r in 0..m.height {
        for c in 0..m.width {
            let p = Pixel::new(r as i32, c as i32);
            let id = m.ids[r * m.width + c];
            if id == 0 {
                continue;
            }
            if let Some(far) = far_side(m, p, id) {
                let key = (id, if far == Region::Background { u64::MAX } else { far.id() as u64 });
                pairs.entry(key).or_insert_with(|| Mask::new(m.width, m.height)).set(p, true);
            }
        }
    }
    let mut out = Vec::new();
    for ((near, far), mask) in pairs {
        let near = Region::Instance(near);
        let far = if far == u64::MAX {
            Region::Background
        } else {
            Region::Instance(far as u32)
        };
        for chain in trace_mask(&mask) {
            let near_left = near_left_direction(m, &chain, near, far);
            out.push(LabeledChain {
                chain,
                near,
                far,
                near_left,
            });
        }
    }
    out
}

/// Votes, pixel by pixel, which traversal puts `near` on the left and `far` on the right.
fn near_left_direction(m: &InstanceMap, chain: &PixelChain, near: Region, far: Region) -> Traversal {
    let angles = chord_angles(&chain.points, chain.closed, DEFAULT_FRAGMENT_LEN / 2);
    let mut score = 0i64;
    for (p, theta) in chain.points.iter().zip(angles) {
        let phi = theta + std::f64::consts::FRAC_PI_2;
        let (dr, dc) = (-phi.sin(), phi.cos());
        for k in [1.0, 2.0] {
            let left = Pixel::new(p.row + (dr * k).round() as i32, p.col + (dc * k).round() as i32);
            let right = Pixel::new(p.row - (dr * k).round() as i32, p.col - (dc * k).round() as i32);
            let is = |q: Pixel, r: Region| m.id_at(q) == Some(r.id());
            score += is(left, near) as i64 + is(right, far) as i64 - is(left, far) as i64 - is(right, near) as i64;
        }
    }
    if score >= 0 {
        Traversal::Forward
    } else {
        Traversal::Reverse
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationWarning {
    pub segment: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for AnnotationWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.segment {
            Some(i) => write!(f, "segment {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// Directed fragments, in chain order.
    pub fragments: Vec<BoundaryFragment>,
    /// Instance/instance pieces no segment covered; owner and direction undefined.
    pub unlabeled: Vec<BoundaryFragment>,
    pub warnings: Vec<AnnotationWarning>,
}

fn point_dist2(p: Pixel, x: f64, y: f64) -> f64 {
    let dr = p.row as f64 - y;
    let dc = p.col as f64 - x;
    dr * dr + dc * dc
}

/// Mean distance from points sampled along the segment to the nearest chain vertex.
pub fn mean_distance(seg: &SegmentAnnotation, chain: &PixelChain) -> f64 {
    let n = (seg.length().ceil() as usize + 1).max(2);
    let mut total = 0.0;
    for k in 0..n {
        let t = k as f64 / (n - 1) as f64;
        let x = seg.x0 + t * (seg.x1 - seg.x0);
        let y = seg.y0 + t * (seg.y1 - seg.y0);
        let d2 = chain.points.iter().map(|&p| point_dist2(p, x, y)).fold(f64::INFINITY, f64::min);
        total += d2.sqrt();
    }
    total / n as f64
}

fn nearest_vertex(chain: &PixelChain, x: f64, y: f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, &p) in chain.points.iter().enumerate() {
        let d = point_dist2(p, x, y);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Chain a segment maps to: the lowest mean distance among chains within `rho`.
pub fn select_chain(seg: &SegmentAnnotation, chains: &[LabeledChain], rho: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, lc) in chains.iter().enumerate() {
        let d = mean_distance(seg, &lc.chain);
        if d <= rho && best.is_none_or(|(b, _)| d < b) {
            best = Some((d, i));
        }
    }
    best.map(|b| b.1)
}

/// Vertex indices covered by a segment on `chain`, in forward order, and the direction
/// the segment implies; `None` when the projection is degenerate.
pub fn project_segment(seg: &SegmentAnnotation, chain: &PixelChain) -> Option<(Vec<usize>, Traversal)> {
    let n = chain.len();
    let i0 = nearest_vertex(chain, seg.x0, seg.y0);
    let i1 = nearest_vertex(chain, seg.x1, seg.y1);
    let (sx, sy) = (seg.x1 - seg.x0, seg.y1 - seg.y0);
    if n == 1 {
        // a lone pixel's chord points along +x
        return match sx.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => Some((vec![0], Traversal::Forward)),
            Some(std::cmp::Ordering::Less) => Some((vec![0], Traversal::Reverse)),
            _ => None,
        };
    }
    if i0 == i1 {
        return None;
    }
    let (lo, hi) = (i0.min(i1), i0.max(i1));
    let idx: Vec<usize> = if chain.closed && 2 * (hi - lo) > n {
        // the shorter way round passes through index 0
        (hi..n).chain(0..=lo).collect()
    } else {
        (lo..=hi).collect()
    };
    let mut dot = 0.0;
    for w in idx.windows(2) {
        let (a, b) = (chain.points[w[0]], chain.points[w[1]]);
        dot += (b.col - a.col) as f64 * sx + (b.row - a.row) as f64 * sy;
    }
    if dot > 0.0 {
        Some((idx, Traversal::Forward))
    } else if dot < 0.0 {
        Some((idx, Traversal::Reverse))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VertexState {
    Directed(Traversal),
    Unlabeled,
}

/// Maps segments onto chains and emits directed fragments.
///
/// Later segments win where claims overlap. Instance/background chains not covered by any
/// segment keep the object-occludes-background default.
pub fn match_segments(chains: &[LabeledChain], segments: &[SegmentAnnotation], rho: f64) -> MatchOutcome {
    let mut warnings = Vec::new();
    let mut claims: Vec<Vec<Option<(usize, Traversal)>>> = chains.iter().map(|c| vec![None; c.chain.len()]).collect();
    for (si, seg) in segments.iter().enumerate() {
        if let Err(e) = seg.check() {
            warnings.push(AnnotationWarning {
                segment: Some(si),
                message: format!("rejected: {e}"),
            });
            continue;
        }
        let Some(ci) = select_chain(seg, chains, rho) else {
            warnings.push(AnnotationWarning {
                segment: Some(si),
                message: format!("rejected: farther than {rho} px from every boundary"),
            });
            continue;
        };
        let Some((idx, dir)) = project_segment(seg, &chains[ci].chain) else {
            warnings.push(AnnotationWarning {
                segment: Some(si),
                message: format!("rejected: degenerate projection onto chain {ci}"),
            });
            continue;
        };
        let mut overridden = BTreeSet::new();
        for &v in &idx {
            if let Some((prev, _)) = claims[ci][v] {
                overridden.insert(prev);
            }
            claims[ci][v] = Some((si, dir));
        }
        for prev in overridden {
            warnings.push(AnnotationWarning {
                segment: Some(si),
                message: format!("overrides segment {prev} on chain {ci}"),
            });
        }
    }

    let mut fragments = Vec::new();
    let mut unlabeled = Vec::new();
    for (ci, lc) in chains.iter().enumerate() {
        let states: Vec<VertexState> = claims[ci]
            .iter()
            .map(|c| match c {
                Some((_, d)) => VertexState::Directed(*d),
                None if lc.is_background_pair() => VertexState::Directed(lc.near_left),
                None => VertexState::Unlabeled,
            })
            .collect();
        for (piece, state) in runs(&lc.chain, &states) {
            match state {
                VertexState::Directed(dir) => {
                    let (owner, occluded) = if dir == lc.near_left {
                        (lc.near, lc.far)
                    } else {
                        (lc.far, lc.near)
                    };
                    fragments.push(BoundaryFragment {
                        chain: piece,
                        direction: dir,
                        owner: Some(owner),
                        occluded: Some(occluded),
                    });
                }
                VertexState::Unlabeled => {
                    let first = piece.points[0];
                    warnings.push(AnnotationWarning {
                        segment: None,
                        message: format!(
                            "boundary between instances {} and {} at ({}, {}) has no segment; direction undefined",
                            lc.near, lc.far, first.row, first.col
                        ),
                    });
                    unlabeled.push(BoundaryFragment::new(piece, Traversal::Forward));
                }
            }
        }
    }
    MatchOutcome {
        fragments,
        unlabeled,
        warnings,
    }
}

/// Splits a chain into maximal runs of equal state; closed chains may wrap a run across index 0.
fn runs(chain: &PixelChain, states: &[VertexState]) -> Vec<(PixelChain, VertexState)> {
    let n = chain.len();
    if n == 0 {
        return Vec::new();
    }
    if states.iter().all(|s| *s == states[0]) {
        return vec![(chain.clone(), states[0])];
    }
    let start = if chain.closed {
        (0..n).find(|&i| states[i] != states[(i + n - 1) % n]).expect("states differ somewhere")
    } else {
        0
    };
    let mut out = Vec::new();
    let mut cur: Vec<Pixel> = Vec::new();
    let mut cur_state = states[start];
    for k in 0..n {
        let i = (start + k) % n;
        if states[i] != cur_state {
            out.push((PixelChain::open(std::mem::take(&mut cur)), cur_state));
            cur_state = states[i];
        }
        cur.push(chain.points[i]);
    }
    out.push((PixelChain::open(cur), cur_state));
    out
}

/// Class-by-class occlusion counts. Labels are the sorted class names followed by the background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMatrix {
    pub labels: Vec<String>,
    /// `counts[a][b]`: fragments where class `a` occludes class `b`.
    pub counts: Vec<Vec<u64>>,
}

impl OcclusionMatrix {
    pub fn new(m: &InstanceMap) -> Self {
        let mut labels: Vec<String> = m.classes.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        labels.push(BACKGROUND_LABEL.to_string());
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, occluder: &str, occluded: &str) -> u64 {
        match (self.index(occluder), self.index(occluded)) {
            (Some(a), Some(b)) => self.counts[a][b],
            _ => 0,
        }
    }

    /// Adds another matrix's counts, extending the label set as needed.
    pub fn merge(&mut self, other: &OcclusionMatrix) {
        for l in &other.labels {
            if self.index(l).is_none() {
                let pos = if l == BACKGROUND_LABEL {
                    self.labels.len()
                } else {
                    self.labels.iter().position(|x| x == BACKGROUND_LABEL || x > l).unwrap_or(self.labels.len())
                };
                self.labels.insert(pos, l.clone());
                for row in &mut self.counts {
                    row.insert(pos, 0);
                }
                self.counts.insert(pos, vec![0; self.labels.len()]);
            }
        }
        for (i, a) in other.labels.iter().enumerate() {
            for (j, b) in other.labels.iter().enumerate() {
                let (x, y) = (self.index(a).unwrap(), self.index(b).unwrap());
                self.counts[x][y] += other.counts[i][j];
            }
        }
    }

    /// Rows are occluders, columns occluded classes.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("occluder");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            s.push_str(l);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotateConfig {
    pub rho: f64,
    pub fragment_len: usize,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            fragment_len: DEFAULT_FRAGMENT_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub map: OrientedBoundaryMap,
    pub matrix: OcclusionMatrix,
    pub fragments: Vec<BoundaryFragment>,
    pub unlabeled: Vec<BoundaryFragment>,
    pub warnings: Vec<AnnotationWarning>,
}

#[derive(Serialize)]
struct ReportRecord<'a> {
    warnings: Vec<String>,
    unlabeled: Vec<Vec<[i32; 2]>>,
    fragments: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<&'a str>,
}

impl GroundTruth {
    /// JSON report of warnings and unlabeled fragments.
    pub fn report_json(&self, image: Option<&str>) -> Result<String> {
        let rec = ReportRecord {
            warnings: self.warnings.iter().map(ToString::to_string).collect(),
            unlabeled: self
                .unlabeled
                .iter()
                .map(|f| f.chain.points.iter().map(|p| [p.row, p.col]).collect())
                .collect(),
            fragments: self.fragments.len(),
            image,
        };
        Ok(serde_json::to_string_pretty(&rec)?)
    }
}

/// Boundary extraction, segment matching, rasterisation and occlusion counting.
pub fn build_ground_truth(m: &InstanceMap, segments: &[SegmentAnnotation], cfg: &AnnotateConfig) -> Result<GroundTruth> {
    let chains = extract_instance_boundaries(m);
    let outcome = match_segments(&chains, segments, cfg.rho);
    let map = fragments_to_map(&outcome.fragments, m.width, m.height, cfg.fragment_len)?;
    let mut matrix = OcclusionMatrix::new(m);
    for f in &outcome.fragments {
        if let (Some(a), Some(b)) = (f.owner, f.occluded) {
            let (i, j) = (matrix.index(m.class_of(a)), matrix.index(m.class_of(b)));
            if let (Some(i), Some(j)) = (i, j) {
                matrix.counts[i][j] += 1;
            }
        }
    }
    Ok(GroundTruth {
        map,
        matrix,
        fragments: outcome.fragments,
        unlabeled: outcome.unlabeled,
        warnings: outcome.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn map_from(w: usize, h: usize, f: impl Fn(usize, usize) -> u32, classes: &[(u32, &str)]) -> InstanceMap {
        let ids = (0..w * h).map(|i| f(i / w, i % w)).collect();
        let classes = classes.iter().map(|&(i, c)| (i, c.to_string())).collect();
        InstanceMap::new(w, h, ids, classes).unwrap()
    }

    fn square() -> InstanceMap {
        map_from(8, 8, |r, c| ((2..6).contains(&r) && (2..6).contains(&c)) as u32, &[(1, "box")])
    }

    #[test]
    fn square_gives_one_closed_chain() {
        let chains = extract_instance_boundaries(&square());
        assert_eq!(chains.len(), 1);
        assert!(chains[0].chain.closed);
        assert_eq!(chains[0].chain.len(), 12);
        assert_eq!((chains[0].near, chains[0].far), (Region::Instance(1), Region::Background));
    }

    #[test]
    fn abutting_squares_give_three_chains() {
        // 6x10 grid: instance 1 in columns 1..=4, instance 2 in columns 5..=8, rows 1..=4
        let m = map_from(
            10,
            6,
            |r, c| match ((1..5).contains(&r), c) {
                (true, 1..=4) => 1,
                (true, 5..=8) => 2,
                _ => 0,
            },
            &[(1, "a"), (2, "b")],
        );
        let chains = extract_instance_boundaries(&m);
        let mut pairs: Vec<_> = chains.iter().map(|c| (c.near.to_string(), c.far.to_string(), c.chain.len())).collect();
        pairs.sort();
        assert_eq!(
            pairs,
            vec![
                ("1".into(), "2".into(), 4),
                ("1".into(), "bg".into(), 8),
                ("2".into(), "bg".into(), 10)
            ]
        );
    }

    #[test]
    fn empty_map_has_no_boundaries() {
        assert!(extract_instance_boundaries(&map_from(5, 5, |_, _| 0, &[])).is_empty());
    }

    #[test]
    fn non_contiguous_ids_are_rejected() {
        let ids = vec![0, 1, 3, 0];
        let classes = [(1, "a".to_string()), (3, "b".to_string())].into_iter().collect();
        assert!(InstanceMap::new(2, 2, ids, classes).is_err());
    }

    #[test]
    fn default_rule_puts_object_on_the_left() {
        let gt = build_ground_truth(&square(), &[], &AnnotateConfig::default()).unwrap();
        assert_eq!(gt.map.edge_count(), 12);
        // walking the top edge westwards keeps the interior (below) on the left
        assert!((gt.map.orient.get(2, 3) as f64 - PI).abs() < 1e-6);
        // bottom edge eastwards
        assert!((gt.map.orient.get(5, 3) as f64).abs() < 1e-6);
        assert_eq!(gt.matrix.get("box", "bg"), 1);
        assert!(gt.warnings.is_empty());
    }

    #[test]
    fn anti_parallel_segment_flips_the_covered_piece() {
        let m = map_from(20, 20, |r, c| ((4..16).contains(&r) && (4..16).contains(&c)) as u32, &[(1, "box")]);
        // the default traverses the top edge westwards; draw it eastwards, just above the edge
        let seg = SegmentAnnotation {
            x0: 6.0,
            y0: 3.4,
            x1: 13.0,
            y1: 3.4,
        };
        let gt = build_ground_truth(&m, &[seg], &AnnotateConfig::default()).unwrap();
        assert_eq!(gt.fragments.len(), 2);
        let flipped: Vec<_> = gt.fragments.iter().filter(|f| f.owner == Some(Region::Background)).collect();
        assert_eq!(flipped.len(), 1);
        assert_eq!(flipped[0].chain.len(), 8);
        assert!((gt.map.orient.get(4, 9) as f64).abs() < 1e-6);
        assert_eq!(gt.matrix.get("bg", "box"), 1);
        assert_eq!(gt.matrix.get("box", "bg"), 1);
    }

    #[test]
    fn far_segments_are_rejected() {
        let seg = SegmentAnnotation {
            x0: 40.0,
            y0: 40.0,
            x1: 50.0,
            y1: 40.0,
        };
        let gt = build_ground_truth(&square(), &[seg], &AnnotateConfig::default()).unwrap();
        assert_eq!(gt.warnings.len(), 1);
        assert_eq!(gt.warnings[0].segment, Some(0));
        assert_eq!(gt.map.edge_count(), 12);
    }

    #[test]
    fn instance_pairs_need_segments() {
        let m = map_from(
            12,
            8,
            |r, c| match ((2..6).contains(&r), c) {
                (true, 2..=5) => 1,
                (true, 6..=9) => 2,
                _ => 0,
            },
            &[(1, "person"), (2, "dog")],
        );
        let gt = build_ground_truth(&m, &[], &AnnotateConfig::default()).unwrap();
        assert_eq!(gt.unlabeled.len(), 1);
        assert_eq!(gt.warnings.len(), 1);
        assert!(gt.map.orient.get(3, 5).is_nan());
        // person (left square) occludes dog: walk their shared border upwards
        let seg = SegmentAnnotation {
            x0: 5.0,
            y0: 5.0,
            x1: 5.0,
            y1: 2.0,
        };
        let gt = build_ground_truth(&m, &[seg], &AnnotateConfig::default()).unwrap();
        assert!(gt.unlabeled.is_empty());
        assert_eq!(gt.matrix.get("person", "dog"), 1);
        assert_eq!(gt.matrix.get("person", "bg"), 1);
        assert_eq!(gt.matrix.get("dog", "bg"), 1);
        assert!((gt.map.orient.get(3, 5) as f64 - PI / 2.0).abs() < 1e-6);
    }

    #[test]
    fn later_segment_wins_with_a_warning() {
        let m = map_from(20, 20, |r, c| ((4..16).contains(&r) && (4..16).contains(&c)) as u32, &[(1, "box")]);
        let east = SegmentAnnotation {
            x0: 6.0,
            y0: 4.0,
            x1: 13.0,
            y1: 4.0,
        };
        let west = SegmentAnnotation {
            x0: 11.0,
            y0: 4.0,
            x1: 8.0,
            y1: 4.0,
        };
        let out = match_segments(&extract_instance_boundaries(&m), &[east, west], DEFAULT_RHO);
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.warnings[0].segment, Some(1));
        // columns 6..=7 east, 8..=11 west, 12..=13 east, then the default-directed remainder
        assert_eq!(out.fragments.len(), 4);
    }

    #[test]
    fn segments_file_round_trip_and_validation() {
        let f = SegmentsFile {
            image: "a.png".into(),
            segments: vec![SegmentAnnotation {
                x0: 1.0,
                y0: 2.0,
                x1: 3.5,
                y1: 2.0,
            }],
        };
        assert_eq!(SegmentsFile::parse(&f.to_json().unwrap()).unwrap(), f);
        let bad = r#"{"image": "a.png", "segments": [{"x0": 1, "y0": 1, "x1": 1, "y1": 1}]}"#;
        assert!(SegmentsFile::parse(bad).unwrap_err().to_string().contains("segments[0]"));
    }

    #[test]
    fn instance_png_round_trip() {
        let m = square();
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("i.png");
        let cls = dir.path().join("c.json");
        std::fs::write(&png, m.to_png_bytes().unwrap()).unwrap();
        std::fs::write(&cls, m.classes_json().unwrap()).unwrap();
        assert_eq!(InstanceMap::load(&png, &cls).unwrap(), m);
    }

    #[test]
    fn matrix_merge_extends_labels() {
        let mut a = OcclusionMatrix::new(&square());
        a.counts[0][1] = 2;
        let m2 = map_from(4, 4, |r, _| (r == 1) as u32, &[(1, "cat")]);
        let mut b = OcclusionMatrix::new(&m2);
        b.counts[0][1] = 5;
        a.merge(&b);
        assert_eq!(a.labels, vec!["box", "cat", "bg"]);
        assert_eq!(a.get("box", "bg"), 2);
        assert_eq!(a.get("cat", "bg"), 5);
        assert!(a.to_csv().starts_with("occluder,box,cat,bg\n"));
    }
}
