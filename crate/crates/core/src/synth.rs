//! Procedural scenes of depth-ordered shapes with exact occlusion ground truth.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::{extract_instance_boundaries, project_segment, select_chain, InstanceMap, LabeledChain, SegmentAnnotation, DEFAULT_RHO};
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::repr::{fragments_to_map, BoundaryFragment, OrientedBoundaryMap, Traversal, DEFAULT_FRAGMENT_LEN};

pub const DEFAULT_SIZE: usize = 128;
pub const DEFAULT_DIFFICULTY: f64 = 0.5;

/// Longest run of chain vertices covered by one emitted segment.
const SEGMENT_SPAN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Geometry {
    Disk { cx: f64, cy: f64, r: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    /// Vertices as `[x, y]` (column, row).
    Polygon { points: Vec<[f64; 2]> },
}

impl Geometry {
    /// Whether the pixel centre `(x, y)` lies inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Geometry::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Geometry::Ellipse { cx, cy, rx, ry, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Geometry::Polygon { points } => {
                let n = points.len();
                let mut inside = false;
                for i in 0..n {
                    let [xi, yi] = points[i];
                    let [xj, yj] = points[(i + n - 1) % n];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Geometry::Disk { cx, cy, r } => {
                if !finite(&[*cx, *cy, *r]) || *r <= 0.0 {
                    return Err("disk needs finite centre and positive radius".into());
                }
            }
            Geometry::Ellipse { cx, cy, rx, ry, angle } => {
                if !finite(&[*cx, *cy, *rx, *ry, *angle]) || *rx <= 0.0 || *ry <= 0.0 {
                    return Err("ellipse needs finite parameters and positive radii".into());
                }
            }
            Geometry::Polygon { points } => {
                if points.len() < 3 || !points.iter().all(|p| finite(p)) {
                    return Err("polygon needs at least three finite vertices".into());
                }
            }
        }
        Ok(())
    }
}

/// Intensity pattern of a region, in `[0, 1]` after clamping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Texture {
    Flat { level: f32 },
    /// Linear ramp of total height `amplitude` across the canvas along `angle`.
    Gradient { level: f32, amplitude: f32, angle: f64 },
    /// Bilinearly interpolated lattice noise with cell size `scale` pixels.
    Noise { level: f32, amplitude: f32, scale: f64, seed: u64 },
}

impl Texture {
    fn check(&self) -> std::result::Result<(), String> {
        match self {
            Texture::Noise { scale, .. } if !(*scale >= 1.0) => Err("noise scale must be >= 1".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    #[serde(flatten)]
    pub geometry: Geometry,
    pub class: String,
    pub texture: Texture,
}

/// A scene; `shapes` are listed nearest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub shapes: Vec<ShapeSpec>,
    pub background: Texture,
    /// Seeds the per-pixel sensor noise.
    pub seed: u64,
    #[serde(default)]
    pub pixel_noise: f32,
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: SceneSpec = serde_json::from_str(text)?;
        s.check()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn check(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > 1 << 14 || self.height > 1 << 14 {
            return Err(Error::invalid(format!("scene size {}x{} out of range", self.width, self.height)));
        }
        self.background.check().map_err(|e| Error::invalid(format!("background: {e}")))?;
        for (i, s) in self.shapes.iter().enumerate() {
            s.geometry.check().map_err(|e| Error::invalid(format!("shapes[{i}]: {e}")))?;
            s.texture.check().map_err(|e| Error::invalid(format!("shapes[{i}]: {e}")))?;
            if s.class.is_empty() || s.class == crate::annotate::BACKGROUND_LABEL {
                return Err(Error::invalid(format!("shapes[{i}]: class must be a non-empty name other than \"bg\"")));
            }
        }
        Ok(())
    }
}

/// Lattice noise sampler.
struct ValueNoise {
    cols: usize,
    grid: Vec<f32>,
    scale: f64,
}

impl ValueNoise {
    fn new(width: usize, height: usize, scale: f64, seed: u64) -> Self {
        let cols = (width as f64 / scale).ceil() as usize + 2;
        let rows = (height as f64 / scale).ceil() as usize + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = (0..cols * rows).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Self { cols, grid, scale }
    }

    fn at(&self, x: f64, y: f64) -> f32 {
        let (gx, gy) = (x / self.scale, y / self.scale);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = ((gx - x0 as f64) as f32, (gy - y0 as f64) as f32);
        // smoothstep weights hide the lattice
        let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
        let g = |c: usize, r: usize| self.grid[r * self.cols + c];
        let top = g(x0, y0) * (1.0 - sx) + g(x0 + 1, y0) * sx;
        let bot = g(x0, y0 + 1) * (1.0 - sx) + g(x0 + 1, y0 + 1) * sx;
        top * (1.0 - sy) + bot * sy
    }
}

enum Painter {
    Flat(f32),
    Gradient { level: f32, amplitude: f32, dir: (f64, f64), w: f64, h: f64 },
    Noise { level: f32, amplitude: f32, noise: ValueNoise },
}

impl Painter {
    fn new(t: &Texture, width: usize, height: usize) -> Self {
        match *t {
            Texture::Flat { level } => Painter::Flat(level),
            Texture::Gradient { level, amplitude, angle } => Painter::Gradient {
                level,
                amplitude,
                dir: (angle.cos(), -angle.sin()),
                w: width as f64,
                h: height as f64,
            },
            Texture::Noise {
                level,
                amplitude,
                scale,
                seed,
            } => Painter::Noise {
                level,
                amplitude,
                noise: ValueNoise::new(width, height, scale, seed),
            },
        }
    }

    fn at(&self, x: f64, y: f64) -> f32 {
        match self {
            Painter::Flat(l) => *l,
            Painter::Gradient {
                level,
                amplitude,
                dir,
                w,
                h,
            } => {
                let t = ((x / w - 0.5) * dir.0 + (y / h - 0.5) * dir.1) as f32;
                level + amplitude * t
            }
            Painter::Noise { level, amplitude, noise } => level + amplitude * noise.at(x, y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub image: Raster,
    pub instances: InstanceMap,
    pub gt: OrientedBoundaryMap,
    pub fragments: Vec<BoundaryFragment>,
    pub segments: Vec<SegmentAnnotation>,
    pub warnings: Vec<String>,
}

/// Renders the scene, its instance map, and ground truth with the nearer region on the left.
///
/// Visible shapes are numbered 1, 2, ... nearest first; shapes with no visible pixel are
/// dropped with a warning.
pub fn render(spec: &SceneSpec) -> Result<RenderedScene> {
    spec.check()?;
    let (w, h) = (spec.width, spec.height);
    let mut warnings = Vec::new();

    let mut depth_index = vec![usize::MAX; w * h];
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f64, r as f64);
            if let Some(k) = spec.shapes.iter().position(|s| s.geometry.contains(x, y)) {
                depth_index[r * w + c] = k;
            }
        }
    }
    let mut visible = vec![false; spec.shapes.len()];
    for &k in &depth_index {
        if k != usize::MAX {
            visible[k] = true;
        }
    }
    let mut id_of_shape = vec![0u32; spec.shapes.len()];
    let mut classes = BTreeMap::new();
    let mut next = 1;
    for (k, s) in spec.shapes.iter().enumerate() {
        if visible[k] {
            id_of_shape[k] = next;
            classes.insert(next, s.class.clone());
            next += 1;
        } else {
            warnings.push(format!("shape {k} ({}) is fully occluded and was omitted", s.class));
        }
    }
    let ids: Vec<u32> = depth_index.iter().map(|&k| if k == usize::MAX { 0 } else { id_of_shape[k] }).collect();
    let instances = InstanceMap::new(w, h, ids, classes)?;

    let bg = Painter::new(&spec.background, w, h);
    let painters: Vec<Painter> = spec.shapes.iter().map(|s| Painter::new(&s.texture, w, h)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let image = Raster::from_fn(w, h, |r, c| {
        let (x, y) = (c as f64, r as f64);
        let k = depth_index[r * w + c];
        let v = if k == usize::MAX { bg.at(x, y) } else { painters[k].at(x, y) };
        let n = if spec.pixel_noise > 0.0 {
            spec.pixel_noise * rng.random_range(-1.0f32..1.0)
        } else {
            0.0
        };
        (v + n).clamp(0.0, 1.0)
    })?;

    let chains = extract_instance_boundaries(&instances);
    let fragments: Vec<BoundaryFragment> = chains
        .iter()
        .map(|lc| BoundaryFragment {
            chain: lc.chain.clone(),
            direction: lc.near_left,
            owner: Some(lc.near),
            occluded: Some(lc.far),
        })
        .collect();
    let gt = fragments_to_map(&fragments, w, h, DEFAULT_FRAGMENT_LEN)?;
    let segments = emit_segments(&chains, &mut warnings);
    Ok(RenderedScene {
        image,
        instances,
        gt,
        fragments,
        segments,
        warnings,
    })
}

/// Straight chords along every chain in its near-on-left direction, each checked to map back
/// onto its own chain; ambiguous chords are split until they do.
fn emit_segments(chains: &[LabeledChain], warnings: &mut Vec<String>) -> Vec<SegmentAnnotation> {
    let mut out = Vec::new();
    for (ci, lc) in chains.iter().enumerate() {
        let n = lc.chain.len();
        let forward = lc.near_left == Traversal::Forward;
        let pt = |k: usize| lc.chain.points[if forward { k } else { n - 1 - k }];
        if n == 1 {
            let p = pt(0);
            let s = if forward { 0.5 } else { -0.5 };
            out.push(SegmentAnnotation {
                x0: p.col as f64 - s,
                y0: p.row as f64,
                x1: p.col as f64 + s,
                y1: p.row as f64,
            });
            continue;
        }
        let span = if lc.chain.closed { SEGMENT_SPAN.min(n / 2) } else { SEGMENT_SPAN }.max(1);
        let mut pieces = Vec::new();
        let mut s = 0;
        while s + 1 < n {
            let e = (s + span).min(n - 1);
            pieces.push((s, e));
            s = e + 1;
        }
        if s == n - 1 {
            // a lone trailing vertex joins the previous piece
            match pieces.last_mut() {
                Some(last) => last.1 = n - 1,
                None => pieces.push((0, n - 1)),
            }
        }
        let mut stack: Vec<(usize, usize)> = pieces.into_iter().rev().collect();
        while let Some((s, e)) = stack.pop() {
            let (a, b) = (pt(s), pt(e));
            let seg = SegmentAnnotation {
                x0: a.col as f64,
                y0: a.row as f64,
                x1: b.col as f64,
                y1: b.row as f64,
            };
            let expect: Vec<usize> = (s..=e).map(|k| if forward { k } else { n - 1 - k }).collect();
            let ok = select_chain(&seg, chains, DEFAULT_RHO) == Some(ci)
                && project_segment(&seg, &lc.chain).is_some_and(|(mut idx, dir)| {
                    idx.sort_unstable();
                    let mut want = expect.clone();
                    want.sort_unstable();
                    idx == want && dir == lc.near_left
                });
            if ok || e - s < 3 {
                if !ok {
                    warnings.push(format!("segment on chain {ci} at ({}, {}) is ambiguous", a.row, a.col));
                }
                out.push(seg);
            } else {
                let m = (s + e) / 2;
                stack.push((m + 1, e));
                stack.push((s, m));
            }
        }
    }
    out
}

/// Random scene; `difficulty` in `[0, 1]` raises the shape count (2 to 6) and lowers contrast.
pub fn random_scene(width: usize, height: usize, difficulty: f64, seed: u64) -> SceneSpec {
    let d = difficulty.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_shapes = 2 + (4.0 * d).round() as usize;
    let contrast = 0.5 - 0.3 * d;
    let side = width.min(height) as f64;

    // region levels spread over [0.15, 0.85], at least `contrast`/2 apart where possible
    let n_levels = n_shapes + 1;
    let mut levels: Vec<f32> = Vec::with_capacity(n_levels);
    let step = (0.7 / (n_levels - 1) as f64).max(contrast / 2.0).min(0.7);
    let mut base: Vec<f64> = (0..n_levels).map(|i| (0.15 + step * i as f64).min(0.85)).collect();
    for i in (1..base.len()).rev() {
        base.swap(i, rng.random_range(0..=i));
    }
    levels.extend(base.iter().map(|&v| v as f32));

    let background = Texture::Noise {
        level: levels[n_shapes],
        amplitude: 0.12 + 0.05 * d as f32,
        scale: 3.0,
        seed: rng.random(),
    };
    let classes = ["disk", "ellipse", "polygon"];
    let shapes = (0..n_shapes)
        .map(|i| {
            let kind = rng.random_range(0..3);
            let cx = rng.random_range(0.15..0.85) * width as f64;
            let cy = rng.random_range(0.15..0.85) * height as f64;
            let r = rng.random_range(0.12..0.28) * side;
            let geometry = match kind {
                0 => Geometry::Disk { cx, cy, r },
                1 => Geometry::Ellipse {
                    cx,
                    cy,
                    rx: r,
                    ry: r * rng.random_range(0.5..0.9),
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                },
                _ => {
                    let k = rng.random_range(4..=7);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    let points = (0..k)
                        .map(|j| {
                            let a = phase + std::f64::consts::TAU * (j as f64 + rng.random_range(-0.25..0.25)) / k as f64;
                            let rr = r * rng.random_range(0.85..1.1);
                            [cx + rr * a.cos(), cy - rr * a.sin()]
                        })
                        .collect();
                    Geometry::Polygon { points }
                }
            };
            let level = levels[i];
            let texture = match rng.random_range(0..3) {
                0 => Texture::Flat { level },
                1 => Texture::Gradient {
                    level,
                    amplitude: 0.1,
                    angle: rng.random_range(0.0..std::f64::consts::TAU),
                },
                _ => Texture::Noise {
                    level,
                    amplitude: 0.03,
                    scale: 12.0,
                    seed: rng.random(),
                },
            };
            ShapeSpec {
                geometry,
                class: classes[kind].to_string(),
                texture,
            }
        })
        .collect();
    SceneSpec {
        width,
        height,
        shapes,
        background,
        seed: rng.random(),
        pixel_noise: 0.02,
    }
}

/// Seed of scene `index` in a dataset, independent of how many scenes are generated.
pub fn scene_seed(dataset_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(dataset_seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

/// Scenes `start..start + n` of the dataset fixed by `seed`.
pub fn make_scenes(n: usize, seed: u64, difficulty: f64, width: usize, height: usize, start: usize) -> Result<Vec<(SceneSpec, RenderedScene)>> {
    (start..start + n)
        .map(|i| {
            let spec = random_scene(width, height, difficulty, scene_seed(seed, i));
            let r = render(&spec)?;
            Ok((spec, r))
        })
        .collect()
}

/// `n` seeded training pairs at the default size.
pub fn make_dataset(n: usize, seed: u64, difficulty: f64) -> Result<Vec<(Raster, OrientedBoundaryMap)>> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    Ok(make_scenes(n, seed, difficulty, DEFAULT_SIZE, DEFAULT_SIZE, 0)?
        .into_iter()
        .map(|(_, r)| (r.image, r.gt))
        .collect())
}
