//! Boundary correspondence, the occlusion-accuracy / boundary-recall curve, and precision/recall.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::angle::within_quarter_turn;
use crate::chain::{Mask, Pixel};
use crate::error::{Error, Result};
use crate::infer::ScoredBoundaryMap;
use crate::raster::Raster;
use crate::repr::OrientedBoundaryMap;

/// Matching tolerance as a fraction of the image diagonal.
pub const DEFAULT_MAX_DIST_FRAC: f64 = 0.0075;
pub const THRESHOLD_COUNT: usize = 33;

/// `t_k = 2k / 32` for `k = 0..=32`.
pub fn thresholds() -> Vec<f64> {
    (0..THRESHOLD_COUNT).map(|k| 2.0 * k as f64 / 32.0).collect()
}

pub fn max_dist_for(width: usize, height: usize, frac: f64) -> f64 {
    frac * ((width * width + height * height) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    /// `(predicted, ground truth, distance)`.
    pub pairs: Vec<(Pixel, Pixel, f64)>,
    pub unmatched_pred: Vec<Pixel>,
    pub unmatched_gt: Vec<Pixel>,
    pub max_dist: f64,
}

impl Correspondence {
    pub fn cost(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum()
    }
}

fn dist(a: Pixel, b: Pixel) -> f64 {
    let dr = (a.row - b.row) as f64;
    let dc = (a.col - b.col) as f64;
    (dr * dr + dc * dc).sqrt()
}

/// One-to-one matching between the edge pixels of two binary maps.
pub fn match_boundaries(pred: &Raster, gt: &Raster, max_dist: f64) -> Result<Correspondence> {
    if !pred.same_size(gt) {
        return Err(Error::ShapeMismatch("prediction vs ground truth".into()));
    }
    let p: Vec<Pixel> = Mask::from_raster(pred).pixels().collect();
    let g: Vec<Pixel> = Mask::from_raster(gt).pixels().collect();
    Ok(match_pixels(&p, &g, max_dist))
}

/// Maximum-cardinality matching of minimum total Euclidean distance, pairs limited to `max_dist`.
///
/// Solved per connected component of the candidate graph by successive shortest augmenting
/// paths with vertex potentials.
pub fn match_pixels(pred: &[Pixel], gt: &[Pixel], max_dist: f64) -> Correspondence {
    let adj = candidates(pred, gt, max_dist);
    let mut match_of_pred: Vec<Option<usize>> = vec![None; pred.len()];
    for comp in components(&adj, gt.len()) {
        solve_component(&comp, &adj, &mut match_of_pred);
    }
    let mut used_gt = vec![false; gt.len()];
    let mut pairs = Vec::new();
    let mut unmatched_pred = Vec::new();
    for (i, m) in match_of_pred.iter().enumerate() {
        match m {
            Some(j) => {
                used_gt[*j] = true;
                pairs.push((pred[i], gt[*j], dist(pred[i], gt[*j])));
            }
            None => unmatched_pred.push(pred[i]),
        }
    }
    let unmatched_gt = gt.iter().zip(&used_gt).filter(|(_, &u)| !u).map(|(g, _)| *g).collect();
    Correspondence {
        pairs,
        unmatched_pred,
        unmatched_gt,
        max_dist,
    }
}

/// For each predicted pixel, the ground-truth pixels within `max_dist` and their distances.
fn candidates(pred: &[Pixel], gt: &[Pixel], max_dist: f64) -> Vec<Vec<(usize, f64)>> {
    if pred.is_empty() || gt.is_empty() || !(max_dist >= 0.0) {
        return vec![Vec::new(); pred.len()];
    }
    // bucket ground truth on a grid with cell size >= max_dist
    let cell = max_dist.ceil().max(1.0) as i32;
    let mut grid: std::collections::HashMap<(i32, i32), Vec<usize>> = std::collections::HashMap::new();
    for (j, g) in gt.iter().enumerate() {
        grid.entry((g.row.div_euclid(cell), g.col.div_euclid(cell))).or_default().push(j);
    }
    pred.iter()
        .map(|p| {
            let (br, bc) = (p.row.div_euclid(cell), p.col.div_euclid(cell));
            let mut out = Vec::new();
            for dr in -1..=1 {
                for dc in -1..=1 {
                    if let Some(js) = grid.get(&(br + dr, bc + dc)) {
                        for &j in js {
                            let d = dist(*p, gt[j]);
                            if d <= max_dist {
                                out.push((j, d));
                            }
                        }
                    }
                }
            }
            out.sort_by_key(|e| e.0);
            out
        })
        .collect()
}

/// Predicted-pixel indices grouped by connected component of the candidate graph.
fn components(adj: &[Vec<(usize, f64)>], n_gt: usize) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut parent: Vec<usize> = (0..n + n_gt).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, edges) in adj.iter().enumerate() {
        for &(j, _) in edges {
            let (a, b) = (find(&mut parent, i), find(&mut parent, n + j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, edges) in adj.iter().enumerate() {
        if !edges.is_empty() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
    }
    groups.into_values().collect()
}

#[derive(Copy, Clone, PartialEq)]
struct State {
    d: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, o: &Self) -> Ordering {
        o.d.total_cmp(&self.d).then_with(|| o.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

fn solve_component(preds: &[usize], adj: &[Vec<(usize, f64)>], match_of_pred: &mut [Option<usize>]) {
    // local numbering: left 0..nl, right nl..nl+nr
    let nl = preds.len();
    let mut right_ids: Vec<usize> = preds.iter().flat_map(|&i| adj[i].iter().map(|e| e.0)).collect();
    right_ids.sort_unstable();
    right_ids.dedup();
    let nr = right_ids.len();
    let local_r = |g: usize| nl + right_ids.binary_search(&g).expect("edge target in component");
    let edges: Vec<Vec<(usize, f64)>> = preds
        .iter()
        .map(|&i| adj[i].iter().map(|&(g, d)| (local_r(g), d)).collect())
        .collect();

    let n = nl + nr;
    let mut mate: Vec<Option<usize>> = vec![None; n];
    let mut pot = vec![0.0f64; n];
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    loop {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|x| *x = false);
        let mut heap = BinaryHeap::new();
        for u in 0..nl {
            if mate[u].is_none() {
                dist[u] = 0.0;
                heap.push(State { d: 0.0, node: u });
            }
        }
        let mut target = None;
        while let Some(State { d, node }) = heap.pop() {
            if done[node] || d > dist[node] {
                continue;
            }
            done[node] = true;
            if node >= nl {
                match mate[node] {
                    None => {
                        target = Some(node);
                        break;
                    }
                    Some(u) => {
                        // matched edge traversed backwards at negative cost
                        let c = -edge_cost(&edges[u], node);
                        let nd = d + (c + pot[node] - pot[u]).max(0.0);
                        if nd < dist[u] {
                            dist[u] = nd;
                            prev[u] = node;
                            heap.push(State { d: nd, node: u });
                        }
                    }
                }
            } else {
                for &(v, c) in &edges[node] {
                    if mate[node] == Some(v) {
                        continue;
                    }
                    let nd = d + (c + pot[node] - pot[v]).max(0.0);
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = node;
                        heap.push(State { d: nd, node: v });
                    }
                }
            }
        }
        let Some(t) = target else { break };
        let dt = dist[t];
        for v in 0..n {
            pot[v] += if done[v] { dist[v] } else { dt };
        }
        // augment along the path ending at t
        let mut v = t;
        loop {
            let u = prev[v];
            let old = prev[u];
            mate[u] = Some(v);
            mate[v] = Some(u);
            if old == usize::MAX {
                break;
            }
            v = old;
        }
    }
    for u in 0..nl {
        if let Some(v) = mate[u] {
            match_of_pred[preds[u]] = Some(right_ids[v - nl]);
        }
    }
}

fn edge_cost(edges: &[(usize, f64)], v: usize) -> f64 {
    edges.iter().find(|e| e.0 == v).map(|e| e.1).expect("matched edge exists")
}

/// Counts at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ThresholdCounts {
    pub gt_pixels: usize,
    pub pred_pixels: usize,
    /// Matched pairs (equal to matched ground-truth pixels and matched predictions).
    pub matched: usize,
    /// Matched pairs whose orientations are within a quarter turn.
    pub correct: usize,
}

impl ThresholdCounts {
    pub fn add(&mut self, o: &ThresholdCounts) {
        self.gt_pixels += o.gt_pixels;
        self.pred_pixels += o.pred_pixels;
        self.matched += o.matched;
        self.correct += o.correct;
    }

    pub fn recall(&self) -> f64 {
        if self.gt_pixels == 0 {
            0.0
        } else {
            self.matched as f64 / self.gt_pixels as f64
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.matched > 0).then(|| self.correct as f64 / self.matched as f64)
    }

    pub fn precision(&self) -> Option<f64> {
        (self.pred_pixels > 0).then(|| self.matched as f64 / self.pred_pixels as f64)
    }
}

/// Matching counts for every threshold of one image.
pub fn evaluate(pred: &ScoredBoundaryMap, gt: &OrientedBoundaryMap, max_dist_frac: f64) -> Result<Vec<ThresholdCounts>> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::ShapeMismatch("prediction vs ground truth".into()));
    }
    let gt_pixels: Vec<Pixel> = gt.edge_mask().pixels().collect();
    if gt_pixels.is_empty() {
        return Err(Error::invalid("ground truth has no boundary pixels"));
    }
    let max_dist = max_dist_for(gt.width(), gt.height(), max_dist_frac);
    let w = gt.width();
    Ok(thresholds()
        .par_iter()
        .map(|&t| {
            let mut preds = Vec::new();
            for (i, (&s, &o)) in pred.total.data().iter().zip(pred.orient.data()).enumerate() {
                if o.is_finite() && s as f64 >= t {
                    preds.push(Pixel::new((i / w) as i32, (i % w) as i32));
                }
            }
            let corr = match_pixels(&preds, &gt_pixels, max_dist);
            let correct = corr
                .pairs
                .iter()
                .filter(|(p, g, _)| {
                    let tp = pred.orient.get(p.row as usize, p.col as usize) as f64;
                    let tg = gt.orient.get(g.row as usize, g.col as usize) as f64;
                    within_quarter_turn(tp, tg)
                })
                .count();
            ThresholdCounts {
                gt_pixels: gt_pixels.len(),
                pred_pixels: preds.len(),
                matched: corr.pairs.len(),
                correct,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AorCurve {
    pub thresholds: Vec<f64>,
    pub recall: Vec<f64>,
    /// `None` where nothing was matched.
    pub accuracy: Vec<Option<f64>>,
}

impl AorCurve {
    pub fn from_counts(thresholds: &[f64], counts: &[ThresholdCounts]) -> Self {
        Self {
            thresholds: thresholds.to_vec(),
            recall: counts.iter().map(ThresholdCounts::recall).collect(),
            accuracy: counts.iter().map(ThresholdCounts::accuracy).collect(),
        }
    }

    /// Curve from counts summed over several images.
    pub fn pooled(per_image: &[Vec<ThresholdCounts>]) -> Self {
        let ts = thresholds();
        let mut sum = vec![
            ThresholdCounts {
                gt_pixels: 0,
                pred_pixels: 0,
                matched: 0,
                correct: 0
            };
            ts.len()
        ];
        for counts in per_image {
            for (s, c) in sum.iter_mut().zip(counts) {
                s.add(c);
            }
        }
        Self::from_counts(&ts, &sum)
    }

    /// Accuracy at the largest threshold whose recall is at least `min_recall`.
    pub fn accuracy_at_recall(&self, min_recall: f64) -> Option<(f64, f64, Option<f64>)> {
        (0..self.thresholds.len())
            .rev()
            .find(|&k| self.recall[k] >= min_recall)
            .map(|k| (self.thresholds[k], self.recall[k], self.accuracy[k]))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,recall,accuracy\n");
        for k in 0..self.thresholds.len() {
            let acc = self.accuracy[k].map(|a| format!("{a:?}")).unwrap_or_default();
            let _ = writeln!(s, "{:?},{:?},{}", self.thresholds[k], self.recall[k], acc);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().trim();
        if header != "threshold,recall,accuracy" {
            return Err(Error::format("AOR CSV", format!("header: expected threshold,recall,accuracy, got {header:?}")));
        }
        let mut curve = AorCurve {
            thresholds: Vec::new(),
            recall: Vec::new(),
            accuracy: Vec::new(),
        };
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let num = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::format("AOR CSV", format!("line {}: bad {what} {s:?}", i + 2)))
            };
            if fields.len() != 3 {
                return Err(Error::format("AOR CSV", format!("line {}: expected 3 fields", i + 2)));
            }
            curve.thresholds.push(num(fields[0], "threshold")?);
            curve.recall.push(num(fields[1], "recall")?);
            curve.accuracy.push(if fields[2].is_empty() {
                None
            } else {
                Some(num(fields[2], "accuracy")?)
            });
        }
        Ok(curve)
    }
}

/// Orientation accuracy against boundary recall for one image.
pub fn aor_curve(pred: &ScoredBoundaryMap, gt: &OrientedBoundaryMap, max_dist_frac: f64) -> Result<AorCurve> {
    let counts = evaluate(pred, gt, max_dist_frac)?;
    Ok(AorCurve::from_counts(&thresholds(), &counts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrRow {
    pub threshold: f64,
    pub precision: Option<f64>,
    pub recall: f64,
    pub f: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrTable {
    pub rows: Vec<PrRow>,
    /// Index of the row with the best F-measure (first on ties).
    pub best: Option<usize>,
}

impl PrTable {
    pub fn from_counts(thresholds: &[f64], counts: &[ThresholdCounts]) -> Self {
        let rows: Vec<PrRow> = thresholds
            .iter()
            .zip(counts)
            .map(|(&t, c)| {
                let p = c.precision();
                let r = c.recall();
                let f = p.and_then(|p| (p + r > 0.0).then(|| 2.0 * p * r / (p + r)));
                PrRow {
                    threshold: t,
                    precision: p,
                    recall: r,
                    f,
                }
            })
            .collect();
        let mut best: Option<usize> = None;
        for (i, row) in rows.iter().enumerate() {
            if let Some(f) = row.f {
                if best.is_none_or(|b| f > rows[b].f.unwrap_or(-1.0)) {
                    best = Some(i);
                }
            }
        }
        Self { rows, best }
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        let mut s = String::from("threshold,precision,recall,f\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:?},{},{:?},{}", r.threshold, opt(r.precision), r.recall, opt(r.f));
        }
        s
    }
}

pub fn boundary_pr(pred: &ScoredBoundaryMap, gt: &OrientedBoundaryMap, max_dist_frac: f64) -> Result<PrTable> {
    let counts = evaluate(pred, gt, max_dist_frac)?;
    Ok(PrTable::from_counts(&thresholds(), &counts))
}

/// Renders AOR curves (recall on x, accuracy on y) as a standalone SVG.
pub fn aor_svg(curves: &[(String, AorCurve)]) -> String {
    const W: f64 = 520.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 30.0;
    const B: f64 = 60.0;
    const COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let px = |x: f64| L + x.clamp(0.0, 1.0) * (W - L - R);
    let py = |y: f64| H - B - y.clamp(0.0, 1.0) * (H - T - B);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="#ddd"/><text x="{x}" y="{ty}" text-anchor="middle">{v:.1}</text>"##,
            x = px(v),
            y0 = py(0.0),
            y1 = py(1.0),
            ty = py(0.0) + 18.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/><text x="{tx}" y="{ty}" text-anchor="end">{v:.1}</text>"##,
            x0 = px(0.0),
            x1 = px(1.0),
            y = py(v),
            tx = px(0.0) - 8.0,
            ty = py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        px(0.0),
        py(1.0),
        px(1.0) - px(0.0),
        py(0.0) - py(1.0)
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">Boundary recall</text>"#, (px(0.0) + px(1.0)) / 2.0, H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">Occlusion accuracy</text>"#,
        y = (py(0.0) + py(1.0)) / 2.0
    );
    for (i, (label, c)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = (0..c.recall.len())
            .filter_map(|k| c.accuracy[k].map(|a| format!("{:.2},{:.2}", px(c.recall[k]), py(a))))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let ly = T + 16.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{ly}" x2="{x1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{tx}" y="{ty}">{}</text>"#,
            xml_escape(label),
            x0 = px(0.05),
            x1 = px(0.05) + 24.0,
            tx = px(0.05) + 30.0,
            ty = ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn px(r: i32, c: i32) -> Pixel {
        Pixel::new(r, c)
    }

    /// Best (pair count, then cost) over every one-to-one matching.
    fn exhaustive(pred: &[Pixel], gt: &[Pixel], max_dist: f64) -> (usize, f64) {
        fn go(i: usize, pred: &[Pixel], gt: &[Pixel], used: &mut Vec<bool>, max_dist: f64, n: usize, cost: f64, best: &mut (usize, f64)) {
            if i == pred.len() {
                if n > best.0 || (n == best.0 && cost < best.1) {
                    *best = (n, cost);
                }
                return;
            }
            go(i + 1, pred, gt, used, max_dist, n, cost, best);
            for j in 0..gt.len() {
                let d = dist(pred[i], gt[j]);
                if !used[j] && d <= max_dist {
                    used[j] = true;
                    go(i + 1, pred, gt, used, max_dist, n + 1, cost + d, best);
                    used[j] = false;
                }
            }
        }
        let mut best = (0, 0.0);
        go(0, pred, gt, &mut vec![false; gt.len()], max_dist, 0, 0.0, &mut best);
        best
    }

    #[test]
    fn single_pair() {
        let c = match_pixels(&[px(0, 0)], &[px(0, 1)], 2.0);
        assert_eq!(c.pairs, vec![(px(0, 0), px(0, 1), 1.0)]);
    }

    #[test]
    fn avoids_the_greedy_trap() {
        let c = match_pixels(&[px(0, 0), px(0, 2)], &[px(0, 1), px(0, 3)], 3.0);
        assert_eq!(c.pairs.len(), 2);
        assert_eq!(c.cost(), 2.0);
        assert_eq!(exhaustive(&[px(0, 0), px(0, 2)], &[px(0, 1), px(0, 3)], 3.0), (2, 2.0));
    }

    #[test]
    fn identical_sets_match_at_zero() {
        let pts: Vec<_> = (0..20).map(|i| px(i / 5, i % 5 * 2)).collect();
        let c = match_pixels(&pts, &pts, 1.5);
        assert_eq!(c.pairs.len(), 20);
        assert_eq!(c.cost(), 0.0);
    }

    #[test]
    fn empty_sides() {
        let c = match_pixels(&[], &[px(1, 1)], 2.0);
        assert!(c.pairs.is_empty());
        assert_eq!(c.unmatched_gt, vec![px(1, 1)]);
    }

    #[test]
    fn agrees_with_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..150 {
            let np = rng.random_range(0..=7);
            let ng = rng.random_range(0..=7);
            let mut pick = |n| {
                let mut v: Vec<Pixel> = Vec::new();
                while v.len() < n {
                    let p = px(rng.random_range(0..5), rng.random_range(0..5));
                    if !v.contains(&p) {
                        v.push(p);
                    }
                }
                v
            };
            let (p, g) = (pick(np), pick(ng));
            let md = [1.0, 1.5, 2.3, 3.0][rng.random_range(0..4)];
            let c = match_pixels(&p, &g, md);
            let (n, cost) = exhaustive(&p, &g, md);
            assert_eq!(c.pairs.len(), n, "{p:?} {g:?} {md}");
            assert!((c.cost() - cost).abs() < 1e-9, "{} vs {cost}", c.cost());
        }
    }

    fn scored_from(gt: &OrientedBoundaryMap, orient: &Raster) -> ScoredBoundaryMap {
        let conf = gt.edge.clone();
        ScoredBoundaryMap {
            edge_conf: conf.clone(),
            orient: orient.clone(),
            orient_conf: conf.clone(),
            total: conf.map(|v| 2.0 * v),
            untangented: Vec::new(),
        }
    }

    #[test]
    fn perfect_prediction() {
        let mut gt = OrientedBoundaryMap::empty(8, 8).unwrap();
        for c in 1..7 {
            gt.edge.set(4, c, 1.0);
            gt.orient.set(4, c, 0.3);
        }
        let curve = aor_curve(&scored_from(&gt, &gt.orient), &gt, DEFAULT_MAX_DIST_FRAC).unwrap();
        assert!(curve.recall.iter().all(|&r| r == 1.0));
        assert!(curve.accuracy.iter().all(|&a| a == Some(1.0)));
        let pr = boundary_pr(&scored_from(&gt, &gt.orient), &gt, DEFAULT_MAX_DIST_FRAC).unwrap();
        assert!(pr.rows.iter().all(|r| r.f == Some(1.0)));
    }

    #[test]
    fn one_reversed_pixel_of_three() {
        let mut gt = OrientedBoundaryMap::empty(5, 1).unwrap();
        for c in 1..4 {
            gt.edge.set(0, c, 1.0);
            gt.orient.set(0, c, (PI / 2.0) as f32);
        }
        let mut o = gt.orient.clone();
        o.set(0, 2, (-PI / 2.0) as f32);
        let curve = aor_curve(&scored_from(&gt, &o), &gt, DEFAULT_MAX_DIST_FRAC).unwrap();
        assert_eq!(curve.accuracy[0], Some(2.0 / 3.0));
    }

    #[test]
    fn empty_prediction_has_undefined_accuracy() {
        let mut gt = OrientedBoundaryMap::empty(5, 5).unwrap();
        gt.edge.set(2, 2, 1.0);
        gt.orient.set(2, 2, 0.0);
        let pred = ScoredBoundaryMap {
            edge_conf: Raster::new(5, 5, 1).unwrap(),
            orient: Raster::filled(5, 5, 1, f32::NAN).unwrap(),
            orient_conf: Raster::new(5, 5, 1).unwrap(),
            total: Raster::new(5, 5, 1).unwrap(),
            untangented: Vec::new(),
        };
        let curve = aor_curve(&pred, &gt, DEFAULT_MAX_DIST_FRAC).unwrap();
        assert!(curve.recall.iter().all(|&r| r == 0.0));
        assert!(curve.accuracy.iter().all(|a| a.is_none()));
        let csv = curve.to_csv();
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
        assert_eq!(AorCurve::from_csv(&csv).unwrap(), curve);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        let gt = OrientedBoundaryMap::empty(4, 4).unwrap();
        assert!(aor_curve(&scored_from(&gt, &gt.orient), &gt, 0.0075).is_err());
    }

    #[test]
    fn spurious_pixel_lowers_precision() {
        let mut gt = OrientedBoundaryMap::empty(120, 120).unwrap();
        for c in 0..99 {
            gt.edge.set(10, c, 1.0);
            gt.orient.set(10, c, 0.0);
        }
        let mut s = scored_from(&gt, &gt.orient);
        s.total.set(80, 80, 1.5);
        s.orient.set(80, 80, 0.0);
        let pr = boundary_pr(&s, &gt, DEFAULT_MAX_DIST_FRAC).unwrap();
        assert_eq!(pr.rows[0].precision, Some(0.99));
        assert_eq!(pr.rows[0].recall, 1.0);
    }

    #[test]
    fn svg_has_axes_and_curves() {
        let curve = AorCurve {
            thresholds: vec![0.0, 1.0],
            recall: vec![0.9, 0.5],
            accuracy: vec![Some(0.8), None],
        };
        let svg = aor_svg(&[("run <a>".into(), curve)]);
        assert!(svg.contains("Boundary recall") && svg.contains("Occlusion accuracy"));
        assert!(svg.contains("run &lt;a&gt;"));
        assert!(svg.contains("<polyline"));
    }
}
