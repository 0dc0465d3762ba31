//! Pixel chains and the edge tracer that decomposes a thin edge map into them.

use serde::{Deserialize, Serialize};

use crate::raster::Raster;

/// Integer pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub row: i32,
    pub col: i32,
}

impl Pixel {
    pub const fn new(row: i32, col: i32) -> Self {
        Self { row, col }
    }

    pub fn is_8_adjacent(self, other: Pixel) -> bool {
        let dr = (self.row - other.row).abs();
        let dc = (self.col - other.col).abs();
        dr <= 1 && dc <= 1 && (dr + dc) > 0
    }

    pub fn offset(self, dr: i32, dc: i32) -> Pixel {
        Pixel::new(self.row + dr, self.col + dc)
    }
}

/// Ordered run of 8-adjacent pixels. Closed chains wrap from the last point back to the first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PixelChain {
    pub points: Vec<Pixel>,
    pub closed: bool,
}

impl PixelChain {
    pub fn open(points: Vec<Pixel>) -> Self {
        Self {
            points,
            closed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self {
            points,
            closed: self.closed,
        }
    }

    /// Checks the chain invariants: consecutive points 8-adjacent, no repeats.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.points.iter().all(|p| seen.insert(*p))
            && self.points.windows(2).all(|w| w[0].is_8_adjacent(w[1]))
    }

    /// Sub-chain of indices `from..=to`, walking forward (wrapping on closed chains).
    pub fn slice_forward(&self, from: usize, to: usize) -> PixelChain {
        let n = self.points.len();
        let mut points = Vec::new();
        let mut i = from;
        loop {
            points.push(self.points[i]);
            if i == to {
                break;
            }
            i = (i + 1) % n;
        }
        PixelChain::open(points)
    }
}

/// Ring of 8-neighbours, clockwise from north.
pub(crate) const RING: [(i32, i32); 8] = [
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
];

/// Step preference while walking: 4-neighbours before diagonals, so staircases are walked pixel by pixel.
const WALK_ORDER: [(i32, i32); 8] = [
    (-1, 0),
    (0, 1),
    (1, 0),
    (0, -1),
    (-1, 1),
    (1, 1),
    (1, -1),
    (-1, -1),
];

/// Boolean pixel mask with bounds-checked lookup.
#[derive(Debug, Clone)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Pixels with value > 0.5 (NaN counts as off).
    pub fn from_raster(r: &Raster) -> Self {
        Self {
            width: r.width(),
            height: r.height(),
            bits: (0..r.len()).map(|i| r.data()[i * r.channels()] > 0.5).collect(),
        }
    }

    #[inline]
    pub fn get(&self, p: Pixel) -> bool {
        p.row >= 0
            && p.col >= 0
            && (p.row as usize) < self.height
            && (p.col as usize) < self.width
            && self.bits[p.row as usize * self.width + p.col as usize]
    }

    #[inline]
    pub fn set(&mut self, p: Pixel, v: bool) {
        self.bits[p.row as usize * self.width + p.col as usize] = v;
    }

    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| {
            Pixel::new((i / self.width) as i32, (i % self.width) as i32)
        })
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Number of maximal runs of set pixels around the 8-ring of `p`.
fn ring_runs(p: Pixel, present: impl Fn(Pixel) -> bool) -> usize {
    let flags: Vec<bool> = RING.iter().map(|&(dr, dc)| present(p.offset(dr, dc))).collect();
    if flags.iter().all(|&f| f) {
        return 1;
    }
    (0..8).filter(|&i| flags[i] && !flags[(i + 7) % 8]).count()
}

/// Splits a thin edge map into 8-connected chains.
///
/// A junction is an edge pixel whose 8-ring holds three or more separate runs of
/// edge pixels. Junctions are removed, the remaining pixels are walked into
/// chains (diagonal steps that cut across a junction's corner are not allowed),
/// and each junction is then appended to the adjacent chain end with the lowest
/// `(row, col)`; a junction with no adjacent open chain end starts its own chain.
pub fn trace_chains(edges: &Raster) -> Vec<PixelChain> {
    trace_mask(&Mask::from_raster(edges))
}

pub fn trace_mask(mask: &Mask) -> Vec<PixelChain> {
    let (w, h) = (mask.width, mask.height);
    let idx = |p: Pixel| p.row as usize * w + p.col as usize;

    let mut junction = Mask::new(w, h);
    for p in mask.pixels() {
        if ring_runs(p, |q| mask.get(q)) >= 3 {
            junction.set(p, true);
        }
    }
    let plain = |q: Pixel| mask.get(q) && !junction.get(q);
    let linked = |a: Pixel, b: Pixel| {
        if !plain(b) {
            return false;
        }
        let (dr, dc) = (b.row - a.row, b.col - a.col);
        if dr != 0 && dc != 0 {
            // the two 4-neighbours shared by a diagonal pair
            let c1 = Pixel::new(a.row, b.col);
            let c2 = Pixel::new(b.row, a.col);
            if junction.get(c1) || junction.get(c2) {
                return false;
            }
        }
        true
    };

    let mut visited = vec![false; w * h];
    let mut chains: Vec<PixelChain> = Vec::new();

    let walk = |start: Pixel, visited: &mut Vec<bool>| -> Vec<Pixel> {
        let mut pts = vec![start];
        visited[idx(start)] = true;
        let mut cur = start;
        loop {
            let next = WALK_ORDER
                .iter()
                .map(|&(dr, dc)| cur.offset(dr, dc))
                .find(|&q| linked(cur, q) && !visited[idx(q)]);
            match next {
                Some(q) => {
                    visited[idx(q)] = true;
                    pts.push(q);
                    cur = q;
                }
                None => break,
            }
        }
        pts
    };

    // open chains from their endpoints first, so they are walked end to end
    for p in mask.pixels() {
        if junction.get(p) || visited[idx(p)] {
            continue;
        }
        if ring_runs(p, |q| linked(p, q)) <= 1 {
            let pts = walk(p, &mut visited);
            chains.push(PixelChain::open(pts));
        }
    }
    // what remains lies on loops
    for p in mask.pixels() {
        if junction.get(p) || visited[idx(p)] {
            continue;
        }
        let pts = walk(p, &mut visited);
        let closed = pts.len() >= 3 && pts[0].is_8_adjacent(*pts.last().unwrap());
        chains.push(PixelChain { points: pts, closed });
    }

    for j in junction.pixels() {
        let mut best: Option<(Pixel, usize, bool)> = None;
        for (ci, ch) in chains.iter().enumerate() {
            if ch.closed {
                continue;
            }
            let first = ch.points[0];
            let last = *ch.points.last().unwrap();
            for (end, at_front) in [(first, true), (last, false)] {
                if end.is_8_adjacent(j) && best.is_none_or(|(b, _, _)| end < b) {
                    best = Some((end, ci, at_front));
                }
            }
        }
        match best {
            Some((_, ci, true)) => chains[ci].points.insert(0, j),
            Some((_, ci, false)) => chains[ci].points.push(j),
            None => chains.push(PixelChain::open(vec![j])),
        }
    }
    chains
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raster_from(w: usize, h: usize, pts: &[(i32, i32)]) -> Raster {
        let mut r = Raster::new(w, h, 1).unwrap();
        for &(row, col) in pts {
            r.set(row as usize, col as usize, 1.0);
        }
        r
    }

    #[test]
    fn horizontal_run_is_one_chain() {
        let pts: Vec<_> = (2..7).map(|c| (3, c)).collect();
        let chains = trace_chains(&raster_from(10, 6, &pts));
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].len(), 5);
        assert!(chains[0].is_well_formed());
    }

    #[test]
    fn empty_map_has_no_chains() {
        assert!(trace_chains(&Raster::new(4, 4, 1).unwrap()).is_empty());
    }

    #[test]
    fn t_junction_splits_into_three_arms() {
        // arms of four pixels: left, right and down, meeting at (1, 5)
        let mut pts: Vec<(i32, i32)> = (1..5).map(|c| (1, c)).collect();
        pts.extend((6..10).map(|c| (1, c)));
        pts.extend((2..6).map(|r| (r, 5)));
        pts.push((1, 5));
        let chains = trace_chains(&raster_from(11, 7, &pts));
        assert_eq!(chains.len(), 3);
        let with_junction: Vec<_> = chains
            .iter()
            .filter(|c| c.points.contains(&Pixel::new(1, 5)))
            .collect();
        assert_eq!(with_junction.len(), 1);
        // hand enumeration: the arm ends adjacent to the junction are (1,4), (1,6), (2,5);
        // the lowest (row, col) is (1,4), the left arm
        assert!(with_junction[0].points.contains(&Pixel::new(1, 1)));
        assert_eq!(with_junction[0].len(), 5);
        let mut lens: Vec<_> = chains.iter().map(|c| c.len()).collect();
        lens.sort();
        assert_eq!(lens, vec![4, 4, 5]);
        for c in &chains {
            assert!(c.is_well_formed());
        }
    }

    #[test]
    fn square_ring_is_closed() {
        let mut pts = Vec::new();
        for c in 1..6 {
            pts.push((1, c));
            pts.push((5, c));
        }
        for r in 2..5 {
            pts.push((r, 1));
            pts.push((r, 5));
        }
        let chains = trace_chains(&raster_from(8, 8, &pts));
        assert_eq!(chains.len(), 1);
        assert!(chains[0].closed);
        assert_eq!(chains[0].len(), 16);
        assert!(chains[0].is_well_formed());
    }

    #[test]
    fn staircase_is_walked_pixel_by_pixel() {
        let pts = [(5, 0), (5, 1), (4, 1), (4, 2), (3, 2), (3, 3), (2, 3)];
        let chains = trace_chains(&raster_from(6, 6, &pts));
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].len(), 7);
    }

    proptest! {
        #[test]
        fn chains_partition_edge_pixels(bits in proptest::collection::vec(any::<bool>(), 64)) {
            let r = Raster::from_vec(8, 8, 1, bits.iter().map(|&b| b as u8 as f32).collect()).unwrap();
            let chains = trace_chains(&r);
            let mut seen = std::collections::HashSet::new();
            for ch in &chains {
                prop_assert!(ch.is_well_formed());
                for p in &ch.points {
                    prop_assert!(seen.insert(*p), "pixel {:?} in two chains", p);
                }
            }
            let edge: std::collections::HashSet<_> = Mask::from_raster(&r).pixels().collect();
            prop_assert_eq!(seen, edge);
        }
    }
}
