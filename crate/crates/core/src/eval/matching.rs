//! Correspondence between predicted and ground-truth boundary pixels.

use std::collections::VecDeque;

use super::BinaryMap;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::pixel::ZERO_LEVEL;

/// Match radius as a fraction of the image diagonal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchTolerance {
    pub fraction: f64,
}

impl MatchTolerance {
    pub fn new(fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction.is_finite()) {
            return Err(Error::Config(format!(
                "match tolerance {fraction} must be positive"
            )));
        }
        Ok(Self { fraction })
    }

    pub fn max_distance(&self, width: usize, height: usize) -> f64 {
        self.fraction * (width as f64).hypot(height as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f_measure(&self) -> f64 {
        f_measure(self.precision(), self.recall())
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2PR / (P + R)`, zero when `P + R = 0`.
pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r <= 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Maximum-cardinality bipartite matching (Hopcroft–Karp). `adj[u]` lists
/// the right vertices adjacent to left vertex `u`. Returns `match_left`.
pub fn max_matching(adj: &[Vec<usize>], n_right: usize) -> Vec<Option<usize>> {
    let mut ml = vec![None; adj.len()];
    let mut mr = vec![None; n_right];
    extend_matching(adj, &mut ml, &mut mr);
    ml
}

/// Grows a valid matching to maximum cardinality. Left vertices matched on
/// entry stay matched.
fn extend_matching(adj: &[Vec<usize>], ml: &mut [Option<usize>], mr: &mut [Option<usize>]) {
    const INF: usize = usize::MAX;
    let n_left = adj.len();
    let mut dist = vec![INF; n_left];
    loop {
        let mut queue = VecDeque::new();
        for u in 0..n_left {
            if ml[u].is_none() {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = INF;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                match mr[v] {
                    None => found = true,
                    Some(w) if dist[w] == INF => {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                    _ => {}
                }
            }
        }
        if !found {
            return;
        }
        let mut it = vec![0usize; n_left];
        for u in 0..n_left {
            if ml[u].is_none() {
                augment(u, adj, ml, mr, &mut dist, &mut it);
            }
        }
    }
}

fn augment(
    u: usize,
    adj: &[Vec<usize>],
    ml: &mut [Option<usize>],
    mr: &mut [Option<usize>],
    dist: &mut [usize],
    it: &mut [usize],
) -> bool {
    while it[u] < adj[u].len() {
        let v = adj[u][it[u]];
        it[u] += 1;
        let ok = match mr[v] {
            None => true,
            Some(w) => {
                dist[w] == dist[u].wrapping_add(1) && augment(w, adj, ml, mr, dist, it)
            }
        };
        if ok {
            ml[u] = Some(v);
            mr[v] = Some(u);
            return true;
        }
    }
    dist[u] = usize::MAX;
    false
}

/// Pixel offsets within `radius`, sorted by distance then raster order.
fn disk(radius: f64) -> Vec<(isize, isize)> {
    let r = radius.floor() as isize;
    let r2 = radius * radius;
    let mut out: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| ((dx * dx + dy * dy) as f64) <= r2)
        .collect();
    out.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    out
}

/// Matches predicted boundary pixels to ground-truth positives
/// (`gt ≥ eta`) within the tolerance radius. Unmatched predictions within
/// the radius of a don't-care pixel (`0 < gt < eta`) are not counted.
/// Predictions away from don't-care pixels are matched first, so among
/// maximum matchings the one with the fewest false positives is used.
pub fn match_boundaries(
    pred: &BinaryMap,
    gt: &GrayImage,
    tol: MatchTolerance,
    eta: f64,
) -> Result<Counts> {
    let (w, h) = (gt.width(), gt.height());
    if pred.width() != w || pred.height() != h {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {w}x{h}",
            pred.width(),
            pred.height()
        )));
    }
    let offsets = disk(tol.max_distance(w, h));
    let mut gt_index = vec![usize::MAX; w * h];
    let mut n_gt = 0;
    for (i, &v) in gt.data().iter().enumerate() {
        if v >= eta {
            gt_index[i] = n_gt;
            n_gt += 1;
        }
    }
    let dont_care = |i: usize| {
        let v = gt.data()[i];
        v >= ZERO_LEVEL && v < eta
    };
    let mut adj = Vec::new();
    let mut near_dont_care = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !pred.get(x, y) {
                continue;
            }
            let mut nbrs = Vec::new();
            let mut dc = false;
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if gt_index[j] != usize::MAX {
                    nbrs.push(gt_index[j]);
                } else if dont_care(j) {
                    dc = true;
                }
            }
            adj.push(nbrs);
            near_dont_care.push(dc);
        }
    }
    let plain: Vec<Vec<usize>> = adj
        .iter()
        .zip(&near_dont_care)
        .map(|(a, &dc)| if dc { Vec::new() } else { a.clone() })
        .collect();
    let mut ml = vec![None; adj.len()];
    let mut mr = vec![None; n_gt];
    extend_matching(&plain, &mut ml, &mut mr);
    extend_matching(&adj, &mut ml, &mut mr);
    let tp = ml.iter().filter(|m| m.is_some()).count();
    let fp = ml
        .iter()
        .zip(&near_dont_care)
        .filter(|(m, dc)| m.is_none() && !**dc)
        .count();
    Ok(Counts {
        tp,
        fp,
        fn_: n_gt - tp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hopcroft_karp_needs_augmenting_path() {
        // greedy u0→r0 blocks u1; maximum is 2
        let adj = vec![vec![0, 1], vec![0]];
        let m = max_matching(&adj, 2);
        assert_eq!(m, vec![Some(1), Some(0)]);
    }

    #[test]
    fn identical_maps_are_perfect() {
        let gt = GrayImage::from_fn(10, 10, |x, y| if x == y { 1.0 } else { 0.0 });
        let pred = BinaryMap::threshold(&gt, 0.5);
        let tol = MatchTolerance::new(0.0075).unwrap();
        let c = match_boundaries(&pred, &gt, tol, 0.3).unwrap();
        assert_eq!(c, Counts { tp: 10, fp: 0, fn_: 0 });
        assert_eq!(c.f_measure(), 1.0);
    }

    #[test]
    fn just_outside_tolerance() {
        let tol = MatchTolerance::new(0.1).unwrap();
        let d = tol.max_distance(20, 20);
        let gap = d.floor() as usize + 1;
        let mut gt = GrayImage::new(20, 20);
        gt.set(2, 5, 1.0);
        let mut pred = BinaryMap::new(20, 20);
        pred.set(2 + gap, 5, true);
        let c = match_boundaries(&pred, &gt, tol, 0.3).unwrap();
        assert_eq!(c, Counts { tp: 0, fp: 1, fn_: 1 });
        let mut pred = BinaryMap::new(20, 20);
        pred.set(2 + gap - 1, 5, true);
        let c = match_boundaries(&pred, &gt, tol, 0.3).unwrap();
        assert_eq!(c, Counts { tp: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn dont_care_suppresses_false_positive() {
        let tol = MatchTolerance::new(0.05).unwrap();
        let mut gt = GrayImage::new(20, 20);
        gt.set(10, 10, 0.2);
        let mut pred = BinaryMap::new(20, 20);
        pred.set(10, 10, true);
        pred.set(2, 2, true);
        let c = match_boundaries(&pred, &gt, tol, 0.3).unwrap();
        assert_eq!(c, Counts { tp: 0, fp: 1, fn_: 0 });
    }

    #[test]
    fn plain_prediction_wins_contested_match() {
        let tol = MatchTolerance::new(0.05).unwrap();
        let mut gt = GrayImage::new(20, 20);
        gt.set(10, 10, 1.0);
        gt.set(8, 10, 0.2);
        let mut pred = BinaryMap::new(20, 20);
        pred.set(9, 10, true);
        pred.set(11, 10, true);
        let c = match_boundaries(&pred, &gt, tol, 0.3).unwrap();
        assert_eq!(c, Counts { tp: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn f_measure_edges() {
        assert_eq!(f_measure(1.0, 1.0), 1.0);
        assert_eq!(f_measure(0.0, 0.0), 0.0);
        assert!((f_measure(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-15);
    }
}
