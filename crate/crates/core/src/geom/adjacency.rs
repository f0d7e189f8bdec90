use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clip::point_segment_dist;
use super::{AreaUnit, Domain, Point2};
use crate::linalg::SparseMatrix;

/// Boundaries closer than this (meters) are considered touching.
pub const TOUCH_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyRule {
    /// Any boundary contact, a single shared point included.
    #[default]
    Queen,
    /// A shared boundary of positive length.
    Rook,
}

fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let orient = |p: Point2, q: Point2, r: Point2| q.sub(p).cross(r.sub(p));
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    (o1 > 0.0) != (o2 > 0.0) && (o3 > 0.0) != (o4 > 0.0) && o1 != 0.0 && o2 != 0.0 && o3 != 0.0 && o4 != 0.0
}

fn segment_distance(a: Point2, b: Point2, c: Point2, d: Point2) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_dist(a, c, d)
        .min(point_segment_dist(b, c, d))
        .min(point_segment_dist(c, a, b))
        .min(point_segment_dist(d, a, b))
}

/// Length over which segment `cd` runs along segment `ab` within `tol`.
fn collinear_overlap(a: Point2, b: Point2, c: Point2, d: Point2, tol: f64) -> f64 {
    let ab = b.sub(a);
    let len = ab.dot(ab).sqrt();
    if len == 0.0 {
        return 0.0;
    }
    let off_c = ab.cross(c.sub(a)).abs() / len;
    let off_d = ab.cross(d.sub(a)).abs() / len;
    if off_c > tol || off_d > tol {
        return 0.0;
    }
    let tc = c.sub(a).dot(ab) / len;
    let td = d.sub(a).dot(ab) / len;
    let lo = tc.min(td).max(0.0);
    let hi = tc.max(td).min(len);
    (hi - lo).max(0.0)
}

fn touches(a: &AreaUnit, b: &AreaUnit, rule: AdjacencyRule) -> bool {
    let tol = TOUCH_TOLERANCE;
    if !a.bbox().intersects(b.bbox(), tol) {
        return false;
    }
    let eb: Vec<(Point2, Point2)> = b.edges().collect();
    for (p, q) in a.edges() {
        let (xmin, xmax) = (p.x.min(q.x) - tol, p.x.max(q.x) + tol);
        let (ymin, ymax) = (p.y.min(q.y) - tol, p.y.max(q.y) + tol);
        for &(r, s) in &eb {
            if r.x.max(s.x) < xmin || r.x.min(s.x) > xmax || r.y.max(s.y) < ymin || r.y.min(s.y) > ymax {
                continue;
            }
            let hit = match rule {
                AdjacencyRule::Queen => segment_distance(p, q, r, s) <= tol,
                AdjacencyRule::Rook => collinear_overlap(p, q, r, s, tol) > tol,
            };
            if hit {
                return true;
            }
        }
    }
    false
}

/// Symmetric 0/1 adjacency with zero diagonal.
pub fn adjacency_matrix(dom: &Domain, rule: AdjacencyRule) -> SparseMatrix {
    let units = dom.units();
    let n = units.len();
    let upper: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .filter(|&j| touches(&units[i], &units[j], rule))
                .collect()
        })
        .collect();
    let mut triplets = Vec::new();
    for (i, js) in upper.into_iter().enumerate() {
        for j in js {
            triplets.push((i, j, 1.0));
            triplets.push((j, i, 1.0));
        }
    }
    SparseMatrix::from_triplets(n, n, triplets).expect("indices are in range by construction")
}
