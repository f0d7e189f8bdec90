//! Exact polygon intersection area via the boundary integral
//! `|A ∩ B| = ½ ∮ (x dy − y dx)` over `∂(A ∩ B)`.
//!
//! The boundary of the intersection is made of the pieces of `∂A` inside `B`
//! and the pieces of `∂B` inside `A`. Each edge is split at every crossing
//! with the other unit's boundary so each piece is wholly inside, outside, or
//! on the other boundary. Pieces lying on a shared edge are counted once, and
//! only when both interiors are on the same side (edges run the same way).

use super::{AreaUnit, GeomError, Point2, Result};

/// Relative tolerance used to classify points as lying on a boundary.
const REL_EPS: f64 = 1e-10;

pub fn intersection_area(a: &AreaUnit, b: &AreaUnit) -> Result<f64> {
    if !a.bbox().intersects(b.bbox(), 0.0) {
        return Ok(0.0);
    }
    let bb = a.bbox().union(b.bbox());
    let scale = bb.width().max(bb.height());
    if !(scale.is_finite() && scale > 0.0) {
        return Err(GeomError::InvalidGeometry {
            id: a.id().to_string(),
            reason: "degenerate extent".into(),
        });
    }
    let eps = REL_EPS * scale;
    // Shift to a local origin to keep the cross products well conditioned.
    let origin = bb.center();
    let ea = local_edges(a, origin);
    let eb = local_edges(b, origin);

    let sum = boundary_contribution(&ea, &eb, eps, true) + boundary_contribution(&eb, &ea, eps, false);
    let area = 0.5 * sum;
    let cap = a.area.min(b.area);
    Ok(area.clamp(0.0, cap))
}

struct Edge {
    p: Point2,
    q: Point2,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

fn local_edges(u: &AreaUnit, origin: Point2) -> Vec<Edge> {
    u.edges()
        .map(|(p, q)| {
            let (p, q) = (p.sub(origin), q.sub(origin));
            Edge {
                p,
                q,
                xmin: p.x.min(q.x),
                xmax: p.x.max(q.x),
                ymin: p.y.min(q.y),
                ymax: p.y.max(q.y),
            }
        })
        .filter(|e| e.p != e.q)
        .collect()
}

fn boxes_near(e: &Edge, f: &Edge, eps: f64) -> bool {
    e.xmin <= f.xmax + eps && f.xmin <= e.xmax + eps && e.ymin <= f.ymax + eps && f.ymin <= e.ymax + eps
}

pub(crate) fn point_segment_dist(p: Point2, a: Point2, b: Point2) -> f64 {
    let d = b.sub(a);
    let len2 = d.dot(d);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(d) / len2).clamp(0.0, 1.0);
    p.dist(a.lerp(b, t))
}

/// Split parameters of edge `e` induced by the edges of the other boundary.
fn split_params(e: &Edge, others: &[Edge], eps: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(0.0);
    out.push(1.0);
    let d = e.q.sub(e.p);
    let len = d.dot(d).sqrt();
    let tol_t = eps / len;
    for f in others {
        if !boxes_near(e, f, eps) {
            continue;
        }
        let g = f.q.sub(f.p);
        let denom = d.cross(g);
        let glen = g.dot(g).sqrt();
        let w = f.p.sub(e.p);
        if denom.abs() > 1e-12 * len * glen {
            let t = w.cross(g) / denom;
            let u = w.cross(d) / denom;
            let tol_u = eps / glen;
            if t > -tol_t && t < 1.0 + tol_t && u > -tol_u && u < 1.0 + tol_u {
                out.push(t.clamp(0.0, 1.0));
            }
        } else if (w.cross(d) / len).abs() <= eps {
            // collinear: the other edge's endpoints split this one
            for end in [f.p, f.q] {
                let t = end.sub(e.p).dot(d) / (len * len);
                if t > 0.0 && t < 1.0 {
                    out.push(t);
                }
            }
        }
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out.dedup_by(|a, b| (*a - *b).abs() <= tol_t * 1e-3);
}

enum Location {
    Inside,
    Outside,
    /// On the other boundary; `true` when some edge there runs the same way.
    OnBoundary(bool),
}

fn classify(m: Point2, dir: Point2, others: &[Edge], eps: f64) -> Location {
    let mut on_boundary = false;
    let mut same_dir = false;
    for f in others {
        if m.x < f.xmin - eps || m.x > f.xmax + eps || m.y < f.ymin - eps || m.y > f.ymax + eps {
            continue;
        }
        if point_segment_dist(m, f.p, f.q) <= eps {
            on_boundary = true;
            if f.q.sub(f.p).dot(dir) > 0.0 {
                same_dir = true;
            }
        }
    }
    if on_boundary {
        return Location::OnBoundary(same_dir);
    }
    let mut inside = false;
    for f in others {
        let (a, b) = (f.p, f.q);
        if (a.y > m.y) != (b.y > m.y) {
            let x_cross = a.x + (m.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if m.x < x_cross {
                inside = !inside;
            }
        }
    }
    if inside {
        Location::Inside
    } else {
        Location::Outside
    }
}

fn boundary_contribution(edges: &[Edge], others: &[Edge], eps: f64, keep_shared: bool) -> f64 {
    let mut params = Vec::new();
    let mut total = 0.0;
    for e in edges {
        split_params(e, others, eps, &mut params);
        let dir = e.q.sub(e.p);
        for w in params.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if t1 <= t0 {
                continue;
            }
            let p0 = e.p.lerp(e.q, t0);
            let p1 = e.p.lerp(e.q, t1);
            let mid = e.p.lerp(e.q, 0.5 * (t0 + t1));
            let include = match classify(mid, dir, others, eps) {
                Location::Inside => true,
                Location::Outside => false,
                Location::OnBoundary(same) => keep_shared && same,
            };
            if include {
                total += p0.cross(p1);
            }
        }
    }
    total
}
