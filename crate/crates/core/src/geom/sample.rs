use rand::Rng;
use rand::distr::{weighted::WeightedIndex, Distribution};

use super::{AreaUnit, Point2};

/// Attempts allowed per requested point before rejection sampling gives up.
const REJECTION_CAP_FACTOR: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleTrace {
    /// Points accepted by bounding-box rejection.
    pub rejection_accepted: usize,
    /// Points drawn from the triangle decomposition after the cap was hit.
    pub fallback_drawn: usize,
}

/// `q` i.i.d. uniform points on the unit.
///
/// Rejection from the bounding box first; if acceptance stalls (more than
/// `100 q` attempts), the remainder comes from an exact triangle decomposition.
pub fn sample_uniform<R: Rng + ?Sized>(a: &AreaUnit, q: usize, rng: &mut R) -> Vec<Point2> {
    sample_uniform_traced(a, q, rng).0
}

pub fn sample_uniform_traced<R: Rng + ?Sized>(a: &AreaUnit, q: usize, rng: &mut R) -> (Vec<Point2>, SampleTrace) {
    let bb = a.bbox();
    let mut out = Vec::with_capacity(q);
    let cap = REJECTION_CAP_FACTOR * q;
    let mut attempts = 0;
    while out.len() < q && attempts < cap {
        attempts += 1;
        let p = Point2::new(
            bb.xmin + rng.random::<f64>() * bb.width(),
            bb.ymin + rng.random::<f64>() * bb.height(),
        );
        if a.contains(p) {
            out.push(p);
        }
    }
    let accepted = out.len();
    if accepted < q {
        let tris = Triangulation::new(a);
        out.extend((accepted..q).map(|_| tris.sample(rng)));
    }
    (
        out,
        SampleTrace {
            rejection_accepted: accepted,
            fallback_drawn: q - accepted,
        },
    )
}

/// Decomposition of a unit into triangles via vertical slabs.
///
/// Between consecutive vertex x-coordinates no edges cross, so the unit's
/// cross-section is a set of trapezoids paired by the even-odd rule; each
/// trapezoid splits into two triangles. Holes and multiple parts need no
/// special handling.
pub(crate) struct Triangulation {
    triangles: Vec<[Point2; 3]>,
    picker: Option<WeightedIndex<f64>>,
}

impl Triangulation {
    pub(crate) fn new(a: &AreaUnit) -> Self {
        let edges: Vec<(Point2, Point2)> = a.edges().filter(|(p, q)| p.x != q.x).collect();
        let mut xs: Vec<f64> = a.rings().flat_map(|r| r.iter().map(|p| p.x)).collect();
        xs.sort_by(|a, b| a.total_cmp(b));
        xs.dedup();

        let mut triangles = Vec::new();
        let mut weights = Vec::new();
        let mut crossing: Vec<(f64, f64, f64)> = Vec::new();
        for w in xs.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            let xm = 0.5 * (x0 + x1);
            crossing.clear();
            for &(p, q) in &edges {
                let (lo, hi) = if p.x < q.x { (p, q) } else { (q, p) };
                if lo.x < xm && xm < hi.x {
                    let y_at = |x: f64| lo.y + (x - lo.x) * (hi.y - lo.y) / (hi.x - lo.x);
                    crossing.push((y_at(xm), y_at(x0), y_at(x1)));
                }
            }
            crossing.sort_by(|a, b| a.0.total_cmp(&b.0));
            for pair in crossing.chunks_exact(2) {
                let (lo, hi) = (pair[0], pair[1]);
                let bl = Point2::new(x0, lo.1);
                let br = Point2::new(x1, lo.2);
                let tr = Point2::new(x1, hi.2);
                let tl = Point2::new(x0, hi.1);
                for tri in [[bl, br, tr], [bl, tr, tl]] {
                    let area = 0.5 * tri[1].sub(tri[0]).cross(tri[2].sub(tri[0])).abs();
                    if area > 0.0 {
                        triangles.push(tri);
                        weights.push(area);
                    }
                }
            }
        }
        let picker = WeightedIndex::new(&weights).ok();
        Triangulation { triangles, picker }
    }

    #[cfg(test)]
    pub(crate) fn total_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| 0.5 * t[1].sub(t[0]).cross(t[2].sub(t[0])).abs())
            .sum()
    }

    pub(crate) fn largest_triangle_centroid(&self) -> Point2 {
        let area = |t: &[Point2; 3]| t[1].sub(t[0]).cross(t[2].sub(t[0])).abs();
        let [a, b, c] = *self
            .triangles
            .iter()
            .max_by(|s, t| area(s).total_cmp(&area(t)))
            .expect("a valid unit has at least one triangle");
        Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2 {
        let picker = self
            .picker
            .as_ref()
            .expect("a valid unit has positive area and at least one triangle");
        let [a, b, c] = self.triangles[picker.sample(rng)];
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        Point2::new(
            a.x + u * (b.x - a.x) + v * (c.x - a.x),
            a.y + u * (b.y - a.y) + v * (c.y - a.y),
        )
    }
}
