//! Planar polygon geometry for areal units.
//!
//! Coordinates are assumed to be projected, in meters. Rings are stored
//! closed (first vertex repeated at the end) with shells counter-clockwise
//! and holes clockwise, so the interior is always to the left of an edge.

mod adjacency;
mod clip;
mod geojson;
mod sample;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SparseMatrix;

pub use adjacency::{adjacency_matrix, AdjacencyRule, TOUCH_TOLERANCE};
pub use clip::intersection_area;
pub use geojson::{read_geojson, read_geojson_with_key, write_geojson_with_properties};
pub use sample::{sample_uniform, sample_uniform_traced, SampleTrace};

#[derive(Error, Debug)]
pub enum GeomError {
    #[error("invalid geometry for unit '{id}': {reason}")]
    InvalidGeometry { id: String, reason: String },

    #[error("unit '{0}' has zero total overlap with the other domain")]
    ZeroOverlap(String),

    #[error("duplicate unit id '{0}' in domain")]
    DuplicateId(String),

    #[error("GeoJSON feature {feature}: {reason}")]
    Parse { feature: usize, reason: String },

    #[error("GeoJSON: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeomError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist2(self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub(crate) fn sub(self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    pub(crate) fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub(crate) fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub(crate) fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new(self.x + t * (other.x - self.x), self.y + t * (other.y - self.y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BoundingBox {
    pub fn empty() -> Self {
        BoundingBox {
            xmin: f64::INFINITY,
            ymin: f64::INFINITY,
            xmax: f64::NEG_INFINITY,
            ymax: f64::NEG_INFINITY,
        }
    }

    pub fn of_points<'a>(pts: impl IntoIterator<Item = &'a Point2>) -> Self {
        let mut bb = Self::empty();
        for p in pts {
            bb.extend(*p);
        }
        bb
    }

    pub fn extend(&mut self, p: Point2) {
        self.xmin = self.xmin.min(p.x);
        self.ymin = self.ymin.min(p.y);
        self.xmax = self.xmax.max(p.x);
        self.ymax = self.ymax.max(p.y);
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            xmin: self.xmin.min(other.xmin),
            ymin: self.ymin.min(other.ymin),
            xmax: self.xmax.max(other.xmax),
            ymax: self.ymax.max(other.ymax),
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2 {
        Point2::new(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    /// True when the boxes overlap or lie within `tol` of each other.
    pub fn intersects(&self, other: &BoundingBox, tol: f64) -> bool {
        self.xmin <= other.xmax + tol
            && other.xmin <= self.xmax + tol
            && self.ymin <= other.ymax + tol
            && other.ymin <= self.ymax + tol
    }

    /// Euclidean distance from `p` to the box (zero inside).
    pub fn distance_to(&self, p: Point2) -> f64 {
        let dx = (self.xmin - p.x).max(0.0).max(p.x - self.xmax);
        let dy = (self.ymin - p.y).max(0.0).max(p.y - self.ymax);
        dx.hypot(dy)
    }
}

/// One outer ring and the holes it owns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub shell: Vec<Point2>,
    pub holes: Vec<Vec<Point2>>,
}

/// An identified areal unit: one or more polygons, possibly with holes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaUnit {
    id: String,
    polygons: Vec<Polygon>,
    bbox: BoundingBox,
    area: f64,
}

/// Twice the signed area of a closed ring (positive when counter-clockwise).
pub(crate) fn ring_signed_area2(ring: &[Point2]) -> f64 {
    if ring.len() < 2 {
        return 0.0;
    }
    let origin = ring[0];
    ring.windows(2)
        .map(|w| w[0].sub(origin).cross(w[1].sub(origin)))
        .sum()
}

fn normalize_ring(id: &str, mut ring: Vec<Point2>, ccw: bool) -> Result<Vec<Point2>> {
    let invalid = |reason: String| GeomError::InvalidGeometry {
        id: id.to_string(),
        reason,
    };
    if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(invalid("non-finite coordinate".into()));
    }
    if ring.len() < 4 {
        return Err(invalid(format!(
            "ring has {} vertices, at least 4 required",
            ring.len()
        )));
    }
    if ring.first() != ring.last() {
        return Err(invalid("ring is not closed".into()));
    }
    let a2 = ring_signed_area2(&ring);
    if a2 == 0.0 {
        return Err(invalid("degenerate ring with zero area".into()));
    }
    if (a2 > 0.0) != ccw {
        ring.reverse();
    }
    Ok(ring)
}

impl AreaUnit {
    /// Builds a unit, normalizing ring orientation (shells CCW, holes CW).
    pub fn new(id: impl Into<String>, polygons: Vec<Polygon>) -> Result<Self> {
        let id = id.into();
        if polygons.is_empty() {
            return Err(GeomError::InvalidGeometry {
                id,
                reason: "no polygons".into(),
            });
        }
        let mut normalized = Vec::with_capacity(polygons.len());
        for poly in polygons {
            let shell = normalize_ring(&id, poly.shell, true)?;
            let holes = poly
                .holes
                .into_iter()
                .map(|h| normalize_ring(&id, h, false))
                .collect::<Result<Vec<_>>>()?;
            normalized.push(Polygon { shell, holes });
        }
        let bbox = BoundingBox::of_points(normalized.iter().flat_map(|p| p.shell.iter()));
        let area = 0.5
            * normalized
                .iter()
                .flat_map(|p| std::iter::once(&p.shell).chain(p.holes.iter()))
                .map(|r| ring_signed_area2(r))
                .sum::<f64>();
        if !(area > 0.0) {
            return Err(GeomError::InvalidGeometry {
                id,
                reason: format!("non-positive total area {area}"),
            });
        }
        Ok(AreaUnit {
            id,
            polygons: normalized,
            bbox,
            area,
        })
    }

    /// Axis-aligned rectangle; handy for gridded fixtures.
    pub fn rectangle(id: impl Into<String>, xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let shell = vec![
            Point2::new(xmin, ymin),
            Point2::new(xmax, ymin),
            Point2::new(xmax, ymax),
            Point2::new(xmin, ymax),
            Point2::new(xmin, ymin),
        ];
        Self::new(id, vec![Polygon { shell, holes: vec![] }])
    }

    /// Single polygon from an open or closed vertex list.
    pub fn from_vertices(id: impl Into<String>, vertices: &[Point2]) -> Result<Self> {
        let mut shell = vertices.to_vec();
        if shell.first() != shell.last() {
            if let Some(&first) = shell.first() {
                shell.push(first);
            }
        }
        Self::new(id, vec![Polygon { shell, holes: vec![] }])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    /// All rings (shells and holes) of the unit.
    pub fn rings(&self) -> impl Iterator<Item = &[Point2]> {
        self.polygons
            .iter()
            .flat_map(|p| std::iter::once(p.shell.as_slice()).chain(p.holes.iter().map(|h| h.as_slice())))
    }

    /// All directed edges; the unit's interior lies to the left of each.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.rings().flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }

    /// Even-odd point-in-polygon test over every ring, so holes are respected.
    pub fn contains(&self, p: Point2) -> bool {
        if p.x < self.bbox.xmin || p.x > self.bbox.xmax || p.y < self.bbox.ymin || p.y > self.bbox.ymax {
            return false;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Area-weighted centroid.
    pub fn centroid(&self) -> Point2 {
        let o = self.bbox.center();
        let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
        for ring in self.rings() {
            for w in ring.windows(2) {
                let (p, q) = (w[0].sub(o), w[1].sub(o));
                let c = p.cross(q);
                cx += (p.x + q.x) * c;
                cy += (p.y + q.y) * c;
                a2 += c;
            }
        }
        Point2::new(o.x + cx / (3.0 * a2), o.y + cy / (3.0 * a2))
    }

    /// The centroid when it lies inside, else the centroid of the largest
    /// triangle in the unit's slab decomposition.
    pub fn interior_point(&self) -> Point2 {
        let c = self.centroid();
        if self.contains(c) {
            return c;
        }
        sample::Triangulation::new(self).largest_triangle_centroid()
    }
}

/// Shoelace area of the shells minus holes.
pub fn area(a: &AreaUnit) -> f64 {
    a.area
}

/// An ordered collection of uniquely identified areal units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    label: String,
    units: Vec<AreaUnit>,
}

impl Domain {
    pub fn new(label: impl Into<String>, units: Vec<AreaUnit>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(units.len());
        for u in &units {
            if !seen.insert(u.id.as_str()) {
                return Err(GeomError::DuplicateId(u.id.clone()));
            }
        }
        Ok(Domain {
            label: label.into(),
            units,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn units(&self) -> &[AreaUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.units.iter().map(|u| u.id()).collect()
    }

    pub fn bbox(&self) -> BoundingBox {
        self.units
            .iter()
            .fold(BoundingBox::empty(), |acc, u| acc.union(u.bbox()))
    }

    pub fn total_area(&self) -> f64 {
        self.units.iter().map(|u| u.area).sum()
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.units.iter().any(|u| u.contains(p))
    }

    /// Keeps the units whose index satisfies `keep`, preserving order.
    pub fn retain_indices(&self, keep: impl Fn(usize) -> bool) -> Domain {
        Domain {
            label: self.label.clone(),
            units: self
                .units
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, u)| u.clone())
                .collect(),
        }
    }

    /// `cols × rows` grid of rectangular cells with ids `"{prefix}{row}_{col}"`.
    pub fn grid(
        label: &str,
        prefix: &str,
        origin: Point2,
        cell_w: f64,
        cell_h: f64,
        cols: usize,
        rows: usize,
    ) -> Result<Domain> {
        let mut units = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let x0 = origin.x + c as f64 * cell_w;
                let y0 = origin.y + r as f64 * cell_h;
                units.push(AreaUnit::rectangle(
                    format!("{prefix}{r}_{c}"),
                    x0,
                    y0,
                    x0 + cell_w,
                    y0 + cell_h,
                )?);
            }
        }
        Domain::new(label, units)
    }
}

/// Overlap areas between every unit of `dom1` (rows) and `dom2` (columns).
///
/// With `proportion`, row `i` is divided by `|A_i|`; a row with no overlap at
/// all is an error since it cannot be expressed through `dom2`.
pub fn overlap_matrix(dom1: &Domain, dom2: &Domain, proportion: bool) -> Result<SparseMatrix> {
    let rows: Vec<Vec<(usize, f64)>> = dom1
        .units
        .par_iter()
        .map(|a| {
            let mut row = Vec::new();
            for (j, b) in dom2.units.iter().enumerate() {
                if !a.bbox.intersects(&b.bbox, 0.0) {
                    continue;
                }
                let v = intersection_area(a, b)?;
                if v > 0.0 {
                    row.push((j, v));
                }
            }
            if proportion {
                let total: f64 = row.iter().map(|(_, v)| v).sum();
                if total <= 0.0 {
                    return Err(GeomError::ZeroOverlap(a.id.clone()));
                }
                for (_, v) in row.iter_mut() {
                    *v /= a.area;
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(SparseMatrix::from_rows(dom1.len(), dom2.len(), rows))
}
