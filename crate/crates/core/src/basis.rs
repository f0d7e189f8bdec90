//! Local bisquare basis functions and knot design.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{area, sample_uniform, AreaUnit, Domain, Point2};
use crate::linalg::{pairwise_distances, pairwise_distances_1d, quantile_type1, DenseMatrix};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BasisError {
    #[error("invalid knots: {0}")]
    InvalidKnots(String),

    #[error("invalid period: {0}")]
    InvalidPeriod(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all points coincide; no nonzero pairwise distance")]
    NoNonzeroDistances,
}

pub type Result<T> = std::result::Result<T, BasisError>;

fn check_radius(name: &str, w: f64) -> Result<()> {
    if w > 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(BasisError::InvalidKnots(format!("{name} must be positive and finite, got {w}")))
    }
}

/// Spatial centers sharing one radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialKnots {
    pub centers: Vec<Point2>,
    pub w: f64,
}

impl SpatialKnots {
    pub fn new(centers: Vec<Point2>, w: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(BasisError::InvalidKnots("no spatial knots".into()));
        }
        check_radius("w", w)?;
        Ok(SpatialKnots { centers, w })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Space-time knots `(c_j, g_j)` with spatial radius `ws` and temporal radius `wt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeKnots {
    pub knots: Vec<(Point2, f64)>,
    pub ws: f64,
    pub wt: f64,
}

impl SpaceTimeKnots {
    pub fn new(knots: Vec<(Point2, f64)>, ws: f64, wt: f64) -> Result<Self> {
        if knots.is_empty() {
            return Err(BasisError::InvalidKnots("no knots".into()));
        }
        check_radius("ws", ws)?;
        check_radius("wt", wt)?;
        Ok(SpaceTimeKnots { knots, ws, wt })
    }

    /// All pairs, temporal-major: every spatial knot for `g_1`, then `g_2`, ...
    pub fn cartesian(spatial: &[Point2], temporal: &[f64], ws: f64, wt: f64) -> Result<Self> {
        if spatial.is_empty() || temporal.is_empty() {
            return Err(BasisError::InvalidKnots("spatial and temporal knot sets must be nonempty".into()));
        }
        let knots = temporal
            .iter()
            .flat_map(|&g| spatial.iter().map(move |&c| (c, g)))
            .collect();
        Self::new(knots, ws, wt)
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub mc_reps: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig { mc_reps: 500 }
    }
}

/// Consecutive years pooled into one estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Period {
    years: Vec<f64>,
}

impl Period {
    pub fn new(years: Vec<f64>) -> Result<Self> {
        if years.is_empty() {
            return Err(BasisError::InvalidPeriod("no years".into()));
        }
        if years.iter().any(|y| !y.is_finite()) {
            return Err(BasisError::InvalidPeriod("non-finite year".into()));
        }
        if years.windows(2).any(|w| w[1] - w[0] != 1.0) {
            return Err(BasisError::InvalidPeriod(format!("years {years:?} are not consecutive")));
        }
        Ok(Period { years })
    }

    /// The `lookback` years ending at `year`.
    pub fn ending(year: i32, lookback: u32) -> Result<Self> {
        if lookback == 0 {
            return Err(BasisError::InvalidPeriod("lookback must be at least 1".into()));
        }
        let start = year - lookback as i32 + 1;
        Self::new((start..=year).map(f64::from).collect())
    }

    pub fn years(&self) -> &[f64] {
        &self.years
    }

    pub fn lookback(&self) -> usize {
        self.years.len()
    }
}

#[inline]
fn psi(d2_scaled: f64, dt: f64, wt: f64) -> f64 {
    // d2_scaled = ‖u − c‖² / w_s²
    if d2_scaled > 1.0 || dt.abs() > wt {
        return 0.0;
    }
    let b = 2.0 - d2_scaled - (dt * dt) / (wt * wt);
    b * b
}

#[inline]
fn phi(d2_scaled: f64) -> f64 {
    if d2_scaled > 1.0 {
        return 0.0;
    }
    let b = 1.0 - d2_scaled;
    b * b
}

/// Point-level space-time bisquare, `#points × r`.
pub fn spacetime_bisquare(points: &[(Point2, f64)], knots: &SpaceTimeKnots) -> DenseMatrix {
    let ws2 = knots.ws * knots.ws;
    DenseMatrix::from_fn(points.len(), knots.len(), |i, j| {
        let (u, v) = points[i];
        let (c, g) = knots.knots[j];
        psi(u.dist2(c) / ws2, v - g, knots.wt)
    })
}

/// Point-level space-only bisquare, `#points × |centers|`.
pub fn spatial_bisquare(points: &[Point2], knots: &SpatialKnots) -> DenseMatrix {
    let w2 = knots.w * knots.w;
    DenseMatrix::from_fn(points.len(), knots.len(), |i, j| phi(points[i].dist2(knots.centers[j]) / w2))
}

/// Independent stream for area `index` under `master`.
fn area_rng(master: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64);
    rng
}

fn check_cfg(cfg: &BasisConfig) -> Result<()> {
    if cfg.mc_reps == 0 {
        return Err(BasisError::InvalidArgument("mc_reps must be at least 1".into()));
    }
    Ok(())
}

fn areal_spacetime_row(unit: &AreaUnit, years: &[f64], knots: &SpaceTimeKnots, q: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let ws2 = knots.ws * knots.ws;
    let bb = unit.bbox();
    let active: Vec<usize> = (0..knots.len())
        .filter(|&j| {
            let (c, g) = knots.knots[j];
            bb.distance_to(c) <= knots.ws && years.iter().any(|&v| (v - g).abs() <= knots.wt)
        })
        .collect();
    let mut row = vec![0.0; knots.len()];
    if active.is_empty() {
        return row;
    }
    let pts = sample_uniform(unit, q, rng);
    let denom = (q * years.len()) as f64;
    for &j in &active {
        let (c, g) = knots.knots[j];
        let mut acc = 0.0;
        for u in &pts {
            let d2 = u.dist2(c) / ws2;
            if d2 > 1.0 {
                continue;
            }
            for &v in years {
                acc += psi(d2, v - g, knots.wt);
            }
        }
        row[j] = acc / denom;
    }
    row
}

/// Monte Carlo areal space-time basis, `|dom| × r`.
///
/// Each area draws `mc_reps` points once, shared by every knot and year. The
/// per-area streams derive from one master seed taken from `rng`, so the
/// result does not depend on thread count.
pub fn areal_spacetime_bisquare<R: Rng + ?Sized>(
    dom: &Domain,
    period: &Period,
    knots: &SpaceTimeKnots,
    cfg: &BasisConfig,
    rng: &mut R,
) -> Result<DenseMatrix> {
    check_cfg(cfg)?;
    let master: u64 = rng.random();
    let rows: Vec<Vec<f64>> = dom
        .units()
        .par_iter()
        .enumerate()
        .map(|(i, unit)| areal_spacetime_row(unit, period.years(), knots, cfg.mc_reps, &mut area_rng(master, i)))
        .collect();
    Ok(DenseMatrix::from_fn(dom.len(), knots.len(), |i, j| rows[i][j]))
}

/// Monte Carlo areal space-only basis, `|dom| × |centers|`.
pub fn areal_spatial_bisquare<R: Rng + ?Sized>(
    dom: &Domain,
    knots: &SpatialKnots,
    cfg: &BasisConfig,
    rng: &mut R,
) -> Result<DenseMatrix> {
    check_cfg(cfg)?;
    let master: u64 = rng.random();
    let w2 = knots.w * knots.w;
    let rows: Vec<Vec<f64>> = dom
        .units()
        .par_iter()
        .enumerate()
        .map(|(i, unit)| {
            let bb = unit.bbox();
            let active: Vec<usize> = (0..knots.len())
                .filter(|&j| bb.distance_to(knots.centers[j]) <= knots.w)
                .collect();
            let mut row = vec![0.0; knots.len()];
            if active.is_empty() {
                return row;
            }
            let pts = sample_uniform(unit, cfg.mc_reps, &mut area_rng(master, i));
            for &j in &active {
                let s: f64 = pts.iter().map(|u| phi(u.dist2(knots.centers[j]) / w2)).sum();
                row[j] = s / cfg.mc_reps as f64;
            }
            row
        })
        .collect();
    Ok(DenseMatrix::from_fn(dom.len(), knots.len(), |i, j| rows[i][j]))
}

/// `n` points uniform over the union of the domain's units.
pub fn sample_domain<R: Rng + ?Sized>(dom: &Domain, n: usize, rng: &mut R) -> Vec<Point2> {
    let weights: Vec<f64> = dom.units().iter().map(area).collect();
    let picker = WeightedIndex::new(&weights).expect("domain units have positive area");
    let mut counts = vec![0usize; dom.len()];
    for _ in 0..n {
        counts[picker.sample(rng)] += 1;
    }
    let mut out = Vec::with_capacity(n);
    for (unit, &k) in dom.units().iter().zip(&counts) {
        if k > 0 {
            out.extend(sample_uniform(unit, k, rng));
        }
    }
    out
}

/// Sum over candidates of the distance to the nearest design point.
pub fn coverage_criterion(candidates: &[Point2], design: &[usize]) -> f64 {
    candidates
        .iter()
        .map(|x| {
            design
                .iter()
                .map(|&d| x.dist(candidates[d]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

const MAX_EXCHANGE_PASSES: usize = 100;

/// Swap design points for candidates while the coverage criterion drops.
pub fn exchange_improve(candidates: &[Point2], mut design: Vec<usize>) -> Vec<usize> {
    let n = candidates.len();
    if design.is_empty() || design.len() == n {
        return design;
    }
    let dist = |a: usize, b: usize| candidates[a].dist(candidates[b]);
    // nearest and second-nearest design slot per candidate
    let caches = |design: &[usize]| -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut near = vec![0; n];
        let mut d1 = vec![f64::INFINITY; n];
        let mut d2 = vec![f64::INFINITY; n];
        for x in 0..n {
            for (slot, &d) in design.iter().enumerate() {
                let dd = dist(x, d);
                if dd < d1[x] {
                    d2[x] = d1[x];
                    d1[x] = dd;
                    near[x] = slot;
                } else if dd < d2[x] {
                    d2[x] = dd;
                }
            }
        }
        (near, d1, d2)
    };

    let mut in_design = vec![false; n];
    for &d in &design {
        in_design[d] = true;
    }
    let (mut near, mut d1, mut d2) = caches(&design);
    let mut current: f64 = d1.iter().sum();
    for _ in 0..MAX_EXCHANGE_PASSES {
        let mut improved = false;
        for slot in 0..design.len() {
            let mut best = (current, usize::MAX);
            for c in 0..n {
                if in_design[c] {
                    continue;
                }
                let mut total = 0.0;
                for x in 0..n {
                    let keep = if near[x] == slot { d2[x] } else { d1[x] };
                    total += keep.min(dist(x, c));
                    if total >= best.0 {
                        break;
                    }
                }
                if total < best.0 {
                    best = (total, c);
                }
            }
            // relative guard keeps round-off from cycling swaps
            if best.1 != usize::MAX && best.0 < current * (1.0 - 1e-12) {
                in_design[design[slot]] = false;
                in_design[best.1] = true;
                design[slot] = best.1;
                (near, d1, d2) = caches(&design);
                current = d1.iter().sum();
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    design
}

/// Indices of `n_design` candidates: farthest-point start, then exchange.
pub fn select_space_filling(candidates: &[Point2], n_design: usize) -> Result<Vec<usize>> {
    let n = candidates.len();
    if n_design > n {
        return Err(BasisError::InvalidArgument(format!(
            "n_design = {n_design} exceeds n_candidates = {n}"
        )));
    }
    if n_design == n {
        return Ok((0..n).collect());
    }
    if n_design == 0 {
        return Ok(Vec::new());
    }
    let cx = candidates.iter().map(|p| p.x).sum::<f64>() / n as f64;
    let cy = candidates.iter().map(|p| p.y).sum::<f64>() / n as f64;
    let mean = Point2::new(cx, cy);
    let first = (0..n)
        .min_by(|&a, &b| candidates[a].dist2(mean).total_cmp(&candidates[b].dist2(mean)))
        .expect("nonempty candidates");
    let mut design = vec![first];
    let mut nearest: Vec<f64> = candidates.iter().map(|p| p.dist(candidates[first])).collect();
    while design.len() < n_design {
        let next = (0..n)
            .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]))
            .expect("nonempty candidates");
        design.push(next);
        for (x, d) in nearest.iter_mut().enumerate() {
            *d = d.min(candidates[x].dist(candidates[next]));
        }
    }
    Ok(exchange_improve(candidates, design))
}

/// Space-filling spatial knots chosen from a uniform candidate sample.
pub fn knots_space_filling<R: Rng + ?Sized>(
    dom: &Domain,
    n_candidates: usize,
    n_design: usize,
    rng: &mut R,
) -> Result<Vec<Point2>> {
    if n_design > n_candidates {
        return Err(BasisError::InvalidArgument(format!(
            "n_design = {n_design} exceeds n_candidates = {n_candidates}"
        )));
    }
    let candidates = sample_domain(dom, n_candidates, rng);
    let idx = select_space_filling(&candidates, n_design)?;
    Ok(idx.into_iter().map(|i| candidates[i]).collect())
}

/// Hexagonal lattice points inside the domain, roughly `n_target` of them.
///
/// Pitch `p = sqrt(2|D| / (√3 n))`. A few lattice phase offsets are tried and
/// the one whose count is closest to `n_target` kept.
pub fn knots_hexagonal(dom: &Domain, n_target: usize) -> Vec<Point2> {
    let n_target = n_target.max(1);
    let total = dom.total_area();
    let pitch = (2.0 * total / (3f64.sqrt() * n_target as f64)).sqrt();
    let row_h = pitch * 3f64.sqrt() / 2.0;
    let bb = dom.bbox();

    let lattice = |fx: f64, fy: f64| -> Vec<Point2> {
        let mut pts = Vec::new();
        let mut k = 0usize;
        loop {
            let y = bb.ymin + (fy + k as f64) * row_h;
            if y > bb.ymax {
                break;
            }
            let shift = if k % 2 == 1 { 0.5 } else { 0.0 };
            let mut j = 0usize;
            loop {
                let x = bb.xmin + (fx + shift + j as f64) * pitch;
                if x > bb.xmax {
                    break;
                }
                let p = Point2::new(x, y);
                if dom.contains(p) {
                    pts.push(p);
                }
                j += 1;
            }
            k += 1;
        }
        pts
    };

    let phases = [0.5, 0.25, 0.75, 0.0];
    let mut best: Vec<Point2> = Vec::new();
    let mut best_gap = usize::MAX;
    for &fy in &phases {
        for &fx in &phases {
            let pts = lattice(fx, fy);
            let gap = pts.len().abs_diff(n_target);
            if !pts.is_empty() && gap < best_gap {
                best_gap = gap;
                best = pts;
            }
        }
    }
    if best.is_empty() {
        let largest = dom
            .units()
            .iter()
            .max_by(|a, b| area(a).total_cmp(&area(b)))
            .expect("domain is nonempty");
        best.push(largest.interior_point());
    }
    best
}

fn radius_from_distances(dists: Vec<f64>, scale: f64, prob: f64) -> Result<f64> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(BasisError::InvalidArgument(format!("scale must be nonnegative, got {scale}")));
    }
    let nonzero: Vec<f64> = dists.into_iter().filter(|&d| d > 0.0).collect();
    if nonzero.is_empty() {
        return Err(BasisError::NoNonzeroDistances);
    }
    let q = quantile_type1(&nonzero, prob).map_err(|e| BasisError::InvalidArgument(e.to_string()))?;
    Ok(scale * q)
}

/// `scale · Q_prob` of the nonzero pairwise distances between spatial knots.
pub fn radius_from_quantile(points: &[Point2], scale: f64, prob: f64) -> Result<f64> {
    radius_from_distances(pairwise_distances(points), scale, prob)
}

/// As [`radius_from_quantile`] for a one-dimensional (temporal) knot set.
pub fn radius_from_quantile_1d(values: &[f64], scale: f64, prob: f64) -> Result<f64> {
    radius_from_distances(pairwise_distances_1d(values), scale, prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_square_domain() -> Domain {
        Domain::new("sq", vec![AreaUnit::rectangle("sq", 0.0, 0.0, 1.0, 1.0).unwrap()]).unwrap()
    }

    fn one_knot(c: Point2, g: f64, ws: f64, wt: f64) -> SpaceTimeKnots {
        SpaceTimeKnots::new(vec![(c, g)], ws, wt).unwrap()
    }

    /// Midpoint rule on a `m × m` grid over the unit square.
    fn quadrature<F: Fn(Point2) -> f64>(m: usize, f: F) -> f64 {
        let h = 1.0 / m as f64;
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                s += f(Point2::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h));
            }
        }
        s * h * h
    }

    #[test]
    fn spacetime_point_examples() {
        let k = one_knot(Point2::new(0.0, 0.0), 2010.0, 2.0, 1.0);
        let pts = [
            (Point2::new(0.0, 0.0), 2010.0),
            (Point2::new(2.0, 0.0), 2010.0),
            (Point2::new(2.0 + 1e-9, 0.0), 2010.0),
        ];
        let s = spacetime_bisquare(&pts, &k);
        assert_eq!(s[(0, 0)], 4.0);
        assert_eq!(s[(1, 0)], 1.0);
        assert_eq!(s[(2, 0)], 0.0);
    }

    #[test]
    fn spatial_point_examples() {
        let k = SpatialKnots::new(vec![Point2::new(0.0, 0.0)], 2.0).unwrap();
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2f64.sqrt(), 0.0),
        ];
        let s = spatial_bisquare(&pts, &k);
        assert_eq!(s[(0, 0)], 1.0);
        assert_eq!(s[(1, 0)], 0.0);
        assert_relative_eq!(s[(2, 0)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn cartesian_is_temporal_major() {
        let sp = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
        let k = SpaceTimeKnots::cartesian(&sp, &[1.0, 2.0, 3.0], 1.0, 1.0).unwrap();
        assert_eq!(k.len(), 6);
        assert_eq!(k.knots[1], (sp[1], 1.0));
        assert_eq!(k.knots[2], (sp[0], 2.0));
        let one = SpaceTimeKnots::cartesian(&sp[..1], &[5.0], 1.0, 1.0).unwrap();
        assert_eq!(one.knots, vec![(sp[0], 5.0)]);
        let big: Vec<Point2> = (0..200).map(|i| Point2::new(i as f64, 0.0)).collect();
        let years: Vec<f64> = (0..17).map(|i| 2009.0 + 0.5 * i as f64).collect();
        assert_eq!(SpaceTimeKnots::cartesian(&big, &years, 1.0, 1.0).unwrap().len(), 3400);
    }

    #[test]
    fn period_rules() {
        assert_eq!(Period::ending(2015, 5).unwrap().years(), &[2011.0, 2012.0, 2013.0, 2014.0, 2015.0]);
        assert!(Period::new(vec![2010.0, 2012.0]).is_err());
        assert!(Period::new(vec![]).is_err());
        assert!(Period::ending(2015, 0).is_err());
    }

    #[test]
    fn remote_knot_gives_zero_row() {
        let dom = unit_square_domain();
        let k = one_knot(Point2::new(10.0, 10.0), 2015.0, 1.0, 1.0);
        let p = Period::ending(2015, 1).unwrap();
        let s = areal_spacetime_bisquare(&dom, &p, &k, &BasisConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s[(0, 0)], 0.0);
        let sk = SpatialKnots::new(vec![Point2::new(10.0, 10.0)], 1.0).unwrap();
        let s = areal_spatial_bisquare(&dom, &sk, &BasisConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s[(0, 0)], 0.0);
    }

    #[test]
    fn spatially_flat_integrand_is_time_average() {
        let dom = unit_square_domain();
        let ws = 1e9;
        let k = one_knot(Point2::new(0.5, 0.5), 2014.0, ws, 2.0);
        let p = Period::ending(2015, 3).unwrap();
        let s = areal_spacetime_bisquare(&dom, &p, &k, &BasisConfig { mc_reps: 50 }, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let expect: f64 = p
            .years()
            .iter()
            .map(|v| {
                let b = 2.0 - (v - 2014.0) * (v - 2014.0) / 4.0;
                b * b
            })
            .sum::<f64>()
            / 3.0;
        assert_relative_eq!(s[(0, 0)], expect, max_relative = 1e-12);

        let sk = SpatialKnots::new(vec![Point2::new(0.5, 0.5)], ws).unwrap();
        let s = areal_spatial_bisquare(&dom, &sk, &BasisConfig { mc_reps: 50 }, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_relative_eq!(s[(0, 0)], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn time_constant_integrand_matches_single_year() {
        // wt huge: every year of the period gives the same point value
        let dom = unit_square_domain();
        let k = one_knot(Point2::new(0.3, 0.6), 2015.0, 0.8, 1e9);
        let one = Period::ending(2015, 1).unwrap();
        let five = Period::ending(2015, 5).unwrap();
        let cfg = BasisConfig { mc_reps: 300 };
        let a = areal_spacetime_bisquare(&dom, &one, &k, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = areal_spacetime_bisquare(&dom, &five, &k, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_relative_eq!(a[(0, 0)], b[(0, 0)], max_relative = 1e-12);
    }

    #[test]
    fn tiny_area_converges_to_point_value() {
        let c = Point2::new(0.37, 0.21);
        let tiny = AreaUnit::rectangle("t", c.x - 0.5, c.y - 0.5, c.x + 0.5, c.y + 0.5).unwrap();
        let dom = Domain::new("t", vec![tiny]).unwrap();
        let k = one_knot(Point2::new(100.0, 50.0), 2016.0, 200.0, 1.0);
        let p = Period::ending(2015, 1).unwrap();
        let s = areal_spacetime_bisquare(&dom, &p, &k, &BasisConfig::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let point = spacetime_bisquare(&[(c, 2015.0)], &k)[(0, 0)];
        assert_relative_eq!(s[(0, 0)], point, max_relative = 1e-3);
    }

    #[test]
    fn mc_areal_basis_is_unbiased() {
        let dom = unit_square_domain();
        let k = one_knot(Point2::new(0.5, 0.5), 2015.0, 0.6, 1.0);
        let p = Period::ending(2015, 1).unwrap();
        let oracle = quadrature(256, |u| spacetime_bisquare(&[(u, 2015.0)], &k)[(0, 0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..50)
            .map(|_| areal_spacetime_bisquare(&dom, &p, &k, &BasisConfig { mc_reps: 200 }, &mut rng).unwrap()[(0, 0)])
            .collect();
        let (mean, sd) = crate::linalg::mean_sd(&vals);
        let se = sd / (vals.len() as f64).sqrt();
        assert!((mean - oracle).abs() <= 3.0 * se, "mean {mean} oracle {oracle} se {se}");
    }

    #[test]
    fn spatial_areal_matches_quadrature() {
        let dom = unit_square_domain();
        let sk = SpatialKnots::new(vec![Point2::new(0.5, 0.5)], 0.6).unwrap();
        let oracle = quadrature(256, |u| spatial_bisquare(&[u], &sk)[(0, 0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vals: Vec<f64> = (0..50)
            .map(|_| areal_spatial_bisquare(&dom, &sk, &BasisConfig { mc_reps: 200 }, &mut rng).unwrap()[(0, 0)])
            .collect();
        let (mean, sd) = crate::linalg::mean_sd(&vals);
        assert!((mean - oracle).abs() <= 3.0 * sd / (vals.len() as f64).sqrt());
    }

    #[test]
    fn areal_basis_is_seed_deterministic() {
        let dom = Domain::grid("g", "c", Point2::new(0.0, 0.0), 1.0, 1.0, 3, 3).unwrap();
        let k = SpaceTimeKnots::cartesian(&[Point2::new(1.0, 1.0), Point2::new(2.0, 2.0)], &[2014.0, 2015.0], 1.5, 1.0).unwrap();
        let p = Period::ending(2015, 3).unwrap();
        let cfg = BasisConfig { mc_reps: 100 };
        let a = areal_spacetime_bisquare(&dom, &p, &k, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| areal_spacetime_bisquare(&dom, &p, &k, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn space_filling_examples() {
        let dom = unit_square_domain();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let all = knots_space_filling(&dom, 10, 10, &mut rng).unwrap();
        assert_eq!(all.len(), 10);
        assert!(knots_space_filling(&dom, 5, 6, &mut rng).is_err());

        // a single design point should sit near the middle: the exchange
        // result must beat every corner-most candidate
        let cands = sample_domain(&dom, 200, &mut ChaCha8Rng::seed_from_u64(9));
        let one = select_space_filling(&cands, 1).unwrap();
        let crit = coverage_criterion(&cands, &one);
        for corner in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
            let c = Point2::new(corner.0, corner.1);
            let nearest = (0..cands.len())
                .min_by(|&a, &b| cands[a].dist2(c).total_cmp(&cands[b].dist2(c)))
                .unwrap();
            assert!(crit <= coverage_criterion(&cands, &[nearest]));
        }
        // and it is the best single candidate overall
        let best = (0..cands.len())
            .map(|i| coverage_criterion(&cands, &[i]))
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(crit, best, max_relative = 1e-12);
    }

    #[test]
    fn exchange_never_worsens_random_start() {
        let dom = unit_square_domain();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cands = sample_domain(&dom, 150, &mut rng);
        let start: Vec<usize> = rand::seq::index::sample(&mut rng, cands.len(), 8).into_vec();
        let before = coverage_criterion(&cands, &start);
        let after = coverage_criterion(&cands, &exchange_improve(&cands, start));
        assert!(after <= before);
    }

    #[test]
    fn hexagonal_examples() {
        let dom = Domain::new("sq", vec![AreaUnit::rectangle("sq", 0.0, 0.0, 100.0, 100.0).unwrap()]).unwrap();
        let four = knots_hexagonal(&dom, 4);
        assert!(four.iter().all(|p| dom.contains(*p)));
        let nn: Vec<f64> = four
            .iter()
            .map(|p| four.iter().filter(|q| *q != p).map(|q| p.dist(*q)).fold(f64::INFINITY, f64::min))
            .collect();
        let (m, sd) = crate::linalg::mean_sd(&nn);
        assert!(sd / m < 0.1, "cv {}", sd / m);

        let many = knots_hexagonal(&dom, 50);
        assert!((40..=60).contains(&many.len()), "count {}", many.len());
        assert!(many.iter().all(|p| dom.contains(*p)));

        let tiny = Domain::new("t", vec![AreaUnit::rectangle("t", 0.0, 0.0, 0.01, 0.01).unwrap()]).unwrap();
        let one = knots_hexagonal(&tiny, 1);
        assert_eq!(one.len(), 1);
        assert!(tiny.contains(one[0]));
    }

    #[test]
    fn radius_examples() {
        let line = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(2.0, 0.0)];
        assert_eq!(radius_from_quantile(&line, 1.0, 0.05).unwrap(), 1.0);
        assert_eq!(radius_from_quantile(&line, 2.0, 0.05).unwrap(), 2.0);
        assert_eq!(radius_from_quantile_1d(&[0.0, 1.0, 2.0], 1.0, 0.05).unwrap(), 1.0);
        let same = [Point2::new(1.0, 1.0); 3];
        assert_eq!(radius_from_quantile(&same, 1.0, 0.05).unwrap_err(), BasisError::NoNonzeroDistances);
    }

    proptest! {
        #[test]
        fn point_bases_bounded_and_compact(
            x in -3.0f64..3.0, y in -3.0f64..3.0, v in -3.0f64..3.0,
            ws in 0.1f64..2.0, wt in 0.1f64..2.0,
        ) {
            let k = one_knot(Point2::new(0.0, 0.0), 0.0, ws, wt);
            let u = Point2::new(x, y);
            let s = spacetime_bisquare(&[(u, v)], &k)[(0, 0)];
            prop_assert!((0.0..=4.0).contains(&s));
            if u.dist(Point2::new(0.0, 0.0)) > ws || v.abs() > wt {
                prop_assert_eq!(s, 0.0);
            }
            let sk = SpatialKnots::new(vec![Point2::new(0.0, 0.0)], ws).unwrap();
            let f = spatial_bisquare(&[u], &sk)[(0, 0)];
            prop_assert!((0.0..=1.0).contains(&f));
            if u.dist(Point2::new(0.0, 0.0)) > ws {
                prop_assert_eq!(f, 0.0);
            }
        }

        #[test]
        fn spatial_basis_continuous_at_support_edge(ws in 0.1f64..10.0) {
            let sk = SpatialKnots::new(vec![Point2::new(0.0, 0.0)], ws).unwrap();
            let inside = spatial_bisquare(&[Point2::new(ws * (1.0 - 1e-9), 0.0)], &sk)[(0, 0)];
            prop_assert!(inside < 1e-15);
        }
    }
}
