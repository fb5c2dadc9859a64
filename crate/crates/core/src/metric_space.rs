//! Weighted Euclidean metrics, point clouds, exact covering and packing
//! numbers, and bi-Lipschitz lifting maps.
//!
//! Covering uses the inclusive radius (`d <= eps`); packing uses the strict
//! separation (`d > eps`). The exact counts enumerate subsets and are only
//! offered for clouds of at most [`MAX_EXACT_POINTS`] points; larger clouds
//! go through [`greedy_cover`].

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Largest cloud accepted by the exhaustive covering/packing searches.
pub const MAX_EXACT_POINTS: usize = 22;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite coordinate at position {0}")]
    NonFinite(usize),
    #[error("metric weights must be nonnegative with at least one positive entry")]
    InvalidWeights,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("cloud has {0} points; exact search is capped at {MAX_EXACT_POINTS}, use greedy_cover")]
    TooLarge(usize),
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("lift target dimension {target} is smaller than source dimension {source_dim}")]
    TargetTooSmall { source_dim: usize, target: usize },
    #[error("lift scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("all point pairs coincide; bi-Lipschitz ratio undefined")]
    AllCoincident,
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for GeometryError {
    fn from(e: csv::Error) -> Self {
        GeometryError::Csv(e.to_string())
    }
}

/// A finite real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self, GeometryError> {
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        Ok(Point(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Point(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Per-coordinate weights of `d(x, y) = sqrt(sum_i w_i (x_i - y_i)^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    weights: Vec<f64>,
}

impl MetricSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self, GeometryError> {
        let valid = weights.iter().all(|w| w.is_finite() && *w >= 0.0)
            && weights.iter().any(|w| *w > 0.0);
        if !valid {
            return Err(GeometryError::InvalidWeights);
        }
        Ok(MetricSpec { weights })
    }

    /// Unit weights: plain Euclidean distance.
    pub fn euclidean(dim: usize) -> Self {
        MetricSpec {
            weights: vec![1.0; dim],
        }
    }

    /// Weight `state_weight` on the first `state_dim` coordinates and
    /// `action_weight` on the trailing `action_dim` ones.
    pub fn state_action(
        state_dim: usize,
        state_weight: f64,
        action_dim: usize,
        action_weight: f64,
    ) -> Result<Self, GeometryError> {
        let mut w = vec![state_weight; state_dim];
        w.extend(std::iter::repeat_n(action_weight, action_dim));
        Self::new(w)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn distance(&self, x: &Point, y: &Point) -> Result<f64, GeometryError> {
        self.check(x.coords())?;
        self.check(y.coords())?;
        Ok(self.sq_dist(x.coords(), y.coords()).sqrt())
    }

    pub(crate) fn check(&self, x: &[f64]) -> Result<(), GeometryError> {
        if x.len() != self.weights.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Squared weighted distance on raw slices. Lengths are not checked.
    #[inline]
    pub fn sq_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((w, a), b) in self.weights.iter().zip(x).zip(y) {
            let d = a - b;
            acc += w * d * d;
        }
        acc
    }

    #[inline]
    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        self.sq_dist(x, y).sqrt()
    }
}

/// A finite set of points under one metric, with its realized diameter.
#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<Point>,
    metric: MetricSpec,
    diameter: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, metric: MetricSpec) -> Result<Self, GeometryError> {
        for p in &points {
            metric.check(p.coords())?;
        }
        let mut diameter: f64 = 0.0;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                diameter = diameter.max(metric.dist(points[i].coords(), points[j].coords()));
            }
        }
        Ok(PointCloud {
            points,
            metric,
            diameter,
        })
    }

    pub fn euclidean(points: Vec<Point>) -> Result<Self, GeometryError> {
        let dim = points.first().map_or(1, Point::dim);
        Self::new(points, MetricSpec::euclidean(dim))
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn metric(&self) -> &MetricSpec {
        &self.metric
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn pair_dist(&self, i: usize, j: usize) -> f64 {
        self.metric
            .dist(self.points[i].coords(), self.points[j].coords())
    }

    fn exact_guard(&self, eps: f64) -> Result<(), GeometryError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(GeometryError::InvalidRadius(eps));
        }
        if self.points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if self.points.len() > MAX_EXACT_POINTS {
            return Err(GeometryError::TooLarge(self.points.len()));
        }
        Ok(())
    }

    /// Bitmask of points within `eps` (inclusive) of point `i`.
    fn closed_balls(&self, eps: f64) -> Vec<u32> {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| self.pair_dist(i, j) <= eps)
                    .fold(0u32, |m, j| m | (1 << j))
            })
            .collect()
    }

    /// Write one point per row, no header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), GeometryError> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for p in &self.points {
            wr.write_record(p.coords().iter().map(|c| c.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Read one point per row. Lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(r: R, metric: Option<MetricSpec>) -> Result<Self, GeometryError> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut points = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let coords = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| GeometryError::Csv(format!("{f:?}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            points.push(Point::new(coords)?);
        }
        match metric {
            Some(m) => Self::new(points, m),
            None => Self::euclidean(points),
        }
    }
}

fn combinations_mask(n: usize, k: usize, mut f: impl FnMut(u32) -> bool) -> bool {
    // Gosper's hack over n-bit masks with k bits set.
    if k == 0 || k > n {
        return false;
    }
    let limit: u64 = 1u64 << n;
    let mut c: u64 = (1u64 << k) - 1;
    while c < limit {
        if f(c as u32) {
            return true;
        }
        let u = c & c.wrapping_neg();
        let v = c + u;
        c = v + (((v ^ c) / u) >> 2);
    }
    false
}

/// Minimum number of cloud points whose closed `eps`-balls cover the cloud.
pub fn covering_number(cloud: &PointCloud, eps: f64) -> Result<usize, GeometryError> {
    cloud.exact_guard(eps)?;
    let n = cloud.len();
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let balls = cloud.closed_balls(eps);
    for k in 1..=n {
        let found = combinations_mask(n, k, |mask| {
            let mut covered = 0u32;
            let mut m = mask;
            while m != 0 {
                let i = m.trailing_zeros() as usize;
                covered |= balls[i];
                m &= m - 1;
            }
            covered == full
        });
        if found {
            return Ok(k);
        }
    }
    Ok(n)
}

/// Maximum size of a subset with all pairwise distances strictly above `eps`:
/// the maximum independent set of the graph with edges `d <= eps`.
pub fn packing_number(cloud: &PointCloud, eps: f64) -> Result<usize, GeometryError> {
    cloud.exact_guard(eps)?;
    let n = cloud.len();
    // Neighbors excluding self.
    let adj: Vec<u32> = cloud
        .closed_balls(eps)
        .into_iter()
        .enumerate()
        .map(|(i, m)| m & !(1 << i))
        .collect();
    let all: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    Ok(max_independent_set(&adj, all))
}

fn max_independent_set(adj: &[u32], candidates: u32) -> usize {
    if candidates == 0 {
        return 0;
    }
    // Branch on the lowest candidate: exclude it, or include it and drop its
    // neighbors. Vertices with no remaining neighbors are always taken.
    let v = candidates.trailing_zeros() as usize;
    let rest = candidates & !(1 << v);
    if adj[v] & rest == 0 {
        return 1 + max_independent_set(adj, rest);
    }
    let with = 1 + max_independent_set(adj, rest & !adj[v]);
    let without = max_independent_set(adj, rest);
    with.max(without)
}

/// Greedy `eps`-cover: scan points in order, opening a center at every point
/// not yet covered. The centers are pairwise more than `eps` apart, so the
/// result is simultaneously an `eps`-cover and an `eps`-packing, which gives
/// `N(eps) <= len <= M(eps) <= N(eps / 2)`.
pub fn greedy_cover(cloud: &PointCloud, eps: f64) -> Result<Vec<usize>, GeometryError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GeometryError::InvalidRadius(eps));
    }
    if cloud.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    let mut centers: Vec<usize> = Vec::new();
    for i in 0..cloud.len() {
        if !centers.iter().any(|&c| cloud.pair_dist(i, c) <= eps) {
            centers.push(i);
        }
    }
    Ok(centers)
}

/// The chain `M(2 eps) <= N(eps) <= M(eps)` evaluated by exhaustive search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverPackReport {
    pub packing_2eps: usize,
    pub covering_eps: usize,
    pub packing_eps: usize,
    pub holds: bool,
}

pub fn check_cover_pack_chain(
    cloud: &PointCloud,
    eps: f64,
) -> Result<CoverPackReport, GeometryError> {
    let packing_2eps = packing_number(cloud, 2.0 * eps)?;
    let covering_eps = covering_number(cloud, eps)?;
    let packing_eps = packing_number(cloud, eps)?;
    Ok(CoverPackReport {
        packing_2eps,
        covering_eps,
        packing_eps,
        holds: packing_2eps <= covering_eps && covering_eps <= packing_eps,
    })
}

/// Linear map `y = scale * A x` with `A` a `target_dim x source_dim` matrix
/// of orthonormal columns, so every distance is multiplied by exactly `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftMap {
    /// Row-major, `target_dim` rows of `source_dim` entries.
    matrix: Vec<f64>,
    scale: f64,
    source_dim: usize,
    target_dim: usize,
}

impl LiftMap {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        LiftMap {
            matrix,
            scale: 1.0,
            source_dim: dim,
            target_dim: dim,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// The bi-Lipschitz constant `C = max(c, 1/c)`.
    pub fn bilipschitz_constant(&self) -> f64 {
        self.scale.max(1.0 / self.scale)
    }

    /// Largest deviation of `A^T A` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let (d, p) = (self.source_dim, self.target_dim);
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = (0..p)
                    .map(|r| self.matrix[r * d + i] * self.matrix[r * d + j])
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Apply the map to a raw coordinate slice of length `source_dim`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.source_dim;
        (0..self.target_dim)
            .map(|r| {
                let row = &self.matrix[r * d..(r + 1) * d];
                self.scale * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), GeometryError> {
        let mut wr = csv::WriterBuilder::new()
            .flexible(true)
            .has_headers(false)
            .from_writer(w);
        wr.write_record(["scale", "source_dim", "target_dim"])?;
        wr.write_record([
            self.scale.to_string(),
            self.source_dim.to_string(),
            self.target_dim.to_string(),
        ])?;
        for row in self.matrix.chunks(self.source_dim) {
            wr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, GeometryError> {
        let mut rd = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(true)
            .from_reader(r);
        let mut records = rd.records();
        let head = records
            .next()
            .ok_or_else(|| GeometryError::Csv("missing scalar row".into()))??;
        let field = |i: usize| -> Result<&str, GeometryError> {
            head.get(i)
                .ok_or_else(|| GeometryError::Csv(format!("missing header field {i}")))
        };
        let parse_err = |e: &dyn std::fmt::Display| GeometryError::Csv(e.to_string());
        let scale: f64 = field(0)?.parse().map_err(|e| parse_err(&e))?;
        let source_dim: usize = field(1)?.parse().map_err(|e| parse_err(&e))?;
        let target_dim: usize = field(2)?.parse().map_err(|e| parse_err(&e))?;
        let mut matrix = Vec::with_capacity(source_dim * target_dim);
        for rec in records {
            let rec = rec?;
            if rec.len() != source_dim {
                return Err(GeometryError::DimensionMismatch {
                    expected: source_dim,
                    got: rec.len(),
                });
            }
            for f in rec.iter() {
                matrix.push(f.parse::<f64>().map_err(|e| parse_err(&e))?);
            }
        }
        if matrix.len() != source_dim * target_dim {
            return Err(GeometryError::Csv(format!(
                "expected {target_dim} matrix rows, got {}",
                matrix.len() / source_dim.max(1)
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GeometryError::InvalidScale(scale));
        }
        Ok(LiftMap {
            matrix,
            scale,
            source_dim,
            target_dim,
        })
    }
}

/// Seeded lift: a standard-normal `target_dim x source_dim` matrix whose
/// columns are orthonormalized by modified Gram-Schmidt.
pub fn make_lift(
    source_dim: usize,
    target_dim: usize,
    scale: f64,
    seed: u64,
) -> Result<LiftMap, GeometryError> {
    if target_dim < source_dim {
        return Err(GeometryError::TargetTooSmall {
            source_dim,
            target: target_dim,
        });
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(GeometryError::InvalidScale(scale));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, p) = (source_dim, target_dim);
    loop {
        // columns[j] has length p
        let mut columns: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut degenerate = false;
        for j in 0..d {
            // Two passes of modified Gram-Schmidt keep the result orthonormal
            // to ~1e-15 even for nearly dependent draws.
            for _ in 0..2 {
                for k in 0..j {
                    let dot: f64 = columns[j].iter().zip(&columns[k]).map(|(a, b)| a * b).sum();
                    let (head, tail) = columns.split_at_mut(j);
                    for (a, b) in tail[0].iter_mut().zip(&head[k]) {
                        *a -= dot * b;
                    }
                }
            }
            let norm = columns[j].iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-8 {
                degenerate = true;
                break;
            }
            columns[j].iter_mut().for_each(|a| *a /= norm);
        }
        if degenerate {
            continue;
        }
        let mut matrix = vec![0.0; p * d];
        for (j, col) in columns.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                matrix[r * d + j] = *v;
            }
        }
        return Ok(LiftMap {
            matrix,
            scale,
            source_dim: d,
            target_dim: p,
        });
    }
}

pub fn lift(map: &LiftMap, x: &Point) -> Result<Point, GeometryError> {
    if x.dim() != map.source_dim {
        return Err(GeometryError::DimensionMismatch {
            expected: map.source_dim,
            got: x.dim(),
        });
    }
    Ok(Point(map.apply(x.coords())))
}

/// Lift every point of a cloud; the lifted cloud uses the Euclidean metric.
pub fn lift_cloud(map: &LiftMap, cloud: &PointCloud) -> Result<PointCloud, GeometryError> {
    let pts = cloud
        .points()
        .iter()
        .map(|p| lift(map, p))
        .collect::<Result<Vec<_>, _>>()?;
    PointCloud::new(pts, MetricSpec::euclidean(map.target_dim))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiLipschitzEstimate {
    pub c_lo: f64,
    pub c_hi: f64,
}

/// Extreme ratios `d_Y(g(x), g(x')) / d_X(x, x')` over all distinct pairs,
/// with `d_X` the cloud metric and `d_Y` Euclidean in the target space.
pub fn estimate_bilipschitz(
    map: &LiftMap,
    cloud: &PointCloud,
) -> Result<BiLipschitzEstimate, GeometryError> {
    let lifted = cloud
        .points()
        .iter()
        .map(|p| lift(map, p))
        .collect::<Result<Vec<_>, _>>()?;
    let euclid = MetricSpec::euclidean(map.target_dim);
    let mut c_lo = f64::INFINITY;
    let mut c_hi: f64 = 0.0;
    for i in 0..cloud.len() {
        for j in i + 1..cloud.len() {
            let dx = cloud.pair_dist(i, j);
            if dx == 0.0 {
                continue;
            }
            let ratio = euclid.dist(lifted[i].coords(), lifted[j].coords()) / dx;
            c_lo = c_lo.min(ratio);
            c_hi = c_hi.max(ratio);
        }
    }
    if c_lo.is_infinite() {
        return Err(GeometryError::AllCoincident);
    }
    Ok(BiLipschitzEstimate { c_lo, c_hi })
}
