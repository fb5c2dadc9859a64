//! Exact nearest-neighbor search over an append-only experience buffer, and
//! the Lipschitz min-plus approximator `Q(x) = min_i {Q_i + L d(x, x_i)}`.
//!
//! Samples live in a logarithmic family of static k-d trees (sizes
//! `BUCKET * 2^j`) plus a small unsorted overflow bucket. An insert that fills
//! the bucket merges it with every occupied smaller tree into one new tree, so
//! each sample is rebuilt `O(log n)` times and queries touch `O(log n)` trees.
//! Nodes prune on the larger of a bounding-box bound and a centroid ball
//! bound. Box bounds use the same floating-point operations as the true
//! distances and ball bounds are shrunk by a relative margin, so tree answers
//! stay identical to a linear scan, ties included.

use std::cmp::Ordering;
use std::io::{Read, Write};

use thiserror::Error;

use crate::metric_space::{MetricSpec, Point};

const BUCKET: usize = 32;
const LEAF_SIZE: usize = 8;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index is empty")]
    Empty,
    #[error("neighbor count must be at least 1")]
    ZeroNeighbors,
    #[error("no sample with insert index {0}")]
    UnknownSample(usize),
    #[error("label field has {got} entries but the index holds {expected} samples")]
    StaleLabels { expected: usize, got: usize },
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for IndexError {
    fn from(e: csv::Error) -> Self {
        IndexError::Csv(e.to_string())
    }
}

/// One observed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    /// Observation of the state the action was taken in.
    pub state: Vec<f64>,
    /// Action coordinates appended to `state` to form the search point.
    pub action: Vec<f64>,
    /// Index into a finite action set, if there is one.
    pub action_index: Option<usize>,
    /// Observation of the deterministic successor.
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Step within the episode at which the transition happened (0-based).
    pub step: usize,
    /// Whether the successor is terminal (no further reward follows).
    pub terminal: bool,
    /// TD error recorded for this transition, if any.
    pub stored_delta: Option<f64>,
}

impl TransitionRecord {
    /// The search point `(state, action)`.
    pub fn key(&self) -> Vec<f64> {
        let mut x = self.state.clone();
        x.extend_from_slice(&self.action);
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Point,
    pub value: f64,
    pub payload: TransitionRecord,
    pub insert_index: usize,
}

/// Result of a k-nearest query: `(insert_index, distance)` ascending by
/// distance, ties by insert index.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub hits: Vec<(usize, f64)>,
    /// True when fewer than the requested number of samples exist.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
struct Node {
    lo: usize,
    hi: usize,
    /// Child node indices; `None` for leaves.
    children: Option<(usize, usize)>,
}

/// A static k-d tree over a fixed set of sample ids.
#[derive(Debug, Clone)]
struct KdTree {
    dim: usize,
    /// Sample ids in leaf order.
    ids: Vec<usize>,
    /// Coordinates in leaf order, `dim` per sample.
    coords: Vec<f64>,
    nodes: Vec<Node>,
    bmin: Vec<f64>,
    bmax: Vec<f64>,
    /// Per-node centroid and covering radius. The box bound degrades when the
    /// data sit in a rotated low-dimensional subspace; the ball bound does not.
    centers: Vec<f64>,
    radii: Vec<f64>,
}

impl KdTree {
    fn build(dim: usize, metric: &MetricSpec, samples: &[LabeledSample], mut ids: Vec<usize>) -> Self {
        let mut tree = KdTree {
            dim,
            ids: Vec::new(),
            coords: Vec::new(),
            nodes: Vec::new(),
            bmin: Vec::new(),
            bmax: Vec::new(),
            centers: Vec::new(),
            radii: Vec::new(),
        };
        let n = ids.len();
        tree.build_node(metric, samples, &mut ids, 0, n);
        tree.coords = Vec::with_capacity(n * dim);
        for &id in &ids {
            tree.coords.extend_from_slice(samples[id].x.coords());
        }
        tree.ids = ids;
        tree
    }

    fn build_node(
        &mut self,
        metric: &MetricSpec,
        samples: &[LabeledSample],
        ids: &mut [usize],
        lo: usize,
        hi: usize,
    ) -> usize {
        let dim = self.dim;
        let node = self.nodes.len();
        self.nodes.push(Node { lo, hi, children: None });
        let mut mn = vec![f64::INFINITY; dim];
        let mut mx = vec![f64::NEG_INFINITY; dim];
        for &id in &ids[lo..hi] {
            for (k, &c) in samples[id].x.coords().iter().enumerate() {
                mn[k] = mn[k].min(c);
                mx[k] = mx[k].max(c);
            }
        }
        let (mut split, mut spread) = (0, -1.0);
        for k in 0..dim {
            let s = metric.weights()[k] * (mx[k] - mn[k]) * (mx[k] - mn[k]);
            if s > spread {
                spread = s;
                split = k;
            }
        }
        self.bmin.extend_from_slice(&mn);
        self.bmax.extend_from_slice(&mx);
        let mut center = vec![0.0; dim];
        for &id in &ids[lo..hi] {
            for (c, &x) in center.iter_mut().zip(samples[id].x.coords()) {
                *c += x;
            }
        }
        let inv = 1.0 / (hi - lo) as f64;
        center.iter_mut().for_each(|c| *c *= inv);
        let radius = ids[lo..hi]
            .iter()
            .map(|&id| metric.sq_dist(&center, samples[id].x.coords()))
            .fold(0.0, f64::max)
            .sqrt();
        self.centers.extend_from_slice(&center);
        self.radii.push(radius);
        if hi - lo <= LEAF_SIZE || spread <= 0.0 {
            return node;
        }
        let mid = lo + (hi - lo) / 2;
        ids[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            samples[a].x.coords()[split]
                .total_cmp(&samples[b].x.coords()[split])
                .then(a.cmp(&b))
        });
        let left = self.build_node(metric, samples, ids, lo, mid);
        let right = self.build_node(metric, samples, ids, mid, hi);
        self.nodes[node].children = Some((left, right));
        node
    }

    /// Weighted squared distance from `q` to the node's bounding box, summed
    /// in the same order as `MetricSpec::sq_dist`.
    #[inline]
    fn box_sq_dist(&self, metric: &MetricSpec, node: usize, q: &[f64]) -> f64 {
        let d = self.dim;
        let mn = &self.bmin[node * d..(node + 1) * d];
        let mx = &self.bmax[node * d..(node + 1) * d];
        let mut acc = 0.0;
        for k in 0..d {
            let gap = if q[k] < mn[k] {
                mn[k] - q[k]
            } else if q[k] > mx[k] {
                q[k] - mx[k]
            } else {
                0.0
            };
            acc += metric.weights()[k] * gap * gap;
        }
        acc
    }

    /// Lower bound on the squared distance from `q` to any sample under
    /// `node`: the larger of the box bound and the ball bound. The ball bound
    /// is shrunk by a relative 1e-12 so rounding can never make it exceed the
    /// true distance, which keeps tie handling exact.
    #[inline]
    fn lower_sq(&self, metric: &MetricSpec, node: usize, q: &[f64]) -> f64 {
        let b = self.box_sq_dist(metric, node, q);
        let d = self.dim;
        let dc = metric.sq_dist(q, &self.centers[node * d..(node + 1) * d]).sqrt();
        let r = self.radii[node];
        let gap = dc - r - 1e-12 * (dc + r);
        if gap > 0.0 {
            b.max(gap * gap)
        } else {
            b
        }
    }

    #[inline]
    fn point(&self, pos: usize) -> &[f64] {
        &self.coords[pos * self.dim..(pos + 1) * self.dim]
    }

    fn knn(&self, metric: &MetricSpec, node: usize, lower: f64, q: &[f64], best: &mut KBest) {
        if best.prunes(lower) {
            return;
        }
        let nd = &self.nodes[node];
        match nd.children {
            None => {
                for pos in nd.lo..nd.hi {
                    best.offer(metric.sq_dist(q, self.point(pos)), self.ids[pos]);
                }
            }
            Some((l, r)) => {
                let dl = self.lower_sq(metric, l, q);
                let dr = self.lower_sq(metric, r, q);
                let ((a, da), (b, db)) = if dr < dl { ((r, dr), (l, dl)) } else { ((l, dl), (r, dr)) };
                self.knn(metric, a, da, q, best);
                self.knn(metric, b, db, q, best);
            }
        }
    }

    /// Per-node minimum of `labels` (indexed by sample id).
    fn node_minima(&self, labels: &[f64]) -> Vec<f64> {
        let mut out = vec![f64::INFINITY; self.nodes.len()];
        for node in (0..self.nodes.len()).rev() {
            let nd = &self.nodes[node];
            out[node] = match nd.children {
                None => self.ids[nd.lo..nd.hi]
                    .iter()
                    .map(|&id| labels[id])
                    .fold(f64::INFINITY, f64::min),
                Some((l, r)) => out[l].min(out[r]),
            };
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn min_plus(
        &self,
        metric: &MetricSpec,
        node: usize,
        lower: f64,
        q: &[f64],
        labels: &[f64],
        minima: &[f64],
        lipschitz: f64,
        best: &mut f64,
    ) {
        if lower >= *best {
            return;
        }
        let nd = &self.nodes[node];
        match nd.children {
            None => {
                for pos in nd.lo..nd.hi {
                    let v = labels[self.ids[pos]]
                        + lipschitz * metric.sq_dist(q, self.point(pos)).sqrt();
                    if v < *best {
                        *best = v;
                    }
                }
            }
            Some((l, r)) => {
                let bl = minima[l] + lipschitz * self.lower_sq(metric, l, q).sqrt();
                let br = minima[r] + lipschitz * self.lower_sq(metric, r, q).sqrt();
                let ((a, la), (b, lb)) = if br < bl { ((r, br), (l, bl)) } else { ((l, bl), (r, br)) };
                self.min_plus(metric, a, la, q, labels, minima, lipschitz, best);
                self.min_plus(metric, b, lb, q, labels, minima, lipschitz, best);
            }
        }
    }
}

/// Bounded candidate list for k-nearest search, ordered by `(sq, id)`.
struct KBest {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl KBest {
    fn new(k: usize) -> Self {
        KBest {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    /// A subtree whose lower bound strictly exceeds the current k-th distance
    /// cannot contribute; an equal bound might still win a tie on index.
    #[inline]
    fn prunes(&self, lower: f64) -> bool {
        self.items.len() == self.k && lower > self.items[self.k - 1].0
    }

    #[inline]
    fn offer(&mut self, sq: f64, id: usize) {
        let key = (sq, id);
        if self.items.len() == self.k && !less(key, self.items[self.k - 1]) {
            return;
        }
        let pos = self.items.partition_point(|&it| less(it, key));
        self.items.insert(pos, key);
        self.items.truncate(self.k);
    }
}

#[inline]
fn less(a: (f64, usize), b: (f64, usize)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Less => true,
        Ordering::Equal => a.1 < b.1,
        Ordering::Greater => false,
    }
}

/// Labels for every buffer sample together with the per-node minima the
/// min-plus search prunes on. Built against one index state; inserting into
/// the index invalidates it.
#[derive(Debug, Clone)]
pub struct LabelField {
    labels: Vec<f64>,
    minima: Vec<Vec<f64>>,
}

impl LabelField {
    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct NNIndex {
    metric: MetricSpec,
    samples: Vec<LabeledSample>,
    /// `trees[j]` holds `BUCKET * 2^j` samples when occupied.
    trees: Vec<Option<KdTree>>,
    overflow: Vec<usize>,
    /// `samples[i].value`, kept contiguous for min-plus queries.
    values: Vec<f64>,
    /// Per-tree node minima of `values` (empty for vacant levels).
    value_minima: Vec<Vec<f64>>,
}

impl NNIndex {
    pub fn new(metric: MetricSpec) -> Self {
        NNIndex {
            metric,
            samples: Vec::new(),
            trees: Vec::new(),
            overflow: Vec::new(),
            values: Vec::new(),
            value_minima: Vec::new(),
        }
    }

    pub fn metric(&self) -> &MetricSpec {
        &self.metric
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn sample(&self, insert_index: usize) -> Result<&LabeledSample, IndexError> {
        self.samples
            .get(insert_index)
            .ok_or(IndexError::UnknownSample(insert_index))
    }

    /// Append a sample at point `x` with label `value`; returns its insert index.
    pub fn insert(
        &mut self,
        x: Point,
        value: f64,
        payload: TransitionRecord,
    ) -> Result<usize, IndexError> {
        self.check(x.coords())?;
        let id = self.samples.len();
        self.samples.push(LabeledSample {
            x,
            value,
            payload,
            insert_index: id,
        });
        self.values.push(value);
        self.overflow.push(id);
        if self.overflow.len() == BUCKET {
            self.carry();
        }
        Ok(id)
    }

    fn carry(&mut self) {
        let mut ids = std::mem::take(&mut self.overflow);
        let mut level = 0;
        while level < self.trees.len() && self.trees[level].is_some() {
            let t = self.trees[level].take().unwrap();
            self.value_minima[level] = Vec::new();
            ids.extend_from_slice(&t.ids);
            level += 1;
        }
        if level == self.trees.len() {
            self.trees.push(None);
            self.value_minima.push(Vec::new());
        }
        ids.sort_unstable();
        let tree = KdTree::build(self.dim(), &self.metric, &self.samples, ids);
        self.value_minima[level] = tree.node_minima(&self.values);
        self.trees[level] = Some(tree);
    }

    fn check(&self, x: &[f64]) -> Result<(), IndexError> {
        if x.len() != self.dim() {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Overwrite the TD error recorded on a sample.
    pub fn set_stored_delta(&mut self, insert_index: usize, delta: Option<f64>) -> Result<(), IndexError> {
        let s = self
            .samples
            .get_mut(insert_index)
            .ok_or(IndexError::UnknownSample(insert_index))?;
        s.payload.stored_delta = delta;
        Ok(())
    }

    /// The `m` nearest samples to `q`, exact, ties broken by insert index.
    pub fn nearest(&self, q: &[f64], m: usize) -> Result<Neighbors, IndexError> {
        self.check(q)?;
        if self.samples.is_empty() {
            return Err(IndexError::Empty);
        }
        if m == 0 {
            return Err(IndexError::ZeroNeighbors);
        }
        let k = m.min(self.samples.len());
        let mut best = KBest::new(k);
        for &id in &self.overflow {
            best.offer(self.metric.sq_dist(q, self.samples[id].x.coords()), id);
        }
        for t in self.trees.iter().rev().flatten() {
            t.knn(&self.metric, 0, t.lower_sq(&self.metric, 0, q), q, &mut best);
        }
        Ok(Neighbors {
            hits: best.items.into_iter().map(|(sq, id)| (id, sq.sqrt())).collect(),
            truncated: m > self.samples.len(),
        })
    }

    /// Single nearest sample: `(insert_index, distance)`.
    pub fn nearest_one(&self, q: &[f64]) -> Result<(usize, f64), IndexError> {
        Ok(self.nearest(q, 1)?.hits[0])
    }

    /// Reference k-nearest by full scan.
    pub fn nearest_linear(&self, q: &[f64], m: usize) -> Result<Neighbors, IndexError> {
        self.check(q)?;
        if self.samples.is_empty() {
            return Err(IndexError::Empty);
        }
        if m == 0 {
            return Err(IndexError::ZeroNeighbors);
        }
        let mut all: Vec<(f64, usize)> = self
            .samples
            .iter()
            .map(|s| (self.metric.sq_dist(q, s.x.coords()), s.insert_index))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(m);
        Ok(Neighbors {
            hits: all.into_iter().map(|(sq, id)| (id, sq.sqrt())).collect(),
            truncated: m > self.samples.len(),
        })
    }

    /// True iff the tree search and the linear scan return the same single
    /// nearest neighbor (identity and distance) for every query.
    pub fn verify_exactness(&self, queries: &[Point]) -> Result<bool, IndexError> {
        if queries.is_empty() {
            return Ok(true);
        }
        for q in queries {
            if self.nearest(q.coords(), 1)? != self.nearest_linear(q.coords(), 1)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Prepare a label field for [`NNIndex::min_plus`]; `labels[i]` belongs
    /// to the sample with insert index `i`.
    pub fn label_field(&self, labels: Vec<f64>) -> Result<LabelField, IndexError> {
        if labels.len() != self.samples.len() {
            return Err(IndexError::StaleLabels {
                expected: self.samples.len(),
                got: labels.len(),
            });
        }
        let minima = self
            .trees
            .iter()
            .map(|t| t.as_ref().map_or_else(Vec::new, |t| t.node_minima(&labels)))
            .collect();
        Ok(LabelField { labels, minima })
    }

    /// `min(cap, min_i {labels_i + L d(q, x_i)})` by branch and bound.
    pub fn min_plus(
        &self,
        field: &LabelField,
        q: &[f64],
        lipschitz: f64,
        cap: f64,
    ) -> Result<f64, IndexError> {
        self.check(q)?;
        if field.labels.len() != self.samples.len() {
            return Err(IndexError::StaleLabels {
                expected: self.samples.len(),
                got: field.labels.len(),
            });
        }
        Ok(self.min_plus_raw(&field.labels, &field.minima, q, lipschitz, cap))
    }

    fn min_plus_raw(
        &self,
        labels: &[f64],
        minima: &[Vec<f64>],
        q: &[f64],
        lipschitz: f64,
        cap: f64,
    ) -> f64 {
        let mut best = cap;
        for &id in &self.overflow {
            let v = labels[id] + lipschitz * self.metric.sq_dist(q, self.samples[id].x.coords()).sqrt();
            if v < best {
                best = v;
            }
        }
        for (t, m) in self.trees.iter().zip(minima).rev() {
            if let Some(t) = t {
                let lower = m[0] + lipschitz * t.lower_sq(&self.metric, 0, q).sqrt();
                t.min_plus(&self.metric, 0, lower, q, labels, m, lipschitz, &mut best);
            }
        }
        best
    }

    /// Min-plus over the samples' own `value` labels.
    pub fn min_plus_values(&self, q: &[f64], lipschitz: f64) -> Result<f64, IndexError> {
        self.check(q)?;
        Ok(self.min_plus_raw(&self.values, &self.value_minima, q, lipschitz, f64::INFINITY))
    }

    /// `lipschitz * d(q, x_i)` for every stored sample, by insertion index.
    /// `min_i(labels[i] + offsets[i])` equals `min_plus` bit for bit.
    pub fn min_plus_offsets(&self, q: &[f64], lipschitz: f64) -> Result<Vec<f64>, IndexError> {
        self.check(q)?;
        Ok(self
            .samples
            .iter()
            .map(|s| lipschitz * self.metric.sq_dist(q, s.x.coords()).sqrt())
            .collect())
    }

    /// Reference min-plus by full scan.
    pub fn min_plus_linear(&self, labels: &[f64], q: &[f64], lipschitz: f64, cap: f64) -> f64 {
        self.samples
            .iter()
            .map(|s| labels[s.insert_index] + lipschitz * self.metric.dist(q, s.x.coords()))
            .fold(cap, f64::min)
    }

    /// Write the buffer as CSV with a one-line header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), IndexError> {
        let mut wr = csv::WriterBuilder::new().flexible(true).from_writer(w);
        let first = self.samples.first();
        let (sd, ad) = first.map_or((0, 0), |s| (s.payload.state.len(), s.payload.action.len()));
        let mut header: Vec<String> = [
            "insert_index",
            "value",
            "step",
            "reward",
            "terminal",
            "action_index",
            "stored_delta",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..self.dim()).map(|i| format!("x{i}")));
        header.extend((0..sd).map(|i| format!("s{i}")));
        header.extend((0..ad).map(|i| format!("a{i}")));
        header.extend((0..sd).map(|i| format!("s_next{i}")));
        wr.write_record(&header)?;
        for s in &self.samples {
            let p = &s.payload;
            let mut row = vec![
                s.insert_index.to_string(),
                s.value.to_string(),
                p.step.to_string(),
                p.reward.to_string(),
                u8::from(p.terminal).to_string(),
                p.action_index.map_or_else(String::new, |a| a.to_string()),
                p.stored_delta.map_or_else(String::new, |d| d.to_string()),
            ];
            row.extend(s.x.coords().iter().map(f64::to_string));
            row.extend(p.state.iter().map(f64::to_string));
            row.extend(p.action.iter().map(f64::to_string));
            row.extend(p.next_state.iter().map(f64::to_string));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Rebuild an index from [`NNIndex::write_csv`] output.
    pub fn read_csv<R: Read>(r: R, metric: MetricSpec) -> Result<Self, IndexError> {
        let mut rd = csv::ReaderBuilder::new().flexible(true).from_reader(r);
        let header = rd.headers()?.clone();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| {
                    h.strip_prefix(prefix)
                        .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_digit()))
                })
                .count()
        };
        let (xd, sd, ad) = (count("x"), count("s"), count("a"));
        let mut index = NNIndex::new(metric);
        let bad = |what: &str, v: &str| IndexError::Csv(format!("bad {what}: {v:?}"));
        for rec in rd.records() {
            let rec = rec?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize, what: &str| f(i).parse::<f64>().map_err(|_| bad(what, f(i)));
            let opt = |i: usize| -> Result<Option<&str>, IndexError> {
                Ok(Some(f(i)).filter(|s| !s.is_empty()))
            };
            let value = num(1, "value")?;
            let step = f(2).parse::<usize>().map_err(|_| bad("step", f(2)))?;
            let reward = num(3, "reward")?;
            let terminal = f(4) == "1";
            let action_index = opt(5)?
                .map(|s| s.parse::<usize>().map_err(|_| bad("action_index", s)))
                .transpose()?;
            let stored_delta = opt(6)?
                .map(|s| s.parse::<f64>().map_err(|_| bad("stored_delta", s)))
                .transpose()?;
            let vec_at = |start: usize, n: usize, what: &str| {
                (start..start + n).map(|i| num(i, what)).collect::<Result<Vec<_>, _>>()
            };
            let x = vec_at(7, xd, "x")?;
            let state = vec_at(7 + xd, sd, "s")?;
            let action = vec_at(7 + xd + sd, ad, "a")?;
            let next_state = vec_at(7 + xd + sd + ad, sd, "s_next")?;
            let point = Point::new(x).map_err(|e| IndexError::Csv(e.to_string()))?;
            index.insert(
                point,
                value,
                TransitionRecord {
                    state,
                    action,
                    action_index,
                    next_state,
                    reward,
                    step,
                    terminal,
                    stored_delta,
                },
            )?;
        }
        Ok(index)
    }
}

/// Definition-style approximator over an index's own sample values.
#[derive(Debug, Clone)]
pub struct NNApproximator {
    pub index: NNIndex,
    pub lipschitz: f64,
    pub default_value: f64,
}

impl NNApproximator {
    pub fn new(metric: MetricSpec, lipschitz: f64, default_value: f64) -> Self {
        NNApproximator {
            index: NNIndex::new(metric),
            lipschitz,
            default_value,
        }
    }

    /// Insert a labeled point with an empty payload.
    pub fn insert_point(&mut self, x: Point, value: f64) -> Result<usize, IndexError> {
        let payload = TransitionRecord {
            state: x.coords().to_vec(),
            action: Vec::new(),
            action_index: None,
            next_state: Vec::new(),
            reward: 0.0,
            step: 0,
            terminal: false,
            stored_delta: None,
        };
        self.index.insert(x, value, payload)
    }

    /// `default_value` on an empty buffer, else the exact min-plus value.
    pub fn approximate(&self, q: &Point) -> Result<f64, IndexError> {
        if self.index.is_empty() {
            self.index.check(q.coords())?;
            return Ok(self.default_value);
        }
        self.index.min_plus_values(q.coords(), self.lipschitz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(v: &[f64]) -> Point {
        Point::new(v.to_vec()).unwrap()
    }

    fn line_approx(points: &[(f64, f64)], l: f64) -> NNApproximator {
        let mut a = NNApproximator::new(MetricSpec::euclidean(1), l, 500.0);
        for &(x, v) in points {
            a.insert_point(pt(&[x]), v).unwrap();
        }
        a
    }

    #[test]
    fn insert_and_size() {
        let mut a = line_approx(&[], 1.0);
        assert_eq!(a.index.len(), 0);
        a.insert_point(pt(&[1.0]), 0.0).unwrap();
        assert_eq!(a.index.len(), 1);
        let id = a.insert_point(pt(&[1.0]), 0.0).unwrap();
        assert_eq!(id, 1);
        assert_eq!(a.index.sample(0).unwrap().x, a.index.sample(1).unwrap().x);
        assert!(a.insert_point(pt(&[1.0, 2.0]), 0.0).is_err());
    }

    #[test]
    fn nearest_examples() {
        let a = line_approx(&[(0.0, 0.0), (10.0, 0.0)], 1.0);
        assert_eq!(a.index.nearest(&[4.0], 1).unwrap().hits, vec![(0, 4.0)]);
        assert_eq!(a.index.nearest(&[10.0], 1).unwrap().hits, vec![(1, 0.0)]);
        let b = line_approx(&[(-1.0, 0.0), (1.0, 0.0)], 1.0);
        assert_eq!(b.index.nearest(&[0.0], 1).unwrap().hits[0].0, 0);
        let n = b.index.nearest(&[0.0], 5).unwrap();
        assert!(n.truncated);
        assert_eq!(n.hits.len(), 2);
    }

    #[test]
    fn nearest_errors() {
        let a = line_approx(&[], 1.0);
        assert!(matches!(a.index.nearest(&[0.0], 1), Err(IndexError::Empty)));
        let b = line_approx(&[(0.0, 0.0)], 1.0);
        assert!(matches!(b.index.nearest(&[0.0], 0), Err(IndexError::ZeroNeighbors)));
    }

    #[test]
    fn approximate_examples() {
        let a = line_approx(&[(0.0, 1.0), (10.0, 0.0)], 0.5);
        assert_eq!(a.approximate(&pt(&[4.0])).unwrap(), 3.0);
        let b = line_approx(&[(0.0, 1.0), (1.0, 1.5)], 1.0);
        assert_eq!(b.approximate(&pt(&[1.0])).unwrap(), 1.5);
        assert_eq!(line_approx(&[], 1.0).approximate(&pt(&[3.0])).unwrap(), 500.0);
    }

    #[test]
    fn tree_matches_scan_through_many_carries() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let metric = MetricSpec::new(vec![0.25, 1.0, 2.0]).unwrap();
        let mut a = NNApproximator::new(metric, 1.3, 0.0);
        for i in 0..1000 {
            let x = pt(&[rng.random(), rng.random(), (rng.random::<f64>() * 4.0).round()]);
            a.insert_point(x, rng.random::<f64>() * 3.0).unwrap();
            if i % 97 == 0 {
                let q: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 1.2 - 0.1).collect();
                assert_eq!(a.index.nearest(&q, 4).unwrap(), a.index.nearest_linear(&q, 4).unwrap());
            }
        }
        let labels: Vec<f64> = a.index.samples().iter().map(|s| s.value).collect();
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let k = rng.random_range(1..6);
            assert_eq!(a.index.nearest(&q, k).unwrap(), a.index.nearest_linear(&q, k).unwrap());
            let lin = a.index.min_plus_linear(&labels, &q, 1.3, f64::INFINITY);
            assert_eq!(a.approximate(&pt(&q)).unwrap(), lin);
        }
    }

    #[test]
    fn label_field_min_plus_with_cap() {
        let a = line_approx(&(0..100).map(|i| (i as f64, 0.0)).collect::<Vec<_>>(), 1.0);
        let labels: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        let field = a.index.label_field(labels.clone()).unwrap();
        for q in [-3.0, 0.5, 42.2, 99.0, 150.0] {
            for cap in [f64::INFINITY, 2.0, 0.5] {
                let got = a.index.min_plus(&field, &[q], 0.8, cap).unwrap();
                assert_eq!(got, a.index.min_plus_linear(&labels, &[q], 0.8, cap));
                let offs = a.index.min_plus_offsets(&[q], 0.8).unwrap();
                let folded = labels.iter().zip(&offs).map(|(l, o)| l + o).fold(cap, f64::min);
                assert_eq!(got.to_bits(), folded.to_bits());
            }
        }
        assert!(a.index.label_field(vec![0.0; 3]).is_err());
    }

    #[test]
    fn stored_delta_update() {
        let mut a = line_approx(&[(0.0, 0.0)], 1.0);
        a.index.set_stored_delta(0, Some(0.25)).unwrap();
        assert_eq!(a.index.sample(0).unwrap().payload.stored_delta, Some(0.25));
        assert!(a.index.set_stored_delta(3, None).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let metric = MetricSpec::new(vec![1.0, 0.5]).unwrap();
        let mut idx = NNIndex::new(metric.clone());
        for i in 0..40 {
            let rec = TransitionRecord {
                state: vec![i as f64 * 0.1],
                action: vec![(i % 2) as f64],
                action_index: Some(i % 2),
                next_state: vec![i as f64 * 0.1 + 0.01],
                reward: 1.0 / 3.0,
                step: i,
                terminal: i == 39,
                stored_delta: if i % 3 == 0 { Some(-0.1 * i as f64) } else { None },
            };
            idx.insert(Point::new(rec.key()).unwrap(), i as f64 * 1e-3, rec).unwrap();
        }
        let mut buf = Vec::new();
        idx.write_csv(&mut buf).unwrap();
        let back = NNIndex::read_csv(buf.as_slice(), metric).unwrap();
        assert_eq!(back.samples(), idx.samples());
    }
}
