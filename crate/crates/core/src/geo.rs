//! Location ordering and the directed nearest-neighbor graph.
//!
//! Ordered location `i` conditions on at most `m` nearest locations among
//! `0..i`. The graph is kept in compressed row storage (row `i` lists the
//! neighbors of `i`, nearest first) together with the transposed column index
//! (for each `i`, the later rows whose neighbor set contains `i`). All indices
//! are 0-based positions in the ordering.

use std::cmp::Ordering as CmpOrdering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("coordinate set is empty")]
    Empty,
    #[error("coordinate {index} is not finite")]
    NonFinite { index: usize },
    #[error("invalid custom ordering: first violation at position {position}")]
    InvalidPermutation { position: usize },
    #[error("neighbor count m must be at least 1")]
    ZeroNeighbors,
    #[error("neighbor info file is malformed: {0}")]
    Malformed(String),
    #[error("neighbor info does not match data: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Planar locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates<T> {
    points: Vec<[T; 2]>,
}

impl<T: Scalar> Coordinates<T> {
    pub fn new(points: Vec<[T; 2]>) -> Result<Self, GraphError> {
        if points.is_empty() {
            return Err(GraphError::Empty);
        }
        if let Some(index) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(GraphError::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn from_columns(x: &[T], y: &[T]) -> Result<Self, GraphError> {
        Self::new(x.iter().zip(y).map(|(&a, &b)| [a, b]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[T; 2]] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [T; 2] {
        self.points[i]
    }

    pub fn distance(&self, i: usize, j: usize) -> T {
        distance(self.points[i], self.points[j])
    }

    /// Locations rearranged into the given ordering.
    pub fn permuted(&self, ord: &Ordering) -> Self {
        Self { points: ord.perm.iter().map(|&k| self.points[k]).collect() }
    }
}

#[inline]
pub fn distance<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    squared_distance(a, b).sqrt()
}

#[inline]
fn squared_distance<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// How to order locations before building the directed graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStrategy {
    /// Increasing first coordinate.
    FirstCoord,
    /// Increasing `x + y`.
    CoordSum,
    /// Caller-supplied permutation (0-based original indices).
    Custom(Vec<usize>),
}

/// Permutation of the locations: `perm[k]` is the original index of the
/// `k`-th ordered location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ordering {
    perm: Vec<usize>,
}

impl Ordering {
    /// Validates a permutation of `0..n`.
    pub fn from_perm(perm: Vec<usize>, n: usize) -> Result<Self, GraphError> {
        let mut seen = vec![false; n];
        for (position, &k) in perm.iter().enumerate() {
            if k >= n || seen[k] {
                return Err(GraphError::InvalidPermutation { position });
            }
            seen[k] = true;
        }
        if perm.len() != n {
            return Err(GraphError::InvalidPermutation { position: perm.len().min(n) });
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect() }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// `rank[orig]` = ordered position of original location `orig`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut rank = vec![0; self.perm.len()];
        for (k, &orig) in self.perm.iter().enumerate() {
            rank[orig] = k;
        }
        rank
    }

    /// Gathers an original-order slice into ordered space.
    pub fn to_ordered<V: Copy>(&self, values: &[V]) -> Vec<V> {
        self.perm.iter().map(|&k| values[k]).collect()
    }

    /// Scatters an ordered-space slice back to original order.
    pub fn to_original<V: Copy + Default>(&self, values: &[V]) -> Vec<V> {
        let mut out = vec![V::default(); values.len()];
        for (k, &orig) in self.perm.iter().enumerate() {
            out[orig] = values[k];
        }
        out
    }
}

/// Stable sort of the locations by the strategy's key.
pub fn order_locations<T: Scalar>(coords: &Coordinates<T>, strategy: &OrderStrategy) -> Result<Ordering, GraphError> {
    let n = coords.len();
    let key = |p: [T; 2]| match strategy {
        OrderStrategy::FirstCoord => p[0],
        _ => p[0] + p[1],
    };
    match strategy {
        OrderStrategy::Custom(perm) => Ordering::from_perm(perm.clone(), n),
        _ => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.sort_by(|&a, &b| {
                key(coords.points[a]).partial_cmp(&key(coords.points[b])).unwrap_or(CmpOrdering::Equal)
            });
            Ok(Ordering { perm })
        }
    }
}

/// Neighbor search algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    /// Scan every predecessor.
    Brute,
    /// Uniform cell grid with ring expansion and distance pruning.
    #[default]
    Codebook,
}

/// Candidate list of the `m` best `(squared distance, index)` pairs,
/// smaller index winning ties.
struct Best<T> {
    items: Vec<(T, usize)>,
    cap: usize,
}

impl<T: Scalar> Best<T> {
    fn new(cap: usize) -> Self {
        Self { items: Vec::with_capacity(cap.min(1024) + 1), cap }
    }

    #[inline]
    fn full(&self) -> bool {
        self.items.len() == self.cap
    }

    #[inline]
    fn worst(&self) -> T {
        self.items.last().map(|e| e.0).unwrap_or_else(T::infinity)
    }

    #[inline]
    fn offer(&mut self, d2: T, idx: usize) {
        if self.cap == 0 {
            return;
        }
        if self.full() {
            let (wd, wi) = *self.items.last().unwrap();
            if d2 > wd || (d2 == wd && idx > wi) {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|&(d, i)| d < d2 || (d == d2 && i < idx));
        self.items.insert(pos, (d2, idx));
    }

    fn into_indices(self) -> Vec<usize> {
        self.items.into_iter().map(|(_, i)| i).collect()
    }
}

/// Uniform grid over a point set. Each cell lists its point indices in
/// increasing order so a search can stop at an index limit.
#[derive(Debug, Clone)]
pub struct Codebook<T> {
    points: Vec<[T; 2]>,
    origin: [T; 2],
    cell: [T; 2],
    dims: [usize; 2],
    cell_start: Vec<usize>,
    cell_items: Vec<usize>,
}

impl<T: Scalar> Codebook<T> {
    /// Builds a `ceil(sqrt(n)) x ceil(sqrt(n))` grid over the bounding box.
    pub fn new(points: &[[T; 2]]) -> Self {
        let n = points.len().max(1);
        let side = ((n as f64).sqrt().ceil() as usize).max(1);
        let mut lo = [T::infinity(); 2];
        let mut hi = [T::neg_infinity(); 2];
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = [T::zero(); 2];
            hi = [T::one(); 2];
        }
        let mut cell = [T::one(); 2];
        for a in 0..2 {
            let span = hi[a] - lo[a];
            cell[a] = if span > T::zero() { span / T::of(side as f64) } else { T::one() };
        }
        let dims = [side, side];
        let mut book = Self {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            cell_start: vec![0; side * side + 1],
            cell_items: vec![0; points.len()],
        };
        let cells: Vec<usize> = points.iter().map(|&p| book.cell_id(book.cell_of(p))).collect();
        for &c in &cells {
            book.cell_start[c + 1] += 1;
        }
        for c in 0..side * side {
            book.cell_start[c + 1] += book.cell_start[c];
        }
        let mut fill = book.cell_start.clone();
        for (i, &c) in cells.iter().enumerate() {
            book.cell_items[fill[c]] = i;
            fill[c] += 1;
        }
        book
    }

    fn cell_of(&self, p: [T; 2]) -> [isize; 2] {
        let mut out = [0isize; 2];
        for a in 0..2 {
            let raw = ((p[a] - self.origin[a]) / self.cell[a]).floor().to_f64().unwrap_or(0.0);
            out[a] = (raw as isize).clamp(0, self.dims[a] as isize - 1);
        }
        out
    }

    fn cell_id(&self, c: [isize; 2]) -> usize {
        c[1] as usize * self.dims[0] + c[0] as usize
    }

    /// Squared distance from `q` to the rectangle of cell `c`.
    fn cell_gap2(&self, q: [T; 2], c: [isize; 2]) -> T {
        let mut s = T::zero();
        for a in 0..2 {
            let lo = self.origin[a] + T::of(c[a] as f64) * self.cell[a];
            let hi = lo + self.cell[a];
            let g = if q[a] < lo {
                lo - q[a]
            } else if q[a] > hi {
                q[a] - hi
            } else {
                T::zero()
            };
            s = s + g * g;
        }
        s
    }

    /// Lower bound on the distance from `q` to any cell in ring `r` around
    /// `center`, or `None` when the ring lies entirely outside the grid.
    fn ring_bound(&self, q: [T; 2], center: [isize; 2], r: isize) -> Option<T> {
        if r == 0 {
            return Some(T::zero());
        }
        let mut bound = T::infinity();
        let mut any = false;
        for a in 0..2 {
            let inner_lo = center[a] - (r - 1);
            let inner_hi = center[a] + (r - 1);
            if inner_lo > 0 {
                any = true;
                let edge = self.origin[a] + T::of(inner_lo as f64) * self.cell[a];
                bound = bound.min(q[a] - edge);
            }
            if inner_hi < self.dims[a] as isize - 1 {
                any = true;
                let edge = self.origin[a] + T::of((inner_hi + 1) as f64) * self.cell[a];
                bound = bound.min(edge - q[a]);
            }
        }
        any.then(|| bound.max(T::zero()))
    }

    /// The `m` nearest indexed points to `q` among indices `< limit`,
    /// nearest first.
    pub fn nearest(&self, q: [T; 2], m: usize, limit: usize) -> Vec<usize> {
        let mut best = Best::new(m.min(limit));
        if best.cap == 0 {
            return Vec::new();
        }
        let center = self.cell_of(q);
        let mut r: isize = 0;
        while let Some(lb) = self.ring_bound(q, center, r) {
            if best.full() && lb * lb > best.worst() {
                break;
            }
            let (x0, x1) = (center[0] - r, center[0] + r);
            let (y0, y1) = (center[1] - r, center[1] + r);
            let x_hi = self.dims[0] as isize - 1;
            for cy in y0.max(0)..=y1.min(self.dims[1] as isize - 1) {
                if cy == y0 || cy == y1 {
                    for cx in x0.max(0)..=x1.min(x_hi) {
                        self.scan_cell(q, [cx, cy], limit, &mut best);
                    }
                } else {
                    if x0 >= 0 {
                        self.scan_cell(q, [x0, cy], limit, &mut best);
                    }
                    if x1 <= x_hi {
                        self.scan_cell(q, [x1, cy], limit, &mut best);
                    }
                }
            }
            r += 1;
        }
        best.into_indices()
    }

    #[inline]
    fn scan_cell(&self, q: [T; 2], c: [isize; 2], limit: usize, best: &mut Best<T>) {
        if best.full() && self.cell_gap2(q, c) > best.worst() {
            return;
        }
        let id = self.cell_id(c);
        for &j in &self.cell_items[self.cell_start[id]..self.cell_start[id + 1]] {
            if j >= limit {
                break;
            }
            best.offer(squared_distance(q, self.points[j]), j);
        }
    }
}

fn brute_row<T: Scalar>(points: &[[T; 2]], i: usize, m: usize) -> Vec<usize> {
    let mut best = Best::new(m.min(i));
    for j in 0..i {
        best.offer(squared_distance(points[i], points[j]), j);
    }
    best.into_indices()
}

/// Transposed incidence of the CRS rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReverseIndex {
    offsets: Vec<usize>,
    rows: Vec<usize>,
    slots: Vec<usize>,
}

impl ReverseIndex {
    /// Rows `j` (increasing) whose neighbor set contains `i`, paired with the
    /// position of `i` inside row `j`.
    pub fn dependents(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.rows[r.clone()].iter().copied().zip(self.slots[r].iter().copied())
    }

    pub fn count(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }
}

/// Directed m-nearest-neighbor DAG over ordered locations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    m: usize,
    ordering: Ordering,
    row_offsets: Vec<usize>,
    entries: Vec<usize>,
    reverse: ReverseIndex,
}

/// Builds the directed neighbor graph over `coords` (original order) under `ord`.
pub fn build_neighbor_graph<T: Scalar>(
    coords: &Coordinates<T>,
    ord: &Ordering,
    m: usize,
    search: SearchKind,
) -> Result<NeighborGraph, GraphError> {
    if m == 0 {
        return Err(GraphError::ZeroNeighbors);
    }
    if ord.len() != coords.len() {
        return Err(GraphError::Mismatch(format!("ordering has {} entries for {} locations", ord.len(), coords.len())));
    }
    let ordered = coords.permuted(ord);
    let pts = ordered.points();
    let n = pts.len();
    let rows: Vec<Vec<usize>> = match search {
        SearchKind::Brute => (0..n).into_par_iter().map(|i| brute_row(pts, i, m)).collect(),
        SearchKind::Codebook => {
            let book = Codebook::new(pts);
            (0..n).into_par_iter().map(|i| book.nearest(pts[i], m, i)).collect()
        }
    };
    Ok(NeighborGraph::from_rows(m, ord.clone(), &rows))
}

impl NeighborGraph {
    fn from_rows(m: usize, ordering: Ordering, rows: &[Vec<usize>]) -> Self {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        row_offsets.push(0);
        let mut entries = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for r in rows {
            entries.extend_from_slice(r);
            row_offsets.push(entries.len());
        }
        let mut g = Self { m, ordering, row_offsets, entries, reverse: ReverseIndex::default() };
        g.build_reverse_index();
        g
    }

    /// Recomputes the transposed (column) index from the CRS rows.
    pub fn build_reverse_index(&mut self) {
        let n = self.len();
        let mut offsets = vec![0usize; n + 1];
        for &c in &self.entries {
            offsets[c + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut rows = vec![0; self.entries.len()];
        let mut slots = vec![0; self.entries.len()];
        // rows visited in increasing order, so each column list comes out sorted
        for j in 0..n {
            for (slot, &c) in self.neighbors(j).iter().enumerate() {
                rows[fill[c]] = j;
                slots[fill[c]] = slot;
                fill[c] += 1;
            }
        }
        self.reverse = ReverseIndex { offsets, rows, slots };
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ordering(&self) -> &Ordering {
        &self.ordering
    }

    /// Neighbors of ordered location `i`, nearest first.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.entries[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Offset of row `i` inside [`NeighborGraph::entries`].
    pub fn row_offset(&self, i: usize) -> usize {
        self.row_offsets[i]
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn reverse(&self) -> &ReverseIndex {
        &self.reverse
    }

    /// Checks the structural invariants: row `i` has `min(m, i)` distinct
    /// entries, all `< i`.
    pub fn validate(&self) -> Result<(), GraphError> {
        for i in 0..self.len() {
            let row = self.neighbors(i);
            if row.len() != self.m.min(i) {
                return Err(GraphError::Malformed(format!("row {i} has {} entries", row.len())));
            }
            let mut seen = row.to_vec();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != row.len() || row.iter().any(|&c| c >= i) {
                return Err(GraphError::Malformed(format!("row {i} has invalid entries")));
            }
        }
        Ok(())
    }

    pub fn to_info(&self) -> NeighborInfo {
        NeighborInfo {
            format: NeighborInfo::FORMAT.to_string(),
            version: NeighborInfo::VERSION,
            m: self.m,
            n: self.len(),
            perm: self.ordering.perm.clone(),
            row_offsets: self.row_offsets.clone(),
            entries: self.entries.clone(),
        }
    }

    pub fn from_info(info: NeighborInfo) -> Result<Self, GraphError> {
        if info.format != NeighborInfo::FORMAT {
            return Err(GraphError::Malformed(format!("unexpected format tag `{}`", info.format)));
        }
        if info.version != NeighborInfo::VERSION {
            return Err(GraphError::Malformed(format!("unsupported version {}", info.version)));
        }
        let n = info.n;
        if info.row_offsets.len() != n + 1
            || info.row_offsets[0] != 0
            || info.row_offsets.windows(2).any(|w| w[0] > w[1])
            || *info.row_offsets.last().unwrap() != info.entries.len()
        {
            return Err(GraphError::Malformed("row offsets inconsistent with entries".into()));
        }
        let ordering = Ordering::from_perm(info.perm, n)?;
        let mut g = Self {
            m: info.m,
            ordering,
            row_offsets: info.row_offsets,
            entries: info.entries,
            reverse: ReverseIndex::default(),
        };
        g.validate()?;
        g.build_reverse_index();
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_info())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_info(serde_json::from_reader(file)?)
    }
}

/// Serializable neighbor information, reusable across fits on the same
/// coordinates, ordering and `m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborInfo {
    pub format: String,
    pub version: u32,
    pub m: usize,
    pub n: usize,
    pub perm: Vec<usize>,
    pub row_offsets: Vec<usize>,
    pub entries: Vec<usize>,
}

impl NeighborInfo {
    pub const FORMAT: &'static str = "nngp-neighbor-info";
    pub const VERSION: u32 = 1;
}

/// Result of an unconstrained nearest-neighbor query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nearest {
    /// Nearest first.
    pub indices: Vec<usize>,
    /// Set when fewer than the requested `m` reference locations exist.
    pub truncated: bool,
}

/// Spatial index over a fixed reference set for prediction-time queries.
#[derive(Debug, Clone)]
pub struct ReferenceIndex<T> {
    book: Codebook<T>,
}

impl<T: Scalar> ReferenceIndex<T> {
    pub fn new(reference: &Coordinates<T>) -> Self {
        Self { book: Codebook::new(reference.points()) }
    }

    pub fn len(&self) -> usize {
        self.book.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.book.points.is_empty()
    }

    /// The `m` nearest reference locations to `query`, ignoring any ordering.
    pub fn nearest(&self, query: [T; 2], m: usize) -> Nearest {
        let n = self.len();
        Nearest { indices: self.book.nearest(query, m, n), truncated: m > n }
    }
}

/// One-off nearest reference search by full scan.
pub fn nearest_in_reference<T: Scalar>(coords: &Coordinates<T>, query: [T; 2], m: usize) -> Nearest {
    let n = coords.len();
    let mut best = Best::new(m.min(n));
    for (j, &p) in coords.points().iter().enumerate() {
        best.offer(squared_distance(query, p), j);
    }
    Nearest { indices: best.into_indices(), truncated: m > n }
}
