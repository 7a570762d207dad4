//! PR-quadtree grid built over Morton-sorted positions.
//!
//! The tree is never materialised as nodes. Construction encodes every
//! position at `l_max`, sorts the codes, and then splits index intervals of
//! the sorted array level by level. The leaves, ordered by the code of the
//! first `l_deep` quadrant they cover, partition the MBR; `z_map` maps every
//! `l_deep` quadrant to the ordinal of its leaf so point location is a
//! single array read.

use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{
    cells_at_level, grid_coords, interleave, leaf_order_key, morton_encode, MortonCell, Point, Rect,
};
use crate::ObjectId;

/// Upper bound on `l_max`; keeps `z_map` at most `4^10` entries.
pub const MAX_L_MAX: u32 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("th_quad must be at least 1")]
    ZeroThreshold,
    #[error("l_max must be in 1..={MAX_L_MAX}, got {0}")]
    LevelOutOfRange(u32),
    #[error("invalid MBR {0:?}")]
    InvalidMbr(Rect),
    #[error("non-finite position at index {0}")]
    NonFinite(usize),
}

/// Quadtree-induced grid plus its `z_map` lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadIndex {
    mbr: Rect,
    th_quad: usize,
    l_max: u32,
    l_deep: u32,
    leaves: Vec<MortonCell>,
    leaf_keys: Vec<u64>,
    build_counts: Vec<usize>,
    z_map: Vec<u32>,
}

impl QuadIndex {
    pub fn mbr(&self) -> &Rect {
        &self.mbr
    }

    pub fn th_quad(&self) -> usize {
        self.th_quad
    }

    pub fn l_max(&self) -> u32 {
        self.l_max
    }

    pub fn l_deep(&self) -> u32 {
        self.l_deep
    }

    pub fn leaves(&self) -> &[MortonCell] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn z_map(&self) -> &[u32] {
        &self.z_map
    }

    /// Objects each leaf held when the index was built.
    pub fn build_counts(&self) -> &[usize] {
        &self.build_counts
    }

    /// Leaves that hold more than `th_quad` objects because they hit `l_max`.
    pub fn overfull_leaves(&self) -> usize {
        self.build_counts.iter().filter(|&&c| c > self.th_quad).count()
    }

    /// Range of `l_deep` codes covered by a leaf.
    #[inline]
    pub fn leaf_span(&self, ordinal: u32) -> Range<u64> {
        let cell = self.leaves[ordinal as usize];
        let start = self.leaf_keys[ordinal as usize];
        start..start + cells_at_level(self.l_deep - cell.level)
    }

    /// Leaf ordinal containing `p`; points outside the MBR are clamped.
    #[inline]
    pub fn locate(&self, p: Point) -> u32 {
        self.z_map[morton_encode(p, &self.mbr, self.l_deep).code as usize]
    }

    /// Checks the structural invariants of a built index.
    pub fn check_invariants(&self) -> Result<(), String> {
        let total = cells_at_level(self.l_deep);
        if self.z_map.len() as u64 != total {
            return Err(format!("z_map has {} entries, expected {total}", self.z_map.len()));
        }
        let mut covered = 0u64;
        let mut next_key = 0u64;
        for (i, &cell) in self.leaves.iter().enumerate() {
            if cell.level > self.l_deep {
                return Err(format!("leaf {i} below l_deep"));
            }
            let span = self.leaf_span(i as u32);
            if span.start != next_key {
                return Err(format!("leaf {i} starts at {} instead of {next_key}", span.start));
            }
            if self.z_map[span.start as usize..span.end as usize]
                .iter()
                .any(|&o| o as usize != i)
            {
                return Err(format!("z_map not constant over leaf {i}"));
            }
            covered += span.end - span.start;
            next_key = span.end;
            if cell.level < self.l_max && self.build_counts[i] > self.th_quad {
                return Err(format!(
                    "leaf {i} at level {} holds {} > th_quad {}",
                    cell.level, self.build_counts[i], self.th_quad
                ));
            }
        }
        if covered != total {
            return Err(format!("leaves cover {covered} of {total} deepest cells"));
        }
        Ok(())
    }
}

/// Builds the grid for `positions` over a fixed `mbr`.
pub fn build_index(
    positions: &[Point],
    mbr: Rect,
    th_quad: usize,
    l_max: u32,
) -> Result<QuadIndex, IndexError> {
    if th_quad == 0 {
        return Err(IndexError::ZeroThreshold);
    }
    if !(1..=MAX_L_MAX).contains(&l_max) {
        return Err(IndexError::LevelOutOfRange(l_max));
    }
    if !mbr.is_valid() {
        return Err(IndexError::InvalidMbr(mbr));
    }
    if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
        return Err(IndexError::NonFinite(i));
    }

    let mut codes: Vec<u64> = positions
        .par_iter()
        .map(|&p| morton_encode(p, &mbr, l_max).code)
        .collect();
    codes.par_sort_unstable();

    let mut leaves: Vec<(MortonCell, usize)> = Vec::new();
    let mut frontier: Vec<(MortonCell, Range<usize>)> = vec![(MortonCell::ROOT, 0..codes.len())];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (cell, range) in frontier {
            if range.len() <= th_quad || cell.level == l_max {
                leaves.push((cell, range.len()));
                continue;
            }
            let shift = 2 * (l_max - cell.level - 1);
            let slice = &codes[range.clone()];
            let mut start = range.start;
            for child in cell.children() {
                let end = range.start + slice.partition_point(|&z| (z >> shift) <= child.code);
                next.push((child, start..end));
                start = end;
            }
        }
        frontier = next;
    }

    let l_deep = leaves.iter().map(|(c, _)| c.level).max().unwrap_or(0);
    leaves.sort_unstable_by_key(|(c, _)| leaf_order_key(*c, l_deep));
    let leaf_keys: Vec<u64> = leaves.iter().map(|(c, _)| leaf_order_key(*c, l_deep)).collect();

    let mut z_map = vec![0u32; cells_at_level(l_deep) as usize];
    let mut rest = z_map.as_mut_slice();
    let mut spans = Vec::with_capacity(leaves.len());
    for (cell, _) in &leaves {
        let (head, tail) = rest.split_at_mut(cells_at_level(l_deep - cell.level) as usize);
        spans.push(head);
        rest = tail;
    }
    spans
        .into_par_iter()
        .enumerate()
        .for_each(|(ordinal, span)| span.fill(ordinal as u32));

    let index = QuadIndex {
        mbr,
        th_quad,
        l_max,
        l_deep,
        build_counts: leaves.iter().map(|&(_, n)| n).collect(),
        leaves: leaves.into_iter().map(|(c, _)| c).collect(),
        leaf_keys,
        z_map,
    };
    debug_assert_eq!(index.check_invariants(), Ok(()));
    Ok(index)
}

/// Objects sorted by leaf, stored as a structure of vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectStore {
    ids: Vec<ObjectId>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    codes: Vec<u64>,
    leaf: Vec<u32>,
    offsets: Vec<usize>,
    clamped: usize,
}

impl ObjectStore {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ObjectId] {
        &self.ids
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// `l_deep` Morton code of each object, non-decreasing.
    pub fn codes(&self) -> &[u64] {
        &self.codes
    }

    pub fn leaf_ordinals(&self) -> &[u32] {
        &self.leaf
    }

    /// Positions falling outside the MBR (indexed into a boundary cell).
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn position(&self, i: usize) -> Point {
        Point::new(self.xs[i], self.ys[i])
    }

    /// Index interval of the objects in a leaf.
    #[inline]
    pub fn cell_interval(&self, ordinal: u32) -> Range<usize> {
        self.offsets[ordinal as usize]..self.offsets[ordinal as usize + 1]
    }

    #[inline]
    pub fn cell_len(&self, ordinal: u32) -> usize {
        let r = self.cell_interval(ordinal);
        r.end - r.start
    }

    /// Store indices of objects whose `l_deep` code lies in `codes`.
    pub fn code_interval(&self, codes: Range<u64>) -> Range<usize> {
        let start = self.codes.partition_point(|&c| c < codes.start);
        let end = self.codes.partition_point(|&c| c < codes.end);
        start..end
    }
}

/// Leaves holding at least one object, in leaf order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActiveCellSet {
    pub cells: Vec<u32>,
}

/// Result of [`index_objects`].
#[derive(Debug, Clone)]
pub struct IndexedObjects {
    pub store: ObjectStore,
    pub active: ActiveCellSet,
}

/// Sorts objects by their `l_deep` code and resolves their leaves.
pub fn index_objects(objects: &[(ObjectId, Point)], index: &QuadIndex) -> IndexedObjects {
    let mbr = index.mbr;
    let l_deep = index.l_deep;
    let mut keyed: Vec<(u64, u32, bool)> = objects
        .par_iter()
        .enumerate()
        .map(|(i, &(_, p))| {
            let (cx, cy, clamped) = grid_coords(p, &mbr, l_deep);
            (interleave(cx, cy), i as u32, clamped)
        })
        .collect();
    keyed.par_sort_unstable_by_key(|&(code, i, _)| (code, i));

    let n = keyed.len();
    let mut store = ObjectStore {
        ids: Vec::with_capacity(n),
        xs: Vec::with_capacity(n),
        ys: Vec::with_capacity(n),
        codes: Vec::with_capacity(n),
        leaf: Vec::with_capacity(n),
        offsets: vec![0; index.num_leaves() + 1],
        clamped: 0,
    };
    for &(code, i, clamped) in &keyed {
        let (id, p) = objects[i as usize];
        let leaf = index.z_map[code as usize];
        store.ids.push(id);
        store.xs.push(p.x);
        store.ys.push(p.y);
        store.codes.push(code);
        store.leaf.push(leaf);
        store.offsets[leaf as usize + 1] += 1;
        store.clamped += clamped as usize;
    }
    for i in 1..store.offsets.len() {
        store.offsets[i] += store.offsets[i - 1];
    }
    let active = ActiveCellSet {
        cells: (0..index.num_leaves() as u32)
            .filter(|&o| store.cell_len(o) > 0)
            .collect(),
    };
    IndexedObjects { store, active }
}

/// Decides when the grid is stale.
///
/// The statistic is the number of query-object distance evaluations per
/// tick. The index is rebuilt when the last tick's count exceeds
/// `factor` times the mean of the `window` ticks before it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RebuildPolicy {
    pub window: usize,
    pub factor: f64,
}

impl Default for RebuildPolicy {
    fn default() -> Self {
        Self { window: 3, factor: 1.5 }
    }
}

impl RebuildPolicy {
    /// `history` is ordered oldest first; its last entry is the last tick.
    pub fn should_rebuild(&self, history: &[u64]) -> bool {
        let Some((&last, previous)) = history.split_last() else {
            return false;
        };
        if self.window == 0 || previous.len() < self.window {
            return false;
        }
        let trailing = &previous[previous.len() - self.window..];
        let mean = trailing.iter().map(|&v| v as f64).sum::<f64>() / self.window as f64;
        last as f64 > mean * self.factor
    }
}

/// Text dump, one `leaf_ordinal,level,code,start,end` line per leaf.
pub fn dump_index(index: &QuadIndex, objects: &ObjectStore) -> String {
    let mut out = String::new();
    for (i, cell) in index.leaves.iter().enumerate() {
        let r = objects.cell_interval(i as u32);
        let _ = writeln!(out, "{i},{},{},{},{}", cell.level, cell.code, r.start, r.end);
    }
    out
}
