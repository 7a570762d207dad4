//! First-iteration distance computation and the alternating left/right
//! sub-visits that complete every neighbour list.

use std::ops::Range;

use rayon::prelude::*;

use crate::geometry::{cell_bounds, cells_at_level, min_dist_sq_point_rect, MortonCell, Point, Rect};
use crate::kselect::{select_k_nearest, CellCandidates, Chain, KSelectParams, ListCandidates};
use crate::quadindex::{ObjectStore, QuadIndex};
use crate::ObjectId;

use super::stores::{QueryStore, ResultStore, RowMut, TaskSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Counters accumulated by one phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseCounters {
    pub distance_evals: u64,
    pub pruned_quadrants: u64,
}

impl std::ops::AddAssign for PhaseCounters {
    fn add_assign(&mut self, o: Self) {
        self.distance_evals += o.distance_evals;
        self.pruned_quadrants += o.pruned_quadrants;
    }
}

/// A quadrant skipped by border pruning, recorded for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedQuadrant {
    pub row: u32,
    /// `l_deep` codes covered by the quadrant.
    pub codes: Range<u64>,
    pub threshold_sq: f64,
}

/// Hands each task its rows of the result store.
fn lanes_for_tasks<'a>(
    result: &'a mut ResultStore,
    tasks: &TaskSet,
    refs: &[u32],
) -> Vec<(u32, Vec<(u32, RowMut<'a>)>)> {
    let mut lanes: Vec<Option<RowMut<'a>>> = result.rows_mut().into_iter().map(Some).collect();
    tasks
        .tasks
        .iter()
        .map(|t| {
            let rows = refs[t.refs.clone()]
                .iter()
                .map(|&r| (r, lanes[r as usize].take().expect("query assigned to two tasks")))
                .collect();
            (t.leaf, rows)
        })
        .collect()
}

fn cell_candidates<'a>(objects: &'a ObjectStore, leaf: u32, query: Point, exclude: ObjectId, cutoff_sq: f64) -> CellCandidates<'a> {
    let r = objects.cell_interval(leaf);
    CellCandidates {
        query,
        exclude: Some(exclude),
        ids: &objects.ids()[r.clone()],
        xs: &objects.xs()[r.clone()],
        ys: &objects.ys()[r],
        cutoff_sq,
    }
}

/// Per-query k-NN within the query's own leaf.
pub fn first_iteration(
    tasks: &TaskSet,
    objects: &ObjectStore,
    queries: &QueryStore,
    params: &KSelectParams,
    result: &mut ResultStore,
) -> PhaseCounters {
    let rows: Vec<u32> = (0..queries.len() as u32).collect();
    let work = lanes_for_tasks(result, tasks, &rows);
    let evals: u64 = work
        .into_par_iter()
        .with_max_len(1)
        .map(|(leaf, rows)| {
            let cell_len = objects.cell_len(leaf) as u64;
            let n = rows.len() as u64;
            for (row, lane) in rows {
                let row = row as usize;
                let c = cell_candidates(objects, leaf, queries.position(row), queries.issuer[row], f64::INFINITY);
                let (num, maxd, _) = select_k_nearest(&c, params, lane.ids, lane.dists_sq);
                *lane.numres = num as u32;
                *lane.maxdist_sq = maxd;
            }
            n * cell_len
        })
        .sum();
    PhaseCounters { distance_evals: evals, pruned_quadrants: 0 }
}

/// Per-query, per-direction visit state.
///
/// Each query has visited a contiguous range `[lo, hi)` of `l_deep` codes
/// (initially its own leaf). The left sub-visit continues at `lo - 1`, the
/// right one at `hi`; both ranges only ever grow.
#[derive(Debug, Clone)]
pub struct NavState {
    lo: Vec<u64>,
    hi: Vec<u64>,
    /// Active query rows per direction, in the order of that direction's last sort.
    active: [Vec<u32>; 2],
    assigned: Vec<u32>,
}

/// Marker for "no leaf assigned" in sort keys.
const INACTIVE: u32 = u32::MAX;

impl NavState {
    pub fn new(queries: &QueryStore, index: &QuadIndex) -> Self {
        let (lo, hi) = queries
            .leaf
            .iter()
            .map(|&leaf| {
                let s = index.leaf_span(leaf);
                (s.start, s.end)
            })
            .unzip();
        let all: Vec<u32> = (0..queries.len() as u32).collect();
        NavState { lo, hi, active: [all.clone(), all], assigned: vec![INACTIVE; queries.len()] }
    }

    pub fn active(&self, dir: Direction) -> &[u32] {
        &self.active[dir.slot()]
    }

    pub fn visited(&self, row: usize) -> Range<u64> {
        self.lo[row]..self.hi[row]
    }

    /// Leaf assigned to `row` by the last navigation step, if any.
    pub fn assigned(&self, row: usize) -> Option<u32> {
        (self.assigned[row] != INACTIVE).then_some(self.assigned[row])
    }
}

/// Outcome of one query's walk: the leaf found (if any), the new visited
/// bound on the walked side, and how many quadrants were pruned.
struct Step {
    leaf: Option<u32>,
    bound: u64,
    pruned: u64,
}

/// Bounds used for pruning: the quadrant grown by a small margin, and
/// unbounded on sides lying on the MBR border so that clamped objects
/// outside the MBR are never pruned wrongly.
#[inline]
fn pruning_rect(cell: MortonCell, mbr: &Rect, eps: f64) -> Rect {
    let b = cell_bounds(cell, mbr);
    let last = (1u64 << cell.level) - 1;
    let (cx, cy) = crate::geometry::deinterleave(cell.code);
    Rect::new(
        if cx == 0 { f64::NEG_INFINITY } else { b.x_lo - eps },
        if cy == 0 { f64::NEG_INFINITY } else { b.y_lo - eps },
        if cx as u64 == last { f64::INFINITY } else { b.x_hi + eps },
        if cy as u64 == last { f64::INFINITY } else { b.y_hi + eps },
    )
}

struct Walker<'a> {
    index: &'a QuadIndex,
    objects: &'a ObjectStore,
    eps: f64,
    total: u64,
    l_deep: u32,
}

impl Walker<'_> {
    #[inline]
    fn pruned(&self, q: Point, start: u64, j: u32, threshold_sq: f64) -> bool {
        if threshold_sq == f64::INFINITY {
            return false;
        }
        let cell = MortonCell::new(self.l_deep - j, start >> (2 * j));
        min_dist_sq_point_rect(q, &pruning_rect(cell, self.index.mbr(), self.eps)) >= threshold_sq
    }

    /// Walks the virtual full quadtree of depth `l_deep` in Morton order
    /// from `next` upwards, skipping any aligned quadrant whose border is
    /// not nearer than the threshold and any empty leaf.
    fn walk_right(&self, q: Point, mut next: u64, threshold_sq: f64, audit: &mut Option<Vec<Range<u64>>>) -> Step {
        let mut pruned = 0;
        'outer: while next < self.total {
            let mut j = if next == 0 { self.l_deep } else { (next.trailing_zeros() / 2).min(self.l_deep) };
            loop {
                let size = cells_at_level(j);
                if self.pruned(q, next, j, threshold_sq) {
                    pruned += 1;
                    if let Some(a) = audit.as_mut() {
                        a.push(next..next + size);
                    }
                    next += size;
                    continue 'outer;
                }
                if j == 0 {
                    break;
                }
                j -= 1;
            }
            let leaf = self.index.z_map()[next as usize];
            let span = self.index.leaf_span(leaf);
            if self.objects.cell_len(leaf) == 0 {
                next = span.end;
                continue;
            }
            return Step { leaf: Some(leaf), bound: span.end, pruned };
        }
        Step { leaf: None, bound: self.total, pruned }
    }

    /// Mirror of [`Self::walk_right`]; `end` is one past the next code to inspect.
    fn walk_left(&self, q: Point, mut end: u64, threshold_sq: f64, audit: &mut Option<Vec<Range<u64>>>) -> Step {
        let mut pruned = 0;
        'outer: while end > 0 {
            let mut j = (end.trailing_zeros() / 2).min(self.l_deep);
            loop {
                let size = cells_at_level(j);
                let start = end - size;
                if self.pruned(q, start, j, threshold_sq) {
                    pruned += 1;
                    if let Some(a) = audit.as_mut() {
                        a.push(start..end);
                    }
                    end = start;
                    continue 'outer;
                }
                if j == 0 {
                    break;
                }
                j -= 1;
            }
            let leaf = self.index.z_map()[end as usize - 1];
            let span = self.index.leaf_span(leaf);
            if self.objects.cell_len(leaf) == 0 {
                end = span.start;
                continue;
            }
            return Step { leaf: Some(leaf), bound: span.start, pruned };
        }
        Step { leaf: None, bound: 0, pruned }
    }
}

/// Advances every active query of `dir` to the next leaf that may hold a
/// closer neighbour, or deactivates it in that direction.
pub fn navigate(
    nav: &mut NavState,
    dir: Direction,
    index: &QuadIndex,
    objects: &ObjectStore,
    queries: &QueryStore,
    result: &ResultStore,
    audit: Option<&mut Vec<PrunedQuadrant>>,
) -> PhaseCounters {
    let walker = Walker {
        index,
        objects,
        eps: index.mbr().width().max(index.mbr().height()) * (-40f64).exp2(),
        total: cells_at_level(index.l_deep()),
        l_deep: index.l_deep(),
    };
    let recording = audit.is_some();
    let active = &nav.active[dir.slot()];
    let steps: Vec<(Step, Option<Vec<Range<u64>>>)> = active
        .par_iter()
        .map(|&row| {
            let row = row as usize;
            let q = queries.position(row);
            let threshold = result.pruning_threshold_sq(row);
            let mut log = recording.then(Vec::new);
            let step = match dir {
                Direction::Right => walker.walk_right(q, nav.hi[row], threshold, &mut log),
                Direction::Left => walker.walk_left(q, nav.lo[row], threshold, &mut log),
            };
            (step, log)
        })
        .collect();

    let mut counters = PhaseCounters::default();
    let mut audit = audit;
    for (&row, (step, log)) in active.iter().zip(steps) {
        let r = row as usize;
        if let (Some(sink), Some(log)) = (audit.as_deref_mut(), log) {
            let threshold_sq = result.pruning_threshold_sq(r);
            sink.extend(log.into_iter().map(|codes| PrunedQuadrant { row, codes, threshold_sq }));
        }
        counters.pruned_quadrants += step.pruned;
        nav.assigned[r] = step.leaf.unwrap_or(INACTIVE);
        match dir {
            Direction::Right => nav.hi[r] = step.bound,
            Direction::Left => nav.lo[r] = step.bound,
        }
    }
    counters
}

/// Stable-sorts the direction's query references by their newly assigned
/// leaf, drops the inactive ones and builds one task per leaf.
pub fn sort_and_materialize(nav: &mut NavState, dir: Direction, objects: &ObjectStore) -> TaskSet {
    let assigned = &nav.assigned;
    let refs = &mut nav.active[dir.slot()];
    refs.par_sort_by_key(|&r| assigned[r as usize]);
    let live = refs.partition_point(|&r| assigned[r as usize] != INACTIVE);
    refs.truncate(live);
    TaskSet::from_sorted_leaves(refs.iter().map(|&r| assigned[r as usize]), objects)
}

/// Merges each active query's list with the objects of its assigned leaf.
pub fn update_nn_lists(
    tasks: &TaskSet,
    nav: &NavState,
    dir: Direction,
    objects: &ObjectStore,
    queries: &QueryStore,
    params: &KSelectParams,
    result: &mut ResultStore,
) -> PhaseCounters {
    let k = params.k;
    let work = lanes_for_tasks(result, tasks, nav.active(dir));
    let evals: u64 = work
        .into_par_iter()
        .with_max_len(1)
        .map_init(
            || (vec![0 as ObjectId; k], vec![0f64; k]),
            |(ids, dists), (leaf, rows)| {
                let cell_len = objects.cell_len(leaf) as u64;
                let n = rows.len() as u64;
                for (row, lane) in rows {
                    let row = row as usize;
                    let have = *lane.numres as usize;
                    ids[..have].copy_from_slice(&lane.ids[..have]);
                    dists[..have].copy_from_slice(&lane.dists_sq[..have]);
                    let cutoff = if have == k { *lane.maxdist_sq } else { f64::INFINITY };
                    let current = ListCandidates { ids: &ids[..have], dists_sq: &dists[..have] };
                    let cell = cell_candidates(objects, leaf, queries.position(row), queries.issuer[row], cutoff);
                    let (num, maxd, _) = select_k_nearest(&Chain(current, cell), params, lane.ids, lane.dists_sq);
                    *lane.numres = num as u32;
                    *lane.maxdist_sq = maxd;
                }
                n * cell_len
            },
        )
        .sum();
    PhaseCounters { distance_evals: evals, pruned_quadrants: 0 }
}
