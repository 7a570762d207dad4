use std::ops::Range;

use rayon::prelude::*;

use crate::geometry::{grid_coords, interleave, Point};
use crate::quadindex::{ObjectStore, QuadIndex};
use crate::ObjectId;

use super::Query;

/// Queries sorted by the leaf their center falls in.
#[derive(Debug, Clone, Default)]
pub struct QueryStore {
    pub(crate) query_id: Vec<u64>,
    pub(crate) issuer: Vec<ObjectId>,
    pub(crate) xs: Vec<f64>,
    pub(crate) ys: Vec<f64>,
    pub(crate) leaf: Vec<u32>,
    /// Position of each row in the caller's query slice.
    pub(crate) input_pos: Vec<u32>,
}

impl QueryStore {
    pub fn len(&self) -> usize {
        self.query_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.query_id.is_empty()
    }

    pub fn query_ids(&self) -> &[u64] {
        &self.query_id
    }

    pub fn issuers(&self) -> &[ObjectId] {
        &self.issuer
    }

    pub fn leaf_ordinals(&self) -> &[u32] {
        &self.leaf
    }

    #[inline]
    pub fn position(&self, row: usize) -> Point {
        Point::new(self.xs[row], self.ys[row])
    }
}

/// One unit of parallel work: a leaf and the queries assigned to it.
///
/// `refs` indexes into the query-reference array the task set was built
/// from (store rows for the first iteration, a direction's ordering later).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub leaf: u32,
    pub refs: Range<usize>,
    pub weight: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskSet {
    pub tasks: Vec<Task>,
}

impl TaskSet {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Groups consecutive equal leaves of `leaves` (already sorted) into tasks.
    pub(crate) fn from_sorted_leaves(leaves: impl Iterator<Item = u32>, objects: &ObjectStore) -> Self {
        let mut tasks: Vec<Task> = Vec::new();
        for (i, leaf) in leaves.enumerate() {
            match tasks.last_mut() {
                Some(t) if t.leaf == leaf => t.refs.end = i + 1,
                _ => tasks.push(Task { leaf, refs: i..i + 1, weight: 0 }),
            }
        }
        for t in &mut tasks {
            t.weight = t.refs.len() as u64 * objects.cell_len(t.leaf) as u64;
        }
        // heaviest first; stable so equal weights stay in leaf order
        tasks.sort_by_key(|t| std::cmp::Reverse(t.weight));
        TaskSet { tasks }
    }
}

/// Sorts queries by leaf and forms one task per leaf holding a query.
pub fn index_queries(queries: &[Query], index: &QuadIndex, objects: &ObjectStore) -> (QueryStore, TaskSet) {
    let mbr = *index.mbr();
    let l_deep = index.l_deep();
    let mut keyed: Vec<(u64, u32)> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let (cx, cy, _) = grid_coords(q.pos, &mbr, l_deep);
            (interleave(cx, cy), i as u32)
        })
        .collect();
    keyed.par_sort_unstable();

    let n = keyed.len();
    let mut store = QueryStore {
        query_id: Vec::with_capacity(n),
        issuer: Vec::with_capacity(n),
        xs: Vec::with_capacity(n),
        ys: Vec::with_capacity(n),
        leaf: Vec::with_capacity(n),
        input_pos: Vec::with_capacity(n),
    };
    for &(code, i) in &keyed {
        let q = &queries[i as usize];
        store.query_id.push(q.id);
        store.issuer.push(q.issuer);
        store.xs.push(q.pos.x);
        store.ys.push(q.pos.y);
        store.leaf.push(index.z_map()[code as usize]);
        store.input_pos.push(i);
    }
    let tasks = TaskSet::from_sorted_leaves(store.leaf.iter().copied(), objects);
    (store, tasks)
}

/// Fixed-width per-query neighbour lists laid out linearly.
///
/// Row `r` owns `ids[r*k..(r+1)*k]` and `dists_sq[r*k..(r+1)*k]`; only the
/// first `numres[r]` entries are meaningful and they are kept in scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultStore {
    k: usize,
    ids: Vec<ObjectId>,
    dists_sq: Vec<f64>,
    maxdist_sq: Vec<f64>,
    numres: Vec<u32>,
}

/// Mutable view of one query's row.
#[derive(Debug)]
pub struct RowMut<'a> {
    pub ids: &'a mut [ObjectId],
    pub dists_sq: &'a mut [f64],
    pub maxdist_sq: &'a mut f64,
    pub numres: &'a mut u32,
}

impl ResultStore {
    pub fn new(rows: usize, k: usize) -> Self {
        assert!(k > 0);
        Self {
            k,
            ids: vec![0; rows * k],
            dists_sq: vec![0.0; rows * k],
            maxdist_sq: vec![0.0; rows],
            numres: vec![0; rows],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.numres.len()
    }

    pub fn numres(&self, row: usize) -> usize {
        self.numres[row] as usize
    }

    pub fn maxdist_sq(&self, row: usize) -> f64 {
        self.maxdist_sq[row]
    }

    pub fn ids(&self, row: usize) -> &[ObjectId] {
        &self.ids[row * self.k..row * self.k + self.numres(row)]
    }

    pub fn dists_sq(&self, row: usize) -> &[f64] {
        &self.dists_sq[row * self.k..row * self.k + self.numres(row)]
    }

    /// Distance below which a new candidate can still enter the row.
    #[inline]
    pub fn pruning_threshold_sq(&self, row: usize) -> f64 {
        if self.numres[row] as usize == self.k {
            self.maxdist_sq[row]
        } else {
            f64::INFINITY
        }
    }

    /// One mutable view per row, in row order.
    pub fn rows_mut(&mut self) -> Vec<RowMut<'_>> {
        let k = self.k;
        self.ids
            .chunks_mut(k)
            .zip(self.dists_sq.chunks_mut(k))
            .zip(self.maxdist_sq.iter_mut())
            .zip(self.numres.iter_mut())
            .map(|(((ids, dists_sq), maxdist_sq), numres)| RowMut { ids, dists_sq, maxdist_sq, numres })
            .collect()
    }

    /// MAXDIST/NUMRES coherence for every row.
    pub fn check_coherence(&self) -> Result<(), String> {
        for row in 0..self.rows() {
            let n = self.numres(row);
            if n > self.k {
                return Err(format!("row {row}: NUMRES {n} > k"));
            }
            let max = self.dists_sq(row).iter().copied().fold(0.0, f64::max);
            if max != self.maxdist_sq[row] {
                return Err(format!("row {row}: MAXDIST {} but max entry {max}", self.maxdist_sq[row]));
            }
        }
        Ok(())
    }
}
