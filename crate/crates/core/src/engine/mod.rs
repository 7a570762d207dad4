//! Tick processor.
//!
//! A tick runs as a sequence of phases separated by barriers:
//!
//! 1. (re)build the grid if needed, index the objects;
//! 2. index the queries and compute, per query, the k nearest objects of
//!    its own leaf;
//! 3. alternate left and right sub-visits: each active query is moved to
//!    the next leaf (in leaf order) that may contain a closer object, the
//!    queries are regrouped by that leaf, and their lists are merged with
//!    the leaf's objects. A direction ends when no query is active in it.
//!
//! Within a phase, tasks are independent and are spread over the engine's
//! worker pool. Every result row belongs to exactly one query, so writes
//! need no synchronisation.

mod iterate;
mod stores;

use std::fmt;
use std::time::Instant;

use thiserror::Error;

use crate::geometry::{Point, Rect};
use crate::kselect::{KSelectError, KSelectParams};
use crate::quadindex::{build_index, index_objects, IndexError, ObjectStore, QuadIndex, RebuildPolicy};
use crate::ObjectId;

pub use iterate::{
    first_iteration, navigate, sort_and_materialize, update_nn_lists, Direction, NavState, PhaseCounters,
    PrunedQuadrant,
};
pub use stores::{index_queries, QueryStore, ResultStore, RowMut, Task, TaskSet};

/// A k-NN query issued by a moving object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub id: u64,
    pub issuer: ObjectId,
    pub pos: Point,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbour {
    pub id: ObjectId,
    pub dist: f64,
}

/// A query and its neighbours, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryNeighbours {
    pub query_id: u64,
    pub neighbours: Vec<Neighbour>,
}

impl QueryNeighbours {
    pub fn maxdist(&self) -> f64 {
        self.neighbours.last().map_or(0.0, |n| n.dist)
    }
}

/// Results of one tick, in the order the queries were submitted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickResult {
    pub queries: Vec<QueryNeighbours>,
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("threads must be at least 1")]
    ZeroThreads,
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    KSelect(#[from] KSelectError),
    #[error("non-finite position for object {0}")]
    NonFiniteObject(ObjectId),
    #[error("non-finite center for query {0}")]
    NonFiniteQuery(u64),
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub mbr: Rect,
    pub k: usize,
    pub th_quad: usize,
    pub l_max: u32,
    pub num_bins: usize,
    pub max_refine_iters: u32,
    pub rebuild: RebuildPolicy,
    pub threads: usize,
    /// Record every pruned quadrant and check it afterwards (small inputs only).
    pub audit: bool,
}

impl EngineConfig {
    pub fn new(mbr: Rect, k: usize) -> Self {
        Self {
            mbr,
            k,
            th_quad: auto_th_quad(k),
            l_max: 10,
            num_bins: 32,
            max_refine_iters: 64,
            rebuild: RebuildPolicy::default(),
            threads: 1,
            audit: false,
        }
    }

    pub fn kselect(&self) -> KSelectParams {
        KSelectParams { num_bins: self.num_bins, max_refine_iters: self.max_refine_iters, k: self.k }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.k == 0 {
            return Err(EngineError::ZeroK);
        }
        if self.threads == 0 {
            return Err(EngineError::ZeroThreads);
        }
        self.kselect().validate()?;
        // parameter checks shared with index construction
        build_index(&[], self.mbr, self.th_quad, self.l_max)?;
        Ok(())
    }
}

/// Leaf capacity that tends to work best for a given k:
/// 192 below 32, `12k` up to 128, 2048 above.
pub fn auto_th_quad(k: usize) -> usize {
    if k < 32 {
        192
    } else if k <= 128 {
        12 * k
    } else {
        2048
    }
}

/// Per-phase wall-clock durations of a tick, in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTimings {
    pub index_build_us: u64,
    pub object_index_us: u64,
    pub query_index_us: u64,
    pub first_iteration_us: u64,
    pub loop_us: u64,
}

impl PhaseTimings {
    pub fn total_us(&self) -> u64 {
        self.index_build_us + self.object_index_us + self.query_index_us + self.first_iteration_us + self.loop_us
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickMetrics {
    pub tick: u64,
    pub n_objects: usize,
    pub n_queries: usize,
    pub iterations_left: u32,
    pub iterations_right: u32,
    pub distance_evals: u64,
    /// Quadrants of the virtual full tree skipped by border pruning.
    pub pruned_leaves: u64,
    pub rebuild: bool,
    pub timings: PhaseTimings,
    /// Active queries entering each left and right iteration.
    pub active_left: Vec<usize>,
    pub active_right: Vec<usize>,
    pub num_leaves: usize,
    pub l_deep: u32,
    pub clamped_objects: usize,
}

impl TickMetrics {
    pub const CSV_HEADER: &'static str = "tick,n_objects,n_queries,iterations_left,iterations_right,distance_evals,pruned_leaves,rebuild_flag,index_build_us,object_index_us,query_index_us,first_iteration_us,loop_us";

    pub fn csv_row(&self) -> String {
        let t = &self.timings;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.tick,
            self.n_objects,
            self.n_queries,
            self.iterations_left,
            self.iterations_right,
            self.distance_evals,
            self.pruned_leaves,
            self.rebuild as u8,
            t.index_build_us,
            t.object_index_us,
            t.query_index_us,
            t.first_iteration_us,
            t.loop_us
        )
    }
}

/// Outcome of the pruning audit of one tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub pruned_checked: usize,
    /// Pruned quadrants that did hold an object below the threshold.
    pub wrongly_pruned: Vec<PrunedQuadrant>,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} pruned quadrants checked, {} wrongly pruned", self.pruned_checked, self.wrongly_pruned.len())
    }
}

#[derive(Debug, Clone)]
pub struct TickOutput {
    pub result: TickResult,
    pub metrics: TickMetrics,
    pub audit: Option<AuditReport>,
}

/// Stateful tick processor: keeps the grid and the rebuild history between ticks.
pub struct Engine {
    config: EngineConfig,
    pool: rayon::ThreadPool,
    index: Option<QuadIndex>,
    history: Vec<u64>,
    ticks: u64,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine").field("config", &self.config).field("ticks", &self.ticks).finish()
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| EngineError::Pool(e.to_string()))?;
        Ok(Self { config, pool, index: None, history: Vec::new(), ticks: 0 })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Grid used by the most recent tick.
    pub fn index(&self) -> Option<&QuadIndex> {
        self.index.as_ref()
    }

    /// Distance evaluations of every processed tick, oldest first.
    pub fn history(&self) -> &[u64] {
        &self.history
    }

    /// Answers `queries` against the latest `objects` positions.
    ///
    /// Input is expected to be deduplicated: one position per object and
    /// one query per issuer.
    pub fn process_tick(&mut self, objects: &[(ObjectId, Point)], queries: &[Query]) -> Result<TickOutput, EngineError> {
        if let Some((id, _)) = objects.iter().find(|(_, p)| !p.is_finite()) {
            return Err(EngineError::NonFiniteObject(*id));
        }
        if let Some(q) = queries.iter().find(|q| !q.pos.is_finite()) {
            return Err(EngineError::NonFiniteQuery(q.id));
        }
        let pool = &self.pool;
        let config = &self.config;
        let rebuild = self.index.is_none() || config.rebuild.should_rebuild(&self.history);
        let mut metrics = TickMetrics {
            tick: self.ticks,
            n_objects: objects.len(),
            n_queries: queries.len(),
            rebuild,
            ..TickMetrics::default()
        };

        let t = Instant::now();
        if rebuild {
            let positions: Vec<Point> = objects.iter().map(|o| o.1).collect();
            self.index = Some(pool.install(|| build_index(&positions, config.mbr, config.th_quad, config.l_max))?);
            if self.ticks > 0 {
                self.history.clear();
            }
        }
        metrics.timings.index_build_us = t.elapsed().as_micros() as u64;
        let index = self.index.as_ref().expect("index built above");

        let (output, counters) = pool.install(|| run_tick(index, config, objects, queries, &mut metrics));
        metrics.distance_evals = counters.distance_evals;
        metrics.pruned_leaves = counters.pruned_quadrants;
        self.history.push(counters.distance_evals);
        self.ticks += 1;
        Ok(TickOutput { result: output.0, metrics, audit: output.1 })
    }
}

/// One-shot convenience: a fresh engine processing a single tick.
pub fn process_tick(
    objects: &[(ObjectId, Point)],
    queries: &[Query],
    config: &EngineConfig,
) -> Result<TickOutput, EngineError> {
    Engine::new(config.clone())?.process_tick(objects, queries)
}

fn run_tick(
    index: &QuadIndex,
    config: &EngineConfig,
    objects: &[(ObjectId, Point)],
    queries: &[Query],
    metrics: &mut TickMetrics,
) -> ((TickResult, Option<AuditReport>), PhaseCounters) {
    let params = config.kselect();
    let mut counters = PhaseCounters::default();

    let t = Instant::now();
    let indexed = index_objects(objects, index);
    let store = indexed.store;
    metrics.timings.object_index_us = t.elapsed().as_micros() as u64;
    metrics.num_leaves = index.num_leaves();
    metrics.l_deep = index.l_deep();
    metrics.clamped_objects = store.clamped();

    let t = Instant::now();
    let (qstore, tasks) = index_queries(queries, index, &store);
    metrics.timings.query_index_us = t.elapsed().as_micros() as u64;

    let t = Instant::now();
    let mut result = ResultStore::new(qstore.len(), config.k);
    counters += first_iteration(&tasks, &store, &qstore, &params, &mut result);
    debug_assert_eq!(result.check_coherence(), Ok(()));
    metrics.timings.first_iteration_us = t.elapsed().as_micros() as u64;

    let t = Instant::now();
    let mut audit_log = config.audit.then(Vec::new);
    let mut nav = NavState::new(&qstore, index);
    let mut dir = Direction::Left;
    while !nav.active(Direction::Left).is_empty() || !nav.active(Direction::Right).is_empty() {
        if nav.active(dir).is_empty() {
            dir = dir.flip();
        }
        match dir {
            Direction::Left => {
                metrics.iterations_left += 1;
                metrics.active_left.push(nav.active(dir).len());
            }
            Direction::Right => {
                metrics.iterations_right += 1;
                metrics.active_right.push(nav.active(dir).len());
            }
        }
        counters += navigate(&mut nav, dir, index, &store, &qstore, &result, audit_log.as_mut());
        let tasks = sort_and_materialize(&mut nav, dir, &store);
        counters += update_nn_lists(&tasks, &nav, dir, &store, &qstore, &params, &mut result);
        dir = dir.flip();
    }
    debug_assert_eq!(result.check_coherence(), Ok(()));
    metrics.timings.loop_us = t.elapsed().as_micros() as u64;

    let audit = audit_log.map(|log| audit_pruning(&log, &store, &qstore));
    ((emit(&qstore, &result), audit), counters)
}

/// Checks that no pruned quadrant held an object strictly below the
/// threshold that was in force when it was pruned.
fn audit_pruning(log: &[PrunedQuadrant], objects: &ObjectStore, queries: &QueryStore) -> AuditReport {
    let wrongly_pruned = log
        .iter()
        .filter(|p| {
            let q = queries.position(p.row as usize);
            let issuer = queries.issuers()[p.row as usize];
            objects.code_interval(p.codes.clone()).any(|i| {
                objects.ids()[i] != issuer && crate::geometry::dist_sq(q, objects.position(i)) < p.threshold_sq
            })
        })
        .cloned()
        .collect();
    AuditReport { pruned_checked: log.len(), wrongly_pruned }
}

/// Canonical output: input query order, each list sorted by distance then id.
fn emit(queries: &QueryStore, result: &ResultStore) -> TickResult {
    let mut out: Vec<Option<QueryNeighbours>> = vec![None; queries.len()];
    for row in 0..queries.len() {
        let mut pairs: Vec<(f64, ObjectId)> =
            result.dists_sq(row).iter().copied().zip(result.ids(row).iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out[queries.input_pos[row] as usize] = Some(QueryNeighbours {
            query_id: queries.query_ids()[row],
            neighbours: pairs.into_iter().map(|(d, id)| Neighbour { id, dist: d.sqrt() }).collect(),
        });
    }
    TickResult { queries: out.into_iter().map(|q| q.expect("every query emitted")).collect() }
}

#[cfg(test)]
mod tests;
