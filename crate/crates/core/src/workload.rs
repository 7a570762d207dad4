//! Synthetic moving-object workloads.
//!
//! Objects are placed at tick 0 according to one of three distributions
//! and then move by a bounded random walk: every tick each object's heading
//! and speed are perturbed, the speed never exceeds `max_speed`, and the
//! object bounces off the region border (or, on a network, off the end of
//! its segment).
//!
//! All randomness comes from one `ChaCha8Rng` seeded with `seed`, so a `WorkloadSpec`
//! and a seed fully determine the batch sequence on every platform.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use thiserror::Error;

use crate::engine::Query;
use crate::geometry::{Point, Rect};
use crate::ObjectId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    Uniform,
    Gaussian,
    Network,
}

impl std::str::FromStr for Distribution {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "gaussian" => Ok(Distribution::Gaussian),
            "network" => Ok(Distribution::Network),
            _ => Err(WorkloadError::UnknownDistribution(s.to_string())),
        }
    }
}

impl std::fmt::Display for Distribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Distribution::Uniform => "uniform",
            Distribution::Gaussian => "gaussian",
            Distribution::Network => "network",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn length(&self) -> f64 {
        crate::geometry::dist(self.a, self.b)
    }

    pub fn at(&self, s: f64) -> Point {
        let len = self.length();
        let t = if len > 0.0 { s / len } else { 0.0 };
        Point::new(self.a.x + (self.b.x - self.a.x) * t, self.a.y + (self.b.y - self.a.y) * t)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("unknown distribution `{0}`")]
    UnknownDistribution(String),
    #[error("gaussian workload needs at least one hotspot")]
    ZeroHotspots,
    #[error("sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("network workload needs at least one segment of positive length")]
    EmptyNetwork,
    #[error("segment {0} leaves the region")]
    SegmentOutsideRegion(usize),
    #[error("invalid region {0:?}")]
    InvalidRegion(Rect),
    #[error("max_speed must be non-negative and finite, got {0}")]
    BadSpeed(f64),
    #[error("query_rate must lie in [0, 1], got {0}")]
    BadRate(f64),
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub n_objects: usize,
    pub distribution: Distribution,
    pub hotspots: usize,
    pub sigma: f64,
    pub network_edges: Vec<Segment>,
    pub region: Rect,
    pub max_speed: f64,
    pub ticks: usize,
    pub query_rate: f64,
    pub k: usize,
    pub seed: u64,
}

pub const DEFAULT_REGION_SIDE: f64 = 22_500.0;

impl Default for WorkloadSpec {
    fn default() -> Self {
        let region = Rect::square(DEFAULT_REGION_SIDE);
        Self {
            n_objects: 10_000,
            distribution: Distribution::Uniform,
            hotspots: 25,
            sigma: 500.0,
            network_edges: Vec::new(),
            region,
            max_speed: 200.0,
            ticks: 30,
            query_rate: 1.0,
            k: 32,
            seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !self.region.is_valid() {
            return Err(WorkloadError::InvalidRegion(self.region));
        }
        if !(self.max_speed >= 0.0 && self.max_speed.is_finite()) {
            return Err(WorkloadError::BadSpeed(self.max_speed));
        }
        if !(0.0..=1.0).contains(&self.query_rate) {
            return Err(WorkloadError::BadRate(self.query_rate));
        }
        if self.k == 0 {
            return Err(WorkloadError::ZeroK);
        }
        match self.distribution {
            Distribution::Uniform => {}
            Distribution::Gaussian => {
                if self.hotspots == 0 {
                    return Err(WorkloadError::ZeroHotspots);
                }
                if !(self.sigma > 0.0 && self.sigma.is_finite()) {
                    return Err(WorkloadError::BadSigma(self.sigma));
                }
            }
            Distribution::Network => {
                for (i, s) in self.network_edges.iter().enumerate() {
                    if !self.region.contains(s.a) || !self.region.contains(s.b) {
                        return Err(WorkloadError::SegmentOutsideRegion(i));
                    }
                }
                if !self.network_edges.iter().any(|s| s.length() > 0.0) {
                    return Err(WorkloadError::EmptyNetwork);
                }
            }
        }
        Ok(())
    }
}

/// A regular street grid of `lines` horizontal and `lines` vertical
/// segments spanning `region`, used when no network is supplied.
pub fn grid_network(region: &Rect, lines: usize) -> Vec<Segment> {
    let mut edges = Vec::with_capacity(2 * lines);
    for i in 0..lines {
        let f = (i as f64 + 0.5) / lines as f64;
        let x = region.x_lo + f * region.width();
        let y = region.y_lo + f * region.height();
        edges.push(Segment { a: Point::new(region.x_lo, y), b: Point::new(region.x_hi, y) });
        edges.push(Segment { a: Point::new(x, region.y_lo), b: Point::new(x, region.y_hi) });
    }
    edges
}

/// Objects and queries of one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickBatch {
    pub tick: u64,
    pub k: usize,
    pub positions: Vec<(ObjectId, Point)>,
    /// Query ids equal issuer ids; centers are the issuers' positions.
    pub queries: Vec<Query>,
}

/// Per-object heading (radians) and speed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Motion {
    pub heading: Vec<f64>,
    pub speed: Vec<f64>,
}

impl Motion {
    pub fn random(n: usize, max_speed: f64, rng: &mut impl Rng) -> Self {
        let heading = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
        let speed = (0..n).map(|_| rng.random::<f64>() * speed_cap(max_speed)).collect();
        Self { heading, speed }
    }
}

/// Keeps a step strictly under `max_speed` even after rounding.
fn speed_cap(max_speed: f64) -> f64 {
    max_speed * (1.0 - 1e-9)
}

fn perturb(heading: &mut f64, speed: &mut f64, max_speed: f64, rng: &mut impl Rng) {
    *heading += rng.random_range(-0.5..0.5);
    *speed = (*speed + rng.random_range(-0.1..0.1) * max_speed).clamp(0.0, speed_cap(max_speed));
}

/// Folds `v` back into `[lo, hi]`; returns whether it bounced.
fn reflect(v: f64, lo: f64, hi: f64) -> (f64, bool) {
    if v < lo {
        ((2.0 * lo - v).min(hi), true)
    } else if v > hi {
        ((2.0 * hi - v).max(lo), true)
    } else {
        (v, false)
    }
}

/// Free movement in the plane: perturbs every heading and speed, moves,
/// and bounces at the region border. No object moves farther than
/// `max_speed`.
pub fn step_movement(positions: &mut [Point], motion: &mut Motion, max_speed: f64, region: &Rect, rng: &mut impl Rng) {
    if max_speed == 0.0 {
        return;
    }
    for (i, p) in positions.iter_mut().enumerate() {
        let (h, s) = (&mut motion.heading[i], &mut motion.speed[i]);
        perturb(h, s, max_speed, rng);
        let (x, bx) = reflect(p.x + *s * h.cos(), region.x_lo, region.x_hi);
        let (y, by) = reflect(p.y + *s * h.sin(), region.y_lo, region.y_hi);
        if bx {
            *h = PI - *h;
        }
        if by {
            *h = -*h;
        }
        *p = Point::new(x, y);
    }
}

/// Network movement state: each object sits at arc length `offset` on `edge`.
#[derive(Debug, Clone, PartialEq)]
struct NetworkState {
    edge: Vec<usize>,
    offset: Vec<f64>,
    forward: Vec<bool>,
    speed: Vec<f64>,
}

fn step_network(state: &mut NetworkState, edges: &[Segment], max_speed: f64, rng: &mut impl Rng) {
    if max_speed == 0.0 {
        return;
    }
    for i in 0..state.edge.len() {
        let mut unused = 0.0;
        perturb(&mut unused, &mut state.speed[i], max_speed, rng);
        let len = edges[state.edge[i]].length();
        if len == 0.0 {
            continue;
        }
        let period = 2.0 * len;
        // unfold the back-and-forth path onto [0, 2 len)
        let mut u = if state.forward[i] { state.offset[i] } else { period - state.offset[i] };
        u = (u + state.speed[i]).rem_euclid(period);
        if u <= len {
            state.offset[i] = u;
            state.forward[i] = true;
        } else {
            state.offset[i] = period - u;
            state.forward[i] = false;
        }
    }
}

enum Mover {
    Free { positions: Vec<Point>, motion: Motion },
    Network { state: NetworkState },
}

/// Lazily generated batch sequence.
pub struct Workload {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    mover: Mover,
    tick: u64,
}

impl Workload {
    pub fn new(spec: WorkloadSpec) -> Result<Self, WorkloadError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.n_objects;
        let r = spec.region;
        let mover = match spec.distribution {
            Distribution::Uniform => {
                let positions = (0..n).map(|_| uniform_point(&r, &mut rng)).collect();
                Mover::Free { positions, motion: Motion::random(n, spec.max_speed, &mut rng) }
            }
            Distribution::Gaussian => {
                let centers: Vec<Point> = (0..spec.hotspots).map(|_| uniform_point(&r, &mut rng)).collect();
                let normal = Normal::new(0.0, spec.sigma).map_err(|_| WorkloadError::BadSigma(spec.sigma))?;
                let positions = (0..n)
                    .map(|i| {
                        let c = centers[i % centers.len()];
                        r.clamp(Point::new(c.x + normal.sample(&mut rng), c.y + normal.sample(&mut rng)))
                    })
                    .collect();
                Mover::Free { positions, motion: Motion::random(n, spec.max_speed, &mut rng) }
            }
            Distribution::Network => {
                let mut cumulative = Vec::with_capacity(spec.network_edges.len());
                let mut total = 0.0;
                for s in &spec.network_edges {
                    total += s.length();
                    cumulative.push(total);
                }
                let mut state = NetworkState {
                    edge: Vec::with_capacity(n),
                    offset: Vec::with_capacity(n),
                    forward: Vec::with_capacity(n),
                    speed: Vec::with_capacity(n),
                };
                for _ in 0..n {
                    let u = rng.random::<f64>() * total;
                    let e = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
                    let start = if e == 0 { 0.0 } else { cumulative[e - 1] };
                    state.edge.push(e);
                    state.offset.push((u - start).clamp(0.0, spec.network_edges[e].length()));
                    state.forward.push(rng.random::<bool>());
                    state.speed.push(rng.random::<f64>() * speed_cap(spec.max_speed));
                }
                Mover::Network { state }
            }
        };
        Ok(Self { spec, rng, mover, tick: 0 })
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    fn positions(&self) -> Vec<Point> {
        match &self.mover {
            Mover::Free { positions, .. } => positions.clone(),
            Mover::Network { state } => state
                .edge
                .iter()
                .zip(&state.offset)
                .map(|(&e, &s)| self.spec.region.clamp(self.spec.network_edges[e].at(s)))
                .collect(),
        }
    }

    fn advance(&mut self) {
        let max_speed = self.spec.max_speed;
        match &mut self.mover {
            Mover::Free { positions, motion } => {
                step_movement(positions, motion, max_speed, &self.spec.region, &mut self.rng)
            }
            Mover::Network { state } => step_network(state, &self.spec.network_edges, max_speed, &mut self.rng),
        }
    }
}

impl Iterator for Workload {
    type Item = TickBatch;

    fn next(&mut self) -> Option<TickBatch> {
        if self.tick as usize >= self.spec.ticks {
            return None;
        }
        if self.tick > 0 {
            self.advance();
        }
        let points = self.positions();
        let rate = self.spec.query_rate;
        let mut queries = Vec::new();
        for (i, &pos) in points.iter().enumerate() {
            if rate >= 1.0 || self.rng.random::<f64>() < rate {
                queries.push(Query { id: i as u64, issuer: i as ObjectId, pos });
            }
        }
        let positions = points.into_iter().enumerate().map(|(i, p)| (i as ObjectId, p)).collect();
        let batch = TickBatch { tick: self.tick, k: self.spec.k, positions, queries };
        self.tick += 1;
        Some(batch)
    }
}

/// All batches of `spec` at once.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<TickBatch>, WorkloadError> {
    Ok(Workload::new(spec.clone())?.collect())
}

fn uniform_point(r: &Rect, rng: &mut impl Rng) -> Point {
    Point::new(r.x_lo + rng.random::<f64>() * r.width(), r.y_lo + rng.random::<f64>() * r.height())
}
