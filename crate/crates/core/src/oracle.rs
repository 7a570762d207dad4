//! Brute-force reference answers and result comparison.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::engine::{Neighbour, Query, QueryNeighbours, TickResult};
use crate::geometry::{dist_sq, Point};
use crate::ObjectId;

/// Exact k-NN of every query by a full scan, excluding the issuer.
///
/// Lists are ordered by distance, ties broken by id, so the answer is
/// unique for a given input.
pub fn brute_force_knn(objects: &[(ObjectId, Point)], queries: &[Query], k: usize) -> TickResult {
    let by_key = |a: &(f64, ObjectId), b: &(f64, ObjectId)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let lists = queries
        .par_iter()
        .map_init(Vec::new, |all: &mut Vec<(f64, ObjectId)>, q| {
            all.clear();
            all.extend(objects.iter().filter(|(id, _)| *id != q.issuer).map(|&(id, p)| (dist_sq(q.pos, p), id)));
            if all.len() > k {
                all.select_nth_unstable_by(k, by_key);
                all.truncate(k);
            }
            all.sort_by(by_key);
            QueryNeighbours {
                query_id: q.id,
                neighbours: all.iter().map(|&(d, id)| Neighbour { id, dist: d.sqrt() }).collect(),
            }
        })
        .collect();
    TickResult { queries: lists }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    /// Same ids in the same order, same distances.
    Exact,
    /// Same distance multiset; ids differ only among objects tied at the boundary or with each other.
    TieEquivalent,
    Mismatch,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Exact => "exact",
            Verdict::TieEquivalent => "tie_equivalent",
            Verdict::Mismatch => "mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryVerdict {
    pub query_id: u64,
    pub verdict: Verdict,
    pub engine_maxdist: f64,
    pub oracle_maxdist: f64,
}

/// Compares one list against the reference.
pub fn compare_lists(engine: &QueryNeighbours, oracle: &QueryNeighbours) -> QueryVerdict {
    let verdict = if engine.neighbours == oracle.neighbours {
        Verdict::Exact
    } else if engine.neighbours.len() == oracle.neighbours.len()
        && engine.neighbours.iter().zip(&oracle.neighbours).all(|(a, b)| a.dist == b.dist)
        && distinct_ids(engine)
    {
        Verdict::TieEquivalent
    } else {
        Verdict::Mismatch
    };
    QueryVerdict {
        query_id: oracle.query_id,
        verdict,
        engine_maxdist: engine.maxdist(),
        oracle_maxdist: oracle.maxdist(),
    }
}

fn distinct_ids(list: &QueryNeighbours) -> bool {
    let mut ids: Vec<ObjectId> = list.neighbours.iter().map(|n| n.id).collect();
    ids.sort_unstable();
    ids.windows(2).all(|w| w[0] != w[1])
}

/// Per-query verdicts; queries are matched by position, and a differing
/// query id or a missing list is a mismatch.
pub fn compare_results(engine: &TickResult, oracle: &TickResult) -> Vec<QueryVerdict> {
    let empty = QueryNeighbours { query_id: u64::MAX, neighbours: Vec::new() };
    oracle
        .queries
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let e = engine.queries.get(i).filter(|e| e.query_id == o.query_id).unwrap_or(&empty);
            let mut v = compare_lists(e, o);
            if e.query_id != o.query_id {
                v.verdict = Verdict::Mismatch;
            }
            v
        })
        .collect()
}

pub fn all_match(verdicts: &[QueryVerdict]) -> bool {
    verdicts.iter().all(|v| v.verdict != Verdict::Mismatch)
}

pub const REPORT_HEADER: &str = "query_id,verdict,engine_maxdist,oracle_maxdist";

/// CSV report, one line per query.
pub fn report_csv(verdicts: &[QueryVerdict]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for v in verdicts {
        let _ = writeln!(out, "{},{},{},{}", v.query_id, v.verdict.as_str(), v.engine_maxdist, v.oracle_maxdist);
    }
    out
}
