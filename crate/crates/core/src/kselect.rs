//! Bucket-based k-selection over query-candidate distances.
//!
//! Given a query and a candidate set, [`find_k_dist`] narrows down the k-th
//! smallest distance by repeatedly histogramming the candidates that fall
//! inside the current distance range and descending into the bucket that
//! holds the k-th rank. Distances are recomputed on every pass instead of
//! being stored, and all arithmetic is on squared distances.
//!
//! The threshold returned is always the successor (`next_up`) of the k-th
//! smallest squared distance, so "strictly below the threshold" selects
//! exactly the k nearest candidates unless the k-th distance is tied.

use thiserror::Error;

use crate::geometry::{dist_sq, Point};
use crate::ObjectId;

/// Largest supported bucket count.
pub const MAX_BINS: usize = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KSelectError {
    #[error("num_bins must be in 2..={MAX_BINS}, got {0}")]
    Bins(usize),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("max_refine_iters must be at least 1")]
    ZeroIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KSelectParams {
    pub num_bins: usize,
    pub max_refine_iters: u32,
    pub k: usize,
}

impl KSelectParams {
    pub fn new(k: usize) -> Self {
        Self { num_bins: 32, max_refine_iters: 64, k }
    }

    pub fn validate(&self) -> Result<(), KSelectError> {
        if !(2..=MAX_BINS).contains(&self.num_bins) {
            return Err(KSelectError::Bins(self.num_bins));
        }
        if self.k == 0 {
            return Err(KSelectError::ZeroK);
        }
        if self.max_refine_iters == 0 {
            return Err(KSelectError::ZeroIters);
        }
        Ok(())
    }
}

/// A set of candidates as seen from one query.
///
/// Implementations yield `(id, squared distance)` pairs in a fixed order
/// and have already removed the querying object itself.
pub trait Candidates {
    fn for_each<F: FnMut(ObjectId, f64)>(&self, f: F);
}

/// Objects of one grid cell, restricted to those strictly closer than `cutoff_sq`.
#[derive(Debug, Clone, Copy)]
pub struct CellCandidates<'a> {
    pub query: Point,
    pub exclude: Option<ObjectId>,
    pub ids: &'a [ObjectId],
    pub xs: &'a [f64],
    pub ys: &'a [f64],
    pub cutoff_sq: f64,
}

impl Candidates for CellCandidates<'_> {
    #[inline]
    fn for_each<F: FnMut(ObjectId, f64)>(&self, mut f: F) {
        for ((&id, &x), &y) in self.ids.iter().zip(self.xs).zip(self.ys) {
            let d = dist_sq(self.query, Point::new(x, y));
            if d < self.cutoff_sq && Some(id) != self.exclude {
                f(id, d);
            }
        }
    }
}

/// Candidates with precomputed squared distances, e.g. a current result list.
#[derive(Debug, Clone, Copy)]
pub struct ListCandidates<'a> {
    pub ids: &'a [ObjectId],
    pub dists_sq: &'a [f64],
}

impl Candidates for ListCandidates<'_> {
    #[inline]
    fn for_each<F: FnMut(ObjectId, f64)>(&self, mut f: F) {
        for (&id, &d) in self.ids.iter().zip(self.dists_sq) {
            f(id, d);
        }
    }
}

/// Union of two candidate sets, visited first then second.
#[derive(Debug, Clone, Copy)]
pub struct Chain<A, B>(pub A, pub B);

impl<A: Candidates, B: Candidates> Candidates for Chain<A, B> {
    #[inline]
    fn for_each<F: FnMut(ObjectId, f64)>(&self, mut f: F) {
        self.0.for_each(&mut f);
        self.1.for_each(&mut f);
    }
}

/// Range and size of a candidate set's squared distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistSpan {
    pub min_sq: f64,
    pub max_sq: f64,
    pub count: usize,
}

impl DistSpan {
    pub fn min(&self) -> f64 {
        self.min_sq.sqrt()
    }

    pub fn max(&self) -> f64 {
        self.max_sq.sqrt()
    }
}

/// Exact minimum and maximum distance; `None` when there are no candidates.
pub fn find_min_max_dist<C: Candidates>(candidates: &C) -> Option<DistSpan> {
    let mut span = DistSpan { min_sq: f64::INFINITY, max_sq: f64::NEG_INFINITY, count: 0 };
    candidates.for_each(|_, d| {
        span.min_sq = span.min_sq.min(d);
        span.max_sq = span.max_sq.max(d);
        span.count += 1;
    });
    (span.count > 0).then_some(span)
}

/// How [`find_k_dist`] stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// At most k candidates: everything qualifies.
    Immediate,
    /// A bucket boundary enclosed exactly k candidates.
    Count,
    /// The surviving bucket collapsed to a single tied distance.
    Tie,
    /// `max_refine_iters` exhausted; the bucket was resolved by selection.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KDist {
    /// Candidates with squared distance strictly below this are selected.
    pub threshold_sq: f64,
    /// Histogram passes performed.
    pub iterations: u32,
    pub termination: Termination,
}

impl KDist {
    pub fn threshold(&self) -> f64 {
        self.threshold_sq.sqrt()
    }
}

/// Finds the distance threshold enclosing the k nearest candidates.
///
/// `span` must come from [`find_min_max_dist`] over the same candidates.
pub fn find_k_dist<C: Candidates>(candidates: &C, span: DistSpan, params: &KSelectParams) -> KDist {
    let k = params.k;
    if span.count <= k {
        return KDist { threshold_sq: f64::INFINITY, iterations: 0, termination: Termination::Immediate };
    }
    let nb = params.num_bins.clamp(2, MAX_BINS);
    let mut lo = span.min_sq;
    let mut hi = span.max_sq;
    // candidates strictly below `lo`, all of which are among the k nearest
    let mut below = 0usize;
    let mut counts = [0usize; MAX_BINS];
    let mut mins = [0f64; MAX_BINS];
    let mut maxs = [0f64; MAX_BINS];

    for iter in 1..=params.max_refine_iters {
        if lo >= hi {
            return KDist { threshold_sq: lo.next_up(), iterations: iter - 1, termination: Termination::Tie };
        }
        let width = (hi - lo) / nb as f64;
        counts[..nb].fill(0);
        mins[..nb].fill(f64::INFINITY);
        maxs[..nb].fill(f64::NEG_INFINITY);
        candidates.for_each(|_, d| {
            if d >= lo && d <= hi {
                // monotone in d, so equal distances never straddle buckets
                let b = (((d - lo) / width) as usize).min(nb - 1);
                counts[b] += 1;
                mins[b] = mins[b].min(d);
                maxs[b] = maxs[b].max(d);
            }
        });

        let need = k - below;
        let mut acc = 0usize;
        let mut b = 0usize;
        while acc + counts[b] < need {
            acc += counts[b];
            b += 1;
        }
        if acc + counts[b] == need {
            return KDist { threshold_sq: maxs[b].next_up(), iterations: iter, termination: Termination::Count };
        }
        below += acc;
        lo = mins[b];
        hi = maxs[b];
    }

    if lo >= hi {
        return KDist {
            threshold_sq: lo.next_up(),
            iterations: params.max_refine_iters,
            termination: Termination::Tie,
        };
    }
    let mut rest = Vec::new();
    candidates.for_each(|_, d| {
        if d >= lo && d <= hi {
            rest.push(d);
        }
    });
    let need = k - below;
    let (_, kth, _) = rest.select_nth_unstable_by(need - 1, f64::total_cmp);
    KDist {
        threshold_sq: kth.next_up(),
        iterations: params.max_refine_iters,
        termination: Termination::Fallback,
    }
}

/// Writes candidates strictly below `threshold_sq` into a result lane.
///
/// At most `k = ids.len()` entries are written. When more than k candidates
/// qualify (the k-th distance is tied) a closer candidate replaces the last
/// written farthest one, so the lane ends up with the k smallest distances
/// and tied members are kept in scan order. Returns the number written and
/// their maximum squared distance (0 when nothing was written).
pub fn scan_copy_under<C: Candidates>(
    candidates: &C,
    threshold_sq: f64,
    ids: &mut [ObjectId],
    dists_sq: &mut [f64],
) -> (usize, f64) {
    let k = ids.len().min(dists_sq.len());
    let mut n = 0usize;
    candidates.for_each(|id, d| {
        if d >= threshold_sq {
            return;
        }
        if n < k {
            ids[n] = id;
            dists_sq[n] = d;
            n += 1;
            return;
        }
        let mut far = 0;
        for j in 1..k {
            if dists_sq[j] >= dists_sq[far] {
                far = j;
            }
        }
        if k > 0 && d < dists_sq[far] {
            ids[far] = id;
            dists_sq[far] = d;
        }
    });
    let maxdist = dists_sq[..n].iter().copied().fold(0.0, f64::max);
    (n, maxdist)
}

/// Convenience wrapper running the three stages over one candidate set.
pub fn select_k_nearest<C: Candidates>(
    candidates: &C,
    params: &KSelectParams,
    ids: &mut [ObjectId],
    dists_sq: &mut [f64],
) -> (usize, f64, Option<KDist>) {
    let Some(span) = find_min_max_dist(candidates) else {
        return (0, 0.0, None);
    };
    let kd = find_k_dist(candidates, span, params);
    let (n, maxd) = scan_copy_under(candidates, kd.threshold_sq, &mut ids[..params.k], &mut dists_sq[..params.k]);
    (n, maxd, Some(kd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(d: &[f64]) -> (Vec<ObjectId>, Vec<f64>) {
        ((0..d.len() as ObjectId).collect(), d.to_vec())
    }

    fn sorted_smallest(d: &[f64], k: usize) -> Vec<f64> {
        let mut v = d.to_vec();
        v.sort_by(f64::total_cmp);
        v.truncate(k);
        v
    }

    fn run(d: &[f64], params: &KSelectParams) -> (Vec<f64>, Option<KDist>) {
        let (ids, ds) = list(d);
        let c = ListCandidates { ids: &ids, dists_sq: &ds };
        let mut oi = vec![0; params.k];
        let mut od = vec![0.0; params.k];
        let (n, maxd, kd) = select_k_nearest(&c, params, &mut oi, &mut od);
        let mut out = od[..n].to_vec();
        assert_eq!(maxd, out.iter().copied().fold(0.0, f64::max));
        out.sort_by(f64::total_cmp);
        (out, kd)
    }

    #[test]
    fn min_max_examples() {
        let ids = [1, 2, 3];
        let xs = [0.0, 3.0, 6.0];
        let ys = [1.0, 4.0, 8.0];
        let c = CellCandidates {
            query: Point::new(0.0, 0.0),
            exclude: None,
            ids: &ids,
            xs: &xs,
            ys: &ys,
            cutoff_sq: f64::INFINITY,
        };
        let s = find_min_max_dist(&c).unwrap();
        assert_eq!((s.min(), s.max(), s.count), (1.0, 10.0, 3));

        let one = CellCandidates { ids: &ids[..1], xs: &xs[..1], ys: &ys[..1], ..c };
        let s = find_min_max_dist(&one).unwrap();
        assert_eq!(s.min_sq, s.max_sq);

        let selfonly = CellCandidates { exclude: Some(1), ..one };
        assert!(find_min_max_dist(&selfonly).is_none());
    }

    #[test]
    fn equidistant_span_is_degenerate() {
        let (ids, ds) = list(&[4.0; 6]);
        let s = find_min_max_dist(&ListCandidates { ids: &ids, dists_sq: &ds }).unwrap();
        assert_eq!(s.min_sq, s.max_sq);
    }

    #[test]
    fn fewer_than_k_returns_infinity() {
        let (ids, ds) = list(&[1.0, 2.0, 3.0]);
        let c = ListCandidates { ids: &ids, dists_sq: &ds };
        let span = find_min_max_dist(&c).unwrap();
        let kd = find_k_dist(&c, span, &KSelectParams::new(5));
        assert_eq!(kd.threshold_sq, f64::INFINITY);
        assert_eq!(kd.termination, Termination::Immediate);
        let mut oi = [0; 5];
        let mut od = [0.0; 5];
        let (n, maxd) = scan_copy_under(&c, kd.threshold_sq, &mut oi, &mut od);
        assert_eq!((n, maxd), (3, 3.0));
    }

    #[test]
    fn two_bins_four_distances() {
        // squared distances of {1,2,3,4}
        let d = [1.0, 4.0, 9.0, 16.0];
        let (ids, ds) = list(&d);
        let c = ListCandidates { ids: &ids, dists_sq: &ds };
        let span = find_min_max_dist(&c).unwrap();
        let params = KSelectParams { num_bins: 2, max_refine_iters: 64, k: 2 };
        let kd = find_k_dist(&c, span, &params);
        assert_eq!(kd.termination, Termination::Count);
        assert_eq!(kd.iterations, 1);
        assert_eq!(d.iter().filter(|&&x| x < kd.threshold_sq).count(), 2);
        assert!(kd.threshold_sq > 4.0 && kd.threshold_sq < 9.0);
    }

    #[test]
    fn tie_group_is_capped_at_k() {
        let d = [7.0; 9];
        for k in [1, 2, 4] {
            let (out, kd) = run(&d, &KSelectParams::new(k));
            assert_eq!(out, vec![7.0; k]);
            assert_eq!(kd.unwrap().termination, Termination::Tie);
        }
    }

    #[test]
    fn tie_cap_keeps_strictly_closer_candidates() {
        // closer candidates scanned after the tied ones must still win
        let d = [5.0, 5.0, 5.0, 1.0, 5.0, 2.0];
        let (out, _) = run(&d, &KSelectParams::new(3));
        assert_eq!(out, vec![1.0, 2.0, 5.0]);
    }

    #[test]
    fn ties_taken_in_scan_order() {
        let ids = [10, 11, 12, 13];
        let ds = [3.0, 3.0, 3.0, 1.0];
        let c = ListCandidates { ids: &ids, dists_sq: &ds };
        let mut oi = [0; 2];
        let mut od = [0.0; 2];
        let (n, _) = scan_copy_under(&c, 3.0f64.next_up(), &mut oi, &mut od);
        assert_eq!(n, 2);
        let mut got = oi.to_vec();
        got.sort();
        assert_eq!(got, vec![10, 13]);
    }

    #[test]
    fn scan_with_tiny_threshold_writes_nothing() {
        let (ids, ds) = list(&[1.0, 2.0]);
        let c = ListCandidates { ids: &ids, dists_sq: &ds };
        let mut oi = [0; 2];
        let mut od = [0.0; 2];
        assert_eq!(scan_copy_under(&c, 0.5, &mut oi, &mut od), (0, 0.0));
    }

    #[test]
    fn fallback_path_is_exact() {
        let d: Vec<f64> = (0..500).map(|i| ((i * 7919) % 1000) as f64 * 0.001).collect();
        let params = KSelectParams { num_bins: 2, max_refine_iters: 1, k: 17 };
        let (out, kd) = run(&d, &params);
        assert_eq!(out, sorted_smallest(&d, 17));
        assert_eq!(kd.unwrap().termination, Termination::Fallback);
    }

    #[test]
    fn params_validation() {
        assert!(KSelectParams::new(4).validate().is_ok());
        assert_eq!(KSelectParams::new(0).validate(), Err(KSelectError::ZeroK));
        let p = KSelectParams { num_bins: 1, ..KSelectParams::new(4) };
        assert_eq!(p.validate(), Err(KSelectError::Bins(1)));
    }

    #[test]
    fn cell_candidates_respect_cutoff_and_self() {
        let ids = [1, 2, 3];
        let xs = [1.0, 2.0, 3.0];
        let ys = [0.0, 0.0, 0.0];
        let c = CellCandidates {
            query: Point::new(0.0, 0.0),
            exclude: Some(2),
            ids: &ids,
            xs: &xs,
            ys: &ys,
            cutoff_sq: 9.0,
        };
        let mut seen = Vec::new();
        c.for_each(|id, d| seen.push((id, d)));
        assert_eq!(seen, vec![(1, 1.0)]);
    }

    proptest! {
        #[test]
        fn matches_full_sort(
            base in prop::collection::vec(0u32..2000, 1..400),
            k in prop::sample::select(vec![1usize, 2, 4, 32]),
            bins in prop::sample::select(vec![2usize, 4, 32]),
        ) {
            let d: Vec<f64> = base.iter().map(|&v| v as f64 * 0.25).collect();
            let (out, _) = run(&d, &KSelectParams { num_bins: bins, max_refine_iters: 64, k });
            prop_assert_eq!(out, sorted_smallest(&d, k));
        }

        #[test]
        fn enlarging_never_raises_kdist(
            a in prop::collection::vec(0.0f64..100.0, 1..200),
            extra in prop::collection::vec(0.0f64..100.0, 0..200),
            k in 1usize..20,
        ) {
            let params = KSelectParams::new(k);
            let (ia, da) = list(&a);
            let ca = ListCandidates { ids: &ia, dists_sq: &da };
            let ka = find_k_dist(&ca, find_min_max_dist(&ca).unwrap(), &params);
            let mut b = a.clone();
            b.extend(extra);
            let (ib, db) = list(&b);
            let cb = ListCandidates { ids: &ib, dists_sq: &db };
            let kb = find_k_dist(&cb, find_min_max_dist(&cb).unwrap(), &params);
            prop_assert!(kb.threshold_sq <= ka.threshold_sq);
        }

        #[test]
        fn self_never_selected(
            pts in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..100),
            who in any::<prop::sample::Index>(),
            k in 1usize..40,
        ) {
            let ids: Vec<ObjectId> = (0..pts.len() as ObjectId).collect();
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let me = who.index(pts.len());
            let c = CellCandidates {
                query: Point::new(xs[me], ys[me]),
                exclude: Some(me as ObjectId),
                ids: &ids, xs: &xs, ys: &ys,
                cutoff_sq: f64::INFINITY,
            };
            let mut oi = vec![0; k];
            let mut od = vec![0.0; k];
            let (n, _, _) = select_k_nearest(&c, &KSelectParams::new(k), &mut oi, &mut od);
            prop_assert_eq!(n, k.min(pts.len() - 1));
            prop_assert!(!oi[..n].contains(&(me as ObjectId)));
        }
    }
}
