use super::*;
use crate::oracle::{all_match, brute_force_knn, compare_results};
use crate::quadindex::index_objects;
use crate::workload::{generate, Distribution, WorkloadSpec};

fn pts(v: &[(f64, f64)]) -> Vec<(ObjectId, Point)> {
    v.iter().enumerate().map(|(i, &(x, y))| (i as ObjectId, Point::new(x, y))).collect()
}

fn self_queries(objs: &[(ObjectId, Point)]) -> Vec<Query> {
    objs.iter().map(|&(id, pos)| Query { id, issuer: id, pos }).collect()
}

fn config(k: usize, th_quad: usize, l_max: u32) -> EngineConfig {
    EngineConfig { th_quad, l_max, audit: true, ..EngineConfig::new(Rect::unit(), k) }
}

fn ids(r: &QueryNeighbours) -> Vec<ObjectId> {
    r.neighbours.iter().map(|n| n.id).collect()
}

#[test]
fn two_objects_find_each_other() {
    let objs = pts(&[(0.1, 0.1), (0.2, 0.2)]);
    let out = process_tick(&objs, &self_queries(&objs), &config(1, 4, 4)).unwrap();
    assert_eq!(ids(&out.result.queries[0]), vec![1]);
    assert_eq!(ids(&out.result.queries[1]), vec![0]);
}

#[test]
fn lone_object_has_no_neighbours() {
    let objs = pts(&[(0.5, 0.5)]);
    let out = process_tick(&objs, &self_queries(&objs), &config(3, 4, 4)).unwrap();
    assert!(out.result.queries[0].neighbours.is_empty());
    assert_eq!(out.result.queries[0].maxdist(), 0.0);
}

#[test]
fn collinear_ties() {
    let objs = pts(&[(0.1, 0.5), (0.3, 0.5), (0.5, 0.5), (0.7, 0.5), (0.9, 0.5)]);
    let queries = self_queries(&objs);
    let out = process_tick(&objs, &queries, &config(1, 1, 4)).unwrap();
    assert_eq!(ids(&out.result.queries[0]), vec![1]);
    assert_eq!(ids(&out.result.queries[4]), vec![3]);
    for i in 1..4 {
        let got = ids(&out.result.queries[i])[0];
        assert!(got == i as u64 - 1 || got == i as u64 + 1);
    }
    assert!(all_match(&compare_results(&out.result, &brute_force_knn(&objs, &queries, 1))));
}

#[test]
fn empty_tick_and_queries_without_objects() {
    let out = process_tick(&[], &[], &config(2, 4, 4)).unwrap();
    assert!(out.result.queries.is_empty());
    let q = [Query { id: 9, issuer: 100, pos: Point::new(0.3, 0.3) }];
    let out = process_tick(&[], &q, &config(2, 4, 4)).unwrap();
    assert_eq!(out.result.queries[0].query_id, 9);
    assert!(out.result.queries[0].neighbours.is_empty());
}

#[test]
fn bad_config_and_input_rejected() {
    assert_eq!(Engine::new(config(0, 4, 4)).err(), Some(EngineError::ZeroK));
    assert!(matches!(Engine::new(config(1, 0, 4)), Err(EngineError::Index(_))));
    let objs = [(3, Point::new(f64::NAN, 0.0))];
    assert_eq!(process_tick(&objs, &[], &config(1, 4, 4)).err(), Some(EngineError::NonFiniteObject(3)));
}

/// Four level-1 leaves; SW holds the query and one other object.
fn four_leaf_setup() -> (QuadIndex, ObjectStore, Vec<(ObjectId, Point)>) {
    let objs = pts(&[
        (0.1, 0.1),
        (0.2, 0.2),
        (0.6, 0.1),
        (0.7, 0.2),
        (0.8, 0.3),
        (0.1, 0.6),
        (0.2, 0.7),
        (0.3, 0.8),
        (0.6, 0.6),
        (0.7, 0.7),
        (0.8, 0.8),
    ]);
    let positions: Vec<Point> = objs.iter().map(|o| o.1).collect();
    let index = build_index(&positions, Rect::unit(), 3, 1).unwrap();
    assert_eq!(index.num_leaves(), 4);
    let store = index_objects(&objs, &index).store;
    (index, store, objs)
}

#[test]
fn right_navigation_moves_to_next_leaf() {
    let (index, store, objs) = four_leaf_setup();
    let queries = [Query { id: 0, issuer: 0, pos: objs[0].1 }];
    let params = KSelectParams::new(4);
    let (qs, tasks) = index_queries(&queries, &index, &store);
    let mut result = ResultStore::new(1, 4);
    first_iteration(&tasks, &store, &qs, &params, &mut result);
    assert_eq!(result.numres(0), 1);

    let mut nav = NavState::new(&qs, &index);
    navigate(&mut nav, Direction::Right, &index, &store, &qs, &result, None);
    assert_eq!(nav.assigned(0), Some(1));
    assert_eq!(nav.visited(0), 0..2);
    // nothing lies left of leaf 0
    navigate(&mut nav, Direction::Left, &index, &store, &qs, &result, None);
    assert_eq!(nav.assigned(0), None);
    let left = sort_and_materialize(&mut nav, Direction::Left, &store);
    assert!(left.is_empty());
    assert!(nav.active(Direction::Left).is_empty());
}

#[test]
fn full_list_with_far_leaves_goes_inactive_by_pruning() {
    let (index, store, objs) = four_leaf_setup();
    // k=1: the SW neighbour at distance ~0.14 rules out the other quadrants
    let queries = [Query { id: 0, issuer: 0, pos: objs[0].1 }];
    let params = KSelectParams::new(1);
    let (qs, tasks) = index_queries(&queries, &index, &store);
    let mut result = ResultStore::new(1, 1);
    first_iteration(&tasks, &store, &qs, &params, &mut result);
    let mut nav = NavState::new(&qs, &index);
    let mut log = Vec::new();
    let c = navigate(&mut nav, Direction::Right, &index, &store, &qs, &result, Some(&mut log));
    assert_eq!(nav.assigned(0), None);
    assert_eq!(c.pruned_quadrants, 3);
    assert_eq!(log.len(), 3);
}

#[test]
fn update_merges_current_list_with_cell() {
    // query in SW with one neighbour at 5; SE holds objects at 3 and 7
    let objs = pts(&[(9.0, 1.0), (4.0, 1.0), (12.0, 1.0), (16.0, 1.0)]);
    let mbr = Rect::square(20.0);
    let positions: Vec<Point> = objs.iter().map(|o| o.1).collect();
    let index = build_index(&positions, mbr, 2, 1).unwrap();
    let store = index_objects(&objs, &index).store;
    let queries = [Query { id: 0, issuer: 0, pos: objs[0].1 }];
    let params = KSelectParams::new(2);
    let (qs, tasks) = index_queries(&queries, &index, &store);
    let mut result = ResultStore::new(1, 2);
    first_iteration(&tasks, &store, &qs, &params, &mut result);
    assert_eq!(result.ids(0), &[1]);

    let mut nav = NavState::new(&qs, &index);
    navigate(&mut nav, Direction::Right, &index, &store, &qs, &result, None);
    let t = sort_and_materialize(&mut nav, Direction::Right, &store);
    update_nn_lists(&t, &nav, Direction::Right, &store, &qs, &params, &mut result);
    let mut got: Vec<(f64, u64)> = result.dists_sq(0).iter().copied().zip(result.ids(0).iter().copied()).collect();
    got.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(got, vec![(9.0, 2), (25.0, 1)]);
    assert_eq!(result.maxdist_sq(0), 25.0);
    assert_eq!(result.check_coherence(), Ok(()));

    // the next leaf (NW) is empty, NE is beyond MAXDIST: nothing changes
    let before = result.clone();
    navigate(&mut nav, Direction::Right, &index, &store, &qs, &result, None);
    let t = sort_and_materialize(&mut nav, Direction::Right, &store);
    update_nn_lists(&t, &nav, Direction::Right, &store, &qs, &params, &mut result);
    assert_eq!(result, before);
}

#[test]
fn query_in_empty_leaf_is_completed_by_navigation() {
    let mut v = Vec::new();
    for i in 0..20 {
        v.push((0.05 + 0.01 * i as f64, 0.05)); // all in SW
    }
    let objs = pts(&v);
    let queries = [Query { id: 7, issuer: 999, pos: Point::new(0.9, 0.9) }];
    let out = process_tick(&objs, &queries, &config(3, 4, 3)).unwrap();
    let want = brute_force_knn(&objs, &queries, 3);
    assert!(all_match(&compare_results(&out.result, &want)));
    assert_eq!(out.audit.unwrap().wrongly_pruned, vec![]);
}

#[test]
fn sort_is_stable_for_equal_leaves() {
    let (index, store, objs) = four_leaf_setup();
    let queries: Vec<Query> = [0usize, 1].iter().map(|&i| Query { id: i as u64, issuer: i as u64, pos: objs[i].1 }).collect();
    let params = KSelectParams::new(8);
    let (qs, tasks) = index_queries(&queries, &index, &store);
    let mut result = ResultStore::new(2, 8);
    first_iteration(&tasks, &store, &qs, &params, &mut result);
    let mut nav = NavState::new(&qs, &index);
    let before = nav.active(Direction::Right).to_vec();
    navigate(&mut nav, Direction::Right, &index, &store, &qs, &result, None);
    let t = sort_and_materialize(&mut nav, Direction::Right, &store);
    assert_eq!(t.len(), 1);
    assert_eq!(nav.active(Direction::Right), &before[..]);
}

#[test]
fn gaussian_hotspots_match_oracle() {
    let spec = WorkloadSpec {
        n_objects: 2000,
        distribution: Distribution::Gaussian,
        hotspots: 5,
        ticks: 2,
        k: 32,
        ..WorkloadSpec::default()
    };
    let cfg = EngineConfig { th_quad: 384, audit: true, ..EngineConfig::new(spec.region, 32) };
    let mut engine = Engine::new(cfg).unwrap();
    for b in generate(&spec).unwrap() {
        let out = engine.process_tick(&b.positions, &b.queries).unwrap();
        let want = brute_force_knn(&b.positions, &b.queries, 32);
        assert!(all_match(&compare_results(&out.result, &want)));
        assert_eq!(out.audit.unwrap().wrongly_pruned, vec![]);
        assert!(out.metrics.active_left.windows(2).all(|w| w[0] >= w[1]));
        assert!(out.metrics.active_right.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn clamped_objects_outside_mbr_are_found() {
    let objs = pts(&[(-0.5, 0.5), (1.5, 0.5), (0.5, -2.0), (0.2, 0.2), (0.8, 0.8), (0.9, 0.1)]);
    let queries = self_queries(&objs);
    for k in 1..6 {
        let out = process_tick(&objs, &queries, &config(k, 1, 3)).unwrap();
        let want = brute_force_knn(&objs, &queries, k);
        assert!(all_match(&compare_results(&out.result, &want)), "k={k}");
        assert_eq!(out.audit.unwrap().wrongly_pruned, vec![]);
    }
}

#[test]
fn rebuild_happens_on_first_tick_only_when_stable() {
    let objs = pts(&[(0.1, 0.1), (0.4, 0.4), (0.7, 0.7)]);
    let q = self_queries(&objs);
    let mut e = Engine::new(config(1, 1, 4)).unwrap();
    let flags: Vec<bool> = (0..5).map(|_| e.process_tick(&objs, &q).unwrap().metrics.rebuild).collect();
    assert_eq!(flags, vec![true, false, false, false, false]);
    assert_eq!(e.history().len(), 5);
}

#[test]
fn metrics_row_has_header_width() {
    let objs = pts(&[(0.1, 0.1), (0.4, 0.4)]);
    let out = process_tick(&objs, &self_queries(&objs), &config(1, 4, 4)).unwrap();
    let cols = TickMetrics::CSV_HEADER.split(',').count();
    assert_eq!(out.metrics.csv_row().split(',').count(), cols);
    assert_eq!(out.metrics.distance_evals, 4);
}
