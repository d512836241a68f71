mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtinterp::exec::Execution;
use rtinterp::geometry::{los_visible, trace_paths, unfolded_length, Scene, Vec3};
use rtinterp::interpolation::{select_neighbors, Interpolator, Method};
use rtinterp::mimo::unit_from_angles;
use rtinterp::reflection::Plane;
use rtinterp::scenarios;

/// Ground plus two perpendicular walls, all effectively infinite.
fn open_corner() -> Scene {
    Scene::new(vec![
        infinite_plane(Vec3::z(), 0.0, gamma(-0.6)),
        infinite_plane(Vec3::x(), -6.0, gamma(0.8)),
        infinite_plane(Vec3::y(), -9.0, gamma(-0.7)),
    ])
}

#[test]
fn neighbours_match_distance_scan() {
    let grid = trace_grid(
        &Scene::empty(),
        &Vec3::new(0.0, 0.0, 10.0),
        &lattice(0.0, 0.0, 4.0, 3, 3, 1.5),
        0,
        Some(4.0),
    );
    let centre = select_neighbors(&grid, &Vec3::new(4.0, 4.0, 1.5), 4.1).unwrap();
    assert_eq!(centre.len(), 5);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let t = Vec3::new(rng.gen_range(-2.0..10.0), rng.gen_range(-2.0..10.0), 1.5);
        let d_th = rng.gen_range(0.5..9.0);
        let scan: Vec<usize> = grid
            .references()
            .iter()
            .enumerate()
            .filter(|(_, r)| ((r.rx.x - t.x).powi(2) + (r.rx.y - t.y).powi(2) + (r.rx.z - t.z).powi(2)).sqrt() < d_th)
            .map(|(i, _)| i)
            .collect();
        match select_neighbors(&grid, &t, d_th) {
            Ok(found) => assert_eq!(found, scan),
            Err(_) => assert!(scan.is_empty()),
        }
    }
}

#[test]
fn canyon_clusters_are_the_facet_sequences() {
    let scene = Scene::new(vec![
        infinite_plane(Vec3::y(), 0.0, gamma(0.7)),
        infinite_plane(-Vec3::y(), -10.0, gamma(-0.5)),
    ]);
    let tx = Vec3::new(-20.0, 3.0, 5.0);
    let grid = trace_grid(&scene, &tx, &lattice(0.0, 2.0, 2.0, 5, 4, 1.5), 2, Some(2.0));
    let interp = Interpolator::new(&grid, params(3.0, 2.0, 0.4, Method::Kernel)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let t = Vec3::new(rng.gen_range(0.5..7.5), rng.gen_range(2.5..7.5), 1.5);
        let (neighbors, clusters) = interp.clusters(&t).unwrap();
        let sequences: BTreeSet<Vec<usize>> = neighbors
            .iter()
            .flat_map(|n| grid.references()[n.reference].paths.iter())
            .map(|p| p.facet_ids.clone().unwrap())
            .collect();
        let keys: BTreeSet<Vec<usize>> = clusters.iter().map(|c| c.facet_ids.clone().unwrap()).collect();
        assert_eq!(clusters.len(), sequences.len());
        assert_eq!(keys, sequences);
    }
}

#[test]
fn corrected_gains_reproduce_truth_on_infinite_planes() {
    let scene = open_corner();
    let tx = Vec3::new(3.0, 2.0, 7.0);
    let grid = trace_grid(&scene, &tx, &lattice(0.0, 0.0, 4.0, 6, 6, 1.5), 2, Some(4.0));
    let interp = Interpolator::new(&grid, params(6.0, 2.0, 0.05, Method::Kernel)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut compared = 0;
    for _ in 0..40 {
        let t = Vec3::new(rng.gen_range(2.0..18.0), rng.gen_range(2.0..18.0), 1.5);
        let truth = trace_paths(&scene, &tx, &t, 2, F28).unwrap();
        let est = interp.interpolate(&t).unwrap();
        assert_eq!(est.paths.len(), truth.paths.len());
        for p in &truth.paths {
            let planes: Vec<Plane> = p
                .facet_ids
                .as_ref()
                .unwrap()
                .iter()
                .map(|&i| scene.facets[i].plane())
                .collect();
            let image = rtinterp::reflection::compose_reflections(&planes).apply(&tx);
            let m = est
                .paths
                .iter()
                .find(|e| (e.image_point - image).norm() < 1e-6)
                .expect("every true path has a cluster");
            assert!((m.record.gain - p.gain).norm() <= 1e-9 * p.gain.norm());
            assert!(rel_err(m.record.delay, p.delay) < 1e-12);
            compared += 1;
        }
    }
    assert!(compared > 100);
}

#[test]
fn ground_bounce_reconstruction() {
    let scene = Scene::new(vec![infinite_plane(Vec3::z(), 0.0, gamma(-0.5))]);
    let tx = Vec3::new(0.0, 0.0, 2.0);
    let target = Vec3::new(10.0, 0.0, 1.5);
    let grid = trace_grid(&scene, &tx, &lattice(6.0, -4.0, 4.0, 3, 3, 1.5), 1, Some(4.0));
    let est = Interpolator::new(&grid, params(6.0, 2.0, 0.4, Method::Kernel))
        .unwrap()
        .interpolate(&target)
        .unwrap();
    let bounce = est.paths.iter().find(|p| p.record.order() == 1).unwrap();
    assert!(rel_err(bounce.record.delay * C, (100.0f64 + 3.5 * 3.5).sqrt()) < 1e-12);
    assert!(bounce.record.aod_zen > std::f64::consts::FRAC_PI_2);
    let truth = trace_paths(&scene, &tx, &target, 1, F28).unwrap();
    let t = truth.paths.iter().find(|p| p.order() == 1).unwrap();
    // compare directions, not raw azimuths, which may wrap at ±π
    for ((az, zen), (taz, tzen)) in [
        ((bounce.record.aoa_az, bounce.record.aoa_zen), (t.aoa_az, t.aoa_zen)),
        ((bounce.record.aod_az, bounce.record.aod_zen), (t.aod_az, t.aod_zen)),
    ] {
        let (a, b) = (unit_from_angles(az, zen), unit_from_angles(taz, tzen));
        assert!((a - b).norm() < 1e-9, "{a:?} vs {b:?}");
    }
    assert!((bounce.record.reflection_points[0] - t.reflection_points[0]).norm() < 1e-9);
}

/// Launches a ray from `tx` along the departure angles, bounces it across the
/// given planes and returns the distance from `target` to the final ray
/// together with the travelled length up to its closest approach.
fn shoot(tx: &Vec3, az: f64, zen: f64, planes: &[Plane], target: &Vec3) -> (f64, f64) {
    let mut origin = *tx;
    let mut dir = unit_from_angles(az, zen);
    let mut travelled = 0.0;
    for p in planes {
        let t = (p.offset - p.normal.dot(&origin)) / p.normal.dot(&dir);
        assert!(t > 0.0, "ray runs away from the plane");
        origin += dir * t;
        travelled += t;
        dir -= p.normal * (2.0 * dir.dot(&p.normal));
    }
    let along = (target - origin).dot(&dir);
    let miss = (target - origin - dir * along).norm();
    (miss, travelled + along)
}

#[test]
fn departure_angles_retrace_to_the_target() {
    let scene = open_corner();
    let tx = Vec3::new(3.0, 2.0, 7.0);
    let grid = trace_grid(&scene, &tx, &lattice(0.0, 0.0, 4.0, 6, 6, 1.5), 2, Some(4.0));
    let interp = Interpolator::new(&grid, params(6.0, 2.0, 0.4, Method::Kernel)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let t = Vec3::new(rng.gen_range(2.0..18.0), rng.gen_range(2.0..18.0), 1.5);
        for p in interp.interpolate(&t).unwrap().paths {
            let planes = rtinterp::reflection::recover_planes_from_route(&p.record.reflection_points, &tx, &t).unwrap();
            let (miss, length) = shoot(&tx, p.record.aod_az, p.record.aod_zen, &planes, &t);
            assert!(miss < 1e-9, "ray misses target by {miss}");
            assert!(
                rel_err(length, p.record.delay * C) < 1e-9,
                "order {} ids {:?} pts {:?} len {length} vs {} t {t:?}",
                p.record.order(),
                p.record.facet_ids,
                p.record.reflection_points,
                p.record.delay * C
            );
            // stored delay is exactly the image distance
            assert_eq!(p.record.delay, (t - p.image_point).norm() / C);
            assert!((p.transform.apply(&tx) - p.image_point).norm() < 1e-9);
        }
    }
}

#[test]
fn identity_interpolation_in_cluttered_scene() {
    let spec = scenarios::partial_los();
    let points = spec.reference_points().unwrap();
    let grid = trace_grid(&spec.scene, &spec.tx, &points, 3, Some(spec.grid_spacing));
    let interp = Interpolator::new(&grid, params(0.5 * spec.grid_spacing, 2.0, 0.4, Method::Kernel)).unwrap();
    for r in grid.references() {
        let est = interp.interpolate(&r.rx).unwrap();
        assert_eq!(est.paths.len(), r.paths.len());
        for (e, t) in est.paths.iter().zip(&r.paths) {
            let e = &e.record;
            assert!((e.gain - t.gain).norm() <= 1e-9 * t.gain.norm());
            assert!(rel_err(e.delay, t.delay) < 1e-9);
            for (a, b) in [
                (e.aoa_az, t.aoa_az),
                (e.aoa_zen, t.aoa_zen),
                (e.aod_az, t.aod_az),
                (e.aod_zen, t.aod_zen),
            ] {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            for (a, b) in e.reflection_points.iter().zip(&t.reflection_points) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }
}

#[test]
fn deep_shadow_has_no_los_cluster() {
    let spec = scenarios::partial_los();
    let points = spec.reference_points().unwrap();
    let grid = trace_grid(&spec.scene, &spec.tx, &points, 3, Some(spec.grid_spacing));
    let interp = Interpolator::new(&grid, params(1.5 * spec.grid_spacing, 2.0, 0.4, Method::Kernel)).unwrap();
    let mut shadowed = 0;
    for t in spec.targets() {
        let Ok(neighbors) = interp.neighbors(&t) else { continue };
        let all_dark = neighbors
            .iter()
            .all(|n| !los_visible(&spec.scene, &spec.tx, &grid.references()[n.reference].rx));
        if all_dark && !los_visible(&spec.scene, &spec.tx, &t) {
            shadowed += 1;
            let est = interp.interpolate(&t).unwrap();
            assert!(est.paths.iter().all(|p| p.record.order() > 0), "LOS cluster at {t:?}");
        }
    }
    assert!(shadowed >= 20, "only {shadowed} deep-shadow targets");
}

#[test]
fn probabilities_are_weight_shares() {
    let spec = scenarios::partial_los();
    let points = spec.reference_points().unwrap();
    let grid = trace_grid(&spec.scene, &spec.tx, &points, 3, Some(spec.grid_spacing));
    let interp = Interpolator::new(&grid, params(6.0, 2.0, 0.4, Method::Kernel)).unwrap();
    for t in spec.targets() {
        let Ok((neighbors, clusters)) = interp.clusters(&t) else {
            continue;
        };
        for c in clusters {
            assert!((0.0..=1.0).contains(&c.probability));
            let refs: BTreeSet<usize> = c.members.iter().map(|m| m.reference).collect();
            assert_eq!(refs.len(), c.members.len(), "one member per reference");
            let full = refs.len() == neighbors.len();
            assert_eq!(
                full,
                c.probability == 1.0,
                "p = {} with {}/{} members",
                c.probability,
                refs.len(),
                neighbors.len()
            );
        }
    }
}

#[test]
fn execution_strategies_agree() {
    let spec = scenarios::partial_los();
    let points = spec.reference_points().unwrap();
    let grid = trace_grid(&spec.scene, &spec.tx, &points, 3, Some(spec.grid_spacing));
    let interp = Interpolator::new(&grid, params(6.0, 2.0, 0.4, Method::Kernel)).unwrap();
    let targets = spec.targets();
    let a = interp.interpolate_batch(&targets, Execution::Parallel);
    let b = interp.interpolate_batch(&targets, Execution::Sequential);
    assert_eq!(a, b);
    assert_eq!(a, interp.interpolate_batch(&targets, Execution::Parallel));
}

#[test]
fn enlarging_the_radius_keeps_clusters() {
    let spec = scenarios::partial_los();
    let points = spec.reference_points().unwrap();
    let grid = trace_grid(&spec.scene, &spec.tx, &points, 3, Some(spec.grid_spacing));
    let small = Interpolator::new(&grid, params(4.5, 2.0, 0.4, Method::Kernel)).unwrap();
    let large = small.with_params(params(9.0, 2.0, 0.4, Method::Kernel)).unwrap();
    for t in spec.targets() {
        let Ok((_, before)) = small.clusters(&t) else { continue };
        let (_, after) = large.clusters(&t).unwrap();
        for c in &before {
            assert!(
                after.iter().any(|d| (d.image_point - c.image_point).norm() < 1e-2),
                "cluster at {:?} lost",
                c.image_point
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn translation_invariance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = open_corner();
        let tx = Vec3::new(3.0, 2.0, 7.0);
        let pts = lattice(0.0, 0.0, 4.0, 5, 5, 1.5);
        let shift = Vec3::new(rng.gen_range(-80..80) as f64, rng.gen_range(-80..80) as f64, rng.gen_range(-8..8) as f64);
        let moved_scene = scene.transformed(&nalgebra::Matrix3::identity(), &shift);
        let moved_pts: Vec<Vec3> = pts.iter().map(|p| p + shift).collect();
        let grid = trace_grid(&scene, &tx, &pts, 2, Some(4.0));
        let moved = trace_grid(&moved_scene, &(tx + shift), &moved_pts, 2, Some(4.0));
        let p = params(6.0, rng.gen_range(1.0..3.0), 0.3, Method::Kernel);
        let a = Interpolator::new(&grid, p).unwrap();
        let b = Interpolator::new(&moved, p).unwrap();
        let t = Vec3::new(rng.gen_range(1.0..15.0), rng.gen_range(1.0..15.0), 1.5);
        let ra = a.interpolate(&t).unwrap();
        let rb = b.interpolate(&(t + shift)).unwrap();
        prop_assert_eq!(ra.paths.len(), rb.paths.len());
        for (x, y) in ra.probabilities.iter().zip(&rb.probabilities) {
            prop_assert!(rel_err(*x, *y) < 1e-12);
        }
        // the carrier phase k·d inherits k·ulp(d): at 28 GHz and ~100 m that
        // is ~1e-11 rad per rounding, so gains get a wider band than geometry
        for (x, y) in ra.paths.iter().zip(&rb.paths) {
            prop_assert!((x.record.gain - y.record.gain).norm() <= 1e-10 * x.record.gain.norm(),
                "gain drift {}", (x.record.gain - y.record.gain).norm() / x.record.gain.norm());
            prop_assert!(rel_err(unfolded_length(&x.record, &tx, &t), unfolded_length(&y.record, &(tx + shift), &(t + shift))) < 1e-12);
        }
    }
}
