mod common;

use common::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtinterp::evaluation::{
    capacity_error, cluster_diagnostics, empirical_cdf, path_set_diagnostics, received_power_error,
    spectral_efficiency, stream_efficiency, LinkBudget,
};
use rtinterp::geometry::{trace_paths, PathRecord, PathSet, Vec3};
use rtinterp::interpolation::{Interpolator, Method};
use rtinterp::mimo::ChannelMatrix;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
    })
}

fn channel(entries: DMatrix<Complex64>) -> ChannelMatrix {
    ChannelMatrix {
        entries,
        frequency: F28,
    }
}

fn budget(tx_power_dbm: f64, noise_figure_db: f64) -> LinkBudget {
    LinkBudget {
        tx_power_dbm,
        noise_figure_db,
        bandwidth: 100e6,
    }
}

/// Unitary factor of a random square matrix.
fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<Complex64> {
    random_matrix(rng, n, n, 1.0).qr().q()
}

fn records(rng: &mut ChaCha8Rng) -> Vec<PathRecord> {
    (0..rng.gen_range(1..6))
        .map(|_| PathRecord {
            gain: Complex64::from_polar(rng.gen_range(1e-6..1e-3), rng.gen_range(-3.0..3.0)),
            delay: rng.gen_range(1e-8..1e-6),
            aoa_az: 0.0,
            aoa_zen: 1.0,
            aod_az: 0.0,
            aod_zen: 1.0,
            reflection_points: vec![],
            facet_ids: None,
        })
        .collect()
}

#[test]
fn stream_efficiency_anchor_values() {
    assert_eq!(stream_efficiency(1.0), 0.6);
    assert_eq!(stream_efficiency(0.0), 0.0);
    assert_eq!(stream_efficiency(1e12), 4.8);
    // the cap engages at log2(1 + γ) = 8
    assert_eq!(stream_efficiency(255.0), 4.8);
    assert!(stream_efficiency(254.0) < 4.8);
}

#[test]
fn rank_one_matches_the_single_stream_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = budget(23.0, 3.0);
    let p_over_n = b.tx_power_mw() / b.noise_power_mw();
    for _ in 0..50 {
        let u = random_matrix(&mut rng, 8, 1, 1.0);
        let v = random_matrix(&mut rng, 8, 1, 1.0);
        let (u, v) = (&u / Complex64::from(u.norm()), &v / Complex64::from(v.norm()));
        let s = 10f64.powf(rng.gen_range(-8.0..-4.0));
        let h = &u * v.adjoint() * Complex64::from(s);
        let expected = (0.6 * (1.0 + s * s * p_over_n).log2()).min(4.8);
        assert!(rel_err(spectral_efficiency(&channel(h), &b), expected) < 1e-9);
    }
}

#[test]
fn capacity_error_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = channel(random_matrix(&mut rng, 4, 4, 1e-6));
    let b = budget(23.0, 3.0);
    assert_eq!(capacity_error(&h, &h, &b), Some(0.0));
    assert_eq!(capacity_error(&h, &channel(DMatrix::zeros(4, 4)), &b), None);
    assert_eq!(spectral_efficiency(&channel(DMatrix::zeros(4, 4)), &b), 0.0);
}

#[test]
fn half_power_is_three_decibels() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = records(&mut rng);
    let half: Vec<PathRecord> = truth
        .iter()
        .map(|p| PathRecord {
            gain: p.gain / 2f64.sqrt(),
            ..p.clone()
        })
        .collect();
    assert!((received_power_error(&truth, &half) - 10.0 * 2f64.log10()).abs() < 1e-12);
    assert_eq!(received_power_error(&truth, &truth), 0.0);
    assert_eq!(received_power_error(&truth, &[]), f64::INFINITY);
}

#[test]
fn perfect_reconstruction_scores_one_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rs = random_scene(&mut rng);
    let tx = rs.free_point(&mut rng);
    let pts: Vec<Vec3> = (0..4).map(|_| rs.free_point(&mut rng)).collect();
    let grid = trace_grid(&rs.scene, &tx, &pts, 2, None);
    let truth = trace_paths(&rs.scene, &tx, &pts[0], 2, F28).unwrap();
    assert!(!truth.paths.is_empty());
    assert_eq!(path_set_diagnostics(&truth, &truth, 1e-6), (1.0, 1.0));
    let interp = Interpolator::new(&grid, params(1e-6, 1.0, 0.3, Method::Kernel)).unwrap();
    let result = interp.interpolate(&pts[0]).unwrap();
    assert_eq!(cluster_diagnostics(&result, &truth, 1e-6), (1.0, 1.0));
    // nothing kept against a non-empty truth
    let empty = PathSet {
        paths: vec![],
        ..truth.clone()
    };
    assert_eq!(path_set_diagnostics(&empty, &truth, 1e-6), (1.0, 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn se_monotone_in_power_and_noise(seed in any::<u64>(), p in -10.0f64..40.0, dp in 0.0f64..10.0, nf in 0.0f64..10.0, dnf in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 10f64.powf(rng.gen_range(-8.0..-4.0));
        let h = channel(random_matrix(&mut rng, 4, 6, scale));
        let base = spectral_efficiency(&h, &budget(p, nf));
        prop_assert!(spectral_efficiency(&h, &budget(p + dp, nf)) >= base - 1e-12);
        prop_assert!(spectral_efficiency(&h, &budget(p, nf + dnf)) <= base + 1e-12);
    }

    #[test]
    fn se_is_unitarily_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let scale = 10f64.powf(rng.gen_range(-8.0..-4.0));
        let h = random_matrix(&mut rng, m, n, scale);
        let u = random_unitary(&mut rng, m);
        let v = random_unitary(&mut rng, n);
        let b = budget(23.0, 3.0);
        let a = spectral_efficiency(&channel(h.clone()), &b);
        let rotated = spectral_efficiency(&channel(u * h * v.adjoint()), &b);
        prop_assert!((a - rotated).abs() <= 1e-9 * a.max(1.0), "{a} vs {rotated}");
    }

    #[test]
    fn power_error_symmetric_with_triangle_inequality(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (records(&mut rng), records(&mut rng), records(&mut rng));
        prop_assert_eq!(received_power_error(&a, &b), received_power_error(&b, &a));
        let direct = received_power_error(&a, &c);
        let via = received_power_error(&a, &b) + received_power_error(&b, &c);
        prop_assert!(direct <= via + 1e-12);
    }

    #[test]
    fn cdf_matches_sort_and_count(xs in prop::collection::vec(-50.0f64..50.0, 1..60), ties in 0usize..5) {
        let mut samples = xs.clone();
        samples.extend(xs.iter().take(ties).copied());
        samples.push(f64::INFINITY);
        let cdf = empirical_cdf(&samples);
        let n = samples.len() - 1;
        prop_assert_eq!(cdf.finite, n);
        prop_assert_eq!(cdf.outages, 1);
        let mut distinct: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        prop_assert_eq!(&cdf.values, &distinct);
        for (v, f) in cdf.values.iter().zip(&cdf.fractions) {
            let count = samples.iter().filter(|s| s.is_finite() && *s <= v).count();
            prop_assert_eq!(*f, count as f64 / n as f64);
        }
        prop_assert!(cdf.fractions.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*cdf.fractions.last().unwrap(), 1.0);
    }

    #[test]
    fn cdf_is_scale_equivariant(xs in prop::collection::vec(0.0f64..100.0, 1..60), c in 0.01f64..100.0) {
        let a = empirical_cdf(&xs);
        let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
        let b = empirical_cdf(&scaled);
        prop_assert_eq!(&a.fractions, &b.fractions);
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert_eq!(x * c, *y);
        }
    }
}
