mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tvrir::dtw::{accumulated_cost_with, estimate, warp_path, DtwOptions, LocalCost};
use tvrir::harness::io::{read_rir_csv, write_rir_csv, RirSet};
use tvrir::harness::{misalignment, MISALIGNMENT_FLOOR_DB};
use tvrir::kalman::{init, Filter, Transition};
use tvrir::linalg::{SquareMatrix, Vec3};
use tvrir::scene::{enumerate_image_sources, synthesize_rir, Room};
use tvrir::transition::{
    build_invariant_matrix, build_variant_matrix, fill_identity_rows, overlap_check, separate_overlaps, ReflectionTrack,
};

fn track_set() -> impl Strategy<Value = Vec<ReflectionTrack>> {
    // well-separated starting TOAs in samples, small per-location drift
    prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 1..5).prop_map(|v| {
        v.iter()
            .enumerate()
            .map(|(r, &(frac, drift))| {
                let t0 = 15.0 + 25.0 * r as f64 + frac;
                ReflectionTrack::from_endpoints(t0, t0 + drift, 2)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn image_lattice_matches_mirror_search(
        dx in 2.0f64..8.0, dy in 2.0f64..8.0, dz in 2.0f64..4.0,
        fx in 0.05f64..0.95, fy in 0.05f64..0.95, fz in 0.05f64..0.95,
        order in 0u32..3,
    ) {
        let room = Room::new(Vec3::new(dx, dy, dz), 0.9, 343.0).unwrap();
        let src = [fx * dx, fy * dy, fz * dz];
        let imgs = enumerate_image_sources(&room, Vec3(src), order).unwrap();
        let oracle = ism_bfs([dx, dy, dz], src, order);
        prop_assert_eq!(imgs.len(), oracle.len());
        for img in &imgs {
            let key = img.position.0.map(|v| (v * 1e9).round() as i64);
            prop_assert_eq!(oracle.get(&key), Some(&img.order));
            prop_assert!((img.base_amplitude - 0.9f64.powi(img.order as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn rir_synthesis_matches_direct_sum(
        mx in 0.5f64..4.0, my in 0.5f64..5.0, mz in 0.3f64..2.5,
    ) {
        let room = Room::new(Vec3::new(4.5, 5.8, 2.9), 0.9, 343.0).unwrap();
        let imgs = enumerate_image_sources(&room, Vec3::new(1.05, 2.98, 1.17), 1).unwrap();
        let mic = Vec3::new(mx, my, mz);
        let h = synthesize_rir(&imgs, mic, 343.0, 16000.0, 480, 0).unwrap();
        let arr: Vec<_> = imgs.iter().map(|i| arrival(i.position.0, i.order, mic, 343.0, 0.9)).collect();
        let want = rir(&arr, 16000.0, 480);
        for (a, b) in h.samples.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn block_apply_matches_dense(tracks in track_set(), x in prop::collection::vec(-1.0f64..1.0, 128)) {
        let a = build_invariant_matrix(&tracks, 4.5, 1.0, 128, 2);
        let d = dense_of(&a);
        let want: Vec<f64> = d.iter().map(|row| row.iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
        for (u, v) in a.apply_blocks(&x).iter().zip(&want) {
            prop_assert!((u - v).abs() <= 1e-10);
        }
        for (u, v) in a.apply(&x).iter().zip(&want) {
            prop_assert!((u - v).abs() <= 1e-10);
        }
    }

    #[test]
    fn two_location_invariant_equals_variant(tracks in track_set()) {
        let inv = build_invariant_matrix(&tracks, 4.5, 1.0, 128, 2);
        let var = build_variant_matrix(&tracks, 1, 4.5, 1.0, 128);
        prop_assert!(max_diff(&dense_of(&inv), &dense_of(&var)) <= 1e-12);
    }

    #[test]
    fn integer_shifts_propagate_exactly(
        starts in prop::collection::vec(0usize..4, 1..4),
        steps in prop::collection::vec(-1i32..=1, 3),
        num in 2usize..6,
    ) {
        // tracks 30 samples apart, moving by an integer sample per location
        let tracks: Vec<ReflectionTrack> = starts
            .iter()
            .enumerate()
            .map(|(r, &s)| {
                let t0 = (20 + 30 * r + s) as f64;
                ReflectionTrack::from_endpoints(t0, t0 + (steps[r] * (num as i32 - 1)) as f64, num)
            })
            .collect();
        let taps = 140;
        let a = build_invariant_matrix(&tracks, 1.5, 1.0, taps, num);
        let at = |l: usize| {
            let arr: Vec<(f64, f64)> = tracks.iter().enumerate().map(|(r, t)| (t.toa_at(l), 1.0 - 0.2 * r as f64)).collect();
            rir(&arr, 1.0, taps)
        };
        let mut h = at(0);
        for _ in 1..num {
            h = a.apply(&h);
        }
        let want = at(num - 1);
        for &i in a.active_rows() {
            prop_assert!((h[i] - want[i]).abs() < 1e-12, "row {}: {} vs {}", i, h[i], want[i]);
        }
    }

    #[test]
    fn fill_identity_only_touches_empty_rows(tracks in track_set()) {
        let a = build_invariant_matrix(&tracks, 4.5, 1.0, 128, 2);
        let f = fill_identity_rows(&a);
        for i in 0..128 {
            if a.is_zero_row(i) {
                for j in 0..128 {
                    prop_assert_eq!(f.dense().row(i)[j], if i == j { 1.0 } else { 0.0 });
                }
            } else {
                prop_assert_eq!(f.dense().row(i), a.dense().row(i));
            }
        }
    }

    #[test]
    fn separated_tracks_pass_the_overlap_check(
        toas in prop::collection::vec((0.0f64..60.0, -4.0f64..4.0), 2..6),
        num in 2usize..20,
    ) {
        let tracks: Vec<ReflectionTrack> = toas
            .iter()
            .map(|&(t, d)| ReflectionTrack::from_endpoints(t + 5.0, t + 5.0 + d, num))
            .collect();
        let out = separate_overlaps(&tracks, 3.0, 1.0, num);
        prop_assert_eq!(out.len(), tracks.len());
        prop_assert!(overlap_check(&out, 3.0, num).passed());
    }

    #[test]
    fn dtw_cost_is_the_best_monotone_path(
        a in prop::collection::vec(-1.0f64..1.0, 2..7),
        seed in prop::collection::vec(-1.0f64..1.0, 7),
        squared in any::<bool>(),
    ) {
        let b = &seed[..a.len()];
        let local = if squared { LocalCost::Squared } else { LocalCost::Absolute };
        let d = accumulated_cost_with(&a, b, local).unwrap();
        let want = dtw_brute_force(&a, b, move |x, y| local.eval(x, y));
        prop_assert!((d.total() - want).abs() < 1e-12);
        let path = warp_path(&d);
        prop_assert_eq!(path.pairs.first(), Some(&(0, 0)));
        prop_assert_eq!(path.pairs.last(), Some(&(a.len() - 1, a.len() - 1)));
        let along: f64 = path.pairs.iter().map(|&(n, m)| local.eval(a[n], b[m])).sum();
        prop_assert!((along - want).abs() < 1e-12);
        for w in path.pairs.windows(2) {
            let (dn, dm) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            prop_assert!(dn <= 1 && dm <= 1 && dn + dm >= 1);
        }
    }

    #[test]
    fn dtw_estimate_is_disjoint(h in prop::collection::vec(-1.0f64..1.0, 40), num in 2usize..50) {
        let end: Vec<f64> = h.iter().rev().copied().collect();
        let est = estimate(&h, &end, num, 1.5, 1.0, DtwOptions::default()).unwrap();
        prop_assert!(overlap_check(&est.tracks, 1.5, num).passed());
        prop_assert_eq!(est.matrix.dim(), 40);
    }

    #[test]
    fn kalman_update_matches_dense_formula(
        p_diag in prop::collection::vec(0.1f64..2.0, 6),
        off in -0.05f64..0.05,
        x in prop::collection::vec(-1.0f64..1.0, 6),
        h in prop::collection::vec(-1.0f64..1.0, 6),
        y in -1.0f64..1.0,
        r in 0.0f64..0.5,
    ) {
        prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
        let n = 6;
        let pm = DMatrix::from_fn(n, n, |i, j| if i == j { p_diag[i] } else { off });
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| pm[(i, j)]).collect()).collect();
        let mut f = Filter::new(tvrir::kalman::KalmanState { h_hat: h.clone(), p: SquareMatrix::from_rows(&rows), l: 0 });
        f.update(&x, y, r).unwrap();
        let xv = DVector::from_column_slice(&x);
        let hv = DVector::from_column_slice(&h);
        let s = (xv.transpose() * &pm * &xv)[(0, 0)] + r;
        let k = &pm * &xv / s;
        let h_new = &hv + &k * (y - xv.dot(&hv));
        let p_new = (DMatrix::identity(n, n) - &k * xv.transpose()) * &pm;
        for i in 0..n {
            prop_assert!((f.state().h_hat[i] - h_new[i]).abs() < 1e-12);
            for j in 0..n {
                prop_assert!((f.state().p.row(i)[j] - p_new[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kalman_prediction_matches_dense_formula(tracks in track_set(), q in 0.0f64..0.1) {
        let n = 128;
        let a = build_invariant_matrix(&tracks, 4.5, 1.0, n, 2);
        let h: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut f = Filter::new(init(&h, 0.5));
        f.predict(Transition::Matrix(&a), q);
        let am = DMatrix::from_fn(n, n, |i, j| a.dense().row(i)[j]);
        let want = &am * (DMatrix::identity(n, n) * 0.5) * am.transpose() + DMatrix::identity(n, n) * q;
        for i in 0..n {
            for j in 0..n {
                prop_assert!((f.state().p.row(i)[j] - want[(i, j)]).abs() < 1e-12);
            }
        }
        prop_assert!(f.state().p.asymmetry() <= 1e-12);
    }

    #[test]
    fn zero_regressor_keeps_the_prior(h in prop::collection::vec(-1.0f64..1.0, 5), y in -1.0f64..1.0) {
        let mut f = Filter::new(init(&h, 0.3));
        let before = f.state().clone();
        prop_assert_eq!(f.update(&[0.0; 5], y, 0.1).unwrap(), None);
        prop_assert_eq!(f.state(), &before);
    }

    #[test]
    fn misalignment_is_scale_free(h in prop::collection::vec(-1.0f64..1.0, 8), s in 0.1f64..10.0, e in 0.01f64..0.5) {
        prop_assume!(h.iter().any(|v| v.abs() > 1e-3));
        prop_assert_eq!(misalignment(&h, &h).unwrap(), MISALIGNMENT_FLOOR_DB);
        let est: Vec<f64> = h.iter().map(|v| v * (1.0 + e)).collect();
        let scaled_est: Vec<f64> = est.iter().map(|v| v * s).collect();
        let scaled: Vec<f64> = h.iter().map(|v| v * s).collect();
        let a = misalignment(&est, &h).unwrap();
        prop_assert!((a - 20.0 * e.log10()).abs() < 1e-9);
        prop_assert!((misalignment(&scaled_est, &scaled).unwrap() - a).abs() < 1e-9);
    }

    #[test]
    fn rir_csv_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 6), 1..5)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rirs.csv");
        let set = RirSet::new(16000.0, 6, rows).unwrap();
        write_rir_csv(&path, &set).unwrap();
        prop_assert_eq!(read_rir_csv(&path).unwrap(), set);
    }
}

/// Cross-term bound on ISM scenes with random microphone placement: the
/// direct path and one first-order image, one step apart.
#[test]
fn cross_term_bound_on_random_scenes() {
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(24));
    let room = Room::new(Vec3::new(4.5, 5.8, 2.9), 0.9, 343.0).unwrap();
    let src = Vec3::new(1.05, 2.98, 1.17);
    let imgs = enumerate_image_sources(&room, src, 1).unwrap();
    let (fs, eps) = (16000.0, 10.0 / 16000.0);
    runner
        .run(
            &((0.3f64..4.2, 0.3f64..5.5, 0.3f64..2.6), 1usize..7),
            |((x, y, z), k)| {
                let mic0 = Vec3::new(x, y, z);
                let mic1 = mic0 + Vec3::new(0.6, -0.8, 0.0) * (8.0 * 0.25 / fs);
                let pair = [imgs[0], imgs[k]];
                let prev: Vec<_> = pair
                    .iter()
                    .map(|i| arrival(i.position.0, i.order, mic0, 343.0, 0.9))
                    .collect();
                let cur: Vec<_> = pair
                    .iter()
                    .map(|i| arrival(i.position.0, i.order, mic1, 343.0, 0.9))
                    .collect();
                prop_assume!((prev[0].0 - prev[1].0).abs() > 2.0 * eps);
                let taps = (cur.iter().map(|a| a.0).fold(0.0, f64::max) * fs) as usize + 40;
                let e = max_abs(&cross_term_variant(&prev, &cur, eps, 1.0 / fs, taps));
                let peak = max_abs(&rir(&cur, fs, taps));
                prop_assert!(e < 0.05 * peak, "e = {e}, peak = {peak}");
                Ok(())
            },
        )
        .unwrap();
}

#[test]
fn variant_matrix_reproduces_the_next_rir_on_reflection_rows() {
    // one 1-sample step along the default trajectory, well-separated
    // first-order images; sinc tails outside the intervals are not modelled
    let room = Room::new(Vec3::new(4.5, 5.8, 2.9), 0.9, 343.0).unwrap();
    let imgs = enumerate_image_sources(&room, Vec3::new(1.05, 2.98, 1.17), 1).unwrap();
    let start = Vec3::new(1.94, 3.10, 1.09);
    let end = Vec3::new(1.99, 2.95, 0.37);
    let dir = (end - start) * (1.0 / end.distance(start));
    let mic0 = start + dir * 0.2;
    let mic1 = mic0 + dir * (0.25 / 16000.0);
    let fs = 16000.0;
    let eps = 10.0 / fs;
    // keep images whose interval clears every other image's
    let toa = |i: &tvrir::scene::ImageSource| arrival(i.position.0, i.order, mic0, 343.0, 0.9).0;
    let imgs: Vec<_> = imgs
        .iter()
        .filter(|i| {
            imgs.iter()
                .all(|j| std::ptr::eq(*i, j) || (toa(i) - toa(j)).abs() > 2.0 * eps)
        })
        .copied()
        .collect();
    assert!(imgs.len() >= 3);
    let tracks: Vec<ReflectionTrack> = imgs
        .iter()
        .map(|i| {
            let a = arrival(i.position.0, i.order, mic0, 343.0, 0.9);
            let b = arrival(i.position.0, i.order, mic1, 343.0, 0.9);
            let mut t = ReflectionTrack::from_endpoints(a.0, b.0, 2);
            t.gain_ratio = b.1 / a.1;
            t
        })
        .collect();
    let a = build_variant_matrix(&tracks, 1, eps, 1.0 / fs, 480);
    let h0 = synthesize_rir(&imgs, mic0, 343.0, fs, 480, 0).unwrap().samples;
    let h1 = synthesize_rir(&imgs, mic1, 343.0, fs, 480, 1).unwrap().samples;
    let pred = a.apply(&h0);
    let rows = a.active_rows();
    let err: f64 = rows.iter().map(|&i| (pred[i] - h1[i]).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = rows.iter().map(|&i| h1[i].powi(2)).sum::<f64>().sqrt();
    assert!(err / norm < 1e-2, "relative error {}", err / norm);
}
