//! Oracle and property tests for cameras, aggregation, warping, and the
//! hybrid correlation objective: loop-oracle equivalence, geometric
//! invariants, brute-force z-buffer checks, and finite-difference gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vsyn_core::aggregation::{
    correlation, directional_aggregate, confidence_aggregate, confidence_aggregate_normalized,
    forward_warp, hybrid_aggregate, hybrid_objective, l_corr_and_gradients, FeatureMap,
    HybridParams, Observation, PinholeCamera,
};
use vsyn_core::fusion::DepthMap;
use vsyn_core::so3::Rotation;

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn random_camera(rng: &mut ChaCha8Rng) -> PinholeCamera {
    PinholeCamera::new(
        rng.gen_range(50.0..400.0),
        rng.gen_range(50.0..400.0),
        rng.gen_range(20.0..200.0),
        rng.gen_range(20.0..200.0),
        rng.gen_range(8..512),
        rng.gen_range(8..512),
        Rotation::sample_uniform(rng),
        [
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        ],
    )
    .expect("random intrinsics are valid")
}

#[test]
fn project_unproject_round_trips_a_thousand_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let mut checked = 0usize;
    while checked < 1000 {
        let cam = random_camera(&mut rng);
        // sample a camera-frame point in front, push it to the world, and
        // make the camera reproduce it
        let u = rng.gen_range(-50.0..450.0);
        let v = rng.gen_range(-50.0..450.0);
        let depth = rng.gen_range(0.1..50.0);
        let world = cam.unproject(u, v, depth);
        let (pu, pv, pz) = cam.project(world).expect("constructed point is in front");
        let scale = depth.max(1.0);
        assert!((pu - u).abs() < 1e-9 * scale.max(u.abs()), "u: {pu} vs {u}");
        assert!((pv - v).abs() < 1e-9 * scale.max(v.abs()), "v: {pv} vs {v}");
        assert!((pz - depth).abs() < 1e-9 * scale, "z: {pz} vs {depth}");
        checked += 1;
    }
}

#[test]
fn view_direction_matches_the_center_difference_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(402);
    for _ in 0..200 {
        let cam = random_camera(&mut rng);
        let x = [
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        ];
        let c = cam.center();
        let d = [c[0] - x[0], c[1] - x[1], c[2] - x[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if n < 1e-6 {
            continue;
        }
        let got = cam.view_direction(x).expect("point differs from center");
        for i in 0..3 {
            assert!((got[i] - d[i] / n).abs() < 1e-12);
        }
    }
}

fn random_observations(rng: &mut ChaCha8Rng, channels: usize) -> Vec<Observation> {
    let count = rng.gen_range(1..=8);
    (0..count)
        .map(|k| Observation {
            view: k as u32,
            direction: random_unit(rng),
            feature: (0..channels).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            confidence: rng.gen_range(0.0..=1.0),
        })
        .collect()
}

#[test]
fn aggregates_match_straight_loop_oracles_on_a_thousand_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(403);
    let channels = 8;
    for _ in 0..1000 {
        let obs = random_observations(&mut rng, channels);
        let u = random_unit(&mut rng);

        // directional oracle written as the most literal possible loop
        let mut w_total = 0.0;
        let mut expect = vec![0.0; channels];
        for o in &obs {
            let d = u[0] * o.direction[0] + u[1] * o.direction[1] + u[2] * o.direction[2];
            let w = if d > 0.0 { d } else { 0.0 };
            w_total += w;
            for c in 0..channels {
                expect[c] += w * o.feature[c];
            }
        }
        let (got, got_w) = directional_aggregate(u, &obs).expect("inputs are valid");
        if w_total <= 1e-12 {
            assert_eq!(got_w, 0.0);
            assert!(got.iter().all(|&v| v == 0.0));
        } else {
            assert!((got_w - w_total).abs() < 1e-12);
            for c in 0..channels {
                assert!((got[c] - expect[c] / w_total).abs() < 1e-12);
            }
        }

        // confidence-weighted oracle, unnormalized by design
        let mut expect_conf = vec![0.0; channels];
        let mut c_total = 0.0;
        for o in &obs {
            c_total += o.confidence;
            for c in 0..channels {
                expect_conf[c] += o.confidence * o.feature[c];
            }
        }
        let got_conf = confidence_aggregate(&obs).expect("inputs are valid");
        for c in 0..channels {
            assert!((got_conf[c] - expect_conf[c]).abs() < 1e-12);
        }
        let got_norm = confidence_aggregate_normalized(&obs).expect("inputs are valid");
        if c_total > 1e-12 {
            for c in 0..channels {
                assert!((got_norm[c] - expect_conf[c] / c_total).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn directional_aggregate_stays_in_the_convex_hull() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..500 {
        let obs = random_observations(&mut rng, 4);
        let u = random_unit(&mut rng);
        let (got, w) = directional_aggregate(u, &obs).expect("inputs are valid");
        if w == 0.0 {
            continue;
        }
        for c in 0..4 {
            let lo = obs.iter().map(|o| o.feature[c]).fold(f64::INFINITY, f64::min);
            let hi = obs
                .iter()
                .map(|o| o.feature[c])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(
                got[c] >= lo - 1e-9 && got[c] <= hi + 1e-9,
                "channel {c}: {} outside [{lo}, {hi}]",
                got[c]
            );
        }
    }
}

#[test]
fn scaling_every_weight_by_a_common_factor_changes_nothing() {
    // directions built as cos(t) u + sin(t) w give exact control over the
    // cosine weights, so multiplying every cosine by a common factor is a
    // pure geometric construction
    let mut rng = ChaCha8Rng::seed_from_u64(405);
    let u = [0.0, 0.0, 1.0];
    let w_perp = [1.0, 0.0, 0.0];
    for _ in 0..100 {
        let count = rng.gen_range(2..=6);
        let cosines: Vec<f64> = (0..count).map(|_| rng.gen_range(0.05..1.0)).collect();
        let alpha = rng.gen_range(0.1..0.9);
        let features: Vec<Vec<f64>> = (0..count)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let build = |scaled: bool| -> Vec<Observation> {
            cosines
                .iter()
                .zip(&features)
                .enumerate()
                .map(|(k, (&c0, f))| {
                    let c = if scaled { alpha * c0 } else { c0 };
                    let s = (1.0 - c * c).sqrt();
                    Observation {
                        view: k as u32,
                        direction: [s * w_perp[0], s * w_perp[1], c],
                        feature: f.clone(),
                        confidence: 1.0,
                    }
                })
                .collect()
        };
        let (f0, w0) = directional_aggregate(u, &build(false)).expect("inputs are valid");
        let (f1, w1) = directional_aggregate(u, &build(true)).expect("inputs are valid");
        assert!((w1 - alpha * w0).abs() < 1e-12 * w0.max(1.0));
        for c in 0..3 {
            assert!((f0[c] - f1[c]).abs() < 1e-12, "channel {c}: {} vs {}", f0[c], f1[c]);
        }
    }
}

fn constant_depth(w: u32, h: u32, d: f64) -> DepthMap {
    let mut map = DepthMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            map.set(x, y, d);
        }
    }
    map
}

fn coordinate_features(w: u32, h: u32) -> FeatureMap {
    let mut map = FeatureMap::new(w, h, 2);
    for y in 0..h {
        for x in 0..w {
            map.set(x, y, &[x as f64, y as f64]);
        }
    }
    map
}

#[test]
fn fronto_parallel_warp_shifts_by_the_disparity_formula() {
    // identity source camera, destination translated by baseline b along x,
    // constant-depth plane at Z: every pixel must shift by fx * b / Z
    let fx = 100.0;
    let b = 1.0;
    let z = 5.0;
    let disparity = fx * b / z; // 20 pixels exactly
    let (w, h) = (64u32, 16u32);
    let src = PinholeCamera::new(
        fx,
        fx,
        32.0,
        8.0,
        w,
        h,
        Rotation::from_wxyz(1.0, 0.0, 0.0, 0.0).expect("identity quaternion is valid"),
        [0.0, 0.0, 0.0],
    )
    .expect("intrinsics are valid");
    // camera centered at (b, 0, 0): t = -R c = (-b, 0, 0)
    let dst = PinholeCamera::new(
        fx,
        fx,
        32.0,
        8.0,
        w,
        h,
        Rotation::from_wxyz(1.0, 0.0, 0.0, 0.0).expect("identity quaternion is valid"),
        [-b, 0.0, 0.0],
    )
    .expect("intrinsics are valid");
    let features = coordinate_features(w, h);
    let depth = constant_depth(w, h, z);
    let (warped, cover) = forward_warp(&src, &dst, &features, &depth).expect("shapes agree");
    let shift = disparity as u32;
    let mut covered = 0usize;
    for y in 0..h {
        for x in 0..w {
            match warped.get(x, y) {
                Some(f) if cover.get(x, y).is_some() => {
                    let sx = x as f64 + disparity;
                    assert!(
                        sx <= (w - 1) as f64,
                        "pixel ({x}, {y}) should be a hole, source column {sx} is outside"
                    );
                    assert!((f[0] - sx).abs() < 1e-9, "column: {} vs {}", f[0], sx);
                    assert!((f[1] - y as f64).abs() < 1e-9);
                    covered += 1;
                }
                _ => {
                    // holes are exactly the strip with no source pixel
                    assert!(x + shift > w - 1, "unexpected hole at ({x}, {y})");
                }
            }
        }
    }
    assert_eq!(covered, ((w - shift) * h) as usize);
}

#[test]
fn z_buffer_matches_an_exhaustive_splat_oracle() {
    // a collision-rich configuration: random depths from a small set, a
    // destination camera at half resolution and a sideways offset
    let mut rng = ChaCha8Rng::seed_from_u64(406);
    let (w, h) = (24u32, 18u32);
    let src = PinholeCamera::new(
        40.0,
        40.0,
        12.0,
        9.0,
        w,
        h,
        Rotation::from_wxyz(1.0, 0.0, 0.0, 0.0).expect("identity quaternion is valid"),
        [0.0, 0.0, 0.0],
    )
    .expect("intrinsics are valid");
    let dst = PinholeCamera::new(
        20.0,
        20.0,
        6.0,
        4.5,
        w / 2,
        h / 2,
        Rotation::rot_y(0.05),
        [-0.4, 0.1, 0.0],
    )
    .expect("intrinsics are valid");
    let mut features = FeatureMap::new(w, h, 1);
    let mut depth = DepthMap::new(w, h);
    let choices = [2.0, 5.0, 9.0];
    for y in 0..h {
        for x in 0..w {
            if rng.gen_range(0..10) == 0 {
                continue; // sprinkle holes
            }
            features.set(x, y, &[(y * w + x) as f64]);
            depth.set(x, y, choices[rng.gen_range(0..choices.len())]);
        }
    }
    let (warped, cover) = forward_warp(&src, &dst, &features, &depth).expect("shapes agree");

    // literal oracle: gather every splat, then pick the nearest per pixel
    // with first-in-scan-order winning ties
    let dw = w / 2;
    let dh = h / 2;
    let mut best: Vec<Option<(f64, f64)>> = vec![None; (dw * dh) as usize];
    let mut splats = 0usize;
    for y in 0..h {
        for x in 0..w {
            let Some(d) = depth.get(x, y) else { continue };
            let world = src.unproject(x as f64, y as f64, d);
            let Ok((u, v, z)) = dst.project(world) else {
                continue;
            };
            let pu = u.round();
            let pv = v.round();
            if pu < 0.0 || pv < 0.0 || pu > (dw - 1) as f64 || pv > (dh - 1) as f64 {
                continue;
            }
            splats += 1;
            let idx = (pv as u32 * dw + pu as u32) as usize;
            let f = features.get(x, y).expect("pixel in range")[0];
            match best[idx] {
                None => best[idx] = Some((z, f)),
                Some((bz, _)) if z < bz => best[idx] = Some((z, f)),
                _ => {}
            }
        }
    }
    let covered = best.iter().filter(|b| b.is_some()).count();
    assert!(
        splats > covered,
        "configuration produced no collisions ({splats} splats, {covered} covered)"
    );
    for py in 0..dh {
        for px in 0..dw {
            let idx = (py * dw + px) as usize;
            match (best[idx], cover.get(px, py)) {
                (None, None) => assert_eq!(warped.get(px, py).expect("in range"), &[0.0]),
                (Some((z, f)), Some(cz)) => {
                    assert_eq!(cz.to_bits(), z.to_bits(), "depth at ({px}, {py})");
                    assert_eq!(
                        warped.get(px, py).expect("in range"),
                        &[f],
                        "feature at ({px}, {py})"
                    );
                }
                other => panic!("coverage mismatch at ({px}, {py}): {other:?}"),
            }
        }
    }
}

#[test]
fn warp_round_trip_lands_within_one_pixel() {
    // warp into a second view and back; every surviving pixel must carry
    // the feature of a source pixel at most one step away
    let (w, h) = (48u32, 36u32);
    let src = PinholeCamera::look_at(
        60.0,
        60.0,
        24.0,
        18.0,
        w,
        h,
        [0.0, -4.0, 0.5],
        [0.0, 0.0, 0.5],
        [0.0, 0.0, 1.0],
    )
    .expect("look-at frame is valid");
    let dst = PinholeCamera::look_at(
        60.0,
        60.0,
        24.0,
        18.0,
        w,
        h,
        [0.8, -3.9, 0.6],
        [0.0, 0.0, 0.5],
        [0.0, 0.0, 1.0],
    )
    .expect("look-at frame is valid");
    // a gently sloped surface seen by both cameras
    let mut depth = DepthMap::new(w, h);
    let mut features = coordinate_features(w, h);
    for y in 0..h {
        for x in 0..w {
            depth.set(x, y, 4.0 + 0.01 * x as f64 + 0.005 * y as f64);
            features.set(x, y, &[x as f64, y as f64]);
        }
    }
    let (fwd, fwd_depth) = forward_warp(&src, &dst, &features, &depth).expect("shapes agree");
    let (back, back_depth) = forward_warp(&dst, &src, &fwd, &fwd_depth).expect("shapes agree");
    let mut verified = 0usize;
    for y in 0..h {
        for x in 0..w {
            if back_depth.get(x, y).is_none() {
                continue;
            }
            let f = back.get(x, y).expect("pixel in range");
            let dx = (f[0] - x as f64).abs();
            let dy = (f[1] - y as f64).abs();
            assert!(
                dx <= 1.0 + 1e-9 && dy <= 1.0 + 1e-9,
                "pixel ({x}, {y}) came from ({}, {}), more than one pixel away",
                f[0],
                f[1]
            );
            verified += 1;
        }
    }
    assert!(
        verified > (w * h / 2) as usize,
        "round trip covered only {verified} pixels"
    );
}

#[test]
fn correlation_agrees_with_a_textbook_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(407);
    for _ in 0..300 {
        let n = rng.gen_range(2..32);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for i in 0..n {
            num += (a[i] - ma) * (b[i] - mb);
            da += (a[i] - ma) * (a[i] - ma);
            db += (b[i] - mb) * (b[i] - mb);
        }
        let expect = num / (da.sqrt() * db.sqrt());
        match correlation(&a, &b) {
            Ok(c) => {
                assert!((c - expect).abs() < 1e-12);
                assert!(c.abs() <= 1.0 + 1e-12);
                let sym = correlation(&b, &a).expect("symmetric inputs");
                assert!((c - sym).abs() < 1e-12);
            }
            Err(_) => panic!("random vectors should not be constant"),
        }
    }
}

#[test]
fn correlation_is_invariant_to_positive_affine_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(408);
    for _ in 0..200 {
        let n = rng.gen_range(3..16);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let scale = rng.gen_range(0.1..10.0);
        let offset = rng.gen_range(-5.0..5.0);
        let b: Vec<f64> = a.iter().map(|v| scale * v + offset).collect();
        let c = correlation(&a, &b).expect("inputs vary");
        assert!((c - 1.0).abs() < 1e-12, "positive affine image: {c}");
        let neg: Vec<f64> = a.iter().map(|v| -scale * v + offset).collect();
        let c = correlation(&a, &neg).expect("inputs vary");
        assert!((c + 1.0).abs() < 1e-12, "negative affine image: {c}");

        // invariance of the correlation of two unrelated vectors under
        // affine maps of either argument
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let base = correlation(&a, &d).expect("inputs vary");
        let mapped = correlation(&b, &d).expect("inputs vary");
        assert!((base - mapped).abs() < 1e-12);
    }
}

fn random_feature(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.1..1.5)).collect()
}

#[test]
fn hybrid_gradients_match_central_differences() {
    // every parameter tensor, three seeds, all three one-hot selectors
    let channels = 8;
    for seed in [1u64, 2, 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h_m = random_feature(&mut rng, channels);
        let h_s = random_feature(&mut rng, channels);
        let params = HybridParams::seeded(channels, channels, seed + 40);
        for lambdas in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
            let (_, grad) =
                l_corr_and_gradients(&params, &h_m, &h_s, lambdas).expect("instance is generic");
            let flat = params.to_flat();
            let step = 1e-6;
            let mut worst = 0.0f64;
            for k in 0..flat.len() {
                let mut plus = flat.clone();
                plus[k] += step;
                let mut minus = flat.clone();
                minus[k] -= step;
                let (lp, _) =
                    l_corr_and_gradients(&params.with_flat(&plus), &h_m, &h_s, lambdas)
                        .expect("perturbed instance is generic");
                let (lm, _) =
                    l_corr_and_gradients(&params.with_flat(&minus), &h_m, &h_s, lambdas)
                        .expect("perturbed instance is generic");
                let fd = (lp - lm) / (2.0 * step);
                let denom = (grad[k].abs() + fd.abs()).max(1e-6);
                worst = worst.max((grad[k] - fd).abs() / denom);
            }
            assert!(
                worst < 1e-4,
                "seed {seed}, lambdas {lambdas:?}: worst relative error {worst}"
            );
        }
    }
}

#[test]
fn gradient_descent_on_l_corr_strictly_descends_for_100_steps() {
    let channels = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(409);
    let h_m = random_feature(&mut rng, channels);
    let h_s = random_feature(&mut rng, channels);
    let mut params = HybridParams::seeded(channels, channels, 77);
    // the linear terms keep the gradient alive even while both
    // correlations are still near zero
    let lambdas = [1.0, 0.5, 0.5];
    let lr = 0.02;
    let (initial, first_grad) =
        l_corr_and_gradients(&params, &h_m, &h_s, lambdas).expect("instance is generic");
    let (mut prev, mut grad) = (initial, first_grad);
    for step in 0..100 {
        let flat: Vec<f64> = params
            .to_flat()
            .iter()
            .zip(&grad)
            .map(|(p, g)| p - lr * g)
            .collect();
        params = params.with_flat(&flat);
        let (loss, g) =
            l_corr_and_gradients(&params, &h_m, &h_s, lambdas).expect("instance is generic");
        assert!(
            loss < prev,
            "step {step}: loss {loss} did not improve on {prev}"
        );
        prev = loss;
        grad = g;
    }
    // a hundred healthy steps must make visible progress, not just
    // infinitesimal improvements
    assert!(
        prev < initial - 0.1,
        "descent stalled: {initial} -> {prev}"
    );
}

#[test]
fn hybrid_objective_composes_correlations() {
    let mut rng = ChaCha8Rng::seed_from_u64(410);
    let h_m = random_feature(&mut rng, 6);
    let h_s = random_feature(&mut rng, 6);
    let params = HybridParams::seeded(6, 6, 5);
    let h_f = hybrid_aggregate(&h_m, &h_s, &params).expect("shapes agree");
    let c_m = correlation(&h_f, &h_m).expect("inputs vary");
    let c_s = correlation(&h_f, &h_s).expect("inputs vary");
    let obj = hybrid_objective(&h_f, &h_m, &h_s, [0.7, 0.2, 0.1]).expect("inputs vary");
    assert!((obj - (0.7 * c_m * c_s + 0.2 * c_s + 0.1 * c_m)).abs() < 1e-12);
}
