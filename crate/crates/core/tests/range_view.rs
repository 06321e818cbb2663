mod common;

use std::collections::HashMap;

use lidar_mos::range_view::*;
use lidar_mos::scan_io::{Point, PointCloud, Pose, ScanFrame};
use proptest::prelude::*;
use rand::Rng;

fn small_cfg() -> RvConfig {
    RvConfig {
        h: 32,
        w: 256,
        ..RvConfig::default()
    }
}

fn point() -> impl Strategy<Value = Point> {
    (-60.0f64..60.0, -60.0f64..60.0, -8.0f64..4.0, 0.0f64..1.0)
        .prop_filter("not at the origin", |(x, y, z, _)| x * x + y * y + z * z > 1e-6)
        .prop_map(|(x, y, z, e)| Point::new(x, y, z, e))
}

#[test]
fn hand_evaluated_pixels() {
    let cfg = RvConfig::default();
    let px = |x, y, z| project_to_uv(&Point::new(x, y, z, 0.0), &cfg).unwrap().unwrap();
    assert_eq!(px(10.0, 0.0, 0.0).u, cfg.w / 2);
    assert_eq!(px(0.0, 10.0, 0.0).u, cfg.w / 4);
    assert_eq!(px(10.0, 0.0, 10.0 * cfg.f_up.tan() - 1e-9).v, 0);
    assert_eq!(px(-10.0, -1e-300, 0.0).u, cfg.w - 1);
    assert!(project_to_uv(&Point::new(0.0, 0.0, 0.0, 0.0), &cfg).is_err());
    assert!(project_to_uv(&Point::new(1.0, 0.0, 5.0, 0.0), &cfg).unwrap().is_none());
}

#[test]
fn empty_cloud_gives_sentinels() {
    let cfg = small_cfg();
    let (img, idx, stats) = build_range_image(&PointCloud::default(), &cfg).unwrap();
    assert!(idx.idx.iter().all(|&i| i == -1));
    assert!(img.range_channel().iter().all(|&r| r == EMPTY_PIXEL));
    assert_eq!(stats.points, 0);
}

#[test]
fn nearer_point_wins_a_shared_pixel() {
    let cfg = small_cfg();
    let cloud = PointCloud::new(vec![Point::new(7.0, 0.0, 0.0, 0.1), Point::new(5.0, 0.0, 0.0, 0.2)]);
    let (img, idx, stats) = build_range_image(&cloud, &cfg).unwrap();
    let p = project_to_uv(&cloud.points[1], &cfg).unwrap().unwrap();
    assert_eq!(idx.get(p.v, p.u), 1);
    assert_eq!(img.get(CH_RANGE, p.v, p.u), 5.0);
    assert_eq!(img.get(CH_INTENSITY, p.v, p.u), 0.2f32);
    assert_eq!(stats.occluded, 1);
}

#[test]
fn zero_range_points_are_counted_not_fatal() {
    let cfg = small_cfg();
    let cloud = PointCloud::new(vec![Point::new(0.0, 0.0, 0.0, 0.0), Point::new(5.0, 1.0, 0.0, 0.0)]);
    let (_, idx, stats) = build_range_image(&cloud, &cfg).unwrap();
    assert_eq!(stats.zero_range, 1);
    assert_eq!(idx.valid_count(), 1);
}

#[test]
fn ten_thousand_points_verify_post_hoc() {
    let cfg = RvConfig::default();
    let mut r = common::rng(3);
    let points: Vec<Point> = (0..10_000)
        .map(|_| {
            let range = r.gen_range(1.0..80.0);
            let yaw = r.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let pitch = r.gen_range(-cfg.f_down + 1e-3..cfg.f_up - 1e-3);
            Point::new(
                range * pitch.cos() * yaw.cos(),
                range * pitch.cos() * yaw.sin(),
                range * pitch.sin(),
                0.0,
            )
        })
        .collect();
    let cloud = PointCloud::new(points);
    let (img, idx, _) = build_range_image(&cloud, &cfg).unwrap();
    let mut best: HashMap<(usize, usize), f64> = HashMap::new();
    for p in &cloud.points {
        let px = project_to_uv(p, &cfg).unwrap().unwrap();
        let e = best.entry((px.v, px.u)).or_insert(f64::INFINITY);
        *e = e.min(p.range());
    }
    assert_eq!(best.len(), idx.valid_count());
    for v in 0..cfg.h {
        for u in 0..cfg.w {
            let i = idx.get(v, u);
            if i < 0 {
                assert_eq!(img.get(CH_RANGE, v, u), EMPTY_PIXEL);
                continue;
            }
            let p = &cloud.points[i as usize];
            let px = project_to_uv(p, &cfg).unwrap().unwrap();
            assert_eq!((px.u, px.v), (u, v));
            assert_eq!(p.range(), best[&(v, u)]);
            assert!((img.get(CH_RANGE, v, u) as f64 - p.range()).abs() < 1e-5);
        }
    }
}

#[test]
fn residual_examples() {
    let cfg = small_cfg();
    let a = ScanFrame::new(1, PointCloud::new(vec![Point::new(4.0, 1.0, 0.0, 0.0)]), Pose::identity());
    let b = ScanFrame::new(0, PointCloud::new(vec![Point::new(8.0, 2.0, 0.0, 0.0)]), Pose::identity());
    let res = build_rv_residual(&a, &[&b], &cfg).unwrap();
    let px = project_to_uv(&a.cloud.points[0], &cfg).unwrap().unwrap();
    let v = res.channel(0)[px.v * cfg.w + px.u];
    assert!((v - 1.0).abs() < 1e-6, "{v}");
    assert_eq!(res.channel(0).iter().filter(|x| **x != 0.0).count(), 1);
    assert!(build_rv_residual(&a, &[], &cfg).is_err());
}

#[test]
fn stride_sampling_is_uniform_and_reproducible() {
    use rand::SeedableRng;
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let opts = [1, 2, 3];
    let draws = 30_000;
    let mut counts = [0usize; 3];
    let mut seq = Vec::new();
    for _ in 0..draws {
        let s = sample_delta_t(&mut r, &opts).unwrap();
        counts[s - 1] += 1;
        seq.push(s);
    }
    let p = 1.0 / 3.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
    }
    let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let again: Vec<usize> = (0..draws).map(|_| sample_delta_t(&mut r2, &opts).unwrap()).collect();
    assert_eq!(seq, again);
    assert!((0..100).all(|_| sample_delta_t(&mut r2, &[1]).unwrap() == 1));
    assert!(sample_delta_t(&mut r2, &[]).is_err());
    assert_eq!(strided_past_indices(10, 3, 4), vec![7, 4, 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_index_entry_reprojects_and_is_nearest(points in prop::collection::vec(point(), 0..400)) {
        let cfg = small_cfg();
        let cloud = PointCloud::new(points);
        let (img, idx, _) = build_range_image(&cloud, &cfg).unwrap();
        for (j, p) in cloud.points.iter().enumerate() {
            if let Some(px) = project_to_uv(p, &cfg).unwrap() {
                let w = idx.get(px.v, px.u);
                prop_assert!(w >= 0);
                let win = &cloud.points[w as usize];
                prop_assert!(win.range() < p.range() || (win.range() == p.range() && w as usize <= j));
            }
        }
        for v in 0..cfg.h {
            for u in 0..cfg.w {
                let i = idx.get(v, u);
                prop_assert!(i < cloud.len() as i64);
                if i >= 0 {
                    let px = project_to_uv(&cloud.points[i as usize], &cfg).unwrap().unwrap();
                    prop_assert_eq!((px.u, px.v), (u, v));
                    prop_assert!(img.get(CH_RANGE, v, u) > 0.0);
                }
            }
        }
    }

    #[test]
    fn self_residual_is_zero(points in prop::collection::vec(point(), 1..300), yaw in -3.0f64..3.0) {
        let cfg = small_cfg();
        let pose = Pose::from_yaw_translation(yaw, 1.0, -2.0, 0.0);
        let f = ScanFrame::new(3, PointCloud::new(points), pose);
        let res = build_rv_residual(&f, &[&f], &cfg).unwrap();
        prop_assert!(res.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_is_nonnegative_and_zero_off_doubly_valid(
        a in prop::collection::vec(point(), 1..300),
        b in prop::collection::vec(point(), 1..300),
        dx in -3.0f64..3.0,
    ) {
        let cfg = small_cfg();
        let cur = ScanFrame::new(1, PointCloud::new(a), Pose::from_translation(dx, 0.0, 0.0));
        let past = ScanFrame::new(0, PointCloud::new(b), Pose::identity());
        let res = build_rv_residual(&cur, &[&past, &cur], &cfg).unwrap();
        prop_assert_eq!(res.k, 2);
        for (v, m) in res.values.iter().zip(&res.doubly_valid) {
            prop_assert!(*v >= 0.0 && v.is_finite());
            if !m {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn raising_z_never_raises_the_row(x in -50.0f64..50.0, y in -50.0f64..50.0, z0 in -10.0f64..5.0, dz in 0.0f64..5.0) {
        prop_assume!(x * x + y * y > 1e-4);
        let cfg = RvConfig::default();
        let lo = project_to_uv(&Point::new(x, y, z0, 0.0), &cfg).unwrap();
        let hi = project_to_uv(&Point::new(x, y, z0 + dz, 0.0), &cfg).unwrap();
        if let (Some(lo), Some(hi)) = (lo, hi) {
            prop_assert!(hi.v <= lo.v);
        }
    }
}
