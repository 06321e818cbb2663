mod common;

use common::*;
use lidar_mos::bev_view::{BevIndexMap, NO_CELL};
use lidar_mos::container::{read_flat, write_flat, FlatArray};
use lidar_mos::cross_view::*;
use lidar_mos::range_view::RangeIndexMap;
use lidar_mos::tensor::*;
use lidar_mos::weights::{load_weights, save_weights, WeightSet};
use proptest::prelude::*;
use rand::Rng;

fn max_abs(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

fn delta_kernel(c: usize, k: usize) -> Tensor {
    Tensor::from_fn(vec![c, c, k, k], |i| {
        let (o, rest) = (i / (c * k * k), i % (c * k * k));
        let (ci, tap) = (rest / (k * k), rest % (k * k));
        if o == ci && tap == (k * k) / 2 {
            1.0
        } else {
            0.0
        }
    })
}

#[test]
fn conv_identities_and_loop_oracle() {
    let mut r = rng(10);
    let x = random_tensor(&mut r, &[4, 8, 8]);
    for k in [1, 3] {
        let y = conv2d(&x, &delta_kernel(4, k), &Tensor::zeros(vec![4])).unwrap();
        assert_eq!(y, x);
    }
    for k in [1, 3] {
        let kern = random_tensor(&mut r, &[5, 4, k, k]);
        let b = random_tensor(&mut r, &[5]);
        let got = conv2d(&x, &kern, &b).unwrap();
        let want = conv2d_ref(&Dense::from_tensor(&x), &kern, &b);
        assert!(max_abs(got.data(), &want.v) < 1e-6);
    }
    assert!(conv2d(&x, &random_tensor(&mut r, &[2, 3, 3, 3]), &Tensor::zeros(vec![2])).is_err());
    assert!(conv2d(&x, &random_tensor(&mut r, &[2, 4, 5, 5]), &Tensor::zeros(vec![2])).is_err());
}

#[test]
fn activation_examples() {
    let z = Tensor::zeros(vec![1, 2, 2]);
    assert!(activate(&z, Activation::Sigmoid).unwrap().data().iter().all(|&v| v == 0.5));
    let mut r = rng(11);
    let one = random_tensor(&mut r, &[1, 3, 3]);
    assert!(activate(&one, Activation::ChannelSoftmax).unwrap().data().iter().all(|&v| v == 1.0));
    let x = random_tensor(&mut r, &[6, 5, 7]).map(|v| 20.0 * v);
    let s = activate(&x, Activation::ChannelSoftmax).unwrap();
    for site in 0..35 {
        let sum: f64 = (0..6).map(|c| s.data()[c * 35 + site] as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!((0..6).all(|c| s.data()[c * 35 + site] > 0.0));
    }
}

#[test]
fn pooling_matches_loops() {
    let mut r = rng(12);
    let x = random_tensor(&mut r, &[3, 6, 8]);
    let got = pool(&x, Pool::Max2x2).unwrap();
    let want = maxpool_ref(&Dense::from_tensor(&x));
    assert_eq!(got.data().iter().map(|&v| v as f64).collect::<Vec<_>>(), want.v);
    let block = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(pool(&block, Pool::Max2x2).unwrap().data(), &[4.0]);
    let c = Tensor::full(vec![2, 4, 4], 1.5);
    assert!(pool(&c, Pool::GlobalAvg).unwrap().data().iter().all(|&v| v == 1.5));
    assert!(pool(&random_tensor(&mut r, &[1, 3, 4]), Pool::Max2x2).is_err());
}

#[test]
fn bilinear_examples() {
    let mut r = rng(13);
    let src = random_tensor(&mut r, &[2, 5, 6]);
    let (h, w) = (5, 6);
    let mut coords = vec![0f32; 2 * h * w];
    for y in 0..h {
        for x in 0..w {
            coords[y * w + x] = normalize_coord(x as f64, w) as f32;
            coords[h * w + y * w + x] = normalize_coord(y as f64, h) as f32;
        }
    }
    let grid = Tensor::new(vec![2, h, w], coords).unwrap();
    let out = bilinear_sample(&src, &grid).unwrap();
    assert_eq!(out, src);
    let outside = Tensor::full(vec![2, 3, 3], 1.5);
    assert!(bilinear_sample(&src, &outside).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn weights_round_trip_and_reject_bad_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(14);
    let mut set = WeightSet::new();
    set.insert("a.weight", random_tensor(&mut r, &[3, 2, 3, 3]));
    set.insert("a.bias", random_tensor(&mut r, &[3]));
    let p = dir.path().join("w.json");
    save_weights(&p, &set).unwrap();
    assert_eq!(load_weights(&p).unwrap(), set);

    let text = std::fs::read_to_string(&p).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["tensors"][0]["byte_len"] = serde_json::json!(8);
    std::fs::write(&p, v.to_string()).unwrap();
    assert!(matches!(load_weights(&p), Err(lidar_mos::Error::Format(_))));

    let e = dir.path().join("empty.json");
    std::fs::write(&e, r#"{"blob": "none.bin", "tensors": []}"#).unwrap();
    assert!(load_weights(&e).unwrap().is_empty());
}

#[test]
fn container_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(15);
    let a = FlatArray::new(3, 4, 2, (0..24).map(|_| r.gen()).collect()).unwrap();
    let p = dir.path().join("a.mosf");
    write_flat(&p, &a).unwrap();
    assert_eq!(read_flat(&p).unwrap(), a);
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[0] = b'X';
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(read_flat(&p), Err(lidar_mos::Error::Format(_))));
}

#[test]
fn compose_examples() {
    let bev = lidar_mos::bev_view::BevConfig::default();
    let empty = RangeIndexMap { h: 2, w: 3, idx: vec![-1; 6] };
    let map = compose_b2r(&empty, &BevIndexMap::default(), &bev).unwrap();
    assert_eq!(map.valid_count(), 0);

    let mut idx = vec![-1i64; 6];
    idx[4] = 7;
    idx[1] = 2;
    let mut coords = vec![NO_CELL; 8];
    coords[7] = [12, 34];
    let map = compose_b2r(&RangeIndexMap { h: 2, w: 3, idx }, &BevIndexMap { coords }, &bev).unwrap();
    assert_eq!(map.get(1, 1), [12.0, 34.0]);
    assert!(!CrossViewMap::is_valid_coord(map.get(0, 1)));
    assert_eq!(map.valid_count(), 1);

    let bad = RangeIndexMap { h: 1, w: 1, idx: vec![9] };
    assert!(matches!(
        compose_b2r(&bad, &BevIndexMap { coords: vec![[0, 0]] }, &bev),
        Err(lidar_mos::Error::Index(_))
    ));
}

fn random_map(r: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize, bh: usize, bw: usize) -> CrossViewMap {
    let coords = (0..h * w)
        .map(|_| {
            if r.gen_bool(0.2) {
                [-1.0, -1.0]
            } else {
                [r.gen_range(0..bw) as f32, r.gen_range(0..bh) as f32]
            }
        })
        .collect();
    CrossViewMap { h, w, bev_h: bh, bev_w: bw, coords }
}

#[test]
fn align_gathers_at_native_resolution() {
    let mut r = rng(16);
    let m_b = random_tensor(&mut r, &[3, 9, 11]);
    let map = random_map(&mut r, 4, 5, 9, 11);
    let out = geometric_align(&m_b, &map, 4, 5).unwrap();
    for v in 0..4 {
        for u in 0..5 {
            let c = map.get(v, u);
            for ch in 0..3 {
                let want = if CrossViewMap::is_valid_coord(c) {
                    m_b.at3(ch, c[1] as usize, c[0] as usize)
                } else {
                    0.0
                };
                assert_eq!(out.at3(ch, v, u), want);
            }
        }
    }
    let none = CrossViewMap { coords: vec![[-1.0, -1.0]; 20], ..map };
    assert!(geometric_align(&m_b, &none, 8, 10).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn fusion_examples() {
    let mut r = rng(17);
    let motion = random_tensor(&mut r, &[1, 4, 4]);
    let res = random_tensor(&mut r, &[1, 4, 4]);
    let sem = random_tensor(&mut r, &[2, 4, 4]);
    let zero = FusionWeights::new(WeightSet::zeros(&motion_semantic_specs(2, 1)));
    let out = motion_semantic_fuse(&sem, &motion, &res, &zero).unwrap();
    for i in 0..16 {
        assert!((out.data()[i] - (0.5 * motion.data()[i] + res.data()[i])).abs() < 1e-7);
    }
    let w = FusionWeights::new(random_set(&motion_semantic_specs(2, 1), &mut r));
    let out = motion_semantic_fuse(&sem, &Tensor::zeros(vec![1, 4, 4]), &res, &w).unwrap();
    assert_eq!(out, res);

    let m_r = random_tensor(&mut r, &[2, 4, 4]);
    let w = FusionWeights::new(random_set(&attention_fuse_specs(2, 3), &mut r));
    let out = attention_fuse(&m_r, &Tensor::zeros(vec![3, 4, 4]), &w).unwrap();
    assert_eq!(out.shape(), m_r.shape());
    assert!(out.data().iter().all(|v| v.is_finite()));

    let mut id = WeightSet::new();
    id.insert("bev.conv1.weight", delta_kernel(2, 3));
    id.insert("bev.conv1.bias", Tensor::zeros(vec![2]));
    id.insert("bev.conv2.weight", delta_kernel(2, 3));
    id.insert("bev.conv2.bias", Tensor::zeros(vec![2]));
    let out = bev_encode(&Tensor::full(vec![2, 4, 4], 0.75), &FusionWeights::new(id)).unwrap();
    assert_eq!(out.shape(), &[2, 2, 2]);
    assert!(out.data().iter().all(|&v| v == 0.75));
    assert!(bev_encode(&Tensor::zeros(vec![2, 1, 4]), &w).is_err());
}

fn random_set(specs: &[(String, Vec<usize>)], r: &mut rand_chacha::ChaCha8Rng) -> WeightSet {
    let mut w = WeightSet::new();
    for (name, shape) in specs {
        w.insert(name.clone(), random_tensor(r, shape));
    }
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bilinear_matches_four_neighbour_oracle(seed in 0u64..10_000, h in 1usize..7, w in 1usize..7) {
        let mut r = rng(seed);
        let src = random_tensor(&mut r, &[2, h, w]);
        let (oh, ow) = (3, 4);
        let coords = Tensor::from_fn(vec![2, oh, ow], |_| r.gen_range(-1.3f32..1.3));
        let out = bilinear_sample(&src, &coords).unwrap();
        let d = Dense::from_tensor(&src);
        for c in 0..2 {
            for s in 0..oh * ow {
                let want = bilinear_ref(&d, c, coords.data()[s] as f64, coords.data()[oh * ow + s] as f64);
                prop_assert!((out.data()[c * oh * ow + s] as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn align_is_linear(seed in 0u64..10_000, th in 2usize..9, tw in 2usize..9) {
        let mut r = rng(seed);
        let map = random_map(&mut r, 5, 6, 7, 8);
        let a = random_tensor(&mut r, &[2, 7, 8]);
        let b = random_tensor(&mut r, &[2, 7, 8]);
        let (s, t) = (r.gen_range(-2.0f32..2.0), r.gen_range(-2.0f32..2.0));
        let mix = a.scale(s).add(&b.scale(t)).unwrap();
        let lhs = geometric_align(&mix, &map, th, tw).unwrap();
        let ra = geometric_align(&a, &map, th, tw).unwrap();
        let rb = geometric_align(&b, &map, th, tw).unwrap();
        for i in 0..lhs.len() {
            let rhs = s as f64 * ra.data()[i] as f64 + t as f64 * rb.data()[i] as f64;
            prop_assert!((lhs.data()[i] as f64 - rhs).abs() < 1e-6 * (1.0 + rhs.abs()) * 4.0);
        }
    }

    #[test]
    fn conv_is_linear_in_input(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let k = random_tensor(&mut r, &[3, 2, 3, 3]);
        let zero = Tensor::zeros(vec![3]);
        let a = random_tensor(&mut r, &[2, 5, 5]);
        let b = random_tensor(&mut r, &[2, 5, 5]);
        let sum = conv2d(&a.add(&b).unwrap(), &k, &zero).unwrap();
        let parts = conv2d(&a, &k, &zero).unwrap().add(&conv2d(&b, &k, &zero).unwrap()).unwrap();
        prop_assert!(sum.data().iter().zip(parts.data()).all(|(x, y)| (x - y).abs() < 1e-6));
    }

    #[test]
    fn fusion_ops_are_deterministic(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let m_r = random_tensor(&mut r, &[2, 4, 6]);
        let m_b = random_tensor(&mut r, &[1, 4, 6]);
        let w = FusionWeights::new(random_set(&attention_fuse_specs(2, 1), &mut r));
        let a = attention_fuse(&m_r, &m_b, &w).unwrap();
        let b = attention_fuse(&m_r, &m_b, &w).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
